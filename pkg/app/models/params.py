"""
Learnable weights of the encoder and their checkpoint format.

A checkpoint is a zip archive (stored, not compressed) holding
``header.json`` followed by one ``<name>.npy`` member per parameter in
declaration order. Every member carries the fixed timestamp 1980-01-01 so
identical weights always produce identical bytes. ``header.json`` records the
format version and every dimension needed to rebuild the ModelConfig.
"""
import io
import json
import zipfile
from pathlib import Path
from typing import Dict, Iterator, Tuple

import numpy as np
import structlog

from app.schemas.config import ModelConfig
from app.utils.errors import ContractViolation, StorageError
from app.utils.tensor import Tensor, parameter

logger = structlog.get_logger(__name__)

CHECKPOINT_FORMAT = "objcode-checkpoint"
CHECKPOINT_VERSION = 1
_ZIP_TIMESTAMP = (1980, 1, 1, 0, 0, 0)


def parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Names and shapes of every parameter, in declaration order"""
    n_n, h = config.n_n, config.pos_hidden
    shapes: Dict[str, Tuple[int, ...]] = {
        "pos_mlp.0.weight": (2, h),
        "pos_mlp.0.bias": (h,),
        "pos_mlp.1.weight": (h, h),
        "pos_mlp.1.bias": (h,),
        "pos_mlp.2.weight": (h, config.n_m),
        "pos_mlp.2.bias": (config.n_m,),
    }
    for layer in range(config.attention_layers):
        prefix = f"attention.{layer}"
        for role in ("query", "key", "value"):
            shapes[f"{prefix}.{role}.weight"] = (n_n, n_n)
            shapes[f"{prefix}.{role}.bias"] = (n_n,)
        shapes[f"{prefix}.update.0.weight"] = (2 * n_n, config.update_width)
        shapes[f"{prefix}.update.0.bias"] = (config.update_width,)
        shapes[f"{prefix}.update.1.weight"] = (config.update_width, n_n)
        shapes[f"{prefix}.update.1.bias"] = (n_n,)
    if config.sparsity:
        for branch in ("location", "content"):
            shapes[f"sparsity.{branch}.0.weight"] = (n_n, config.sparsity_hidden)
            shapes[f"sparsity.{branch}.1.weight"] = (config.sparsity_hidden, config.n_o)
    else:
        shapes["projection.weight"] = (n_n, config.n_o)
        shapes["projection.bias"] = (config.n_o,)
    shapes["output.weight"] = (config.n_o, config.n_o)
    shapes["output.bias"] = (config.n_o,)
    return shapes


class ModelParams:
    """
    Named parameter tensors plus the configuration that shaped them

    Weights are stored input-major (in x out) and applied as ``X @ W + b``.
    """

    def __init__(self, config: ModelConfig, tensors: Dict[str, Tensor]):
        expected = parameter_shapes(config)
        missing = [name for name in expected if name not in tensors]
        unexpected = [name for name in tensors if name not in expected]
        if missing or unexpected:
            raise ContractViolation(
                f"parameter set does not match config: missing={missing} unexpected={unexpected}"
            )
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ContractViolation(
                    f"parameter '{name}' has shape {tensors[name].shape}, expected {shape}"
                )
        self.config = config
        self._tensors = {name: tensors[name] for name in expected}

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> "ModelParams":
        """Glorot-uniform weights and zero biases from a seeded generator"""
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in parameter_shapes(config).items():
            if name.endswith(".bias"):
                data = np.zeros(shape)
            else:
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                data = rng.uniform(-limit, limit, size=shape)
            tensors[name] = parameter(data, name=name)
        logger.debug("params_initialized", seed=seed, count=len(tensors))
        return cls(config, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def zero_grad(self):
        for tensor in self._tensors.values():
            tensor.zero_grad()

    def num_values(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            {name: parameter(t.data.copy(), name=name) for name, t in self._tensors.items()},
        )

    def header(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            **self.config.model_dump(),
            "parameters": list(self._tensors),
        }

    def save(self, path) -> Path:
        """Write the checkpoint archive"""
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as archive:
                info = zipfile.ZipInfo("header.json", date_time=_ZIP_TIMESTAMP)
                archive.writestr(info, json.dumps(self.header(), indent=2, sort_keys=True))
                for name, tensor in self._tensors.items():
                    info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_TIMESTAMP)
                    with archive.open(info, "w") as member:
                        np.lib.format.write_array(
                            member, np.ascontiguousarray(tensor.data), allow_pickle=False
                        )
        except OSError as e:
            logger.error("checkpoint_write_failed", path=str(path), error=str(e))
            raise StorageError(path, f"cannot write checkpoint: {e}")
        logger.info("checkpoint_saved", path=str(path), parameters=len(self._tensors))
        return path

    @classmethod
    def load(cls, path) -> "ModelParams":
        """Read a checkpoint archive written by ``save``"""
        path = Path(path)
        try:
            with zipfile.ZipFile(path, "r") as archive:
                header = json.loads(archive.read("header.json"))
                if header.get("format") != CHECKPOINT_FORMAT:
                    raise ContractViolation(f"{path} is not a checkpoint ({header.get('format')!r})")
                if header.get("version") != CHECKPOINT_VERSION:
                    raise ContractViolation(
                        f"unsupported checkpoint version {header.get('version')} in {path}"
                    )
                config = ModelConfig(**{
                    key: value for key, value in header.items()
                    if key in ModelConfig.model_fields
                })
                tensors = {}
                for name in parameter_shapes(config):
                    data = np.lib.format.read_array(
                        io.BytesIO(archive.read(f"{name}.npy")), allow_pickle=False
                    )
                    tensors[name] = parameter(data, name=name)
        except (OSError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as e:
            logger.error("checkpoint_read_failed", path=str(path), error=str(e))
            raise StorageError(path, f"cannot read checkpoint: {e}")
        logger.info("checkpoint_loaded", path=str(path), parameters=len(tensors))
        return cls(config, tensors)
