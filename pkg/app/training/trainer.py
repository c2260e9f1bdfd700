"""
Training loop: pair batches, total loss, backward pass and RMSprop updates.
"""
import math
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, List, Optional

import structlog

from app.data.pairs import PairSource, SyntheticPairSource
from app.data.synth import derive_seed
from app.models.params import ModelParams
from app.schemas.config import ModelConfig, RunConfig
from app.schemas.keypoints import LabeledPair
from app.schemas.reports import TraceRow
from app.training.losses import total_loss
from app.training.optim import RMSprop
from app.utils.errors import ContractViolation, TrainingDiverged
from app.utils.report_files import write_csv
from app.utils.tensor import Tape

logger = structlog.get_logger(__name__)

INIT_STREAM = 0
TRACE_COLUMNS = ("step", "positive", "negative", "sparse", "dense", "total",
                 "pos_similarity", "neg_similarity")

ProgressCallback = Callable[[TraceRow], None]


def model_config_for(config: RunConfig) -> ModelConfig:
    """Model dimensions after applying the sparsity ablation switch"""
    if config.train.ablate_sparsity:
        return config.model.model_copy(update={"sparsity": False})
    return config.model


def initial_params(config: RunConfig) -> ModelParams:
    return ModelParams.initialize(model_config_for(config), derive_seed(config.seed, INIT_STREAM))


class BatchPrefetcher:
    """
    Produces batches for consecutive steps on a background thread

    The queue holds at most ``depth`` batches. Batches depend only on their
    step index, so prefetching never changes what the optimiser sees.
    """

    _DONE = object()

    def __init__(self, source: PairSource, steps: int, depth: int):
        self.source = source
        self.steps = steps
        self._queue: queue.Queue = queue.Queue(maxsize=max(depth, 1))
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._produce, name="batch-prefetch", daemon=True)

    def _put(self, item) -> bool:
        while not self._stop.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _produce(self):
        for step in range(self.steps):
            try:
                item = (step, self.source.batch(step))
            except Exception as e:
                self._put((step, e))
                return
            if not self._put(item):
                return
        self._put(self._DONE)

    def __iter__(self) -> Iterator[List[LabeledPair]]:
        self._thread.start()
        try:
            while True:
                item = self._queue.get()
                if item is self._DONE:
                    return
                step, payload = item
                if isinstance(payload, Exception):
                    logger.error("batch_generation_failed", step=step, error=str(payload))
                    raise payload
                yield payload
        finally:
            self.close()

    def close(self):
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join(timeout=5.0)


@dataclass
class TrainResult:
    """
    Outcome of a training run

    Attributes:
        params: Final parameters
        trace: One row per step
        checkpoints: Paths of intermediate checkpoints, in step order
    """
    params: ModelParams
    trace: List[TraceRow] = field(default_factory=list)
    checkpoints: List[Path] = field(default_factory=list)


class Trainer:
    """
    Optimises the graph and sparsity modules on labelled pair batches

    Args:
        config: Run configuration; ``train`` and ``model`` sections apply
        source: Pair batches per step, synthetic pairs by default
        params: Starting parameters, seeded initialisation by default
        checkpoint_dir: Where periodic checkpoints go; none are written when unset
        progress: Called with every trace row
    """

    def __init__(self, config: RunConfig, source: Optional[PairSource] = None,
                 params: Optional[ModelParams] = None, checkpoint_dir=None,
                 progress: Optional[ProgressCallback] = None):
        self.config = config
        self.source = source or SyntheticPairSource(config)
        self.params = params or initial_params(config)
        if config.train.ablate_sparsity and self.params.config.sparsity:
            raise ContractViolation("sparsity ablation needs parameters without the sparsity module")
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.progress = progress
        train = config.train
        self.weights = train.effective_weights
        self.optimizer = RMSprop(self.params, lr=train.learning_rate, rho=train.rho, eps=train.eps)
        self.stop_requested = threading.Event()

    def step(self, step: int, batch: List[LabeledPair]) -> TraceRow:
        """One update; returns the loss components measured before it"""
        train = self.config.train
        self.params.zero_grad()
        with Tape() as tape:
            breakdown = total_loss(batch, self.params, self.weights, train.delta, train.zeta)
        components = breakdown.components()
        for name, value in components.items():
            if not math.isfinite(value):
                logger.error("training_diverged", step=step, component=name, value=value)
                raise TrainingDiverged(name, step, value)
        if breakdown.total._tape is tape:
            tape.backward(breakdown.total)
        self.optimizer.step()
        return TraceRow(
            step=step,
            **components,
            pos_similarity=breakdown.pos_similarity,
            neg_similarity=breakdown.neg_similarity,
        )

    def _batches(self) -> Iterator[List[LabeledPair]]:
        steps, depth = self.config.train.steps, self.config.train.prefetch
        if depth > 0:
            return iter(BatchPrefetcher(self.source, steps, depth))
        return (self.source.batch(step) for step in range(steps))

    def run(self) -> TrainResult:
        train = self.config.train
        result = TrainResult(params=self.params)
        logger.info("training_started", steps=train.steps, batch_size=train.batch_size,
                    sparsity=self.params.config.sparsity, weights=self.weights.model_dump())
        batches = self._batches()
        try:
            for step, batch in enumerate(batches):
                row = self.step(step, batch)
                result.trace.append(row)
                if self.progress:
                    self.progress(row)
                if (step + 1) % train.log_every == 0:
                    logger.info("train_step", **row.model_dump())
                else:
                    logger.debug("train_step", **row.model_dump())
                if self.checkpoint_dir and train.checkpoint_every and (step + 1) % train.checkpoint_every == 0:
                    path = self.checkpoint_dir / f"step-{step + 1:06d}.ckpt"
                    result.checkpoints.append(self.params.save(path))
                if self.stop_requested.is_set():
                    logger.warning("training_stopped", step=step)
                    break
        finally:
            close = getattr(batches, "close", None)
            if close:
                close()
        logger.info("training_finished", steps=len(result.trace))
        return result


def train(config: RunConfig, source: Optional[PairSource] = None, checkpoint_dir=None,
          progress: Optional[ProgressCallback] = None) -> TrainResult:
    """Train from seeded initial parameters"""
    return Trainer(config, source=source, checkpoint_dir=checkpoint_dir, progress=progress).run()


def write_trace(path, trace: List[TraceRow]) -> Path:
    return write_csv(path, trace, TRACE_COLUMNS)
