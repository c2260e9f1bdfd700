"""
Object encoder: node encoding, attention propagation, sparsity layer and
symmetric aggregation into a unit-norm object descriptor.
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import structlog

from app.models.params import ModelParams
from app.schemas.keypoints import KeyPoint, ObjectInstance
from app.utils.errors import ContractViolation
from app.utils.tensor import Tensor, concat, l2_normalize, relu, softmax_rows, tsum

logger = structlog.get_logger(__name__)


def normalize_position(points, bbox) -> np.ndarray:
    """
    Map pixel coordinates into [-1, 1] relative to the box

    The box centre maps to (0, 0) and its corners to (±1, ±1).

    Args:
        points: A single (x, y) pair or an M x 2 array
        bbox: (x, y, width, height)

    Returns:
        np.ndarray: Normalised coordinates with the shape of ``points``
    """
    x, y, width, height = bbox
    if width <= 0 or height <= 0:
        raise ContractViolation(f"bbox extents must be positive, got {tuple(bbox)}")
    center = np.array([x + width / 2.0, y + height / 2.0])
    extent = np.array([width, height], dtype=np.float64)
    return 2.0 * (np.asarray(points, dtype=np.float64) - center) / extent


def _linear(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    out = x @ params[f"{prefix}.weight"]
    bias = f"{prefix}.bias"
    return out + params[bias] if bias in params else out


def positional_mlp(coords: Tensor, params: ModelParams) -> Tensor:
    hidden = relu(_linear(coords, params, "pos_mlp.0"))
    hidden = relu(_linear(hidden, params, "pos_mlp.1"))
    return _linear(hidden, params, "pos_mlp.2")


def embed_keypoints(descriptors: np.ndarray, positions: np.ndarray, bbox,
                    params: ModelParams) -> Tensor:
    """Node matrix, each key-point descriptor followed by its positional encoding; M x N_n"""
    n_p = params.config.n_p
    if descriptors.ndim != 2 or descriptors.shape[1] != n_p:
        raise ContractViolation(
            f"descriptor width {descriptors.shape[-1]} does not match model width {n_p}"
        )
    coords = normalize_position(positions, bbox)
    return concat([Tensor(descriptors), positional_mlp(Tensor(coords), params)], axis=1)


def node_embeddings(obj: ObjectInstance, params: ModelParams) -> Tensor:
    return embed_keypoints(obj.descriptors(), obj.positions(), obj.bbox, params)


def encode_node(kp: KeyPoint, bbox, params: ModelParams) -> np.ndarray:
    """Embedding of a single key-point, width N_p + N_m"""
    nodes = embed_keypoints(kp.descriptor[None, :], np.asarray([kp.position]), bbox, params)
    return nodes.data[0]


def attention_scores(nodes: Tensor, params: ModelParams, layer: int = 0) -> Tensor:
    """Edge scores alpha_ij = q_i . k_j over the fully connected graph"""
    queries = _linear(nodes, params, f"attention.{layer}.query")
    keys = _linear(nodes, params, f"attention.{layer}.key")
    return queries @ keys.T


def propagate(nodes: Tensor, params: ModelParams, num_layers: Optional[int] = None) -> Tensor:
    """
    Attention message passing within one object

    Each layer normalises the scaled scores with a row softmax, gathers value
    projections into messages and applies a residual update MLP on
    each node concatenated with its message. The node width is preserved.
    """
    layers = params.config.attention_layers if num_layers is None else num_layers
    if layers > params.config.attention_layers:
        raise ContractViolation(
            f"requested {layers} attention layers, model has {params.config.attention_layers}"
        )
    scale = 1.0 / math.sqrt(params.config.n_n)
    x = nodes
    for layer in range(layers):
        prefix = f"attention.{layer}"
        weights = softmax_rows(attention_scores(x, params, layer) * scale)
        messages = weights @ _linear(x, params, f"{prefix}.value")
        hidden = relu(_linear(concat([x, messages], axis=1), params, f"{prefix}.update.0"))
        x = x + _linear(hidden, params, f"{prefix}.update.1")
    return x


def sparsity_forward(nodes: Tensor, params: ModelParams):
    """
    Location and content branches, each two stacked ReLU layers fed the same input

    Returns:
        tuple[Tensor, Tensor]: Location and content features, M x N_o each
    """
    if not params.config.sparsity:
        raise ContractViolation("model was built without the sparsity module")
    branches = []
    for branch in ("location", "content"):
        hidden = relu(nodes @ params[f"sparsity.{branch}.0.weight"])
        branches.append(relu(hidden @ params[f"sparsity.{branch}.1.weight"]))
    return branches[0], branches[1]


def project_nodes(nodes: Tensor, params: ModelParams) -> Tensor:
    """Fully connected stand-in for the sparsity module"""
    return _linear(nodes, params, "projection")


def project_descriptor(pooled: Tensor, params: ModelParams) -> Tensor:
    return l2_normalize(_linear(pooled, params, "output"), axis=-1)


def aggregate_descriptor(location: Tensor, content: Tensor, params: ModelParams) -> Tensor:
    """Normalised output projection of the summed location-content products of one object"""
    if location.shape[0] == 0:
        raise ContractViolation("aggregate_descriptor needs at least one key-point")
    if location.shape != content.shape:
        raise ContractViolation(
            f"location {location.shape} and content {content.shape} shapes differ"
        )
    pooled = tsum(location * content, axis=0, keepdims=True)
    return project_descriptor(pooled, params)


@dataclass
class EncoderOutput:
    """
    Forward pass over a batch of objects

    Attributes:
        descriptors: K x N_o unit-norm descriptors
        pooled: K x N_o aggregates before the output projection
        location: Stacked location features (None without the sparsity module)
        content: Stacked content features (None without the sparsity module)
        segments: Object index of every stacked key-point row
        counts: Key-point count of every object
    """
    descriptors: Tensor
    pooled: Tensor
    location: Optional[Tensor]
    content: Optional[Tensor]
    segments: np.ndarray
    counts: List[int]

    def segment_matrix(self) -> np.ndarray:
        matrix = np.zeros((len(self.counts), self.segments.size))
        matrix[self.segments, np.arange(self.segments.size)] = 1.0
        return matrix


def encode_batch(objects: Sequence[ObjectInstance], params: ModelParams) -> EncoderOutput:
    """
    Encode several objects in one pass

    Attention runs per object; the sparsity layer runs once over all stacked
    key-points and a segment sum pools them per object.
    """
    if not objects:
        raise ContractViolation("encode_batch needs at least one object")
    counts = [obj.num_keypoints for obj in objects]
    nodes = concat([propagate(node_embeddings(obj, params), params) for obj in objects], axis=0)
    segments = np.repeat(np.arange(len(objects)), counts)

    output = EncoderOutput(
        descriptors=None, pooled=None, location=None, content=None,
        segments=segments, counts=counts,
    )
    if params.config.sparsity:
        location, content = sparsity_forward(nodes, params)
        output.location, output.content = location, content
        features = location * content
    else:
        features = project_nodes(nodes, params)
    output.pooled = Tensor(output.segment_matrix()) @ features
    output.descriptors = project_descriptor(output.pooled, params)
    return output


def encode_object(obj: ObjectInstance, params: ModelParams) -> np.ndarray:
    """Unit-norm descriptor of one object"""
    return encode_batch([obj], params).descriptors.data[0]


class ObjectEncoder:
    """Descriptor model backed by trained parameters"""

    def __init__(self, params: ModelParams, chunk: int = 64):
        self.params = params
        self.chunk = chunk

    @property
    def width(self) -> int:
        return self.params.config.n_o

    def describe(self, objects: Sequence[ObjectInstance]) -> np.ndarray:
        """K x N_o descriptors, encoded ``chunk`` objects at a time"""
        if not objects:
            return np.zeros((0, self.width))
        blocks = []
        for start in range(0, len(objects), self.chunk):
            batch = objects[start:start + self.chunk]
            blocks.append(encode_batch(batch, self.params).descriptors.data)
        return np.concatenate(blocks, axis=0)


def as_encoder(model, chunk: int = 64):
    """Accept ModelParams or any object with ``describe``"""
    if isinstance(model, ModelParams):
        return ObjectEncoder(model, chunk=chunk)
    if hasattr(model, "describe"):
        return model
    raise ContractViolation(f"cannot encode objects with {type(model).__name__}")
