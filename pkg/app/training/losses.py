"""
Training objectives: sparse location loss, dense feature loss, matching loss
and their weighted total.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.models.encoder import EncoderOutput, encode_batch
from app.models.params import ModelParams
from app.schemas.config import LossWeights
from app.schemas.keypoints import LabeledPair
from app.utils.errors import ContractViolation
from app.utils.tensor import Tensor, l2_normalize, relu, tabs, take_rows, tsum

DEFAULT_DELTA = 16.0
DEFAULT_ZETA = 0.2


def _matrix(features) -> Tensor:
    tensor = features if isinstance(features, Tensor) else Tensor(np.atleast_2d(features))
    if tensor.ndim != 2:
        raise ContractViolation(f"expected an M x N_o feature matrix, got shape {tensor.shape}")
    return tensor


def sparse_loss(locations) -> Tensor:
    """Sum over key-points of the l1 norm of each normalised location feature"""
    return tsum(tabs(l2_normalize(_matrix(locations), axis=1)))


def dense_loss(locations, delta: float = DEFAULT_DELTA) -> Tensor:
    """Hinge on the l1 norm of the normalised summed location features of one object"""
    locations = _matrix(locations)
    if locations.shape[0] == 0:
        raise ContractViolation("dense_loss needs at least one location feature")
    summed = l2_normalize(tsum(locations, axis=0), axis=-1)
    return relu(delta - tsum(tabs(summed)))


def batch_sparse_loss(output: EncoderOutput) -> Tensor:
    """Mean over objects of each object's sparse loss"""
    return sparse_loss(output.location) * (1.0 / len(output.counts))


def batch_dense_loss(output: EncoderOutput, delta: float = DEFAULT_DELTA) -> Tensor:
    """Mean over objects of each object's dense loss"""
    summed = Tensor(output.segment_matrix()) @ output.location
    spread = tsum(tabs(l2_normalize(summed, axis=1)), axis=1)
    return tsum(relu(delta - spread)) * (1.0 / len(output.counts))


@dataclass
class MatchingLoss:
    """Positive and negative sums of the matching loss, kept apart for weighting"""
    positive: Tensor
    negative: Tensor
    similarities: np.ndarray


def matching_loss(descriptors: Tensor, pairs: Sequence[Tuple[int, int, bool]],
                  zeta: float = DEFAULT_ZETA) -> MatchingLoss:
    """
    Cosine matching loss over labelled pairs of descriptor rows

    Args:
        descriptors: K x N_o unit-norm descriptors
        pairs: (row_p, row_q, positive) triples
        zeta: Margin below which negative pairs cost nothing

    Returns:
        MatchingLoss: sum(1 - S) over positives, sum(max(0, S - zeta)) over negatives
    """
    descriptors = _matrix(descriptors)
    positives = [(p, q) for p, q, label in pairs if label]
    negatives = [(p, q) for p, q, label in pairs if not label]
    similarities = np.zeros(len(pairs))

    def cosines(index_pairs) -> Tensor:
        left = take_rows(descriptors, [p for p, _ in index_pairs])
        right = take_rows(descriptors, [q for _, q in index_pairs])
        return tsum(left * right, axis=1)

    positive = Tensor(0.0)
    if positives:
        sims = cosines(positives)
        positive = tsum(1.0 - sims)
        similarities[[i for i, (_, _, label) in enumerate(pairs) if label]] = sims.data
    negative = Tensor(0.0)
    if negatives:
        sims = cosines(negatives)
        negative = tsum(relu(sims - zeta))
        similarities[[i for i, (_, _, label) in enumerate(pairs) if not label]] = sims.data
    return MatchingLoss(positive=positive, negative=negative, similarities=similarities)


@dataclass
class LossBreakdown:
    """Weighted total and its unweighted components for one batch"""
    total: Tensor
    positive: Tensor
    negative: Tensor
    sparse: Tensor
    dense: Tensor
    pos_similarity: Optional[float]
    neg_similarity: Optional[float]

    def components(self) -> dict:
        return {
            "positive": self.positive.item(),
            "negative": self.negative.item(),
            "sparse": self.sparse.item(),
            "dense": self.dense.item(),
            "total": self.total.item(),
        }


def flatten_pairs(batch: Sequence[LabeledPair]):
    """Objects in encoding order and the matching (row, row, label) triples"""
    objects, triples = [], []
    for i, pair in enumerate(batch):
        objects.extend([pair.first, pair.second])
        triples.append((2 * i, 2 * i + 1, pair.positive))
    return objects, triples


def total_loss(batch: Sequence[LabeledPair], params: ModelParams, weights: LossWeights,
               delta: float = DEFAULT_DELTA, zeta: float = DEFAULT_ZETA) -> LossBreakdown:
    """
    Weighted sum of the negative and positive matching terms and the sparse and
    dense location terms

    Terms with a zero weight stay out of the graph, so they never reach the
    gradients.
    """
    if not batch:
        raise ContractViolation("total_loss needs at least one labelled pair")
    objects, triples = flatten_pairs(batch)
    output = encode_batch(objects, params)
    matching = matching_loss(output.descriptors, triples, zeta)

    if output.location is not None:
        sparse = batch_sparse_loss(output)
        dense = batch_dense_loss(output, delta)
    else:
        sparse, dense = Tensor(0.0), Tensor(0.0)

    terms: List[Tensor] = [
        term * weight
        for term, weight in (
            (matching.negative, weights.w_neg),
            (matching.positive, weights.w_pos),
            (sparse, weights.w_sparse),
            (dense, weights.w_dense),
        )
        if weight > 0
    ]
    total = Tensor(0.0)
    for term in terms:
        total = total + term

    labels = np.array([label for _, _, label in triples])
    sims = matching.similarities
    return LossBreakdown(
        total=total,
        positive=matching.positive,
        negative=matching.negative,
        sparse=sparse,
        dense=dense,
        pos_similarity=float(sims[labels].mean()) if labels.any() else None,
        neg_similarity=float(sims[~labels].mean()) if (~labels).any() else None,
    )
