"""
Sparsity statistics, location usage and robustness to key-point removal
"""
from collections import defaultdict
from typing import Dict, Iterator, List, Sequence

import numpy as np
import structlog

from app.models.encoder import EncoderOutput, as_encoder, encode_batch
from app.models.params import ModelParams
from app.schemas.keypoints import ObjectInstance
from app.schemas.reports import RobustnessReport, SparsityReport, UsageRow
from app.utils.errors import ContractViolation

logger = structlog.get_logger(__name__)


def _require_sparsity(params: ModelParams):
    if not params.config.sparsity:
        raise ContractViolation("sparsity statistics need a model with the sparsity module")


def _forward(objects: Sequence[ObjectInstance], params: ModelParams, chunk: int) -> Iterator[EncoderOutput]:
    for start in range(0, len(objects), chunk):
        yield encode_batch(objects[start:start + chunk], params)


def histogram_edges(n_o: int, bin_width: int) -> np.ndarray:
    edges = np.arange(0, n_o, bin_width)
    return np.append(edges, n_o)


def object_nonzero_masks(objects: Sequence[ObjectInstance], params: ModelParams,
                         chunk: int = 64) -> np.ndarray:
    """K x N_o mask of non-zero entries of each object's aggregate before the output projection"""
    _require_sparsity(params)
    if not objects:
        return np.zeros((0, params.config.n_o), dtype=bool)
    return np.concatenate([output.pooled.data > 0 for output in _forward(objects, params, chunk)])


def object_denseness_by_size(sizes: Sequence[int], nonzero: Sequence[int]) -> Dict[int, float]:
    """Mean aggregate non-zero count for each key-point count"""
    grouped = defaultdict(list)
    for size, count in zip(sizes, nonzero):
        grouped[int(size)].append(count)
    return {size: float(np.mean(grouped[size])) for size in sorted(grouped)}


def sparsity_stats(objects: Sequence[ObjectInstance], params: ModelParams, bin_width: int = 64,
                   chunk: int = 64) -> SparsityReport:
    """
    Non-zero counts of key-point location features and object aggregates

    Args:
        objects: Objects to encode
        params: Model with the sparsity module
        bin_width: Histogram bin width over [0, N_o]
        chunk: Objects per forward pass

    Returns:
        SparsityReport: Counts, histograms and denseness per object size
    """
    _require_sparsity(params)
    if not objects:
        raise ContractViolation("sparsity_stats needs at least one object")
    n_o = params.config.n_o
    keypoint_nonzero: List[int] = []
    object_nonzero: List[int] = []
    for output in _forward(objects, params, chunk):
        keypoint_nonzero.extend(int(c) for c in (output.location.data > 0).sum(axis=1))
        object_nonzero.extend(int(c) for c in (output.pooled.data > 0).sum(axis=1))
    sizes = [obj.num_keypoints for obj in objects]
    edges = histogram_edges(n_o, bin_width)
    report = SparsityReport(
        n_o=n_o,
        keypoint_nonzero=keypoint_nonzero,
        object_nonzero=object_nonzero,
        object_sizes=sizes,
        bin_edges=edges.tolist(),
        keypoint_histogram=np.histogram(keypoint_nonzero, bins=edges)[0].tolist(),
        object_histogram=np.histogram(object_nonzero, bins=edges)[0].tolist(),
        object_denseness_by_size=object_denseness_by_size(sizes, object_nonzero),
    )
    logger.info("sparsity_measured", objects=len(objects), keypoints=len(keypoint_nonzero),
                mean_keypoint_fraction=report.mean_keypoint_fraction)
    return report


def usage_rate(objects: Sequence[ObjectInstance], params: ModelParams, chunk: int = 64) -> float:
    """Share of descriptor positions non-zero in at least one object's aggregate"""
    if not objects:
        raise ContractViolation("usage_rate needs at least one object")
    masks = object_nonzero_masks(objects, params, chunk)
    return float(masks.any(axis=0).mean())


def usage_table(objects: Sequence[ObjectInstance], params: ModelParams, sizes: Sequence[int],
                chunk: int = 64) -> List[UsageRow]:
    """Usage rate over the first N objects for each N; prefixes are nested"""
    sizes = sorted(set(int(n) for n in sizes))
    if not sizes or sizes[0] < 1:
        raise ContractViolation(f"usage sizes must be positive, got {sizes}")
    if sizes[-1] > len(objects):
        raise ContractViolation(f"usage size {sizes[-1]} exceeds the {len(objects)} objects given")
    masks = object_nonzero_masks(objects[:sizes[-1]], params, chunk)
    covered = np.logical_or.accumulate(masks, axis=0)
    rows = [UsageRow(n=n, usage_rate=float(covered[n - 1].mean())) for n in sizes]
    for row in rows:
        logger.info("usage_measured", n=row.n, usage_rate=row.usage_rate)
    return rows


def drop_keypoints(obj: ObjectInstance, fraction: float, rng: np.random.Generator) -> ObjectInstance:
    """Remove a share of key-points at random, keeping the box and at least one key-point"""
    m = obj.num_keypoints
    removed = min(int(np.floor(fraction * m)), m - 1)
    keep = np.sort(rng.permutation(m)[removed:])
    return obj.subset(keep.tolist())


def dropout_robustness(objects: Sequence[ObjectInstance], model, drop_fraction: float, seed: int,
                       chunk: int = 64) -> RobustnessReport:
    """
    Similarity of each object to a copy with key-points removed, against the
    95th percentile of similarities between distinct objects
    """
    if len(objects) < 2:
        raise ContractViolation("dropout_robustness needs at least two objects")
    encoder = as_encoder(model, chunk)
    rng = np.random.default_rng(seed)
    reduced = [drop_keypoints(obj, drop_fraction, rng) for obj in objects]
    original = encoder.describe(list(objects))
    dropped = encoder.describe(reduced)
    retained = np.clip(np.sum(original * dropped, axis=1), -1.0, 1.0)
    cross = np.clip(original @ original.T, -1.0, 1.0)
    distinct = np.array([[a.object_id != b.object_id for b in objects] for a in objects])
    negatives = cross[distinct]
    if negatives.size == 0:
        raise ContractViolation("dropout_robustness needs objects of distinct identities")
    p95 = float(np.percentile(negatives, 95))
    report = RobustnessReport(
        drop_fraction=drop_fraction,
        retained_similarity=retained.tolist(),
        negative_p95=p95,
        all_above=bool(np.all(retained > p95)),
    )
    logger.info("robustness_measured", objects=len(objects), min_retained=float(retained.min()),
                negative_p95=p95)
    return report
