"""
Descriptor comparison, thresholded object matching and frame ranking.
"""
from typing import List, Sequence

import numpy as np
import structlog

from app.models.database import DescriptorDatabase
from app.schemas.descriptors import DescriptorRecord, ObjectMatch, RankedFrame
from app.utils.errors import ContractViolation

logger = structlog.get_logger(__name__)

Frame = Sequence[DescriptorRecord]


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit-norm descriptors, clipped to [-1, 1]"""
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def similarity_matrix(frame_a: Frame, frame_b: Frame) -> np.ndarray:
    """|A| x |B| cosine similarities"""
    if not frame_a or not frame_b:
        return np.zeros((len(frame_a), len(frame_b)))
    left = np.stack([record.descriptor for record in frame_a])
    right = np.stack([record.descriptor for record in frame_b])
    return np.clip(left @ right.T, -1.0, 1.0)


def _mutual_nearest(scores: np.ndarray) -> np.ndarray:
    rows = scores.argmax(axis=1)
    cols = scores.argmax(axis=0)
    mask = np.zeros_like(scores, dtype=bool)
    for i, j in enumerate(rows):
        if cols[j] == i:
            mask[i, j] = True
    return mask


def match_objects(frame_a: Frame, frame_b: Frame, sim_threshold: float,
                  mutual_nearest: bool = False) -> List[ObjectMatch]:
    """
    Every cross-frame object pair with similarity strictly above the threshold

    No one-to-one assignment is made; ``mutual_nearest`` keeps only pairs that
    are each other's best match.

    Returns:
        list[ObjectMatch]: Pairs in (row of frame_a, row of frame_b) order
    """
    scores = similarity_matrix(frame_a, frame_b)
    if scores.size == 0:
        return []
    keep = scores > sim_threshold
    if mutual_nearest:
        keep &= _mutual_nearest(scores)
    return [
        ObjectMatch(object_a=frame_a[i].object_id, object_b=frame_b[j].object_id,
                    score=float(scores[i, j]))
        for i, j in zip(*np.nonzero(keep))
    ]


def frame_similarity(frame_a: Frame, frame_b: Frame, sim_threshold: float) -> float:
    """Sum of the similarities of all cross-frame pairs above the threshold"""
    scores = similarity_matrix(frame_a, frame_b)
    return float(scores[scores > sim_threshold].sum())


def relocalize(query_frame: Frame, db: DescriptorDatabase, sim_threshold: float,
               top_n: int) -> List[RankedFrame]:
    """
    Rank database frames by accumulated similarity to the query

    Ordered by score descending, then frame_id ascending.
    """
    frames = db.frames()
    if not frames:
        raise ContractViolation("cannot relocalize against an empty database")
    if top_n < 1:
        raise ContractViolation(f"top_n must be positive, got {top_n}")
    ranked = [
        RankedFrame(frame_id=frame_id, score=frame_similarity(query_frame, records, sim_threshold))
        for frame_id, records in frames.items()
    ]
    ranked.sort(key=lambda item: (-item.score, item.frame_id))
    logger.debug("relocalized", frames=len(ranked), best=ranked[0].frame_id, score=ranked[0].score)
    return ranked[:top_n]
