"""
Matching and relocalization metrics: precision/recall/F1, PR curves, frame-gap
evaluation and recall@N.
"""
from typing import Iterable, List, Sequence, Set, Tuple

import numpy as np
import structlog
from sklearn.metrics import auc, precision_recall_curve

from app.evaluation.matcher import match_objects, relocalize, similarity_matrix
from app.models.database import DescriptorDatabase
from app.models.encoder import as_encoder
from app.schemas.descriptors import DescriptorRecord
from app.schemas.keypoints import ObjectInstance
from app.schemas.reports import MatchReport, PRCurve, PRFResult, PRPoint, RecallCurve, RelocReport
from app.utils.errors import ContractViolation

logger = structlog.get_logger(__name__)

RecordFrame = List[DescriptorRecord]


def prf_from_counts(tp: int, fp: int, fn: int) -> PRFResult:
    """Precision, recall and F1 from confusion counts"""
    if tp + fn == 0:
        raise ContractViolation("precision/recall need at least one ground-truth positive")
    predicted = tp + fp
    precision = tp / predicted if predicted else 0.0
    recall = tp / (tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return PRFResult(precision=precision, recall=recall, f1=f1, precision_defined=predicted > 0,
                     tp=tp, fp=fp, fn=fn)


def precision_recall_f1(decisions: Iterable[Tuple[bool, bool]]) -> PRFResult:
    """
    Score (predicted, actual) match decisions

    Precision is reported as 0 with ``precision_defined=False`` when nothing
    was predicted positive.
    """
    tp = fp = fn = 0
    for predicted, actual in decisions:
        if predicted and actual:
            tp += 1
        elif predicted:
            fp += 1
        elif actual:
            fn += 1
    return prf_from_counts(tp, fp, fn)


def pr_curve(scored_pairs: Sequence[Tuple[float, bool]]) -> PRCurve:
    """
    Precision and recall at every distinct score used as a threshold

    A pair counts as predicted positive when its score is at least the
    threshold. The area integrates precision over recall with the trapezoid
    rule, closing the curve at recall 0 with the precision of the highest
    threshold.
    """
    if not scored_pairs:
        raise ContractViolation("pr_curve needs scored pairs")
    scores = np.array([score for score, _ in scored_pairs], dtype=np.float64)
    labels = np.array([bool(label) for _, label in scored_pairs])
    if labels.all() or not labels.any():
        raise ContractViolation("pr_curve needs both positive and negative pairs")

    precision, recall, thresholds = precision_recall_curve(labels, scores)
    precision, recall = precision[:-1], recall[:-1]
    points = [
        PRPoint(threshold=float(t), precision=float(p), recall=float(r))
        for t, p, r in zip(thresholds, precision, recall)
    ]
    area = float(auc(np.append(recall, 0.0), np.append(precision, precision[-1])))
    return PRCurve(points=points, area=min(max(area, 0.0), 1.0))


def max_f1(curve: PRCurve) -> float:
    """Best F1 over the threshold sweep"""
    best = 0.0
    for point in curve.points:
        total = point.precision + point.recall
        if total > 0:
            best = max(best, 2 * point.precision * point.recall / total)
    return best


def describe_frames(frames: Sequence[Sequence[ObjectInstance]], model, chunk: int = 64) -> List[RecordFrame]:
    """Encode every object of every frame into descriptor records, keeping the frame layout"""
    encoder = as_encoder(model, chunk)
    flat = [obj for frame in frames for obj in frame]
    descriptors = encoder.describe(flat)
    out, cursor = [], 0
    for frame in frames:
        records = [
            DescriptorRecord(object_id=obj.object_id, frame_id=obj.frame_id, sequence_id=obj.sequence_id,
                             descriptor=descriptors[cursor + k])
            for k, obj in enumerate(frame)
        ]
        cursor += len(frame)
        out.append(records)
    return out


def gap_pairs(frames: Sequence[RecordFrame], gap: int, sim_threshold: float,
              mutual_nearest: bool = False) -> Tuple[List[Tuple[bool, bool]], List[Tuple[float, bool]]]:
    """
    Decisions and scores over all object pairs of frame pairs (t, t + gap)

    Returns:
        tuple: (predicted, actual) decisions and (score, actual) pairs, in frame then row order
    """
    if gap < 1:
        raise ContractViolation(f"frame gap must be positive, got {gap}")
    if len(frames) <= gap:
        raise ContractViolation(f"sequence of {len(frames)} frames is too short for gap {gap}")
    decisions, scored = [], []
    for t in range(len(frames) - gap):
        frame_a, frame_b = frames[t], frames[t + gap]
        scores = similarity_matrix(frame_a, frame_b)
        matched = {
            (m.object_a, m.object_b)
            for m in match_objects(frame_a, frame_b, sim_threshold, mutual_nearest)
        }
        for i, record_a in enumerate(frame_a):
            for j, record_b in enumerate(frame_b):
                actual = record_a.object_id == record_b.object_id
                decisions.append(((record_a.object_id, record_b.object_id) in matched, actual))
                scored.append((float(scores[i, j]), actual))
    return decisions, scored


def match_report(gap: int, sim_threshold: float, frame_pairs: int, decisions, scored) -> MatchReport:
    labels = {label for _, label in scored}
    curve = pr_curve(scored) if labels == {True, False} else None
    return MatchReport(
        gap=gap,
        sim_threshold=sim_threshold,
        frame_pairs=frame_pairs,
        scores=precision_recall_f1(decisions),
        curve=curve,
        max_f1=max_f1(curve) if curve else None,
    )


def frame_gap_eval(sequence: Sequence[Sequence[ObjectInstance]], gap: int, model,
                   sim_threshold: float, mutual_nearest: bool = False, chunk: int = 64) -> MatchReport:
    """
    Match objects across every frame pair (t, t + gap) of one sequence

    Ground truth is a shared object_id. The PR curve is attached only when
    both matching and non-matching pairs occur.
    """
    frames = describe_frames(sequence, model, chunk)
    decisions, scored = gap_pairs(frames, gap, sim_threshold, mutual_nearest)
    return match_report(gap, sim_threshold, len(frames) - gap, decisions, scored)


def evaluate_gaps(sequences: Sequence[Sequence[Sequence[ObjectInstance]]], gaps: Sequence[int],
                  thresholds: Sequence[float], model, mutual_nearest: bool = False,
                  chunk: int = 64) -> List[MatchReport]:
    """
    Frame-gap evaluation pooled over several sequences

    Every sequence is encoded once; decisions from all sequences are pooled
    per (gap, threshold).
    """
    encoded = [describe_frames(sequence, model, chunk) for sequence in sequences]
    return pooled_gap_reports(encoded, gaps, thresholds, mutual_nearest)


def pooled_gap_reports(encoded: Sequence[Sequence[RecordFrame]], gaps: Sequence[int],
                       thresholds: Sequence[float], mutual_nearest: bool = False) -> List[MatchReport]:
    """
    Frame-gap reports over already encoded sequences

    Pairs never cross sequences. Sequences too short for a gap are skipped.
    """
    reports = []
    for gap in gaps:
        usable = [frames for frames in encoded if len(frames) > gap]
        if not usable:
            raise ContractViolation(f"no sequence is long enough for gap {gap}")
        for threshold in thresholds:
            decisions, scored = [], []
            for frames in usable:
                d, s = gap_pairs(frames, gap, threshold, mutual_nearest)
                decisions.extend(d)
                scored.extend(s)
            report = match_report(gap, threshold, sum(len(f) - gap for f in usable), decisions, scored)
            logger.info("gap_evaluated", gap=gap, sim_threshold=threshold, f1=report.scores.f1,
                        au_prc=report.curve.area if report.curve else None)
            reports.append(report)
    return reports


def true_frames(query: RecordFrame, db: DescriptorDatabase) -> Set[int]:
    """Database frames sharing at least one object identity with the query"""
    identities = {record.object_id for record in query}
    return {record.frame_id for record in db.records() if record.object_id in identities}


def recall_at_n(queries: Sequence[RecordFrame], db: DescriptorDatabase, n_values: Sequence[int],
                sim_threshold: float) -> RecallCurve:
    """Share of queries with a true frame among the top N ranked frames, for each N"""
    if not queries:
        raise ContractViolation("recall_at_n needs at least one query")
    n_values = sorted(set(int(n) for n in n_values))
    hits = np.zeros(len(n_values))
    for query in queries:
        truth = true_frames(query, db)
        if not truth:
            raise ContractViolation(f"query frame {query[0].frame_id if query else '?'} has no true frame")
        ranked = [item.frame_id for item in relocalize(query, db, sim_threshold, n_values[-1])]
        for k, n in enumerate(n_values):
            if truth.intersection(ranked[:n]):
                hits[k] += 1
    return RecallCurve(n_values=n_values, recall=(hits / len(queries)).tolist())


def relocalization_prf(queries: Sequence[RecordFrame], db: DescriptorDatabase, sim_threshold: float,
                       accept_threshold: float) -> PRFResult:
    """
    Accept the top-ranked frame when its score exceeds ``accept_threshold``

    A correct acceptance is a true positive. A wrong acceptance is a false
    positive, and every query whose true frame was not accepted is a false
    negative.
    """
    tp = fp = fn = 0
    for query in queries:
        truth = true_frames(query, db)
        best = relocalize(query, db, sim_threshold, 1)[0]
        accepted = best.score > accept_threshold
        correct = best.frame_id in truth
        if accepted and correct:
            tp += 1
        else:
            if accepted:
                fp += 1
            if truth:
                fn += 1
    return prf_from_counts(tp, fp, fn)


def evaluate_relocalization(database: Sequence[Sequence[ObjectInstance]],
                            queries: Sequence[Sequence[ObjectInstance]], model, sim_threshold: float,
                            accept_threshold: float, top_n: int, chunk: int = 64) -> RelocReport:
    """Encode a relocalization layout and report recall@N for N in 1..top_n plus acceptance scores"""
    db = DescriptorDatabase()
    for frame in describe_frames(database, model, chunk):
        db.add_many(frame)
    query_frames = describe_frames(queries, model, chunk)
    curve = recall_at_n(query_frames, db, range(1, top_n + 1), sim_threshold)
    scores = relocalization_prf(query_frames, db, sim_threshold, accept_threshold)
    logger.info("relocalization_evaluated", queries=len(query_frames),
                recall_at_1=curve.at(1), f1=scores.f1)
    return RelocReport(queries=len(query_frames), sim_threshold=sim_threshold,
                       accept_threshold=accept_threshold, recall_curve=curve, scores=scores)
