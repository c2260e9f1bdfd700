from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


class PRFResult(BaseModel):
    """
    Precision, recall and F1 of thresholded decisions

    Attributes:
        precision (float): TP / (TP + FP), 0 when nothing was predicted
        recall (float): TP / (TP + FN)
        f1 (float): Harmonic mean of precision and recall, 0 when both are 0
        precision_defined (bool): False when there were no predicted positives
        tp (int): True positives
        fp (int): False positives
        fn (int): False negatives
    """
    model_config = ConfigDict(extra='forbid')
    precision: float
    recall: float
    f1: float
    precision_defined: bool = True
    tp: int
    fp: int
    fn: int


class PRPoint(BaseModel):
    """One point of a precision-recall sweep"""
    model_config = ConfigDict(extra='forbid')
    threshold: float
    precision: float
    recall: float


class PRCurve(BaseModel):
    """
    Precision-recall sweep ordered by increasing threshold

    Attributes:
        points (list[PRPoint]): One point per distinct score
        area (float): Area under the curve, integrated over recall
    """
    model_config = ConfigDict(extra='forbid')
    points: List[PRPoint]
    area: float = Field(ge=0.0, le=1.0)


class MatchReport(BaseModel):
    """
    Object matching over all frame pairs separated by a gap

    Attributes:
        gap (int): Frame gap d
        sim_threshold (float): Cosine similarity decision threshold
        frame_pairs (int): Number of evaluated frame pairs
        scores (PRFResult): Thresholded decisions
        curve (PRCurve | None): Threshold sweep, absent when only one label occurs
        max_f1 (float | None): Best F1 along the sweep
    """
    model_config = ConfigDict(extra='forbid')
    gap: int
    sim_threshold: float
    frame_pairs: int
    scores: PRFResult
    curve: Optional[PRCurve] = None
    max_f1: Optional[float] = None


class RecallCurve(BaseModel):
    """Fraction of queries whose true frame ranks within the top N"""
    model_config = ConfigDict(extra='forbid')
    n_values: List[int]
    recall: List[float]

    def at(self, n: int) -> float:
        return self.recall[self.n_values.index(n)]


class RelocReport(BaseModel):
    """Relocalization quality over a set of queries"""
    model_config = ConfigDict(extra='forbid')
    queries: int
    sim_threshold: float
    accept_threshold: float
    recall_curve: RecallCurve
    scores: PRFResult


class SparsityReport(BaseModel):
    """
    Non-zero statistics of location features and object aggregates

    Attributes:
        n_o (int): Descriptor width
        keypoint_nonzero (list[int]): Non-zero count of each key-point's location feature
        object_nonzero (list[int]): Non-zero count of each object's pre-projection aggregate
        object_sizes (list[int]): Key-point count of each object
        bin_edges (list[int]): Histogram bin edges over [0, n_o]
        keypoint_histogram (list[int]): Histogram of keypoint_nonzero
        object_histogram (list[int]): Histogram of object_nonzero
        object_denseness_by_size (dict[int, float]): Mean object non-zero count per key-point count
    """
    model_config = ConfigDict(extra='forbid')
    n_o: int
    keypoint_nonzero: List[int]
    object_nonzero: List[int]
    object_sizes: List[int]
    bin_edges: List[int]
    keypoint_histogram: List[int]
    object_histogram: List[int]
    object_denseness_by_size: Dict[int, float]

    @property
    def mean_keypoint_fraction(self) -> float:
        if not self.keypoint_nonzero:
            return 0.0
        return sum(self.keypoint_nonzero) / (len(self.keypoint_nonzero) * self.n_o)


class UsageRow(BaseModel):
    """Location usage rate over N objects"""
    model_config = ConfigDict(extra='forbid')
    n: int
    usage_rate: float = Field(ge=0.0, le=1.0)


class BenchRow(BaseModel):
    """Median stage timings for one object size, in milliseconds"""
    model_config = ConfigDict(extra='forbid')
    keypoints: int
    node_encoding_ms: float
    graph_ms: float
    sparsity_ms: float
    aggregation_ms: float
    overall_ms: float
    rss_mb: float


class RobustnessReport(BaseModel):
    """Similarity of objects to copies with key-points removed"""
    model_config = ConfigDict(extra='forbid')
    drop_fraction: float
    retained_similarity: List[float]
    negative_p95: float
    all_above: bool


class TraceRow(BaseModel):
    """Loss components of one training step"""
    model_config = ConfigDict(extra='forbid')
    step: int
    positive: float
    negative: float
    sparse: float
    dense: float
    total: float
    pos_similarity: Optional[float] = None
    neg_similarity: Optional[float] = None


class MatchRow(BaseModel):
    """One line of the frame-gap matching table"""
    model_config = ConfigDict(extra='forbid')
    gap: int
    sim_threshold: float
    frame_pairs: int
    precision: float
    recall: float
    f1: float
    precision_defined: bool
    au_prc: Optional[float] = None
    max_f1: Optional[float] = None

    @classmethod
    def from_report(cls, report: MatchReport) -> "MatchRow":
        return cls(
            gap=report.gap,
            sim_threshold=report.sim_threshold,
            frame_pairs=report.frame_pairs,
            precision=report.scores.precision,
            recall=report.scores.recall,
            f1=report.scores.f1,
            precision_defined=report.scores.precision_defined,
            au_prc=report.curve.area if report.curve else None,
            max_f1=report.max_f1,
        )


class CurveRow(BaseModel):
    """One PR curve point labelled with its gap and decision threshold"""
    model_config = ConfigDict(extra='forbid')
    gap: int
    sim_threshold: float
    threshold: float
    precision: float
    recall: float


class RecallRow(BaseModel):
    model_config = ConfigDict(extra='forbid')
    n: int
    recall: float


class HistogramRow(BaseModel):
    """Key-point and object counts falling into one non-zero-count bin"""
    model_config = ConfigDict(extra='forbid')
    bin_start: int
    bin_end: int
    keypoints: int
    objects: int
