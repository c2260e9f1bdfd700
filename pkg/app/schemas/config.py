import math
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ModelConfig(BaseModel):
    """
    Encoder dimensions and architecture switches

    Attributes:
        n_p (int): Key-point descriptor width
        n_m (int): Positional encoding width
        n_o (int): Object descriptor width
        pos_hidden (int): Hidden width of the positional MLP (2 -> h -> h -> n_m)
        attention_layers (int): Number of attention propagation layers
        update_hidden (int | None): Hidden width of the residual update MLP, 2*n_n when unset
        sparsity_hidden (int): Width of the first layer of each sparsity branch
        sparsity (bool): False swaps the sparsity module for one fully connected layer
    """
    model_config = ConfigDict(extra='forbid')
    n_p: int = Field(default=256, ge=1, description="Key-point descriptor width")
    n_m: int = Field(default=16, ge=1, description="Positional encoding width")
    n_o: int = Field(default=2048, ge=1, description="Object descriptor width")
    pos_hidden: int = Field(default=32, ge=1, description="Positional MLP hidden width")
    attention_layers: int = Field(default=3, ge=0, description="Attention propagation layers")
    update_hidden: Optional[int] = Field(
        default=None,
        ge=1,
        description="Residual update MLP hidden width; 2*n_n when unset"
    )
    sparsity_hidden: int = Field(default=1024, ge=1, description="First sparsity layer width")
    sparsity: bool = Field(default=True, description="Use the dual-branch sparsity module")

    @property
    def n_n(self) -> int:
        return self.n_p + self.n_m

    @property
    def update_width(self) -> int:
        return self.update_hidden or 2 * self.n_n


class LossWeights(BaseModel):
    """
    Multipliers of the four loss terms

    Attributes:
        w_neg (float): Negative matching term
        w_pos (float): Positive matching term
        w_sparse (float): Sparse location term
        w_dense (float): Dense feature term
    """
    model_config = ConfigDict(extra='forbid')
    w_neg: float = Field(default=1.0, ge=0.0, description="Negative matching weight")
    w_pos: float = Field(default=0.5, ge=0.0, description="Positive matching weight")
    w_sparse: float = Field(default=0.1, ge=0.0, description="Sparse location loss weight")
    w_dense: float = Field(default=10.0, ge=0.0, description="Dense feature loss weight")


class AugmentationParams(BaseModel):
    """
    Random homography and key-point perturbation magnitudes

    Attributes:
        perspective (float): Corner jitter as a fraction of the box size
        translation (float): Maximum shift in pixels per axis
        rotation (float): Maximum absolute rotation in radians
        scale_min (float): Lower bound of the scale factor
        scale_max (float): Upper bound of the scale factor
        descriptor_noise (float): Standard deviation of descriptor noise
        dropout (float): Per key-point drop probability
        deformation_std (float): Per key-point position jitter as a box fraction
        occlusion_prob (float): Probability of cutting a rectangle of key-points
        occlusion_max_fraction (float): Largest occluder side as a box fraction
        max_resample (int): Attempts before falling back to an affine warp
    """
    model_config = ConfigDict(extra='forbid')
    perspective: float = Field(default=0.1, ge=0.0, lt=0.5, description="Corner jitter (box fraction)")
    translation: float = Field(default=20.0, ge=0.0, description="Maximum translation (px)")
    rotation: float = Field(default=math.pi / 6, ge=0.0, description="Maximum rotation (rad)")
    scale_min: float = Field(default=0.7, gt=0.0, description="Minimum scale factor")
    scale_max: float = Field(default=1.4, gt=0.0, description="Maximum scale factor")
    descriptor_noise: float = Field(default=0.05, ge=0.0, description="Descriptor noise std")
    dropout: float = Field(default=0.2, ge=0.0, lt=1.0, description="Key-point dropout probability")
    deformation_std: float = Field(default=0.0, ge=0.0, description="Non-rigid jitter (box fraction)")
    occlusion_prob: float = Field(default=0.0, ge=0.0, le=1.0, description="Occlusion probability")
    occlusion_max_fraction: float = Field(
        default=0.3,
        gt=0.0,
        le=1.0,
        description="Largest occluder side (box fraction)"
    )
    max_resample: int = Field(default=10, ge=1, description="Homography resampling attempts")

    @model_validator(mode='after')
    def validate_scale_range(self):
        if self.scale_min > self.scale_max:
            raise ValueError(f"scale_min {self.scale_min} exceeds scale_max {self.scale_max}")
        return self

    @classmethod
    def identity(cls) -> "AugmentationParams":
        """Parameters under which augmentation leaves an object unchanged"""
        return cls(
            perspective=0.0,
            translation=0.0,
            rotation=0.0,
            scale_min=1.0,
            scale_max=1.0,
            descriptor_noise=0.0,
            dropout=0.0,
        )


class SynthConfig(BaseModel):
    """
    Synthetic object generator settings

    Attributes:
        min_keypoints (int): Smallest key-point count per object
        max_keypoints (int): Largest key-point count per object
        box_min (float): Smallest object box side in pixels
        box_max (float): Largest object box side in pixels
        image_width (float): Width of the canvas objects are placed on
        image_height (float): Height of the canvas objects are placed on
        descriptor_noise (float): Noise added to prototypes before normalisation
        bbox_margin (float): Padding of the tight key-point box in pixels
    """
    model_config = ConfigDict(extra='forbid')
    min_keypoints: int = Field(default=5, ge=1, description="Minimum key-points per object")
    max_keypoints: int = Field(default=40, ge=1, description="Maximum key-points per object")
    box_min: float = Field(default=60.0, gt=0.0, description="Minimum box side (px)")
    box_max: float = Field(default=200.0, gt=0.0, description="Maximum box side (px)")
    image_width: float = Field(default=640.0, gt=0.0, description="Canvas width (px)")
    image_height: float = Field(default=480.0, gt=0.0, description="Canvas height (px)")
    descriptor_noise: float = Field(default=0.05, ge=0.0, description="Prototype noise std")
    bbox_margin: float = Field(default=1.0, gt=0.0, description="Tight box padding (px)")

    @model_validator(mode='after')
    def validate_ranges(self):
        if self.min_keypoints > self.max_keypoints:
            raise ValueError("min_keypoints exceeds max_keypoints")
        if self.box_min > self.box_max:
            raise ValueError("box_min exceeds box_max")
        return self


class SequenceConfig(BaseModel):
    """
    Evaluation sequences: objects tracked over frames with drifting pose

    Attributes:
        num_sequences (int): Sequences to generate
        num_frames (int): Frames per sequence
        objects_per_frame (int): Objects present in every frame
        rotation_rate (float): Largest rotation drift per frame (rad)
        scale_rate (float): Largest log-scale drift per frame
        translation_rate (float): Largest translation drift per frame (px)
        visibility_period (int): Period of the key-point visibility cycle (frames)
        visible_fraction (float): Share of the cycle a key-point is visible
        descriptor_noise (float): Per-frame descriptor noise std
    """
    model_config = ConfigDict(extra='forbid')
    num_sequences: int = Field(default=4, ge=0, description="Sequences to generate")
    num_frames: int = Field(default=30, ge=1, description="Frames per sequence")
    objects_per_frame: int = Field(default=4, ge=1, description="Objects per frame")
    rotation_rate: float = Field(default=0.03, ge=0.0, description="Rotation drift (rad/frame)")
    scale_rate: float = Field(default=0.01, ge=0.0, description="Log-scale drift per frame")
    translation_rate: float = Field(default=2.0, ge=0.0, description="Translation drift (px/frame)")
    visibility_period: int = Field(default=40, ge=1, description="Visibility cycle (frames)")
    visible_fraction: float = Field(default=0.75, gt=0.0, le=1.0, description="Visible share of the cycle")
    descriptor_noise: float = Field(default=0.05, ge=0.0, description="Per-frame descriptor noise")


class RelocConfig(BaseModel):
    """
    Relocalization layout: database places and revisit queries

    Attributes:
        num_places (int): Database frames
        objects_per_place (int): Distinct objects seen at each place
        num_queries (int): Augmented revisits of randomly chosen places
    """
    model_config = ConfigDict(extra='forbid')
    num_places: int = Field(default=50, ge=1, description="Database frames")
    objects_per_place: int = Field(default=3, ge=1, description="Objects per place")
    num_queries: int = Field(default=10, ge=0, description="Revisit queries")

    @model_validator(mode='after')
    def validate_queries(self):
        if self.num_queries > self.num_places:
            raise ValueError("num_queries cannot exceed num_places")
        return self


class TrainConfig(BaseModel):
    """
    Optimisation settings

    Attributes:
        learning_rate (float): RMSprop step size
        batch_size (int): Labelled pairs per step
        positive_fraction (float): Share of positive pairs in a batch
        steps (int): Optimisation steps
        rho (float): RMSprop decay of the squared-gradient average
        eps (float): RMSprop denominator guard
        weights (LossWeights): Loss term multipliers
        delta (float): Dense loss margin
        zeta (float): Negative matching margin
        ablate_sparsity (bool): Train the fully connected replacement instead
        ablate_aux_losses (bool): Drop the sparse and dense losses
        checkpoint_every (int): Steps between checkpoints, 0 disables
        log_every (int): Steps between info-level trace logs
        prefetch (int): Batches generated ahead of the optimiser, 0 disables
    """
    model_config = ConfigDict(extra='forbid')
    learning_rate: float = Field(default=1e-5, gt=0.0, description="Learning rate")
    batch_size: int = Field(default=16, ge=1, description="Pairs per batch")
    positive_fraction: float = Field(default=0.5, ge=0.0, le=1.0, description="Positive pair share")
    steps: int = Field(default=2000, ge=0, description="Optimisation steps")
    rho: float = Field(default=0.99, gt=0.0, lt=1.0, description="RMSprop decay")
    eps: float = Field(default=1e-8, ge=0.0, description="RMSprop epsilon")
    weights: LossWeights = Field(default_factory=LossWeights)
    delta: float = Field(default=16.0, gt=0.0, description="Dense loss margin")
    zeta: float = Field(default=0.2, description="Negative matching margin")
    ablate_sparsity: bool = Field(default=False, description="Replace the sparsity module")
    ablate_aux_losses: bool = Field(default=False, description="Disable sparse and dense losses")
    checkpoint_every: int = Field(default=500, ge=0, description="Checkpoint interval (steps)")
    log_every: int = Field(default=10, ge=1, description="Trace log interval (steps)")
    prefetch: int = Field(default=2, ge=0, description="Prefetched batches")

    @property
    def effective_weights(self) -> LossWeights:
        if self.ablate_aux_losses:
            return self.weights.model_copy(update={"w_sparse": 0.0, "w_dense": 0.0})
        return self.weights


class EvalConfig(BaseModel):
    """
    Evaluation parameters

    Attributes:
        gaps (list[int]): Frame gaps d for matching evaluation
        sim_thresholds (list[float]): Decision thresholds on cosine similarity
        top_n (int): Largest N of the recall@N curve
        accept_threshold (float): Accumulated similarity needed to accept a relocalization
        usage_sizes (list[int]): Object counts N for the usage table
        bench_sizes (list[int]): Key-point counts for the runtime benchmark
        bench_repeats (int): Timed repetitions per size
        histogram_bin_width (int): Bin width of the sparsity histograms
        stats_objects (int): Objects sampled for sparsity statistics
        robustness_objects (int): Objects for the key-point removal check
        robustness_drop (float): Share of key-points removed
        mutual_nearest (bool): Keep only mutual nearest neighbours when matching
        encode_chunk (int): Objects encoded per forward pass
    """
    model_config = ConfigDict(extra='forbid')
    gaps: List[int] = Field(default=[1, 3, 5, 10], description="Frame gaps")
    sim_thresholds: List[float] = Field(default=[0.5], description="Matching thresholds")
    top_n: int = Field(default=20, ge=1, description="Largest N for recall@N")
    accept_threshold: float = Field(default=0.5, ge=0.0, description="Relocalization acceptance")
    usage_sizes: List[int] = Field(default=[1, 10, 100, 1000, 10000], description="Usage table N")
    bench_sizes: List[int] = Field(default=[5, 10, 20, 40], description="Benchmark key-point counts")
    bench_repeats: int = Field(default=20, ge=1, description="Benchmark repetitions")
    histogram_bin_width: int = Field(default=64, ge=1, description="Histogram bin width")
    stats_objects: int = Field(default=200, ge=1, description="Objects for sparsity statistics")
    robustness_objects: int = Field(default=100, ge=2, description="Objects for removal check")
    robustness_drop: float = Field(default=0.2, ge=0.0, lt=1.0, description="Removed key-point share")
    mutual_nearest: bool = Field(default=False, description="Mutual nearest filter")
    encode_chunk: int = Field(default=64, ge=1, description="Objects per encoding pass")

    @field_validator('gaps', 'usage_sizes', 'bench_sizes')
    def validate_positive(cls, values):
        """All gaps and sizes must be positive"""
        for value in values:
            if value < 1:
                raise ValueError(f"expected positive entries, got {value}")
        return values


class RunConfig(BaseModel):
    """
    Complete run configuration; every CLI command reads its section from here

    Attributes:
        seed (int): Root seed all randomness derives from
        model (ModelConfig): Encoder dimensions
        train (TrainConfig): Optimisation settings
        augment (AugmentationParams): Pair augmentation
        synth (SynthConfig): Synthetic objects
        sequence (SequenceConfig): Evaluation sequences
        reloc (RelocConfig): Relocalization layout
        eval (EvalConfig): Evaluation parameters
    """
    model_config = ConfigDict(extra='forbid')
    seed: int = Field(default=0, ge=0, description="Root seed")
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    augment: AugmentationParams = Field(default_factory=AugmentationParams)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    sequence: SequenceConfig = Field(default_factory=SequenceConfig)
    reloc: RelocConfig = Field(default_factory=RelocConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
