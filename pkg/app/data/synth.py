"""
Seeded synthetic objects, augmentations, pair batches, tracking sequences and
relocalization layouts.

Every function is a pure function of its seed: regenerating any output is
bitwise identical. Descriptors are noisy copies of per-key-point random unit
prototypes, so observations of the same key-point stay close while different
key-points are nearly orthogonal.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import cv2
import numpy as np
import structlog

from app.schemas.config import AugmentationParams, RelocConfig, SequenceConfig, SynthConfig
from app.schemas.keypoints import KeyPoint, LabeledPair, ObjectInstance, build_object, tight_bbox
from app.utils.errors import ContractViolation
from app.utils.tensor import EPS

logger = structlog.get_logger(__name__)

SEED_SPACE = 2 ** 62

Frame = List[ObjectInstance]


def derive_seed(*keys: int) -> int:
    """Independent child seed for a tuple of integer keys"""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, dtype=np.uint64)[0]
               % SEED_SPACE)


def unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.maximum(np.linalg.norm(matrix, axis=1, keepdims=True), EPS)
    return matrix / norms


@dataclass(frozen=True)
class SynthObjectSpec:
    """
    Latent description of a synthetic object

    Attributes:
        seed: Identity seed
        prototypes: M x N_p unit prototype descriptors
        canonical: M x 2 positions inside the unit box
        origin: Top-left corner of the object box in pixels
        size: Box width and height in pixels
    """
    seed: int
    prototypes: np.ndarray
    canonical: np.ndarray
    origin: np.ndarray
    size: np.ndarray

    @property
    def object_id(self) -> str:
        return f"obj-{self.seed}"

    @property
    def num_keypoints(self) -> int:
        return self.prototypes.shape[0]

    def positions(self) -> np.ndarray:
        return self.origin + self.canonical * self.size

    def center(self) -> np.ndarray:
        return self.origin + self.size / 2.0


def object_spec(seed: int, config: SynthConfig, n_p: int) -> SynthObjectSpec:
    rng = np.random.default_rng(seed)
    m = int(rng.integers(config.min_keypoints, config.max_keypoints + 1))
    prototypes = unit_rows(rng.standard_normal((m, n_p)))
    canonical = rng.uniform(0.0, 1.0, size=(m, 2))
    size = rng.uniform(config.box_min, config.box_max, size=2)
    room = np.maximum(np.array([config.image_width, config.image_height]) - size, 0.0)
    origin = rng.uniform(0.0, 1.0, size=2) * room
    return SynthObjectSpec(seed=seed, prototypes=prototypes, canonical=canonical,
                           origin=origin, size=size)


def noisy_descriptors(prototypes: np.ndarray, noise: float, rng: np.random.Generator) -> np.ndarray:
    perturbation = rng.standard_normal(prototypes.shape)
    if noise == 0:
        return prototypes.copy()
    return unit_rows(prototypes + noise * perturbation)


def generate_object(seed: int, config: Optional[SynthConfig] = None, n_p: int = 256,
                    frame_id: int = 0, sequence_id: str = "default") -> ObjectInstance:
    """Deterministic synthetic object for an identity seed"""
    config = config or SynthConfig()
    spec = object_spec(seed, config, n_p)
    rng = np.random.default_rng(derive_seed(seed, 1))
    descriptors = noisy_descriptors(spec.prototypes, config.descriptor_noise, rng)
    return build_object(spec.object_id, frame_id, spec.positions(), descriptors,
                        config.bbox_margin, sequence_id)


def _corners(bbox) -> np.ndarray:
    x, y, w, h = bbox
    return np.array([[x, y], [x + w, y], [x + w, y + h], [x, y + h]], dtype=np.float64)


def _similarity(center: np.ndarray, angle: float, scale: float, shift: np.ndarray) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    linear = scale * np.array([[c, -s], [s, c]])
    matrix = np.eye(3)
    matrix[:2, :2] = linear
    matrix[:2, 2] = center + shift - linear @ center
    return matrix


def warp_points(homography: np.ndarray, points: np.ndarray) -> np.ndarray:
    warped = cv2.perspectiveTransform(points.reshape(-1, 1, 2).astype(np.float64), homography)
    return warped.reshape(-1, 2)


def _is_valid(homography: np.ndarray, points: np.ndarray) -> bool:
    if not np.all(np.isfinite(homography)) or abs(np.linalg.det(homography)) < 1e-9:
        return False
    w = points @ homography[2, :2] + homography[2, 2]
    return bool(np.all(w > 1e-6))


def sample_homography(rng: np.random.Generator, bbox, aug: AugmentationParams,
                      points: np.ndarray) -> np.ndarray:
    """
    Random homography built from perspective, scale, rotation and translation

    Non-invertible draws, or draws that send a key-point or box corner
    behind the projection plane, are resampled; after ``max_resample``
    failures the perspective part is dropped.
    """
    corners = _corners(bbox)
    center = corners.mean(axis=0)
    extent = np.array(bbox[2:], dtype=np.float64)
    probe = np.vstack([points, corners])
    for attempt in range(aug.max_resample):
        angle = rng.uniform(-aug.rotation, aug.rotation)
        scale = float(np.exp(rng.uniform(np.log(aug.scale_min), np.log(aug.scale_max))))
        shift = rng.uniform(-aug.translation, aug.translation, size=2)
        jitter = rng.uniform(-aug.perspective, aug.perspective, size=(4, 2)) * extent
        similarity = _similarity(center, angle, scale, shift)
        if aug.perspective > 0:
            perspective = cv2.getPerspectiveTransform(
                corners.astype(np.float32), (corners + jitter).astype(np.float32)
            ).astype(np.float64)
            homography = similarity @ perspective
        else:
            homography = similarity
        if _is_valid(homography, probe):
            return homography
        logger.debug("homography_resampled", attempt=attempt)
    logger.warning("homography_fallback", attempts=aug.max_resample)
    return similarity


def augment(obj: ObjectInstance, aug: AugmentationParams, seed: int,
            margin: float = 1.0) -> ObjectInstance:
    """
    Warp an object through a random homography and perturb its key-points

    Descriptors get Gaussian noise and are re-normalised; key-points are
    dropped independently (and optionally by a rectangular occluder), never
    leaving fewer than one. The identity is kept.
    """
    rng = np.random.default_rng(seed)
    positions = obj.positions()
    descriptors = obj.descriptors()
    m = positions.shape[0]

    homography = sample_homography(rng, obj.bbox, aug, positions)
    keep = rng.random(m) >= aug.dropout
    deformation = rng.standard_normal((m, 2))
    noisy = noisy_descriptors(descriptors, aug.descriptor_noise, rng)
    occlude = rng.random() < aug.occlusion_prob
    occluder = rng.uniform(0.0, 1.0, size=4)

    if np.array_equal(homography, np.eye(3)):
        warped = positions.copy()
        box_corners = _corners(obj.bbox)
    else:
        warped = warp_points(homography, positions)
        box_corners = warp_points(homography, _corners(obj.bbox))
    if aug.deformation_std > 0:
        warped = warped + deformation * aug.deformation_std * np.array(obj.bbox[2:])

    if occlude:
        x, y, w, h = obj.bbox
        side = occluder[2:] * aug.occlusion_max_fraction * np.array([w, h])
        low = np.array([x, y]) + occluder[:2] * (np.array([w, h]) - side)
        inside = np.all((positions >= low) & (positions <= low + side), axis=1)
        keep &= ~inside
    if not keep.any():
        keep[int(rng.integers(m))] = True

    kept = warped[keep]
    if np.array_equal(homography, np.eye(3)) and aug.deformation_std == 0:
        bbox = obj.bbox
    else:
        bbox = _union_box(tight_bbox(box_corners, 0.0), tight_bbox(kept, margin))
    return ObjectInstance(
        object_id=obj.object_id,
        frame_id=obj.frame_id,
        bbox=bbox,
        keypoints=[
            KeyPoint(position=(float(p[0]), float(p[1])), descriptor=d)
            for p, d in zip(kept, noisy[keep])
        ],
        sequence_id=obj.sequence_id,
    )


def _union_box(a, b) -> Tuple[float, float, float, float]:
    x0, y0 = min(a[0], b[0]), min(a[1], b[1])
    x1, y1 = max(a[0] + a[2], b[0] + b[2]), max(a[1] + a[3], b[1] + b[3])
    return (x0, y0, x1 - x0, y1 - y0)


def make_pair_batch(n_pos: int, n_neg: int, aug: AugmentationParams, seed: int,
                    config: Optional[SynthConfig] = None, n_p: int = 256) -> List[LabeledPair]:
    """
    Labelled pairs: positives are (object, augmented copy), negatives pair
    objects of two distinct identities with the second one augmented
    """
    if n_pos < 0 or n_neg < 0 or n_pos + n_neg < 1:
        raise ContractViolation(f"need at least one pair, got n_pos={n_pos} n_neg={n_neg}")
    config = config or SynthConfig()
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pos):
        obj = generate_object(int(rng.integers(SEED_SPACE)), config, n_p)
        partner = augment(obj, aug, int(rng.integers(SEED_SPACE)), config.bbox_margin)
        pairs.append(LabeledPair(first=obj, second=partner, positive=True))
    for _ in range(n_neg):
        first_seed = int(rng.integers(SEED_SPACE))
        second_seed = int(rng.integers(SEED_SPACE))
        while second_seed == first_seed:
            second_seed = int(rng.integers(SEED_SPACE))
        first = generate_object(first_seed, config, n_p)
        second = augment(generate_object(second_seed, config, n_p), aug,
                         int(rng.integers(SEED_SPACE)), config.bbox_margin)
        pairs.append(LabeledPair(first=first, second=second, positive=False))
    return pairs


def generate_sequence(index: int, config: SequenceConfig, synth: SynthConfig, n_p: int,
                      seed: int) -> List[Frame]:
    """
    Objects followed over consecutive frames

    Pose drifts smoothly (rotation, scale and translation per frame) and
    every key-point is visible for a periodic window with a random phase, so
    both key-point overlap and pose similarity fall as the frame gap grows.
    """
    rng = np.random.default_rng(derive_seed(seed, index))
    sequence_id = f"seq-{index}"
    specs = [object_spec(int(rng.integers(SEED_SPACE)), synth, n_p)
             for _ in range(config.objects_per_frame)]
    tracks = []
    for spec in specs:
        tracks.append({
            "rotation": rng.uniform(-config.rotation_rate, config.rotation_rate),
            "log_scale": rng.uniform(-config.scale_rate, config.scale_rate),
            "velocity": rng.uniform(-config.translation_rate, config.translation_rate, size=2),
            "phase": rng.uniform(0.0, config.visibility_period, size=spec.num_keypoints),
        })

    window = config.visible_fraction * config.visibility_period
    frames: List[Frame] = []
    for t in range(config.num_frames):
        frame = []
        for k, (spec, track) in enumerate(zip(specs, tracks)):
            cycle = np.mod(t + track["phase"], config.visibility_period)
            visible = cycle < window
            if not visible.any():
                visible[int(np.argmin(cycle))] = True
            pose = _similarity(spec.center(), track["rotation"] * t,
                               float(np.exp(track["log_scale"] * t)), track["velocity"] * t)
            positions = spec.positions() @ pose[:2, :2].T + pose[:2, 2]
            frame_rng = np.random.default_rng(derive_seed(seed, index, t, k))
            descriptors = noisy_descriptors(spec.prototypes, config.descriptor_noise, frame_rng)
            frame.append(build_object(spec.object_id, t, positions[visible], descriptors[visible],
                                      synth.bbox_margin, sequence_id))
        frames.append(frame)
    return frames


def generate_reloc_layout(config: RelocConfig, synth: SynthConfig, aug: AugmentationParams,
                          n_p: int, seed: int) -> Tuple[List[Frame], List[Frame]]:
    """
    Database places with distinct objects, and queries revisiting some of them

    A query is an augmented copy of one place, so its true database frame is
    the one sharing its object identities. Query frames are numbered after
    the last place, so no query frame id repeats a database frame id.

    Returns:
        tuple: (database frames, query frames)
    """
    rng = np.random.default_rng(derive_seed(seed, 7))
    database: List[Frame] = []
    for place in range(config.num_places):
        database.append([
            generate_object(int(rng.integers(SEED_SPACE)), synth, n_p,
                            frame_id=place, sequence_id="database")
            for _ in range(config.objects_per_place)
        ])
    chosen = rng.choice(config.num_places, size=config.num_queries, replace=False)
    queries: List[Frame] = []
    for query_id, place in enumerate(chosen):
        queries.append([
            augment(obj, aug, int(rng.integers(SEED_SPACE)), synth.bbox_margin)
            .model_copy(update={"frame_id": config.num_places + query_id, "sequence_id": "query"})
            for obj in database[int(place)]
        ])
    return database, queries
