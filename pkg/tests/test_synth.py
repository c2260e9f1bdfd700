import pytest
import numpy as np

from app.data.pairs import PoolPairSource, SyntheticPairSource, batch_split
from app.data.synth import (
    augment, derive_seed, generate_object, generate_reloc_layout, generate_sequence, make_pair_batch,
    object_spec,
)
from app.models.encoder import normalize_position
from app.schemas.config import AugmentationParams, RelocConfig, RunConfig, SequenceConfig, SynthConfig
from app.schemas.keypoints import BBOX_TOLERANCE
from app.utils.errors import ContractViolation


def inside_box(obj) -> bool:
    x, y, w, h = obj.bbox
    positions = obj.positions()
    return bool(np.all(positions[:, 0] >= x - BBOX_TOLERANCE) and np.all(positions[:, 0] <= x + w + BBOX_TOLERANCE)
                and np.all(positions[:, 1] >= y - BBOX_TOLERANCE) and np.all(positions[:, 1] <= y + h + BBOX_TOLERANCE))


class TestGenerateObject:
    """Seeded synthetic objects"""

    def test_deterministic(self):
        assert generate_object(42) == generate_object(42)

    def test_keypoint_bounds(self):
        config = SynthConfig()
        for seed in range(1000):
            m = object_spec(seed, config, 4).num_keypoints
            assert config.min_keypoints <= m <= config.max_keypoints

    def test_prototypes_nearly_orthogonal(self):
        config = SynthConfig()
        cosines = []
        for seed in range(100):
            a = object_spec(2 * seed, config, 256).prototypes
            b = object_spec(2 * seed + 1, config, 256).prototypes
            cosines.append(float(np.mean(a @ b.T)))
        assert abs(np.mean(cosines)) < 0.1

    def test_descriptors_unit_norm_and_tight_box(self):
        obj = generate_object(7)
        np.testing.assert_allclose(np.linalg.norm(obj.descriptors(), axis=1), 1.0)
        positions = obj.positions()
        x, y, w, h = obj.bbox
        assert x == pytest.approx(positions[:, 0].min() - 1.0)
        assert x + w == pytest.approx(positions[:, 0].max() + 1.0)
        assert y + h == pytest.approx(positions[:, 1].max() + 1.0)


class TestAugment:
    """Homography augmentation"""

    def test_identity(self, sample_object):
        assert augment(sample_object, AugmentationParams.identity(), seed=3) == sample_object

    def test_pure_translation(self, sample_object):
        aug = AugmentationParams.identity().model_copy(update={"translation": 25.0})
        moved = augment(sample_object, aug, seed=8)
        assert moved.object_id == sample_object.object_id
        np.testing.assert_allclose(
            normalize_position(moved.positions(), moved.bbox),
            normalize_position(sample_object.positions(), sample_object.bbox),
            atol=1e-6,
        )

    def test_dropout_floor(self, tiny_synth):
        obj = generate_object(1, tiny_synth.model_copy(update={"min_keypoints": 10, "max_keypoints": 10}), 8)
        aug = AugmentationParams(dropout=0.99)
        for seed in range(50):
            assert augment(obj, aug, seed).num_keypoints >= 1

    def test_default_augmentation_valid(self):
        aug = AugmentationParams(deformation_std=0.02, occlusion_prob=0.5)
        for seed in range(30):
            obj = generate_object(seed)
            out = augment(obj, aug, seed + 100)
            assert out.object_id == obj.object_id
            assert np.all(np.isfinite(out.positions()))
            assert inside_box(out)
            np.testing.assert_allclose(np.linalg.norm(out.descriptors(), axis=1), 1.0)

    def test_deterministic(self, sample_object):
        aug = AugmentationParams()
        assert augment(sample_object, aug, 5) == augment(sample_object, aug, 5)


class TestPairBatches:
    def test_single_positive(self, tiny_synth):
        (pair,) = make_pair_batch(1, 0, AugmentationParams(), seed=1, config=tiny_synth, n_p=8)
        assert pair.positive and pair.first.object_id == pair.second.object_id

    def test_single_negative(self, tiny_synth):
        (pair,) = make_pair_batch(0, 1, AugmentationParams(), seed=1, config=tiny_synth, n_p=8)
        assert not pair.positive and pair.first.object_id != pair.second.object_id

    def test_balanced_batch(self, tiny_synth):
        batch = make_pair_batch(8, 8, AugmentationParams(), seed=4, config=tiny_synth, n_p=8)
        assert len(batch) == 16
        assert sum(p.positive for p in batch) == 8

    def test_deterministic(self, tiny_synth):
        first = make_pair_batch(2, 2, AugmentationParams(), seed=6, config=tiny_synth, n_p=8)
        second = make_pair_batch(2, 2, AugmentationParams(), seed=6, config=tiny_synth, n_p=8)
        assert first == second

    def test_empty_rejected(self):
        with pytest.raises(ContractViolation):
            make_pair_batch(0, 0, AugmentationParams(), seed=1)

    def test_batch_split(self):
        assert batch_split(16, 0.5) == (8, 8)
        assert batch_split(5, 1.0) == (5, 0)

    def test_synthetic_source_per_step(self, tiny_run_config):
        source = SyntheticPairSource(tiny_run_config)
        assert source.batch(3) == source.batch(3)
        assert source.batch(3) != source.batch(4)
        assert len(source.batch(0)) == tiny_run_config.train.batch_size

    def test_pool_source(self, tiny_run_config, tiny_synth):
        pool = [generate_object(seed, tiny_synth, 8, frame_id=f) for seed in range(3) for f in range(2)]
        source = PoolPairSource(pool, tiny_run_config)
        batch = source.batch(0)
        assert len(batch) == tiny_run_config.train.batch_size
        for pair in batch:
            assert pair.positive == (pair.first.object_id == pair.second.object_id)

    def test_pool_needs_two_identities(self, tiny_run_config, sample_object):
        with pytest.raises(ContractViolation):
            PoolPairSource([sample_object], tiny_run_config)


class TestSequences:
    def test_static_sequence_is_constant(self, tiny_synth):
        config = SequenceConfig(num_frames=5, objects_per_frame=2, rotation_rate=0.0, scale_rate=0.0,
                                translation_rate=0.0, visible_fraction=1.0, descriptor_noise=0.0)
        frames = generate_sequence(0, config, tiny_synth, 8, seed=3)
        assert len(frames) == 5
        for frame in frames[1:]:
            for obj, ref in zip(frame, frames[0]):
                assert obj.object_id == ref.object_id
                assert obj.keypoints == ref.keypoints

    def test_identities_and_frame_ids(self, tiny_synth):
        frames = generate_sequence(1, SequenceConfig(num_frames=8, objects_per_frame=3), tiny_synth, 8, seed=3)
        ids = [obj.object_id for obj in frames[0]]
        assert len(set(ids)) == 3
        for t, frame in enumerate(frames):
            assert [obj.object_id for obj in frame] == ids
            assert all(obj.frame_id == t and obj.sequence_id == "seq-1" for obj in frame)

    def test_reloc_layout(self, tiny_synth):
        config = RelocConfig(num_places=6, objects_per_place=2, num_queries=3)
        database, queries = generate_reloc_layout(config, tiny_synth, AugmentationParams(), 8, seed=2)
        assert len(database) == 6 and len(queries) == 3
        places = {obj.object_id: obj.frame_id for frame in database for obj in frame}
        for query_id, frame in enumerate(queries):
            assert {obj.frame_id for obj in frame} == {6 + query_id}
            assert len({places[obj.object_id] for obj in frame}) == 1

    @pytest.mark.parametrize("seed", range(12))
    def test_reloc_keys_are_unique(self, tiny_synth, seed):
        config = RelocConfig(num_places=6, objects_per_place=2, num_queries=6)
        database, queries = generate_reloc_layout(config, tiny_synth, AugmentationParams(), 8, seed=seed)
        keys = [(obj.object_id, obj.frame_id) for frame in database + queries for obj in frame]
        assert len(keys) == len(set(keys))

    def test_derive_seed_separates_streams(self):
        assert derive_seed(1, 2) != derive_seed(1, 3)
        assert derive_seed(1, 2) == derive_seed(1, 2)


def test_run_config_round_trip():
    config = RunConfig()
    assert RunConfig.model_validate_json(config.model_dump_json()) == config
