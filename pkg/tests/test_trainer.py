import csv

import pytest
import numpy as np

from app.data.pairs import PoolPairSource
from app.data.synth import generate_object
from app.training.trainer import Trainer, initial_params, train, write_trace
from app.utils.errors import ContractViolation, TrainingDiverged


def assert_same_params(a, b):
    assert list(a) == list(b)
    for name in a:
        np.testing.assert_array_equal(a[name].data, b[name].data, err_msg=name)


def with_train(config, **update):
    return config.model_copy(update={"train": config.train.model_copy(update=update)})


class TestTrainer:
    """Training loop behaviour"""

    def test_zero_steps_returns_initial_params(self, tiny_run_config):
        result = train(with_train(tiny_run_config, steps=0))
        assert result.trace == []
        assert_same_params(result.params, initial_params(tiny_run_config))

    def test_steps_change_params(self, tiny_run_config):
        result = train(tiny_run_config)
        assert len(result.trace) == 3
        assert [row.step for row in result.trace] == [0, 1, 2]
        before = initial_params(tiny_run_config)
        assert any(not np.array_equal(before[n].data, result.params[n].data) for n in before)

    def test_deterministic(self, tiny_run_config):
        first = train(tiny_run_config)
        second = train(tiny_run_config)
        assert first.trace == second.trace
        assert_same_params(first.params, second.params)

    def test_prefetch_does_not_change_result(self, tiny_run_config):
        plain = train(tiny_run_config)
        prefetched = train(with_train(tiny_run_config, prefetch=2))
        assert plain.trace == prefetched.trace
        assert_same_params(plain.params, prefetched.params)

    def test_trace_components(self, tiny_run_config):
        weights = tiny_run_config.train.weights
        for row in train(tiny_run_config).trace:
            expected = (weights.w_neg * row.negative + weights.w_pos * row.positive
                        + weights.w_sparse * row.sparse + weights.w_dense * row.dense)
            assert row.total == pytest.approx(expected)
            assert -1.0 <= row.pos_similarity <= 1.0
            assert -1.0 <= row.neg_similarity <= 1.0

    def test_progress_callback(self, tiny_run_config):
        seen = []
        train(tiny_run_config, progress=seen.append)
        assert [row.step for row in seen] == [0, 1, 2]

    def test_stop_request(self, tiny_run_config):
        trainer = Trainer(with_train(tiny_run_config, steps=10))
        trainer.stop_requested.set()
        assert len(trainer.run().trace) == 1

    def test_checkpoints(self, tiny_run_config, temp_dir):
        config = with_train(tiny_run_config, steps=4, checkpoint_every=2)
        result = train(config, checkpoint_dir=temp_dir)
        assert [p.name for p in result.checkpoints] == ["step-000002.ckpt", "step-000004.ckpt"]
        assert all(p.exists() for p in result.checkpoints)

    def test_divergence(self, tiny_run_config):
        params = initial_params(tiny_run_config)
        params["output.weight"].data[:] = np.nan
        with pytest.raises(TrainingDiverged) as exc_info:
            Trainer(tiny_run_config, params=params).run()
        assert exc_info.value.step == 0
        assert exc_info.value.component in ("positive", "negative", "sparse", "dense", "total")
        assert exc_info.value.exit_code == 6

    def test_write_trace(self, tiny_run_config, temp_dir):
        path = write_trace(temp_dir / "trace.csv", train(tiny_run_config).trace)
        with path.open() as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == 3
        assert list(rows[0]) == ["step", "positive", "negative", "sparse", "dense", "total",
                                 "pos_similarity", "neg_similarity"]

    def test_pool_source(self, tiny_run_config, tiny_synth):
        pool = [generate_object(seed, tiny_synth, 8, frame_id=f) for seed in range(4) for f in range(2)]
        result = train(tiny_run_config, source=PoolPairSource(pool, tiny_run_config))
        assert len(result.trace) == 3


class TestAblations:
    def test_sparsity_ablation_structure(self, tiny_run_config):
        result = train(with_train(tiny_run_config, ablate_sparsity=True, steps=1))
        names = list(result.params)
        assert "projection.weight" in names
        assert not any(name.startswith("sparsity.") for name in names)
        assert result.params.config.sparsity is False
        assert result.trace[0].sparse == 0.0 and result.trace[0].dense == 0.0

    def test_sparsity_ablation_rejects_full_params(self, tiny_run_config, tiny_params):
        with pytest.raises(ContractViolation):
            Trainer(with_train(tiny_run_config, ablate_sparsity=True), params=tiny_params)

    def test_aux_loss_ablation(self, tiny_run_config):
        result = train(with_train(tiny_run_config, ablate_aux_losses=True))
        weights = tiny_run_config.train.weights
        for row in result.trace:
            assert row.total == pytest.approx(weights.w_neg * row.negative + weights.w_pos * row.positive)
        assert "sparsity.location.0.weight" in result.params
