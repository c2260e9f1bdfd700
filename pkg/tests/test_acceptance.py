"""
Desk-scale quality checks on fully trained models; run with --run-slow
"""
import pytest
import numpy as np

from app.cli import main
from app.data.datasets import evaluation_layout, evaluation_objects, evaluation_sequences
from app.evaluation.metrics import evaluate_gaps, evaluate_relocalization
from app.evaluation.stats import dropout_robustness, sparsity_stats, usage_table
from app.models.baseline import MeanPoolEncoder
from app.models.encoder import encode_object
from app.schemas.config import RunConfig
from app.training.trainer import train

pytestmark = pytest.mark.slow

SEED = 2024


@pytest.fixture(scope="module")
def config():
    return RunConfig(seed=SEED, train={"steps": 2000, "checkpoint_every": 0},
                     reloc={"num_places": 50, "num_queries": 10},
                     eval={"gaps": [1, 5, 10], "stats_objects": 100})


@pytest.fixture(scope="module")
def trained(config):
    return train(config)


@pytest.fixture(scope="module")
def trained_without_aux(config):
    update = {"train": config.train.model_copy(update={"ablate_aux_losses": True})}
    return train(config.model_copy(update=update))


def test_positive_similarity_improves(config):
    short = config.model_copy(update={"train": config.train.model_copy(update={"steps": 201})})
    trace = train(short).trace
    assert trace[200].pos_similarity > trace[0].pos_similarity


def test_permutation_invariance_at_full_size(trained, config):
    rng = np.random.default_rng(0)
    for obj in evaluation_objects(config, 100):
        reference = encode_object(obj, trained.params)
        for _ in range(5):
            order = rng.permutation(obj.num_keypoints).tolist()
            assert np.max(np.abs(encode_object(obj.subset(order), trained.params) - reference)) < 1e-9


def test_trace_is_finite(trained):
    for row in trained.trace:
        assert all(np.isfinite([row.positive, row.negative, row.sparse, row.dense, row.total]))


def test_sparsity_losses_sparsify(trained, trained_without_aux, config):
    objects = evaluation_objects(config, config.eval.stats_objects)
    with_losses = sparsity_stats(objects, trained.params).mean_keypoint_fraction
    without = sparsity_stats(objects, trained_without_aux.params).mean_keypoint_fraction
    assert with_losses < without
    assert with_losses < 0.5


def test_usage_rate_non_decreasing(trained, config):
    rows = usage_table(evaluation_objects(config, 100), trained.params, [1, 10, 100])
    rates = [row.usage_rate for row in rows]
    assert rates == sorted(rates)


def test_matching_quality(trained, config):
    sequences = evaluation_sequences(config)
    reports = {r.gap: r for r in evaluate_gaps(sequences, [1, 5, 10], [0.5], trained.params)}
    baseline = {r.gap: r for r in evaluate_gaps(sequences, [10], [0.5], MeanPoolEncoder(config.model.n_p))}
    area = {gap: report.curve.area for gap, report in reports.items()}
    assert area[1] >= 0.90
    assert area[1] >= area[5] >= area[10] - 0.02
    assert area[10] >= baseline[10].curve.area + 0.05


def test_robust_to_keypoint_removal(trained, config):
    report = dropout_robustness(evaluation_objects(config, 100), trained.params, 0.2, seed=SEED)
    assert report.all_above


def test_relocalization_ranking(trained, config):
    database, queries = evaluation_layout(config)
    report = evaluate_relocalization(database, queries, trained.params, 0.5, 0.5, top_n=5)
    assert report.recall_curve.at(1) >= 0.8
    assert report.recall_curve.at(5) == 1.0


def test_pipeline_is_byte_identical(tmp_path_factory):
    outputs = []
    for run in ("first", "second"):
        root = tmp_path_factory.mktemp(run)
        common = ["--seed", str(SEED), "--steps", "50", "--log-dir", str(root / "logs")]
        data, ckpt, store = root / "seq.jsonl", root / "model.ckpt", root / "seq.airc"
        assert main(["gen-data", "--out", str(data)] + common) == 0
        assert main(["train", "--out", str(ckpt)] + common) == 0
        assert main(["encode", "--checkpoint", str(ckpt), "--data", str(data), "--out", str(store)] + common) == 0
        assert main(["eval", "--mode", "match", "--checkpoint", str(ckpt), "--data", str(data),
                     "--out", str(root / "reports")] + common) == 0
        outputs.append([store.read_bytes(), ckpt.read_bytes(),
                        (root / "reports" / "match.csv").read_bytes(),
                        (root / "reports" / "match.json").read_bytes()])
    assert outputs[0] == outputs[1]
