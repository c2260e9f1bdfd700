"""
Command-line interface: data generation, training, encoding, evaluation,
benchmarking and the HTTP service.

Every command reads one RunConfig (``--config``) with targeted overrides and
exits with 0 on success, 2 for usage errors, 3 for I/O errors, 4 for contract
violations, 5 for malformed data and 6 when training diverges.
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

import structlog
from pydantic import ValidationError

from app.config import settings, setup_logging
from app.data.datasets import evaluation_layout, evaluation_objects, evaluation_sequences, flatten
from app.data.keypoint_io import group_frames, read_keypoints, write_keypoints
from app.data.pairs import EVAL_STREAM, PoolPairSource
from app.data.synth import derive_seed
from app.evaluation.bench import runtime_bench
from app.evaluation.metrics import evaluate_gaps, evaluate_relocalization, pooled_gap_reports
from app.evaluation.stats import dropout_robustness, sparsity_stats, usage_table
from app.models.baseline import MeanPoolEncoder
from app.models.database import DescriptorDatabase
from app.models.encoder import ObjectEncoder
from app.models.params import ModelParams
from app.schemas.config import RunConfig
from app.schemas.descriptors import DescriptorRecord
from app.schemas.reports import CurveRow, HistogramRow, MatchRow, RecallRow
from app.training.trainer import Trainer, write_trace
from app.utils.errors import ContractViolation, ObjcodeError, StorageError, UsageError
from app.utils.report_files import write_csv, write_json

logger = structlog.get_logger(__name__)

EVAL_MODES = ("match", "reloc", "sparsity", "usage", "bench", "robustness")


def parse_override(text: str):
    """Split ``section.field=value``; the value is JSON, or a plain string when it does not parse"""
    if "=" not in text:
        raise UsageError(f"override {text!r} is not of the form section.field=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_override(data: Dict, path: List[str], value):
    node = data
    for part in path[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise UsageError(f"cannot set {'.'.join(path)}: {part} is not a section")
        node = child
    node[path[-1]] = value


def load_config(path: Optional[str] = None, seed: Optional[int] = None, steps: Optional[int] = None,
                overrides: Optional[List[str]] = None) -> RunConfig:
    """
    Build the run configuration from a JSON file plus overrides

    Overrides are applied to the raw document before validation, so unknown
    keys are rejected the same way as in the file.
    """
    data: Dict = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise StorageError(path, f"cannot read config: {str(e)}")
        except json.JSONDecodeError as e:
            raise UsageError(f"{path}: invalid JSON: {str(e)}")
    for text in overrides or []:
        apply_override(data, *parse_override(text))
    if seed is not None:
        data["seed"] = seed
    if steps is not None:
        apply_override(data, ["train", "steps"], steps)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise UsageError(f"invalid configuration: {str(e)}")


def _config(args) -> RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "ablate_sparsity", False):
        overrides.append("train.ablate_sparsity=true")
    if getattr(args, "ablate_aux_losses", False):
        overrides.append("train.ablate_aux_losses=true")
    return load_config(args.config, args.seed, args.steps, overrides)


def cmd_init_config(args) -> int:
    config = _config(args)
    out = Path(args.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(config.model_dump_json(indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise StorageError(out, f"cannot write config: {str(e)}")
    logger.info("config_written", path=str(out))
    return 0


def cmd_gen_data(args) -> int:
    """
    Write synthetic evaluation data as a key-point file
    """
    config = _config(args)
    if args.kind == "sequences":
        objects = flatten(frame for sequence in evaluation_sequences(config) for frame in sequence)
    elif args.kind == "reloc":
        database, queries = evaluation_layout(config)
        objects = flatten(database) + flatten(queries)
    else:
        objects = evaluation_objects(config, args.count)
    write_keypoints(args.out, objects, config.model.n_p)
    return 0


def _check_width(data_n_p: int, model_n_p: int, what: str):
    if data_n_p != model_n_p:
        raise ContractViolation(f"{what} has descriptor width {data_n_p}, model expects {model_n_p}")


def cmd_train(args) -> int:
    """
    Train the encoder and write the checkpoint plus the loss trace
    """
    config = _config(args)
    source = None
    if args.data:
        n_p, objects = read_keypoints(args.data)
        _check_width(n_p, config.model.n_p, args.data)
        source = PoolPairSource(objects, config)
    trainer = Trainer(config, source=source, checkpoint_dir=args.checkpoint_dir)
    result = trainer.run()
    out = Path(args.out)
    result.params.save(out)
    write_trace(args.trace or out.with_suffix(".trace.csv"), result.trace)
    return 0


def _load_model(args):
    if getattr(args, "baseline", False):
        return None
    if not args.checkpoint:
        raise UsageError("--checkpoint is required (or --baseline where supported)")
    return ModelParams.load(args.checkpoint)


def cmd_encode(args) -> int:
    """
    Encode every object of a key-point file into a descriptor store
    """
    config = _config(args)
    params = ModelParams.load(args.checkpoint)
    n_p, objects = read_keypoints(args.data)
    _check_width(n_p, params.config.n_p, args.data)
    descriptors = ObjectEncoder(params, config.eval.encode_chunk).describe(objects)
    database = DescriptorDatabase(n_o=params.config.n_o)
    database.add_many(
        DescriptorRecord(object_id=obj.object_id, frame_id=obj.frame_id, sequence_id=obj.sequence_id,
                         descriptor=descriptor)
        for obj, descriptor in zip(objects, descriptors)
    )
    database.save_store(args.out)
    return 0


def _data_frames(args, config: RunConfig, n_p: int):
    data_n_p, objects = read_keypoints(args.data)
    _check_width(data_n_p, n_p, args.data)
    return group_frames(objects), objects


def _eval_match(args, config: RunConfig, model, out: Path):
    thresholds = config.eval.sim_thresholds
    if args.store:
        sequences = DescriptorDatabase.load_store(args.store).sequences()
        reports = pooled_gap_reports(list(sequences.values()), config.eval.gaps, thresholds,
                                     config.eval.mutual_nearest)
    else:
        encoder = model if model is not None else MeanPoolEncoder(config.model.n_p)
        n_p = config.model.n_p if model is None else model.config.n_p
        if args.data:
            sequences = list(_data_frames(args, config, n_p)[0].values())
        else:
            sequences = evaluation_sequences(config)
        reports = evaluate_gaps(sequences, config.eval.gaps, thresholds, encoder,
                                config.eval.mutual_nearest, config.eval.encode_chunk)
    write_csv(out / "match.csv", [MatchRow.from_report(r) for r in reports])
    write_csv(out / "match_curves.csv", [
        CurveRow(gap=r.gap, sim_threshold=r.sim_threshold, threshold=p.threshold,
                 precision=p.precision, recall=p.recall)
        for r in reports if r.curve for p in r.curve.points
    ])
    write_json(out / "match.json", [MatchRow.from_report(r) for r in reports])


def _eval_reloc(args, config: RunConfig, model, out: Path):
    encoder = model if model is not None else MeanPoolEncoder(config.model.n_p)
    if args.data:
        sequences, _ = _data_frames(args, config, config.model.n_p if model is None else model.config.n_p)
        if "database" not in sequences or "query" not in sequences:
            raise UsageError("reloc mode needs a key-point file with 'database' and 'query' sequences")
        database, queries = sequences["database"], sequences["query"]
    else:
        database, queries = evaluation_layout(config)
    report = evaluate_relocalization(database, queries, encoder, config.eval.sim_thresholds[0],
                                     config.eval.accept_threshold, config.eval.top_n,
                                     config.eval.encode_chunk)
    curve = report.recall_curve
    write_csv(out / "reloc_recall.csv", [RecallRow(n=n, recall=r) for n, r in zip(curve.n_values, curve.recall)])
    write_json(out / "reloc.json", report)


def _objects_for(args, config: RunConfig, params: ModelParams, count: int):
    if args.data:
        return _data_frames(args, config, params.config.n_p)[1][:count]
    return evaluation_objects(config, count)


def _eval_sparsity(args, config: RunConfig, params: ModelParams, out: Path):
    objects = _objects_for(args, config, params, config.eval.stats_objects)
    report = sparsity_stats(objects, params, config.eval.histogram_bin_width, config.eval.encode_chunk)
    edges = report.bin_edges
    write_csv(out / "sparsity_histogram.csv", [
        HistogramRow(bin_start=edges[i], bin_end=edges[i + 1], keypoints=report.keypoint_histogram[i],
                     objects=report.object_histogram[i])
        for i in range(len(edges) - 1)
    ])
    write_json(out / "sparsity.json", report)


def _eval_usage(args, config: RunConfig, params: ModelParams, out: Path):
    objects = _objects_for(args, config, params, max(config.eval.usage_sizes))
    sizes = [n for n in config.eval.usage_sizes if n <= len(objects)]
    rows = usage_table(objects, params, sizes, config.eval.encode_chunk)
    write_csv(out / "usage.csv", rows)
    write_json(out / "usage.json", rows)


def _eval_bench(args, config: RunConfig, params: ModelParams, out: Path):
    rows = runtime_bench(params, config.eval.bench_sizes, config.eval.bench_repeats, config.seed, config.synth)
    write_csv(out / "bench.csv", rows)
    write_json(out / "bench.json", rows)


def _eval_robustness(args, config: RunConfig, model, out: Path):
    encoder = model if model is not None else MeanPoolEncoder(config.model.n_p)
    if args.data:
        n_p = config.model.n_p if model is None else model.config.n_p
        objects = _data_frames(args, config, n_p)[1][:config.eval.robustness_objects]
    else:
        objects = evaluation_objects(config, config.eval.robustness_objects)
    report = dropout_robustness(objects, encoder, config.eval.robustness_drop,
                                derive_seed(config.seed, EVAL_STREAM, 9), config.eval.encode_chunk)
    write_json(out / "robustness.json", report)


def cmd_eval(args) -> int:
    """
    Run one evaluation mode and write CSV plus JSON reports into --out
    """
    config = _config(args)
    if args.store and args.mode != "match":
        raise UsageError(f"--store only applies to match mode, not {args.mode}")
    if args.store and args.data:
        raise UsageError("give either --store or --data, not both")
    if args.baseline and args.mode in ("sparsity", "usage", "bench"):
        raise UsageError(f"{args.mode} mode needs a trained checkpoint, not the baseline")
    model = None if args.store else _load_model(args)
    out = Path(args.out)
    handlers = {
        "match": _eval_match,
        "reloc": _eval_reloc,
        "sparsity": _eval_sparsity,
        "usage": _eval_usage,
        "bench": _eval_bench,
        "robustness": _eval_robustness,
    }
    handlers[args.mode](args, config, model, out)
    logger.info("evaluation_written", mode=args.mode, out=str(out))
    return 0


def cmd_bench(args) -> int:
    args.mode, args.store, args.data, args.baseline = "bench", None, None, False
    return cmd_eval(args)


def cmd_serve(args) -> int:
    import uvicorn

    from app.main import create_app

    params = ModelParams.load(args.checkpoint) if args.checkpoint else None
    uvicorn.run(create_app(params), host=args.host or settings.HOST, port=args.port or settings.PORT)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON file")
    common.add_argument("--seed", type=int, help="Root seed override")
    common.add_argument("--steps", type=int, help="Training steps override")
    common.add_argument("--set", action="append", metavar="SECTION.FIELD=VALUE",
                        help="Override one config field; repeatable")
    common.add_argument("--log-level", default=None, help="Log level (default from settings)")
    common.add_argument("--log-dir", default=None, help="Directory of app.log (default from settings)")

    parser = argparse.ArgumentParser(prog="objcode", description=__doc__.strip().splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("init-config", parents=[common], help="Write the effective configuration")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_init_config)

    p = commands.add_parser("gen-data", parents=[common], help="Generate synthetic key-point data")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("sequences", "reloc", "objects"), default="sequences")
    p.add_argument("--count", type=int, default=100, help="Objects for --kind objects")
    p.set_defaults(handler=cmd_gen_data)

    p = commands.add_parser("train", parents=[common], help="Train the encoder")
    p.add_argument("--data", help="Key-point file to draw pairs from; synthetic pairs when omitted")
    p.add_argument("--out", default="model.ckpt", help="Final checkpoint")
    p.add_argument("--trace", help="Loss trace CSV (default: next to the checkpoint)")
    p.add_argument("--checkpoint-dir", help="Directory for periodic checkpoints")
    p.add_argument("--ablate-sparsity", action="store_true", help="Fully connected layer instead of sparsity")
    p.add_argument("--ablate-aux-losses", action="store_true", help="Drop the sparse and dense losses")
    p.set_defaults(handler=cmd_train)

    p = commands.add_parser("encode", parents=[common], help="Encode a key-point file into a store")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_encode)

    p = commands.add_parser("eval", parents=[common], help="Evaluate a model")
    p.add_argument("--mode", choices=EVAL_MODES, required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", action="store_true", help="Use the mean-pooling baseline encoder")
    p.add_argument("--data", help="Key-point file; generated from the config when omitted")
    p.add_argument("--store", help="Descriptor store (match mode only)")
    p.add_argument("--out", required=True, help="Report directory")
    p.set_defaults(handler=cmd_eval)

    p = commands.add_parser("bench", parents=[common], help="Per-stage runtime benchmark")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="Report directory")
    p.set_defaults(handler=cmd_bench)

    p = commands.add_parser("serve", parents=[common], help="Run the HTTP service")
    p.add_argument("--checkpoint")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level or settings.LOG_LEVEL, args.log_dir or settings.LOG_DIR)
    try:
        return args.handler(args)
    except ObjcodeError as e:
        logger.error("command_failed", command=args.command, error=str(e), exit_code=e.exit_code)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception("command_crashed", command=args.command)
        print(f"error: {e}", file=sys.stderr)
        return 1
