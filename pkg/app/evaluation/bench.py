"""
Per-stage runtime of the encoder
"""
import time
from typing import Callable, List, Sequence

import numpy as np
import psutil
import structlog

from app.data.synth import generate_object
from app.models.encoder import (
    aggregate_descriptor, encode_object, node_embeddings, project_descriptor, project_nodes, propagate,
    sparsity_forward,
)
from app.models.params import ModelParams
from app.schemas.config import SynthConfig
from app.schemas.reports import BenchRow
from app.utils.errors import ContractViolation
from app.utils.tensor import tsum

logger = structlog.get_logger(__name__)


def _median_ms(fn: Callable[[], object], repeats: int) -> float:
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        timings.append(time.perf_counter() - start)
    return float(np.median(timings) * 1000.0)


def runtime_bench(params: ModelParams, object_sizes: Sequence[int], repeats: int = 20, seed: int = 0,
                  synth: SynthConfig = None) -> List[BenchRow]:
    """
    Median wall-clock time of node encoding, graph propagation, the sparsity
    layer, aggregation and the whole encoder for objects of each key-point count
    """
    if repeats < 1:
        raise ContractViolation(f"repeats must be positive, got {repeats}")
    synth = synth or SynthConfig()
    process = psutil.Process()
    rows = []
    for size in object_sizes:
        config = synth.model_copy(update={"min_keypoints": size, "max_keypoints": size})
        obj = generate_object(seed + size, config, params.config.n_p)
        nodes = node_embeddings(obj, params)
        propagated = propagate(nodes, params)
        if params.config.sparsity:
            location, content = sparsity_forward(propagated, params)
            sparsity_stage = lambda: sparsity_forward(propagated, params)  # noqa: E731
            aggregation_stage = lambda: aggregate_descriptor(location, content, params)  # noqa: E731
        else:
            projected = project_nodes(propagated, params)
            sparsity_stage = lambda: project_nodes(propagated, params)  # noqa: E731
            aggregation_stage = lambda: project_descriptor(  # noqa: E731
                tsum(projected, axis=0, keepdims=True), params
            )
        row = BenchRow(
            keypoints=size,
            node_encoding_ms=_median_ms(lambda: node_embeddings(obj, params), repeats),
            graph_ms=_median_ms(lambda: propagate(nodes, params), repeats),
            sparsity_ms=_median_ms(sparsity_stage, repeats),
            aggregation_ms=_median_ms(aggregation_stage, repeats),
            overall_ms=_median_ms(lambda: encode_object(obj, params), repeats),
            rss_mb=process.memory_info().rss / (1024 * 1024),
        )
        logger.info("bench_row", **row.model_dump())
        rows.append(row)
    return rows
