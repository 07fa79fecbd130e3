"""
Adaptive-convolution benchmark: fused channel-tiled kernel vs unfold reference

Reports median forward and backward wall time and the peak transient
allocation recorded by the torch profiler for each backend.
"""
import math
import statistics
import time
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import pandas as pd
import torch
from torch.profiler import ProfilerActivity, profile

from featup.core.config import settings
from featup.core.errors import ParameterError
from featup.core.logging import get_logger
from featup.schemas.bench import BenchRecord
from featup.services.jbu import Backend, adaptive_conv
from featup.services.tensor_core import derive_seed
from featup.storage.atomic import PathLike, write_text

logger = get_logger(__name__)

BenchShape = Tuple[int, int, int, int, int]  # B, H, W, C, radius

# Standard comparison shapes (``--shapes table8``)
TABLE8_SHAPES: List[BenchShape] = [
    (1, 14, 14, 2048, 5),
    (1, 512, 512, 3, 5),
    (16, 32, 32, 2048, 5),
    (32, 512, 512, 3, 5),
    (64, 14, 14, 2048, 5),
    (64, 224, 224, 3, 5),
    (64, 64, 64, 16, 5),
    (64, 64, 64, 16, 7),
]

MB = float(1 << 20)


def describe_shape(shape: BenchShape) -> str:
    return " x ".join(str(v) for v in shape)


def parse_shape(text: str) -> BenchShape:
    """Parse ``B,H,W,C,R`` (commas or x separators)"""
    parts = text.replace("x", ",").replace("X", ",").split(",")
    try:
        values = tuple(int(p) for p in parts if p.strip())
    except ValueError as exc:
        raise ParameterError(f"malformed benchmark shape {text!r}, expected B,H,W,C,R") from exc
    if len(values) != 5 or min(values) < 1:
        raise ParameterError(f"malformed benchmark shape {text!r}, expected five positive integers B,H,W,C,R")
    return values  # type: ignore[return-value]


def reference_footprint_mb(shape: BenchShape) -> float:
    """Size of the patch tensor the unfold reference materializes"""
    b, h, w, c, radius = shape
    taps = (2 * radius + 1) ** 2
    return b * c * taps * h * w * 4 / MB


def bench_inputs(shape: BenchShape, seed: int = 0) -> Tuple[torch.Tensor, torch.Tensor]:
    """Seeded features (B, C, H, W) and softmax-normalized kernel (B, D*D, H, W)"""
    b, h, w, c, radius = shape
    taps = (2 * radius + 1) ** 2
    generator = torch.Generator().manual_seed(derive_seed(seed, *shape))
    features = torch.randn(b, c, h, w, generator=generator)
    logits = torch.randn(b, taps, h, w, generator=generator)
    return features, torch.softmax(logits, dim=1)


def peak_allocation_mb(fn: Callable[[], None]) -> float:
    """
    Peak CPU allocation while ``fn`` runs, from profiler memory records

    Each op's own net allocation is charged when it starts and its net release
    when it ends, so buffers an op frees before returning still count.
    """
    with profile(activities=[ProfilerActivity.CPU], profile_memory=True) as prof:
        fn()
    deltas = []
    for evt in prof.events():
        usage = evt.self_cpu_memory_usage
        if usage > 0:
            deltas.append((evt.time_range.start, 0, usage))
        elif usage < 0:
            deltas.append((evt.time_range.end, 1, usage))
    current = peak = 0
    for _, _, usage in sorted(deltas):
        current += usage
        peak = max(peak, current)
    return peak / MB


def _forward_backward(features: torch.Tensor, kernel: torch.Tensor, backend: Backend) -> torch.Tensor:
    x = features.detach().requires_grad_(True)
    k = kernel.detach().requires_grad_(True)
    out = adaptive_conv(x, k, backend)
    out.backward(torch.ones_like(out))
    return out.detach()


def _time_backend(
    features: torch.Tensor,
    kernel: torch.Tensor,
    backend: Backend,
    repeats: int,
) -> Tuple[float, float, torch.Tensor]:
    forward_times, backward_times = [], []
    out = None
    for _ in range(repeats):
        x = features.detach().requires_grad_(True)
        k = kernel.detach().requires_grad_(True)
        start = time.perf_counter()
        out = adaptive_conv(x, k, backend)
        middle = time.perf_counter()
        out.backward(torch.ones_like(out))
        end = time.perf_counter()
        forward_times.append((middle - start) * 1000.0)
        backward_times.append((end - middle) * 1000.0)
    return statistics.median(forward_times), statistics.median(backward_times), out.detach()


def fast_kernel_bench(shape: BenchShape, radius: Optional[int] = None, repeats: int = 3, seed: int = 0) -> List[BenchRecord]:
    """
    Benchmark one shape; returns a fast row and a reference row

    The reference row carries NaN timings when its patch tensor would exceed
    BENCH_MAX_REFERENCE_MB.
    """
    if repeats < 1:
        raise ParameterError(f"repeats must be positive, got {repeats}")
    if radius is not None:
        shape = (*shape[:4], radius)
    features, kernel = bench_inputs(shape, seed)
    label = describe_shape(shape)

    fast_fwd, fast_bwd, fast_out = _time_backend(features, kernel, "fast", repeats)
    fast_peak = peak_allocation_mb(lambda: _forward_backward(features, kernel, "fast"))

    footprint = reference_footprint_mb(shape)
    if footprint > settings.BENCH_MAX_REFERENCE_MB:
        logger.warning("bench_reference_skipped", shape=label, footprint_mb=round(footprint, 1), limit_mb=settings.BENCH_MAX_REFERENCE_MB)
        nan = math.nan
        records = [
            BenchRecord(shape=label, method="fast", forward_ms=fast_fwd, backward_ms=fast_bwd, peak_mb=fast_peak, max_abs_diff=nan),
            BenchRecord(shape=label, method="reference", forward_ms=nan, backward_ms=nan, peak_mb=nan, max_abs_diff=nan),
        ]
    else:
        ref_fwd, ref_bwd, ref_out = _time_backend(features, kernel, "reference", repeats)
        ref_peak = peak_allocation_mb(lambda: _forward_backward(features, kernel, "reference"))
        diff = float((fast_out - ref_out).abs().max())
        records = [
            BenchRecord(shape=label, method="fast", forward_ms=fast_fwd, backward_ms=fast_bwd, peak_mb=fast_peak, max_abs_diff=diff),
            BenchRecord(shape=label, method="reference", forward_ms=ref_fwd, backward_ms=ref_bwd, peak_mb=ref_peak),
        ]
    for record in records:
        logger.info("bench_result", **record.model_dump())
    return records


def run_bench(shapes: Iterable[BenchShape], repeats: int = 3, seed: int = 0) -> List[BenchRecord]:
    records: List[BenchRecord] = []
    for shape in shapes:
        records.extend(fast_kernel_bench(shape, repeats=repeats, seed=seed))
    return records


def bench_frame(records: Sequence[BenchRecord]) -> pd.DataFrame:
    columns = list(BenchRecord.model_fields)
    return pd.DataFrame([record.model_dump() for record in records], columns=columns)


def format_table(records: Sequence[BenchRecord]) -> str:
    return bench_frame(records).to_string(index=False, float_format=lambda v: f"{v:.3f}")


def write_bench_csv(records: Sequence[BenchRecord], path: PathLike) -> None:
    write_text(path, bench_frame(records).to_csv(index=False))
