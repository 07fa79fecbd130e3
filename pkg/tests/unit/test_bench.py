"""Tests for the adaptive-convolution benchmark"""

import math

import pandas as pd
import pytest
import torch
from torch.profiler import record_function

from featup.core.config import settings
from featup.core.errors import ParameterError
from featup.services.bench import (
    TABLE8_SHAPES,
    bench_inputs,
    fast_kernel_bench,
    format_table,
    parse_shape,
    peak_allocation_mb,
    reference_footprint_mb,
    run_bench,
    write_bench_csv,
)

SMALL = (1, 8, 8, 3, 1)


def test_parse_shape():
    """Test comma and x separated shapes"""
    assert parse_shape("2,16,16,8,3") == (2, 16, 16, 8, 3)
    assert parse_shape("2x16x16x8x3") == (2, 16, 16, 8, 3)


@pytest.mark.parametrize("text", ["1,2,3", "a,b,c,d,e", "1,0,4,4,1"])
def test_parse_shape_rejects(text):
    """Test wrong arity, non-integers and zero sizes"""
    with pytest.raises(ParameterError):
        parse_shape(text)


def test_reference_footprint():
    """Test the patch tensor size of one shape"""
    assert reference_footprint_mb((1, 16, 16, 4, 1)) == pytest.approx(9 * 16 * 16 * 4 * 4 / 2 ** 20)


def test_standard_shapes():
    """Test the standard comparison lists eight shapes"""
    assert len(TABLE8_SHAPES) == 8
    assert TABLE8_SHAPES[-1] == (64, 64, 64, 16, 7)


def test_inputs_are_seeded_and_normalized():
    """Test kernels sum to one per pixel and inputs repeat per seed"""
    features, kernel = bench_inputs(SMALL, seed=4)
    again, _ = bench_inputs(SMALL, seed=4)
    assert features.shape == (1, 3, 8, 8)
    assert kernel.shape == (1, 9, 8, 8)
    assert torch.allclose(kernel.sum(dim=1), torch.ones(1, 8, 8), atol=1e-6)
    assert torch.equal(features, again)


def test_bench_rows():
    """Test one fast and one reference row that agree numerically"""
    fast, reference = fast_kernel_bench(SMALL, repeats=1)
    assert (fast.method, reference.method) == ("fast", "reference")
    assert fast.shape == "1 x 8 x 8 x 3 x 1"
    assert fast.max_abs_diff < 1e-5
    assert fast.forward_ms >= 0 and reference.backward_ms >= 0
    assert fast.peak_mb >= 0


def test_radius_override():
    """Test an explicit radius replaces the shape's"""
    records = fast_kernel_bench(SMALL, radius=2, repeats=1)
    assert records[0].shape.endswith("x 2")


def test_reference_skipped_above_limit(monkeypatch):
    """Test oversized reference runs are reported as NaN"""
    monkeypatch.setattr(settings, "BENCH_MAX_REFERENCE_MB", 0.0)
    fast, reference = fast_kernel_bench(SMALL, repeats=1)
    assert math.isnan(reference.forward_ms) and math.isnan(reference.peak_mb)
    assert math.isnan(fast.max_abs_diff)
    assert not math.isnan(fast.forward_ms)


def test_repeats_must_be_positive():
    """Test zero repeats"""
    with pytest.raises(ParameterError):
        fast_kernel_bench(SMALL, repeats=0)


def test_table_and_csv(tmp_path):
    """Test printed and CSV outputs list every row"""
    records = run_bench([SMALL, (1, 4, 4, 2, 1)], repeats=1)
    assert len(records) == 4
    assert "reference" in format_table(records)
    write_bench_csv(records, tmp_path / "bench.csv")
    frame = pd.read_csv(tmp_path / "bench.csv")
    assert list(frame.columns) == ["shape", "method", "forward_ms", "backward_ms", "peak_mb", "max_abs_diff"]
    assert len(frame) == 4


def test_peak_counts_buffers_freed_inside_an_op():
    """Test a buffer allocated and released within one op still sets the peak"""

    def fn():
        with record_function("scratch"):
            buffer = torch.zeros(1 << 20)
            del buffer

    assert peak_allocation_mb(fn) >= 3.9


def test_fast_peak_includes_tile_partials(monkeypatch):
    """Test the fast row accounts for one kernel-gradient buffer per channel tile"""
    monkeypatch.setattr(settings, "JBU_CHANNEL_TILE", 1)
    b, h, w, c, radius = shape = (1, 16, 16, 8, 1)
    fast, _ = fast_kernel_bench(shape, repeats=1)
    partials_mb = c * b * (2 * radius + 1) ** 2 * h * w * 4 / 2 ** 20
    assert fast.peak_mb >= partials_mb


@pytest.mark.slow
def test_fast_backend_saves_memory_and_time():
    """Test the fused kernel at 1 x 14 x 14 x 2048, radius 5 against the unfold reference"""
    fast, reference = fast_kernel_bench((1, 14, 14, 2048, 5), repeats=3)
    assert fast.max_abs_diff < 1e-5
    assert fast.peak_mb < reference.peak_mb / 10
    assert fast.forward_ms <= reference.forward_ms / 3
