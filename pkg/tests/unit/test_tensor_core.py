"""Tests for dense tensor helpers: sampling, PCA and random projections"""

import math

import pytest
import torch

from featup.core.errors import DimensionError, NonFiniteError, ParameterError, ShapeMismatchError
from featup.services.tensor_core import (
    bilinear_sample,
    check_feature_map,
    coordinate_field,
    counter_uniform,
    derive_seed,
    mean_cosine_similarity,
    pca_fit,
    random_projection,
    sample_points,
    seeded,
)


def _loop_bilinear(fm, y, x):
    """Scalar reference interpolator with align-corners-false and edge clamping"""
    c, h, w = fm.shape
    py = min(max(((y + 1.0) * h - 1.0) / 2.0, 0.0), h - 1.0)
    px = min(max(((x + 1.0) * w - 1.0) / 2.0, 0.0), w - 1.0)
    y0, x0 = int(math.floor(py)), int(math.floor(px))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    fy, fx = py - y0, px - x0
    out = []
    for ch in range(c):
        top = fm[ch, y0, x0] * (1 - fx) + fm[ch, y0, x1] * fx
        bottom = fm[ch, y1, x0] * (1 - fx) + fm[ch, y1, x1] * fx
        out.append(top * (1 - fy) + bottom * fy)
    return torch.stack(out)


def test_bilinear_sample_grid_hit():
    """Test an exact hit on a pixel center returns that element"""
    fm = torch.tensor([[[0.0, 1.0], [2.0, 3.0]]])
    assert bilinear_sample(fm, -0.5, -0.5).item() == pytest.approx(0.0)
    assert bilinear_sample(fm, 0.5, 0.5).item() == pytest.approx(3.0)


def test_bilinear_sample_center_is_mean():
    """Test the geometric center averages the four corners"""
    fm = torch.tensor([[[0.0, 1.0], [2.0, 3.0]]])
    assert bilinear_sample(fm, 0.0, 0.0).item() == pytest.approx(1.5)


def test_bilinear_sample_matches_loop_oracle(generator):
    """Test sampling against a per-point loop on random coordinates"""
    fm = torch.randn(3, 5, 5, generator=generator, dtype=torch.float64)
    coords = torch.rand(100, 2, generator=generator, dtype=torch.float64) * 2.4 - 1.2
    for y, x in coords.tolist():
        expected = _loop_bilinear(fm, y, x)
        assert torch.allclose(bilinear_sample(fm, y, x), expected, atol=1e-6)


def test_bilinear_sample_midpoint():
    """Test the midpoint of two pixel centers returns their mean"""
    fm = torch.tensor([[[1.0, 5.0, 9.0]]])
    # Centers at x = -2/3, 0, 2/3
    assert bilinear_sample(fm, 0.0, -1.0 / 3.0).item() == pytest.approx(3.0, abs=1e-6)


def test_sample_points_keeps_query_shape(generator):
    """Test batched sampling returns (C, *query shape)"""
    fm = torch.randn(4, 6, 6, generator=generator)
    field = coordinate_field(3, 5)
    out = sample_points(fm, field[0], field[1])
    assert out.shape == (4, 3, 5)


def test_check_feature_map_rejects_empty_and_nan():
    """Test empty and non-finite maps are rejected"""
    with pytest.raises(DimensionError):
        check_feature_map(torch.zeros(0, 2, 2))
    with pytest.raises(DimensionError):
        check_feature_map(torch.zeros(2, 2))
    with pytest.raises(NonFiniteError):
        check_feature_map(torch.tensor([[[float("nan")]]]))


def test_bilinear_sample_empty_map():
    """Test sampling an empty map is a dimension error"""
    with pytest.raises(DimensionError):
        bilinear_sample(torch.zeros(1, 0, 3), 0.0, 0.0)


def test_pca_rank_two_is_lossless(generator):
    """Test features in a 2-dim subspace reconstruct exactly with k=2"""
    basis = torch.randn(6, 2, generator=generator, dtype=torch.float64)
    coeffs = torch.randn(2, 8 * 8, generator=generator, dtype=torch.float64)
    offset = torch.randn(6, 1, generator=generator, dtype=torch.float64)
    fm = (basis @ coeffs + offset).reshape(6, 8, 8)
    pca = pca_fit(fm, 2)
    restored = pca.reconstruct(pca.project(fm))
    assert (restored - fm).abs().max() < 1e-5


def test_pca_constant_map_has_zero_variance():
    """Test a constant map yields zero explained variance and an orthonormal basis"""
    fm = torch.full((5, 4, 4), 0.3, dtype=torch.float64)
    pca = pca_fit(fm, 3)
    assert torch.all(pca.explained_variance == 0)
    gram = pca.components @ pca.components.T
    assert torch.allclose(gram, torch.eye(3, dtype=torch.float64), atol=1e-5)


def test_pca_matches_full_eigendecomposition(generator):
    """Test explained-variance ratios against a full covariance eigendecomposition"""
    fm = torch.randn(64, 14, 14, generator=generator, dtype=torch.float64)
    pca = pca_fit(fm, 8)
    vectors = fm.reshape(64, -1).T
    centered = vectors - vectors.mean(0)
    eigenvalues = torch.linalg.eigvalsh(centered.T @ centered / vectors.shape[0]).flip(0)
    ratio = pca.explained_variance / eigenvalues.sum()
    assert torch.allclose(ratio, eigenvalues[:8] / eigenvalues.sum(), atol=1e-5)
    assert torch.all(pca.explained_variance[:-1] >= pca.explained_variance[1:])


def test_pca_reconstruction_error_equals_discarded_variance(generator):
    """Test reconstruction MSE equals the discarded eigenvalue mass"""
    fm = torch.randn(10, 6, 6, generator=generator, dtype=torch.float64)
    full = pca_fit(fm, 10)
    pca = pca_fit(fm, 4)
    restored = pca.reconstruct(pca.project(fm))
    mse = ((restored - fm) ** 2).sum(0).mean()
    discarded = full.explained_variance[4:].sum()
    assert float(mse) == pytest.approx(float(discarded), rel=1e-4)


def test_pca_true_rank_32_compression(generator):
    """Test k=32 compresses rank-32 features almost losslessly"""
    basis = torch.randn(64, 32, generator=generator)
    coeffs = torch.randn(32, 16 * 16, generator=generator)
    fm = (basis @ coeffs).reshape(64, 16, 16)
    pca = pca_fit(fm, 32)
    restored = pca.reconstruct(pca.project(fm))
    relative = ((restored - fm) ** 2).mean() / (fm ** 2).mean()
    assert float(relative) < 1e-4


def test_pca_k_out_of_range():
    """Test k outside [1, min(C, HW)] is rejected"""
    fm = torch.randn(4, 2, 2)
    with pytest.raises(ParameterError):
        pca_fit(fm, 0)
    with pytest.raises(ParameterError):
        pca_fit(fm, 5)


def test_random_projection_deterministic_and_linear(generator):
    """Test seeded projections repeat exactly and map zero to zero"""
    fm = torch.randn(16, 3, 3, generator=generator)
    assert torch.equal(random_projection(fm, 5, seed=3), random_projection(fm, 5, seed=3))
    assert not torch.equal(random_projection(fm, 5, seed=3), random_projection(fm, 5, seed=4))
    assert torch.all(random_projection(torch.zeros(16, 3, 3), 5, seed=3) == 0)


def test_random_projection_preserves_norms(generator):
    """Test mean squared norm of projected unit vectors stays near one"""
    vectors = torch.randn(64, 1000, generator=generator, dtype=torch.float64)
    vectors = vectors / vectors.norm(dim=0, keepdim=True)
    projected = random_projection(vectors.reshape(64, 1000, 1), 30, seed=11)
    mean_sq = float((projected ** 2).sum(0).mean())
    assert 0.8 <= mean_sq <= 1.2


def test_mean_cosine_similarity():
    """Test cosine similarity of a map with itself and its negation"""
    fm = torch.randn(3, 4, 4)
    assert mean_cosine_similarity(fm, fm) == pytest.approx(1.0, abs=1e-6)
    assert mean_cosine_similarity(fm, -fm) == pytest.approx(-1.0, abs=1e-6)
    with pytest.raises(ShapeMismatchError):
        mean_cosine_similarity(fm, fm[:, :2])


def test_seeded_initialization_repeats():
    """Test forked RNG gives identical draws without disturbing the global stream"""
    torch.manual_seed(0)
    before = torch.rand(1)
    torch.manual_seed(0)
    with seeded(5):
        a = torch.rand(3)
    with seeded(5):
        b = torch.rand(3)
    assert torch.equal(a, b)
    assert torch.equal(torch.rand(1), before)


def test_derive_seed_streams_differ():
    """Test derived seeds are stable and differ across keys"""
    assert derive_seed(0, 1) == derive_seed(0, 1)
    assert derive_seed(0, 1) != derive_seed(0, 2)
    assert derive_seed(0, 1, 1) != derive_seed(0, 1, 2)


def test_counter_uniform_rows_ignore_table_size():
    """Test a row's draws are the same in short and long tables"""
    long = counter_uniform(5, 1, 300, 16)
    short = counter_uniform(5, 1, 20, 16)
    assert torch.equal(long[:20], short)
    assert not torch.equal(counter_uniform(5, 2, 20, 16), short)
    assert not torch.equal(counter_uniform(6, 1, 20, 16), short)


def test_counter_uniform_range_and_spread():
    """Test draws lie in [0, 1) with roughly uniform moments"""
    draws = counter_uniform(0, 1, 512, 64, torch.float64)
    assert draws.min() >= 0.0 and draws.max() < 1.0
    assert abs(float(draws.mean()) - 0.5) < 0.01
    assert abs(float((draws < 0.1).double().mean()) - 0.1) < 0.01
