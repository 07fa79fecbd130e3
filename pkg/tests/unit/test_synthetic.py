"""Tests for the synthetic scene generator"""

import pytest
import torch

from featup.core.errors import ParameterError
from featup.services.synthetic import DOWNSAMPLE, MAX_REGIONS, MIN_REGIONS, make_synthetic_sample, observe


def test_sample_shapes(tiny_sample):
    """Test image, ground truth, features and views sizes"""
    assert tiny_sample.image.shape == (3, 32, 32)
    assert tiny_sample.ground_truth.shape == (4, 32, 32)
    assert tiny_sample.features.shape == (4, 32 // DOWNSAMPLE, 32 // DOWNSAMPLE)
    assert len(tiny_sample.views) == 4
    assert tiny_sample.views[0][0].is_identity
    assert all(fm.shape == (4, 2, 2) for _, fm in tiny_sample.views)


def test_region_count_in_range(tiny_sample):
    """Test the scene has between MIN_REGIONS and MAX_REGIONS labels"""
    assert MIN_REGIONS <= tiny_sample.regions <= MAX_REGIONS


def test_ground_truth_is_unit_norm(tiny_sample):
    """Test every pixel carries one region's unit vector"""
    norms = torch.linalg.vector_norm(tiny_sample.ground_truth, dim=0)
    assert torch.allclose(norms, torch.ones_like(norms), atol=1e-5)


def test_image_is_8bit_exact(tiny_sample):
    """Test palette colors survive PNG quantization"""
    scaled = tiny_sample.image * 255.0
    assert torch.allclose(scaled, scaled.round(), atol=1e-4)


def test_same_seed_same_sample():
    """Test generation is a pure function of the seed"""
    a = make_synthetic_sample(seed=11, hi_res=32, channels=3, num_views=2)
    b = make_synthetic_sample(seed=11, hi_res=32, channels=3, num_views=2)
    c = make_synthetic_sample(seed=12, hi_res=32, channels=3, num_views=2)
    assert torch.equal(a.image, b.image)
    assert torch.equal(a.features, b.features)
    assert [t for t, _ in a.views] == [t for t, _ in b.views]
    assert not torch.equal(a.ground_truth, c.ground_truth)


def test_observe_keeps_constants():
    """Test blur plus pooling leaves a constant map unchanged"""
    fm = torch.full((2, 32, 32), 0.25)
    out = observe(fm)
    assert out.shape == (2, 2, 2)
    assert torch.allclose(out, fm[:, :2, :2])


def test_features_are_blurred_ground_truth(tiny_sample):
    """Test the identity view is the observation of the ground truth"""
    assert torch.equal(observe(tiny_sample.ground_truth), tiny_sample.features)


@pytest.mark.parametrize("kwargs", [dict(hi_res=40, channels=3), dict(hi_res=32, channels=0)])
def test_invalid_arguments(kwargs):
    """Test sizes off the downsampling grid and empty channels"""
    with pytest.raises(ParameterError):
        make_synthetic_sample(seed=0, **kwargs)
