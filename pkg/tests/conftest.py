"""Pytest configuration and fixtures"""

import pytest
import torch

from featup.services.synthetic import make_synthetic_sample
from featup.services.trainer import InMemoryViewProvider


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running desk-scale benchmark")


@pytest.fixture
def generator():
    """Seeded torch generator"""
    return torch.Generator().manual_seed(1234)


@pytest.fixture
def float64():
    """Run a test with float64 as the default dtype"""
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield torch.float64
    torch.set_default_dtype(previous)


@pytest.fixture
def tiny_sample():
    """Small synthetic image: 32x32 pixels, 4 channels, 2x2 features, 3 jittered views"""
    return make_synthetic_sample(seed=7, hi_res=32, channels=4, num_views=3, max_pad=4, max_zoom=1.5)


@pytest.fixture
def tiny_provider(tiny_sample):
    """View provider over the tiny sample's views"""
    return InMemoryViewProvider(tiny_sample.views)


@pytest.fixture
def random_image(generator):
    """Random (3, 16, 16) guidance image in [0, 1]"""
    return torch.rand(3, 16, 16, generator=generator)
