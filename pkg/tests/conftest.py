# -*- coding: utf-8 -*-

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..', 'src'))

from dynfusion import data  # noqa: E402
from dynfusion.model import ModelConfig  # noqa: E402


TINY_DIMS = {'text': 5, 'audio': 4, 'video': 3}


def numeric_gradient(f, x, h=1e-6):
    """Central differences of the scalar function f() with respect to the array x (modified in place)"""
    grad = np.zeros_like(x)
    for index in np.ndindex(*x.shape):
        original = x[index]
        x[index] = original + h
        plus = f()
        x[index] = original - h
        minus = f()
        x[index] = original
        grad[index] = (plus - minus) / (2 * h)
    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig(d_text=5, d_audio=4, d_video=3, d_attn=4, d_hidden=4, encoder_hidden=3, input_dropout=0.0)


@pytest.fixture
def tiny_batch(rng):
    return data.random_batch(TINY_DIMS, 3, 4, rng)


@pytest.fixture
def tiny_spec():
    return data.SyntheticSpec(n_samples=60, d_text=6, d_audio=4, d_video=3, seq_len_max=4, seed=7)
