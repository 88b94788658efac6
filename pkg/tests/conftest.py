"""Shared fixtures and helpers for the test suite."""

import os

import numpy as np
import pytest

from meed.core import Mlp, named_rng
from meed.data import Dataset, MlpModel, SyntheticSpec, generate_synthetic, split_dataset, train_given_model


def finite_difference(fn, params: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    grad = np.zeros_like(params)
    for i in range(len(params)):
        bumped = params.copy()
        bumped[i] += step
        hi = fn(bumped)
        bumped[i] -= 2 * step
        lo = fn(bumped)
        grad[i] = (hi - lo) / (2 * step)
    return grad


def relative_error(approx: np.ndarray, exact: np.ndarray) -> float:
    denom = max(np.linalg.norm(exact), 1e-12)
    return np.linalg.norm(approx - exact) / denom


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_model():
    """A small trained model over 6 features, 2 classes."""
    spec = SyntheticSpec(d=6, true_subset=(0, 1), n=2400, noise_std=0.1,
                         kind="sparse-logit", seed=11)
    ds, subset = generate_synthetic(spec)
    tr, va, te = split_dataset(ds)
    model = train_given_model(tr, hidden=(16,), seed=0, epochs=30)
    return model, tr, te, subset


@pytest.fixture
def feature_set(tiny_model):
    _, tr, _, _ = tiny_model
    return Dataset(ids=list(tr.ids), X=tr.X)


def mnist_dir():
    """Directory holding the four standard IDX files, if present."""
    candidates = [os.environ.get("MEED_MNIST_DIR", ""),
                  os.path.join(os.path.dirname(__file__), "..", "data", "mnist")]
    names = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
    for cand in candidates:
        if cand and all(os.path.exists(os.path.join(cand, n)) for n in names):
            return cand
    return None
