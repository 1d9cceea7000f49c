import numpy as np
import pytest

from fedselect.config import FLRunConfig


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at x."""
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def max_rel_err(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


SLOW_CLIENTS = {
    "0": ["Hardware Spec. 6", "Wi-Fi 1"],
    "1": ["Hardware Spec. 7", "Wi-Fi 1"],
    "2": ["Hardware Spec. 8", "Wi-Fi 1"],
}


def small_config(**kw) -> FLRunConfig:
    doc = dict(
        N=6,
        U=2,
        rounds=4,
        E=1,
        B=20,
        rl_batch_size=8,
        q_hidden_dim=16,
        k_pca=3,
        dataset={"kind": "blobs", "num_classes": 4, "input_dim": 5, "n_per_class": 40, "spread": 1.0},
        partition={"scheme": "hetero_dirichlet", "alpha": 0.5, "min_size": 5},
    )
    doc.update(kw)
    return FLRunConfig.from_dict(doc)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
