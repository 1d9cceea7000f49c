"""Client contribution scoring: model divergence, utility, latency penalty and reputation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DIVERGENCE_EPS = 1e-8


@dataclass(frozen=True)
class ScoreConfig:
    lam: float = 0.6
    alpha1: float = 0.5
    alpha2: float = 0.5
    psi_init: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if self.alpha1 < 0 or self.alpha2 < 0 or self.alpha1 + self.alpha2 <= 0:
            raise ValueError("alpha1, alpha2 must be >= 0 with a positive sum")


@dataclass
class ReputationLedger:
    """Current reputation per client, created at ``psi_init`` for every registered client."""

    psi: dict[int, float] = field(default_factory=dict)
    history_length: int = 0

    @classmethod
    def create(cls, client_ids, psi_init: float) -> ReputationLedger:
        return cls({int(k): float(psi_init) for k in client_ids})

    def __getitem__(self, k: int) -> float:
        if k not in self.psi:
            raise KeyError(f"client {k} is not registered in the reputation ledger")
        return self.psi[k]

    def snapshot(self) -> dict[int, float]:
        return dict(self.psi)


def divergence(w_client: np.ndarray, w_global: np.ndarray, eps: float = DIVERGENCE_EPS) -> float:
    """Mean absolute coordinate-wise relative difference to the global weights.

    Global coordinates with magnitude below ``eps`` are divided by ``eps``.
    """
    w_client = np.asarray(w_client, dtype=np.float64)
    w_global = np.asarray(w_global, dtype=np.float64)
    if w_client.shape != w_global.shape:
        raise ValueError(f"weight length mismatch: {w_client.shape} vs {w_global.shape}")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    denom = np.maximum(np.abs(w_global), eps)
    return float(np.mean(np.abs(w_client - w_global) / denom))


def utility(d: float, improved: bool) -> float:
    if d < 0:
        raise ValueError(f"divergence must be non-negative, got {d}")
    closeness = math.exp(-abs(d))
    return closeness if improved else 1.0 - closeness


def minmax_normalize(values) -> np.ndarray:
    """Scale to [0, 1]; a constant list maps to 0.5 everywhere."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot normalize an empty list")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full_like(x, 0.5)
    return (x - lo) / (hi - lo)


def _smooth(ledger: ReputationLedger, k: int, instant: float, lam: float) -> float:
    prev = ledger[k]
    ledger.psi[k] = lam * instant + (1.0 - lam) * prev
    return ledger.psi[k]


def reputation_update(
    ledger: ReputationLedger, k: int, zeta: float, lat_norm: float, cfg: ScoreConfig
) -> float:
    """Smooth in ``alpha1*zeta - alpha2*lat_norm``; stores and returns the new reputation."""
    return _smooth(ledger, k, cfg.alpha1 * zeta - cfg.alpha2 * lat_norm, cfg.lam)


def reputation_update_accuracy(
    ledger: ReputationLedger, k: int, acc_local: float, acc_global_prev: float, lam: float
) -> float:
    """Accuracy-gain variant: smooth in the local model's gain over the previous global model."""
    for a in (acc_local, acc_global_prev):
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"accuracy {a} outside [0, 1]")
    return _smooth(ledger, k, acc_local - acc_global_prev, lam)
