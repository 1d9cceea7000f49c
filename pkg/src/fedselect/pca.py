"""PCA by power iteration with deflation, used to compress client weight vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PcaProjector:
    mean: np.ndarray
    components: np.ndarray  # [k, D], orthonormal rows
    explained_variance: np.ndarray

    @property
    def k_pca(self) -> int:
        return self.components.shape[0]

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> PcaProjector:
        return cls(
            np.asarray(doc["mean"], dtype=np.float64),
            np.asarray(doc["components"], dtype=np.float64).reshape(len(doc["components"]), -1),
            np.asarray(doc["explained_variance"], dtype=np.float64),
        )


def fit_pca(
    weight_rows: np.ndarray,
    k_pca: int,
    rng: np.random.Generator | None = None,
    max_iter: int = 500,
    tol: float = 1e-9,
) -> PcaProjector:
    """Top-``k_pca`` principal axes of the rows of ``weight_rows``.

    The covariance is never formed: each iteration applies ``Xc.T @ (Xc @ v)``.
    Earlier components are projected out of the iterate (deflation), and the
    loop stops at ``max_iter`` or when ``||C v - lambda v|| < tol * max(1, lambda)``.
    Signs are fixed so the largest-magnitude coordinate of each component is positive.
    """
    x = np.asarray(weight_rows, dtype=np.float64)
    m, d = x.shape
    if m < 2:
        raise ValueError("PCA needs at least two rows")
    if not 1 <= k_pca <= min(m - 1, d):
        raise ValueError(f"k_pca={k_pca} must be in [1, {min(m - 1, d)}] for a {m}x{d} matrix")
    rng = rng or np.random.default_rng(0)
    mean = x.mean(axis=0)
    xc = x - mean

    def cov(v):
        return xc.T @ (xc @ v) / (m - 1)

    comps = np.zeros((k_pca, d))
    variances = np.zeros(k_pca)
    for i in range(k_pca):
        prev = comps[:i]
        v = rng.normal(size=d)
        v -= prev.T @ (prev @ v)
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(max_iter):
            w = cov(v)
            w -= prev.T @ (prev @ w)
            lam = float(v @ w)
            norm = np.linalg.norm(w)
            if norm == 0.0:
                break
            resid = np.linalg.norm(w - lam * v)
            v = w / norm
            if resid < tol * max(1.0, abs(lam)):
                break
        v -= prev.T @ (prev @ v)
        v /= np.linalg.norm(v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps[i] = v
        variances[i] = float(v @ cov(v))
    order = np.argsort(-variances, kind="stable")
    return PcaProjector(mean, comps[order], variances[order])


def project(p: PcaProjector, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != p.mean.shape:
        raise ValueError(f"projector expects length {p.mean.shape[0]}, got {w.shape}")
    return p.components @ (w - p.mean)


def reconstruct(p: PcaProjector, z: np.ndarray) -> np.ndarray:
    return p.mean + p.components.T @ z
