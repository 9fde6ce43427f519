"""Distortion and perception measures, and the optimal tradeoff curve.

Distortion is mean squared error over paired samples.  Perception is a
divergence between sample clouds: closed-form Gaussian W2, quantile-coupled
empirical W2 in 1D, exact assignment-based W2 for small 2D clouds, and a
smoothed-histogram KL in 1D (a Gaussian-fit KL is provided for 2D as an
explicitly parametric approximation).

For a conditional Gaussian with covariance trace t, the minimum achievable
MSE at perception budget P is t + (sqrt(t) - P)^2 for P <= sqrt(t) and t
beyond; the scaled-reverse-chain family D = (1 + lam) t, P = (1 - sqrt(lam))
sqrt(t) sits exactly on that curve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

W2_EXACT_MAX_N = 4096


@dataclass(frozen=True)
class DPPoint:
    """One record of a distortion-perception sweep."""

    lam: float
    distortion: float
    perception: float
    kind: str  # "W2", "KL", "KL-GAUSS"
    n_samples: int
    seed: int
    degenerate: bool = False

    def __post_init__(self):
        if self.distortion < 0:
            raise ValueError(f"distortion must be >= 0, got {self.distortion}")


def _rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def mse_paired(reconstructions, references) -> float:
    """Mean squared Euclidean distance over aligned pairs."""
    a, b = _rows(reconstructions), _rows(references)
    if a.size == 0:
        raise ValueError("empty input")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(np.sum(d * d, axis=1)))


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root; tiny negative eigenvalues clamp to 0."""
    w, q = np.linalg.eigh(mat)
    w = np.clip(w, 0.0, None)
    return (q * np.sqrt(w)) @ q.T


def w2_gaussian(mu1, cov1, mu2, cov2) -> float:
    """Closed-form Wasserstein-2 distance between two Gaussians."""
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=np.float64))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    c1 = np.atleast_2d(np.asarray(cov1, dtype=np.float64))
    c2 = np.atleast_2d(np.asarray(cov2, dtype=np.float64))
    root1 = _sqrtm_psd(c1)
    cross = _sqrtm_psd(root1 @ c2 @ root1)
    sq = float(np.sum((mu1 - mu2) ** 2) + np.trace(c1 + c2 - 2.0 * cross))
    return float(np.sqrt(max(sq, 0.0)))


def w2_empirical_1d(samples_a, samples_b) -> float:
    """Quantile-coupling W2 estimate between two 1D sample sets.

    Equal-size inputs use the exact sorted pairing; otherwise both quantile
    functions are interpolated onto a common grid.
    """
    a = np.sort(np.asarray(samples_a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(samples_b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("empty input")
    if a.size == b.size:
        return float(np.sqrt(np.mean((a - b) ** 2)))
    m = max(a.size, b.size)
    q = (np.arange(m) + 0.5) / m
    qa = np.interp(q, (np.arange(a.size) + 0.5) / a.size, a)
    qb = np.interp(q, (np.arange(b.size) + 0.5) / b.size, b)
    return float(np.sqrt(np.mean((qa - qb) ** 2)))


def w2_exact_small(samples_a, samples_b) -> float:
    """Exact empirical W2 via the optimal assignment over the cost matrix."""
    a, b = _rows(samples_a), _rows(samples_b)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty input")
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"sample counts differ: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] > W2_EXACT_MAX_N:
        raise ValueError(f"n={a.shape[0]} exceeds exact-solver limit {W2_EXACT_MAX_N}")
    cost = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def kl_estimate_1d(samples_p, samples_q, bins: int = 100) -> float:
    """Histogram KL(p || q) with 0.5 pseudo-counts over the pooled support."""
    p = np.asarray(samples_p, dtype=np.float64).ravel()
    q = np.asarray(samples_q, dtype=np.float64).ravel()
    if p.size == 0 or q.size == 0:
        raise ValueError("empty input")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    lo = min(p.min(), q.min())
    hi = max(p.max(), q.max())
    if lo == hi:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    cp, _ = np.histogram(p, bins=edges)
    cq, _ = np.histogram(q, bins=edges)
    fp = (cp + 0.5) / (p.size + 0.5 * bins)
    fq = (cq + 0.5) / (q.size + 0.5 * bins)
    return float(np.sum(fp * np.log(fp / fq)))


def kl_gaussian_fit(samples_p, samples_q) -> float:
    """KL between Gaussian fits of the two clouds (parametric approximation)."""
    p, q = _rows(samples_p), _rows(samples_q)
    if p.shape[0] < 2 or q.shape[0] < 2:
        raise ValueError("need at least 2 samples per cloud")
    mu_p, mu_q = p.mean(axis=0), q.mean(axis=0)
    cov_p = np.cov(p, rowvar=False).reshape(p.shape[1], p.shape[1])
    cov_q = np.cov(q, rowvar=False).reshape(q.shape[1], q.shape[1])
    d = p.shape[1]
    sign, logdet_q = np.linalg.slogdet(cov_q)
    _, logdet_p = np.linalg.slogdet(cov_p)
    diff = mu_q - mu_p
    inv_q = np.linalg.inv(cov_q)
    return float(
        0.5 * (np.trace(inv_q @ cov_p) + diff @ inv_q @ diff - d + logdet_q - logdet_p)
    )


def optimal_dp_curve(trace_sigma: float, p_values) -> list[tuple[float, float]]:
    """Minimum MSE at each perception budget P for a conditional Gaussian."""
    if trace_sigma <= 0:
        raise ValueError("trace_sigma must be > 0")
    root = np.sqrt(trace_sigma)
    out = []
    for p in p_values:
        p = float(p)
        if p < 0:
            raise ValueError(f"P must be >= 0, got {p}")
        d = trace_sigma + (root - p) ** 2 if p <= root else trace_sigma
        out.append((p, float(d)))
    return out


def achievability_curve(trace_sigma: float, lambdas) -> list[tuple[float, float, float]]:
    """(lambda, D, P) points reached by the scaled reverse chain.

    Each point is asserted to lie on the optimal curve to 1e-12 relative.
    """
    if trace_sigma <= 0:
        raise ValueError("trace_sigma must be > 0")
    out = []
    for lam in lambdas:
        lam = float(lam)
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {lam}")
        d = (1.0 + lam) * trace_sigma
        p = (1.0 - np.sqrt(lam)) * np.sqrt(trace_sigma)
        (_, d_curve), = optimal_dp_curve(trace_sigma, [p])
        if abs(d - d_curve) > 1e-12 * max(abs(d_curve), 1.0):
            raise AssertionError(f"achievable point off the optimal curve at lambda={lam}")
        out.append((lam, float(d), float(p)))
    return out
