"""Discrete variance-preserving diffusion schedule and forward noising.

The forward chain applies x_{k} = sqrt(1 - beta_k) x_{k-1} + sqrt(beta_k) eps,
so the clean-data marginal at step k is
N(sqrt(abar_k) x0, (1 - abar_k) I) with abar_k the running product of
alpha_k = 1 - beta_k.  Index 0 is clean data; beta_0 = 0 is a sentinel that
never enters a transition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ScheduleError(ValueError):
    """Invalid schedule parameters or step index."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances of the forward chain, with derived products.

    Arrays have length T + 1 and are indexed by step k = 0..T.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.shape != (self.T + 1,):
            raise ScheduleError(f"beta must have length T+1={self.T + 1}, got {beta.shape}")
        if beta[0] != 0.0:
            raise ScheduleError("beta_0 must be 0 (clean-data sentinel)")
        if np.any(np.diff(beta[1:]) < 0):
            raise ScheduleError("beta must be nondecreasing over k >= 1")
        if np.any(beta < 0) or np.any(beta >= 1):
            raise ScheduleError("beta entries must lie in [0, 1)")
        alpha = 1.0 - beta
        # sequential left-to-right product, fixed for cross-platform replay
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", np.cumprod(alpha))

    def check_step(self, k: int) -> int:
        k = int(k)
        if not 0 <= k <= self.T:
            raise ScheduleError(f"step index {k} outside 0..{self.T}")
        return k


def build_schedule(T: int, beta_min: float, beta_max: float) -> NoiseSchedule:
    """Linear variance schedule: beta_k interpolates beta_min..beta_max for k=1..T."""
    if T < 2:
        raise ScheduleError(f"T must be >= 2, got {T}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ScheduleError(f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")
    beta = np.zeros(T + 1, dtype=np.float64)
    beta[1:] = np.linspace(beta_min, beta_max, T)
    return NoiseSchedule(T=T, beta=beta)


def forward_sample(
    schedule: NoiseSchedule, x0: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw x_k | x0 from the closed-form marginal sqrt(abar_k) x0 + sqrt(1-abar_k) eps.

    x0 may be a single point (d,) or a batch (n, d); noise is drawn per entry.
    """
    k = schedule.check_step(k)
    x0 = np.asarray(x0, dtype=np.float64)
    if not np.all(np.isfinite(x0)):
        raise ScheduleError("x0 must be finite")
    abar = schedule.alpha_bar[k]
    eps = rng.standard_normal(x0.shape)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


@dataclass(frozen=True)
class MeasurementModel:
    """Linear degradation y = a x + noise, noise ~ N(0, sigma_n^2 I).

    ``a`` is either a scalar (elementwise channel) or an (n, d) matrix.
    """

    a: float | np.ndarray
    sigma_n: float

    def __post_init__(self):
        if self.sigma_n <= 0:
            raise ValueError(f"sigma_n must be > 0, got {self.sigma_n}")

    def matrix(self, d: int) -> np.ndarray:
        a = np.asarray(self.a, dtype=np.float64)
        if a.ndim == 0:
            return float(a) * np.eye(d)
        if a.ndim != 2 or a.shape[1] != d:
            raise ValueError(f"operator shape {a.shape} inconsistent with data dim {d}")
        return a

    def apply(self, x: np.ndarray) -> np.ndarray:
        """A(x) for a row batch (n, d) or single point (d,)."""
        a = np.asarray(self.a, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        if a.ndim == 0:
            return float(a) * x
        return x @ a.T

    def apply_transpose(self, r: np.ndarray) -> np.ndarray:
        """A^T r, the adjoint of :meth:`apply`."""
        a = np.asarray(self.a, dtype=np.float64)
        r = np.asarray(r, dtype=np.float64)
        if a.ndim == 0:
            return float(a) * r
        return r @ a
