"""Synthetic data sources and the linear degradation channel.

Recipes are frozen with documented constants so downstream tests are
stable:

* pinwheel  -- ``arms`` radial blobs at distance ~1 twisted by
  ``rate * exp(radial)``; centered by construction.
* scurve    -- (sin t, sign(t)(cos t - 1)) for t uniform on
  [-3pi/2, 3pi/2], plus isotropic jitter.
* moon      -- two interleaved half circles, offset (1, 0.5), plus jitter.
* mixture1d -- 1D Gaussian mixture.
* gaussian  -- multivariate normal.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .oracles import Mixture1D
from .seeding import STREAM_DATA, STREAM_MEASURE, derive_rng

KINDS = ("mixture1d", "pinwheel", "scurve", "moon", "gaussian")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    # mixture1d
    weights: tuple = (0.5, 0.5)
    means: tuple = (-1.0, 1.0)
    stds: tuple = (0.5, 0.5)
    # pinwheel
    arms: int = 5
    radial_std: float = 0.3
    tangential_std: float = 0.05
    rate: float = 0.25
    # scurve / moon
    noise: float = 0.1
    # gaussian
    mean: tuple = (0.0, 0.0)
    cov: tuple = ((1.0, 0.0), (0.0, 1.0))
    # normalization flags: subtract the empirical mean / divide by RMS radius
    center: bool = False
    unit_scale: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "mixture1d":
            w = np.asarray(self.weights, dtype=np.float64)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("mixture weights must be nonnegative and sum to 1")
            if len(self.weights) != len(self.means) or len(self.means) != len(self.stds):
                raise ValueError("weights, means, stds must have equal lengths")
        if self.kind == "pinwheel" and self.arms < 1:
            raise ValueError("arms must be >= 1")

    @property
    def dim(self) -> int:
        if self.kind == "mixture1d":
            return 1
        if self.kind == "gaussian":
            return len(self.mean)
        return 2

    def mixture(self) -> Mixture1D:
        if self.kind != "mixture1d":
            raise ValueError(f"{self.kind} has no mixture form")
        return Mixture1D(
            np.asarray(self.weights, dtype=np.float64),
            np.asarray(self.means, dtype=np.float64),
            np.asarray(self.stds, dtype=np.float64) ** 2,
        )


def _pinwheel(spec: DatasetSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    arm = rng.integers(spec.arms, size=n)
    feat = rng.standard_normal((n, 2)) * [spec.radial_std, spec.tangential_std]
    feat[:, 0] += 1.0
    angles = arm * (2.0 * np.pi / spec.arms) + spec.rate * np.exp(feat[:, 0])
    cos, sin = np.cos(angles), np.sin(angles)
    return np.stack(
        [feat[:, 0] * cos - feat[:, 1] * sin, feat[:, 0] * sin + feat[:, 1] * cos], axis=1
    )


def _scurve(spec: DatasetSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    t = rng.uniform(-1.5 * np.pi, 1.5 * np.pi, size=n)
    base = np.stack([np.sin(t), np.sign(t) * (np.cos(t) - 1.0)], axis=1)
    return base + spec.noise * rng.standard_normal((n, 2))


def _moon(spec: DatasetSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    which = rng.integers(2, size=n)
    t = rng.uniform(0.0, np.pi, size=n)
    outer = np.stack([np.cos(t), np.sin(t)], axis=1)
    inner = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    base = np.where(which[:, None] == 0, outer, inner)
    return base + spec.noise * rng.standard_normal((n, 2))


def generate_with_rng(spec: DatasetSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n samples using the caller's generator."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if spec.kind == "mixture1d":
        x = spec.mixture().sample(n, rng)[:, None]
    elif spec.kind == "pinwheel":
        x = _pinwheel(spec, n, rng)
    elif spec.kind == "scurve":
        x = _scurve(spec, n, rng)
    elif spec.kind == "moon":
        x = _moon(spec, n, rng)
    else:  # gaussian
        mean = np.asarray(spec.mean, dtype=np.float64)
        cov = np.asarray(spec.cov, dtype=np.float64)
        L = np.linalg.cholesky(cov)
        x = mean + rng.standard_normal((n, mean.shape[0])) @ L.T
    if spec.center:
        x = x - x.mean(axis=0)
    if spec.unit_scale:
        rms = np.sqrt(np.mean(np.sum(x * x, axis=1)))
        if rms > 0:
            x = x / rms
    return x


def generate(spec: DatasetSpec, n: int, seed: int) -> np.ndarray:
    """n i.i.d. samples from the spec'd distribution, deterministic per seed."""
    return generate_with_rng(spec, n, derive_rng(seed, STREAM_DATA))


def sampler_fn(spec: DatasetSpec):
    """Adapter (n, rng) -> samples for consumers that drive their own stream."""
    return lambda n, rng: generate_with_rng(spec, n, rng)


def degrade(x: np.ndarray, a: float, sigma_n: float, seed: int) -> np.ndarray:
    """Elementwise linear channel y = a x + sigma_n eps, deterministic per seed."""
    x = np.asarray(x, dtype=np.float64)
    rng = derive_rng(seed, STREAM_MEASURE)
    return a * x + sigma_n * rng.standard_normal(x.shape)


def save_samples_csv(path, x: np.ndarray, header_comments: list[str] | None = None) -> None:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        for line in header_comments or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(x.shape[1])])
        for row in x:
            writer.writerow([f"{v:.17g}" for v in row])


def load_samples_csv(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0].startswith("x"):
                continue
            rows.append([float(v) for v in row])
    return np.asarray(rows, dtype=np.float64)
