"""Closed-form ground truth for conditional denoising.

Covers exact linear-Gaussian posteriors, 1D mixture-Gaussian posteriors,
scores of the diffused conditionals, the coefficients (U_k, V_k, C_k) of
the exact Gaussian reverse kernel p(x_k | x_{k+1}, y), and the per-step
marginal moments of the variance-scaled reverse chain, both by stepwise
recursion and in closed form.

Matrix algebra notes: for a Gaussian conditional with covariance S_y, the
diffused covariance at step k is S_k = (1 - abar_k) I + abar_k S_y, and
(1 - b) S_k + b I equals S_{k+1} identically (b = beta_{k+1}).  All S_k
are polynomials in S_y and therefore commute; the recursion telescopes to
closed form exactly when the kernel drift coefficient carries its exact
sqrt(alpha_{k+1}) factor.  The half-beta variant (1 - b/2), convenient in
asymptotic derivations, is exposed for comparison but differs from the
exact factor by ~ b^2/8 per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .schedule import MeasurementModel, NoiseSchedule

KERNEL_FORMS = ("sqrt-alpha", "half-beta")
_PSD_TOL = 1e-10


def _rsolve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """A @ inv(B) via a solve."""
    return np.linalg.solve(B.T, A.T).T


def _check_psd(mat: np.ndarray, name: str) -> np.ndarray:
    mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    if mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square, got {mat.shape}")
    if not np.allclose(mat, mat.T, atol=1e-12, rtol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    scale = max(float(np.abs(mat).max()), 1.0)
    if np.linalg.eigvalsh(mat).min() < -_PSD_TOL * scale:
        raise ValueError(f"{name} must be positive semi-definite")
    return mat


@dataclass(frozen=True)
class GaussianPosterior:
    """Conditional mean and covariance of the clean signal given y."""

    mu_y: np.ndarray
    sigma_y: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu_y, dtype=np.float64))
        sig = _check_psd(self.sigma_y, "sigma_y")
        if sig.shape[0] != mu.shape[0]:
            raise ValueError("mu_y and sigma_y dimensions disagree")
        object.__setattr__(self, "mu_y", mu)
        object.__setattr__(self, "sigma_y", sig)

    @property
    def dim(self) -> int:
        return self.mu_y.shape[0]


def gaussian_posterior(
    prior_mean: np.ndarray,
    prior_cov: np.ndarray,
    model: MeasurementModel,
    y: np.ndarray,
) -> GaussianPosterior:
    """Exact conditional of x given y = A x + N(0, sigma_n^2 I), Gaussian prior."""
    mu0 = np.atleast_1d(np.asarray(prior_mean, dtype=np.float64))
    cov0 = _check_psd(prior_cov, "prior_cov")
    d = mu0.shape[0]
    A = model.matrix(d)
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    lam0 = np.linalg.inv(cov0)  # prior precision
    prec = lam0 + (A.T @ A) / model.sigma_n**2
    sigma = np.linalg.inv(prec)
    sigma = 0.5 * (sigma + sigma.T)
    mu = sigma @ (A.T @ y / model.sigma_n**2 + lam0 @ mu0)
    return GaussianPosterior(mu_y=mu, sigma_y=sigma)


# -- 1D mixtures ----------------------------------------------------------


@dataclass(frozen=True)
class MixtureModel:
    """Two-or-more component 1D Gaussian mixture prior with scalar channel y = a x + sigma0 eps."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    a: float = 1.0
    sigma0: float = 0.5

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        mu = np.atleast_1d(np.asarray(self.means, dtype=np.float64))
        sd = np.atleast_1d(np.asarray(self.stds, dtype=np.float64))
        if not (w.shape == mu.shape == sd.shape):
            raise ValueError("weights, means, stds must have equal lengths")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1 within 1e-12")
        if np.any(sd <= 0) or self.sigma0 <= 0:
            raise ValueError("stds and sigma0 must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stds", sd)

    def prior(self) -> "Mixture1D":
        return Mixture1D(self.weights, self.means, self.stds**2)


@dataclass(frozen=True)
class MixturePosterior:
    """Responsibilities plus per-component posterior means/variances given y."""

    responsibilities: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def mixture(self) -> "Mixture1D":
        return Mixture1D(self.responsibilities, self.means, self.variances)


def _gauss_logpdf(x, mean, var):
    return -0.5 * (np.log(2.0 * np.pi * var) + (x - mean) ** 2 / var)


def mixture_posterior(model: MixtureModel, y: float) -> MixturePosterior:
    """Posterior mixture of x0 given y; responsibilities computed in log domain."""
    y = float(y)
    log_py = _gauss_logpdf(y, model.a * model.means, model.a**2 * model.stds**2 + model.sigma0**2)
    log_resp = np.log(model.weights, out=np.full_like(model.weights, -np.inf), where=model.weights > 0)
    log_resp = log_resp + log_py
    log_resp -= logsumexp(log_resp)
    resp = np.exp(log_resp)
    resp /= resp.sum()
    prec = model.a**2 / model.sigma0**2 + 1.0 / model.stds**2
    variances = 1.0 / prec
    means = (model.means / model.stds**2 + model.a * y / model.sigma0**2) * variances
    return MixturePosterior(responsibilities=resp, means=means, variances=variances)


def mmse_estimate(posterior) -> np.ndarray:
    """Posterior mean: the distortion-optimal reconstruction."""
    if isinstance(posterior, GaussianPosterior):
        return posterior.mu_y.copy()
    if isinstance(posterior, MixturePosterior):
        return np.atleast_1d(float(posterior.responsibilities @ posterior.means))
    raise TypeError(f"unsupported posterior type {type(posterior).__name__}")


@dataclass(frozen=True)
class Mixture1D:
    """Generic 1D Gaussian mixture (weights, means, variances)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def diffused(self, schedule: NoiseSchedule, k: int) -> "Mixture1D":
        """Mixture of x_k when x_0 follows this mixture: components shrink and widen."""
        k = schedule.check_step(k)
        abar = schedule.alpha_bar[k]
        return Mixture1D(self.weights, np.sqrt(abar) * self.means, abar * self.variances + 1.0 - abar)

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        lp = _gauss_logpdf(x[..., None], self.means, self.variances)
        lw = np.log(self.weights, out=np.full_like(self.weights, -np.inf), where=self.weights > 0)
        return logsumexp(lp + lw, axis=-1)

    def score(self, x) -> np.ndarray:
        """d/dx log p(x), evaluated with log-domain responsibilities."""
        x = np.asarray(x, dtype=np.float64)
        lp = _gauss_logpdf(x[..., None], self.means, self.variances)
        lw = np.log(self.weights, out=np.full_like(self.weights, -np.inf), where=self.weights > 0)
        lq = lp + lw
        lq -= logsumexp(lq, axis=-1, keepdims=True)
        resp = np.exp(lq)
        return np.sum(resp * (-(x[..., None] - self.means) / self.variances), axis=-1)

    def mean(self) -> float:
        return float(self.weights @ self.means)

    def variance(self) -> float:
        m = self.mean()
        return float(self.weights @ (self.variances + self.means**2) - m**2)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights / self.weights.sum())
        return self.means[comp] + np.sqrt(self.variances[comp]) * rng.standard_normal(n)


def diffused_mixture_score(
    model: MixtureModel, y: float, schedule: NoiseSchedule, k: int, x
) -> np.ndarray:
    """Exact conditional score d/dx log p(x_k | y) for the mixture channel."""
    if not 1 <= int(k) <= schedule.T:
        raise ValueError(f"need 1 <= k <= T, got {k}")
    return mixture_posterior(model, y).mixture().diffused(schedule, k).score(x)


# -- diffused Gaussian conditionals ----------------------------------------


def diffused_conditional_moments(
    posterior: GaussianPosterior, schedule: NoiseSchedule, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of p(x_k | y): (sqrt(abar_k) mu_y, (1-abar_k) I + abar_k S_y)."""
    k = schedule.check_step(k)
    abar = schedule.alpha_bar[k]
    d = posterior.dim
    mu_k = np.sqrt(abar) * posterior.mu_y
    sigma_k = (1.0 - abar) * np.eye(d) + abar * posterior.sigma_y
    return mu_k, sigma_k


def gaussian_conditional_score(
    posterior: GaussianPosterior, schedule: NoiseSchedule, k: int, x: np.ndarray
) -> np.ndarray:
    """Exact conditional score -S_k^{-1} (x - mu_k) for row batch x."""
    mu_k, sigma_k = diffused_conditional_moments(posterior, schedule, k)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return -np.linalg.solve(sigma_k, (x - mu_k).T).T


# -- exact reverse kernel ---------------------------------------------------


@dataclass(frozen=True)
class ReverseKernelParams:
    """Coefficients of p(x_k | x_{k+1}, y) = N(U_k x_{k+1} + V_k mu_y, C_k)."""

    U: np.ndarray
    V: np.ndarray
    C: np.ndarray


def reverse_kernel_params(
    posterior: GaussianPosterior,
    schedule: NoiseSchedule,
    k: int,
    form: str = "half-beta",
) -> ReverseKernelParams:
    """Reverse-kernel coefficients at level k (the step uses beta_{k+1}).

    ``form`` selects the drift prefactor: "half-beta" is the (1 - b/2)
    variant, "sqrt-alpha" the exact sqrt(1 - b) one.  V and C are identical
    between the two.
    """
    if form not in KERNEL_FORMS:
        raise ValueError(f"form must be one of {KERNEL_FORMS}")
    k = int(k)
    if not 0 <= k <= schedule.T - 1:
        raise ValueError(f"need 0 <= k <= T-1, got {k}")
    b = schedule.beta[k + 1]
    _, sigma_k = diffused_conditional_moments(posterior, schedule, k)
    d = posterior.dim
    B = (1.0 - b) * sigma_k + b * np.eye(d)  # equals Sigma_{k+1}
    factor = 1.0 - 0.5 * b if form == "half-beta" else np.sqrt(1.0 - b)
    U = factor * _rsolve(sigma_k, B)
    V = b * np.sqrt(schedule.alpha_bar[k]) * np.linalg.solve(B, np.eye(d))
    C = b * _rsolve(sigma_k, B)
    return ReverseKernelParams(U=U, V=V, C=C)


# -- marginal moments of the variance-scaled reverse chain ------------------


@dataclass(frozen=True)
class MarginalMoments:
    """Moments of the scaled reverse chain's marginal at one step, plus the
    unscaled diffused-conditional moments at the same step."""

    k: int
    mu: np.ndarray
    sigma: np.ndarray
    mu_unscaled: np.ndarray
    sigma_unscaled: np.ndarray


def scaled_marginal_moments_recursion(
    posterior: GaussianPosterior, schedule: NoiseSchedule, lam: float
) -> list[MarginalMoments]:
    """Per-step marginals of the scaled reverse chain, by stepwise recursion.

    Starts from mu_T = 0, Sigma_T = I and applies
    mu_k = U_k mu_{k+1} + V_k mu_y, Sigma_k = lam C_k + U_k Sigma_{k+1} U_k^T
    with the exact (sqrt-alpha) kernel coefficients.  Returns a list indexed
    by k = 0..T.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    d = posterior.dim
    mu = np.zeros(d)
    sigma = np.eye(d)
    mu_T, sig_T = diffused_conditional_moments(posterior, schedule, schedule.T)
    out = [MarginalMoments(schedule.T, mu.copy(), sigma.copy(), mu_T, sig_T)]
    for k in range(schedule.T - 1, -1, -1):
        kp = reverse_kernel_params(posterior, schedule, k, form="sqrt-alpha")
        mu = kp.U @ mu + kp.V @ posterior.mu_y
        sigma = lam * kp.C + kp.U @ sigma @ kp.U.T
        sigma = 0.5 * (sigma + sigma.T)
        mu_k, sig_k = diffused_conditional_moments(posterior, schedule, k)
        out.append(MarginalMoments(k, mu.copy(), sigma.copy(), mu_k, sig_k))
    out.reverse()
    return out


def scaled_marginal_moments_closed_form(
    posterior: GaussianPosterior,
    schedule: NoiseSchedule,
    lam: float,
    k: int,
    asymptotic: bool = False,
) -> MarginalMoments:
    """Closed-form marginal moments of the scaled reverse chain at step k.

    The default keeps the exact finite-T factors and matches the recursion to
    machine precision:

        mu_k    = sqrt(abar_k) (1 - r_k) S_T^{-1} mu_y
        Sigma_k = lam (1 - r_k) S_k S_T^{-1} + r_k S_k^2 S_T^{-2}

    with r_k = alpha_{k+1} ... alpha_T and S_T the diffused covariance at T.
    With ``asymptotic=True`` the covariance is evaluated in its widely quoted
    limit form S_k (lam I + (1 - lam) r_k S_{T-1}^{-1} S_k), whose S_T -> I
    simplification leaves an O(abar_T) relative error at finite T.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    k = schedule.check_step(k)
    d = posterior.dim
    r = schedule.alpha_bar[schedule.T] / schedule.alpha_bar[k]
    mu_k, sigma_k = diffused_conditional_moments(posterior, schedule, k)
    _, sigma_T = diffused_conditional_moments(posterior, schedule, schedule.T)
    mu = np.sqrt(schedule.alpha_bar[k]) * (1.0 - r) * np.linalg.solve(sigma_T, posterior.mu_y)
    if asymptotic:
        _, sigma_Tm1 = diffused_conditional_moments(posterior, schedule, schedule.T - 1)
        sigma = sigma_k @ (lam * np.eye(d) + (1.0 - lam) * r * np.linalg.solve(sigma_Tm1, sigma_k))
    else:
        SkTinv = _rsolve(sigma_k, sigma_T)  # S_k S_T^{-1}
        sigma = lam * (1.0 - r) * SkTinv + r * SkTinv @ SkTinv
    sigma = 0.5 * (sigma + sigma.T)
    return MarginalMoments(k, mu, sigma, mu_k, sigma_k)
