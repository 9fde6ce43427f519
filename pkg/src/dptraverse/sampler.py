"""Variance-scaled reverse diffusion sampling.

One reverse step is

    x_{k-1} = (x_k + (1 - alpha_k) s(x_k, k)) / sqrt(alpha_k) + scale * noise

where s is a conditional-score source (exact analytic score in oracle mode,
or learned prior score plus measurement guidance in learned mode) and the
noise scale is sqrt(lambda) * sigma_tilde_k by default, so the per-step
kernel covariance is lambda * sigma_tilde_k^2.  A literal variant scaling
the std itself by lambda is kept behind ``noise_scaling`` for comparison;
the two coincide at lambda in {0, 1}.

lambda = 0 collapses the chain onto deterministic posterior-mean
propagation; lambda = 1 reproduces ancestral posterior sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics as metrics_mod
from .oracles import (
    GaussianPosterior,
    MixtureModel,
    Mixture1D,
    diffused_conditional_moments,
    gaussian_conditional_score,
    mixture_posterior,
)
from .schedule import MeasurementModel, NoiseSchedule
from .score import ScoreNetwork, score_eval, score_vjp
from .seeding import STREAM_DATA, STREAM_SAMPLER, derive_rng, float_key

SIGMA_TILDE_MODES = ("beta", "posterior", "exact-ck")
NOISE_SCALINGS = ("sqrt-lambda-variance", "literal-alg1")
GUIDANCE_MODES = ("oracle-score", "dps")

MAX_STATE_NORM = 1e6


class SamplerDivergence(RuntimeError):
    """State blew up during reverse sampling."""


class SamplerConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ZetaSchedule:
    """Guidance weight as a function of lambda: (c0 + c1 * lambda) * multiplier.

    Constant over the step index; ``multiplier`` exists for guidance-weight
    sweeps at fixed lambda.
    """

    formula: str = "affine-lambda"
    c0: float = 1.0
    c1: float = 1.0
    multiplier: float = 1.0

    def __post_init__(self):
        if self.formula != "affine-lambda":
            raise SamplerConfigError(f"unknown zeta formula {self.formula!r}")

    def value(self, lam: float) -> float:
        v = (self.c0 + self.c1 * lam) * self.multiplier
        if v < 0:
            raise SamplerConfigError(f"zeta must be >= 0, got {v}")
        return v


@dataclass(frozen=True)
class SamplerConfig:
    lam: float = 1.0
    zeta: ZetaSchedule = field(default_factory=ZetaSchedule)
    sigma_tilde: str = "beta"
    noise_scaling: str = "sqrt-lambda-variance"
    guidance: str = "oracle-score"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise SamplerConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.sigma_tilde not in SIGMA_TILDE_MODES:
            raise SamplerConfigError(f"sigma_tilde must be one of {SIGMA_TILDE_MODES}")
        if self.noise_scaling not in NOISE_SCALINGS:
            raise SamplerConfigError(f"noise_scaling must be one of {NOISE_SCALINGS}")
        if self.guidance not in GUIDANCE_MODES:
            raise SamplerConfigError(f"guidance must be one of {GUIDANCE_MODES}")


@dataclass
class Trajectory:
    """States of one reverse pass, k = T down to 0 (states kept when recorded)."""

    ks: np.ndarray
    states: np.ndarray | None
    x0: np.ndarray
    config: SamplerConfig
    seed: int


# -- score sources ---------------------------------------------------------


class OracleGaussianScore:
    """Exact conditional score for a Gaussian posterior, with exact kernel noise.

    All diffused covariances share the eigenbasis of sigma_y, so scores and
    the exact reverse-kernel covariance square roots are diagonal in that
    basis.
    """

    def __init__(self, posterior: GaussianPosterior, schedule: NoiseSchedule):
        self.posterior = posterior
        self.schedule = schedule
        self.dim = posterior.dim
        self._eigvals, self._Q = np.linalg.eigh(posterior.sigma_y)

    def _sigma_eigs(self, k: int) -> np.ndarray:
        abar = self.schedule.alpha_bar[k]
        return (1.0 - abar) + abar * self._eigvals

    def score(self, x: np.ndarray, k: int) -> np.ndarray:
        mu_k = np.sqrt(self.schedule.alpha_bar[k]) * self.posterior.mu_y
        z = (x - mu_k) @ self._Q
        z /= self._sigma_eigs(k)
        return -(z @ self._Q.T)

    def exact_noise_sqrt(self, level: int) -> np.ndarray:
        """Matrix square root of the exact kernel covariance C_level."""
        b = self.schedule.beta[level + 1]
        s = self._sigma_eigs(level)
        c = b * s / ((1.0 - b) * s + b)
        return (self._Q * np.sqrt(c)) @ self._Q.T


class OracleMixtureScore:
    """Exact conditional score for the 1D mixture channel at a fixed y."""

    def __init__(self, model: MixtureModel, y: float, schedule: NoiseSchedule):
        self.model = model
        self.y = float(y)
        self.schedule = schedule
        self.dim = 1
        self._posterior: Mixture1D = mixture_posterior(model, y).mixture()

    def score(self, x: np.ndarray, k: int) -> np.ndarray:
        diffused = self._posterior.diffused(self.schedule, k)
        return diffused.score(x[:, 0])[:, None]


class DPSGuidedScore:
    """Learned prior score plus guidance from the measurement residual.

    ``y`` may be a single observation (shared by all rows) or one row per
    sample.  The guidance weight is fixed for the run's lambda.
    """

    def __init__(
        self,
        net: ScoreNetwork,
        model: MeasurementModel,
        y: np.ndarray,
        zeta_value: float,
        schedule: NoiseSchedule,
    ):
        self.net = net
        self.model = model
        self.y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        self.zeta_value = float(zeta_value)
        self.schedule = schedule
        self.dim = net.data_dim

    def score(self, x: np.ndarray, k: int) -> np.ndarray:
        s, guidance = self._score_and_guidance(x, k)
        return s + self.zeta_value * guidance

    def _score_and_guidance(self, x: np.ndarray, k: int):
        net, sched = self.net, self.schedule
        out, cache = net.forward(x, k, sched.T)
        abar = sched.alpha_bar[k]
        if net.parameterization == "score":
            s = out
        else:
            s = -out / np.sqrt(1.0 - abar)
        x0_hat = (x + (1.0 - abar) * s) / np.sqrt(abar)
        y = self.y if self.y.ndim == 2 else self.y[None, :]
        resid = y - self.model.apply(x0_hat)
        u = -2.0 * self.model.apply_transpose(resid)
        g = u if net.parameterization == "score" else -u / np.sqrt(1.0 - abar)
        vjp_score, _ = net.backward(g, cache, need_param_grads=False)
        grad = (u + (1.0 - abar) * vjp_score) / np.sqrt(abar)
        b = sched.beta[k]
        guidance = -(np.sqrt(sched.alpha[k]) / b) * grad
        return s, guidance


@dataclass(frozen=True)
class OracleScoreSpec:
    """Oracle mode: guidance is zero, the score is already conditional."""

    posterior: GaussianPosterior | MixtureModel
    y: float | None = None  # required for a MixtureModel posterior


@dataclass(frozen=True)
class LearnedScoreSpec:
    net: ScoreNetwork
    measurement: MeasurementModel


def bind_score_source(spec, y, config: SamplerConfig, schedule: NoiseSchedule):
    """Resolve a score-source spec and an observation into a per-run source."""
    if isinstance(spec, OracleScoreSpec):
        if isinstance(spec.posterior, GaussianPosterior):
            return OracleGaussianScore(spec.posterior, schedule)
        y_eff = y if y is not None else spec.y
        if y_eff is None:
            raise SamplerConfigError("mixture oracle requires an observation y")
        return OracleMixtureScore(spec.posterior, float(np.asarray(y_eff).reshape(())), schedule)
    if isinstance(spec, LearnedScoreSpec):
        if config.guidance != "dps":
            raise SamplerConfigError("learned mode requires guidance='dps'")
        if y is None:
            raise SamplerConfigError("learned mode requires an observation y")
        return DPSGuidedScore(spec.net, spec.measurement, y, config.zeta.value(config.lam), schedule)
    raise SamplerConfigError(f"unknown score source spec {type(spec).__name__}")


# -- core operations --------------------------------------------------------


def tweedie_x0(score: np.ndarray, x_k: np.ndarray, schedule: NoiseSchedule, k: int) -> np.ndarray:
    """Posterior-mean denoiser: (x_k + (1 - abar_k) score) / sqrt(abar_k)."""
    k = int(k)
    if not 1 <= k <= schedule.T:
        raise SamplerConfigError(f"need 1 <= k <= T, got {k}")
    abar = schedule.alpha_bar[k]
    return (np.asarray(x_k) + (1.0 - abar) * np.asarray(score)) / np.sqrt(abar)


def dps_guidance(
    net: ScoreNetwork,
    x_k: np.ndarray,
    k: int,
    y: np.ndarray,
    model: MeasurementModel,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """Guidance term -(sqrt(alpha_k)/(1-alpha_k)) grad_x ||y - A(x0_hat(x))||^2.

    x0_hat is the network-score denoiser, so the gradient runs through the
    network via its input VJP.
    """
    x2 = np.atleast_2d(np.asarray(x_k, dtype=np.float64))
    s = score_eval(net, x2, k, schedule)
    x0_hat = tweedie_x0(s, x2, schedule, k)
    y2 = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if y2.ndim == 1:
        y2 = y2[None, :]
    resid = y2 - model.apply(x0_hat)
    u = -2.0 * model.apply_transpose(resid)
    abar = schedule.alpha_bar[k]
    grad = (u + (1.0 - abar) * score_vjp(net, x2, k, schedule, u)) / np.sqrt(abar)
    out = -(np.sqrt(schedule.alpha[k]) / schedule.beta[k]) * grad
    return out if np.asarray(x_k).ndim == 2 else out[0]


def _sigma_tilde(config: SamplerConfig, score_source, schedule: NoiseSchedule, k: int):
    """Per-step reverse std at step k (scalar, or matrix for exact-ck)."""
    if config.sigma_tilde == "beta":
        return float(np.sqrt(schedule.beta[k]))
    if config.sigma_tilde == "posterior":
        denom = 1.0 - schedule.alpha_bar[k]
        return float(np.sqrt(schedule.beta[k] * (1.0 - schedule.alpha_bar[k - 1]) / denom))
    if not hasattr(score_source, "exact_noise_sqrt"):
        raise SamplerConfigError("sigma_tilde='exact-ck' needs an oracle Gaussian score source")
    return score_source.exact_noise_sqrt(k - 1)


def reverse_step(
    x_k: np.ndarray,
    k: int,
    config: SamplerConfig,
    score_source,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """One reverse transition x_k -> x_{k-1} on a row batch."""
    k = int(k)
    if not 1 <= k <= schedule.T:
        raise SamplerConfigError(f"need 1 <= k <= T, got {k}")
    x = np.atleast_2d(np.asarray(x_k, dtype=np.float64))
    s = score_source.score(x, k)
    drift = (x + (1.0 - schedule.alpha[k]) * s) / np.sqrt(schedule.alpha[k])
    lam_factor = np.sqrt(config.lam) if config.noise_scaling == "sqrt-lambda-variance" else config.lam
    if lam_factor > 0.0:
        z = rng.standard_normal(x.shape)
        st = _sigma_tilde(config, score_source, schedule, k)
        noise = z * st if np.isscalar(st) else z @ st.T
        out = drift + lam_factor * noise
    else:
        out = drift
    if np.max(np.abs(out)) > MAX_STATE_NORM:
        raise SamplerDivergence(f"state norm exceeded {MAX_STATE_NORM:g} at step {k}")
    return out if np.asarray(x_k).ndim == 2 else out[0]


def sample_endpoints(
    n: int,
    config: SamplerConfig,
    score_source,
    schedule: NoiseSchedule,
    record: bool = False,
):
    """Run n reverse chains in parallel; returns (endpoints, states or None).

    states, when recorded, has shape (T+1, n, d) ordered k = T..0.
    """
    rng = derive_rng(config.seed, STREAM_SAMPLER)
    x = rng.standard_normal((n, score_source.dim))
    states = [x.copy()] if record else None
    for k in range(schedule.T, 0, -1):
        x = reverse_step(x, k, config, score_source, schedule, rng)
        if record:
            states.append(x.copy())
    return x, (np.stack(states) if record else None)


def sample(y, config: SamplerConfig, score_spec, schedule: NoiseSchedule, record: bool = False) -> Trajectory:
    """Draw one reconstruction for observation y; optionally keep the path."""
    source = bind_score_source(score_spec, y, config, schedule)
    endpoints, states = sample_endpoints(1, config, source, schedule, record=record)
    ks = np.arange(schedule.T, -1, -1)
    return Trajectory(
        ks=ks,
        states=states[:, 0, :] if states is not None else None,
        x0=endpoints[0],
        config=config,
        seed=config.seed,
    )


# -- lambda sweeps -----------------------------------------------------------


@dataclass
class SweepResult:
    """Raw per-lambda sweep output, before flattening into DPPoint records."""

    lam: float
    seed: int
    n_samples: int
    endpoints: np.ndarray
    truth: np.ndarray
    reference: np.ndarray
    distortion: float
    perceptions: dict[str, float]
    degenerate: bool


class ConditionalSweepProblem:
    """Fixed-observation sweep: truth and reference are analytic posterior draws."""

    def __init__(self, posterior: GaussianPosterior | MixtureModel, y, schedule: NoiseSchedule):
        self.posterior = posterior
        self.y = y
        self.schedule = schedule
        if isinstance(posterior, GaussianPosterior):
            self.dim = posterior.dim
        else:
            self.dim = 1
            self._mix = mixture_posterior(posterior, float(y)).mixture()

    def score_spec(self):
        return OracleScoreSpec(posterior=self.posterior, y=self.y)

    def observations(self, n: int):
        return self.y

    def posterior_draws(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if isinstance(self.posterior, GaussianPosterior):
            L = np.linalg.cholesky(
                self.posterior.sigma_y + 1e-15 * np.eye(self.posterior.dim)
            )
            return self.posterior.mu_y + rng.standard_normal((n, self.posterior.dim)) @ L.T
        return self._mix.sample(n, rng)[:, None]

    truth_draws = posterior_draws
    reference_draws = posterior_draws


class PairedSweepProblem:
    """Paired test-set sweep: degrade data points, reconstruct each, compare clouds."""

    def __init__(
        self,
        sample_data,  # callable (n, rng) -> (n, d)
        measurement: MeasurementModel,
        net: ScoreNetwork,
        schedule: NoiseSchedule,
        seed: int,
    ):
        self.sample_data = sample_data
        self.measurement = measurement
        self.net = net
        self.schedule = schedule
        self.dim = net.data_dim
        self._seed = seed
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def score_spec(self):
        return LearnedScoreSpec(net=self.net, measurement=self.measurement)

    def _pairs(self, n: int):
        if n not in self._cache:
            x = self.sample_data(n, derive_rng(self._seed, STREAM_DATA, 1))
            noise = derive_rng(self._seed, STREAM_DATA, 2).standard_normal(
                self.measurement.apply(x).shape
            )
            y = self.measurement.apply(x) + self.measurement.sigma_n * noise
            self._cache[n] = (x, y)
        return self._cache[n]

    def observations(self, n: int):
        return self._pairs(n)[1]

    def truth_draws(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self._pairs(n)[0]

    def reference_draws(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_data(n, rng)


def _perceptions(endpoints, reference, kinds, perception_n):
    out: dict[str, float] = {}
    m = min(perception_n, endpoints.shape[0], reference.shape[0])
    e, r = endpoints[:m], reference[:m]
    degenerate = m < 2
    for kind in kinds:
        if degenerate:
            out[kind] = float("nan")
        elif kind == "w2":
            if endpoints.shape[1] == 1:
                out[kind] = metrics_mod.w2_empirical_1d(e[:, 0], r[:, 0])
            else:
                out[kind] = metrics_mod.w2_exact_small(e, r)
        elif kind == "kl":
            if endpoints.shape[1] != 1:
                raise SamplerConfigError("histogram KL is 1D-only; use 'kl-gauss' for 2D")
            out[kind] = metrics_mod.kl_estimate_1d(r[:, 0], e[:, 0])
        elif kind == "kl-gauss":
            out[kind] = metrics_mod.kl_gaussian_fit(r, e)
        else:
            raise SamplerConfigError(f"unknown perception metric {kind!r}")
    return out, degenerate


def sweep_lambda(
    lambdas,
    problem,
    n_samples: int,
    config_template: SamplerConfig,
    schedule: NoiseSchedule,
    perception_kinds=("w2",),
    perception_n: int = 1024,
    threads: int = 1,
) -> list[SweepResult]:
    """Reconstruct at each lambda and score distortion/perception.

    Each lambda is an independent task seeded by (master seed, lambda bits),
    so duplicated lambda entries reproduce identical records and thread
    scheduling cannot change results.
    """
    if n_samples < 1:
        raise SamplerConfigError("n_samples must be >= 1")
    lambdas = [float(l) for l in lambdas]
    for lam in lambdas:
        if not 0.0 <= lam <= 1.0:
            raise SamplerConfigError(f"lambda must lie in [0, 1], got {lam}")

    def one(lam: float) -> SweepResult:
        seed = config_template.seed
        cfg = replace(config_template, lam=lam, seed=seed)
        source = bind_score_source(
            problem.score_spec(), problem.observations(n_samples), cfg, schedule
        )
        rng = derive_rng(seed, STREAM_SAMPLER, float_key(lam))
        x = rng.standard_normal((n_samples, source.dim))
        for k in range(schedule.T, 0, -1):
            x = reverse_step(x, k, cfg, source, schedule, rng)
        truth = problem.truth_draws(n_samples, derive_rng(seed, STREAM_DATA, 3))
        reference = problem.reference_draws(
            max(perception_n, 2), derive_rng(seed, STREAM_DATA, 4, float_key(lam))
        )
        distortion = metrics_mod.mse_paired(x, truth)
        percs, degenerate = _perceptions(x, reference, perception_kinds, perception_n)
        return SweepResult(
            lam=lam,
            seed=seed,
            n_samples=n_samples,
            endpoints=x,
            truth=truth,
            reference=reference,
            distortion=distortion,
            perceptions=percs,
            degenerate=degenerate,
        )

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, lambdas))
    return [one(lam) for lam in lambdas]


def sweep_to_dppoints(results: list[SweepResult]) -> list[metrics_mod.DPPoint]:
    """Flatten sweep records into one DPPoint per (lambda, perception kind)."""
    points = []
    for r in results:
        for kind, value in r.perceptions.items():
            points.append(
                metrics_mod.DPPoint(
                    lam=r.lam,
                    distortion=r.distortion,
                    perception=value,
                    kind=kind.upper(),
                    n_samples=r.n_samples,
                    seed=r.seed,
                    degenerate=r.degenerate,
                )
            )
    return points
