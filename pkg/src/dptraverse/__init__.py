"""Traverse the distortion-perception tradeoff of denoising inverse problems
with a single score model and a variance-scaled reverse diffusion sampler."""

from .schedule import MeasurementModel, NoiseSchedule, ScheduleError, build_schedule, forward_sample
from .oracles import (
    GaussianPosterior,
    MarginalMoments,
    Mixture1D,
    MixtureModel,
    MixturePosterior,
    ReverseKernelParams,
    diffused_conditional_moments,
    diffused_mixture_score,
    gaussian_conditional_score,
    gaussian_posterior,
    mixture_posterior,
    mmse_estimate,
    reverse_kernel_params,
    scaled_marginal_moments_closed_form,
    scaled_marginal_moments_recursion,
)
from .score import (
    ScoreNetwork,
    dsm_loss_and_grad,
    load_checkpoint,
    save_checkpoint,
    score_eval,
    score_vjp,
)
from .train import Adam, TrainConfig, TrainResult, train
from .sampler import (
    DPSGuidedScore,
    LearnedScoreSpec,
    OracleGaussianScore,
    OracleMixtureScore,
    OracleScoreSpec,
    SamplerConfig,
    SamplerDivergence,
    Trajectory,
    ZetaSchedule,
    dps_guidance,
    reverse_step,
    sample,
    sample_endpoints,
    sweep_lambda,
    sweep_to_dppoints,
    tweedie_x0,
)
from .metrics import (
    DPPoint,
    achievability_curve,
    kl_estimate_1d,
    kl_gaussian_fit,
    mse_paired,
    optimal_dp_curve,
    w2_empirical_1d,
    w2_exact_small,
    w2_gaussian,
)
from .datasets import DatasetSpec, degrade, generate, load_samples_csv, save_samples_csv

__version__ = "0.1.0"
