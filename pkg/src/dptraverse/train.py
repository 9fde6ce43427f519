"""Training loop for the score network.

Each step draws a fresh batch from the data source and applies one
adaptive-moment update on the denoising score-matching loss.  All
randomness at step ``s`` comes from a generator derived from
(seed, STREAM_TRAIN, s), so runs are replayable and a resumed run follows
the exact trajectory of an uninterrupted one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import score as score_mod
from .schedule import NoiseSchedule
from .score import ScoreNetwork, TrainingDivergence, dsm_loss_and_grad
from .seeding import STREAM_TRAIN, derive_rng


@dataclass
class TrainConfig:
    steps: int = 50_000
    batch_size: int = 256
    lr: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    hidden: int = score_mod.DEFAULT_HIDDEN
    time_embed_dim: int = score_mod.DEFAULT_TIME_EMBED
    checkpoint_path: str | None = None
    checkpoint_interval: int = 10_000
    log_interval: int = 200
    # wall_ms in the log is 0 unless enabled; measured timing breaks
    # byte-exact replay of the training log
    record_timing: bool = False

    def __post_init__(self):
        if self.steps < 0 or self.batch_size <= 0:
            raise ValueError("steps must be >= 0 and batch_size positive")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")


class Adam:
    """Adaptive-moment gradient descent with standard decay constants."""

    def __init__(self, params: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


@dataclass
class TrainResult:
    net: ScoreNetwork
    log: list[tuple[int, float, int]] = field(default_factory=list)  # (step, loss, wall_ms)
    final_loss: float = float("nan")


def train(
    config: TrainConfig,
    dataset,
    schedule: NoiseSchedule,
    data_dim: int,
    resume_from: str | None = None,
) -> TrainResult:
    """Train a score network on samples from ``dataset(n, rng) -> (n, d)``.

    Checkpoints (with optimizer state) are written to
    ``config.checkpoint_path`` every ``checkpoint_interval`` steps and at the
    end.  Loss rows are recorded every ``log_interval`` steps as the mean
    loss over the interval.
    """
    if resume_from is not None:
        net, manifest, opt_state = score_mod.load_checkpoint(resume_from)
        start_step = manifest["step"]
        opt = Adam(net.params(), lr=config.lr)
        if opt_state is not None:
            opt.m, opt.v = opt_state
        opt.t = start_step
    else:
        net = ScoreNetwork(
            data_dim,
            hidden=config.hidden,
            time_embed_dim=config.time_embed_dim,
            init_seed=config.seed,
        )
        start_step = 0
        opt = Adam(net.params(), lr=config.lr)

    result = TrainResult(net=net)
    t0 = time.monotonic()
    interval_losses: list[float] = []
    loss = float("nan")
    for step in range(start_step + 1, config.steps + 1):
        rng = derive_rng(config.seed, STREAM_TRAIN, step)
        batch = dataset(config.batch_size, rng)
        try:
            loss, grads = dsm_loss_and_grad(net, batch, schedule, rng)
        except TrainingDivergence as exc:
            raise TrainingDivergence(f"training diverged at step {step}: {exc}") from exc
        opt.step(net.params(), grads)
        interval_losses.append(loss)
        if step % config.log_interval == 0 or step == config.steps:
            wall_ms = int((time.monotonic() - t0) * 1000) if config.record_timing else 0
            result.log.append((step, float(np.mean(interval_losses)), wall_ms))
            interval_losses = []
        if config.checkpoint_path is not None and (
            step % config.checkpoint_interval == 0 or step == config.steps
        ):
            score_mod.save_checkpoint(
                config.checkpoint_path, net, seed=config.seed, step=step, optimizer_state=(opt.m, opt.v)
            )
    if config.steps == 0 and config.checkpoint_path is not None:
        score_mod.save_checkpoint(config.checkpoint_path, net, seed=config.seed, step=0, optimizer_state=(opt.m, opt.v))
    result.final_loss = loss
    return result
