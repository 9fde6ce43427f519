"""Time-conditioned perceptron approximating the score of diffused data.

Three blocks: one perceptron block on the point x, one on a sinusoidal
embedding of the step index k, and a fusion block on their concatenation.
The network is trained as a noise predictor (epsilon parameterization);
``score_eval`` converts to a score via score = -eps_hat / sqrt(1 - abar_k).
A "score" parameterization flag is supported, in which the raw output is
the score itself.

Checkpoints are a one-line JSON manifest followed by the flat little-endian
float64 parameter arrays in declared order (optimizer moments appended when
saved with optimizer state); round-trips are bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .nn import Activation, Chain, Linear, mlp_block, param_count
from .schedule import NoiseSchedule
from .seeding import STREAM_INIT, derive_rng

PARAMETERIZATIONS = ("epsilon", "score")
CHECKPOINT_VERSION = 1

# Default widths; for data_dim=2 they give 26498 parameters.
DEFAULT_HIDDEN = 64
DEFAULT_TIME_EMBED = 84


class ScoreModelError(ValueError):
    pass


def time_features(k, T: int, dim: int) -> np.ndarray:
    """Sinusoidal features of the step index, shape (n, dim)."""
    k = np.atleast_1d(np.asarray(k, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = k[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class ScoreNetwork:
    """MLP-block score model; all arrays float64, batch-first."""

    def __init__(
        self,
        data_dim: int,
        hidden: int = DEFAULT_HIDDEN,
        time_embed_dim: int = DEFAULT_TIME_EMBED,
        parameterization: str = "epsilon",
        init_seed: int = 0,
    ):
        if parameterization not in PARAMETERIZATIONS:
            raise ScoreModelError(f"unknown parameterization {parameterization!r}")
        if time_embed_dim % 2 != 0:
            raise ScoreModelError("time_embed_dim must be even")
        self.data_dim = data_dim
        self.hidden = hidden
        self.time_embed_dim = time_embed_dim
        self.parameterization = parameterization
        self.init_seed = int(init_seed)
        rng = derive_rng(self.init_seed, STREAM_INIT)
        self.x_block = mlp_block(data_dim, hidden, hidden, rng)
        self.t_block = mlp_block(time_embed_dim, hidden, hidden, rng)
        self.fusion = Chain(
            [
                Linear(2 * hidden, hidden, rng),
                Activation(),
                Linear(hidden, hidden, rng),
                Activation(),
                Linear(hidden, data_dim, rng),
            ]
        )

    # -- parameters ----------------------------------------------------

    def params(self) -> list[np.ndarray]:
        return self.x_block.params() + self.t_block.params() + self.fusion.params()

    def param_count(self) -> int:
        return param_count(self)

    def set_params(self, values: list[np.ndarray]) -> None:
        own = self.params()
        if len(values) != len(own):
            raise ScoreModelError("parameter list length mismatch")
        for dst, src in zip(own, values):
            if dst.shape != src.shape:
                raise ScoreModelError(f"shape mismatch {dst.shape} vs {src.shape}")
            dst[...] = src

    # -- forward / backward --------------------------------------------

    def forward(self, x: np.ndarray, k, T: int):
        """Raw network output (eps_hat or score, per parameterization flag)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n = x.shape[0]
        emb = time_features(k, T, self.time_embed_dim)
        if emb.shape[0] == 1 and n > 1:
            emb = np.broadcast_to(emb, (n, self.time_embed_dim))
        hx, cx = self.x_block.forward(x)
        ht, ct = self.t_block.forward(emb)
        out, cf = self.fusion.forward(np.concatenate([hx, ht], axis=1))
        return out, (cx, ct, cf)

    def backward(self, g: np.ndarray, cache, *, need_param_grads: bool = True):
        """Cotangent pullback: returns (d_input, param_grads or None)."""
        cx, ct, cf = cache
        gh, gf = self.fusion.backward(g, cf)
        gx, gt = gh[:, : self.hidden], gh[:, self.hidden :]
        dx, gxp = self.x_block.backward(gx, cx)
        if not need_param_grads:
            return dx, None
        _, gtp = self.t_block.backward(gt, ct)
        return dx, gxp + gtp + gf

    # -- epsilon form, shared by training and score conversion ----------

    def eps_output(self, x: np.ndarray, k, schedule: NoiseSchedule):
        """Noise-prediction view of the output, with its cache and scale.

        Returns (eps_hat, cache, out_to_eps_scale) where the scale maps a
        cotangent on eps_hat back onto the raw output.
        """
        out, cache = self.forward(x, k, schedule.T)
        if self.parameterization == "epsilon":
            return out, cache, 1.0
        sig = np.sqrt(1.0 - schedule.alpha_bar[np.atleast_1d(k)])[:, None]
        return -out * sig, cache, -sig


def score_eval(net: ScoreNetwork, x: np.ndarray, k, schedule: NoiseSchedule) -> np.ndarray:
    """Score estimate of the diffused marginal at step k; k >= 1."""
    k_arr = np.atleast_1d(np.asarray(k))
    if np.any(k_arr < 1) or np.any(k_arr > schedule.T):
        raise ScoreModelError(
            "score evaluation requires 1 <= k <= T (abar_0 = 1 makes the "
            "epsilon-to-score conversion singular at k = 0)"
        )
    out, _ = net.forward(x, k_arr, schedule.T)
    if net.parameterization == "score":
        res = out
    else:
        res = -out / np.sqrt(1.0 - schedule.alpha_bar[k_arr])[:, None]
    return res if np.asarray(x).ndim == 2 else res[0]


def score_vjp(
    net: ScoreNetwork, x: np.ndarray, k, schedule: NoiseSchedule, cotangent: np.ndarray
) -> np.ndarray:
    """v^T (d score / d x) for cotangent v; batched over rows."""
    k_arr = np.atleast_1d(np.asarray(k))
    if np.any(k_arr < 1) or np.any(k_arr > schedule.T):
        raise ScoreModelError("score VJP requires 1 <= k <= T")
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    v = np.atleast_2d(np.asarray(cotangent, dtype=np.float64))
    if v.shape != (x2.shape[0], net.data_dim):
        raise ScoreModelError(f"cotangent shape {v.shape} does not match {x2.shape}")
    _, cache = net.forward(x2, k_arr, schedule.T)
    if net.parameterization == "score":
        g = v
    else:
        g = -v / np.sqrt(1.0 - schedule.alpha_bar[k_arr])[:, None]
    dx, _ = net.backward(g, cache, need_param_grads=False)
    return dx if np.asarray(x).ndim == 2 else dx[0]


def dsm_loss_and_grad(
    net: ScoreNetwork,
    batch: np.ndarray,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
):
    """Denoising score-matching loss and parameter gradients on one batch.

    Per row: k ~ Uniform{1..T}, eps ~ N(0, I); the loss is the batch mean of
    ||eps_hat(sqrt(abar_k) x0 + sqrt(1-abar_k) eps, k) - eps||^2.
    """
    x0 = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if x0.size == 0:
        raise ScoreModelError("empty batch")
    if not np.all(np.isfinite(x0)):
        raise ScoreModelError("batch contains non-finite entries")
    n = x0.shape[0]
    k = rng.integers(1, schedule.T + 1, size=n)
    eps = rng.standard_normal(x0.shape)
    abar = schedule.alpha_bar[k][:, None]
    xk = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps
    eps_hat, cache, scale = net.eps_output(xk, k, schedule)
    diff = eps_hat - eps
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    if not np.isfinite(loss):
        raise TrainingDivergence(f"non-finite loss {loss}")
    g = (2.0 / n) * diff * scale
    _, grads = net.backward(g, cache)
    return loss, grads


class TrainingDivergence(RuntimeError):
    """Loss or state became non-finite during training."""


# -- checkpoint I/O ------------------------------------------------------


def _manifest(net: ScoreNetwork, seed: int, step: int, with_optimizer: bool) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "data_dim": net.data_dim,
        "hidden": net.hidden,
        "time_embed_dim": net.time_embed_dim,
        "parameterization": net.parameterization,
        "param_shapes": [list(p.shape) for p in net.params()],
        "param_count": net.param_count(),
        "optimizer_state": bool(with_optimizer),
        "seed": int(seed),
        "step": int(step),
    }


def save_checkpoint(
    path,
    net: ScoreNetwork,
    seed: int = 0,
    step: int = 0,
    optimizer_state: tuple[list[np.ndarray], list[np.ndarray]] | None = None,
) -> None:
    manifest = _manifest(net, seed, step, optimizer_state is not None)
    arrays = list(net.params())
    if optimizer_state is not None:
        m, v = optimizer_state
        arrays += list(m) + list(v)
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (net, manifest, optimizer_state_or_None)."""
    with open(path, "rb") as fh:
        header = fh.readline()
        blob = fh.read()
    manifest = json.loads(header.decode("utf-8"))
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise ScoreModelError(f"unsupported checkpoint version {manifest.get('format_version')}")
    net = ScoreNetwork(
        data_dim=manifest["data_dim"],
        hidden=manifest["hidden"],
        time_embed_dim=manifest["time_embed_dim"],
        parameterization=manifest["parameterization"],
    )
    shapes = [tuple(s) for s in manifest["param_shapes"]]
    own = [tuple(p.shape) for p in net.params()]
    if shapes != own:
        raise ScoreModelError("checkpoint layer shapes do not match architecture")
    n_copies = 3 if manifest["optimizer_state"] else 1
    sizes = [int(np.prod(s)) for s in shapes]
    expect = sum(sizes) * n_copies * 8
    if len(blob) != expect:
        raise ScoreModelError(f"checkpoint payload has {len(blob)} bytes, expected {expect}")
    flat = np.frombuffer(blob, dtype="<f8")
    groups = []
    off = 0
    for _ in range(n_copies):
        arrs = []
        for shape, size in zip(shapes, sizes):
            arrs.append(flat[off : off + size].reshape(shape).copy())
            off += size
        groups.append(arrs)
    net.set_params(groups[0])
    opt = (groups[1], groups[2]) if manifest["optimizer_state"] else None
    return net, manifest, opt
