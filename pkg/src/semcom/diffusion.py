"""Conditional denoising diffusion: schedule, forward noising, reverse
sampling, and denoiser training.

Conventions: model-range images live in [-1, 1]; `alpha_cum[t-1]` holds the
cumulative product of (1 - beta) up to step t (steps are 1-based). The
reverse chain uses the epsilon parameterization with fixed per-step
variance beta_t, and the final step (t=1) is deterministic.

Conditioning is by channel concatenation: the denoiser sees the noisy
image, the one-hot segmentation, the (possibly all-zero) edge channel, and
two scalar step-embedding planes. During training the edge channel is
dropped with probability p_drop so a single model serves both the coarse
pass (zero edge) and the refined pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadRange, Diverged, ShapeMismatch, StepOutOfRange
from .imgproc import one_hot
from .learner import AdamState, TinyNet, adam_step

DEFAULT_T = 200
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    t_steps: int
    beta: np.ndarray  # beta_1..beta_T
    alpha_cum: np.ndarray  # prod_{s<=t} (1 - beta_s)

    def beta_at(self, t: int) -> float:
        self.check_step(t)
        return float(self.beta[t - 1])

    def alpha_cum_at(self, t: int) -> float:
        self.check_step(t)
        return float(self.alpha_cum[t - 1])

    def check_step(self, t: int) -> None:
        if not 1 <= t <= self.t_steps:
            raise StepOutOfRange(f"step {t} outside 1..{self.t_steps}")


def make_schedule(
    t_steps: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Linear variance schedule; T=1 degenerates to beta_1 = beta_start."""
    if t_steps < 1:
        raise BadRange(f"T must be >= 1, got {t_steps}")
    if not (0 < beta_start <= beta_end < 1):
        raise BadRange(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if t_steps == 1:
        beta = np.array([beta_start], dtype=np.float64)
    else:
        beta = beta_start + (beta_end - beta_start) * np.arange(t_steps) / (t_steps - 1)
    return NoiseSchedule(t_steps, beta, np.cumprod(1.0 - beta))


def forward_sample(x0, t: int, sched: NoiseSchedule, rng) -> np.ndarray:
    """Draw x_t ~ N(sqrt(a_t) x0, (1 - a_t) I) directly (closed form)."""
    a = sched.alpha_cum_at(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = rng.standard_normal(x0.shape)
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


def forward_step(x_prev, t: int, sched: NoiseSchedule, rng) -> np.ndarray:
    """Single transition x_t ~ N(sqrt(1 - beta_t) x_{t-1}, beta_t I)."""
    b = sched.beta_at(t)
    x_prev = np.asarray(x_prev, dtype=np.float64)
    return np.sqrt(1.0 - b) * x_prev + np.sqrt(b) * rng.standard_normal(x_prev.shape)


def reverse_step(x_t, t: int, cond, denoiser, sched: NoiseSchedule, rng) -> np.ndarray:
    """One reverse transition; deterministic at t=1."""
    b = sched.beta_at(t)
    a = sched.alpha_cum_at(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = denoiser.denoise(x_t, t, cond)
    if np.shape(eps_hat) != x_t.shape:
        raise ShapeMismatch("denoiser output shape differs from input")
    mean = (x_t - (b / np.sqrt(1.0 - a)) * eps_hat) / np.sqrt(1.0 - b)
    if t == 1:
        return mean
    return mean + np.sqrt(b) * rng.standard_normal(x_t.shape)


def sample(shape, cond, sched: NoiseSchedule, denoiser, rng, rescale: bool = True):
    """Full reverse chain from x_T ~ N(0, I); optionally map to [0, 1]."""
    x = rng.standard_normal(shape)
    for t in range(sched.t_steps, 0, -1):
        x = reverse_step(x, t, cond, denoiser, sched, rng)
    x = np.clip(x, -1.0, 1.0)
    return (x + 1.0) / 2.0 if rescale else x


@dataclass(frozen=True)
class Condition:
    """Per-image conditioning; edge is all-zero for the coarse pass."""

    seg_onehot: np.ndarray  # H×W×K
    edge: np.ndarray  # H×W in {0,1}

    def __post_init__(self):
        seg = np.asarray(self.seg_onehot)
        edge = np.asarray(self.edge, dtype=np.float64)
        if seg.shape[:2] != edge.shape:
            raise ShapeMismatch("segmentation and edge dims differ")
        object.__setattr__(self, "seg_onehot", seg)
        object.__setattr__(self, "edge", edge)

    @staticmethod
    def from_seg(seg: np.ndarray, k: int, edge=None) -> "Condition":
        oh = one_hot(seg, k).tensor
        if edge is None:
            edge = np.zeros(seg.shape, dtype=np.uint8)
        edge_bits = np.asarray(getattr(edge, "bits", edge))
        return Condition(oh, edge_bits)

    def planes(self) -> np.ndarray:
        """(K+1, H, W) condition channels, float."""
        seg = self.seg_onehot.transpose(2, 0, 1).astype(np.float64)
        return np.concatenate([seg, self.edge[None, :, :]], axis=0)


class ZeroDenoiser:
    """Predicts zero noise; cheap stand-in when pixels do not matter."""

    def denoise(self, x_t, t, cond):
        return np.zeros_like(x_t)


class AnalyticGMDenoiser:
    """Exact posterior-mean denoiser for x0 ~ sum_i pi_i N(m_i, s^2 I).

    With x_t = sqrt(a) x0 + sqrt(1-a) eps, the component-conditional laws
    stay Gaussian, so E[x0 | x_t] has a closed form; the implied noise
    estimate is eps = (x_t - sqrt(a) E[x0|x_t]) / sqrt(1-a). Used to
    validate the reverse chain independently of any learning.
    """

    def __init__(self, means, weights, s: float, sched: NoiseSchedule):
        self.means = np.asarray(means, dtype=np.float64)  # (M, D)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.s2 = float(s) ** 2
        self.sched = sched
        if not np.isclose(self.weights.sum(), 1.0):
            raise BadRange("mixture weights must sum to 1")

    def posterior_mean_x0(self, x_t, t: int) -> np.ndarray:
        a = self.sched.alpha_cum_at(t)
        x = np.asarray(x_t, dtype=np.float64)
        flat = x.reshape(-1, self.means.shape[1])  # (N, D)
        var_t = a * self.s2 + (1.0 - a)  # marginal var of x_t per component
        diff = flat[:, None, :] - np.sqrt(a) * self.means[None, :, :]
        log_resp = -0.5 * (diff**2).sum(axis=2) / var_t + np.log(self.weights)[None, :]
        log_resp -= log_resp.max(axis=1, keepdims=True)
        resp = np.exp(log_resp)
        resp /= resp.sum(axis=1, keepdims=True)
        # E[x0 | x_t, comp i] = m_i + (sqrt(a) s^2 / var_t)(x_t - sqrt(a) m_i)
        gain = np.sqrt(a) * self.s2 / var_t
        cond_mean = self.means[None, :, :] + gain * diff
        return (resp[:, :, None] * cond_mean).sum(axis=1).reshape(x.shape)

    def denoise(self, x_t, t, cond):
        a = self.sched.alpha_cum_at(t)
        x = np.asarray(x_t, dtype=np.float64)
        return (x - np.sqrt(a) * self.posterior_mean_x0(x, t)) / np.sqrt(1.0 - a)


def denoiser_arch(k_classes: int, hidden=(24, 24)):
    """Plain conv stack; input = 3 + K + 1 condition + 2 step planes."""
    c_in = 3 + k_classes + 1 + 2
    layers = [("conv", 3, c_in, hidden[0]), ("silu",)]
    for a, b in zip(hidden, hidden[1:]):
        layers += [("conv", 3, a, b), ("silu",)]
    layers.append(("conv", 3, hidden[-1], 3))
    return tuple(layers)


class LearnedDenoiser:
    """TinyNet noise predictor conditioned via channel concatenation."""

    def __init__(self, k_classes: int, sched: NoiseSchedule, hidden=(24, 24), seed=0):
        self.k_classes = k_classes
        self.sched = sched
        self.hidden = tuple(hidden)
        self.net = TinyNet(denoiser_arch(k_classes, hidden), seed=seed, dtype=np.float32)
        # zero-init the output projection: the fresh model predicts zero
        # noise, so the initial loss sits at the unit target variance
        self.net.layers[-1].weight[...] = 0.0

    def _step_planes(self, t, h, w, n):
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        rel = t_arr / self.sched.t_steps
        sig = np.sqrt(1.0 - self.sched.alpha_cum[(t_arr - 1).astype(np.int64)])
        planes = np.empty((n, 2, h, w), dtype=np.float32)
        planes[:, 0] = rel[:, None, None]
        planes[:, 1] = sig[:, None, None]
        return planes

    def assemble(self, x_t, t, cond_planes) -> np.ndarray:
        """(N,3,H,W) noisy + (N,K+1,H,W) condition + step planes."""
        n, _, h, w = x_t.shape
        steps = self._step_planes(t, h, w, n)
        return np.concatenate(
            [x_t.astype(np.float32), cond_planes.astype(np.float32), steps], axis=1
        )

    def denoise_batch(self, x_t, t, cond_planes) -> np.ndarray:
        out, _ = self.net.forward(self.assemble(x_t, t, cond_planes))
        return out

    def denoise(self, x_t, t, cond: Condition):
        x = np.asarray(x_t, dtype=np.float32)
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        planes = cond.planes()[None].repeat(x.shape[0], axis=0)
        out = self.denoise_batch(x, t, planes)
        return (out[0] if squeeze else out).astype(np.float64)


@dataclass
class DenoiserTrainConfig:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 16
    steps: int = 2000
    p_drop: float = 0.5
    seed: int = 0
    hidden: tuple = (24, 24)
    val_fraction: float = 0.1
    log_every: int = 100


def _stack_dataset(dataset, k_classes):
    images, planes = [], []
    for image, seg, edge in dataset:
        img = np.asarray(image, dtype=np.float32)
        if img.ndim == 3 and img.shape[2] == 3:
            img = img.transpose(2, 0, 1)
        images.append(img * 2.0 - 1.0)
        cond = Condition.from_seg(np.asarray(seg), k_classes, edge)
        planes.append(cond.planes().astype(np.float32))
    return np.stack(images), np.stack(planes)


def train_denoiser(
    dataset,
    sched: NoiseSchedule,
    k_classes: int,
    config: DenoiserTrainConfig | None = None,
    log=None,
    init_from=None,
) -> LearnedDenoiser:
    """Noise-prediction MSE over uniform steps with edge-channel dropout."""
    if not len(dataset):
        raise Diverged("empty dataset")
    config = config or DenoiserTrainConfig()
    model = LearnedDenoiser(k_classes, sched, hidden=config.hidden, seed=config.seed)
    if init_from is not None:
        from .learner import checkpoint_load

        checkpoint_load(model.net, init_from)
    x0, cond_planes = _stack_dataset(dataset, k_classes)

    n_val = int(len(x0) * config.val_fraction)
    train_ids = np.arange(len(x0) - n_val)
    val_ids = np.arange(len(x0) - n_val, len(x0))

    rng = np.random.default_rng(np.random.PCG64(config.seed + 17))
    params = model.net.parameters()
    state = AdamState()
    edge_plane = k_classes  # index of the edge channel inside cond planes

    for step in range(config.steps):
        idx = rng.choice(train_ids, size=min(config.batch_size, len(train_ids)), replace=True)
        batch_x0 = x0[idx]
        planes = cond_planes[idx].copy()
        drop = rng.random(len(idx)) < config.p_drop
        planes[drop, edge_plane] = 0.0
        t = rng.integers(1, sched.t_steps + 1, size=len(idx))
        a = sched.alpha_cum[t - 1][:, None, None, None]
        eps = rng.standard_normal(batch_x0.shape)
        x_t = np.sqrt(a) * batch_x0 + np.sqrt(1.0 - a) * eps
        pred, caches = model.net.forward(model.assemble(x_t, t, planes))
        diff = pred.astype(np.float64) - eps
        loss = float((diff**2).mean())
        if not np.isfinite(loss):
            raise Diverged(f"training loss became non-finite at step {step}")
        if config.lr > 0:
            grads = model.net.backward(caches, (2.0 / diff.size) * diff)
            adam_step(params, grads, state, config.lr, config.betas, config.eps)
        if log is not None and step % config.log_every == 0:
            log(step, loss)

    if len(val_ids) and log is not None:
        log("val", validation_mse(model, x0[val_ids], cond_planes[val_ids], sched, seed=1))
    return model


def validation_mse(model, x0, cond_planes, sched, seed=0) -> float:
    """Noise-prediction MSE on held-out images at stratified steps."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    t = rng.integers(1, sched.t_steps + 1, size=len(x0))
    a = sched.alpha_cum[t - 1][:, None, None, None]
    eps = rng.standard_normal(x0.shape)
    x_t = np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps
    pred = model.denoise_batch(x_t, t, cond_planes)
    return float(((pred - eps) ** 2).mean())
