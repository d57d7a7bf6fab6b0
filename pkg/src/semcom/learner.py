"""Minimal trainable-network substrate with hand-derived gradients.

A fixed layer vocabulary (conv, pointwise nonlinearities, 2x pooling and
upsampling, global average pooling, dense) instead of general autodiff:
every backward pass is written out by hand and checked against central
finite differences in the test suite. Used by both the attention
classifier and the diffusion denoiser.

Tensor layout is (N, C, H, W); dense layers take (N, C).
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import BadVersion, Diverged, IoFailure, ShapeMismatch

CHECKPOINT_MAGIC = b"TNCK"
CHECKPOINT_VERSION = 1


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Conv2D:
    """k×k convolution, stride 1, zero 'same' padding, with bias.

    Forward lowers to a single GEMM on an im2col matrix; the matrix is
    cached so backward reuses it for the weight gradient and lowers the
    input gradient to one more GEMM plus a 9-slice scatter-add.
    """

    def __init__(self, k, c_in, c_out, rng, dtype):
        if k % 2 == 0:
            raise ShapeMismatch("conv kernels must have odd size")
        self.k, self.c_in, self.c_out = k, c_in, c_out
        scale = np.sqrt(2.0 / (c_in * k * k))
        self.weight = (rng.standard_normal((c_out, c_in, k, k)) * scale).astype(dtype)
        self.bias = np.zeros(c_out, dtype=dtype)
        self.params = [self.weight, self.bias]

    def descriptor(self):
        return ("conv", self.k, self.c_in, self.c_out)

    def _im2col(self, x):
        n, c, h, w = x.shape
        p = self.k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (self.k, self.k), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * self.k * self.k)
        return np.ascontiguousarray(cols)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeMismatch(f"conv expected (N,{self.c_in},H,W), got {x.shape}")
        n, _, h, w = x.shape
        cols = self._im2col(x)
        y = cols @ self.weight.reshape(self.c_out, -1).T + self.bias
        y = np.ascontiguousarray(y.reshape(n, h, w, self.c_out).transpose(0, 3, 1, 2))
        return y, (cols, x.shape)

    def backward(self, dy, cache):
        cols, (n, c, h, w) = cache
        dy_mat = dy.transpose(0, 2, 3, 1).reshape(n * h * w, self.c_out)
        dw = (dy_mat.T @ cols).reshape(self.weight.shape)
        db = dy_mat.sum(axis=0)
        dcols = dy_mat @ self.weight.reshape(self.c_out, -1)  # (n*h*w, c*k*k)
        dcols = dcols.reshape(n, h, w, c, self.k, self.k)
        p = self.k // 2
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dy.dtype)
        for di in range(self.k):
            for dj in range(self.k):
                dxp[:, :, di : di + h, dj : dj + w] += dcols[:, :, :, :, di, dj].transpose(
                    0, 3, 1, 2
                )
        dx = dxp[:, :, p : p + h, p : p + w] if p else dxp
        return dx, [dw.astype(self.weight.dtype), db.astype(self.bias.dtype)]


class ReLU:
    params: list = []

    def descriptor(self):
        return ("relu",)

    def forward(self, x):
        return np.maximum(x, 0), x

    def backward(self, dy, x):
        return dy * (x > 0), []


class SiLU:
    """x * sigmoid(x); smooth, so finite-difference checks are clean."""

    params: list = []

    def descriptor(self):
        return ("silu",)

    def forward(self, x):
        s = _sigmoid(x)
        return x * s, (x, s)

    def backward(self, dy, cache):
        x, s = cache
        return dy * (s * (1.0 + x * (1.0 - s))), []


class Tanh:
    params: list = []

    def descriptor(self):
        return ("tanh",)

    def forward(self, x):
        y = np.tanh(x)
        return y, y

    def backward(self, dy, y):
        return dy * (1.0 - y * y), []


class AvgPool2:
    """2×2 average pooling, stride 2; spatial dims must be even."""

    params: list = []

    def descriptor(self):
        return ("avgpool2",)

    def forward(self, x):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeMismatch(f"avgpool2 needs even dims, got {h}x{w}")
        y = x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
        return y, x.shape

    def backward(self, dy, shape):
        n, c, h, w = shape
        dx = np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) * 0.25
        return dx.astype(dy.dtype), []


class Upsample2:
    """Nearest-neighbor 2× upsampling."""

    params: list = []

    def descriptor(self):
        return ("upsample2",)

    def forward(self, x):
        return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3), x.shape

    def backward(self, dy, shape):
        n, c, h, w = shape
        dx = dy.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))
        return dx, []


class GlobalAvgPool:
    params: list = []

    def descriptor(self):
        return ("gap",)

    def forward(self, x):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, dy, shape):
        n, c, h, w = shape
        return np.broadcast_to(dy[:, :, None, None], shape).copy() / (h * w), []


class Dense:
    def __init__(self, c_in, c_out, rng, dtype):
        self.c_in, self.c_out = c_in, c_out
        scale = np.sqrt(1.0 / c_in)
        self.weight = (rng.standard_normal((c_out, c_in)) * scale).astype(dtype)
        self.bias = np.zeros(c_out, dtype=dtype)
        self.params = [self.weight, self.bias]

    def descriptor(self):
        return ("dense", self.c_in, self.c_out)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.c_in:
            raise ShapeMismatch(f"dense expected (N,{self.c_in}), got {x.shape}")
        return x @ self.weight.T + self.bias, x

    def backward(self, dy, x):
        dw = dy.T @ x
        db = dy.sum(axis=0)
        return dy @ self.weight, [dw.astype(self.weight.dtype), db]


_LAYER_BUILDERS = {
    "conv": lambda d, rng, dt: Conv2D(d[1], d[2], d[3], rng, dt),
    "relu": lambda d, rng, dt: ReLU(),
    "silu": lambda d, rng, dt: SiLU(),
    "tanh": lambda d, rng, dt: Tanh(),
    "avgpool2": lambda d, rng, dt: AvgPool2(),
    "upsample2": lambda d, rng, dt: Upsample2(),
    "gap": lambda d, rng, dt: GlobalAvgPool(),
    "dense": lambda d, rng, dt: Dense(d[1], d[2], rng, dt),
}


class TinyNet:
    """Ordered layers built from descriptor tuples; see _LAYER_BUILDERS."""

    def __init__(self, descriptors, seed=0, dtype=np.float32):
        self.descriptors = tuple(tuple(d) for d in descriptors)
        self.seed = seed
        self.dtype = dtype
        rng = np.random.default_rng(np.random.PCG64(seed))
        self.layers = []
        for d in self.descriptors:
            if d[0] not in _LAYER_BUILDERS:
                raise ShapeMismatch(f"unknown layer kind {d[0]!r}")
            self.layers.append(_LAYER_BUILDERS[d[0]](d, rng, dtype))

    def arch_digest(self) -> bytes:
        return hashlib.sha256(repr(self.descriptors).encode()).digest()

    def parameters(self):
        return [p for layer in self.layers for p in layer.params]

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward(self, x):
        x = np.asarray(x, dtype=self.dtype)
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, caches, dout):
        """Returns per-parameter gradients in parameters() order."""
        if len(caches) != len(self.layers):
            raise ShapeMismatch("cache does not match network depth")
        grads_rev = []
        dy = np.asarray(dout, dtype=self.dtype)
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy, g = layer.backward(dy, cache)
            grads_rev.append(g)
        grads = []
        for g in reversed(grads_rev):
            grads.extend(g)
        return grads


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    """In-place adaptive-moment update with bias correction."""
    if len(params) != len(grads):
        raise ShapeMismatch("params/grads length mismatch")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    b1, b2 = betas
    state.step += 1
    t = state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeMismatch(f"grad shape {g.shape} != param shape {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def bce_with_logits(logits, targets):
    """Mean binary cross entropy; returns (loss, dloss/dlogits)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    grad = (_sigmoid(z) - y) / z.size
    return float(loss.mean()), grad.astype(logits.dtype)


def average_precision(scores, labels) -> float:
    """Area under the precision-recall steps; 1.0 when no positives exist."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    rel = np.asarray(labels)[order]
    n_pos = int(rel.sum())
    if n_pos == 0:
        return 1.0
    hits = np.cumsum(rel)
    precision = hits / (np.arange(len(rel)) + 1)
    return float((precision * rel).sum() / n_pos)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 12
    seed: int = 0
    val_fraction: float = 0.2


@dataclass
class ClassifierModel:
    """Presence classifier whose tail is GAP then a dense head.

    The final conv activations F and the dense weight rows are the inputs
    of the class-activation computation downstream.
    """

    net: TinyNet
    k_classes: int
    val_ap: np.ndarray | None = None

    def logits(self, images):
        out, _ = self.net.forward(images)
        return out

    def scores(self, images):
        return _sigmoid(self.logits(images))

    def feature_maps(self, image):
        """Final conv-stage activations for one H×W×3 image -> (H',W',L)."""
        x = np.asarray(image, dtype=self.net.dtype).transpose(2, 0, 1)[None]
        gap_at = max(
            i for i, layer in enumerate(self.net.layers) if isinstance(layer, GlobalAvgPool)
        )
        for layer in self.net.layers[:gap_at]:
            x, _ = layer.forward(x)
        return x[0].transpose(1, 2, 0)

    def class_weights(self, class_id: int) -> np.ndarray:
        dense = self.net.layers[-1]
        if not isinstance(dense, Dense):
            raise ShapeMismatch("classifier must end with a dense head")
        return dense.weight[class_id].astype(np.float64)


def classifier_arch(k_classes: int, channels=(8, 16, 16)):
    c1, c2, c3 = channels
    return (
        ("conv", 3, 3, c1),
        ("relu",),
        ("avgpool2",),
        ("conv", 3, c1, c2),
        ("relu",),
        ("avgpool2",),
        ("conv", 3, c2, c3),
        ("relu",),
        ("gap",),
        ("dense", c3, k_classes),
    )


def presence_labels(bundles, k_classes: int) -> np.ndarray:
    return np.stack(
        [(b.class_counts > 0).astype(np.float64) for b in bundles]
    ).astype(np.float32)[:, :k_classes]


def train_classifier(bundles, labels, config: TrainConfig | None = None) -> ClassifierModel:
    """Multi-label presence training with BCE; deterministic per seed."""
    if not len(bundles):
        raise Diverged("empty dataset")
    config = config or TrainConfig()
    k = labels.shape[1]
    net = TinyNet(classifier_arch(k), seed=config.seed, dtype=np.float32)
    images = np.stack([b.image for b in bundles]).transpose(0, 3, 1, 2).astype(np.float32)
    labels = np.asarray(labels, dtype=np.float32)

    if config.val_fraction <= 0 or len(bundles) < 2:
        n_val = 0
    else:
        n_val = max(1, int(len(bundles) * config.val_fraction))
    train_x, val_x = images[: len(images) - n_val], images[len(images) - n_val :]
    train_y, val_y = labels[: len(labels) - n_val], labels[len(labels) - n_val :]

    rng = np.random.default_rng(np.random.PCG64(config.seed + 1))
    state = AdamState()
    params = net.parameters()
    for _ in range(config.epochs):
        order = rng.permutation(len(train_x))
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            logits, caches = net.forward(train_x[idx])
            loss, dlogits = bce_with_logits(logits, train_y[idx])
            if not np.isfinite(loss):
                raise Diverged(f"loss became non-finite: {loss}")
            grads = net.backward(caches, dlogits)
            if config.lr > 0:
                adam_step(params, grads, state, config.lr, config.betas, config.eps)

    val_ap = None
    if n_val:
        scores = _sigmoid(net.forward(val_x)[0])
        val_ap = np.array(
            [average_precision(scores[:, c], val_y[:, c]) for c in range(k)]
        )
    return ClassifierModel(net=net, k_classes=k, val_ap=val_ap)


def checkpoint_save(net: TinyNet, path) -> None:
    """magic | version | arch digest | float32 LE blob | crc32."""
    blob = b"".join(
        np.ascontiguousarray(p, dtype="<f4").tobytes() for p in net.parameters()
    )
    head = CHECKPOINT_MAGIC + struct.pack("<H", CHECKPOINT_VERSION) + net.arch_digest()
    head += struct.pack("<Q", net.n_params())
    body = head + blob
    try:
        with open(path, "wb") as f:
            f.write(body + struct.pack("<I", zlib.crc32(body)))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def checkpoint_load(net: TinyNet, path) -> TinyNet:
    """Load parameters into a freshly built net of the same architecture."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if len(data) < 50:
        raise BadVersion("checkpoint truncated")
    if data[:4] != CHECKPOINT_MAGIC:
        raise BadVersion(f"bad checkpoint magic {data[:4]!r}")
    (version,) = struct.unpack("<H", data[4:6])
    if version != CHECKPOINT_VERSION:
        raise BadVersion(f"unsupported checkpoint version {version}")
    digest = data[6:38]
    if digest != net.arch_digest():
        raise ShapeMismatch("checkpoint architecture digest does not match net")
    (count,) = struct.unpack("<Q", data[38:46])
    if count != net.n_params():
        raise ShapeMismatch(f"checkpoint holds {count} params, net needs {net.n_params()}")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise IoFailure("checkpoint checksum mismatch")
    blob = data[46:-4]
    if len(blob) != 4 * count:
        raise ShapeMismatch("checkpoint blob size mismatch")
    flat = np.frombuffer(blob, dtype="<f4")
    pos = 0
    for p in net.parameters():
        chunk = flat[pos : pos + p.size].reshape(p.shape)
        p[...] = chunk.astype(p.dtype)
        pos += p.size
    return net
