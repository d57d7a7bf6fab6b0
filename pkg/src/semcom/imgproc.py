"""Classical image operations: Canny edges, one-hot encoding, bilinear
resampling, min-max normalization, and binary PPM/PGM raster I/O.

All maps are numpy arrays indexed [row, col] ([y, x]). Edge extraction is
classic (non-learned) Canny run on the instance map rendered as grayscale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, ClassOutOfRange, IoFailure, ThresholdOrder

# Degenerate-range cutoff for min-max normalization.
EPS_NORM = 1e-12

# Canny defaults, calibrated for [0,1] inputs.
CANNY_SIGMA = 1.0
CANNY_LOW = 0.1
CANNY_HIGH = 0.3


@dataclass(frozen=True)
class EdgeMap:
    """Binary edge image; bits is uint8 H×W with values in {0,1}."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.uint8)
        if b.ndim != 2:
            raise ValueError("EdgeMap expects a 2-D array")
        if not np.isin(b, (0, 1)).all():
            raise ValueError("EdgeMap bits must be 0/1")
        object.__setattr__(self, "bits", b)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


@dataclass(frozen=True)
class OneHotSeg:
    """One-hot class tensor, H×W×K with exactly one 1 per pixel."""

    tensor: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tensor, dtype=np.uint8)
        if t.ndim != 3:
            raise ValueError("OneHotSeg expects an H×W×K array")
        if not (t.sum(axis=2) == 1).all():
            raise ValueError("OneHotSeg rows must sum to one along classes")
        object.__setattr__(self, "tensor", t)

    def argmax(self) -> np.ndarray:
        return self.tensor.argmax(axis=2).astype(np.int64)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian, truncated at radius ceil(3*sigma)."""
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect ('mirror') boundary handling."""
    if sigma <= 0:
        return np.asarray(img, dtype=np.float64).copy()
    k = gaussian_kernel1d(sigma)
    r = len(k) // 2
    out = np.asarray(img, dtype=np.float64)
    padded = np.pad(out, ((r, r), (0, 0)), mode="reflect")
    out = sum(k[i] * padded[i : i + out.shape[0], :] for i in range(len(k)))
    padded = np.pad(out, ((0, 0), (r, r)), mode="reflect")
    out = sum(k[i] * padded[:, i : i + img.shape[1]] for i in range(len(k)))
    return out


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = _SOBEL_X.T


def sobel_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3×3 Sobel cross-correlation; the one-pixel border stays zero."""
    img = np.asarray(img, dtype=np.float64)
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    for di in range(3):
        for dj in range(3):
            shifted = img[di : di + img.shape[0] - 2, dj : dj + img.shape[1] - 2]
            gx[1:-1, 1:-1] += _SOBEL_X[di, dj] * shifted
            gy[1:-1, 1:-1] += _SOBEL_Y[di, dj] * shifted
    return gx, gy


# Quantized-direction neighbor offsets for non-maximum suppression. The
# first neighbor is compared strictly, the second with >=, so plateau ties
# resolve to the earlier pixel in scan order (keeps step edges 1 px wide).
_NMS_NEIGHBORS = {
    0: ((0, -1), (0, 1)),
    1: ((-1, -1), (1, 1)),
    2: ((-1, 0), (1, 0)),
    3: ((-1, 1), (1, -1)),
}


def canny_edges(
    gray: np.ndarray,
    sigma: float = CANNY_SIGMA,
    low: float = CANNY_LOW,
    high: float = CANNY_HIGH,
) -> EdgeMap:
    """Classic Canny: blur, Sobel, 4-direction NMS, hysteresis (8-conn).

    `gray` is expected in [0,1]; for instance maps use id / max(id).
    """
    if low >= high:
        raise ThresholdOrder(f"low ({low}) must be < high ({high})")
    if sigma <= 0:
        raise ThresholdOrder(f"sigma must be positive, got {sigma}")
    gray = np.asarray(gray, dtype=np.float64)
    h, w = gray.shape

    blurred = gaussian_blur(gray, sigma)
    gx, gy = sobel_gradients(blurred)
    mag = np.hypot(gx, gy)

    # angle folded to [0, pi), then binned to {0, 45, 90, 135} degrees
    ang = np.mod(np.arctan2(gy, gx), np.pi)
    dirs = np.mod(np.round(ang / (np.pi / 4.0)).astype(np.int64), 4)

    thinned = np.zeros_like(mag)
    for d, ((di1, dj1), (di2, dj2)) in _NMS_NEIGHBORS.items():
        sel = (dirs == d) & (mag > 0)
        n1 = _shifted(mag, di1, dj1)
        n2 = _shifted(mag, di2, dj2)
        keep = sel & (mag > n1) & (mag >= n2)
        thinned[keep] = mag[keep]

    strong = thinned >= high
    weak = thinned >= low

    # BFS from strong pixels through weak ones, 8-connectivity
    edges = strong.copy()
    stack = list(zip(*np.nonzero(strong)))
    while stack:
        i, j = stack.pop()
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                ni, nj = i + di, j + dj
                if 0 <= ni < h and 0 <= nj < w and weak[ni, nj] and not edges[ni, nj]:
                    edges[ni, nj] = True
                    stack.append((ni, nj))
    return EdgeMap(edges.astype(np.uint8))


def _shifted(a: np.ndarray, di: int, dj: int) -> np.ndarray:
    """a[i+di, j+dj] with out-of-range reads as 0."""
    out = np.zeros_like(a)
    h, w = a.shape
    src_i = slice(max(di, 0), h + min(di, 0))
    src_j = slice(max(dj, 0), w + min(dj, 0))
    dst_i = slice(max(-di, 0), h + min(-di, 0))
    dst_j = slice(max(-dj, 0), w + min(-dj, 0))
    out[dst_i, dst_j] = a[src_i, src_j]
    return out


def one_hot(seg: np.ndarray, k: int) -> OneHotSeg:
    """H×W class indices -> H×W×K one-hot tensor."""
    seg = np.asarray(seg)
    if seg.min(initial=0) < 0 or (seg.size and seg.max() >= k):
        raise ClassOutOfRange(f"class indices must lie in [0, {k})")
    tensor = np.zeros(seg.shape + (k,), dtype=np.uint8)
    hh, ww = np.indices(seg.shape)
    tensor[hh, ww, seg.astype(np.int64)] = 1
    return OneHotSeg(tensor)


def upsample_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample to (out_h, out_w), align-corners-false convention.

    Output pixel centers map to input coordinates (i+0.5)*h'/H - 0.5,
    clamped at the borders (edge replication).
    """
    src = np.asarray(src, dtype=np.float64)
    in_h, in_w = src.shape
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    tl = src[np.ix_(y0, x0)]
    tr = src[np.ix_(y0, x1)]
    bl = src[np.ix_(y1, x0)]
    br = src[np.ix_(y1, x1)]
    return (
        tl * (1 - wy) * (1 - wx)
        + tr * (1 - wy) * wx
        + bl * wy * (1 - wx)
        + br * wy * wx
    )


def minmax_normalize(arr: np.ndarray) -> np.ndarray:
    """(x - min) / (max - min); all zeros when the range is degenerate."""
    arr = np.asarray(arr, dtype=np.float64)
    lo = arr.min()
    hi = arr.max()
    if hi - lo < EPS_NORM:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def write_raster(path, image: np.ndarray) -> None:
    """Write uint8 image as binary PGM (2-D) or PPM (H×W×3)."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise IoFailure(f"raster I/O is 8-bit only, got dtype {image.dtype}")
    if image.ndim == 2:
        magic = b"P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
    else:
        raise IoFailure(f"unsupported raster shape {image.shape}")
    h, w = image.shape[:2]
    header = magic + b"\n%d %d\n255\n" % (w, h)
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(image.tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_raster(path) -> np.ndarray:
    """Read a binary PGM/PPM written by write_raster; returns uint8."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if data[:2] == b"P5":
        channels = 1
    elif data[:2] == b"P6":
        channels = 3
    else:
        raise BadMagic(f"not a binary PGM/PPM file: {data[:2]!r}")
    # header: magic, whitespace, width, height, maxval, single whitespace
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise BadMagic("truncated raster header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise BadMagic(f"only maxval 255 supported, got {maxval}")
    need = w * h * channels
    body = data[pos : pos + need]
    if len(body) != need:
        raise BadMagic(f"raster body truncated: {len(body)} of {need} bytes")
    arr = np.frombuffer(body, dtype=np.uint8)
    return arr.reshape((h, w) if channels == 1 else (h, w, 3)).copy()


def to_u8(img01: np.ndarray) -> np.ndarray:
    """[0,1] float image -> uint8 with round-half-away quantization."""
    return np.clip(np.rint(np.asarray(img01) * 255.0), 0, 255).astype(np.uint8)


def from_u8(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) / 255.0
