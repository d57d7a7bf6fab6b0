"""Independent brute-force references used as test oracles.

Everything here is written with explicit loops and kept deliberately
separate from the library implementations it checks.
"""

import math

import numpy as np


def reflect_index(i, n):
    # mirror about the edges without repeating the edge sample
    period = 2 * n - 2 if n > 1 else 1
    i = i % period
    if i >= n:
        i = period - i
    return i


def ref_gaussian_blur(img, sigma):
    radius = math.ceil(3.0 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    kernel /= kernel.sum()
    h, w = img.shape
    tmp = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for t in range(-radius, radius + 1):
                acc += kernel[t + radius] * img[reflect_index(i + t, h), j]
            tmp[i, j] = acc
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for t in range(-radius, radius + 1):
                acc += kernel[t + radius] * tmp[i, reflect_index(j + t, w)]
            out[i, j] = acc
    return out


def ref_canny(gray, sigma, low, high):
    """Loop-based Canny: blur, Sobel, 4-direction NMS, 8-conn hysteresis."""
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
    ky = kx.T
    g = ref_gaussian_blur(np.asarray(gray, dtype=np.float64), sigma)
    h, w = g.shape
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            sx = sy = 0.0
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    sx += kx[di + 1, dj + 1] * g[i + di, j + dj]
                    sy += ky[di + 1, dj + 1] * g[i + di, j + dj]
            gx[i, j] = sx
            gy[i, j] = sy
    mag = np.hypot(gx, gy)

    neighbors = {
        0: ((0, -1), (0, 1)),
        1: ((-1, -1), (1, 1)),
        2: ((-1, 0), (1, 0)),
        3: ((-1, 1), (1, -1)),
    }
    thinned = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            if mag[i, j] <= 0:
                continue
            ang = math.atan2(gy[i, j], gx[i, j]) % math.pi
            d = int(round(ang / (math.pi / 4.0))) % 4
            (di1, dj1), (di2, dj2) = neighbors[d]
            n1 = mag[i + di1, j + dj1] if 0 <= i + di1 < h and 0 <= j + dj1 < w else 0.0
            n2 = mag[i + di2, j + dj2] if 0 <= i + di2 < h and 0 <= j + dj2 < w else 0.0
            if mag[i, j] > n1 and mag[i, j] >= n2:
                thinned[i, j] = mag[i, j]

    strong = thinned >= high
    weak = thinned >= low
    edges = strong.copy()
    changed = True
    while changed:
        changed = False
        for i in range(h):
            for j in range(w):
                if edges[i, j] or not weak[i, j]:
                    continue
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        ni, nj = i + di, j + dj
                        if 0 <= ni < h and 0 <= nj < w and edges[ni, nj]:
                            edges[i, j] = True
                            changed = True
                            break
                    if edges[i, j]:
                        break
    return edges.astype(np.uint8)


def ref_bilinear(src, out_h, out_w):
    """Half-pixel-center (align-corners-false) bilinear, direct formula."""
    src = np.asarray(src, dtype=np.float64)
    in_h, in_w = src.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            y = min(max((i + 0.5) * in_h / out_h - 0.5, 0.0), in_h - 1.0)
            x = min(max((j + 0.5) * in_w / out_w - 0.5, 0.0), in_w - 1.0)
            y0, x0 = int(math.floor(y)), int(math.floor(x))
            y1, x1 = min(y0 + 1, in_h - 1), min(x0 + 1, in_w - 1)
            wy, wx = y - y0, x - x0
            out[i, j] = (
                src[y0, x0] * (1 - wy) * (1 - wx)
                + src[y0, x1] * (1 - wy) * wx
                + src[y1, x0] * wy * (1 - wx)
                + src[y1, x1] * wy * wx
            )
    return out


def ref_cam_raw(features, weights):
    """Per-pixel weighted channel sum, explicit loops."""
    hp, wp, nch = features.shape
    out = np.zeros((hp, wp))
    for i in range(hp):
        for j in range(wp):
            acc = 0.0
            for k in range(nch):
                acc += weights[k] * features[i, j, k]
            out[i, j] = acc
    return out


def ref_iou(a, b):
    ix0 = max(a[0], b[0])
    iy0 = max(a[1], b[1])
    ix1 = min(a[2], b[2])
    iy1 = min(a[3], b[3])
    inter = max(0, ix1 - ix0) * max(0, iy1 - iy0)
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union else 0.0
