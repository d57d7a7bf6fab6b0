"""Downstream-task metrics: toy color-proximity object detection,
per-class counting MSE, greedy-matched bounding-box mIoU, reconstruction
error, and per-variant task reports.

The detector classifies each pixel to the nearest palette color, takes
8-connected components per foreground class, and scores each component by
its mean color-match similarity. It is honest about its own reliability:
the calibration gate in the acceptance suite requires near-perfect recall
on clean generator output before any reconstruction is evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, EmptyInput
from .scenegen import BACKGROUND, CLASS_COLORS, CLASS_NAMES, K_CLASSES

DEFAULT_MIN_AREA = 6
DEFAULT_CONF_THRESHOLD = 0.5

PSNR_INF = float("inf")


@dataclass(frozen=True)
class Detection:
    class_id: int
    bbox: tuple[int, int, int, int]  # (x0, y0, x1, y1), exclusive upper
    confidence: float

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise DimMismatch(f"degenerate bbox {self.bbox}")
        if not 0.0 <= self.confidence <= 1.0:
            raise DimMismatch(f"confidence {self.confidence} outside [0,1]")


def _connected_components(mask: np.ndarray):
    """8-connected component labels for a boolean mask (BFS)."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int64)
    current = 0
    for si in range(h):
        for sj in range(w):
            if not mask[si, sj] or labels[si, sj]:
                continue
            current += 1
            stack = [(si, sj)]
            labels[si, sj] = current
            while stack:
                i, j = stack.pop()
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        ni, nj = i + di, j + dj
                        if (
                            0 <= ni < h
                            and 0 <= nj < w
                            and mask[ni, nj]
                            and not labels[ni, nj]
                        ):
                            labels[ni, nj] = current
                            stack.append((ni, nj))
    return labels, current


def detect_objects(
    image: np.ndarray,
    class_palette: np.ndarray = CLASS_COLORS,
    min_area: int = DEFAULT_MIN_AREA,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
) -> list[Detection]:
    """Nearest-palette pixel classification -> per-class components."""
    image = np.asarray(image, dtype=np.float64)
    palette = np.asarray(class_palette, dtype=np.float64)
    dist = np.linalg.norm(image[:, :, None, :] - palette[None, None, :, :], axis=3)
    pixel_class = dist.argmin(axis=2)
    # similarity of each pixel to its assigned palette color, in [0,1]
    similarity = 1.0 - dist.min(axis=2) / math.sqrt(3.0)

    detections = []
    for class_id in range(len(palette)):
        if class_id == BACKGROUND:
            continue
        labels, count = _connected_components(pixel_class == class_id)
        for comp in range(1, count + 1):
            ys, xs = np.nonzero(labels == comp)
            if len(ys) < min_area:
                continue
            conf = float(similarity[ys, xs].mean())
            if conf > conf_threshold:
                detections.append(
                    Detection(
                        class_id=class_id,
                        bbox=(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1),
                        confidence=conf,
                    )
                )
    return detections


def detection_counts(detections, k_classes: int = K_CLASSES) -> np.ndarray:
    counts = np.zeros(k_classes, dtype=np.int64)
    for d in detections:
        counts[d.class_id] += 1
    return counts


def counting_mse(pred_counts, gt_counts) -> np.ndarray:
    """Per-class mean squared count error over images."""
    pred = np.asarray(pred_counts, dtype=np.float64)
    gt = np.asarray(gt_counts, dtype=np.float64)
    if pred.ndim != 2 or pred.shape != gt.shape:
        raise EmptyInput(f"count arrays must match, got {pred.shape} vs {gt.shape}")
    if pred.shape[0] == 0:
        raise EmptyInput("no images to evaluate")
    return ((pred - gt) ** 2).mean(axis=0)


def iou(a, b) -> float:
    ix0 = max(a[0], b[0])
    iy0 = max(a[1], b[1])
    ix1 = min(a[2], b[2])
    iy1 = min(a[3], b[3])
    inter = max(0, ix1 - ix0) * max(0, iy1 - iy0)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def match_ious(pred_boxes, gt_boxes) -> list[float]:
    """Greedy best-first matching; returns one IoU per ground-truth box."""
    pairs = sorted(
        (
            (iou(p, g), pi, gi)
            for pi, p in enumerate(pred_boxes)
            for gi, g in enumerate(gt_boxes)
        ),
        key=lambda t: -t[0],
    )
    used_pred = set()
    scores = [0.0] * len(gt_boxes)
    matched = set()
    for score, pi, gi in pairs:
        if score <= 0 or pi in used_pred or gi in matched:
            continue
        used_pred.add(pi)
        matched.add(gi)
        scores[gi] = score
    return scores


def miou(pred_boxes, gt_boxes) -> float:
    """Mean matched IoU over ground-truth instances; NaN when none exist."""
    if not gt_boxes:
        return float("nan")
    return float(np.mean(match_ious(pred_boxes, gt_boxes)))


def recon_error(x: np.ndarray, x_hat: np.ndarray) -> tuple[float, float]:
    """(MSE, PSNR) with peak 1.0; identical images report the inf sentinel."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise DimMismatch(f"image dims differ: {x.shape} vs {x_hat.shape}")
    mse = float(((x - x_hat) ** 2).mean())
    psnr = PSNR_INF if mse == 0.0 else 10.0 * math.log10(1.0 / mse)
    return mse, psnr


@dataclass(frozen=True)
class VariantRow:
    variant: str
    counting_mse: np.ndarray  # per class
    miou: np.ndarray  # per class, NaN where the class never occurs
    mean_cr: float
    n_scenes: int


@dataclass(frozen=True)
class TaskReport:
    rows: tuple[VariantRow, ...]

    def as_text(self, classes=("person", "car")) -> str:
        ids = [CLASS_NAMES.index(c) for c in classes]
        header = ["variant".ljust(22)]
        for c in classes:
            header.append(f"mse[{c}]".rjust(12))
        for c in classes:
            header.append(f"miou[{c}]".rjust(12))
        header.append("CR".rjust(8))
        lines = ["".join(header)]
        for row in self.rows:
            cells = [row.variant.ljust(22)]
            for i in ids:
                cells.append(f"{row.counting_mse[i]:.3f}".rjust(12))
            for i in ids:
                cells.append(f"{row.miou[i]:.3f}".rjust(12))
            cells.append(f"{row.mean_cr:.2f}".rjust(8))
            lines.append("".join(cells))
        return "\n".join(lines)

    def as_tsv(self) -> str:
        cols = ["variant", "n_scenes", "mean_cr"]
        cols += [f"mse_{n}" for n in CLASS_NAMES]
        cols += [f"miou_{n}" for n in CLASS_NAMES]
        lines = ["\t".join(cols)]
        for row in self.rows:
            cells = [row.variant, str(row.n_scenes), repr(row.mean_cr)]
            cells += [repr(float(v)) for v in row.counting_mse]
            cells += [repr(float(v)) for v in row.miou]
            lines.append("\t".join(cells))
        return "\n".join(lines)


@dataclass
class SceneEvaluation:
    """Metric inputs extracted from one finished session."""

    gt_counts: np.ndarray
    gt_boxes_by_class: dict
    pred_counts: np.ndarray
    pred_boxes_by_class: dict
    cr: float


def evaluate_reconstruction(
    recon: np.ndarray,
    gt_objects,
    gt_counts: np.ndarray,
    cr: float,
    min_area: int = DEFAULT_MIN_AREA,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
) -> SceneEvaluation:
    dets = detect_objects(recon, min_area=min_area, conf_threshold=conf_threshold)
    pred_boxes = {c: [] for c in range(K_CLASSES)}
    for d in dets:
        pred_boxes[d.class_id].append(d.bbox)
    gt_boxes = {c: [] for c in range(K_CLASSES)}
    for class_id, bbox in gt_objects:
        gt_boxes[class_id].append(tuple(bbox))
    return SceneEvaluation(
        gt_counts=np.asarray(gt_counts),
        gt_boxes_by_class=gt_boxes,
        pred_counts=detection_counts(dets),
        pred_boxes_by_class=pred_boxes,
        cr=cr,
    )


def build_report(evaluations_by_variant: dict) -> TaskReport:
    """Aggregate per-scene evaluations into Table-style variant rows."""
    if not evaluations_by_variant:
        raise EmptyInput("no variants to report")
    rows = []
    for variant in sorted(evaluations_by_variant):
        evals = evaluations_by_variant[variant]
        if not evals:
            raise EmptyInput(f"variant {variant} has no scenes")
        mse = counting_mse(
            np.stack([e.pred_counts for e in evals]),
            np.stack([e.gt_counts for e in evals]),
        )
        per_class_miou = np.full(K_CLASSES, np.nan)
        for c in range(K_CLASSES):
            scores = []
            for e in evals:
                scores.extend(match_ious(e.pred_boxes_by_class[c], e.gt_boxes_by_class[c]))
            if scores:
                per_class_miou[c] = float(np.mean(scores))
        rows.append(
            VariantRow(
                variant=variant,
                counting_mse=mse,
                miou=per_class_miou,
                mean_cr=float(np.mean([e.cr for e in evals])),
                n_scenes=len(evals),
            )
        )
    return TaskReport(tuple(rows))
