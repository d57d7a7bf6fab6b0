"""Feedback-to-attention translation and mask construction.

Label feedback goes through the class-activation path: a weighted sum of
final-stage convolutional feature channels using the target class's dense
head weights, upsampled to image resolution and min-max normalized. Text
feedback goes through a lexicon resolver (the pluggable stand-in for an
image-text similarity model) and then the same per-class attention path.
An instance-map oracle provides ground-truth attention for tests and for
sessions that should not depend on classifier quality.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import BadThreshold, DimMismatch, FeedbackUnresolved, ShapeMismatch
from .imgproc import gaussian_blur, minmax_normalize, upsample_bilinear
from .scenegen import BUILDING, CAR, PERSON, ROAD, TREE

DEFAULT_TAU = 0.35


@dataclass(frozen=True)
class ClassLabel:
    class_id: int


@dataclass(frozen=True)
class TextPrompt:
    text: str

    def __post_init__(self):
        if not self.text:
            raise FeedbackUnresolved("empty prompt")


Feedback = ClassLabel | TextPrompt


@dataclass(frozen=True)
class AttentionMap:
    values: np.ndarray  # H×W in [0,1]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeMismatch("attention map must be 2-D")
        if v.size and (v.min() < -1e-9 or v.max() > 1 + 1e-9):
            raise ShapeMismatch("attention values must lie in [0,1]")
        object.__setattr__(self, "values", np.clip(v, 0.0, 1.0))


@dataclass(frozen=True)
class AttentionMask:
    bits: np.ndarray  # H×W in {0,1}
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=np.uint8))


DEFAULT_LEXICON = {
    "car": CAR,
    "cars": CAR,
    "vehicle": CAR,
    "vehicles": CAR,
    "automobile": CAR,
    "person": PERSON,
    "people": PERSON,
    "pedestrian": PERSON,
    "pedestrians": PERSON,
    "human": PERSON,
    "humans": PERSON,
    "tree": TREE,
    "trees": TREE,
    "building": BUILDING,
    "buildings": BUILDING,
    "house": BUILDING,
    "houses": BUILDING,
    "road": ROAD,
    "roads": ROAD,
}


def cam_raw(features: np.ndarray, class_weights: np.ndarray) -> np.ndarray:
    """Weighted channel sum at feature resolution (no upsample/normalize)."""
    features = np.asarray(features, dtype=np.float64)
    class_weights = np.asarray(class_weights, dtype=np.float64)
    if features.ndim != 3 or class_weights.ndim != 1:
        raise ShapeMismatch("expected H'×W'×L features and length-L weights")
    if features.shape[2] != class_weights.shape[0]:
        raise ShapeMismatch(
            f"{features.shape[2]} channels vs {class_weights.shape[0]} weights"
        )
    return features @ class_weights


def cam(features: np.ndarray, class_weights: np.ndarray, out_dims) -> AttentionMap:
    """Weighted channel sum, upsampled to out_dims, then normalized."""
    raw = cam_raw(features, class_weights)
    h, w = out_dims
    return AttentionMap(minmax_normalize(upsample_bilinear(raw, h, w)))


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _singular(token: str) -> list[str]:
    forms = []
    if token.endswith("s") and len(token) > 2:
        forms.append(token[:-1])
    if token.endswith("es") and len(token) > 3:
        forms.append(token[:-2])
    return forms


def resolve_prompt(prompt: str, lexicon: dict[str, int] | None = None) -> set[int]:
    """Case-folded token and bigram lookup, with naive plural stripping."""
    lexicon = DEFAULT_LEXICON if lexicon is None else lexicon
    if not lexicon:
        raise FeedbackUnresolved("empty lexicon")
    tokens = _TOKEN_RE.findall(prompt.casefold())
    candidates = list(tokens)
    candidates += [" ".join(p) for p in zip(tokens, tokens[1:])]
    hits = set()
    for term in candidates:
        if term in lexicon:
            hits.add(lexicon[term])
            continue
        for stripped in _singular(term):
            if stripped in lexicon:
                hits.add(lexicon[stripped])
                break
    if not hits:
        raise FeedbackUnresolved(f"no lexicon term matches {prompt!r}")
    return hits


def oracle_attention(
    seg: np.ndarray,
    instance_map: np.ndarray,
    target_classes,
    blur_sigma: float = 1.0,
) -> AttentionMap:
    """Ground-truth attention: blurred indicator of target-class instances."""
    seg = np.asarray(seg)
    instance_map = np.asarray(instance_map)
    indicator = np.isin(seg, list(target_classes)) & (instance_map > 0)
    indicator = indicator.astype(np.float64)
    if blur_sigma > 0:
        indicator = gaussian_blur(indicator, blur_sigma)
    return AttentionMap(minmax_normalize(indicator))


def combine_attention(maps) -> AttentionMap:
    """Pixelwise maximum; keeps the result in [0,1] without renormalizing."""
    maps = list(maps)
    if not maps:
        raise DimMismatch("no attention maps to combine")
    base = maps[0].values
    for m in maps[1:]:
        if m.values.shape != base.shape:
            raise DimMismatch("attention maps differ in shape")
        base = np.maximum(base, m.values)
    return AttentionMap(base)


def binarize_mask(attention: AttentionMap, tau: float = DEFAULT_TAU) -> AttentionMask:
    """Strict threshold: mask[p] = 1 iff attention[p] > tau."""
    if not 0.0 <= tau < 1.0:
        raise BadThreshold(f"tau must lie in [0, 1), got {tau}")
    return AttentionMask((attention.values > tau).astype(np.uint8), tau)


def save_lexicon(path, lexicon: dict[str, int]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for term in sorted(lexicon):
            f.write(f"{term},{lexicon[term]}\n")


def load_lexicon(path) -> dict[str, int]:
    lexicon = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            term, _, class_id = line.rpartition(",")
            lexicon[term.strip()] = int(class_id)
    if not lexicon:
        raise FeedbackUnresolved(f"lexicon file {path} holds no terms")
    return lexicon
