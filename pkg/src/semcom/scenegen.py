"""Procedural street-scene generator.

Produces labeled toy scenes (image + segmentation + instance map + object
records) so the whole pipeline runs without any external dataset or
pretrained segmenter. Scenes are deterministic for a fixed spec: all
randomness flows through integer-seeded PCG64 generators and a splitmix64
counter, and rendering uses only elementwise float ops.

Classes: 0 background (sky), 1 road, 2 building, 3 car, 4 person, 5 tree.
Objects are axis-aligned rectangles, rounded rectangles, or ellipses with
canonical per-class colors plus low-amplitude hash noise. Where two
instances of the same class touch, the boundary pixels are darkened so
that instance seams are visible in the rendered image (the segmentation
map alone cannot separate them — that detail only travels in the edge
update).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidSpec

K_CLASSES = 6
CLASS_NAMES = ("background", "road", "building", "car", "person", "tree")
BACKGROUND = 0
ROAD = 1
BUILDING = 2
CAR = 3
PERSON = 4
TREE = 5

# Canonical colors, RGB in [0,1]; spread out so a nearest-color detector
# has a clean signal.
CLASS_COLORS = np.array(
    [
        [0.55, 0.70, 0.90],  # background / sky
        [0.25, 0.25, 0.27],  # road
        [0.62, 0.42, 0.32],  # building
        [0.85, 0.15, 0.15],  # car
        [0.95, 0.80, 0.20],  # person
        [0.10, 0.55, 0.15],  # tree
    ]
)

# Same-class seam pixels are scaled by this factor.
SEAM_DARKEN = 0.35

_SHAPES = {
    BACKGROUND: "rect",
    ROAD: "rect",
    BUILDING: "rect",
    CAR: "round_rect",
    PERSON: "ellipse",
    TREE: "ellipse",
}


@dataclass(frozen=True)
class ObjectSpec:
    class_id: int
    center: tuple[int, int]  # (cx, cy) in pixels
    half_extents: tuple[int, int]  # (hx, hy), >= 1
    draw_order: int


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    seed: int
    object_plan: tuple[ObjectSpec, ...]
    texture_amplitude: float = 0.025
    base_colors: np.ndarray = field(default_factory=lambda: CLASS_COLORS.copy())

    def validate(self) -> None:
        if self.width < 16 or self.height < 16:
            raise InvalidSpec("canvas must be at least 16x16")
        for obj in self.object_plan:
            if not 0 <= obj.class_id < K_CLASSES:
                raise InvalidSpec(f"class_id {obj.class_id} out of range")
            hx, hy = obj.half_extents
            if hx < 1 or hy < 1:
                raise InvalidSpec("half extents must be >= 1 pixel")
            cx, cy = obj.center
            if (
                cx + hx < 0
                or cx - hx >= self.width
                or cy + hy < 0
                or cy - hy >= self.height
            ):
                raise InvalidSpec(f"object at {obj.center} lies outside the canvas")


@dataclass(frozen=True)
class SceneObject:
    class_id: int
    bbox: tuple[int, int, int, int]  # (x0, y0, x1, y1), exclusive upper


@dataclass(frozen=True)
class SceneBundle:
    image: np.ndarray  # H×W×3 float in [0,1]
    seg: np.ndarray  # H×W int class ids
    instance_map: np.ndarray  # H×W int, 0 = background
    objects: tuple[SceneObject, ...]  # indexed by instance id - 1
    class_counts: np.ndarray  # length K_CLASSES

    @property
    def height(self) -> int:
        return self.seg.shape[0]

    @property
    def width(self) -> int:
        return self.seg.shape[1]


def splitmix64(seed: int, index: int) -> int:
    """Counter-derived 64-bit stream: scene i is reproducible in isolation."""
    z = (seed + (index + 1) * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def _hash_noise(h: int, w: int, seed: int) -> np.ndarray:
    """Deterministic per-pixel noise in [-1, 1] from integer hashing."""
    ii, jj = np.meshgrid(
        np.arange(h, dtype=np.uint64), np.arange(w, dtype=np.uint64), indexing="ij"
    )
    with np.errstate(over="ignore"):
        z = ii * np.uint64(0x9E3779B97F4A7C15) + jj * np.uint64(
            0xC2B2AE3D27D4EB4F
        ) + np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) / float(1 << 53) * 2.0 - 1.0


def _object_mask(obj: ObjectSpec, h: int, w: int) -> np.ndarray:
    cx, cy = obj.center
    hx, hy = obj.half_extents
    yy, xx = np.mgrid[0:h, 0:w]
    shape = _SHAPES[obj.class_id]
    if shape == "rect":
        return (np.abs(xx - cx) <= hx) & (np.abs(yy - cy) <= hy)
    if shape == "ellipse":
        return ((xx - cx) / (hx + 0.5)) ** 2 + ((yy - cy) / (hy + 0.5)) ** 2 <= 1.0
    # rounded rectangle: rectangle with quarter-circle corners
    r = max(1, min(hx, hy) // 2)
    inside = (np.abs(xx - cx) <= hx) & (np.abs(yy - cy) <= hy)
    ex = np.maximum(np.abs(xx - cx) - (hx - r), 0)
    ey = np.maximum(np.abs(yy - cy) - (hy - r), 0)
    return inside & (ex**2 + ey**2 <= r**2)


def _seam_mask(instance_map: np.ndarray, seg: np.ndarray) -> np.ndarray:
    """Pixels whose 4-neighbor is a different instance of the same class."""
    seam = np.zeros(instance_map.shape, dtype=bool)
    for di, dj in ((0, 1), (1, 0), (0, -1), (-1, 0)):
        nb_inst = np.full_like(instance_map, -1)
        nb_seg = np.full_like(seg, -1)
        src_i = slice(max(di, 0), instance_map.shape[0] + min(di, 0))
        src_j = slice(max(dj, 0), instance_map.shape[1] + min(dj, 0))
        dst_i = slice(max(-di, 0), instance_map.shape[0] + min(-di, 0))
        dst_j = slice(max(-dj, 0), instance_map.shape[1] + min(-dj, 0))
        nb_inst[dst_i, dst_j] = instance_map[src_i, src_j]
        nb_seg[dst_i, dst_j] = seg[src_i, src_j]
        seam |= (
            (instance_map > 0)
            & (nb_inst > 0)
            & (nb_inst != instance_map)
            & (nb_seg == seg)
        )
    return seam


def generate_scene(spec: SceneSpec) -> SceneBundle:
    """Render a spec into a SceneBundle. Deterministic for a fixed spec."""
    spec.validate()
    h, w = spec.height, spec.width

    seg = np.zeros((h, w), dtype=np.int64)
    instance_map = np.zeros((h, w), dtype=np.int64)

    ordered = sorted(spec.object_plan, key=lambda o: o.draw_order)
    masks = []
    for obj in ordered:
        mask = _object_mask(obj, h, w)
        masks.append((obj, mask))

    # painter's order: later objects overwrite earlier ones
    next_id = 0
    provisional = []
    for obj, mask in masks:
        next_id += 1
        seg[mask] = obj.class_id
        instance_map[mask] = next_id
        provisional.append((next_id, obj))

    # drop fully occluded objects and renumber ids densely
    objects = []
    remap = np.zeros(next_id + 1, dtype=np.int64)
    kept = 0
    for inst_id, obj in provisional:
        pix = instance_map == inst_id
        if not pix.any():
            continue
        kept += 1
        remap[inst_id] = kept
        ys, xs = np.nonzero(pix)
        objects.append(
            SceneObject(
                class_id=obj.class_id,
                bbox=(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1),
            )
        )
    instance_map = remap[instance_map]

    class_counts = np.zeros(K_CLASSES, dtype=np.int64)
    for obj in objects:
        class_counts[obj.class_id] += 1

    image = spec.base_colors[seg].astype(np.float64)
    noise = _hash_noise(h, w, spec.seed)
    image = image + spec.texture_amplitude * noise[:, :, None]
    seam = _seam_mask(instance_map, seg)
    image[seam] *= SEAM_DARKEN
    image = np.clip(image, 0.0, 1.0)

    return SceneBundle(
        image=image,
        seg=seg,
        instance_map=instance_map,
        objects=tuple(objects),
        class_counts=class_counts,
    )


@dataclass(frozen=True)
class GeneratorConfig:
    """Ranges for random scene plans. Counts are inclusive.

    Same-class groups are laid side by side so members touch; that is what
    makes coarse (segmentation-only) reconstructions merge them.
    """

    width: int = 64
    height: int = 32
    n_buildings: tuple[int, int] = (1, 3)
    n_trees: tuple[int, int] = (0, 2)
    n_car_groups: tuple[int, int] = (0, 2)
    car_group_size: tuple[int, int] = (1, 3)
    n_person_groups: tuple[int, int] = (0, 2)
    person_group_size: tuple[int, int] = (1, 3)


def _plan_scene(rng: np.random.Generator, cfg: GeneratorConfig) -> list[ObjectSpec]:
    w, h = cfg.width, cfg.height
    road_top = int(h * 0.62)
    order = 0
    plan = []

    # road band across the full width
    road_cy = (road_top + h - 1) // 2
    plan.append(
        ObjectSpec(ROAD, (w // 2, road_cy), (w, h - 1 - road_cy), order)
    )
    order += 1

    # buildings along the skyline; same-class neighbors may touch
    n_b = int(rng.integers(cfg.n_buildings[0], cfg.n_buildings[1] + 1))
    x = int(rng.integers(2, 8))
    for _ in range(n_b):
        hx = int(rng.integers(4, 8))
        hy = int(rng.integers(5, 10))
        cx = x + hx
        if cx - hx >= w:
            break
        cy = road_top - hy - int(rng.integers(0, 3))
        plan.append(ObjectSpec(BUILDING, (cx, max(hy, cy)), (hx, hy), order))
        order += 1
        x = cx + hx + int(rng.integers(0, 4))

    n_t = int(rng.integers(cfg.n_trees[0], cfg.n_trees[1] + 1))
    for _ in range(n_t):
        hx = int(rng.integers(2, 4))
        hy = int(rng.integers(3, 6))
        cx = int(rng.integers(hx, w - hx))
        cy = road_top - hy - int(rng.integers(0, 2))
        plan.append(ObjectSpec(TREE, (cx, max(hy, cy)), (hx, hy), order))
        order += 1

    # street-level objects occupy disjoint horizontal slots so groups of a
    # class touch internally but never overlap another class
    slots = list(range(2, w - 14, 13))
    rng.shuffle(slots)
    slot_i = 0

    n_cg = int(rng.integers(cfg.n_car_groups[0], cfg.n_car_groups[1] + 1))
    for _ in range(n_cg):
        if slot_i >= len(slots):
            break
        gsize = int(rng.integers(cfg.car_group_size[0], cfg.car_group_size[1] + 1))
        hx = int(rng.integers(3, 5))
        hy = int(rng.integers(2, 4))
        cy = int(rng.integers(road_top + hy, h - hy))
        cx = slots[slot_i] + hx
        slot_i += 1
        for m in range(gsize):
            if cx + hx >= w:
                break
            plan.append(ObjectSpec(CAR, (cx, cy), (hx, hy), order))
            order += 1
            cx += 2 * hx  # members share a boundary column

    n_pg = int(rng.integers(cfg.n_person_groups[0], cfg.n_person_groups[1] + 1))
    for _ in range(n_pg):
        if slot_i >= len(slots):
            break
        gsize = int(rng.integers(cfg.person_group_size[0], cfg.person_group_size[1] + 1))
        hx = 2
        hy = int(rng.integers(4, 6))
        cy = int(rng.integers(road_top + hy, h - hy))
        cx = slots[slot_i] + hx
        slot_i += 1
        for m in range(gsize):
            if cx + hx >= w:
                break
            plan.append(ObjectSpec(PERSON, (cx, cy), (hx, hy), order))
            order += 1
            cx += 2 * hx

    return plan


def make_scene_spec(seed: int, cfg: GeneratorConfig | None = None) -> SceneSpec:
    cfg = cfg or GeneratorConfig()
    rng = np.random.default_rng(np.random.PCG64(seed))
    plan = _plan_scene(rng, cfg)
    return SceneSpec(
        width=cfg.width,
        height=cfg.height,
        seed=seed,
        object_plan=tuple(plan),
    )


def sample_dataset(
    n_scenes: int, seed: int, cfg: GeneratorConfig | None = None
) -> list[SceneBundle]:
    """Generate n_scenes bundles; scene i uses splitmix64(seed, i)."""
    if n_scenes < 1:
        raise InvalidSpec("n_scenes must be >= 1")
    cfg = cfg or GeneratorConfig()
    return [
        generate_scene(make_scene_spec(splitmix64(seed, i), cfg))
        for i in range(n_scenes)
    ]
