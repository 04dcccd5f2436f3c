"""Synthetic scenes and the target-corruption protocol.

Segmentation scenes drop colored rectangles and ellipses on a background,
with per-class palette colors and pixel noise; depth scenes combine a
planar ramp with Gaussian bumps, rendered as a shaded intensity image.
Both pool their dense ground truth to node-level targets over a grid
segmentation, which is what training consumes.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from .datasets import Dataset, LabeledExample
from .graph import ImageGrid, grid_segment, node_pixel_counts

_CORRUPTION_KINDS = ("gaussian_noise", "outlier")


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Everything a scene draw depends on, seed included."""

    task: str
    size: int = 64
    classes: int = 4
    shape_count: int = 6
    noise_level: float = 0.2
    target_nodes: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("segmentation", "depth"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.size < 32:
            raise ValueError(f"scene size must be at least 32, got {self.size}")
        if self.task == "segmentation" and self.classes < 2:
            raise ValueError(f"need at least two classes, got {self.classes}")
        if self.shape_count < 0:
            raise ValueError("shape_count must be nonnegative")
        if self.noise_level < 0:
            raise ValueError("noise_level must be nonnegative")
        if self.target_nodes < 1:
            raise ValueError("target_nodes must be positive")


@dataclass(frozen=True)
class CorruptionSpec:
    """Which targets get corrupted and how hard."""

    kind: str
    fraction: float
    sigma: float = 0.1
    magnitude: float = 5.0

    def __post_init__(self):
        if self.kind not in _CORRUPTION_KINDS:
            raise ValueError(f"unknown corruption {self.kind!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError(f"fraction must lie in [0, 1], got {self.fraction}")
        if self.sigma <= 0 and self.kind == "gaussian_noise":
            raise ValueError("sigma must be positive")
        if self.magnitude <= 0 and self.kind == "outlier":
            raise ValueError("magnitude must be positive")


def class_palette(num_classes: int) -> np.ndarray:
    """Well-separated RGB colors, one per class; class 0 is the background."""
    colors = []
    for j in range(num_classes):
        value = 0.9 if j % 2 == 0 else 0.55
        colors.append(colorsys.hsv_to_rgb(j / num_classes, 0.75, value))
    return np.array(colors)


def _draw_shapes(rng, size, shape_count, class_range):
    """Paint random rectangles and ellipses; returns the dense class map."""
    labels = np.zeros((size, size), dtype=np.int64)
    rows = np.arange(size)[:, None]
    cols = np.arange(size)[None, :]
    for _ in range(shape_count):
        cls = int(rng.integers(1, class_range)) if class_range > 1 else 0
        kind = rng.integers(0, 2)
        cy, cx = rng.uniform(0, size, size=2)
        ry, rx = rng.uniform(size / 8, size / 3, size=2)
        if kind == 0:
            mask = (np.abs(rows - cy) <= ry) & (np.abs(cols - cx) <= rx)
        else:
            mask = ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0
        labels[mask] = cls
    return labels


def gen_segmentation_scene(spec: SyntheticSceneSpec) -> LabeledExample:
    """One labelled segmentation scene with one-hot node targets.

    When at least one shape is requested, scenes whose node-level truth
    collapses to a single class are redrawn from a derived seed; with
    shape_count == 0 the all-background outcome is the intended result.
    """
    if spec.task != "segmentation":
        raise ValueError("spec does not describe a segmentation scene")
    palette = class_palette(spec.classes)
    for attempt in range(64):
        rng = np.random.default_rng([spec.seed, attempt])
        labels_px = _draw_shapes(rng, spec.size, spec.shape_count, spec.classes)
        image = palette[labels_px]
        if spec.noise_level > 0:
            image = image + rng.normal(0.0, spec.noise_level, size=image.shape)
        image = ImageGrid(np.clip(image, 0.0, 1.0))
        seg = grid_segment(image, spec.target_nodes)

        votes = np.zeros((seg.n, spec.classes), dtype=np.int64)
        np.add.at(votes, (seg.label_map.ravel(), labels_px.ravel()), 1)
        node_class = np.argmax(votes, axis=1)  # ties resolve to the lowest class
        if spec.shape_count == 0 or len(np.unique(node_class)) >= 2:
            targets = np.zeros((seg.n, spec.classes))
            targets[np.arange(seg.n), node_class] = 1.0
            return LabeledExample(image, seg, targets, "segmentation")
    raise RuntimeError(f"could not draw two classes for seed {spec.seed}")


def normalize_depth_map(depth: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Min-max normalize to [0, 1]; a degenerate range collapses to 0.5."""
    span = float(depth.max() - depth.min())
    if span < tol:
        return np.full_like(depth, 0.5)
    return (depth - depth.min()) / span


def _rough_field(rng, size, cells, sigma):
    """Bilinear upsample of a coarse Gaussian grid: bumpy surface relief."""
    coarse = rng.normal(0.0, sigma, size=(cells + 1, cells + 1))
    g = np.linspace(0.0, float(cells), size)
    i0 = np.minimum(np.floor(g).astype(int), cells - 1)
    f = g - i0
    fy, fx = f[:, None], f[None, :]
    r0, r1 = i0, i0 + 1
    return (
        (1 - fy) * (1 - fx) * coarse[np.ix_(r0, r0)]
        + (1 - fy) * fx * coarse[np.ix_(r0, r1)]
        + fy * (1 - fx) * coarse[np.ix_(r1, r0)]
        + fy * fx * coarse[np.ix_(r1, r1)]
    )


def gen_depth_scene(spec: SyntheticSceneSpec) -> LabeledExample:
    """One depth scene: a sloped backdrop occluded by objects on depth planes.

    Every object sits on its own gently tilted plane, so silhouette borders
    are genuine step discontinuities; nearer objects paint over farther ones.
    Surface relief at roughly superpixel scale keeps targets from being
    locally flat.  Each surface also carries its own albedo, and the image
    records albedo times depth-dependent shading: brightness alone does not
    pin down depth, so appearance is only a partial depth cue, as in real
    monocular data.
    """
    if spec.task != "depth":
        raise ValueError("spec does not describe a depth scene")
    rng = np.random.default_rng([spec.seed])
    size = spec.size
    u = (np.arange(size) / (size - 1))[:, None]
    v = (np.arange(size) / (size - 1))[None, :]
    slope = rng.uniform(-1.0, 1.0, size=2)
    depth = 0.5 + 0.5 * (slope[0] * (u - 0.5) + slope[1] * (v - 0.5))
    albedo = np.full((size, size), rng.uniform(0.3, 1.0))
    rows = np.arange(size)[:, None]
    cols = np.arange(size)[None, :]
    shapes = []
    for _ in range(spec.shape_count):
        level = rng.uniform(0.0, 1.0)
        tilt = rng.uniform(-0.2, 0.2, size=2)
        kind = int(rng.integers(0, 2))
        cy, cx = rng.uniform(0, size, size=2)
        ry, rx = rng.uniform(size / 8, size / 3, size=2)
        shapes.append((level, tilt, kind, cy, cx, ry, rx, rng.uniform(0.3, 1.0)))
    # painter's order: farthest (largest depth) first, so nearer occludes
    for level, tilt, kind, cy, cx, ry, rx, alb in sorted(shapes, reverse=True, key=lambda s: s[0]):
        if kind == 0:
            mask = (np.abs(rows - cy) <= ry) & (np.abs(cols - cx) <= rx)
        else:
            mask = ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0
        plane = level + tilt[0] * (u - cy / (size - 1)) + tilt[1] * (v - cx / (size - 1))
        depth = np.where(mask, plane, depth)
        albedo = np.where(mask, alb, albedo)
    depth = depth + _rough_field(rng, size, max(size // 8, 2), 0.15)
    depth = normalize_depth_map(depth)

    shading = albedo * (0.25 + 0.75 * depth)
    if spec.noise_level > 0:
        shading = shading + rng.normal(0.0, spec.noise_level, size=shading.shape)
    image = ImageGrid(np.clip(shading, 0.0, 1.0))
    seg = grid_segment(image, spec.target_nodes)
    counts = node_pixel_counts(seg).astype(np.float64)
    node_depth = np.bincount(seg.label_map.ravel(), weights=depth.ravel(), minlength=seg.n)
    targets = (node_depth / counts)[:, None]
    return LabeledExample(image, seg, targets, "depth")


def gen_scene(spec: SyntheticSceneSpec) -> LabeledExample:
    if spec.task == "segmentation":
        return gen_segmentation_scene(spec)
    return gen_depth_scene(spec)


def synth_dataset(
    base: SyntheticSceneSpec, count: int, train_frac: float = 0.6, val_frac: float = 0.2
) -> Dataset:
    """Generate ``count`` scenes (seed + index each) and split them in order."""
    if count < 1:
        raise ValueError("count must be positive")
    if train_frac < 0 or val_frac < 0 or train_frac + val_frac > 1.0 + 1e-12:
        raise ValueError("split fractions must be nonnegative and sum to at most 1")
    examples = []
    for i in range(count):
        spec = SyntheticSceneSpec(
            task=base.task,
            size=base.size,
            classes=base.classes,
            shape_count=base.shape_count,
            noise_level=base.noise_level,
            target_nodes=base.target_nodes,
            seed=base.seed + i,
        )
        examples.append(gen_scene(spec))
    n_train = int(train_frac * count + 0.5)
    n_val = int(val_frac * count + 0.5)
    n_train = min(n_train, count)
    n_val = min(n_val, count - n_train)
    return Dataset(
        base.task,
        examples[:n_train],
        examples[n_train : n_train + n_val],
        examples[n_train + n_val :],
    )


def corrupted_node_count(n: int, fraction: float) -> int:
    """Number of nodes a corruption touches: round to nearest, ties up."""
    return int(np.floor(fraction * n + 0.5))


def _pick_nodes(rng, n: int, fraction: float) -> np.ndarray:
    count = corrupted_node_count(n, fraction)
    return rng.choice(n, size=count, replace=False)


def inject_gaussian_noise(targets, fraction: float, sigma: float, rng) -> np.ndarray:
    """Add N(0, sigma^2) draws to a sampled fraction of nodes (no re-clip)."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    out = np.array(targets, dtype=np.float64, copy=True)
    picked = _pick_nodes(rng, out.shape[0], fraction)
    if picked.size:
        out[picked] += rng.normal(0.0, sigma, size=picked.size).reshape(-1, *([1] * (out.ndim - 1)))
    return out


def inject_outliers(targets, fraction: float, magnitude: float, rng) -> np.ndarray:
    """Add a constant large offset to a sampled fraction of nodes."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    out = np.array(targets, dtype=np.float64, copy=True)
    picked = _pick_nodes(rng, out.shape[0], fraction)
    if picked.size:
        out[picked] += magnitude
    return out


def apply_corruption(targets, spec: CorruptionSpec, rng) -> np.ndarray:
    if spec.kind == "gaussian_noise":
        return inject_gaussian_noise(targets, spec.fraction, spec.sigma, rng)
    return inject_outliers(targets, spec.fraction, spec.magnitude, rng)


def corrupt_dataset(dataset: Dataset, spec: CorruptionSpec, seed: int) -> Dataset:
    """Corrupt train and val targets; test targets stay clean."""
    kind_id = _CORRUPTION_KINDS.index(spec.kind)
    rng = np.random.default_rng([seed, kind_id, int(round(spec.fraction * 1000))])

    def corrupt_split(examples):
        out = []
        for ex in examples:
            targets = apply_corruption(ex.targets, spec, rng)
            out.append(LabeledExample(ex.image, ex.seg, targets, ex.task))
        return out

    return Dataset(
        dataset.task,
        corrupt_split(dataset.train),
        corrupt_split(dataset.val),
        list(dataset.test),
    )
