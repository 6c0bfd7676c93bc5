"""Procedural generators for labeled binary-image datasets.

Three object families: random pixels, filled triangles, filled circles.
Shape datasets place objects without 4-adjacent contact by default, so the
nominal object count equals the component count; a fixed per-image pixel
budget variant decouples component count from foreground area.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .bitgrid import BitGrid, GenerationError, num_components

KINDS = ("random_pixels", "triangle", "circle")

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def child_seed(seed: int, index: int) -> int:
    """Per-image seed; parallel and serial generation agree bit-for-bit."""
    return _splitmix64(_splitmix64(seed) ^ index)


@dataclass(frozen=True)
class ShapeSpec:
    """Object family plus its size and count ranges.

    size_range is the bounding extent (diameter) in pixels; unused for
    random_pixels. count_range is objects per image, except for
    random_pixels where it is the foreground-pixel count.
    """

    kind: str
    size_range: tuple[int, int] = (0, 0)
    count_range: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        clo, chi = self.count_range
        if not (1 <= clo <= chi):
            raise ValueError("count_range must satisfy 1 <= lo <= hi")
        if self.kind != "random_pixels":
            slo, shi = self.size_range
            if not (2 <= slo <= shi):
                raise ValueError("shape size_range must satisfy 2 <= lo <= hi")


@dataclass(frozen=True)
class GenConfig:
    """Full provenance of a generated dataset."""

    image_size: int
    shape: ShapeSpec
    n_images: int
    seed: int
    pixel_budget: int | None = None
    budget_tolerance: float = 0.02
    allow_overlap: bool = False

    def __post_init__(self):
        if self.image_size < 1 or self.n_images < 0:
            raise ValueError("image_size must be >= 1 and n_images >= 0")
        if self.pixel_budget is not None:
            if self.pixel_budget > 0.5 * self.image_size**2:
                raise ValueError("pixel budget exceeds half the image area")
            if self.allow_overlap:
                raise ValueError("fixed-budget generation requires allow_overlap=False")
            if self.shape.kind == "random_pixels":
                raise ValueError("pixel budget applies to shape datasets only")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"]["size_range"] = list(self.shape.size_range)
        d["shape"]["count_range"] = list(self.shape.count_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        shape = d["shape"]
        return cls(
            image_size=d["image_size"],
            shape=ShapeSpec(
                shape["kind"],
                tuple(shape["size_range"]),
                tuple(shape["count_range"]),
            ),
            n_images=d["n_images"],
            seed=d["seed"],
            pixel_budget=d.get("pixel_budget"),
            budget_tolerance=d.get("budget_tolerance", 0.02),
            allow_overlap=d.get("allow_overlap", False),
        )


@dataclass
class Dataset:
    """Generated images with oracle-verified component-count labels."""

    manifest: dict
    images: list[BitGrid]
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.images)

    def as_arrays(self, layout: str = "flat") -> tuple[np.ndarray, np.ndarray]:
        """Float64 pixels + labels; layout 'flat' (n, w*h) or 'conv' (n, 1, h, w)."""
        stack = np.stack([g.to_bool() for g in self.images]).astype(np.float64)
        if layout == "flat":
            x = stack.reshape(len(self.images), -1)
        elif layout == "conv":
            x = stack[:, None, :, :]
        else:
            raise ValueError(f"unknown layout {layout!r}")
        return x, self.labels.astype(np.float64)


def gen_random_pixels(image_size: int, k: int, rng: np.random.Generator) -> BitGrid:
    """Exactly k foreground pixels, uniform without replacement."""
    n = image_size * image_size
    if not (0 <= k <= n):
        raise ValueError(f"pixel count {k} out of range [0, {n}]")
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=k, replace=False)] = True
    return BitGrid.from_bool(mask.reshape(image_size, image_size))


def raster_shape(
    kind: str, center: tuple[int, int], size: int, image_size: int
) -> tuple[np.ndarray, np.ndarray]:
    """Pixel set (xs, ys) of one filled shape; bounding box must fit the image.

    circle: lattice disk of diameter `size`. triangle: filled upright
    isoceles triangle with base = height = size (row y from the apex is
    y+1 pixels wide), so its area is size*(size+1)/2.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    x0 = center[0] - size // 2
    y0 = center[1] - size // 2
    if x0 < 0 or y0 < 0 or x0 + size > image_size or y0 + size > image_size:
        raise ValueError("shape bounding box outside the image")
    if kind == "circle":
        c = (size - 1) / 2.0
        r2 = (size / 2.0) ** 2
        dy, dx = np.mgrid[0:size, 0:size]
        keep = (dx - c) ** 2 + (dy - c) ** 2 <= r2
        ys, xs = np.nonzero(keep)
        return xs + x0, ys + y0
    if kind == "triangle":
        xs = []
        ys = []
        for r in range(size):
            left = x0 + (size - (r + 1)) // 2
            xs.append(np.arange(left, left + r + 1))
            ys.append(np.full(r + 1, y0 + r))
        return np.concatenate(xs), np.concatenate(ys)
    raise ValueError(f"unknown shape kind {kind!r}")


_AREA_CACHE: dict[tuple[str, int], int] = {}


def shape_area(kind: str, size: int) -> int:
    """Rasterized pixel count of one shape (cached)."""
    key = (kind, size)
    if key not in _AREA_CACHE:
        xs, _ = raster_shape(kind, (size, size), size, 3 * size)
        _AREA_CACHE[key] = len(xs)
    return _AREA_CACHE[key]


def touches_occupied(occupied: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> bool:
    """True if the pixel set overlaps or 4-touches occupied pixels."""
    if occupied[ys, xs].any():
        return True
    h, w = occupied.shape
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nx = xs + dx
        ny = ys + dy
        ok = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
        if occupied[ny[ok], nx[ok]].any():
            return True
    return False


def _place_shapes(
    image_size: int,
    kind: str,
    sizes: list[int],
    rng: np.random.Generator,
    allow_overlap: bool,
    tries_per_shape: int = 250,
) -> np.ndarray | None:
    """Place shapes at uniform random positions; None if placement jams."""
    mask = np.zeros((image_size, image_size), dtype=bool)
    # largest first packs much better at high fill
    for s in sorted(sizes, reverse=True):
        placed = False
        lo = s // 2
        hi = image_size - s + s // 2  # keeps the s-wide bounding box inside
        for _ in range(tries_per_shape):
            cx = int(rng.integers(lo, hi + 1))
            cy = int(rng.integers(lo, hi + 1))
            xs, ys = raster_shape(kind, (cx, cy), s, image_size)
            if allow_overlap or not touches_occupied(mask, xs, ys):
                mask[ys, xs] = True
                placed = True
                break
        if not placed:
            return None
    return mask


def gen_shape_image(
    config: GenConfig, target_count: int, rng: np.random.Generator
) -> tuple[BitGrid, int]:
    """Place target_count shapes with sizes uniform in size_range.

    Without overlap the shapes never 4-touch, so the component count equals
    target_count; with overlap the label is recomputed by the oracle.
    """
    spec = config.shape
    clo, chi = spec.count_range
    if not (clo <= target_count <= chi):
        raise ValueError("target_count outside count_range")
    slo, shi = spec.size_range
    if shi > config.image_size:
        raise ValueError("shapes larger than the image")
    for _ in range(40):
        sizes = [int(s) for s in rng.integers(slo, shi + 1, size=target_count)]
        mask = _place_shapes(config.image_size, spec.kind, sizes, rng, config.allow_overlap)
        if mask is None:
            continue
        grid = BitGrid.from_bool(mask)
        label = num_components(grid) if config.allow_overlap else target_count
        return grid, label
    raise GenerationError(
        f"could not place {target_count} {spec.kind}s of size {spec.size_range} "
        f"in a {config.image_size}x{config.image_size} image"
    )


def _solve_budget_sizes(
    kind: str,
    target_count: int,
    budget: int,
    tolerance: float,
    size_range: tuple[int, int],
    rng: np.random.Generator,
) -> list[int] | None:
    """Draw sizes, rescale to the budget, then nudge onto a random in-window total.

    The landing total is drawn uniformly inside the tolerance window so that
    the realized foreground area is independent of the object count (no
    count-vs-popcount leak for the regression shortcut to exploit).
    """
    slo = max(2, size_range[0])
    shi = size_range[1]
    lo_w = budget * (1 - tolerance)
    hi_w = budget * (1 + tolerance)
    if target_count * shape_area(kind, slo) > hi_w:
        return None  # even minimal sizes overshoot
    if target_count * shape_area(kind, shi) < lo_w:
        return None  # even maximal sizes cannot reach the budget
    target = int(rng.integers(int(np.ceil(lo_w)), int(hi_w) + 1))
    sizes = rng.integers(slo, shi + 1, size=target_count).astype(np.int64)
    total = sum(shape_area(kind, int(s)) for s in sizes)
    scale = np.sqrt(target / max(total, 1))
    sizes = np.clip(np.rint(sizes * scale).astype(np.int64), slo, shi)
    total = sum(shape_area(kind, int(s)) for s in sizes)
    total = int(total)
    stalled = 0
    while total != target and stalled < 400:
        i = int(rng.integers(target_count))
        s = int(sizes[i])
        diff = target - total
        if diff > 0 and s < shi:
            step = shape_area(kind, s + 1) - shape_area(kind, s)
            if step < 2 * diff:  # strict: |target - total| must shrink
                sizes[i] += 1
                total += step
                stalled = 0
                continue
        elif diff < 0 and s > slo:
            step = shape_area(kind, s) - shape_area(kind, s - 1)
            if step < -2 * diff:
                sizes[i] -= 1
                total -= step
                stalled = 0
                continue
        stalled += 1  # sampled object clamped or every step would overshoot
    if lo_w <= total <= hi_w:
        return [int(s) for s in sizes]
    return None


def gen_fixed_budget_image(
    config: GenConfig, target_count: int, rng: np.random.Generator
) -> tuple[BitGrid, int]:
    """Place target_count shapes whose total area meets the pixel budget.

    More objects force smaller per-object sizes. Shapes never touch, so the
    foreground popcount is exactly the sum of the solved areas.
    """
    if config.pixel_budget is None:
        raise ValueError("config has no pixel_budget")
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    spec = config.shape
    slo = max(2, spec.size_range[0])
    if target_count * shape_area(spec.kind, slo) > config.pixel_budget * (1 + config.budget_tolerance) or (
        target_count * shape_area(spec.kind, spec.size_range[1])
        < config.pixel_budget * (1 - config.budget_tolerance)
    ):
        raise GenerationError(
            f"budget {config.pixel_budget} infeasible for {target_count} "
            f"{spec.kind}s with sizes in {spec.size_range}"
        )
    for _ in range(40):
        sizes = _solve_budget_sizes(
            spec.kind,
            target_count,
            config.pixel_budget,
            config.budget_tolerance,
            spec.size_range,
            rng,
        )
        if sizes is None:
            continue  # unlucky nudge walk; redraw
        mask = _place_shapes(config.image_size, spec.kind, sizes, rng, False)
        if mask is None:
            continue
        grid = BitGrid.from_bool(mask)
        got = grid.count_ones()
        window = config.pixel_budget * config.budget_tolerance
        if abs(got - config.pixel_budget) > window:
            raise GenerationError("placed area drifted outside the budget window")
        return grid, target_count
    raise GenerationError(
        f"could not place {target_count} budgeted {spec.kind}s "
        f"in a {config.image_size}x{config.image_size} image"
    )


def gen_image(config: GenConfig, index: int) -> tuple[BitGrid, int]:
    """Generate image `index` of a dataset (independent of all other images)."""
    rng = np.random.default_rng(child_seed(config.seed, index))
    clo, chi = config.shape.count_range
    target = int(rng.integers(clo, chi + 1))
    if config.shape.kind == "random_pixels":
        grid = gen_random_pixels(config.image_size, target, rng)
        return grid, num_components(grid)
    if config.pixel_budget is not None:
        grid, label = gen_fixed_budget_image(config, target, rng)
    else:
        grid, label = gen_shape_image(config, target, rng)
    oracle = num_components(grid)
    if oracle != label:
        raise GenerationError(
            f"label {label} disagrees with oracle count {oracle}"
        )
    return grid, oracle


def gen_dataset(config: GenConfig) -> Dataset:
    """Generate the full dataset; identical config+seed is bit-identical."""
    images = []
    labels = []
    for i in range(config.n_images):
        try:
            grid, label = gen_image(config, i)
        except (GenerationError, ValueError) as exc:
            raise GenerationError(f"image {i}: {exc}") from exc
        images.append(grid)
        labels.append(label)
    manifest = {"format_version": 1, "generator": config.to_dict()}
    return Dataset(manifest, images, np.asarray(labels, dtype=np.int64))
