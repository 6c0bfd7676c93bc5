"""Bit-packed binary images and exact 4-connected component labeling.

Coordinates are (x, y) = (column, row); the origin is the top-left pixel.
Foreground pixels are 1, background 0. Rows are packed MSB-first and padded
to a byte boundary, so `bits` has height * ceil(width / 8) bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


class GenerationError(RuntimeError):
    """Raised when a procedural generator cannot place its objects."""


# per-byte popcount table; padding bits are zero so summing over bytes is exact
_POPCNT = np.unpackbits(np.arange(256, dtype=np.uint8).reshape(-1, 1), axis=1).sum(
    axis=1
).astype(np.int64)


@dataclass(frozen=True)
class BitGrid:
    """Immutable 2-D binary image, rows bit-packed MSB-first."""

    width: int
    height: int
    bits: bytes

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be >= 1")
        if len(self.bits) != self.height * self.row_bytes:
            raise ValueError(
                f"expected {self.height * self.row_bytes} packed bytes, got {len(self.bits)}"
            )
        pad = self.row_bytes * 8 - self.width
        if pad:
            # every bit beyond the row width must be zero
            tail = np.frombuffer(self.bits, dtype=np.uint8).reshape(
                self.height, self.row_bytes
            )[:, -1]
            if np.any(tail & ((1 << pad) - 1)):
                raise ValueError("padding bits beyond row width must be zero")

    @property
    def row_bytes(self) -> int:
        return (self.width + 7) // 8

    @classmethod
    def from_bool(cls, mask) -> "BitGrid":
        mask = np.asarray(mask)
        if mask.ndim != 2:
            raise ValueError("mask must be 2-D")
        packed = np.packbits(mask.astype(bool), axis=1)
        return cls(mask.shape[1], mask.shape[0], packed.tobytes())

    @classmethod
    def zeros(cls, width: int, height: int) -> "BitGrid":
        return cls(width, height, bytes(height * ((width + 7) // 8)))

    @classmethod
    def full(cls, width: int, height: int) -> "BitGrid":
        return cls.from_bool(np.ones((height, width), dtype=bool))

    def to_bool(self) -> np.ndarray:
        rows = np.frombuffer(self.bits, dtype=np.uint8).reshape(
            self.height, self.row_bytes
        )
        return np.unpackbits(rows, axis=1)[:, : self.width].astype(bool)

    def count_ones(self) -> int:
        return int(_POPCNT[np.frombuffer(self.bits, dtype=np.uint8)].sum())

    def get(self, x: int, y: int) -> bool:
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise IndexError("pixel out of range")
        byte = self.bits[y * self.row_bytes + (x >> 3)]
        return bool((byte >> (7 - (x & 7))) & 1)

    def with_pixel(self, x: int, y: int, value: bool = True) -> "BitGrid":
        """Return a copy with one pixel set or cleared."""
        mask = self.to_bool()
        mask[y, x] = value
        return BitGrid.from_bool(mask)


def count_ones(grid: BitGrid) -> int:
    """Number of foreground pixels."""
    return grid.count_ones()


def hamming_distance(a: BitGrid, b: BitGrid) -> int:
    """Number of pixels in which two same-shape grids differ."""
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError("grids must have identical dimensions")
    xor = np.frombuffer(a.bits, dtype=np.uint8) ^ np.frombuffer(b.bits, dtype=np.uint8)
    return int(_POPCNT[xor].sum())


@dataclass(frozen=True)
class LabelGrid:
    """Per-pixel component ids: 0 = background, 1..num_components = components."""

    width: int
    height: int
    labels: np.ndarray
    num_components: int

    def validate(self) -> None:
        """Check the labeling invariants (used by tests; oracles stay honest)."""
        labels = self.labels
        present = np.unique(labels[labels > 0])
        if self.num_components != len(present):
            raise AssertionError("component count does not match distinct labels")
        if self.num_components and not np.array_equal(
            present, np.arange(1, self.num_components + 1)
        ):
            raise AssertionError("labels must be contiguous 1..C")
        # 4-adjacent foreground pixels share a label
        horiz = (labels[:, :-1] > 0) & (labels[:, 1:] > 0)
        if np.any(labels[:, :-1][horiz] != labels[:, 1:][horiz]):
            raise AssertionError("horizontally adjacent pixels differ in label")
        vert = (labels[:-1, :] > 0) & (labels[1:, :] > 0)
        if np.any(labels[:-1, :][vert] != labels[1:, :][vert]):
            raise AssertionError("vertically adjacent pixels differ in label")


@_njit(cache=True)
def _uf_find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:  # path compression
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@_njit(cache=True)
def _uf_union(parent, rank, a, b):
    ra = _uf_find(parent, a)
    rb = _uf_find(parent, b)
    if ra == rb:
        return
    if rank[ra] < rank[rb]:
        parent[ra] = rb
    elif rank[ra] > rank[rb]:
        parent[rb] = ra
    else:
        parent[rb] = ra
        rank[ra] += 1


@_njit(cache=True)
def _label_union_find(mask):
    """Two-pass raster labeling with union by rank + path compression."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    cap = (h * w) // 2 + 2  # a 4-connected grid has at most ceil(h*w/2) components
    parent = np.zeros(cap, dtype=np.int32)
    rank = np.zeros(cap, dtype=np.int32)
    nxt = 1
    for y in range(h):
        for x in range(w):
            if mask[y, x] == 0:
                continue
            left = labels[y, x - 1] if x > 0 else 0
            up = labels[y - 1, x] if y > 0 else 0
            if left == 0 and up == 0:
                parent[nxt] = nxt
                labels[y, x] = nxt
                nxt += 1
            elif left != 0 and up == 0:
                labels[y, x] = left
            elif left == 0 and up != 0:
                labels[y, x] = up
            else:
                labels[y, x] = left
                _uf_union(parent, rank, left, up)
    # second pass: resolve roots, renumber in raster first-encounter order
    remap = np.zeros(nxt, dtype=np.int32)
    count = 0
    for y in range(h):
        for x in range(w):
            lab = labels[y, x]
            if lab == 0:
                continue
            root = _uf_find(parent, lab)
            if remap[root] == 0:
                count += 1
                remap[root] = count
            labels[y, x] = remap[root]
    return labels, count


@_njit(cache=True)
def _label_bfs(mask):
    """Flood-fill labeling; kept as the independent reference oracle."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    qx = np.empty(h * w, dtype=np.int32)
    qy = np.empty(h * w, dtype=np.int32)
    count = 0
    for y0 in range(h):
        for x0 in range(w):
            if mask[y0, x0] == 0 or labels[y0, x0] != 0:
                continue
            count += 1
            labels[y0, x0] = count
            qx[0] = x0
            qy[0] = y0
            head = 0
            tail = 1
            while head < tail:
                x = qx[head]
                y = qy[head]
                head += 1
                if x > 0 and mask[y, x - 1] != 0 and labels[y, x - 1] == 0:
                    labels[y, x - 1] = count
                    qx[tail] = x - 1
                    qy[tail] = y
                    tail += 1
                if x + 1 < w and mask[y, x + 1] != 0 and labels[y, x + 1] == 0:
                    labels[y, x + 1] = count
                    qx[tail] = x + 1
                    qy[tail] = y
                    tail += 1
                if y > 0 and mask[y - 1, x] != 0 and labels[y - 1, x] == 0:
                    labels[y - 1, x] = count
                    qx[tail] = x
                    qy[tail] = y - 1
                    tail += 1
                if y + 1 < h and mask[y + 1, x] != 0 and labels[y + 1, x] == 0:
                    labels[y + 1, x] = count
                    qx[tail] = x
                    qy[tail] = y + 1
                    tail += 1
    return labels, count


_ALGORITHMS = {"union_find": _label_union_find, "bfs": _label_bfs}


def label_components(grid: BitGrid, algorithm: str = "union_find") -> LabelGrid:
    """Label 4-connected foreground components.

    Both algorithms assign ids in raster first-encounter order, so they return
    identical label arrays, not merely identical partitions.
    """
    try:
        kernel = _ALGORITHMS[algorithm]
    except KeyError:
        raise ValueError(f"unknown algorithm {algorithm!r}") from None
    mask = grid.to_bool().view(np.uint8)
    labels, count = kernel(mask)
    return LabelGrid(grid.width, grid.height, labels, int(count))


def num_components(grid: BitGrid, algorithm: str = "union_find") -> int:
    return label_components(grid, algorithm).num_components


def bridge_pair(
    rng_seed: int,
    image_size: int,
    diameter_range: tuple[int, int],
    n_shapes: int = 4,
) -> tuple[BitGrid, BitGrid]:
    """Generate two images differing in exactly one merging "bridge" pixel.

    Returns (a, b): a holds n_shapes disjoint circles, b is a plus one pixel
    that joins two of them, so num_components(b) == num_components(a) - 1.
    Deterministic for a given seed.
    """
    from . import synth  # synth depends on this module; import lazily

    lo, hi = diameter_range
    if not (hi >= lo >= 3):
        raise ValueError("diameter range must satisfy hi >= lo >= 3")
    if hi + 2 >= image_size // 2:
        raise ValueError("diameters do not fit the image")
    if n_shapes < 2:
        raise ValueError("need at least two shapes to bridge")

    rng = np.random.default_rng(rng_seed)
    for _ in range(64):
        pair = _try_bridge(rng, image_size, lo, hi, n_shapes, synth)
        if pair is not None:
            return pair
    raise GenerationError("could not place a bridgeable pair of circles")


def _try_bridge(rng, size, lo, hi, n_shapes, synth):
    mask = np.zeros((size, size), dtype=bool)
    d1 = int(rng.integers(lo, hi + 1))
    d2 = int(rng.integers(lo, hi + 1))
    yc = int(rng.integers(hi, size - hi))
    x1 = int(rng.integers(hi // 2 + 1, size - (d1 + d2 + 4)))
    try:
        xs1, ys1 = synth.raster_shape("circle", (x1, yc), d1, size)
    except ValueError:
        return None
    right = xs1[ys1 == yc].max()
    # provisional second circle, then translate so the center-row gap is one pixel
    cx2 = right + 2 + d2
    try:
        xs2, ys2 = synth.raster_shape("circle", (cx2, yc), d2, size)
    except ValueError:
        return None
    shift = (right + 2) - xs2[ys2 == yc].min()
    xs2 = xs2 + shift
    if xs2.max() >= size:
        return None
    mask[ys1, xs1] = True
    if mask[ys2, xs2].any():
        return None
    mask[ys2, xs2] = True
    grid2 = BitGrid.from_bool(mask)
    if num_components(grid2) != 2:
        return None
    bx, by = right + 1, yc
    if mask[by, bx]:
        return None
    if num_components(grid2.with_pixel(bx, by)) != 1:
        return None

    # distractor circles: keep clear of everything placed so far and the bridge cell
    occupied = mask.copy()
    occupied[by, bx] = True
    for _ in range(n_shapes - 2):
        placed = False
        for _ in range(200):
            d = int(rng.integers(lo, hi + 1))
            cx = int(rng.integers(d // 2 + 1, size - d // 2 - 1))
            cy = int(rng.integers(d // 2 + 1, size - d // 2 - 1))
            try:
                xs, ys = synth.raster_shape("circle", (cx, cy), d, size)
            except ValueError:
                continue
            if synth.touches_occupied(occupied, xs, ys):
                continue
            mask[ys, xs] = True
            occupied[ys, xs] = True
            placed = True
            break
        if not placed:
            return None

    a = BitGrid.from_bool(mask)
    b = a.with_pixel(bx, by)
    if (
        num_components(a) == n_shapes
        and num_components(b) == n_shapes - 1
        and hamming_distance(a, b) == 1
    ):
        return a, b
    return None
