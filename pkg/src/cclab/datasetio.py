"""Bit-exact serialization of datasets and reports, plus static SVG plots.

Dataset container layout (all integers little-endian):
  magic  "BGSET1" NUL-padded to 8 bytes
  u16    format version (= 1)
  u32    width, u32 height, u32 image count
  u8     connectivity (= 4)
  9 bytes reserved (zero), so the header is exactly 32 bytes
  per image: u32 label, then the packed rows (MSB-first, byte-padded)
A JSON sidecar at <path>.json carries the generator manifest.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .bitgrid import BitGrid, num_components
from .synth import Dataset

_MAGIC = b"BGSET1\x00\x00"
_VERSION = 1
_HEADER = struct.Struct("<8sHIIIB9x")


class DatasetFormatError(ValueError):
    """Malformed, truncated, or label-inconsistent dataset file."""


def write_dataset(dataset: Dataset, path) -> int:
    """Write the container and its manifest sidecar; returns bytes written."""
    if not dataset.images:
        raise ValueError("refusing to write an empty dataset")
    w, h = dataset.images[0].width, dataset.images[0].height
    for i, img in enumerate(dataset.images):
        if (img.width, img.height) != (w, h):
            raise ValueError(f"image {i} has mismatched dimensions")
    if len(dataset.images) != len(dataset.labels):
        raise ValueError("images and labels differ in length")
    out = bytearray(_HEADER.pack(_MAGIC, _VERSION, w, h, len(dataset.images), 4))
    for img, label in zip(dataset.images, dataset.labels):
        out += struct.pack("<I", int(label))
        out += img.bits
    data = bytes(out)
    with open(path, "wb") as fh:
        fh.write(data)
    with open(str(path) + ".json", "w") as fh:
        fh.write(canonical_json(dataset.manifest))
    return len(data)


def read_dataset(path, verify: bool = False) -> Dataset:
    """Inverse of write_dataset; verify re-labels every image with the oracle."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise DatasetFormatError("file shorter than the header")
    magic, version, w, h, count, connectivity = _HEADER.unpack_from(data, 0)
    if magic != _MAGIC:
        raise DatasetFormatError("bad magic; not a dataset container")
    if version != _VERSION:
        raise DatasetFormatError(f"unsupported container version {version}")
    if connectivity != 4:
        raise DatasetFormatError(f"unsupported connectivity {connectivity}")
    row_bytes = (w + 7) // 8
    img_bytes = h * row_bytes
    expected = _HEADER.size + count * (4 + img_bytes)
    if len(data) != expected:
        raise DatasetFormatError(
            f"payload size {len(data)} != declared {expected} for {count} images"
        )
    images = []
    labels = np.empty(count, dtype=np.int64)
    off = _HEADER.size
    for i in range(count):
        (labels[i],) = struct.unpack_from("<I", data, off)
        off += 4
        images.append(BitGrid(w, h, data[off : off + img_bytes]))
        off += img_bytes
    try:
        with open(str(path) + ".json") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        manifest = {"format_version": _VERSION, "generator": None}
    if verify:
        for i, img in enumerate(images):
            got = num_components(img)
            if got != labels[i]:
                raise DatasetFormatError(
                    f"image {i}: stored label {labels[i]} != oracle count {got}"
                )
    return Dataset(manifest, images, labels)


# ---------------------------------------------------------------- reports

def _plain(obj):
    """Recursively convert numpy scalars/arrays for JSON emission."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _float_repr(value: float) -> str:
    if not np.isfinite(value):
        raise ValueError("non-finite float in report")
    return format(value, ".17g")


class _CanonicalEncoder(json.JSONEncoder):
    """json.JSONEncoder with 17-significant-digit floats (round-trip exact)."""

    def iterencode(self, o, _one_shot=False):
        markers = {} if self.check_circular else None
        indent = self.indent
        if indent is not None and not isinstance(indent, str):
            indent = " " * indent
        encoder = json.encoder._make_iterencode(
            markers,
            self.default,
            json.encoder.encode_basestring_ascii,
            indent,
            _float_repr,
            self.key_separator,
            self.item_separator,
            self.sort_keys,
            self.skipkeys,
            _one_shot,
        )
        return encoder(o, 0)


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, 17-sig-digit floats, trailing newline."""
    return json.dumps(_plain(obj), cls=_CanonicalEncoder, sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        fh.write(canonical_json(obj))


def write_samples_csv(path, samples) -> None:
    """Per-sample sidecar: sample_id,true,pred,abs_rel_err."""
    lines = ["sample_id,true,pred,abs_rel_err"]
    for i, (true, pred) in enumerate(samples):
        err = abs(pred - true) / true
        lines.append(f"{i},{int(true)},{_float_repr(pred)},{_float_repr(err)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_trace_csv(path, trace) -> None:
    """Loss-curve sidecar: epoch,train_loss,val_loss (val blank if unsplit)."""
    lines = ["epoch,train_loss,val_loss"]
    for i, tl in enumerate(trace.train_loss):
        vl = _float_repr(trace.val_loss[i]) if i < len(trace.val_loss) else ""
        lines.append(f"{i + 1},{_float_repr(tl)},{vl}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------- SVG plots

class _Svg:
    """Tiny deterministic SVG 1.1 string builder."""

    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.parts = [
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
            f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">\n'
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>\n'
        ]

    def rect(self, x, y, w, h, fill, opacity=1.0, stroke="none"):
        self.parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" '
            f'fill="{fill}" fill-opacity="{opacity:.2f}" stroke="{stroke}"/>\n'
        )

    def line(self, x1, y1, x2, y2, stroke, width=1.0, dash=None):
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
            f'stroke="{stroke}" stroke-width="{width:.2f}"{extra}/>\n'
        )

    def circle(self, cx, cy, r, fill, opacity=1.0):
        self.parts.append(
            f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{r:.2f}" fill="{fill}" '
            f'fill-opacity="{opacity:.2f}"/>\n'
        )

    def polyline(self, points, stroke, width=1.5):
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{stroke}" '
            f'stroke-width="{width:.2f}"/>\n'
        )

    def text(self, x, y, s, size=12, anchor="start", rotate=None):
        extra = f' transform="rotate({rotate} {x:.2f} {y:.2f})"' if rotate is not None else ""
        self.parts.append(
            f'<text x="{x:.2f}" y="{y:.2f}" font-family="sans-serif" '
            f'font-size="{size}" text-anchor="{anchor}"{extra}>{s}</text>\n'
        )

    def render(self) -> str:
        return "".join(self.parts) + "</svg>\n"


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** np.floor(np.log10(raw))
    step = min((s for s in (1.0, 2.0, 5.0, 10.0) if s * mag >= raw), default=10.0) * mag
    start = np.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 else float(t))
        t += step
    return ticks


def _fmt_tick(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return f"{v:.4g}"


class _Axes:
    """Margin bookkeeping and data-to-pixel mapping for one plot panel."""

    def __init__(self, svg, xlim, ylim, xlabel, ylabel, title, ylog=False):
        self.svg = svg
        self.ml, self.mr, self.mt, self.mb = 62, 20, 34, 46
        self.pw = svg.width - self.ml - self.mr
        self.ph = svg.height - self.mt - self.mb
        self.ylog = ylog
        self.xlim = xlim
        self.ylim = (np.log10(ylim[0]), np.log10(ylim[1])) if ylog else ylim
        svg.text(svg.width / 2, 20, title, size=14, anchor="middle")
        svg.text(self.ml + self.pw / 2, svg.height - 10, xlabel, anchor="middle")
        svg.text(16, self.mt + self.ph / 2, ylabel, anchor="middle", rotate=-90)
        svg.rect(self.ml, self.mt, self.pw, self.ph, fill="none", stroke="black")

    def x(self, v):
        lo, hi = self.xlim
        return self.ml + (v - lo) / (hi - lo) * self.pw

    def y(self, v):
        lo, hi = self.ylim
        if self.ylog:
            v = np.log10(max(v, 10.0 ** lo))
        return self.mt + self.ph - (v - lo) / (hi - lo) * self.ph

    def draw_ticks(self):
        for t in _nice_ticks(*self.xlim):
            px = self.x(t)
            self.svg.line(px, self.mt + self.ph, px, self.mt + self.ph + 4, "black")
            self.svg.text(px, self.mt + self.ph + 16, _fmt_tick(t), size=10, anchor="middle")
        if self.ylog:
            lo, hi = self.ylim
            for e in range(int(np.floor(lo)), int(np.ceil(hi)) + 1):
                py = self.mt + self.ph - (e - lo) / (hi - lo) * self.ph
                if self.mt <= py <= self.mt + self.ph:
                    self.svg.line(self.ml - 4, py, self.ml, py, "black")
                    self.svg.text(self.ml - 6, py + 3, f"1e{e}", size=10, anchor="end")
        else:
            for t in _nice_ticks(*self.ylim):
                py = self.y(t)
                self.svg.line(self.ml - 4, py, self.ml, py, "black")
                self.svg.text(self.ml - 6, py + 3, _fmt_tick(t), size=10, anchor="end")


_MARKER_COLORS = ("steelblue", "crimson", "seagreen", "darkorange", "purple", "sienna")


def emit_plot(report: dict, kind: str, path) -> str:
    """Render one report as a self-contained SVG; returns the document text."""
    if kind == "scatter_true_vs_pred":
        svg = _scatter_plot(report)
    elif kind == "loss_curves":
        svg = _loss_plot(report)
    elif kind == "error_vs_count":
        svg = _error_plot(report)
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    with open(path, "w") as fh:
        fh.write(svg)
    return svg


def _require(report, *fields):
    missing = [f for f in fields if f not in report]
    if missing:
        raise ValueError(f"report missing fields: {', '.join(missing)}")


def _scatter_plot(report: dict) -> str:
    _require(report, "samples")
    samples = report["samples"]
    svg = _Svg(640, 480)
    trues = [s[0] for s in samples]
    preds = [s[1] for s in samples]
    hi = max(trues + preds + [1.0]) * 1.05
    lo = min([0.0] + preds)
    ax = _Axes(svg, (lo, hi), (lo, hi), "true count", "predicted count",
               report.get("title", "true vs predicted"))
    train_range = report.get("train_range")
    if train_range:
        x0, x1 = ax.x(train_range[0]), ax.x(train_range[1])
        svg.rect(x0, ax.mt, x1 - x0, ax.ph, fill="gold", opacity=0.25)
    svg.line(ax.x(max(lo, 0)), ax.y(max(lo, 0)), ax.x(hi), ax.y(hi), "gray", dash="4,3")
    for t, p in samples:
        svg.circle(ax.x(t), ax.y(min(max(p, lo), hi)), 2.0, "steelblue", opacity=0.6)
    ax.draw_ticks()
    return svg.render()


def _loss_plot(report: dict) -> str:
    _require(report, "traces")
    traces = report["traces"]
    svg = _Svg(640, 480)
    all_vals = [v for tr in traces for v in tr["train_loss"] if v > 0]
    if not all_vals:
        all_vals = [1.0]
    threshold = report.get("threshold")
    if threshold:
        all_vals.append(threshold)
    ylo, yhi = min(all_vals) * 0.8, max(all_vals) * 1.2
    epochs = max((len(tr["train_loss"]) for tr in traces), default=1)
    ax = _Axes(svg, (1, max(epochs, 2)), (ylo, yhi), "epoch", "train loss",
               report.get("title", "training loss"), ylog=True)
    if threshold:
        svg.line(ax.ml, ax.y(threshold), ax.ml + ax.pw, ax.y(threshold), "red", dash="5,3")
    for i, tr in enumerate(traces):
        color = _MARKER_COLORS[i % len(_MARKER_COLORS)]
        pts = [(ax.x(e + 1), ax.y(v)) for e, v in enumerate(tr["train_loss"]) if v > 0]
        if pts:
            svg.polyline(pts, color)
        label = tr.get("label", f"trace {i}")
        reach = tr.get("epochs_to_threshold")
        if reach:
            svg.line(ax.x(reach), ax.mt, ax.x(reach), ax.mt + ax.ph, color, dash="2,4")
            label += f" (threshold @ {reach})"
        svg.text(ax.ml + 10, ax.mt + 16 + 14 * i, label, size=11)
        svg.rect(ax.ml + 90 + 8 * len(label), ax.mt + 9 + 14 * i, 10, 8, fill=color)
    ax.draw_ticks()
    return svg.render()


def _error_plot(report: dict) -> str:
    _require(report, "bins")
    bins = report["bins"]
    svg = _Svg(640, 480)
    if bins:
        xhi = max(b["hi"] for b in bins)
        yhi = max(max(b["mean_err"] for b in bins), report.get("reference") or 0.0) * 1.15
    else:
        xhi, yhi = 1.0, 1.0
    ax = _Axes(svg, (0, xhi), (0, max(yhi, 1e-6)), "true count", "mean relative error",
               report.get("title", "error vs count"))
    train_range = report.get("train_range")
    if train_range:
        x0, x1 = ax.x(train_range[0]), ax.x(train_range[1])
        svg.rect(x0, ax.mt, x1 - x0, ax.ph, fill="gold", opacity=0.25)
    ref = report.get("reference")
    if ref:
        svg.line(ax.ml, ax.y(ref), ax.ml + ax.pw, ax.y(ref), "red", dash="5,3")
    pts = [(ax.x((b["lo"] + b["hi"]) / 2), ax.y(b["mean_err"])) for b in bins]
    if pts:
        svg.polyline(pts, "steelblue")
        for x, y in pts:
            svg.circle(x, y, 2.5, "steelblue")
    ax.draw_ticks()
    return svg.render()
