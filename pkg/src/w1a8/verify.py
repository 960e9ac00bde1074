"""Layer-wise numerical comparison between engines.

Two comparison families per run:

- streaming vs direct fixed-point, which must be bit-exact (this is the
  repository's central equivalence check), and
- floating reference vs direct fixed-point, where integer checkpoints are
  compared on the activation grid (within-1-LSB share) and raw checkpoints
  as reals recovered through their Q formats.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .model_graph import ModelSpec, ParamManifest
from .reference_engine import forward_fixed_direct, forward_float, image_bytes_to_float
from .stream_engine import run_stream, serialize_head


@dataclass(frozen=True)
class MetricRecord:
    max_abs: float
    mean_abs: float
    pearson: Optional[float]  # None when either side has zero variance
    within_1lsb_percent: Optional[float]

    def to_dict(self) -> dict:
        return {
            "max_abs": self.max_abs,
            "mean_abs": self.mean_abs,
            "pearson": "undefined" if self.pearson is None else self.pearson,
            "within_1lsb_percent": self.within_1lsb_percent,
        }


def metrics(a, b) -> MetricRecord:
    """max/mean absolute difference, population Pearson, within-1-LSB share.

    The within-1-LSB figure is reported only for integer sequences, where
    one LSB is one step of the quantized grid.
    """
    a_arr = np.asarray(a)
    b_arr = np.asarray(b)
    if a_arr.shape != b_arr.shape:
        raise ValueError(f"length mismatch: {a_arr.shape} vs {b_arr.shape}")
    if a_arr.size < 2:
        raise ValueError("need at least two samples")
    integral = np.issubdtype(a_arr.dtype, np.integer) and np.issubdtype(b_arr.dtype, np.integer)
    af = a_arr.astype(np.float64).ravel()
    bf = b_arr.astype(np.float64).ravel()
    d = np.abs(af - bf)
    within = float(100.0 * np.count_nonzero(d <= 1.0) / d.size) if integral else None
    da = af - af.mean()
    db = bf - bf.mean()
    va = float(np.dot(da, da))
    vb = float(np.dot(db, db))
    if va == 0.0 or vb == 0.0:
        pearson = None
    else:
        pearson = float(np.dot(da, db) / np.sqrt(va * vb))
    return MetricRecord(float(d.max()), float(d.mean()), pearson, within)


@dataclass(frozen=True)
class CheckpointRow:
    label: str
    comparison: str  # "stream_vs_direct" | "float_vs_fixed"
    space: str       # "raw", "u8", "words"
    record: MetricRecord

    def to_dict(self) -> dict:
        d = {"label": self.label, "comparison": self.comparison, "space": self.space}
        d.update(self.record.to_dict())
        return d


@dataclass
class ComparisonReport:
    rows: List[CheckpointRow]

    @property
    def bitexact_ok(self) -> bool:
        return all(
            r.record.max_abs == 0.0
            for r in self.rows
            if r.comparison == "stream_vs_direct"
        )

    def section(self, comparison: str) -> List[CheckpointRow]:
        return [r for r in self.rows if r.comparison == comparison]

    def row(self, comparison: str, label: str) -> CheckpointRow:
        for r in self.rows:
            if r.comparison == comparison and r.label == label:
                return r
        raise KeyError((comparison, label))

    def to_dict(self) -> dict:
        return {
            "bit_exact_ok": self.bitexact_ok,
            "rows": [r.to_dict() for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def format_table(self) -> str:
        def fmt_corr(rec: MetricRecord) -> str:
            return "undefined" if rec.pearson is None else f"corr={rec.pearson:.6f}"

        lines = ["streaming vs direct fixed (must be bit-exact):"]
        lines.append(f"  {'checkpoint':<18} {'max abs':>12} {'mean abs':>12}")
        for r in self.section("stream_vs_direct"):
            lines.append(
                f"  {r.label:<18} {r.record.max_abs:>12g} {r.record.mean_abs:>12g}"
            )
        lines.append("")
        lines.append("floating reference vs fixed pipeline:")
        lines.append(
            f"  {'checkpoint':<18} {'max abs':>12} {'mean abs':>12}  consistency"
        )
        for r in self.section("float_vs_fixed"):
            rec = r.record
            if rec.within_1lsb_percent is not None:
                tail = f"{rec.within_1lsb_percent:.4f}% of outputs within 1 LSB"
            else:
                tail = fmt_corr(rec)
            lines.append(
                f"  {r.label:<18} {rec.max_abs:>12.6g} {rec.mean_abs:>12.6g}  {tail}"
            )
        return "\n".join(lines)


def _title(name: str) -> str:
    return name[:1].upper() + name[1:]


def layerwise_compare(
    model: ModelSpec,
    manifest: ParamManifest,
    image_u8: np.ndarray,
    rom_latency: int = 1,
) -> ComparisonReport:
    """Run all three engines on one image and compare checkpoint by checkpoint."""
    stream = run_stream(model, manifest, image_u8, rom_latency=rom_latency, capture=True)
    direct = forward_fixed_direct(model, manifest, image_u8)
    flt = forward_float(model, manifest, image_bytes_to_float(image_u8))

    rows: List[CheckpointRow] = []
    for cap_s, cap_d in zip(stream.trace.layers, direct.layers):
        rows.append(
            CheckpointRow(
                f"{_title(cap_d.name)} raw", "stream_vs_direct", "raw",
                metrics(cap_s.raw, cap_d.raw),
            )
        )
        if cap_d.post is not None:
            rows.append(
                CheckpointRow(
                    f"{_title(cap_d.name)} post", "stream_vs_direct", "u8",
                    metrics(cap_s.post, cap_d.post),
                )
            )
    rows.append(
        CheckpointRow(
            "head words", "stream_vs_direct", "words",
            metrics(stream.head_words, serialize_head(direct.head)),
        )
    )

    first = model.layers[0]
    cap_f = flt.layers[0]
    cap_d = direct.layers[0]
    rows.append(
        CheckpointRow(
            f"{_title(first.name)} raw", "float_vs_fixed", "raw",
            metrics(cap_f.raw, cap_d.raw.astype(np.float64) / (1 << cap_d.raw_frac)),
        )
    )
    for layer, cap_f, cap_d in zip(model.layers, flt.layers, direct.layers):
        if cap_d.post is None:
            continue
        rows.append(
            CheckpointRow(
                f"{_title(layer.name)} post", "float_vs_fixed", "u8",
                metrics(cap_f.post, cap_d.post),
            )
        )
    rows.append(
        CheckpointRow(
            "final raw conv", "float_vs_fixed", "raw",
            metrics(flt.head, direct.head.astype(np.float64) / (1 << direct.head_frac)),
        )
    )
    return ComparisonReport(rows)
