"""Detection head post-processing: decode, confidence filter, greedy NMS.

Head words arrive as signed fixed-point raws with 15 fraction bits in
y/x/channel order. Each grid cell carries three anchor records laid out
back to back: [tx, ty, tw, th, objectness, class scores...]. Decoding and
suppression run in double precision on the host side, outside the
fixed-point datapath.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

HEAD_FRAC = 15


@dataclass(frozen=True)
class HeadLayout:
    """Anchor set and class count; 3 * (5 + classes) head channels."""

    anchors: Tuple[Tuple[float, float], ...]  # normalized (w, h) pairs
    classes: int = 20

    def __post_init__(self):
        object.__setattr__(
            self, "anchors", tuple((float(w), float(h)) for w, h in self.anchors)
        )
        if len(self.anchors) != 3:
            raise ValueError("layout expects exactly 3 anchors")
        if self.classes < 1:
            raise ValueError("need at least one class")

    @property
    def channels(self) -> int:
        return len(self.anchors) * (5 + self.classes)


@dataclass(frozen=True)
class DetectionBox:
    class_id: int
    confidence: float
    cx: float
    cy: float
    w: float
    h: float
    cell_index: int = 0
    anchor: int = 0

    def to_dict(self) -> dict:
        return {
            "class_id": self.class_id,
            "confidence": self.confidence,
            "cx": self.cx,
            "cy": self.cy,
            "w": self.w,
            "h": self.h,
        }


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def decode(
    head_words: Sequence[int],
    layout: HeadLayout,
    conf_threshold: float,
    grid: Tuple[int, int] = (10, 10),
    frac_bits: int = HEAD_FRAC,
) -> List[DetectionBox]:
    """Standard one-scale decode of the raw head.

    cx = (x + sigmoid(tx)) / grid_w, w = anchor_w * exp(tw), confidence =
    sigmoid(obj) * max_c sigmoid(class_c); boxes below the threshold drop.
    """
    gh, gw = grid
    words = np.asarray(head_words, dtype=np.int64)
    expected = gh * gw * layout.channels
    if words.size != expected:
        raise ValueError(f"expected {expected} head words, got {words.size}")
    reals = words.astype(np.float64) / (1 << frac_bits)
    cells = reals.reshape(gh, gw, len(layout.anchors), 5 + layout.classes)
    boxes: List[DetectionBox] = []
    for y in range(gh):
        for x in range(gw):
            for a, (aw, ah) in enumerate(layout.anchors):
                rec = cells[y, x, a]
                obj = float(_sigmoid(rec[4:5])[0])
                cls_scores = _sigmoid(rec[5:])
                cls = int(np.argmax(cls_scores))
                conf = obj * float(cls_scores[cls])
                if conf < conf_threshold:
                    continue
                sx = float(_sigmoid(rec[0:1])[0])
                sy = float(_sigmoid(rec[1:2])[0])
                boxes.append(
                    DetectionBox(
                        class_id=cls,
                        confidence=conf,
                        cx=(x + sx) / gw,
                        cy=(y + sy) / gh,
                        w=aw * float(np.exp(rec[2])),
                        h=ah * float(np.exp(rec[3])),
                        cell_index=y * gw + x,
                        anchor=a,
                    )
                )
    return boxes


def iou(a: DetectionBox, b: DetectionBox) -> float:
    """Intersection-over-union of two center-format boxes.

    All areas derive from the same corner coordinates, so identical boxes
    give exactly 1.0.
    """
    ax0, ax1 = a.cx - a.w / 2, a.cx + a.w / 2
    ay0, ay1 = a.cy - a.h / 2, a.cy + a.h / 2
    bx0, bx1 = b.cx - b.w / 2, b.cx + b.w / 2
    by0, by1 = b.cy - b.h / 2, b.cy + b.h / 2
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def nms(boxes: Sequence[DetectionBox], iou_threshold: float) -> List[DetectionBox]:
    """Per-class greedy suppression with deterministic tie-breaking.

    Candidates are visited by descending confidence (ties: lower class id,
    then lower cell index, then lower anchor); a box survives iff its IoU
    with every kept box of the same class is below the threshold.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou threshold must lie in (0, 1)")
    ordered = sorted(
        boxes, key=lambda b: (-b.confidence, b.class_id, b.cell_index, b.anchor)
    )
    kept: List[DetectionBox] = []
    for cand in ordered:
        if all(
            iou(cand, k) < iou_threshold
            for k in kept
            if k.class_id == cand.class_id
        ):
            kept.append(cand)
    return kept


def boxes_to_json(boxes: Sequence[DetectionBox]) -> str:
    return json.dumps([b.to_dict() for b in boxes], indent=2) + "\n"


def load_layout(path) -> HeadLayout:
    """Anchors file: {"anchors": [[w, h], [w, h], [w, h]], "classes": 20}."""
    with open(path) as fh:
        data = json.load(fh)
    return HeadLayout(tuple(tuple(a) for a in data["anchors"]),
                      int(data.get("classes", 20)))


def render_boxes(image: np.ndarray, boxes: Sequence[DetectionBox]) -> np.ndarray:
    """Draw box borders onto a copy of a (3, H, W) uint8 image."""
    out = np.array(image, dtype=np.uint8, copy=True)
    _, h, w = out.shape
    palette = [
        (255, 64, 64), (64, 255, 64), (64, 64, 255), (255, 255, 64),
        (255, 64, 255), (64, 255, 255), (255, 160, 64), (160, 64, 255),
    ]
    for box in boxes:
        color = palette[box.class_id % len(palette)]
        x0 = int(np.clip(round((box.cx - box.w / 2) * w), 0, w - 1))
        x1 = int(np.clip(round((box.cx + box.w / 2) * w), 0, w - 1))
        y0 = int(np.clip(round((box.cy - box.h / 2) * h), 0, h - 1))
        y1 = int(np.clip(round((box.cy + box.h / 2) * h), 0, h - 1))
        for c in range(3):
            out[c, y0, x0:x1 + 1] = color[c]
            out[c, y1, x0:x1 + 1] = color[c]
            out[c, y0:y1 + 1, x0] = color[c]
            out[c, y0:y1 + 1, x1] = color[c]
    return out
