"""Streaming dataflow engine mirroring the RTL module structure.

The pipeline is a deterministic Kahn-style network: pure state-machine
stages (padding adapter, 3x3 line buffer, W1A8/standard PE, post-process,
streaming max-pool, head serializer) connected by bounded FIFO queues.
Every stage consumes and produces tokens only through its own queues, so
any scheduler yields identical outputs; backpressure is queue fullness.

The default scheduler is a synchronous round-robin sweep, sink first, one
fire per stage per modeled cycle; that sweep count is the reported
cycles-per-frame figure. The cycle model is deliberately coarse: one token
per stage per cycle when not stalled, plus ``rom_latency`` cycles before a
parameter-holding stage's first fire (reads pipeline at one word per cycle
after the fill). Per-stage parallelism of real hardware is not modeled.

A randomized scheduler (seeded) is provided to demonstrate schedule
independence; cycle accounting is meaningful only for the round-robin run.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .fixedpoint import BudgetError
from .model_graph import CONV_W1A8, LayerSpec, ModelSpec, ParamManifest
from .quant import ChannelScales
from .reference_engine import (
    ACT_MAX,
    HEAD_LIMIT,
    PRODUCT_LIMIT,
    STD_ACC_LIMIT,
    W1A8_ACC_LIMIT,
    ForwardTrace,
    LayerCapture,
    _round_shift_i64,
    layer_scales,
)

HEAD_GROUP = 5  # output channels computed per serializer step


class PipelineDeadlock(RuntimeError):
    """No stage can progress while streams are unfinished."""


@dataclass(slots=True)
class PixelVector:
    """All channels of one stream position."""

    values: np.ndarray  # (C,) int64
    y: int
    x: int
    is_pad: bool = False


@dataclass(slots=True)
class WindowToken:
    """A 3x3 (or 1x1) neighborhood around one output position."""

    values: np.ndarray  # (C, k, k) int64
    y: int
    x: int


@dataclass
class StageStats:
    name: str
    tokens_in: int = 0
    tokens_out: int = 0
    fires: int = 0
    stall_cycles: int = 0
    queue_peak: int = 0
    buffer_peak_bytes: int = 0


@dataclass
class RunStats:
    scheduler: str
    queue_capacity: int
    rom_latency: int
    cycles_per_frame: Optional[int]
    stages: List[StageStats] = field(default_factory=list)

    def stage(self, name: str) -> StageStats:
        for st in self.stages:
            if st.name == name:
                return st
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "scheduler": self.scheduler,
            "queue_capacity": self.queue_capacity,
            "rom_latency": self.rom_latency,
            "cycles_per_frame": self.cycles_per_frame,
            "stages": [vars(s).copy() for s in self.stages],
        }


class BoundedQueue:
    __slots__ = ("capacity", "items", "peak")

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.items = deque()
        self.peak = 0

    def can_push(self) -> bool:
        return len(self.items) < self.capacity

    def push(self, item) -> None:
        self.items.append(item)
        if len(self.items) > self.peak:
            self.peak = len(self.items)

    def pop(self):
        return self.items.popleft()

    def __len__(self) -> int:
        return len(self.items)


# ---------------------------------------------------------------------------
# Pure per-token operations (the stages call these; tests call them directly)
# ---------------------------------------------------------------------------

def pe_w1a8(window_values: np.ndarray, signs: np.ndarray, mul_raw: np.ndarray) -> np.ndarray:
    """Sign-controlled accumulation with fused per-input-channel scales.

    window_values: (ic, k, k) activations; signs: (oc, ic, k, k) in {-1,+1};
    mul_raw: (ic,) fixed raws. Returns (oc,) exact int64 accumulators.
    """
    vals = np.asarray(window_values, dtype=np.int64)
    ic = vals.shape[0]
    taps = vals.reshape(ic, -1) * np.asarray(mul_raw, dtype=np.int64)[:, None]
    oc = signs.shape[0]
    return np.asarray(signs, dtype=np.int64).reshape(oc, -1) @ taps.reshape(-1)


def pe_standard(window_values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Exact integer multiply-accumulate for fixed-point weights."""
    vals = np.asarray(window_values, dtype=np.int64).reshape(-1)
    oc = weights.shape[0]
    return np.asarray(weights, dtype=np.int64).reshape(oc, -1) @ vals


def postprocess(
    acc: np.ndarray,
    acc_frac: int,
    bias: np.ndarray,
    bias_frac: int,
    div: Optional[np.ndarray] = None,
    div_frac: Optional[int] = None,
    out_kind: str = "u8",
):
    """Scale, bias-correct, round, clip: accumulator -> next activation.

    Returns (biased_raw, output): for "u8" the output is clipped to [0, 255]
    at fraction 0; for "raw" it is the biased accumulator itself, which must
    fit a signed 32-bit word.
    """
    acc = np.asarray(acc, dtype=np.int64)
    shift = acc_frac - bias_frac
    if shift < 0:
        raise BudgetError("bias fraction exceeds accumulator fraction")
    biased = acc + (np.asarray(bias, dtype=np.int64) << np.int64(shift))
    if out_kind == "raw":
        if np.abs(biased).max(initial=0) > HEAD_LIMIT:
            raise BudgetError("head raw exceeds 32-bit range")
        return biased, biased
    div = np.asarray(div, dtype=np.int64)
    cap = PRODUCT_LIMIT // np.maximum(div, 1)
    if (np.abs(biased) > cap).any():
        raise BudgetError("post product exceeds 48-bit carrier")
    q = _round_shift_i64(biased * div, acc_frac + div_frac)
    return biased, np.clip(q, 0, ACT_MAX)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

class Stage:
    def __init__(self, name: str):
        self.name = name
        self.inq: Optional[BoundedQueue] = None
        self.outq: Optional[BoundedQueue] = None
        self.stats = StageStats(name)
        self.rom_ready_cycle = 0

    def can_fire(self, cycle: Optional[int]) -> bool:
        raise NotImplementedError

    def fire(self) -> None:
        raise NotImplementedError

    def has_input(self) -> bool:
        return self.inq is not None and len(self.inq) > 0

    def describe(self) -> str:
        inq = "-" if self.inq is None else f"{len(self.inq)}/{self.inq.capacity}"
        return f"{self.name}: inq={inq} fires={self.stats.fires}"

    def _rom_blocked(self, cycle: Optional[int]) -> bool:
        return cycle is not None and cycle < self.rom_ready_cycle


class SourceStage(Stage):
    """Feeds the image as a row-major stream of pixel vectors."""

    def __init__(self, name: str, image: np.ndarray):
        super().__init__(name)
        c, h, w = image.shape
        self.image = image.astype(np.int64)
        self.h, self.w = h, w
        self.pos = 0

    def can_fire(self, cycle) -> bool:
        return self.pos < self.h * self.w and self.outq.can_push()

    def fire(self) -> None:
        y, x = divmod(self.pos, self.w)
        self.outq.push(PixelVector(self.image[:, y, x], y, x))
        self.pos += 1
        self.stats.tokens_out += 1


class PadAdapter(Stage):
    """Wraps an H x W stream in a one-pixel zero border."""

    def __init__(self, name: str, height: int, width: int, channels: int):
        super().__init__(name)
        self.h, self.w = height, width
        self.pos = 0
        self.total = (height + 2) * (width + 2)
        self._zero = np.zeros(channels, dtype=np.int64)

    def _is_border(self, pos: int) -> bool:
        py, px = divmod(pos, self.w + 2)
        return py == 0 or py == self.h + 1 or px == 0 or px == self.w + 1

    def can_fire(self, cycle) -> bool:
        if self.pos >= self.total or not self.outq.can_push():
            return False
        return self._is_border(self.pos) or self.has_input()

    def fire(self) -> None:
        py, px = divmod(self.pos, self.w + 2)
        if self._is_border(self.pos):
            self.outq.push(PixelVector(self._zero, py, px, is_pad=True))
        else:
            tok = self.inq.pop()
            self.stats.tokens_in += 1
            self.outq.push(PixelVector(tok.values, py, px))
        self.pos += 1
        self.stats.tokens_out += 1


class LineBuffer3x3(Stage):
    """Forms 3x3 windows from the padded stream with two-row reuse.

    The row storage holds at most two rows of real pixels; the newest three
    entries model the window column registers and are not charged to the
    line-buffer byte budget.
    """

    def __init__(self, name: str, height: int, width: int, channels: int):
        super().__init__(name)
        self.h, self.w = height, width
        self.channels = channels
        self.pw = width + 2
        self.slots = 2 * self.pw + 3
        self.ring: list = [None] * self.slots
        self.ring_pad = [True] * self.slots
        self.head = -1  # ring index of the newest pixel
        self.count = 0
        self.reals = 0
        self.pos = 0  # next padded position to consume

    def _will_emit(self) -> bool:
        py, px = divmod(self.pos, self.pw)
        return py >= 2 and px >= 2

    def can_fire(self, cycle) -> bool:
        if not self.has_input():
            return False
        return not self._will_emit() or self.outq.can_push()

    def fire(self) -> None:
        tok = self.inq.pop()
        self.stats.tokens_in += 1
        self.head = (self.head + 1) % self.slots
        evicted_pad = self.ring_pad[self.head] if self.count == self.slots else None
        if self.count == self.slots and not evicted_pad:
            self.reals -= 1
        if self.count < self.slots:
            self.count += 1
        self.ring[self.head] = tok.values
        self.ring_pad[self.head] = tok.is_pad
        if not tok.is_pad:
            self.reals += 1
        # Row RAM occupancy: real pixels held, minus the three newest
        # (window column staging registers).
        staged = 0
        for back in range(min(3, self.count)):
            if not self.ring_pad[(self.head - back) % self.slots]:
                staged += 1
        occupancy = (self.reals - staged) * self.channels
        if occupancy > self.stats.buffer_peak_bytes:
            self.stats.buffer_peak_bytes = occupancy
        if self._will_emit():
            py, px = divmod(self.pos, self.pw)
            win = np.empty((self.channels, 3, 3), dtype=np.int64)
            for dy in range(3):
                for dx in range(3):
                    offset = (2 - dy) * self.pw + (2 - dx)
                    win[:, dy, dx] = self.ring[(self.head - offset) % self.slots]
            self.outq.push(WindowToken(win, py - 2, px - 2))
            self.stats.tokens_out += 1
        self.pos += 1


class PEStage(Stage):
    """Convolution accumulation; 1x1 layers consume pixel vectors directly."""

    def __init__(self, name: str, layer: LayerSpec, lp, scales: ChannelScales, act_frac: int):
        super().__init__(name)
        self.layer = layer
        k = layer.kernel
        if layer.conv_kind == CONV_W1A8:
            self.mat = lp.weights.astype(np.int64).reshape(layer.out_channels, -1)
            self.mul_rep = np.repeat(scales.mul, k * k)
            self.acc_frac = act_frac + scales.mul_fmt.frac_bits
            self.limit = W1A8_ACC_LIMIT
        else:
            self.mat = lp.weights.astype(np.int64).reshape(layer.out_channels, -1)
            self.mul_rep = None
            self.acc_frac = act_frac + layer.weight_fmt.frac_bits
            self.limit = STD_ACC_LIMIT

    def can_fire(self, cycle) -> bool:
        if self._rom_blocked(cycle):
            return False
        return self.has_input() and self.outq.can_push()

    def fire(self) -> None:
        tok = self.inq.pop()
        self.stats.tokens_in += 1
        flat = tok.values.reshape(-1)
        if self.mul_rep is not None:
            flat = flat * self.mul_rep
        acc = self.mat @ flat
        if np.abs(acc).max(initial=0) > self.limit:
            raise BudgetError(f"{self.name}: accumulator budget exceeded")
        self.outq.push(PixelVector(acc, tok.y, tok.x))
        self.stats.tokens_out += 1


class PostStage(Stage):
    """Bias correction, output-channel scaling, rounding, clipping."""

    def __init__(self, name: str, layer: LayerSpec, lp, scales: ChannelScales, acc_frac: int,
                 raw_sink: Optional[np.ndarray] = None, post_sink: Optional[np.ndarray] = None):
        super().__init__(name)
        self.layer = layer
        self.acc_frac = acc_frac
        shift = acc_frac - layer.bias_fmt.frac_bits
        if shift < 0:
            raise BudgetError(f"{layer.name}: bias fraction exceeds accumulator fraction")
        self.bias_aligned = lp.bias.astype(np.int64) << np.int64(shift)
        if layer.has_post:
            self.div = scales.div
            self.shift = acc_frac + scales.div_fmt.frac_bits
            self.cap = PRODUCT_LIMIT // np.maximum(self.div, 1)
        else:
            self.div = None
        self.raw_sink = raw_sink
        self.post_sink = post_sink

    def can_fire(self, cycle) -> bool:
        if self._rom_blocked(cycle):
            return False
        return self.has_input() and self.outq.can_push()

    def fire(self) -> None:
        tok = self.inq.pop()
        self.stats.tokens_in += 1
        biased = tok.values + self.bias_aligned
        if self.raw_sink is not None:
            self.raw_sink[:, tok.y, tok.x] = biased
        if self.div is None:
            if np.abs(biased).max(initial=0) > HEAD_LIMIT:
                raise BudgetError(f"{self.name}: head raw exceeds 32-bit range")
            out = biased
        else:
            if (np.abs(biased) > self.cap).any():
                raise BudgetError(f"{self.name}: post product exceeds 48-bit carrier")
            q = _round_shift_i64(biased * self.div, self.shift)
            out = np.clip(q, 0, ACT_MAX)
            if self.post_sink is not None:
                self.post_sink[:, tok.y, tok.x] = out
        self.outq.push(PixelVector(out, tok.y, tok.x))
        self.stats.tokens_out += 1


class MaxPoolStage(Stage):
    """2x2 stride-2 window max on a row-major stream; buffers one row."""

    def __init__(self, name: str, height: int, width: int, channels: int):
        super().__init__(name)
        self.h, self.w = height, width
        self.channels = channels
        self.rowmax: list = [None] * (width // 2)
        self.filled = 0
        self.pending = None
        self.pos = 0

    def can_fire(self, cycle) -> bool:
        if not self.has_input():
            return False
        y, x = divmod(self.pos, self.w)
        will_emit = (y % 2 == 1) and (x % 2 == 1)
        return not will_emit or self.outq.can_push()

    def fire(self) -> None:
        tok = self.inq.pop()
        self.stats.tokens_in += 1
        y, x = divmod(self.pos, self.w)
        half = x // 2
        if y % 2 == 0:
            if x % 2 == 0:
                if self.rowmax[half] is None:
                    self.filled += 1
                self.rowmax[half] = tok.values
            else:
                self.rowmax[half] = np.maximum(self.rowmax[half], tok.values)
        else:
            if x % 2 == 0:
                self.pending = np.maximum(self.rowmax[half], tok.values)
                self.rowmax[half] = None
                self.filled -= 1
            else:
                out = np.maximum(self.pending, tok.values)
                self.pending = None
                self.outq.push(PixelVector(out, y // 2, x // 2))
                self.stats.tokens_out += 1
        occupancy = (self.filled + (1 if self.pending is not None else 0)) * self.channels
        if occupancy > self.stats.buffer_peak_bytes:
            self.stats.buffer_peak_bytes = occupancy
        self.pos += 1


class HeadSerializer(Stage):
    """Serializes the raw head in y/x/channel order, five channels per step."""

    def __init__(self, name: str, channels: int):
        super().__init__(name)
        self.channels = channels
        self.pending = deque()

    def can_fire(self, cycle) -> bool:
        if not self.outq.can_push():
            return False
        return bool(self.pending) or self.has_input()

    def fire(self) -> None:
        if not self.pending:
            tok = self.inq.pop()
            self.stats.tokens_in += 1
            self.pending.extend(int(v) for v in tok.values)
        emitted = 0
        while self.pending and emitted < HEAD_GROUP and self.outq.can_push():
            self.outq.push(self.pending.popleft())
            emitted += 1
            self.stats.tokens_out += 1


class SinkStage(Stage):
    def __init__(self, name: str, expected: int):
        super().__init__(name)
        self.expected = expected
        self.collected: list = []

    def can_fire(self, cycle) -> bool:
        return self.has_input()

    def fire(self) -> None:
        self.collected.append(self.inq.pop())
        self.stats.tokens_in += 1

    def complete(self) -> bool:
        return len(self.collected) >= self.expected


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass
class StreamResult:
    head_words: np.ndarray
    stats: RunStats
    trace: Optional[ForwardTrace]


class Pipeline:
    def __init__(
        self,
        model: ModelSpec,
        manifest: ParamManifest,
        image_u8: np.ndarray,
        rom_latency: int = 1,
        queue_capacity: int = 2,
        capture: bool = False,
    ):
        if queue_capacity < 1:
            raise ValueError("queue capacity must be at least 1")
        if rom_latency < 1:
            raise ValueError("read latency is at least one cycle")
        image_u8 = np.asarray(image_u8)
        if tuple(image_u8.shape) != tuple(model.input_shape):
            raise ValueError(f"image shape {image_u8.shape} != {model.input_shape}")
        self.model = model
        self.capacity = queue_capacity
        self.rom_latency = rom_latency
        self.stages: List[Stage] = []
        self.capture = capture
        self.captures: dict = {}

        src = SourceStage("source", image_u8)
        self.stages.append(src)
        upstream = src
        sizes = model.spatial_sizes()
        act_frac = model.input_frac
        chans = model.input_shape[0]
        for layer, (h, w) in zip(model.layers, sizes):
            lp = manifest.params[layer.name]
            scales = layer_scales(layer, lp)
            if layer.kernel == 3:
                pad = PadAdapter(f"{layer.name}.pad", h, w, chans)
                self._link(upstream, pad)
                lb = LineBuffer3x3(f"{layer.name}.linebuf", h, w, chans)
                self._link(pad, lb)
                upstream = lb
            pe = PEStage(f"{layer.name}.pe", layer, lp, scales, act_frac)
            pe.rom_ready_cycle = rom_latency
            self._link(upstream, pe)
            raw_sink = post_sink = None
            if capture:
                raw_sink = np.zeros((layer.out_channels, h, w), dtype=np.int64)
                if layer.has_post:
                    post_sink = np.zeros((layer.out_channels, h, w), dtype=np.uint8)
                self.captures[layer.name] = (raw_sink, pe.acc_frac, post_sink)
            post = PostStage(f"{layer.name}.post", layer, lp, scales, pe.acc_frac,
                             raw_sink=raw_sink, post_sink=post_sink)
            post.rom_ready_cycle = rom_latency
            self._link(pe, post)
            upstream = post
            chans = layer.out_channels
            if layer.has_maxpool:
                pool = MaxPoolStage(f"{layer.name}.pool", h, w, chans)
                self._link(post, pool)
                upstream = pool
            if layer.has_post:
                act_frac = 0
        head_layer = model.layers[-1]
        ser = HeadSerializer("head.serializer", head_layer.out_channels)
        self._link(upstream, ser)
        oc, oh, ow = model.output_shape
        self.expected_words = oc * oh * ow
        self.sink = SinkStage("sink", self.expected_words)
        self._link(ser, self.sink)
        self.stages.append(ser)
        self.stages.append(self.sink)
        # stage list must stay topologically ordered source -> sink
        self._order_fixup()

    def _link(self, producer: Stage, consumer: Stage) -> None:
        q = BoundedQueue(self.capacity)
        producer.outq = q
        consumer.inq = q
        if consumer not in self.stages:
            self.stages.append(consumer)

    def _order_fixup(self) -> None:
        seen = set()
        ordered = []
        for st in self.stages:
            if id(st) not in seen:
                ordered.append(st)
                seen.add(id(st))
        self.stages = ordered

    # -- schedulers ---------------------------------------------------------

    def run(self, scheduler: str = "round_robin", seed: Optional[int] = None) -> StreamResult:
        if scheduler == "round_robin":
            cycles = self._run_round_robin()
        elif scheduler == "random":
            self._run_random(seed)
            cycles = None
        else:
            raise ValueError(f"unknown scheduler {scheduler!r}")
        for st in self.stages:
            if st.inq is not None:
                st.stats.queue_peak = st.inq.peak
        stats = RunStats(
            scheduler=scheduler,
            queue_capacity=self.capacity,
            rom_latency=self.rom_latency,
            cycles_per_frame=cycles,
            stages=[st.stats for st in self.stages],
        )
        trace = None
        if self.capture:
            layers = []
            head = None
            head_frac = None
            for layer in self.model.layers:
                raw, frac, post = self.captures[layer.name]
                layers.append(LayerCapture(layer.name, raw, frac, post))
                if not layer.has_post:
                    head = raw
                    head_frac = frac
            trace = ForwardTrace(layers, head, head_frac)
        words = np.array(self.sink.collected, dtype=np.int64)
        return StreamResult(words, stats, trace)

    def _run_round_robin(self) -> int:
        rev = list(reversed(self.stages))
        cycle = 0
        while not self.sink.complete():
            fired = False
            for st in rev:
                if st.can_fire(cycle):
                    st.fire()
                    st.stats.fires += 1
                    fired = True
                elif st.has_input() or (isinstance(st, PadAdapter) and st.pos < st.total):
                    st.stats.stall_cycles += 1
            if not fired:
                # A whole-pipeline stall on pending ROM fills is time, not
                # deadlock: jump to the earliest cycle where data lands.
                gate = min(
                    (
                        st.rom_ready_cycle
                        for st in rev
                        if st.rom_ready_cycle > cycle and st.can_fire(st.rom_ready_cycle)
                    ),
                    default=None,
                )
                if gate is None:
                    raise PipelineDeadlock(self.dump_state())
                cycle = gate
                continue
            cycle += 1
        return cycle

    def _run_random(self, seed: Optional[int]) -> None:
        rng = random.Random(seed)
        while not self.sink.complete():
            fireable = [st for st in self.stages if st.can_fire(None)]
            if not fireable:
                raise PipelineDeadlock(self.dump_state())
            st = rng.choice(fireable)
            st.fire()
            st.stats.fires += 1

    def dump_state(self) -> str:
        lines = ["pipeline stalled; stage states:"]
        lines.extend("  " + st.describe() for st in self.stages)
        lines.append(f"  sink: {len(self.sink.collected)}/{self.expected_words} words")
        return "\n".join(lines)


def run_stream(
    model: ModelSpec,
    manifest: ParamManifest,
    image_u8: np.ndarray,
    rom_latency: int = 1,
    queue_capacity: int = 2,
    scheduler: str = "round_robin",
    seed: Optional[int] = None,
    capture: bool = False,
) -> StreamResult:
    """Run the full streaming pipeline on one image."""
    pipe = Pipeline(
        model, manifest, image_u8,
        rom_latency=rom_latency, queue_capacity=queue_capacity, capture=capture,
    )
    return pipe.run(scheduler, seed)


# ---------------------------------------------------------------------------
# Array-level serialization contract and small stream drivers
# ---------------------------------------------------------------------------

def serialize_head(head: np.ndarray) -> np.ndarray:
    """(C, H, W) raw head -> flat words, y outer, x middle, channel inner."""
    c, h, w = head.shape
    return np.ascontiguousarray(head.transpose(1, 2, 0)).reshape(-1)


def deserialize_head(words: np.ndarray, channels: int, height: int, width: int) -> np.ndarray:
    words = np.asarray(words)
    if words.size != channels * height * width:
        raise ValueError(
            f"expected {channels * height * width} head words, got {words.size}"
        )
    return words.reshape(height, width, channels).transpose(2, 0, 1)


def detect_head_serialize(pixels) -> List[int]:
    """Serialize per-position channel vectors (y/x order) into head words."""
    words: List[int] = []
    for vals in pixels:
        for start in range(0, len(vals), HEAD_GROUP):
            words.extend(int(v) for v in vals[start:start + HEAD_GROUP])
    return words


def _drive(stage: Stage, inputs) -> list:
    """Feed a single-input stage to exhaustion and collect its output."""
    inq = BoundedQueue(len(inputs) + 1)
    outq = BoundedQueue(1 << 30)
    stage.inq = inq
    stage.outq = outq
    for tok in inputs:
        inq.push(tok)
    while stage.can_fire(None):
        stage.fire()
    return list(outq.items)


def pad_adapter(pixels, height: int, width: int) -> list:
    """Zero-pad a row-major pixel stream to (H+2) x (W+2)."""
    pixels = list(pixels)
    channels = len(pixels[0].values) if pixels else 0
    return _drive(PadAdapter("pad", height, width, channels), pixels)


def line_buffer_3x3(padded, width: int) -> list:
    """Window a padded row-major stream into 3x3 tokens."""
    padded = list(padded)
    channels = len(padded[0].values) if padded else 0
    height = len(padded) // (width + 2) - 2
    return _drive(LineBuffer3x3("linebuf", height, width, channels), padded)


def maxpool_stream(pixels, width: int) -> list:
    """Streaming 2x2 stride-2 max; needs an even row-major H x W stream."""
    pixels = list(pixels)
    if len(pixels) % width:
        raise ValueError("stream length is not a whole number of rows")
    height = len(pixels) // width
    if height % 2 or width % 2:
        raise ValueError(f"max-pool needs even dims, got {height}x{width}")
    channels = len(pixels[0].values) if pixels else 0
    return _drive(MaxPoolStage("pool", height, width, channels), pixels)
