"""Spectrum traces: ingestion, binarization, occupancy binning and synthesis.

A trace is a per-channel vector of 10 us slots. The engine reads it through
``BinaryTrace.index``, which stores run lengths so that contention can skip
whole busy/idle periods instead of stepping slot by slot.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, TraceFormatError, TraceParseError

SLOT_US = 10
BUSY_THRESHOLD_DBM = -83.5
NEVER = math.inf


@dataclass(frozen=True, eq=False)
class RssiSample:
    """Raw aggregate RSSI (dBm) of one channel, one value per 10 us slot."""

    channel_id: int
    rssi: np.ndarray
    sample_index: int = 0
    slot_duration: int = SLOT_US

    def __post_init__(self):
        if self.slot_duration != SLOT_US:
            raise TraceFormatError(f"slot duration must be {SLOT_US} us, got {self.slot_duration}")
        rssi = np.asarray(self.rssi, dtype=float)
        if rssi.ndim != 1 or rssi.size == 0:
            raise ValueError("rssi must be a non-empty vector")
        if not np.all(np.isfinite(rssi)):
            raise ValueError("rssi values must be finite")
        rssi.setflags(write=False)
        object.__setattr__(self, "rssi", rssi)


@dataclass(frozen=True)
class TraceIndex:
    """Cyclic run-length lookup tables for one trace.

    ``idle_left[p]`` is the number of slots from idle slot ``p`` up to the next
    busy slot, ``busy_left[p]`` the number of slots from busy slot ``p`` to the
    next idle one. Both wrap around the end of the trace and are ``inf`` when
    the opposite state never occurs.
    """

    busy: list
    idle_left: list
    busy_left: list
    max_idle_run: float


def _distance_to_next(mask: np.ndarray) -> np.ndarray:
    """Cyclic distance from every slot to the next slot where ``mask`` holds."""
    n = mask.size
    hits = np.flatnonzero(np.concatenate([mask, mask]))
    if hits.size == 0:
        return np.full(n, np.inf)
    pos = np.arange(n)
    nxt = hits[np.searchsorted(hits, pos)]
    return (nxt - pos).astype(float)


def _build_index(slots: np.ndarray) -> TraceIndex:
    to_busy = _distance_to_next(slots)
    to_idle = _distance_to_next(~slots)
    idle_runs = to_busy[~slots]
    max_run = float(idle_runs.max()) if idle_runs.size else 0.0
    # Python lists: scalar indexing in the contention loop is much faster than numpy.
    conv = lambda a: [x if math.isinf(x) else int(x) for x in a.tolist()]
    return TraceIndex(
        busy=slots.tolist(),
        idle_left=conv(to_busy),
        busy_left=conv(to_idle),
        max_idle_run=max_run,
    )


@dataclass(frozen=True, eq=False)
class BinaryTrace:
    """Busy (True) / idle (False) state of one channel per 10 us slot."""

    channel_id: int
    slots: np.ndarray
    sample_index: int = 0
    occupancy: float = field(init=False)

    def __post_init__(self):
        slots = np.asarray(self.slots, dtype=bool)
        if slots.ndim != 1 or slots.size == 0:
            raise ValueError("a trace needs at least one slot")
        slots = slots.copy()
        slots.setflags(write=False)
        object.__setattr__(self, "slots", slots)
        object.__setattr__(self, "occupancy", int(np.count_nonzero(slots)) / slots.size)

    def __len__(self) -> int:
        return self.slots.size

    @cached_property
    def index(self) -> TraceIndex:
        return _build_index(self.slots)

    def equals(self, other: "BinaryTrace") -> bool:
        return self.channel_id == other.channel_id and np.array_equal(self.slots, other.slots)


@dataclass(frozen=True)
class OccupancyBin:
    center: float
    half_width: float = 0.05
    members: tuple = ()

    @property
    def low(self) -> float:
        return self.center - self.half_width

    @property
    def high(self) -> float:
        return self.center + self.half_width

    def contains(self, occupancy: float) -> bool:
        # Small tolerance so that e.g. 0.35 lands in [0.35, 0.45] despite float rounding.
        eps = 1e-9
        return self.low - eps <= occupancy <= self.high + eps


def default_bins(half_width: float = 0.05) -> list[OccupancyBin]:
    return [OccupancyBin(round(0.1 * k, 1), half_width) for k in range(1, 10)]


# -- ingestion ---------------------------------------------------------------


def _parse_header(line: str) -> dict:
    fields = {}
    for token in line.split():
        key, sep, value = token.partition("=")
        if not sep:
            raise TraceFormatError(f"malformed header token {token!r}")
        fields[key] = value
    required = ("channel", "slot_us", "samples", "slots_per_sample", "kind")
    missing = [k for k in required if k not in fields]
    if missing:
        raise TraceFormatError(f"header is missing {', '.join(missing)}")
    try:
        header = {
            "channel": int(fields["channel"]),
            "slot_us": int(fields["slot_us"]),
            "samples": int(fields["samples"]),
            "slots_per_sample": int(fields["slots_per_sample"]),
            "kind": fields["kind"],
        }
    except ValueError as exc:
        raise TraceFormatError(f"malformed header: {exc}") from None
    if header["slot_us"] != SLOT_US:
        raise TraceFormatError(f"slot_us must be {SLOT_US}, got {header['slot_us']}")
    if header["kind"] not in ("rssi", "binary"):
        raise TraceFormatError(f"unknown trace kind {header['kind']!r}")
    if header["samples"] < 0 or header["slots_per_sample"] < 1:
        raise TraceFormatError("samples must be >= 0 and slots_per_sample >= 1")
    return header


def _read_trace_file(path) -> tuple[dict, list]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or not lines[0].strip():
        raise TraceFormatError(f"{path}: empty file")
    header = _parse_header(lines[0])
    body = [(i + 2, ln) for i, ln in enumerate(lines[1:]) if ln.strip()]
    if len(body) != header["samples"]:
        raise TraceFormatError(
            f"{path}: header declares {header['samples']} samples, found {len(body)}"
        )
    rows = []
    width = header["slots_per_sample"]
    for lineno, ln in body:
        ln = ln.strip()
        if header["kind"] == "rssi":
            try:
                values = [float(v) for v in ln.split(",")]
            except ValueError:
                raise TraceParseError("non-numeric RSSI value", lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise TraceParseError("non-finite RSSI value", lineno)
            row = np.array(values)
        else:
            if set(ln) - {"0", "1"}:
                raise TraceParseError("binary samples may only contain 0/1", lineno)
            row = np.frombuffer(ln.encode("ascii"), dtype=np.uint8) == ord("1")
        if row.size != width:
            raise TraceParseError(f"expected {width} slots, got {row.size}", lineno)
        rows.append(row)
    return header, rows


def load_trace(path) -> list[RssiSample]:
    """Read an ``kind=rssi`` trace file into one RssiSample per line."""
    header, rows = _read_trace_file(path)
    if header["kind"] != "rssi":
        raise TraceFormatError(f"{path}: kind={header['kind']}, use load_binary_trace")
    return [RssiSample(header["channel"], row, i) for i, row in enumerate(rows)]


def load_binary_trace(path, threshold_dbm: float = BUSY_THRESHOLD_DBM) -> list[BinaryTrace]:
    """Read a trace file of either kind, binarizing RSSI lines at ``threshold_dbm``."""
    header, rows = _read_trace_file(path)
    if header["kind"] == "rssi":
        return [binarize(RssiSample(header["channel"], row, i), threshold_dbm) for i, row in enumerate(rows)]
    return [BinaryTrace(header["channel"], row, i) for i, row in enumerate(rows)]


def save_trace(path, samples: Sequence[RssiSample] | Sequence[BinaryTrace]) -> None:
    if not samples:
        raise ValueError("nothing to write")
    binary = isinstance(samples[0], BinaryTrace)
    width = len(samples[0].slots) if binary else samples[0].rssi.size
    channel = samples[0].channel_id
    for s in samples:
        if s.channel_id != channel:
            raise ValueError("all samples in a file must share one channel")
        if (len(s.slots) if binary else s.rssi.size) != width:
            raise ValueError("all samples in a file must have the same length")
    kind = "binary" if binary else "rssi"
    lines = [f"channel={channel} slot_us={SLOT_US} samples={len(samples)} slots_per_sample={width} kind={kind}"]
    for s in samples:
        if binary:
            lines.append("".join("1" if b else "0" for b in s.slots.tolist()))
        else:
            lines.append(",".join(repr(float(v)) for v in s.rssi.tolist()))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def convert_matrix(src, channel_id: int, delimiter: str | None = None) -> list[RssiSample]:
    """Read a delimited RSSI matrix (one sample per row) exported from a raw dataset."""
    samples = []
    with open(src, encoding="utf-8") as fh:
        for lineno, ln in enumerate(fh, start=1):
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            parts = ln.split(delimiter) if delimiter else ln.replace(",", " ").split()
            try:
                values = [float(v) for v in parts]
            except ValueError:
                raise TraceParseError("non-numeric RSSI value", lineno) from None
            samples.append(RssiSample(channel_id, np.array(values), len(samples)))
    return samples


def trace_path(root, channel_id: int) -> str:
    return os.path.join(root, f"ch{channel_id:03d}.trace")


# -- binarization and binning -------------------------------------------------


def binarize(sample: RssiSample, threshold_dbm: float = BUSY_THRESHOLD_DBM) -> BinaryTrace:
    if not math.isfinite(threshold_dbm):
        raise ValueError("threshold must be finite")
    return BinaryTrace(sample.channel_id, sample.rssi > threshold_dbm, sample.sample_index)


def bin_samples(traces: Iterable[BinaryTrace], bins: Sequence[OccupancyBin]) -> list[OccupancyBin]:
    """Assign each trace to the bin whose interval contains its occupancy.

    Members are recorded as positions in ``traces``. Traces that fall outside
    every interval are left unassigned.
    """
    ordered = sorted(bins, key=lambda b: b.center)
    for a, b in zip(ordered, ordered[1:]):
        if a.high > b.low + 1e-9:
            raise ConfigurationError(f"bins {a.center} and {b.center} overlap")
    members: dict[float, list] = {b.center: [] for b in bins}
    for i, tr in enumerate(traces):
        # Ascending scan with a shared boundary resolves to the upper bin (inclusive lower edge).
        chosen = None
        for b in ordered:
            if b.contains(tr.occupancy):
                chosen = b
        if chosen is not None:
            members[chosen.center].append(i)
    return [OccupancyBin(b.center, b.half_width, tuple(members[b.center])) for b in bins]


# -- synthesis ----------------------------------------------------------------


def gen_iid_trace(occupancy: float, length_slots: int, seed: int, channel_id: int = 0) -> BinaryTrace:
    if not 0.0 <= occupancy <= 1.0:
        raise ValueError(f"occupancy must lie in [0, 1], got {occupancy}")
    if length_slots < 1:
        raise ValueError("length must be at least one slot")
    rng = np.random.default_rng(seed)
    return BinaryTrace(channel_id, rng.random(length_slots) < occupancy)


def gen_onoff_trace(
    occupancy: float,
    mean_busy_slots: float,
    length_slots: int,
    seed: int,
    channel_id: int = 0,
) -> BinaryTrace:
    """Alternating busy/idle periods with geometric lengths.

    The idle mean follows from ``occupancy = busy / (busy + idle)``. The first
    state is drawn from the stationary distribution.
    """
    if length_slots < 1:
        raise ValueError("length must be at least one slot")
    if not 0.0 <= occupancy < 1.0:
        raise ValueError(f"occupancy must lie in [0, 1), got {occupancy}")
    if mean_busy_slots < 1:
        raise ValueError("mean busy sojourn must be at least one slot")
    if occupancy == 0.0:
        return BinaryTrace(channel_id, np.zeros(length_slots, dtype=bool))
    mean_idle = mean_busy_slots * (1.0 - occupancy) / occupancy
    if mean_idle < 1:
        raise ValueError(f"occupancy {occupancy} needs an idle sojourn of {mean_idle:.3f} < 1 slot")

    rng = np.random.default_rng(seed)
    busy = bool(rng.random() < occupancy)
    out = np.empty(length_slots, dtype=bool)
    filled = 0
    p_busy, p_idle = 1.0 / mean_busy_slots, 1.0 / mean_idle
    block = max(16, int(2 * length_slots / (mean_busy_slots + mean_idle)) + 16)
    while filled < length_slots:
        busy_runs = rng.geometric(p_busy, block)
        idle_runs = rng.geometric(p_idle, block)
        first, second = (busy_runs, idle_runs) if busy else (idle_runs, busy_runs)
        runs = np.empty(2 * block, dtype=np.int64)
        runs[0::2], runs[1::2] = first, second
        states = np.empty(2 * block, dtype=bool)
        states[0::2], states[1::2] = busy, not busy
        chunk = np.repeat(states, runs)
        take = min(chunk.size, length_slots - filled)
        out[filled:filled + take] = chunk[:take]
        filled += take
    return BinaryTrace(channel_id, out)


# -- lookups ------------------------------------------------------------------


def looped_slot(trace: BinaryTrace, t_us: int) -> bool:
    if t_us < 0:
        raise ValueError("time must be non-negative")
    return bool(trace.slots[(t_us // SLOT_US) % len(trace)])


def idle_window(trace: BinaryTrace, start_us: int, end_us: int) -> bool:
    """True if every slot overlapping ``[start_us, end_us)`` is idle."""
    if end_us <= start_us:
        return True
    idx = trace.index
    k = start_us // SLOT_US
    p = k % len(idx.busy)
    if idx.busy[p]:
        return False
    return (k + idx.idle_left[p]) * SLOT_US >= end_us
