"""Packet arrival schedules: Poisson, frame-batched video, and file replay."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TraceFormatError, TraceParseError

DEFAULT_PACKET_BITS = 12000


@dataclass(frozen=True)
class ArrivalSchedule:
    arrivals: tuple  # ((t_us, size_bits), ...) in non-decreasing time order
    nominal_rate_bps: float

    def __post_init__(self):
        arr = tuple((int(t), int(s)) for t, s in self.arrivals)
        for (t0, _), (t1, _) in zip(arr, arr[1:]):
            if t1 < t0:
                raise ValueError("arrivals must be sorted by time")
        if any(s <= 0 for _, s in arr):
            raise ValueError("packet sizes must be positive")
        object.__setattr__(self, "arrivals", arr)

    def __len__(self):
        return len(self.arrivals)

    @property
    def times(self) -> list:
        return [t for t, _ in self.arrivals]

    def realized_rate_bps(self, horizon_us: int) -> float:
        return sum(s for _, s in self.arrivals) / (horizon_us * 1e-6)


def poisson_arrivals(rate_bps: float, packet_bits: int, horizon_us: int, seed: int) -> ArrivalSchedule:
    """Exponential inter-arrivals with mean ``packet_bits / rate_bps``, truncated at the horizon.

    Times are floored to whole microseconds; an arrival that would share a
    microsecond with its predecessor is pushed one microsecond later so
    Poisson schedules stay strictly increasing.
    """
    if not rate_bps > 0:
        raise ValueError("rate must be positive")
    if horizon_us <= 0:
        return ArrivalSchedule((), rate_bps)
    rng = np.random.default_rng(seed)
    mean_us = packet_bits / rate_bps * 1e6
    expected = horizon_us / mean_us
    times = []
    t = 0.0
    last = -1
    while True:
        gaps = rng.exponential(mean_us, int(expected + 6 * math.sqrt(expected) + 64))
        for g in gaps.tolist():
            t += g
            ti = max(int(t), last + 1)
            if ti >= horizon_us:
                return ArrivalSchedule(tuple((x, packet_bits) for x in times), rate_bps)
            times.append(ti)
            last = ti


def batched_arrivals(rate_bps: float, fps: float, packet_bits: int, horizon_us: int) -> ArrivalSchedule:
    """One batch per video frame; the fractional part of the batch size carries over."""
    if not fps > 0:
        raise ValueError("fps must be positive")
    if rate_bps < 0:
        raise ValueError("rate must be non-negative")
    per_frame = rate_bps / (fps * packet_bits)
    arrivals = []
    k = 0
    emitted = 0
    while True:
        t = int(math.floor(k * 1e6 / fps + 1e-9))
        if t >= horizon_us:
            break
        due = int(math.floor((k + 1) * per_frame + 1e-9))
        arrivals.extend((t, packet_bits) for _ in range(due - emitted))
        emitted = due
        k += 1
    return ArrivalSchedule(tuple(arrivals), rate_bps)


def saturated_arrivals(n_packets: int, packet_bits: int = DEFAULT_PACKET_BITS) -> ArrivalSchedule:
    """A backlog of ``n_packets`` all present at t = 0."""
    return ArrivalSchedule(tuple((0, packet_bits) for _ in range(n_packets)), math.inf)


def load_replay(path, horizon_us: int | None = None) -> ArrivalSchedule:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    head = lines[0].strip() if lines else ""
    key, sep, value = head.partition("=")
    if key != "arrivals" or not sep:
        raise TraceFormatError(f"{path}: expected header 'arrivals=<int>'")
    try:
        count = int(value)
    except ValueError:
        raise TraceFormatError(f"{path}: malformed arrival count") from None
    pairs = []
    for lineno, ln in enumerate(lines[1:], start=2):
        if not ln.strip():
            continue
        parts = ln.split(",")
        if len(parts) != 2:
            raise TraceParseError("expected 't_us,size_bits'", lineno)
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise TraceParseError("non-integer field", lineno) from None
    if len(pairs) != count:
        raise TraceFormatError(f"{path}: header declares {count} arrivals, found {len(pairs)}")
    pairs.sort(key=lambda p: p[0])
    if horizon_us is not None:
        pairs = [p for p in pairs if p[0] < horizon_us]
    span = horizon_us if horizon_us else (pairs[-1][0] + 1 if pairs else 1)
    rate = sum(s for _, s in pairs) / (span * 1e-6)
    return ArrivalSchedule(tuple(pairs), rate)


def save_replay(path, schedule: ArrivalSchedule) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"arrivals={len(schedule)}\n")
        for t, s in schedule.arrivals:
            fh.write(f"{t},{s}\n")
