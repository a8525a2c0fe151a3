"""Closed-form saturation throughput assuming i.i.d. slot occupancy per link."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import DEFAULT_TIMING, TimingConfig
from .policies import PolicyId


@dataclass(frozen=True)
class IidParams:
    rho1: float
    rho2: float = 0.0
    L_bits: int = DEFAULT_TIMING.packet_bits
    T_us: float = DEFAULT_TIMING.mean_cycle_us

    def __post_init__(self):
        for name in ("rho1", "rho2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @classmethod
    def from_timing(cls, rho1: float, rho2: float = 0.0, timing: TimingConfig = DEFAULT_TIMING):
        return cls(rho1, rho2, timing.packet_bits, timing.mean_cycle_us)


def th_closed_form(mode, p: IidParams) -> float:
    """Mean throughput in bit/s: one packet per cycle, scaled by the idle fraction."""
    mode = PolicyId.parse(mode)
    rate = p.L_bits / (p.T_us * 1e-6)
    if mode is PolicyId.SLO:
        return (1 - p.rho1) * rate
    if mode is PolicyId.MLO_STR:
        return (2 - p.rho1 - p.rho2) * rate
    if mode is PolicyId.MLO_NSTR:
        return (1 - p.rho1) * (2 - p.rho2) * rate
    raise ValueError(f"no closed form for {mode.value}")


def parse_grid(text: str) -> list[float]:
    """'start:stop:step' inclusive of stop, e.g. '0.1:0.9:0.1'."""
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise ValueError(f"grid must look like start:stop:step, got {text!r}") from None
    if step <= 0 or stop < start:
        raise ValueError("grid needs step > 0 and stop >= start")
    n = int(round((stop - start) / step))
    return [round(start + i * step, 10) for i in range(n + 1)]


def gain_map(grid: list[float], timing: TimingConfig = DEFAULT_TIMING) -> list[dict]:
    """MLO throughput normalized to SLO for every (primary, secondary) occupancy pair."""
    rows = []
    for r1 in grid:
        for r2 in grid:
            p = IidParams.from_timing(r1, r2, timing)
            slo = th_closed_form(PolicyId.SLO, p)
            str_ = th_closed_form(PolicyId.MLO_STR, p)
            nstr = th_closed_form(PolicyId.MLO_NSTR, p)
            rows.append({
                "rho1": r1,
                "rho2": r2,
                "slo_bps": slo,
                "str_bps": str_,
                "nstr_bps": nstr,
                "str_gain": str_ / slo if slo > 0 else np.nan,
                "nstr_gain": nstr / slo if slo > 0 else np.nan,
            })
    return rows
