"""Microsecond-clock DCF engine driven by binary spectrum traces.

Time is integer microseconds. Channel state is read from the trace slot
``floor(t / 10)``, looping over the trace when the run outlasts it. The
simulated BSS never collides with trace activity: while it transmits, the
recorded neighbours are assumed to defer, so an interface that is
transmitting simply ignores its trace.

Contention is resolved analytically. ``dcf_contend`` walks the trace's
busy/idle runs and returns the backoff expiry instant, so the event loop
only wakes up at arrivals, backoff expiries and transmission ends.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .bonding import BondedLink, as_link, punctured_txop
from .errors import ConfigurationError, SimulationError
from .trace import SLOT_US, BinaryTrace, looped_slot

INF = math.inf
FOREVER_US = 2**62


@dataclass(frozen=True)
class TimingConfig:
    slot_us: int = 10
    sifs_us: int = 10
    difs_us: int = 30
    pifs_us: int = 20
    tx_us: int = 172
    cw_min: int = 15
    packet_bits: int = 12000

    def __post_init__(self):
        for name in ("slot_us", "sifs_us", "difs_us", "pifs_us", "tx_us", "packet_bits"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.cw_min < 0:
            raise ValueError("cw_min must be non-negative")
        if self.difs_us != self.sifs_us + 2 * self.slot_us:
            raise ValueError("DIFS must equal SIFS + 2 slots")
        if self.pifs_us != self.sifs_us + self.slot_us:
            raise ValueError("PIFS must equal SIFS + 1 slot")

    @property
    def mean_cycle_us(self) -> float:
        """DIFS + mean backoff + TX: the per-packet cycle on an always idle channel."""
        return self.difs_us + self.cw_min / 2 * self.slot_us + self.tx_us


DEFAULT_TIMING = TimingConfig()


class Phase(enum.Enum):
    IDLE = "idle"
    # DIFS sensing and backoff countdown; the split is implicit in dcf_contend.
    BACKOFF = "backoff"
    TRANSMITTING = "transmitting"


@dataclass
class InterfaceState:
    link_id: int
    phase: Phase = Phase.IDLE
    backoff_draw: int | None = None
    backoff_start_us: int | None = None
    expiry_us: int | None = None
    tx_end_us: int | None = None
    assigned: list = field(default_factory=list)
    tx_count: int = 0


@dataclass(slots=True)
class PacketRecord:
    id: int
    size_bits: int
    t_arrival_us: int
    t_assigned_us: int | None = None
    t_tx_start_us: int | None = None
    t_tx_end_us: int | None = None
    interface: int | None = None

    @property
    def delivered(self) -> bool:
        return self.t_tx_end_us is not None


def channel_busy(trace: BinaryTrace, t_us: int, own_tx_active: bool) -> bool:
    if own_tx_active:
        return False
    return looped_slot(trace, t_us)


def dcf_contend(
    trace: BinaryTrace,
    t_start_us: int,
    backoff_slots: int,
    timing: TimingConfig = DEFAULT_TIMING,
) -> int | None:
    """Instant at which a backoff of ``backoff_slots`` started at ``t_start_us`` expires.

    The channel must first be idle for a full DIFS; the counter then drops by
    one per idle ``slot_us``. Any busy instant freezes the counter, discards
    the partial slot and restarts the DIFS wait. Returns None when the trace
    can never satisfy the wait (e.g. permanently busy).
    """
    idx = trace.index
    busy, idle_left, busy_left = idx.busy, idx.idle_left, idx.busy_left
    n = len(busy)
    difs, slot = timing.difs_us, timing.slot_us
    max_idle_us = idx.max_idle_run * SLOT_US
    remaining = backoff_slots
    t = t_start_us
    while True:
        k = t // SLOT_US
        p = k % n
        if busy[p]:
            gap = busy_left[p]
            if gap == INF:
                return None
            t = (k + gap) * SLOT_US
            # Idle runs from here on start at slot edges; max_idle_us bounds all of them.
            if max_idle_us < difs + (slot if remaining else 0):
                return None
            continue
        left = idle_left[p]
        done = t + difs + slot * remaining
        if left == INF:
            return done
        busy_at = (k + left) * SLOT_US
        if done <= busy_at:
            return done
        if t + difs < busy_at:
            remaining -= (busy_at - t - difs) // slot
        t = busy_at


# -- randomness ---------------------------------------------------------------


class SeededSource:
    """Backoff draws (one stream per link) and tie-breaking coins from one seed."""

    _BLOCK = 1024

    def __init__(self, seed: int, cw_min: int = DEFAULT_TIMING.cw_min):
        self.seed = int(seed)
        self.cw_min = cw_min
        self._streams: dict[int, tuple] = {}
        self._coin_rng = np.random.default_rng([self.seed, 1 << 20])
        self._coins: list = []
        self._coin_pos = 0

    def _stream(self, link: int):
        st = self._streams.get(link)
        if st is None:
            st = [np.random.default_rng([self.seed, link]), [], 0]
            self._streams[link] = st
        return st

    def draw(self, link: int) -> int:
        st = self._stream(link)
        if st[2] >= len(st[1]):
            st[1] = st[0].integers(0, self.cw_min + 1, self._BLOCK).tolist()
            st[2] = 0
        value = st[1][st[2]]
        st[2] += 1
        return value

    def skip(self, link: int, count: int) -> None:
        for _ in range(count):
            self.draw(link)

    def coin(self, n: int = 2) -> int:
        if self._coin_pos >= len(self._coins):
            self._coins = self._coin_rng.random(self._BLOCK).tolist()
            self._coin_pos = 0
        u = self._coins[self._coin_pos]
        self._coin_pos += 1
        return int(u * n)


class ScriptedSource:
    """Replays fixed backoff draws and coin outcomes; used for hand-checked scenarios."""

    def __init__(self, draws: dict | Sequence[Sequence[int]], coins: Iterable[int] = ()):
        items = draws.items() if isinstance(draws, dict) else enumerate(draws)
        self._draws = {link: deque(seq) for link, seq in items}
        self._coins = deque(coins)

    def draw(self, link: int) -> int:
        try:
            return self._draws[link].popleft()
        except (KeyError, IndexError):
            raise SimulationError(f"scripted backoff draws for link {link} exhausted") from None

    def skip(self, link: int, count: int) -> None:
        for _ in range(count):
            if self._draws.get(link):
                self._draws[link].popleft()

    def coin(self, n: int = 2) -> int:
        if not self._coins:
            raise SimulationError("scripted coin flips exhausted")
        return self._coins.popleft() % n


# -- simulation ---------------------------------------------------------------


class Simulation:
    """Event loop shared by every access policy.

    At each event instant the loop completes transmissions, enqueues arrivals,
    hands expired backoffs to the policy and finally lets the policy start new
    contentions.
    """

    def __init__(
        self,
        links: Sequence,
        arrivals,
        timing: TimingConfig = DEFAULT_TIMING,
        horizon_us: int = FOREVER_US,
        source=None,
        seed: int = 0,
        log_events: bool = False,
    ):
        self.links: list[BondedLink] = [as_link(l) for l in links]
        if not self.links:
            raise ConfigurationError("at least one link is required")
        self.timing = timing
        self.horizon_us = horizon_us
        self.source = source if source is not None else SeededSource(seed, timing.cw_min)
        pairs = getattr(arrivals, "arrivals", arrivals)
        self.t_arrival = [int(t) for t, _ in pairs]
        self.size_bits = [int(s) for _, s in pairs]
        if any(b < a for a, b in zip(self.t_arrival, self.t_arrival[1:])):
            raise ValueError("arrivals must be sorted by time")
        n = len(self.t_arrival)
        self.t_assigned: list = [None] * n
        self.t_tx_start: list = [None] * n
        self.t_tx_end: list = [None] * n
        self.interface: list = [None] * n
        self.queue: deque = deque()
        self.ifaces = [InterfaceState(i) for i in range(len(self.links))]
        self.next_arrival = 0
        self.now = 0
        self.events: list | None = [] if log_events else None

    # primitives used by policies

    def _log(self, t, what, link, detail=None):
        if self.events is not None:
            self.events.append((t, what, link, detail))

    def assign(self, iface: InterfaceState, pid: int, t: int) -> None:
        self.t_assigned[pid] = t
        self.interface[pid] = iface.link_id
        iface.assigned.append(pid)
        self._log(t, "assign", iface.link_id, pid)

    def contend(self, iface: InterfaceState, t: int) -> None:
        draw = self.source.draw(iface.link_id)
        iface.phase = Phase.BACKOFF
        iface.backoff_draw = draw
        iface.backoff_start_us = t
        iface.expiry_us = dcf_contend(self.links[iface.link_id].primary, t, draw, self.timing)
        self._log(t, "backoff", iface.link_id, (draw, iface.expiry_us))

    def cancel(self, iface: InterfaceState, t: int) -> None:
        if iface.assigned:
            raise SimulationError("cannot cancel a backoff that owns a packet")
        iface.phase = Phase.IDLE
        iface.backoff_draw = iface.backoff_start_us = iface.expiry_us = None
        self._log(t, "cancel", iface.link_id)

    def usable_channels(self, iface: InterfaceState, t: int) -> frozenset:
        return punctured_txop(self.links[iface.link_id], t, self.timing.pifs_us)

    def transmit(self, iface: InterfaceState, t: int, pids: Sequence[int]) -> int:
        if not pids:
            raise SimulationError("transmit called without packets")
        if iface.phase is Phase.TRANSMITTING:
            raise SimulationError(
                f"link {iface.link_id}: overlapping transmissions at {t} (busy until {iface.tx_end_us})"
            )
        end = t + self.timing.tx_us
        for pid in pids:
            if pid not in iface.assigned:
                self.assign(iface, pid, t)
            self.t_tx_start[pid] = t
        iface.phase = Phase.TRANSMITTING
        iface.tx_end_us = end
        iface.expiry_us = None
        iface.tx_count += 1
        self._log(t, "tx", iface.link_id, tuple(pids))
        return end

    def _complete(self, iface: InterfaceState, t: int) -> None:
        for pid in iface.assigned:
            self.t_tx_end[pid] = t
        iface.assigned = []
        iface.phase = Phase.IDLE
        iface.tx_end_us = None
        iface.backoff_draw = iface.backoff_start_us = None

    # main loop

    def _next_event(self) -> float:
        t = self.t_arrival[self.next_arrival] if self.next_arrival < len(self.t_arrival) else INF
        for f in self.ifaces:
            if f.phase is Phase.TRANSMITTING:
                if f.tx_end_us < t:
                    t = f.tx_end_us
            elif f.phase is Phase.BACKOFF and f.expiry_us is not None and f.expiry_us < t:
                t = f.expiry_us
        return t

    def execute(self, policy) -> "Simulation":
        policy.check(self)
        arrivals, n = self.t_arrival, len(self.t_arrival)
        while True:
            t = self._next_event()
            if t > self.horizon_us:
                break
            self.now = t
            for f in self.ifaces:
                if f.phase is Phase.TRANSMITTING and f.tx_end_us == t:
                    self._complete(f, t)
            while self.next_arrival < n and arrivals[self.next_arrival] == t:
                self.queue.append(self.next_arrival)
                self.next_arrival += 1
            expired = [f for f in self.ifaces if f.phase is Phase.BACKOFF and f.expiry_us == t]
            if expired:
                policy.on_expiry(self, expired, t)
            policy.schedule(self, t)
        return self

    def records(self) -> list[PacketRecord]:
        return [
            PacketRecord(i, self.size_bits[i], self.t_arrival[i], self.t_assigned[i],
                         self.t_tx_start[i], self.t_tx_end[i], self.interface[i])
            for i in range(len(self.t_arrival))
        ]


def run(
    policy,
    traces: Sequence,
    arrivals,
    timing: TimingConfig = DEFAULT_TIMING,
    seed: int = 0,
    horizon_us: int = FOREVER_US,
    source=None,
) -> list[PacketRecord]:
    """Simulate one access policy over per-link traces and return per-packet records.

    ``traces`` holds one BinaryTrace or BondedLink per link (primary first).
    Packets still queued or in flight at ``horizon_us`` keep their unset
    timestamps. Identical inputs and seed give identical records.
    """
    from .policies import make_policy

    pol = make_policy(policy)
    sim = Simulation(traces, arrivals, timing, horizon_us, source, seed)
    return sim.execute(pol).records()
