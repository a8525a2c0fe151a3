"""Channel access policies mapping the FIFO queue onto radio interfaces.

``SLO`` uses the primary link only. ``STR`` binds the head packet to the first
free interface and then runs that interface's backoff. ``NSTR`` contends on
the primary only and adds the secondary link when it was idle for a PIFS
before expiry. ``STR+`` keeps a backoff running on every free interface and
binds the head packet to whichever expires first.
"""

from __future__ import annotations

import enum

from .bonding import txop_payload
from .engine import InterfaceState, Phase, Simulation
from .errors import ConfigurationError
from .trace import idle_window


class PolicyId(enum.Enum):
    SLO = "slo"
    MLO_STR = "str"
    MLO_NSTR = "nstr"
    MLO_STR_PLUS = "str+"

    @classmethod
    def parse(cls, value) -> "PolicyId":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("mlo-", "").replace("mlo_", "")
        aliases = {"slo": cls.SLO, "str": cls.MLO_STR, "nstr": cls.MLO_NSTR,
                   "str+": cls.MLO_STR_PLUS, "strplus": cls.MLO_STR_PLUS, "str_plus": cls.MLO_STR_PLUS}
        try:
            return aliases[key]
        except KeyError:
            raise ConfigurationError(f"unknown policy {value!r}") from None


class Policy:
    min_links = 1

    def check(self, sim: Simulation) -> None:
        if len(sim.ifaces) < self.min_links:
            raise ConfigurationError(f"{type(self).__name__} needs {self.min_links} links")

    def on_expiry(self, sim: Simulation, expired: list, t: int) -> None:
        raise NotImplementedError

    def schedule(self, sim: Simulation, t: int) -> None:
        raise NotImplementedError


def _fill_txop(sim: Simulation, iface: InterfaceState, t: int) -> list:
    """Head packet already bound to ``iface`` plus one queued packet per extra usable channel."""
    usable = len(sim.usable_channels(iface, t))
    n = txop_payload(usable, len(iface.assigned) + len(sim.queue))
    pids = list(iface.assigned)
    while len(pids) < n:
        pids.append(sim.queue.popleft())
    return pids


def slo_schedule(sim: Simulation, t: int) -> None:
    f = sim.ifaces[0]
    if f.phase is Phase.IDLE and sim.queue:
        sim.assign(f, sim.queue.popleft(), t)
        sim.contend(f, t)


class SLO(Policy):
    def schedule(self, sim, t):
        slo_schedule(sim, t)

    def on_expiry(self, sim, expired, t):
        f = expired[0]
        pids = _fill_txop(sim, f, t)
        sim.transmit(f, t, pids)
        # One primary draw per packet served keeps draws aligned with NSTR.
        sim.source.skip(0, len(pids) - 1)


def str_allocate(sim: Simulation, t: int) -> None:
    while sim.queue:
        free = [f for f in sim.ifaces if f.phase is Phase.IDLE]
        if not free:
            return
        f = free[0] if len(free) == 1 else free[sim.source.coin(len(free))]
        sim.assign(f, sim.queue.popleft(), t)
        sim.contend(f, t)


class STR(Policy):
    def schedule(self, sim, t):
        str_allocate(sim, t)

    def on_expiry(self, sim, expired, t):
        for f in expired:
            sim.transmit(f, t, _fill_txop(sim, f, t))


def nstr_txop(expiry_us: int, secondary, waiting: int, pifs_us: int = 20) -> int:
    """Packets the secondary link can add to a primary TXOP starting at ``expiry_us``.

    Every secondary channel idle over ``[expiry - pifs, expiry)`` carries one
    packet, limited by the ``waiting`` packets behind those already on the
    primary.
    """
    start = max(0, expiry_us - pifs_us)
    idle = sum(1 for ch in secondary.channels if idle_window(ch, start, expiry_us))
    return min(idle, max(0, waiting))


class NSTR(Policy):
    min_links = 2

    def schedule(self, sim, t):
        slo_schedule(sim, t)

    def on_expiry(self, sim, expired, t):
        prim = expired[0]
        if prim.link_id != 0:
            raise ConfigurationError("only the primary interface contends under NSTR")
        pids = _fill_txop(sim, prim, t)
        extra = nstr_txop(t, sim.links[1], len(sim.queue), sim.timing.pifs_us)
        sim.transmit(prim, t, pids)
        if extra:
            sec = sim.ifaces[1]
            sim.transmit(sec, t, [sim.queue.popleft() for _ in range(extra)])
        sim.source.skip(0, len(pids) + extra - 1)


def strplus_schedule(sim: Simulation, t: int) -> None:
    if not sim.queue:
        return
    for f in sim.ifaces:
        if f.phase is Phase.IDLE:
            sim.contend(f, t)


class STRPlus(Policy):
    def schedule(self, sim, t):
        strplus_schedule(sim, t)

    def on_expiry(self, sim, expired, t):
        order = list(expired)
        if len(order) > 1:
            first = order.pop(sim.source.coin(len(order)))
            order.insert(0, first)
        for f in order:
            if not sim.queue:
                sim.cancel(f, t)
                continue
            usable = len(sim.usable_channels(f, t))
            n = txop_payload(usable, len(sim.queue))
            sim.transmit(f, t, [sim.queue.popleft() for _ in range(n)])
        if not sim.queue:
            for f in sim.ifaces:
                if f.phase is Phase.BACKOFF:
                    sim.cancel(f, t)


_POLICIES = {
    PolicyId.SLO: SLO,
    PolicyId.MLO_STR: STR,
    PolicyId.MLO_NSTR: NSTR,
    PolicyId.MLO_STR_PLUS: STRPlus,
}


def make_policy(policy) -> Policy:
    if isinstance(policy, Policy):
        return policy
    return _POLICIES[PolicyId.parse(policy)]()
