"""Channel bonding with preamble puncturing.

A link is a group of 20 MHz channels. Backoff runs on the primary channel;
at expiry every secondary channel that was idle for a PIFS is added to the
TXOP, contiguous or not. Wider TXOPs carry more fixed-size packets in the same
airtime instead of a shorter PPDU.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SimulationError
from .trace import BinaryTrace, idle_window

DEFAULT_PIFS_US = 20


@dataclass(frozen=True, eq=False)
class BondedLink:
    channels: tuple
    primary_index: int = 0

    def __post_init__(self):
        channels = tuple(self.channels)
        if not 1 <= len(channels) <= 4:
            raise ValueError("a link holds between 1 and 4 channels of 20 MHz")
        if not 0 <= self.primary_index < len(channels):
            raise ValueError(f"primary_index {self.primary_index} out of range")
        object.__setattr__(self, "channels", channels)

    @classmethod
    def single(cls, trace: BinaryTrace) -> "BondedLink":
        return cls((trace,), 0)

    @property
    def width_mhz(self) -> int:
        return 20 * len(self.channels)

    @property
    def primary(self) -> BinaryTrace:
        return self.channels[self.primary_index]

    def with_primary(self, index: int) -> "BondedLink":
        return BondedLink(self.channels, index)


def punctured_txop(link: BondedLink, expiry_us: int, pifs_us: int = DEFAULT_PIFS_US) -> frozenset:
    """Channel indices usable by a TXOP starting at ``expiry_us``."""
    start = max(0, expiry_us - pifs_us)
    usable = {link.primary_index}
    for i, ch in enumerate(link.channels):
        if i != link.primary_index and idle_window(ch, start, expiry_us):
            usable.add(i)
    return frozenset(usable)


def txop_payload(n_channels: int, queue_len: int) -> int:
    """Packets carried by one TXOP: one per usable 20 MHz channel, capped by the queue."""
    if n_channels < 1:
        raise ValueError("a TXOP needs at least its primary channel")
    if queue_len < 1:
        raise SimulationError("TXOP triggered with an empty queue")
    return min(n_channels, queue_len)


def select_primary(link: BondedLink) -> int:
    """Index of the least occupied channel; ties go to the lowest index."""
    return int(np.argmin([ch.occupancy for ch in link.channels]))


def as_link(obj) -> BondedLink:
    if isinstance(obj, BondedLink):
        return obj
    if isinstance(obj, BinaryTrace):
        return BondedLink.single(obj)
    raise TypeError(f"expected BinaryTrace or BondedLink, got {type(obj).__name__}")
