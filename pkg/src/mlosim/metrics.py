"""Per-packet delay decomposition and per-experiment aggregates.

Total delay runs from arrival to the end of the transmission. Queueing delay
ends when the packet is bound to an interface; access delay ends when its
transmission starts. Percentiles use the nearest-rank rule.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .engine import PacketRecord

STABILITY_THRESHOLD = 0.95


@dataclass(frozen=True)
class ExperimentSummary:
    throughput_bps: float
    mean_delay_us: float | None
    p95_delay_us: float | None
    jitter_us: float | None
    mean_queueing_us: float | None
    p95_queueing_us: float | None
    mean_access_us: float | None
    p95_access_us: float | None
    delivered_fraction: float
    stable: bool
    n_packets: int = 0
    n_delivered: int = 0


SUMMARY_FIELDS = [f.name for f in fields(ExperimentSummary)]


def decompose(record: PacketRecord) -> tuple[int, int, int]:
    if not record.delivered:
        raise ValueError(f"packet {record.id} was not delivered")
    q = record.t_assigned_us - record.t_arrival_us
    a = record.t_tx_start_us - record.t_assigned_us
    return q, a, record.t_tx_end_us - record.t_arrival_us


def nearest_rank(values: Sequence[float], q: float = 0.95) -> float:
    """The ceil(q*n)-th smallest value."""
    if len(values) == 0:
        raise ValueError("no values")
    ordered = sorted(values)
    rank = max(1, math.ceil(q * len(ordered) - 1e-12))
    return ordered[rank - 1]


def _stats(values: list) -> tuple:
    if not values:
        return None, None
    return float(np.mean(values)), float(nearest_rank(values))


def summarize(records: Iterable[PacketRecord], horizon_us: int) -> ExperimentSummary:
    records = list(records)
    delivered = [r for r in records if r.delivered]
    n = len(records)
    frac = len(delivered) / n if n else 0.0
    throughput = sum(r.size_bits for r in delivered) / (horizon_us * 1e-6) if horizon_us > 0 else 0.0
    if not delivered:
        return ExperimentSummary(throughput, None, None, None, None, None, None, None, frac, False, n, 0)
    # Sorting by id makes float reductions independent of record order.
    delivered.sort(key=lambda r: r.id)
    parts = [decompose(r) for r in delivered]
    queueing = [p[0] for p in parts]
    access = [p[1] for p in parts]
    total = [p[2] for p in parts]
    mean_d, p95_d = _stats(total)
    mean_q, p95_q = _stats(queueing)
    mean_a, p95_a = _stats(access)
    jitter = float(np.std(total))
    return ExperimentSummary(
        throughput, mean_d, p95_d, jitter, mean_q, p95_q, mean_a, p95_a,
        frac, frac >= STABILITY_THRESHOLD, n, len(delivered),
    )


def export_cdf(values: Iterable[float]) -> list[tuple[float, float]]:
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        return []
    uniq, counts = np.unique(arr, return_counts=True)
    cum = np.cumsum(counts) / arr.size
    return list(zip(uniq.tolist(), cum.tolist()))


def stable_only(rows: Iterable[dict]) -> list[dict]:
    """Rows that pass the 95 % delivery filter; unstable experiments are kept in CSVs but not aggregated."""
    return [r for r in rows if r.get("stable") in (True, "True", "true", 1, "1")]


# -- CSV ----------------------------------------------------------------------

PACKET_FIELDS = ["experiment_id", "packet_id", "t_arrival_us", "t_assigned_us",
                 "t_tx_start_us", "t_tx_end_us", "interface"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def packet_rows(experiment_id: str, records: Iterable[PacketRecord]) -> list[list]:
    return [
        [experiment_id, r.id, r.t_arrival_us, _fmt(r.t_assigned_us), _fmt(r.t_tx_start_us),
         _fmt(r.t_tx_end_us), _fmt(r.interface)]
        for r in records
    ]


def write_packets_csv(path, rows: Iterable[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PACKET_FIELDS)
        w.writerows(rows)


def summary_row(summary: ExperimentSummary, **config) -> dict:
    row = dict(config)
    row.update(asdict(summary))
    return row


def write_summary_csv(path, rows: Sequence[dict]) -> None:
    if not rows:
        columns = SUMMARY_FIELDS
    else:
        columns = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def write_cdf_csv(path, groups: dict) -> None:
    """``groups`` maps (metric, label) to a list of values."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "group", "value", "cdf"])
        for (metric, label) in sorted(groups):
            for v, c in export_cdf(groups[(metric, label)]):
                w.writerow([metric, label, repr(v), repr(c)])
