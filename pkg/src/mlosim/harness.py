"""Experiment orchestration.

One experiment pairs a primary-link sample and a secondary-link sample drawn
(with replacement) from their occupancy bins, generates one arrival schedule
at a fraction of the bin's calibrated SLO saturation throughput, and runs
every requested policy on that same schedule with the same backoff seed.
"""

from __future__ import annotations

import configparser
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import metrics
from .bonding import BondedLink, select_primary
from .engine import DEFAULT_TIMING, TimingConfig, run
from .errors import ConfigurationError, SimulationError
from .policies import PolicyId
from .trace import (BinaryTrace, OccupancyBin, bin_samples, gen_iid_trace, gen_onoff_trace,
                    load_binary_trace, trace_path)
from .traffic import batched_arrivals, load_replay, poisson_arrivals, saturated_arrivals

log = logging.getLogger(__name__)

DATA_ENV = "MLO_SIM_DATA"
ALL_POLICIES = tuple(PolicyId)


def derive_seed(*keys) -> int:
    """Stable 63-bit seed from integer keys."""
    ints = [int(k) & 0xFFFFFFFF for k in keys]
    return int(np.random.SeedSequence(ints).generate_state(2, np.uint64)[0] >> np.uint64(1))


def _key(x: float) -> int:
    return int(round(x * 1000))


@dataclass(frozen=True)
class ExperimentConfig:
    policies: tuple = ALL_POLICIES
    primary_bin: float = 0.1
    secondary_bin: float = 0.1
    loads: tuple = (0.2, 0.4, 0.6, 0.8)
    rate_bps: float | None = None  # explicit offered load; overrides ``loads``
    traffic: str = "poisson"
    fps: float = 60.0
    replay_path: str | None = None
    reps: int = 20
    seed: int = 0
    horizon_us: int = 1_000_000
    widths: tuple = (20, 20)
    primary_modes: tuple = ("fixed:0", "fixed:0")
    source: str = "synthetic"
    synthetic_kind: str = "onoff"
    mean_busy_slots: float = 17.2
    sample_slots: int = 100_000
    pool_size: int = 20
    dataset_root: str | None = None
    channels: tuple = (36, 100)
    half_width: float = 0.05
    calibration_reps: int = 20
    calibration_cache: str | None = None
    workers: int = 1
    timing: TimingConfig = DEFAULT_TIMING

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(PolicyId.parse(p) for p in self.policies))
        if self.reps < 1:
            raise ConfigurationError("reps must be >= 1")
        if self.rate_bps is None:
            for load in self.loads:
                if not 0 < load <= 1:
                    raise ConfigurationError(f"load fraction {load} outside (0, 1]")
        elif self.rate_bps <= 0:
            raise ConfigurationError("rate_bps must be positive")
        if self.traffic not in ("poisson", "batched", "replay"):
            raise ConfigurationError(f"unknown traffic model {self.traffic!r}")
        if self.traffic == "replay" and not self.replay_path:
            raise ConfigurationError("replay traffic needs replay_path")
        if self.source not in ("synthetic", "dataset"):
            raise ConfigurationError(f"unknown trace source {self.source!r}")
        if self.synthetic_kind not in ("onoff", "iid"):
            raise ConfigurationError(f"unknown synthetic trace kind {self.synthetic_kind!r}")
        if len(self.widths) != 2 or any(w not in (20, 40, 80) for w in self.widths):
            raise ConfigurationError("widths must be two values from {20, 40, 80}")
        if len(self.primary_modes) != 2:
            raise ConfigurationError("primary_modes needs one entry per link")
        for mode in self.primary_modes:
            parse_primary_mode(mode)

    @property
    def bins(self) -> tuple:
        return (OccupancyBin(self.primary_bin, self.half_width), OccupancyBin(self.secondary_bin, self.half_width))

    @property
    def load_points(self) -> tuple:
        return (None,) if self.rate_bps is not None else tuple(self.loads)


def parse_primary_mode(mode: str):
    mode = mode.strip().lower()
    if mode == "dynamic":
        return "dynamic"
    kind, _, idx = mode.partition(":")
    if kind == "fixed":
        try:
            return int(idx or 0)
        except ValueError:
            pass
    raise ConfigurationError(f"primary mode must be 'fixed:<i>' or 'dynamic', got {mode!r}")


# -- trace pools ----------------------------------------------------------------


def link_channels(first: int, width_mhz: int) -> list[int]:
    return [first + 4 * i for i in range(width_mhz // 20)]


def _dataset_root(config: ExperimentConfig) -> str:
    root = config.dataset_root or os.environ.get(DATA_ENV)
    if not root:
        raise ConfigurationError(f"dataset source needs dataset_root or ${DATA_ENV}")
    return root


def build_pool(config: ExperimentConfig, position: int) -> list[tuple]:
    """Samples for one link position, each a tuple of per-channel traces.

    Dataset samples keep their index alignment across adjacent channels and
    are binned by the occupancy of the link's first channel.
    """
    center = (config.primary_bin, config.secondary_bin)[position]
    width = config.widths[position]
    first = config.channels[position]
    chans = link_channels(first, width)
    if config.source == "dataset":
        root = _dataset_root(config)
        per_channel = [load_binary_trace(trace_path(root, ch)) for ch in chans]
        n = min(len(x) for x in per_channel)
        binned = bin_samples(per_channel[0][:n], [OccupancyBin(center, config.half_width)])[0]
        if not binned.members:
            raise ConfigurationError(f"no channel-{first} samples in the {center:.0%} occupancy bin")
        return [tuple(x[i] for x in per_channel) for i in binned.members]
    pool = []
    for s in range(config.pool_size):
        traces = []
        for c, ch in enumerate(chans):
            seed = derive_seed(config.seed, 11, position, s, c, _key(center))
            if config.synthetic_kind == "onoff":
                tr = gen_onoff_trace(center, config.mean_busy_slots, config.sample_slots, seed, ch)
            else:
                tr = gen_iid_trace(center, config.sample_slots, seed, ch)
            traces.append(tr)
        pool.append(tuple(traces))
    return pool


def make_link(channels: Sequence[BinaryTrace], mode) -> BondedLink:
    link = BondedLink(tuple(channels), 0)
    if mode == "dynamic":
        return link.with_primary(select_primary(link))
    return link.with_primary(mode)


# -- calibration -----------------------------------------------------------------


def backlog_size(horizon_us: int, timing: TimingConfig, channels: int = 1) -> int:
    """Enough packets to keep the queue non-empty until the horizon."""
    return channels * (horizon_us // (timing.difs_us + timing.tx_us) + 1) + 1


def saturated_throughput(policy, links: Sequence, timing: TimingConfig = DEFAULT_TIMING,
                         seed: int = 0, horizon_us: int = 1_000_000) -> float:
    links = list(links)
    n_ch = sum(len(getattr(l, "channels", (l,))) for l in links)
    arrivals = saturated_arrivals(backlog_size(horizon_us, timing, n_ch), timing.packet_bits)
    recs = run(policy, links, arrivals, timing, seed, horizon_us)
    return metrics.summarize(recs, horizon_us).throughput_bps


def calibrate_saturation(pool: Sequence, seed: int, reps: int = 20,
                         timing: TimingConfig = DEFAULT_TIMING, horizon_us: int = 1_000_000) -> float:
    """Mean saturated SLO throughput over ``reps`` samples drawn with replacement from ``pool``.

    Only the first (nominal primary) channel of each sample is used, so the
    value is the 20 MHz SLO reference that offered loads are scaled by.
    """
    if not pool:
        raise ConfigurationError("cannot calibrate an empty occupancy bin")
    rng = np.random.default_rng([seed, 7])
    picks = rng.integers(0, len(pool), reps)
    values = []
    for r, i in enumerate(picks.tolist()):
        sample = pool[i]
        first = sample[0] if isinstance(sample, tuple) else sample
        values.append(saturated_throughput("slo", [first], timing, derive_seed(seed, 13, r), horizon_us))
    return float(np.mean(values))


def _calibration_key(config: ExperimentConfig) -> str:
    if config.source == "dataset":
        src = f"dataset:{os.path.abspath(_dataset_root(config))}"
    else:
        src = f"synthetic:{config.synthetic_kind}:{config.mean_busy_slots}:{config.sample_slots}:{config.pool_size}"
    t = config.timing
    return (f"{src}|ch{config.channels[0]}|bin{config.primary_bin:.3f}|hw{config.half_width}|seed{config.seed}"
            f"|reps{config.calibration_reps}|h{config.horizon_us}|tx{t.tx_us}|cw{t.cw_min}|L{t.packet_bits}")


def cached_calibration(config: ExperimentConfig, pool) -> float:
    path = config.calibration_cache
    key = _calibration_key(config)
    cache = {}
    if path and os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            cache = json.load(fh)
        if key in cache:
            return float(cache[key])
    value = calibrate_saturation(pool, config.seed, config.calibration_reps, config.timing, config.horizon_us)
    if path:
        cache[key] = value
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(cache, fh, indent=1, sort_keys=True)
    return value


# -- matrix ------------------------------------------------------------------------


@dataclass
class MatrixResult:
    summaries: list = field(default_factory=list)  # dict rows, sorted by experiment_id
    packets: list = field(default_factory=list)
    delays: dict = field(default_factory=dict)  # (policy, load) -> per-packet total delays of stable runs
    flagged: list = field(default_factory=list)
    saturation_bps: float | None = None

    def aggregate(self) -> list[dict]:
        """Pooled mean / p95 delay per (policy, load) over stable experiments."""
        out = []
        for (pol, load), values in sorted(self.delays.items(), key=lambda kv: (str(kv[0][1]), kv[0][0])):
            out.append({
                "policy": pol,
                "load": load,
                "n_packets": len(values),
                "mean_delay_us": float(np.mean(values)) if values else None,
                "p95_delay_us": float(metrics.nearest_rank(values)) if values else None,
            })
        return out


def experiment_id(config: ExperimentConfig, load, policy: PolicyId, rep: int) -> str:
    lp = f"l{load:.2f}" if load is not None else f"r{config.rate_bps:.0f}"
    return (f"p{config.primary_bin:.2f}-s{config.secondary_bin:.2f}-w{config.widths[0]}x{config.widths[1]}"
            f"-{lp}-{policy.value}-r{rep:03d}")


def _arrivals(config: ExperimentConfig, rate: float, rep: int, li: int):
    p = config.timing.packet_bits
    if config.traffic == "poisson":
        return poisson_arrivals(rate, p, config.horizon_us, derive_seed(config.seed, 17, rep, li))
    if config.traffic == "batched":
        return batched_arrivals(rate, config.fps, p, config.horizon_us)
    return load_replay(config.replay_path, config.horizon_us)


def _run_rep(config: ExperimentConfig, pools, sat: float | None, rep: int, keep_packets: bool):
    rng = np.random.default_rng([config.seed, 5, rep])
    picks = [int(rng.integers(0, len(p))) for p in pools]
    links = [make_link(pools[k][picks[k]], parse_primary_mode(config.primary_modes[k])) for k in range(2)]
    engine_seed = derive_seed(config.seed, 19, rep)
    rows, packets, delays = [], [], {}
    for li, load in enumerate(config.load_points):
        rate = config.rate_bps if load is None else load * sat
        arrivals = _arrivals(config, rate, rep, li)
        for pol in config.policies:
            recs = run(pol, links, arrivals, config.timing, engine_seed, config.horizon_us)
            check_conservation(recs, config.timing)
            summ = metrics.summarize(recs, config.horizon_us)
            eid = experiment_id(config, load, pol, rep)
            rows.append(metrics.summary_row(
                summ,
                experiment_id=eid,
                policy=pol.value,
                primary_bin=config.primary_bin,
                secondary_bin=config.secondary_bin,
                load_fraction="" if load is None else load,
                offered_bps=rate,
                traffic=config.traffic,
                rep=rep,
                seed=config.seed,
                primary_sample=pools[0][picks[0]][0].sample_index if config.source == "dataset" else picks[0],
                secondary_sample=pools[1][picks[1]][0].sample_index if config.source == "dataset" else picks[1],
                width_primary=config.widths[0],
                width_secondary=config.widths[1],
                primary_channel_primary=links[0].primary.channel_id,
                primary_channel_secondary=links[1].primary.channel_id,
                horizon_us=config.horizon_us,
            ))
            if summ.stable:
                delays.setdefault((pol.value, load), []).extend(
                    r.t_tx_end_us - r.t_arrival_us for r in recs if r.delivered)
            if keep_packets:
                packets.extend(metrics.packet_rows(eid, recs))
    return rows, packets, delays


def check_conservation(records, timing: TimingConfig) -> None:
    delivered = in_flight = queued = 0
    for r in records:
        if r.t_tx_end_us is not None:
            delivered += 1
            if not r.t_arrival_us <= r.t_assigned_us <= r.t_tx_start_us < r.t_tx_end_us:
                raise SimulationError(f"packet {r.id}: timestamps out of order")
            if r.t_tx_end_us - r.t_tx_start_us != timing.tx_us:
                raise SimulationError(f"packet {r.id}: wrong transmission duration")
        elif r.t_tx_start_us is not None:
            in_flight += 1
        else:
            queued += 1
    if delivered + in_flight + queued != len(records):
        raise SimulationError("packet conservation violated")


def run_matrix(config: ExperimentConfig, keep_packets: bool = True) -> MatrixResult:
    pools = [build_pool(config, 0), build_pool(config, 1)]
    sat = None
    if config.rate_bps is None:
        sat = cached_calibration(config, pools[0])
        if sat <= 0:
            log.warning("SLO saturation throughput of bin %.2f is zero; every cell is infeasible",
                        config.primary_bin)
    reps = range(config.reps)
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as ex:
            parts = list(ex.map(_run_rep, *zip(*[(config, pools, sat, r, keep_packets) for r in reps])))
    else:
        parts = [_run_rep(config, pools, sat, r, keep_packets) for r in reps]
    result = MatrixResult(saturation_bps=sat)
    for rows, packets, delays in parts:
        result.summaries.extend(rows)
        result.packets.extend(packets)
        for k, v in delays.items():
            result.delays.setdefault(k, []).extend(v)
    result.summaries.sort(key=lambda r: r["experiment_id"])
    result.packets.sort(key=lambda r: (r[0], r[1]))

    cells: dict = {}
    for row in result.summaries:
        cells.setdefault((row["policy"], row["load_fraction"]), []).append(row["stable"])
    for cell, flags in sorted(cells.items(), key=lambda kv: (str(kv[0][1]), kv[0][0])):
        if not any(flags):
            result.flagged.append(cell)
            log.warning("cell policy=%s load=%s: every experiment unstable", *cell)
    flagged = set(result.flagged)
    for row in result.summaries:
        row["cell_flag"] = "infeasible" if (row["policy"], row["load_fraction"]) in flagged else ""
    return result


def write_outputs(result: MatrixResult, outdir: str) -> dict:
    os.makedirs(outdir, exist_ok=True)
    paths = {name: os.path.join(outdir, f"{name}.csv") for name in ("summary", "packets", "cdf")}
    metrics.write_summary_csv(paths["summary"], result.summaries)
    metrics.write_packets_csv(paths["packets"], result.packets)
    groups = {("delay_us", f"{pol}@{load}"): v for (pol, load), v in result.delays.items()}
    for row in result.summaries:
        groups.setdefault(("throughput_bps", row["policy"]), []).append(row["throughput_bps"])
    metrics.write_cdf_csv(paths["cdf"], groups)
    return paths


# -- config files --------------------------------------------------------------------

_LIST_FIELDS = {"policies": str, "loads": float, "widths": int, "primary_modes": str, "channels": int}
_SCALAR_FIELDS = {
    "primary_bin": float, "secondary_bin": float, "rate_bps": float, "traffic": str, "fps": float,
    "replay_path": str, "reps": int, "seed": int, "horizon_us": int, "source": str,
    "synthetic_kind": str, "mean_busy_slots": float, "sample_slots": int, "pool_size": int,
    "dataset_root": str, "half_width": float, "calibration_reps": int, "calibration_cache": str,
    "workers": int,
}
_TIMING_FIELDS = ("slot_us", "sifs_us", "difs_us", "pifs_us", "tx_us", "cw_min", "packet_bits")


def load_config(path, **overrides) -> ExperimentConfig:
    """Read an INI file with an ``[experiment]`` and optional ``[timing]`` section."""
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise ConfigurationError(f"cannot read config file {path}")
    if "experiment" not in parser:
        raise ConfigurationError(f"{path}: missing [experiment] section")
    kwargs = {}
    for key, raw in parser["experiment"].items():
        if key in _LIST_FIELDS:
            conv = _LIST_FIELDS[key]
            kwargs[key] = tuple(conv(x.strip()) for x in raw.split(",") if x.strip())
        elif key in _SCALAR_FIELDS:
            kwargs[key] = _SCALAR_FIELDS[key](raw.strip())
        else:
            raise ConfigurationError(f"{path}: unknown key {key!r}")
    for key in ("widths", "primary_modes"):
        if key in kwargs and len(kwargs[key]) == 1:
            kwargs[key] = kwargs[key] * 2
    if "timing" in parser:
        tkw = {}
        for key, raw in parser["timing"].items():
            if key not in _TIMING_FIELDS:
                raise ConfigurationError(f"{path}: unknown timing key {key!r}")
            tkw[key] = int(raw)
        kwargs["timing"] = TimingConfig(**tkw)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**kwargs)
