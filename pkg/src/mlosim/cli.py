"""Command line entry point: ``mlo-sim {run,model,calibrate,synth,convert}``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace

from . import harness
from .engine import DEFAULT_TIMING
from .model import gain_map, parse_grid
from .trace import binarize, convert_matrix, gen_iid_trace, gen_onoff_trace, save_trace


def _per_link(values, name):
    if not values:
        return None
    if len(values) == 1:
        return (values[0], values[0])
    if len(values) == 2:
        return tuple(values)
    raise SystemExit(f"--{name} takes one value (both links) or two (primary, secondary)")


def cmd_run(args) -> int:
    overrides = {
        "policies": tuple(args.policy) if args.policy else None,
        "widths": _per_link(args.width, "width"),
        "primary_modes": _per_link(args.primary, "primary"),
        "reps": args.reps,
        "seed": args.seed,
        "workers": args.workers,
        "dataset_root": args.data,
    }
    config = harness.load_config(args.config, **overrides)
    if config.calibration_cache is None and args.out:
        config = replace(config, calibration_cache=os.path.join(args.out, "calibration.json"))
    os.makedirs(args.out, exist_ok=True)
    result = harness.run_matrix(config, keep_packets=not args.no_packets)
    paths = harness.write_outputs(result, args.out)
    if result.saturation_bps is not None:
        print(f"SLO saturation throughput (primary bin {config.primary_bin:.2f}): {result.saturation_bps / 1e6:.2f} Mbps")
    print(f"{'policy':6s} {'load':>6s} {'packets':>8s} {'mean_ms':>9s} {'p95_ms':>9s}")
    for row in result.aggregate():
        mean = row["mean_delay_us"]
        p95 = row["p95_delay_us"]
        print(f"{row['policy']:6s} {str(row['load']):>6s} {row['n_packets']:8d} "
              f"{'-' if mean is None else f'{mean / 1000:9.3f}':>9s} {'-' if p95 is None else f'{p95 / 1000:9.3f}':>9s}")
    for cell in result.flagged:
        print(f"infeasible: policy={cell[0]} load={cell[1]}")
    for name, path in paths.items():
        print(f"wrote {name}: {path}")
    return 0


def cmd_model(args) -> int:
    rows = gain_map(parse_grid(args.grid))
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.DictWriter(out, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            out.close()
    return 0


def cmd_calibrate(args) -> int:
    config = harness.load_config(args.config, dataset_root=args.data) if args.config else harness.ExperimentConfig(
        source="dataset" if args.data or os.environ.get(harness.DATA_ENV) else "synthetic",
        dataset_root=args.data,
        reps=1,
    )
    bins = args.bin or [config.primary_bin]
    for center in bins:
        cfg = replace(config, primary_bin=center, widths=(20, 20))
        pool = harness.build_pool(cfg, 0)
        value = harness.cached_calibration(cfg, pool)
        print(f"bin {center:.2f}: {value / 1e6:.3f} Mbps ({len(pool)} samples)")
    return 0


def cmd_synth(args) -> int:
    traces = []
    for i in range(args.samples):
        seed = harness.derive_seed(args.seed, i)
        if args.kind == "iid":
            tr = gen_iid_trace(args.occupancy, args.slots, seed, args.channel)
        else:
            tr = gen_onoff_trace(args.occupancy, args.mean_busy, args.slots, seed, args.channel)
        traces.append(type(tr)(tr.channel_id, tr.slots, i))
    save_trace(args.out, traces)
    occ = sum(t.occupancy for t in traces) / len(traces)
    print(f"wrote {len(traces)} samples to {args.out} (mean occupancy {occ:.4f})")
    return 0


def cmd_convert(args) -> int:
    samples = convert_matrix(args.input, args.channel, args.delimiter)
    if args.binary:
        save_trace(args.out, [binarize(s, args.threshold) for s in samples])
    else:
        save_trace(args.out, samples)
    print(f"wrote {len(samples)} samples of channel {args.channel} to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlo-sim", description="Trace-driven Wi-Fi multi-link operation simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment matrix from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default="results")
    r.add_argument("--policy", action="append", choices=["slo", "str", "nstr", "str+"])
    r.add_argument("--width", action="append", type=int, choices=[20, 40, 80],
                   help="link width in MHz; repeat for (primary, secondary)")
    r.add_argument("--primary", action="append", help="fixed:<i> or dynamic; repeat per link")
    r.add_argument("--reps", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--data", help=f"dataset root (default ${harness.DATA_ENV})")
    r.add_argument("--no-packets", action="store_true", help="skip per-packet rows in packets.csv")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("model", help="closed-form MLO/SLO gain map as CSV")
    m.add_argument("--grid", default="0.1:0.9:0.1")
    m.add_argument("--out")
    m.set_defaults(func=cmd_model)

    c = sub.add_parser("calibrate", help="saturated SLO throughput per occupancy bin")
    c.add_argument("--config")
    c.add_argument("--bin", action="append", type=float)
    c.add_argument("--data")
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("synth", help="write a synthetic binary trace file")
    s.add_argument("--occupancy", type=float, required=True)
    s.add_argument("--kind", choices=["iid", "onoff"], default="onoff")
    s.add_argument("--mean-busy", type=float, default=DEFAULT_TIMING.tx_us / 10)
    s.add_argument("--slots", type=int, default=1000)
    s.add_argument("--samples", type=int, default=1)
    s.add_argument("--channel", type=int, default=36)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    v = sub.add_parser("convert", help="convert a delimited RSSI matrix to a trace file")
    v.add_argument("--input", required=True)
    v.add_argument("--channel", type=int, required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--delimiter")
    v.add_argument("--binary", action="store_true", help="store busy/idle bits instead of dBm")
    v.add_argument("--threshold", type=float, default=-83.5)
    v.set_defaults(func=cmd_convert)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
