"""Command-line entry points: run, sweep, report.

Exit codes: 0 success, 1 configuration error, 2 runtime error. The output
directory defaults to ./out and can be overridden with --out or the
CTXSHARE_OUTPUT_DIR environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .configfile import load_axes, load_config
from .errors import ConfigurationError
from .harness import finalize_aucs, run_experiment, sweep
from .reports import emit_report, emit_sweep


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("CTXSHARE_OUTPUT_DIR", "out"))


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    logs = []
    for trial in range(cfg.trials):
        trial_cfg = replace(cfg, seed=cfg.seed + trial, trials=1)
        print(f"[run] seed {trial_cfg.seed} ...", flush=True)
        logs.append(run_experiment(trial_cfg))
    finalize_aucs(logs)
    out = _out_dir(args)
    written = emit_report(logs, out, formats=args.format.split(","))
    for log in logs:
        print(
            f"[run] seed {log.config.seed}: auc={log.auc:.1f} "
            f"bytes={log.ledger.total_bytes()} wall={log.wall_seconds:.1f}s"
        )
    print(f"[run] wrote {len(written)} files to {out}")
    return 0


def _cmd_sweep(args) -> int:
    template = load_config(args.config)
    axes = load_axes(args.axes)
    result = sweep(template, axes, jobs=args.jobs)
    out = _out_dir(args)
    written = emit_sweep(result, out, formats=args.format.split(","))
    for row in result.summary:
        print("[sweep]", json.dumps(row, sort_keys=True))
    print(f"[sweep] {len(result.runs)} runs, wrote {len(written)} files to {out}")
    return 0


def _cmd_report(args) -> int:
    src = Path(args.indir)
    summary_path = src / "summary.json"
    if not summary_path.exists():
        raise ConfigurationError(f"no summary.json under {src}")
    with open(summary_path) as fh:
        payload = json.load(fh)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)

    fmt = args.format
    if fmt == "json":
        dest = out / "summary.json"
        with open(dest, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
        print(f"[report] wrote {dest}")
    elif fmt == "csv":
        import csv

        dest = out / "report.csv"
        rows = payload.get("runs", [])
        with open(dest, "w", newline="") as fh:
            if rows:
                flat = [
                    {
                        "config_hash": r["config_hash"],
                        "seed": r["seed"],
                        "auc": r["auc"],
                        "total_bytes": r["total_bytes"],
                        "wall_seconds": r["wall_seconds"],
                        "final_service_time": r["final_service_time"],
                    }
                    for r in rows
                ]
                writer = csv.DictWriter(fh, fieldnames=list(flat[0].keys()))
                writer.writeheader()
                writer.writerows(flat)
        print(f"[report] wrote {dest}")
    elif fmt in ("plots", "plot-files"):
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        import numpy as np

        count = 0
        for trace in sorted(src.glob("run_*.csv")):
            if trace.name.endswith(".ledger.csv"):
                continue
            data = np.genfromtxt(trace, delimiter=",", names=True)
            fig, ax = plt.subplots(figsize=(7, 4))
            ax.plot(data["windowedmeanservicetime"], lw=0.8)
            ax.set_xlabel("step")
            ax.set_ylabel("windowed mean service time")
            ax.set_title(trace.stem)
            dest = out / f"{trace.stem}.png"
            fig.savefig(dest, dpi=110)
            plt.close(fig)
            count += 1
        print(f"[report] wrote {count} plots to {out}")
    else:
        raise ConfigurationError(f"unknown report format {fmt!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctxshare")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config (all trials)")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--format", default="csv,json")
    p_run.set_defaults(fn=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a parameter grid")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axes", required=True)
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--format", default="csv,json")
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_report = sub.add_parser("report", help="re-emit artifacts from a run directory")
    p_report.add_argument("--in", dest="indir", required=True)
    p_report.add_argument("--format", choices=["csv", "json", "plots", "plot-files"], default="csv")
    p_report.add_argument("--out", default=None)
    p_report.set_defaults(fn=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
