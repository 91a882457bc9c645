"""Run artifacts: per-run CSV traces, summary JSON/CSV, and plot images."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .harness import MetricsLog, SweepResult

TRACE_COLUMNS = (
    "step",
    "tasks-created",
    "tasks-completed",
    "windowed-mean-service-time",
    "total-queue-length",
)


def run_name(log: MetricsLog) -> str:
    return f"run_{log.config.config_hash()}_s{log.config.seed}"


def write_trace_csv(log: MetricsLog, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for t in range(log.horizon):
            writer.writerow(
                [
                    t,
                    int(log.tasks_created[t]),
                    int(log.tasks_completed[t]),
                    f"{log.service_time[t]:.6f}",
                    int(log.queue_length[t]),
                ]
            )


def write_supervisor_jsonl(log: MetricsLog, path) -> None:
    with open(path, "w") as fh:
        for record in log.window_records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def summary_entry(log: MetricsLog) -> dict:
    return {
        "config": asdict(log.config),
        "config_hash": log.config.config_hash(),
        "seed": log.config.seed,
        "auc": log.auc,
        "total_bytes": log.ledger.total_bytes(),
        "bytes_by_class": log.ledger.by_class(),
        "share_messages": log.share_message_count,
        "subordinates": log.subordinate_count,
        "wall_seconds": log.wall_seconds,
        "final_service_time": float(log.service_time[-1]) if log.horizon else None,
        "peak_service_time": float(log.service_time.max()) if log.horizon else None,
    }


def emit_report(
    logs: Sequence[MetricsLog],
    out_dir,
    formats: Iterable[str] = ("csv", "json"),
    sweep_summary: Optional[list] = None,
) -> list:
    """Write the requested artifact files; returns the paths written.

    ``csv``: per-run trace + communication ledger CSVs and the sweep summary
    table (when given). ``json``: summary.json with one entry per run.
    ``plot-files``/``plots``: one service-time-vs-step PNG per configuration.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    formats = {f.lower() for f in formats}

    if "csv" in formats:
        for log in logs:
            name = run_name(log)
            trace = out / f"{name}.csv"
            write_trace_csv(log, trace)
            written.append(trace)
            ledger_path = out / f"{name}.ledger.csv"
            log.ledger.write_csv(ledger_path)
            written.append(ledger_path)
            if log.window_records:
                sup_path = out / f"{name}.supervisor.jsonl"
                write_supervisor_jsonl(log, sup_path)
                written.append(sup_path)
            if log.qtable_blob:
                qpath = out / f"{name}.qtables.bin"
                qpath.write_bytes(log.qtable_blob)
                written.append(qpath)
        if sweep_summary is not None:
            spath = out / "sweep_summary.csv"
            with open(spath, "w", newline="") as fh:
                if sweep_summary:
                    writer = csv.DictWriter(fh, fieldnames=list(sweep_summary[0].keys()))
                    writer.writeheader()
                    writer.writerows(sweep_summary)
                else:
                    fh.write("")
            written.append(spath)

    if "json" in formats:
        payload = {
            "runs": [summary_entry(log) for log in logs],
            "sweep_summary": sweep_summary,
        }
        jpath = out / "summary.json"
        with open(jpath, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
        written.append(jpath)

    if "plots" in formats or "plot-files" in formats:
        written.extend(_emit_plots(logs, out))

    return written


def _emit_plots(logs: Sequence[MetricsLog], out: Path) -> list:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_config: dict = {}
    for log in logs:
        by_config.setdefault(log.config.config_hash(), []).append(log)

    written = []
    for chash, group in sorted(by_config.items()):
        fig, ax = plt.subplots(figsize=(7, 4))
        for log in group:
            ax.plot(log.service_time, lw=0.8, label=f"seed {log.config.seed}")
        cfg = group[0].config
        ax.set_xlabel("step")
        ax.set_ylabel("windowed mean service time")
        ax.set_title(
            f"{cfg.width}x{cfg.width} {cfg.concentration} lam={cfg.lam} sup={cfg.supervisors}"
        )
        if len(group) <= 8:
            ax.legend(fontsize=7)
        path = out / f"service_{chash}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)
    return written


def emit_sweep(result: SweepResult, out_dir, formats=("csv", "json")) -> list:
    return emit_report(result.runs, out_dir, formats, sweep_summary=result.summary)
