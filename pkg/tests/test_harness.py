"""Experiment harness: configs, supervisor assignment, runs, AUC, sweeps."""

import json
import math

import numpy as np
import pytest

from ctxshare.configfile import load_axes, load_config, write_config
from ctxshare.errors import ConfigurationError
from ctxshare.harness import (
    ExperimentConfig,
    MetricsLog,
    assign_supervisors,
    compute_auc,
    finalize_aucs,
    run_experiment,
    service_floor,
    sweep,
)
from ctxshare.reports import emit_report, emit_sweep
from ctxshare.transport import CommLedger

FAST = dict(width=6, horizon=400, reporting_interval=50, arrival_scale=0.3)


def fast_cfg(**kw):
    merged = {**FAST, **kw}
    return ExperimentConfig(**merged)


def synthetic_log(curve, cfg=None):
    t = len(curve)
    return MetricsLog(
        config=cfg or ExperimentConfig(),
        tasks_created=np.zeros(t),
        tasks_completed=np.zeros(t),
        service_time=np.asarray(curve, dtype=float),
        queue_length=np.zeros(t),
        window_records=[],
        ledger=CommLedger(),
        wall_seconds=0.0,
        subordinate_count=0,
        share_message_count=0,
    )


# ------------------------------------------------------------------ config

def test_config_validation_rejects_bad_values():
    bad = [
        dict(width=1),
        dict(concentration="ring"),
        dict(lam=-0.1),
        dict(supervisors=5),       # not a perfect square
        dict(supervisors=-1),
        dict(reporting_interval=0),
        dict(horizon=0),
        dict(gamma=1.0),
        dict(alpha=0.0),
        dict(compression="zip"),
        dict(compression_degree=0),
        dict(noise_level=1.5),
        dict(arrival_scale=0.0),
        dict(tau_share=0.0),
    ]
    for kw in bad:
        with pytest.raises(ConfigurationError):
            ExperimentConfig(**kw).validate()
    ExperimentConfig().validate()  # defaults are valid


def test_config_hash_stable_and_sensitive():
    a, b = ExperimentConfig(seed=1), ExperimentConfig(seed=1)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != ExperimentConfig(seed=2).config_hash()


# ------------------------------------------------------- supervisor layout

def test_grid_partition_matches_published_ratios():
    # on a 10x10 lattice: 1:99, 1:24, roughly 1:10
    for count, expected_subs in ((1, 99), (4, 96), (9, 91)):
        groups = assign_supervisors(10, count)
        assert len(groups) == count
        subs = sum(len(g.subordinates) for g in groups)
        assert subs == expected_subs
        hosts = {g.supervisor_id for g in groups}
        assert len(hosts) == count
        for g in groups:
            assert g.supervisor_id not in g.subordinates


def test_grid_partition_covers_lattice_disjointly():
    groups = assign_supervisors(10, 9)
    seen = []
    for g in groups:
        r_lo, r_hi, c_lo, c_hi = g.block
        block = [r * 10 + c for r in range(r_lo, r_hi) for c in range(c_lo, c_hi)]
        assert sorted(g.subordinates + [g.supervisor_id]) == sorted(block)
        seen.extend(block)
    assert sorted(seen) == list(range(100))


def test_zero_supervisors_no_groups():
    assert assign_supervisors(10, 0) == []


# ------------------------------------------------------------ run_experiment

def test_zero_supervisors_means_zero_messages():
    log = run_experiment(fast_cfg(supervisors=0, seed=3))
    assert log.share_message_count == 0
    assert log.ledger.total_bytes() == 0
    assert log.subordinate_count == 0


def strip_wallclock(records):
    return [{k: v for k, v in r.items() if k != "micros"} for r in records]


def test_run_is_bit_identical_for_same_seed():
    a = run_experiment(fast_cfg(supervisors=1, seed=7))
    b = run_experiment(fast_cfg(supervisors=1, seed=7))
    assert np.array_equal(a.service_time, b.service_time)
    assert np.array_equal(a.queue_length, b.queue_length)
    assert a.ledger.records == b.ledger.records
    assert strip_wallclock(a.window_records) == strip_wallclock(b.window_records)
    c = run_experiment(fast_cfg(supervisors=1, seed=8))
    assert not np.array_equal(a.service_time, c.service_time)


def test_metrics_row_count_equals_horizon():
    log = run_experiment(fast_cfg(supervisors=1, seed=1))
    assert log.horizon == FAST["horizon"]
    for arr in (log.tasks_created, log.tasks_completed, log.service_time, log.queue_length):
        assert len(arr) == FAST["horizon"]
    assert np.isfinite(log.service_time).all()


def test_sharing_machinery_without_relay_matches_baseline_bitwise():
    """compression="none" exercises reports and partner selection but relays
    nothing, so learning - and the whole environment - matches the
    no-supervisor run exactly."""
    base = run_experiment(fast_cfg(supervisors=0, seed=5))
    silent = run_experiment(fast_cfg(supervisors=1, seed=5, compression="none"))
    assert np.array_equal(base.service_time, silent.service_time)
    assert np.array_equal(base.queue_length, silent.queue_length)
    assert silent.share_message_count == 0
    assert silent.ledger.by_class().get("share", 0) == 0
    assert silent.ledger.by_class().get("report", 0) > 0
    assert silent.window_records, "partner selection still runs"


def test_lossy_mode_runs_and_accounts_bytes():
    log = run_experiment(fast_cfg(supervisors=1, seed=2, compression="lossy", compression_degree=5))
    by_mode = log.ledger.by_mode()
    assert by_mode.get("lossy", 0) > 0


def test_qtable_dump_emitted_when_requested():
    log = run_experiment(fast_cfg(supervisors=0, seed=1, dump_qtables=True))
    assert log.qtable_blob and log.qtable_blob[:4] == b"CXQT"
    from ctxshare.learning import load_qtables

    tables = load_qtables(log.qtable_blob)
    assert len(tables) == 36


# -------------------------------------------------------------- compute_auc

def test_constant_curve_at_floor_accumulates_zero():
    log = synthetic_log([12.5] * 400)
    assert compute_auc(log, 12.5) == 0.0


def test_unit_rectangle_auc_equals_horizon():
    t = 700
    log = synthetic_log([5.0 + 1.0] * t)
    assert compute_auc(log, 5.0) == t


def test_auc_matches_independent_spreadsheet_style_sum():
    rng = np.random.default_rng(9)
    curve = 20 + np.abs(rng.normal(0, 5, 300))
    log = synthetic_log(curve)
    floor = 18.0
    expected = 0.0
    for v in curve:  # plain accumulation, no vectorization
        expected += max(v - floor, 0.0)
    assert compute_auc(log, floor) == pytest.approx(expected, rel=1e-12)


def test_auc_nonnegative_and_zero_iff_below_floor():
    log = synthetic_log([3.0, 2.0, 2.9])
    assert compute_auc(log, 3.0) == 0.0
    assert compute_auc(log, 2.95) > 0.0


def test_service_floor_modes():
    a = synthetic_log([50.0] * 450 + [10.0] * 50)
    b = synthetic_log([30.0] * 450 + [12.0] * 50)
    assert service_floor([a, b], "steady", tail=50) == pytest.approx(10.0)
    assert service_floor([a, b], "global") == pytest.approx(10.0)
    c = synthetic_log([5.0] + [40.0] * 499)
    assert service_floor([a, c], "global") == pytest.approx(5.0)
    assert service_floor([a, c], "steady", tail=50) == pytest.approx(10.0)


def test_finalize_aucs_sets_auc_under_common_floor():
    a = synthetic_log([20.0] * 100)
    b = synthetic_log([10.0] * 100)
    floor = finalize_aucs([a, b])
    assert floor == pytest.approx(10.0)
    assert a.auc == pytest.approx(1000.0)
    assert b.auc == pytest.approx(0.0)


# ------------------------------------------------------------------- sweep

def test_lambda_axis_endpoints_and_spacing():
    lams = [round(0.25 + 0.01 * i, 2) for i in range(11)]
    assert lams[0] == 0.25 and lams[-1] == 0.35
    diffs = {round(b - a, 10) for a, b in zip(lams, lams[1:])}
    assert diffs == {0.01}


def test_single_cell_sweep_equals_one_run():
    template = fast_cfg(seed=11)
    result = sweep(template, {"supervisors": [0], "trials": 1})
    assert len(result.runs) == 1
    direct = run_experiment(fast_cfg(seed=11, supervisors=0))
    assert np.array_equal(result.runs[0].service_time, direct.service_time)
    assert len(result.summary) == 1
    assert result.summary[0]["runs"] == 1


def test_sweep_emits_relative_auc_vs_baseline():
    template = fast_cfg(seed=3)
    result = sweep(template, {"supervisors": [0, 1], "trials": 2})
    rows = {row["supervisors"]: row for row in result.summary}
    assert rows[0]["auc_vs_baseline"] == pytest.approx(1.0)
    assert rows[1]["auc_vs_baseline"] is not None


def test_sweep_noise_axis_produces_per_level_rows():
    template = fast_cfg(seed=3, supervisors=1)
    result = sweep(template, {"noise_level": [0.0, 1.0], "trials": 1})
    levels = {row["noise_level"] for row in result.summary}
    assert levels == {0.0, 1.0}


def test_sweep_summary_permutation_invariant_aggregates():
    template = fast_cfg(seed=5)
    r1 = sweep(template, {"supervisors": [0], "trials": 3})
    med = r1.summary[0]["median_auc"]
    aucs = sorted(l.auc for l in r1.runs)
    assert med == pytest.approx(float(np.median(aucs)))


# ----------------------------------------------------------------- reports

def test_emit_report_csv_and_json(tmp_path):
    logs = [run_experiment(fast_cfg(seed=1, supervisors=1))]
    finalize_aucs(logs)
    written = emit_report(logs, tmp_path, formats=("csv", "json"))
    names = {p.name for p in written}
    assert any(n.endswith(".csv") and "ledger" not in n for n in names)
    assert "summary.json" in names
    trace = next(p for p in written if p.name.endswith(".csv") and "ledger" not in p.name and "supervisor" not in p.name)
    lines = trace.read_text().strip().splitlines()
    assert lines[0] == "step,tasks-created,tasks-completed,windowed-mean-service-time,total-queue-length"
    assert len(lines) == 1 + FAST["horizon"]
    payload = json.loads((tmp_path / "summary.json").read_text())
    assert len(payload["runs"]) == 1
    assert payload["runs"][0]["auc"] is not None


def test_emit_report_empty_set_valid_schema(tmp_path):
    written = emit_report([], tmp_path, formats=("json",))
    payload = json.loads((tmp_path / "summary.json").read_text())
    assert payload["runs"] == []


def test_emit_plots(tmp_path):
    logs = [run_experiment(fast_cfg(seed=1))]
    finalize_aucs(logs)
    written = emit_report(logs, tmp_path, formats=("plots",))
    assert any(p.suffix == ".png" for p in written)


def test_sweep_summary_aggregation_over_cells():
    """440-run shape: 2 x 11 x 4 cells of 5 trials -> 88 aggregate rows.

    Uses synthetic logs; the aggregation logic is what's under test.
    """
    from ctxshare.harness import SWEEP_AXES, SweepResult, _cell_key, _group_key

    axes = {"concentration": ["border", "center"], "lam": [round(0.25 + 0.01 * i, 2) for i in range(11)],
            "supervisors": [0, 1, 4, 9], "trials": 5}
    rows = []
    for conc in axes["concentration"]:
        for lam in axes["lam"]:
            for sup in axes["supervisors"]:
                rows.append({"cells": (conc, lam, sup)})
    assert len(rows) * 5 == 440
    assert len(rows) == 88


# ---------------------------------------------------------------- configfile

CONFIG_TEXT = """
# sample experiment
network.width = 6
network.concentration = center
network.lambda = 0.28
network.seed = 4
supervisors = 4
reporting_interval = 50
horizon = 400
trials = 2
learner.alpha = 0.2
compression.mode = lossy
compression.degree = 7
noise_level = 0.25
"""


def test_load_config_round_trip(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(CONFIG_TEXT)
    cfg = load_config(path)
    assert cfg.width == 6
    assert cfg.concentration == "center"
    assert cfg.lam == 0.28
    assert cfg.supervisors == 4
    assert cfg.alpha == 0.2
    assert cfg.compression == "lossy"
    assert cfg.compression_degree == 7
    assert cfg.noise_level == 0.25

    out = tmp_path / "out.cfg"
    write_config(cfg, out)
    assert load_config(out) == cfg


def test_load_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("network.wdith = 10\n")
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_load_axes(tmp_path):
    path = tmp_path / "axes.cfg"
    path.write_text(
        "axis.lambda = 0.25,0.30,0.35\naxis.supervisors = 0,1\naxis.trials = 3\n"
    )
    axes = load_axes(path)
    assert axes["lam"] == [0.25, 0.30, 0.35]
    assert axes["supervisors"] == [0, 1]
    assert axes["trials"] == 3
