"""Plain key-value experiment config files.

Format: one ``key = value`` per line, ``#`` starts a comment, blank lines are
ignored. Dotted keys group related settings; the full key set is listed in
the README. Axis files for sweeps use ``axis.<name>`` keys whose values are
comma-separated lists.
"""

from __future__ import annotations

from dataclasses import fields
from typing import Union

from .errors import ConfigurationError
from .harness import ExperimentConfig

# config-file key -> ExperimentConfig field
KEY_MAP = {
    "network.width": "width",
    "network.concentration": "concentration",
    "network.lambda": "lam",
    "network.seed": "seed",
    "network.arrival_scale": "arrival_scale",
    "network.duration_mean": "duration_mean",
    "network.prior_service": "prior_service",
    "network.history_window": "history_window",
    "network.service_metric_window": "service_metric_window",
    "supervisors": "supervisors",
    "reporting_interval": "reporting_interval",
    "horizon": "horizon",
    "trials": "trials",
    "learner.alpha": "alpha",
    "learner.alpha_shared": "alpha_shared",
    "learner.gamma": "gamma",
    "learner.tau_start": "tau_start",
    "learner.tau_end": "tau_end",
    "learner.dump_qtables": "dump_qtables",
    "sharing.temperature": "tau_share",
    "sharing.shrinkage": "shrinkage",
    "sharing.k_max": "k_max",
    "sharing.gap_refs": "gap_refs",
    "sharing.literal_boltzmann": "literal_boltzmann",
    "compression.mode": "compression",
    "compression.degree": "compression_degree",
    "noise_level": "noise_level",
    "features_in_report": "features_in_report",
}

AXIS_KEYS = {
    "axis.concentration": ("concentration", str),
    "axis.lambda": ("lam", float),
    "axis.supervisors": ("supervisors", int),
    "axis.reporting_interval": ("reporting_interval", int),
    "axis.noise_level": ("noise_level", float),
    "axis.compression": ("compression", str),
    "axis.trials": ("trials", int),
}


def _parse_scalar(raw: str, target_type) -> Union[int, float, str, bool]:
    raw = raw.strip()
    if target_type is bool:
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        raise ConfigurationError(f"expected a boolean, got {raw!r}")
    if target_type is int:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigurationError(f"expected an integer, got {raw!r}") from exc
    if target_type is float:
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigurationError(f"expected a number, got {raw!r}") from exc
    return raw


def _read_pairs(path) -> list:
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {text!r}")
            key, _, value = text.partition("=")
            pairs.append((key.strip(), value.strip()))
    return pairs


def load_config(path) -> ExperimentConfig:
    field_types = {f.name: f.type for f in fields(ExperimentConfig)}
    type_of = {
        name: (bool if "bool" in str(tp) else int if "int" in str(tp) else float if "float" in str(tp) else str)
        for name, tp in field_types.items()
    }
    values = {}
    for key, raw in _read_pairs(path):
        if key not in KEY_MAP:
            raise ConfigurationError(f"unknown config key {key!r}")
        name = KEY_MAP[key]
        values[name] = _parse_scalar(raw, type_of[name])
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def load_axes(path) -> dict:
    """Read a sweep axis file into {axis_name: [values...]} plus 'trials'."""
    axes: dict = {}
    for key, raw in _read_pairs(path):
        if key not in AXIS_KEYS:
            raise ConfigurationError(f"unknown axis key {key!r}")
        name, typ = AXIS_KEYS[key]
        if name == "trials":
            axes["trials"] = _parse_scalar(raw, int)
        else:
            axes[name] = [_parse_scalar(part, typ) for part in raw.split(",") if part.strip()]
    if not axes:
        raise ConfigurationError(f"no axes defined in {path}")
    return axes


def write_config(cfg: ExperimentConfig, path) -> None:
    reverse = {v: k for k, v in KEY_MAP.items()}
    with open(path, "w") as fh:
        for f in fields(ExperimentConfig):
            if f.name in reverse:
                value = getattr(cfg, f.name)
                if isinstance(value, bool):
                    value = "true" if value else "false"
                fh.write(f"{reverse[f.name]} = {value}\n")
