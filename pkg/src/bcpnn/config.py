"""Plain key=value run configuration with sectioned dotted keys.

Files hold one ``section.key = value`` per line; ``#`` starts a comment.
Command-line overrides use the same ``key=value`` syntax and win over file
values.  Unknown keys are rejected.  Optional values accept ``none``.
"""

from __future__ import annotations

from dataclasses import fields
from typing import Dict, List, Optional, Sequence, Tuple

from .data import EncodingMode
from .errors import ConfigError
from .harness import ExperimentConfig


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_opt(parser):
    def parse(text: str):
        return None if text.strip().lower() in ("none", "") else parser(text)
    return parse


def _parse_int_tuple(text: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _parse_str_tuple(text: str) -> Tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _parse_encoding(text: str) -> EncodingMode:
    return EncodingMode(text.strip().lower())


# dotted config key -> (ExperimentConfig field, value parser)
CONFIG_KEYS = {
    "data.dir": ("mnist_dir", _parse_opt(str.strip)),
    "data.encoding": ("encoding", _parse_encoding),
    "unsup.dt": ("dt", float),
    "unsup.tau_p": ("tau_p", float),
    "unsup.epsilon": ("epsilon", float),
    "unsup.kappa": ("kappa_unsup", float),
    "unsup.epochs": ("unsup_epochs", int),
    "unsup.n_mc_hidden": ("n_mc_hidden", int),
    "unsup.init_jitter": ("init_jitter", float),
    "unsup.skip_below": ("skip_below", _parse_opt(float)),
    "plasticity.p_conn": ("p_conn", float),
    "plasticity.rewire_period": ("rewire_period", _parse_opt(int)),
    "plasticity.freeze_final_epoch": ("freeze_final_epoch", _parse_bool),
    "plasticity.max_swaps_per_event": ("max_swaps_per_event", _parse_opt(int)),
    "experiment.hidden_sizes": ("hidden_sizes", _parse_int_tuple),
    "experiment.unsup_seeds": ("unsup_seeds", _parse_int_tuple),
    "experiment.split_seeds": ("split_seeds", _parse_int_tuple),
    "experiment.label_grid": ("label_grid", _parse_int_tuple),
    "experiment.classifiers": ("classifiers", _parse_str_tuple),
    "experiment.validation_size": ("validation_size", int),
    "experiment.base_seed": ("base_seed", int),
    "experiment.record_timing": ("record_timing", _parse_bool),
    "classifier.assoc_epochs": ("assoc_epochs", int),
    "classifier.gonogo_epochs": ("gonogo_epochs", int),
    "classifier.init": ("classifier_init", str.strip),
    "linear.epochs": ("linear_epochs", int),
    "linear.learning_rate": ("linear_learning_rate", float),
    "linear.beta1": ("linear_beta1", float),
    "linear.beta2": ("linear_beta2", float),
    "linear.delta": ("linear_delta", float),
    "linear.batch_size": ("linear_batch_size", int),
}

_FIELD_TO_KEY = {field: key for key, (field, _) in CONFIG_KEYS.items()}


def parse_assignment(text: str, origin: str) -> Tuple[str, object]:
    """Parse one ``key=value`` assignment into (field name, value)."""
    if "=" not in text:
        raise ConfigError(f"{origin}: expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    key = key.strip()
    if key not in CONFIG_KEYS:
        raise ConfigError(f"{origin}: unknown configuration key {key!r}")
    field_name, parser = CONFIG_KEYS[key]
    try:
        return field_name, parser(raw.strip())
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"{origin}: bad value for {key}: {exc}") from None


def read_config_file(path) -> Dict[str, object]:
    values: Dict[str, object] = {}
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            field_name, value = parse_assignment(stripped, f"{path}:{lineno}")
            values[field_name] = value
    return values


def build_config(config_path: Optional[str] = None,
                 overrides: Sequence[str] = (),
                 defaults: Optional[Dict[str, object]] = None) -> ExperimentConfig:
    """Resolve file values, then override assignments, into a config."""
    values = dict(defaults or {})
    if config_path:
        values.update(read_config_file(config_path))
    for text in overrides:
        field_name, value = parse_assignment(text, "override")
        values[field_name] = value
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def resolved_lines(config: ExperimentConfig) -> List[str]:
    """Dotted-key listing of the fully resolved configuration, for run logs."""
    lines = []
    for f in fields(config):
        key = _FIELD_TO_KEY.get(f.name, f.name)
        value = getattr(config, f.name)
        if isinstance(value, EncodingMode):
            value = value.value
        elif isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return sorted(lines)
