"""Missing-modality multimodal classification on synthetic token data."""

import json

from ._core import (
    ConfigError,
    DataError,
    Error,
    InputError,
    MetricError,
    PatternError,
    auroc,
    effective_config,
    f1_macro,
    generate_dataset,
    late_fusion,
    pattern_from_rates,
    read_only_mask,
    report,
    subset_sizes,
    vicreg,
)
from ._core import run_experiment as _run_experiment

__all__ = [
    "ConfigError",
    "DataError",
    "Error",
    "InputError",
    "MetricError",
    "PatternError",
    "auroc",
    "effective_config",
    "f1_macro",
    "generate_dataset",
    "late_fusion",
    "pattern_from_rates",
    "read_only_mask",
    "report",
    "run_experiment",
    "subset_sizes",
    "vicreg",
]


def run_experiment(config=None, overrides=(), out=None):
    """Run an experiment. `config` is a dict or JSON text of dotted keys."""
    if config is None:
        config = {}
    text = config if isinstance(config, str) else json.dumps(config)
    return _run_experiment(text, list(overrides), None if out is None else str(out))
