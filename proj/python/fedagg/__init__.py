"""Python bindings for the fedagg simulator."""

import json as _json

from ._fedagg import (
    BottleneckConstraintError,
    ConfigError,
    DataError,
    DimensionError,
    FedaggError,
    IoError,
    ProtocolError,
    TopologyError,
    can_migrate,
    compare,
    dirichlet_label_tv,
    distillation_loss,
    generate_synthetic,
    softmax,
)
from ._fedagg import config_hash as _config_hash
from ._fedagg import parse_config as _parse_config
from ._fedagg import run as _run


def _text(config):
    return config if isinstance(config, str) else _json.dumps(config)


def parse_config(config):
    """Validate a config given as a dict or JSON text; return the resolved dict."""
    return _json.loads(_parse_config(_text(config)))


def config_hash(config):
    """Hash of the resolved config, independent of seed and output_dir."""
    return _config_hash(_text(config))


def run(config, seed=None, output_dir=None):
    """Run one experiment; returns metrics_path, rows and privacy_violations."""
    return _run(_text(config), seed, None if output_dir is None else str(output_dir))


__all__ = [
    "BottleneckConstraintError",
    "ConfigError",
    "DataError",
    "DimensionError",
    "FedaggError",
    "IoError",
    "ProtocolError",
    "TopologyError",
    "can_migrate",
    "compare",
    "config_hash",
    "dirichlet_label_tv",
    "distillation_loss",
    "generate_synthetic",
    "parse_config",
    "run",
    "softmax",
]
