"""INI-style run configuration (``key = value`` in sections).

Recognised sections::

    [data]      manifest = path/to/manifest.json
    [backbone]  kind, kernel_size, stride, feature_dim, width
    [train]     epochs, batch_size, weight_decay, betas = 0.5, 0.99
    [hparams]   learning_rate, <loss weights>
    [sweep]     n_combos, seeds = 1, 2, 3, selection, fewshot_per_class
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ArgumentError

_INT_KEYS = {"kernel_size", "stride", "feature_dim", "width", "epochs", "batch_size",
             "n_combos", "fewshot_per_class", "disc_hidden", "hparam_seed"}


def _value(key, raw):
    raw = raw.strip()
    if key in ("betas", "seeds"):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return [int(p) for p in parts] if key == "seeds" else [float(p) for p in parts]
    if key in _INT_KEYS:
        return int(raw)
    try:
        return float(raw)
    except ValueError:
        return raw


@dataclass
class RunConfig:
    data: dict = field(default_factory=dict)
    backbone: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    hparams: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)


def load_config(path) -> RunConfig:
    path = Path(path)
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ArgumentError(f"cannot read config {path}: {exc}") from None
    cfg = RunConfig()
    for section in parser.sections():
        if not hasattr(cfg, section):
            raise ArgumentError(f"unknown config section [{section}]")
        target = getattr(cfg, section)
        for key, raw in parser.items(section):
            try:
                target[key] = _value(key, raw)
            except ValueError:
                raise ArgumentError(f"[{section}] {key}: cannot parse {raw!r}") from None
    manifest = cfg.data.get("manifest")
    if manifest and not Path(manifest).is_absolute():
        cfg.data["manifest"] = str((path.parent / manifest).resolve())
    return cfg
