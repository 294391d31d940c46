"""``key = value`` training configuration files.

Keys mirror :class:`TrainConfig`; loss weights are given flat as
``alpha1`` .. ``alpha4`` and ``lambda``. ``crop`` accepts ``128``,
``128x128`` or ``128, 128``. Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import re
from dataclasses import replace
from pathlib import Path

from .errors import DataError
from .loss import LossWeights
from .trainer import TrainConfig

_INT_KEYS = {"epochs", "batch_size", "lr_decay_every", "seed"}
_FLOAT_KEYS = {"lr0", "lr_decay_factor"}
_WEIGHT_KEYS = {"alpha1": "alpha1", "alpha2": "alpha2", "alpha3": "alpha3", "alpha4": "alpha4", "lambda": "lam"}


def parse_config(text, base: TrainConfig | None = None, source="<config>") -> TrainConfig:
    config = base or TrainConfig()
    updates, weights = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key:
            raise DataError(f"{source}:{lineno}: expected 'key = value'")
        if key not in _INT_KEYS | _FLOAT_KEYS | set(_WEIGHT_KEYS) | {"crop"}:
            raise DataError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            if key in _INT_KEYS:
                updates[key] = int(value)
            elif key in _FLOAT_KEYS:
                updates[key] = float(value)
            elif key in _WEIGHT_KEYS:
                weights[_WEIGHT_KEYS[key]] = float(value)
            else:
                dims = [int(v) for v in re.split(r"[x,\s]+", value) if v]
                if len(dims) == 1:
                    dims *= 2
                if len(dims) != 2:
                    raise ValueError(value)
                updates[key] = tuple(dims)
        except ValueError:
            raise DataError(f"{source}:{lineno}: bad value for {key}: {value!r}") from None
    try:
        if weights:
            updates["loss_weights"] = replace(config.loss_weights, **weights)
        return replace(config, **updates)
    except ValueError as exc:
        raise DataError(f"{source}: {exc}") from None


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, base, str(path))


def format_config(config: TrainConfig) -> str:
    w = config.loss_weights
    lines = [
        f"epochs = {config.epochs}",
        f"batch_size = {config.batch_size}",
        f"lr0 = {config.lr0!r}",
        f"lr_decay_factor = {config.lr_decay_factor!r}",
        f"lr_decay_every = {config.lr_decay_every}",
        f"seed = {config.seed}",
        f"crop = {config.crop[0]}x{config.crop[1]}",
        f"alpha1 = {w.alpha1!r}",
        f"alpha2 = {w.alpha2!r}",
        f"alpha3 = {w.alpha3!r}",
        f"alpha4 = {w.alpha4!r}",
        f"lambda = {w.lam!r}",
    ]
    return "\n".join(lines) + "\n"
