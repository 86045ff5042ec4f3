"""Line-oriented ``key = value`` pipeline configuration.

Keys are dotted (``train.lr = 0.001``); ``#`` starts a comment. Values are
parsed per key and a bad key or value raises :class:`ConfigError` naming it.
Per-layer budgets use ``budget.k1``, ``budget.k2``, ... and default to 25.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .errors import ConfigError
from .sampling import SAMPLERS

DEFAULT_BUDGET = 25
_BUDGET_KEY = re.compile(r"^budget\.k([1-9][0-9]*)$")


def _int(lo=None):
    def conv(text):
        value = int(text)
        if lo is not None and value < lo:
            raise ValueError(f"must be >= {lo}")
        return value
    return conv


def _float(lo=None):
    def conv(text):
        value = float(text)
        if value != value or (lo is not None and value < lo):
            raise ValueError(f"must be a number >= {lo}")
        return value
    return conv


def _fraction(text):
    value = float(text)
    if not 0.0 < value < 1.0:
        raise ValueError("must lie strictly between 0 and 1")
    return value


def _optional(conv):
    def wrapped(text):
        return None if text.strip().lower() in ("", "none", "auto") else conv(text)
    return wrapped


def _list(conv, n=None):
    def parse(text):
        items = [conv(x) for x in re.split(r"[,\s]+", text.strip()) if x]
        if not items or (n is not None and len(items) != n):
            raise ValueError(f"expected {n or 'one or more'} values")
        return tuple(items)
    return parse


def _sampler(text):
    if text not in SAMPLERS:
        raise ValueError(f"unknown sampler {text!r}; expected one of {', '.join(SAMPLERS)}")
    return text


def _ratios(text):
    ratios = _list(_float(0.0), 3)(text)
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    return ratios


def _path(text):
    return text or None


# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "paths.interactions": (_path, None),
    "paths.workdir": (_path, "flatrec-run"),
    "paths.embeddings": (_path, None),
    "paths.reprs": (_path, None),
    "paths.model": (_path, None),
    "paths.reports": (_path, None),
    "seed": (_int(0), 0),
    "workers": (_int(1), 1),
    "split.ratios": (_ratios, (0.65, 0.15, 0.20)),
    "graph.k": (_int(1), 2),
    "sampler": (_sampler, "infomax"),
    "walk.count": (_int(1), 1000),
    "walk.length": (_optional(_int(1)), None),
    "pretrain.dim": (_int(1), 64),
    "pretrain.epochs": (_int(0), 40),
    "pretrain.lr": (_float(0.0), 0.05),
    "pretrain.reg": (_float(0.0), 1e-4),
    "pretrain.batch_size": (_int(1), 256),
    "train.lr": (_float(0.0), 0.001),
    "train.l2": (_float(0.0), 1e-5),
    "train.epochs": (_int(1), 1000),
    "train.batch_size": (_int(1), 256),
    "train.negatives": (_int(1), 1),
    "train.patience": (_int(1), 40),
    "train.val_fraction": (_fraction, 0.1),
    "train.hidden": (_list(_int(1)), (64, 32)),
    "eval.k": (_int(1), 20),
    "bench.samplers": (_list(_sampler), SAMPLERS),
    "bench.seeds": (_list(_int(0)), (0, 1, 2)),
}


def parse_value(key: str, text: str):
    """Convert the raw text of ``key`` to its typed value."""
    if _BUDGET_KEY.match(key):
        conv = _int(1)
    elif key in SCHEMA:
        conv = SCHEMA[key][0]
    else:
        raise ConfigError(key, "unknown key")
    try:
        return conv(text.strip())
    except ValueError as exc:
        raise ConfigError(key, f"bad value {text.strip()!r} ({exc})") from None


def parse_config_lines(lines: Iterable[str], source: str = "config") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}", f"expected 'key = value', got {line!r}")
        key, text = (part.strip() for part in line.split("=", 1))
        values[key] = parse_value(key, text)
    return values


def parse_assignment(text: str) -> tuple[str, Any]:
    """``key=value`` from a command-line override."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, value = (part.strip() for part in text.split("=", 1))
    return key, parse_value(key, value)


@dataclass
class PipelineConfig:
    """Effective configuration: defaults, then file values, then overrides."""

    values: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def build(cls, path=None, overrides: Mapping[str, Any] | None = None) -> "PipelineConfig":
        values = {key: default for key, (_, default) in SCHEMA.items()}
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError("--config", f"file not found: {p}")
            with open(p, encoding="utf-8") as fh:
                values.update(parse_config_lines(fh, str(p)))
        values.update(overrides or {})
        return cls(values)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def K(self) -> int:
        return self.values["graph.k"]

    def budgets(self) -> tuple[int, ...]:
        """Budgets for layers ``1..K``; entries for deeper layers are ignored."""
        return tuple(self.values.get(f"budget.k{k}", DEFAULT_BUDGET) for k in range(1, self.K + 1))

    def effective(self) -> dict[str, Any]:
        """Every key with its merged value, budgets expanded, JSON-friendly."""
        out = {k: list(v) if isinstance(v, tuple) else v
               for k, v in self.values.items() if not _BUDGET_KEY.match(k)}
        for k, b in enumerate(self.budgets(), start=1):
            out[f"budget.k{k}"] = b
        return dict(sorted(out.items()))
