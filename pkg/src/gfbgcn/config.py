"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored.  Unknown keys are rejected.
Defaults are the TrainConfig defaults plus empty paths.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

from .train import TrainConfig

PATH_KEYS = ("corpus", "stopwords", "graph", "checkpoint", "metrics")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: dict[str, str | None] = field(default_factory=lambda: dict.fromkeys(PATH_KEYS))


def _coerce(name: str, raw: str, typ):
    try:
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {typ}") from None


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key] = val
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = str(v)
    train_fields = {f.name: f.type for f in fields(TrainConfig)}
    unknown = sorted(set(values) - set(train_fields) - set(PATH_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {k: _coerce(k, v, train_fields[k]) for k, v in values.items() if k in train_fields}
    try:
        train = TrainConfig(**kwargs)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    paths = dict.fromkeys(PATH_KEYS)
    paths.update({k: v for k, v in values.items() if k in PATH_KEYS})
    return RunConfig(train, paths)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    text = ""
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_config(text, overrides)


def dump_config(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg.train, f.name)}" for f in fields(TrainConfig)]
    lines += [f"{k} = {v}" for k, v in cfg.paths.items() if v is not None]
    return "\n".join(lines) + "\n"
