"""YAML run configurations.

A run file names one experiment and everything it needs.  Example::

    experiment: fit
    seed: 7
    domain: aral                 # built-in name or a domain file
    simulation: {n_paths: 20000, n_steps: 150, dt: 0.0004}
    window: {mode: fixed, fixed_w: 0.05}
    data: {path: builtin:aral, center: true}
    inducing: {grid: 42}         # or {file: points.csv}; omit for a dense fit
    predict: {grid: 600}
    output: results/aral

Relative paths are resolved against the directory of the config file.
``--set key.sub=value`` on the command line overrides any entry; the value
is parsed as YAML.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .bm_sim import SimConfig
from .errors import ConfigError
from .heat_kernel import WindowPolicy

EXPERIMENTS = ("fit", "table1", "table2", "benchmark")
_TOP_KEYS = {"experiment", "seed", "domain", "simulation", "window", "data", "inducing",
             "predict", "output", "workers", "cache_dir", "table1", "table2", "benchmark"}


@dataclass
class RunConfig:
    experiment: str
    seed: int
    domain: str = None
    sim: SimConfig = None
    window: WindowPolicy = field(default_factory=WindowPolicy)
    data: dict = field(default_factory=dict)
    inducing: tuple = None  # ("grid", m) or ("file", path)
    predict: dict = field(default_factory=dict)
    output: Path = Path("results")
    workers: int = 1
    cache_dir: Path = None
    params: dict = field(default_factory=dict)  # experiment-specific block
    source: Path = None


def apply_override(raw, assignment):
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like key.sub=value")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = raw
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {assignment!r}: {p!r} is not a section")
        node = nxt
    try:
        node[parts[-1]] = yaml.safe_load(value)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {assignment!r}: {exc}") from None


def _section(raw, name):
    v = raw.get(name) or {}
    if not isinstance(v, dict):
        raise ConfigError(f"'{name}' must be a mapping")
    return v


def _build(cls, kwargs, what):
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad '{what}' section: {exc}") from None


def parse_config(raw, base_dir=Path("."), source=None):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a YAML mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
    if "seed" not in raw:
        raise ConfigError("seed is mandatory")
    seed = raw["seed"]
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")

    def resolve(p):
        if p is None or str(p).startswith("builtin:"):
            return p
        p = Path(p)
        return p if p.is_absolute() else Path(os.path.normpath(base_dir / p))

    sim = None
    if "simulation" in raw:
        s = dict(_section(raw, "simulation"))
        s.setdefault("seed", seed)
        sim = _build(SimConfig, s, "simulation")
    window = _build(WindowPolicy, _section(raw, "window"), "window")

    inducing = None
    ind = _section(raw, "inducing")
    if ind:
        if set(ind) == {"grid"} and isinstance(ind["grid"], int) and ind["grid"] >= 1:
            inducing = ("grid", ind["grid"])
        elif set(ind) == {"file"}:
            inducing = ("file", resolve(ind["file"]))
        else:
            raise ConfigError("inducing must be {grid: m} or {file: path}")

    data = dict(_section(raw, "data"))
    if "path" in data:
        data["path"] = resolve(data["path"])
        if not str(data["path"]).startswith("builtin:") and not Path(data["path"]).exists():
            raise ConfigError(f"data file {data['path']} does not exist")
    predict = dict(_section(raw, "predict"))
    if "points" in predict:
        predict["points"] = resolve(predict["points"])

    domain = raw.get("domain")
    if domain is not None:
        p = Path(domain)
        if p.suffix:
            domain = str(resolve(domain))
            if not Path(domain).exists():
                raise ConfigError(f"domain file {domain} does not exist")
    if exp in ("fit", "benchmark") and sim is None:
        raise ConfigError(f"experiment {exp!r} needs a 'simulation' section")
    if exp == "fit" and (domain is None or "path" not in data):
        raise ConfigError("a fit needs 'domain' and 'data.path'")
    workers = raw.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers must be a positive integer")
    return RunConfig(
        experiment=exp, seed=seed, domain=domain, sim=sim, window=window, data=data,
        inducing=inducing, predict=predict, output=resolve(raw.get("output", "results")),
        workers=workers,
        cache_dir=resolve(raw["cache_dir"]) if raw.get("cache_dir") else None,
        params=_section(raw, exp) if exp in ("table1", "table2", "benchmark") else {},
        source=source,
    )


def load_config(path, overrides=()):
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    raw = raw or {}
    for o in overrides:
        apply_override(raw, o)
    return parse_config(raw, path.parent, path)
