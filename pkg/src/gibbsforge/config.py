"""Experiment configuration: dataclass tree, TOML loading with includes, validation.

A config file may list other files under a top-level ``include`` key.
Included files are merged first (in order) and the including file's
tables override them key by key, so shared lattice or coupling blocks
live in one place.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .spinmodel import CouplingParams

MODES = ("sector-exact", "circuit")
NOISE_KINDS = ("haar", "phase_flip", "pauli", "none")
SWEEP_AXES = ("frequency", "n_noisy_sites", "L", "J_perp", "probability")
REFERENCE_MODES = ("exact", "local")


class ConfigError(ValueError):
    """Raised for schema violations; the message names the offending key."""


@dataclass
class LatticeConfig:
    L: int = 24
    p: int = 3


@dataclass
class CouplingConfig:
    J: float = 1.0
    J_perp: float = 1.0
    J_prime: float = 0.5
    J_prime_perp: float = 0.5

    def params(self) -> CouplingParams:
        return CouplingParams(self.J, self.J_perp, self.J_prime, self.J_prime_perp)


@dataclass
class ScheduleConfig:
    t_max: float = 20.0
    n_steps: int = 50
    shock_steps: list[int] = field(default_factory=lambda: [2])
    # cascades: when n_shocks > 1, shocks are spread evenly from the first shock step
    n_shocks: int = 1


@dataclass
class NoiseConfig:
    kind: str = "haar"
    probability: float = 0.5
    n_sites: int = 3
    # explicit noisy sites; empty means draw n_sites per seed from the placement window
    sites: list[int] = field(default_factory=list)
    # the window holds the `window` sites closest to the initial excitation
    window: int = 6
    pauli_strings: list[str] = field(default_factory=list)
    pauli_sites: list[int] = field(default_factory=list)
    pauli_probs: list[float] = field(default_factory=list)


@dataclass
class SubsetConfig:
    # empty lists resolve to the last three sites of the chain
    initial: list[int] = field(default_factory=list)
    test: list[int] = field(default_factory=list)
    # named noisy subsets for mutual-information runs, e.g. {"N1": [0, 1, 2]}
    noisy: dict[str, list[int]] = field(default_factory=dict)


@dataclass
class FitConfig:
    metric: str = "trace_dist"
    t_lo: float | None = None
    t_hi: float | None = None
    reference: str = "exact"


@dataclass
class CircuitConfig:
    n_qubits: int = 12
    noise_p: float = 0.01
    n_traj: int = 500
    t_max: float = 20.0
    n_steps: int = 0  # 0 picks a step count accurate to 1e-4 infidelity for the chosen order
    record_every: int = 0  # 0 records about 80 evenly spaced steps
    order: int = 2
    initial: list[int] = field(default_factory=lambda: [0, 1, 2])
    test: list[int] = field(default_factory=list)
    batch: int = 64


@dataclass
class SweepConfig:
    axis: str = "frequency"
    grid: list[float] = field(default_factory=list)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    mode: str = "sector-exact"
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    couplings: CouplingConfig = field(default_factory=CouplingConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    subsets: SubsetConfig = field(default_factory=SubsetConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    circuit: CircuitConfig = field(default_factory=CircuitConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    metrics: list[str] = field(default_factory=lambda: ["trace_dist"])
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    master_seed: int = 0
    plot_log: bool = False

    # resolved helpers -----------------------------------------------------

    def initial_sites(self) -> list[int]:
        return self.subsets.initial or last_three(self.lattice.L)

    def test_sites(self) -> list[int]:
        return self.subsets.test or last_three(self.lattice.L)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        """Deep copy with dotted-key overrides, e.g. ``replace(**{"lattice.L": 16})``."""
        new = copy.deepcopy(self)
        for key, value in changes.items():
            target = new
            *path, leaf = key.split(".")
            for part in path:
                target = getattr(target, part)
            if not hasattr(target, leaf):
                raise ConfigError(f"unknown key {key!r}")
            setattr(target, leaf, value)
        validate(new)
        return new


def last_three(L: int) -> list[int]:
    return [L - 3, L - 2, L - 1]


# loading ------------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def read_tree(path: str | Path, _seen: tuple[Path, ...] = ()) -> dict:
    """Parse a TOML file and resolve its ``include`` list relative to the file."""
    path = Path(path).resolve()
    if path in _seen:
        raise ConfigError(f"include cycle through {path}")
    try:
        with open(path, "rb") as fh:
            tree = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    includes = tree.pop("include", [])
    if isinstance(includes, str):
        includes = [includes]
    merged: dict = {}
    for inc in includes:
        merged = _merge(merged, read_tree(path.parent / inc, _seen + (path,)))
    return _merge(merged, tree)


def _build(cls, tree: dict, where: str):
    if not isinstance(tree, dict):
        raise ConfigError(f"{where or 'config'} must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = set(tree) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    defaults = cls()
    for name, value in tree.items():
        current = getattr(defaults, name)
        key = f"{where}.{name}" if where else name
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, key)
        else:
            kwargs[name] = _coerce(current, value, key)
    return cls(**kwargs)


def _coerce(default, value, key):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float) or (default is None and isinstance(value, (int, float))):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be an array")
        return list(value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{key} must be a table")
        return {str(k): list(v) for k, v in value.items()}
    return value


def from_tree(tree: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, tree, "")
    validate(cfg)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    return from_tree(read_tree(path))


# validation ---------------------------------------------------------------


def _sites_ok(sites, L, key):
    if len(set(sites)) != len(sites):
        raise ConfigError(f"{key} has duplicate sites")
    if any(not isinstance(s, int) or not 0 <= s < L for s in sites):
        raise ConfigError(f"{key} sites must be integers in [0, {L - 1}]")


def validate(cfg: ExperimentConfig) -> None:
    L, p = cfg.lattice.L, cfg.lattice.p
    if L < 2:
        raise ConfigError("lattice.L must be at least 2")
    if not 0 <= p <= L:
        raise ConfigError(f"lattice.p={p} must satisfy 0 <= p <= L={L}")
    if cfg.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    s = cfg.schedule
    if not s.t_max > 0:
        raise ConfigError("schedule.t_max must be positive")
    if s.n_steps < 2:
        raise ConfigError("schedule.n_steps must be at least 2")
    if s.n_shocks < 1:
        raise ConfigError("schedule.n_shocks must be at least 1")
    if any(not 0 <= k < s.n_steps for k in s.shock_steps):
        raise ConfigError("schedule.shock_steps out of range")
    n = cfg.noise
    if n.kind not in NOISE_KINDS:
        raise ConfigError(f"noise.kind must be one of {NOISE_KINDS}")
    if not 0 <= n.probability <= 1:
        raise ConfigError("noise.probability must lie in [0, 1]")
    if not 1 <= n.n_sites <= min(L, 6):
        raise ConfigError("noise.n_sites must lie in [1, min(L, 6)]")
    if n.window < n.n_sites or n.window > L:
        raise ConfigError("noise.window must lie in [n_sites, L]")
    _sites_ok(n.sites, L, "noise.sites")
    for key, sites in (("subsets.initial", cfg.subsets.initial), ("subsets.test", cfg.subsets.test)):
        _sites_ok(sites, L, key)
    if cfg.subsets.initial and len(cfg.subsets.initial) != p:
        raise ConfigError("subsets.initial must list exactly p sites")
    for name, sites in cfg.subsets.noisy.items():
        _sites_ok(sites, L, f"subsets.noisy.{name}")
    if cfg.fit.reference not in REFERENCE_MODES:
        raise ConfigError(f"fit.reference must be one of {REFERENCE_MODES}")
    from .metrology import METRICS

    for m in list(cfg.metrics) + [cfg.fit.metric]:
        if m not in METRICS:
            raise ConfigError(f"unknown metric {m!r}; choose from {METRICS}")
    if not cfg.seeds:
        raise ConfigError("seeds must not be empty")
    c = cfg.circuit
    if c.n_qubits < 2:
        raise ConfigError("circuit.n_qubits must be at least 2")
    if not 0 <= c.noise_p <= 1:
        raise ConfigError("circuit.noise_p must lie in [0, 1]")
    if c.n_traj < 1 or c.batch < 1:
        raise ConfigError("circuit.n_traj and circuit.batch must be positive")
    if c.record_every < 0 or c.n_steps < 0:
        raise ConfigError("circuit.record_every and circuit.n_steps must be non-negative")
    if c.order not in (1, 2):
        raise ConfigError("circuit.order must be 1 or 2")
    _sites_ok(c.initial, c.n_qubits, "circuit.initial")
    _sites_ok(c.test, c.n_qubits, "circuit.test")
    if cfg.sweep.axis not in SWEEP_AXES:
        raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}")
