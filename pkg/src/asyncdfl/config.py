"""Run and suite configuration, stored as YAML.

Omitted keys take the defaults below; the wireless defaults follow the
usual single-cell IoT link budget (500 m cell, path-loss exponent 4,
10 MHz, 30 dBm, -174 dBm/Hz, 16-bit quantisation).
"""
from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .wireless import WirelessConfig

ALGORITHMS = ("AsyncDFL", "FedAvg", "FedAvgPartial", "FedSemiAsync", "UniformBW", "RandomBW")
CENTRALISED = ("FedAvg", "FedAvgPartial", "FedSemiAsync")
CHANNELS = ("ideal", "fixed", "random", "wireless")
LOSS_KINDS = ("quadratic", "logistic", "mlp")

# learning rate used for classification tasks when none is configured
DEFAULT_CLASSIFIER_ETA = 0.016
ETA_RULES = ("window", "smoothness")


@dataclass(frozen=True)
class TaskConfig:
    loss_kind: str = "quadratic"
    dim: int = 2
    total_samples: int = 600
    partition: str = "iid"
    curvature: float = 1.0
    curvature_spread: float = 0.0
    common_minimizer: bool = False
    spread: float = 1.0
    noise: float = 1.0
    classes: int = 3
    hidden: int = 32
    regularizer: str = "l2"
    bound: float = 1e6
    test_fraction: float = 0.25
    csv_path: str | None = None
    idx_images: str | None = None
    idx_labels: str | None = None


@dataclass(frozen=True)
class Constants:
    L1: float
    L2: float
    L3: float
    delta: float


@dataclass(frozen=True)
class SimConfig:
    """One simulation.

    ``eta`` fixes the learning rate. When it is omitted, ``eta_rule``
    picks it: ``window`` takes the midpoint of the admissible window from
    estimated constants (0.016 if that window is empty) and
    ``smoothness`` takes ``node_count / L`` with ``L`` the closed-form
    smoothness bound of the global loss.
    """

    name: str = "run"
    algorithm: str = "AsyncDFL"
    node_count: int = 5
    iterations: int = 1000
    seed: int = 0
    eta: float | None = None
    eta_rule: str = "window"
    gamma_max: int = 5
    observe_gamma: bool = False
    strict_eta: bool = False
    channel: str = "fixed"
    stop_epsilon: float = 0.0
    init_scale: float = 1.0
    common_init: bool = True
    participation: float = 0.5
    semi_async_k: int | None = None
    constants: Constants | None = None
    task: TaskConfig = field(default_factory=TaskConfig)
    wireless: WirelessConfig = field(default_factory=WirelessConfig)

    @property
    def gamma_db(self) -> float:
        return self.wireless.gamma_db

    def validate(self) -> "SimConfig":
        errs = []
        if self.algorithm not in ALGORITHMS:
            errs.append(f"algorithm: unknown {self.algorithm!r} (expected one of {list(ALGORITHMS)})")
        minimum = 1 if self.algorithm in CENTRALISED else 2
        if self.node_count < minimum:
            errs.append(f"node_count: {self.algorithm} needs at least {minimum} nodes, got {self.node_count}")
        if self.iterations <= 0:
            errs.append("iterations: must be positive")
        if self.eta is not None and not self.eta > 0:
            errs.append("eta: must be positive")
        if self.eta_rule not in ETA_RULES:
            errs.append(f"eta_rule: unknown {self.eta_rule!r} (expected one of {list(ETA_RULES)})")
        if self.gamma_max < 0:
            errs.append("gamma_max: must be non-negative")
        if self.channel not in CHANNELS:
            errs.append(f"channel: unknown {self.channel!r} (expected one of {list(CHANNELS)})")
        if not 0 < self.participation <= 1:
            errs.append("participation: must lie in (0, 1]")
        if self.semi_async_k is not None and not 1 <= self.semi_async_k <= self.node_count:
            errs.append("semi_async_k: must lie between 1 and node_count")
        t = self.task
        if t.loss_kind not in LOSS_KINDS:
            errs.append(f"task.loss_kind: unknown {t.loss_kind!r}")
        if t.partition not in ("iid", "label_sharded"):
            errs.append(f"task.partition: unknown {t.partition!r}")
        if t.regularizer not in ("l1", "l2"):
            errs.append(f"task.regularizer: unknown {t.regularizer!r}")
        if t.bound <= 0:
            errs.append("task.bound: must be positive")
        if t.dim < 1:
            errs.append("task.dim: must be positive")
        if t.total_samples < self.node_count:
            errs.append("task.total_samples: fewer samples than nodes")
        w = self.wireless
        if w.cell_radius_m <= 0:
            errs.append("wireless.cell_radius_m: must be positive")
        if w.path_loss_exponent <= 2:
            errs.append("wireless.path_loss_exponent: must exceed 2")
        if w.bandwidth_hz <= 0:
            errs.append("wireless.bandwidth_hz: must be positive")
        if w.training_latency_s <= 0:
            errs.append("wireless.training_latency_s: must be positive")
        if w.w0_slots < 0:
            errs.append("wireless.w0_slots: must be non-negative")
        if errs:
            raise ConfigError("; ".join(errs))
        return self


@dataclass(frozen=True)
class ExperimentSuite:
    """A base run plus sweeps over dotted field paths.

    Every point of the cartesian product of ``sweeps`` is run
    ``replications`` times with seeds ``base.seed + r``.
    """

    name: str = "suite"
    base: SimConfig = field(default_factory=SimConfig)
    sweeps: dict = field(default_factory=dict)
    replications: int = 1
    out_dir: str = "out"

    def points(self) -> list[tuple[dict, list[SimConfig]]]:
        keys = list(self.sweeps)
        out = []
        for combo in itertools.product(*(self.sweeps[k] for k in keys)):
            assignment = dict(zip(keys, combo))
            cfg = self.base
            for k, v in assignment.items():
                cfg = set_path(cfg, k, v)
            runs = [dataclasses.replace(cfg, seed=self.base.seed + r).validate()
                    for r in range(self.replications)]
            out.append((assignment, runs))
        return out

    def validate(self) -> "ExperimentSuite":
        if self.replications < 1:
            raise ConfigError("replications: must be at least 1")
        for k, vals in self.sweeps.items():
            if not isinstance(vals, list) or not vals:
                raise ConfigError(f"sweeps.{k}: expected a non-empty list")
        self.points()
        return self


# --------------------------------------------------------------------------
# dict <-> dataclass

def _build(cls, data: Any, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        where = path or "<root>"
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls, name))
        here = f"{path}.{name}" if path else name
        if sub is not None:
            if value is None and name == "constants":
                kwargs[name] = None
                continue
            kwargs[name] = _build(sub, value, here)
        else:
            kwargs[name] = _coerce(cls, name, value, here)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or '<root>'}: {exc}") from None


_NESTED = {
    (SimConfig, "task"): TaskConfig,
    (SimConfig, "wireless"): WirelessConfig,
    (SimConfig, "constants"): Constants,
}

_NUMERIC = {"float": float, "int": int}


def _coerce(cls, name, value, path):
    ftype = {f.name: f.type for f in dataclasses.fields(cls)}[name]
    base = ftype.split("|")[0].strip() if isinstance(ftype, str) else getattr(ftype, "__name__", "")
    if value is None:
        if "None" in str(ftype):
            return None
        raise ConfigError(f"{path}: may not be null")
    if base == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if base in _NUMERIC:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        if base == "int" and float(value) != int(value):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return _NUMERIC[base](value)
    if base == "str" and not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def sim_from_dict(data: dict, path: str = "") -> SimConfig:
    return _build(SimConfig, data, path).validate()


def suite_from_dict(data: dict) -> ExperimentSuite:
    data = dict(data)
    base = sim_from_dict(data.pop("base", {}) or {}, "base")
    built = _build(ExperimentSuite, data, "")
    return dataclasses.replace(built, base=base).validate()


def to_dict(obj) -> dict:
    return dataclasses.asdict(obj)


def load_config(path: str | Path):
    """Parse a YAML file into a :class:`SimConfig` or :class:`ExperimentSuite`.

    A document with a top-level ``base`` or ``sweeps`` key is a suite.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such file")
    data = yaml.safe_load(path.read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if "base" in data or "sweeps" in data:
        return suite_from_dict(data)
    return sim_from_dict(data)


def dump_config(cfg, path: str | Path | None = None) -> str:
    text = yaml.safe_dump(to_dict(cfg), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


def set_path(cfg, dotted: str, value):
    """Functional update of a nested field given as ``"a.b.c"``."""
    head, _, rest = dotted.partition(".")
    names = {f.name for f in dataclasses.fields(cfg)}
    if head not in names:
        raise ConfigError(f"{dotted}: unknown field {head!r}")
    if rest:
        return dataclasses.replace(cfg, **{head: set_path(getattr(cfg, head), rest, value)})
    return dataclasses.replace(cfg, **{head: _coerce(type(cfg), head, value, dotted)})
