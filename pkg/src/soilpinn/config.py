"""Experiment configuration: YAML schema, validation, and overrides.

One file describes the whole experiment. Unknown sections or keys are
rejected with their path so typos cannot silently fall back to defaults,
and every random seed must be stated explicitly in the file: no run is
reproducible by accident. Values may be overridden from the command line
with dotted paths (``training.iterations=500``).

All lengths are meters, times hours, conductivities meters per hour.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .constitutive import VanGenuchten
from .dataset import NoiseConfig
from .grid import BoundarySpec, Grid3D

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config",
           "apply_overrides", "RUN_NAMES"]

OPTIMIZERS = ("gd", "rmsprop", "adam")
REGIMES = ("mini", "full")
RUN_NAMES = tuple(f"{o}-{r}" for o in OPTIMIZERS for r in REGIMES)


class ConfigError(ValueError):
    """Invalid configuration file or override."""


@dataclass(frozen=True)
class Scenario:
    psi_initial: float
    psi_top: float
    psi_bottom: float
    t_end: float
    n_steps: int
    n_save: int

    def boundary(self):
        return BoundarySpec.infiltration(top=self.psi_top,
                                         bottom=self.psi_bottom)


@dataclass(frozen=True)
class SensorPlan:
    n_xy: int
    n_depths: int
    seed: int


@dataclass(frozen=True)
class CollocationPlan:
    n_f: int
    seed: int


@dataclass(frozen=True)
class NetworkPlan:
    hidden_layers: int
    hidden_width: int
    seed: int


@dataclass(frozen=True)
class PlateauStop:
    enabled: bool
    window: int
    tol: float


@dataclass(frozen=True)
class TrainingPlan:
    runs: tuple
    iterations: int
    epochs: int
    batch_size: int
    batch_seed: int
    learning_rates: dict
    loss_weights: tuple
    plateau: PlateauStop
    chunk: int
    eval_cadence: int
    mini_collocation: str


@dataclass(frozen=True)
class ExperimentConfig:
    grid: Grid3D
    soil: VanGenuchten
    scenario: Scenario
    sensors: SensorPlan
    noise: NoiseConfig
    collocation: CollocationPlan
    network: NetworkPlan
    training: TrainingPlan


_REQUIRED = object()

# schema: section -> key -> (type tag, default). Seeds have no default:
# they must appear in the file.
_SCHEMA = {
    "grid": {"nx": ("int", 20), "ny": ("int", 20), "nz": ("int", 10),
             "lx": ("float", 0.4), "ly": ("float", 0.4),
             "lz": ("float", 0.2)},
    "soil": {"theta_r": ("float", 0.102), "theta_s": ("float", 0.368),
             "alpha": ("float", 3.35), "n": ("float", 2.0),
             "k_s": ("float", 0.33192)},
    "scenario": {"psi_initial": ("float", -1.0), "psi_top": ("float", -0.4),
                 "psi_bottom": ("float", -1.0), "t_end": ("float", 0.9),
                 "n_steps": ("int", 300), "n_save": ("int", 30)},
    "sensors": {"n_xy": ("int", 15), "n_depths": ("int", 5),
                "seed": ("int", _REQUIRED)},
    "noise": {"sigma": ("float", 0.005),
              "scale": ("str", "normalized"),
              "seed": ("int", _REQUIRED)},
    "collocation": {"n_f": ("int", 10000), "seed": ("int", _REQUIRED)},
    "network": {"hidden_layers": ("int", 5), "hidden_width": ("int", 10),
                "seed": ("int", _REQUIRED)},
    "training": {
        "runs": ("runs", tuple(RUN_NAMES)),
        "iterations": ("int", 10000),
        "epochs": ("int", 40),
        "batch_size": ("int", 128),
        "batch_seed": ("int", _REQUIRED),
        "learning_rates": ("rates", {"gd": 1e-2, "rmsprop": 1e-3,
                                     "adam": 1e-3}),
        "loss_weights": ("pair", (1.0, 1.0)),
        "plateau_enabled": ("bool", True),
        "plateau_window": ("int", 500),
        "plateau_tol": ("float", 1e-6),
        "chunk": ("int", 1000),
        "eval_cadence": ("int", 1000),
        "mini_collocation": ("str", "proportional"),
    },
}


def _coerce(tag, value, path):
    if tag == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tag == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tag == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tag == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if tag == "pair":
        if (not isinstance(value, (list, tuple)) or len(value) != 2
                or any(isinstance(v, bool) or not isinstance(v, (int, float))
                       for v in value)):
            raise ConfigError(f"{path}: expected two numbers, got {value!r}")
        return (float(value[0]), float(value[1]))
    if tag == "runs":
        if isinstance(value, str):
            value = [value]
        if not isinstance(value, (list, tuple)) or not value:
            raise ConfigError(f"{path}: expected a list of run names")
        out = []
        for v in value:
            if v not in RUN_NAMES:
                raise ConfigError(
                    f"{path}: unknown run {v!r}; valid names: "
                    + ", ".join(RUN_NAMES))
            if v not in out:
                out.append(v)
        return tuple(out)
    if tag == "rates":
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping of "
                              "optimizer -> learning rate")
        out = dict(_SCHEMA["training"]["learning_rates"][1])
        for k, v in value.items():
            if k not in OPTIMIZERS:
                raise ConfigError(f"{path}.{k}: unknown optimizer")
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{path}.{k}: expected a number")
            out[k] = float(v)
        return out
    raise AssertionError(tag)


def parse_config(raw):
    """Validate a raw mapping (already parsed YAML) into an
    ExperimentConfig. Unknown keys and missing seeds are errors."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping of sections")
    for section in raw:
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section {section!r}; valid sections: "
                              + ", ".join(_SCHEMA))
        if not isinstance(raw[section], dict):
            raise ConfigError(f"{section}: expected a mapping")
        for key in raw[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(
                    f"{section}.{key}: unknown key; valid keys: "
                    + ", ".join(_SCHEMA[section]))

    values = {}
    for section, keys in _SCHEMA.items():
        sec_raw = raw.get(section, {})
        sec_out = {}
        for key, (tag, default) in keys.items():
            if key in sec_raw:
                sec_out[key] = _coerce(tag, sec_raw[key], f"{section}.{key}")
            elif default is _REQUIRED:
                raise ConfigError(
                    f"{section}.{key} is required (seeds must be stated "
                    "explicitly so every run is reproducible)")
            else:
                sec_out[key] = default if not isinstance(default, dict) \
                    else dict(default)
        values[section] = sec_out

    t = values["training"]
    try:
        return ExperimentConfig(
            grid=Grid3D(**values["grid"]),
            soil=VanGenuchten(**values["soil"]),
            scenario=Scenario(**values["scenario"]),
            sensors=SensorPlan(**values["sensors"]),
            noise=NoiseConfig(**values["noise"]),
            collocation=CollocationPlan(**values["collocation"]),
            network=NetworkPlan(**values["network"]),
            training=TrainingPlan(
                runs=t["runs"], iterations=t["iterations"],
                epochs=t["epochs"], batch_size=t["batch_size"],
                batch_seed=t["batch_seed"],
                learning_rates=t["learning_rates"],
                loss_weights=t["loss_weights"],
                plateau=PlateauStop(enabled=t["plateau_enabled"],
                                    window=t["plateau_window"],
                                    tol=t["plateau_tol"]),
                chunk=t["chunk"], eval_cadence=t["eval_cadence"],
                mini_collocation=t["mini_collocation"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, overrides=()):
    """Parse and validate a YAML config file, applying ``--set`` overrides
    (dotted ``section.key=value`` strings) before validation."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" \
            if mark else ""
        raise ConfigError(f"cannot parse {path}{where}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    raw = apply_overrides(raw if raw is not None else {}, overrides)
    return parse_config(raw)


def apply_overrides(raw, overrides):
    """Apply ``section.key=value`` strings onto a raw config mapping.
    Values are parsed as YAML scalars, so numbers and lists work."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like "
                              "section.key=value")
        path, _, text = item.partition("=")
        parts = path.strip().split(".")
        if len(parts) < 2 or not all(parts):
            raise ConfigError(f"override path {path!r} must be dotted, "
                              "e.g. training.iterations=500")
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: bad value: {exc}") \
                from exc
        node = raw
        for p in parts[:-1]:
            nxt = node.get(p)
            if not isinstance(nxt, dict):
                nxt = {}
                node[p] = nxt
            node = nxt
        node[parts[-1]] = value
    return raw
