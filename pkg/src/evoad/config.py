"""Run configuration: one versioned YAML document.

Layout (every section optional except ``dataset``)::

    version: 1
    seed: 0
    dataset:   {path: train.csv, labels: auto}
    evolution: {population_size, iterations, mutation_rate, tournament_k, elitism,
                family, fp_factor, fp_penalty, val_fraction, workers}
    subspace:  {count, population, iterations, mutation_rate, size_bonus}
    limits:    {w_min, w_max, L_max, c_max, kernels, kinds, graph_w_min,
                graph_L_max, graph_dim_min, graph_dim_max}
    train:     {epochs, batch_size, learning_rate, optimizer}
    finetune:  {population, iterations, p_m, tau, fp_factor, stagnation_window}
    synth:     {sensors, length, anomaly_rate, anomaly_kinds, noise, train_fraction}
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from evoad.data import SynthConfig
from evoad.engine import EvolutionConfig
from evoad.finetune import FineTuneConfig
from evoad.genome import Limits
from evoad.nn.model import TrainConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted key at fault."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


_SUBSPACE_KEYS = {
    "count": "n_subspaces",
    "population": "subspace_population",
    "iterations": "subspace_iterations",
    "mutation_rate": "subspace_mutation_rate",
    "size_bonus": "size_bonus",
}
_EVOLUTION_KEYS = (
    "population_size",
    "iterations",
    "mutation_rate",
    "tournament_k",
    "elitism",
    "family",
    "fp_factor",
    "fp_penalty",
    "val_fraction",
    "workers",
)
_TRAIN_KEYS = ("epochs", "batch_size", "learning_rate", "optimizer")
_FINETUNE_KEYS = ("population", "iterations", "p_m", "tau", "fp_factor", "stagnation_window")
_SYNTH_KEYS = ("sensors", "length", "anomaly_rate", "anomaly_kinds", "noise", "train_fraction")
_LIMIT_KEYS = tuple(f.name for f in fields(Limits))
_SECTIONS = ("dataset", "evolution", "subspace", "limits", "train", "finetune", "synth")
_TOP = ("version", "seed") + _SECTIONS


@dataclass(frozen=True)
class RunConfig:
    seed: int
    dataset_path: Optional[str]
    dataset_labels: str  # "auto", "yes" or "no"
    evolution: EvolutionConfig
    finetune: FineTuneConfig
    synth: SynthConfig
    document: dict  # normalized document, as written to the run directory

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.document, sort_keys=True, default_flow_style=False)


def _check_keys(section: str, d: Any, allowed) -> dict:
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ConfigError(section, "must be a mapping")
    for key in d:
        if key not in allowed:
            raise ConfigError(f"{section}.{key}", "unknown key")
    return d


def _typed(field: str, value, kind):
    """Coerce scalars the way YAML users expect (ints accepted for floats)."""
    if kind is float:
        if isinstance(value, str):
            # YAML 1.1 reads exponent forms without a dot ("1e-3") as strings
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(field, f"expected a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(field, f"expected an integer, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(field, f"expected a string, got {value!r}")
        return value
    if kind is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(field, f"expected a list, got {value!r}")
        return tuple(value)
    return value


def _kinds_of(cls) -> dict:
    out = {}
    for f in fields(cls):
        t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
        if t.startswith("tuple"):
            out[f.name] = tuple
        elif t in ("int", "float", "str"):
            out[f.name] = {"int": int, "float": float, "str": str}[t]
    return out


def _section(cls, section: str, d: dict, rename: Optional[dict] = None, **extra):
    kinds = _kinds_of(cls)
    kwargs = {}
    for key, value in d.items():
        name = (rename or {}).get(key, key)
        kwargs[name] = _typed(f"{section}.{key}", value, kinds.get(name))
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        # name the first key the message mentions, else the section
        msg = str(exc)
        for key in d:
            name = (rename or {}).get(key, key)
            if msg.startswith(name) or f" {name} " in f" {msg} ":
                raise ConfigError(f"{section}.{key}", msg) from exc
        raise ConfigError(section, msg) from exc


def parse_config(doc: Any) -> RunConfig:
    """Validate a loaded document and build the typed configuration."""
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be a mapping")
    doc = copy.deepcopy(doc)
    for key in doc:
        if key not in _TOP:
            raise ConfigError(str(key), "unknown key")
    version = doc.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError("version", f"unsupported version {version!r}, expected {CONFIG_VERSION}")
    seed = _typed("seed", doc.get("seed", 0), int)

    ds = _check_keys("dataset", doc.get("dataset"), ("path", "labels"))
    path = ds.get("path")
    if path is not None and not isinstance(path, str):
        raise ConfigError("dataset.path", "expected a string")
    labels = ds.get("labels", "auto")
    if labels not in ("auto", "yes", "no"):
        raise ConfigError("dataset.labels", "must be auto, yes or no")

    limits = _section(Limits, "limits", _check_keys("limits", doc.get("limits"), _LIMIT_KEYS))
    train_d = _check_keys("train", doc.get("train"), _TRAIN_KEYS)
    train_cfg = _section(TrainConfig, "train", train_d, seed=seed)
    evo_d = _check_keys("evolution", doc.get("evolution"), _EVOLUTION_KEYS)
    sub_d = _check_keys("subspace", doc.get("subspace"), tuple(_SUBSPACE_KEYS))
    kinds = _kinds_of(EvolutionConfig)
    sub_kwargs = {
        _SUBSPACE_KEYS[k]: _typed(f"subspace.{k}", v, kinds.get(_SUBSPACE_KEYS[k])) for k, v in sub_d.items()
    }
    try:
        evo = _section(
            EvolutionConfig, "evolution", evo_d, limits=limits, train_cfg=train_cfg, seed=seed, **sub_kwargs
        )
    except ConfigError as exc:
        if exc.field == "evolution":
            for k, name in _SUBSPACE_KEYS.items():
                if k in sub_d and str(exc).startswith(f"evolution: {name}"):
                    raise ConfigError(f"subspace.{k}", str(exc).split(": ", 1)[1]) from exc
        raise
    ft = _section(FineTuneConfig, "finetune", _check_keys("finetune", doc.get("finetune"), _FINETUNE_KEYS), seed=seed)
    synth = _section(SynthConfig, "synth", _check_keys("synth", doc.get("synth"), _SYNTH_KEYS), seed=seed)

    normalized = {
        "version": CONFIG_VERSION,
        "seed": seed,
        "dataset": {"path": path, "labels": labels},
        "evolution": {k: getattr(evo, k) for k in _EVOLUTION_KEYS},
        "subspace": {k: getattr(evo, v) for k, v in _SUBSPACE_KEYS.items()},
        "limits": {k: list(v) if isinstance(v, tuple) else v for k, v in ((k, getattr(limits, k)) for k in _LIMIT_KEYS)},
        "train": {k: getattr(train_cfg, k) for k in _TRAIN_KEYS},
        "finetune": {k: getattr(ft, k) for k in _FINETUNE_KEYS},
        "synth": {k: list(v) if isinstance(v, tuple) else v for k, v in ((k, getattr(synth, k)) for k in _SYNTH_KEYS)},
    }
    return RunConfig(seed, path, labels, evo, ft, synth, normalized)


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as YAML scalars."""
    doc = copy.deepcopy(doc) if doc else {}
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(item, "override must look like section.key=value")
        parts = key.split(".")
        node = doc
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(key, f"{p} is not a section")
            node = nxt
        node[parts[-1]] = yaml.safe_load(raw) if raw else None
    return doc


def load_config(path, overrides=()) -> RunConfig:
    """Read, override and validate a config file.

    A relative ``dataset.path`` is resolved against the config file's folder.
    """
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"malformed YAML: {exc}") from exc
    doc = apply_overrides(doc or {}, overrides)
    ds = doc.get("dataset")
    if isinstance(ds, dict) and isinstance(ds.get("path"), str) and not Path(ds["path"]).is_absolute():
        ds["path"] = str((path.parent / ds["path"]).resolve())
    return parse_config(doc)


def default_document() -> dict:
    return parse_config({"dataset": {"path": None}}).document


__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "apply_overrides", "default_document"]
