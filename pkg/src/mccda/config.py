"""JSON run configuration: scenario descriptors, defaults and validation.

A config file is a single JSON object. Every key of :class:`TrainConfig` may
appear at the top level, plus ``scenario``, which is either a preset name
(see :data:`PRESETS`) or an inline descriptor::

    {"kind": "MSDA", "num_classes": 4,
     "sources": [{"generator": "blobs", "shift": {"rotation_deg": 10}}, ...],
     "targets": [{"generator": "blobs", "shift": {"rotation_deg": 35}}]}

Domain descriptors accept ``generator`` (``two_moons`` or ``blobs``),
``n_per_class``, ``noise`` (two moons only), ``seed`` (null derives one from
the run seed), ``shift`` (``rotation_deg``, ``pivot``, ``translation``,
``scale``, ``noise_sigma``), ``keep_labels`` and ``domain_id``.
Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import copy
import difflib
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from . import __version__
from .errors import ConfigError, MCCError
from .synthdata import (
    MOONS_CENTER,
    DomainDataset,
    ShiftTransform,
    gen_blob_domains,
    gen_two_moons,
    restrict_labels,
    rotation_matrix,
    shift_domain,
)
from .trainer import SCENARIO_KINDS, ScenarioSpec, TrainConfig

TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))
DOMAIN_KEYS = ("generator", "n_per_class", "noise", "num_classes", "seed", "shift",
               "keep_labels", "domain_id")
SHIFT_KEYS = ("rotation_deg", "pivot", "translation", "scale", "noise_sigma")
SCENARIO_KEYS = ("kind", "num_classes", "sources", "targets")

MOONS_ROTATION_DEG = 30.0
MOONS_NOISE = 0.1
MOONS_PER_CLASS = 150
BLOB_CLASSES = 4
BLOB_PER_CLASS = 100
BLOB_TARGET_DEG = 35.0


def _moons(domain_id: str, rotation: float = 0.0) -> Dict:
    d = {"generator": "two_moons", "n_per_class": MOONS_PER_CLASS, "noise": MOONS_NOISE,
         "domain_id": domain_id}
    if rotation:
        d["shift"] = {"rotation_deg": rotation, "pivot": list(MOONS_CENTER)}
    return d


def _blobs(domain_id: str, rotation: float = 0.0, keep=None) -> Dict:
    d = {"generator": "blobs", "num_classes": BLOB_CLASSES, "n_per_class": BLOB_PER_CLASS,
         "domain_id": domain_id}
    if rotation:
        d["shift"] = {"rotation_deg": rotation}
    if keep is not None:
        d["keep_labels"] = list(keep)
    return d


_PDA_KEEP = list(range(math.ceil(BLOB_CLASSES / 2)))

PRESETS: Dict[str, Dict] = {
    "uda-two-moons": {
        "kind": "UDA", "num_classes": 2,
        "sources": [_moons("source")],
        "targets": [_moons("target", MOONS_ROTATION_DEG)],
    },
    "msda-two-moons": {
        "kind": "MSDA", "num_classes": 2,
        "sources": [_moons("source")],
        "targets": [_moons("target", MOONS_ROTATION_DEG)],
    },
    "uda-blobs": {
        "kind": "UDA", "num_classes": BLOB_CLASSES,
        "sources": [_blobs("source")],
        "targets": [_blobs("target", BLOB_TARGET_DEG)],
    },
    "pda-blobs": {
        "kind": "PDA", "num_classes": BLOB_CLASSES,
        "sources": [_blobs("source")],
        "targets": [_blobs("target", BLOB_TARGET_DEG, _PDA_KEEP)],
    },
    "msda-blobs": {
        "kind": "MSDA", "num_classes": BLOB_CLASSES,
        "sources": [_blobs("source0", 0.0), _blobs("source1", 10.0), _blobs("source2", -10.0)],
        "targets": [_blobs("target", BLOB_TARGET_DEG)],
    },
    "mtda-blobs": {
        "kind": "MTDA", "num_classes": BLOB_CLASSES,
        "sources": [_blobs("source")],
        "targets": [_blobs("target0", 30.0), _blobs("target1", BLOB_TARGET_DEG)],
    },
    "mspda-blobs": {
        "kind": "MSPDA", "num_classes": BLOB_CLASSES,
        "sources": [_blobs("source0", 0.0), _blobs("source1", 10.0), _blobs("source2", -10.0)],
        "targets": [_blobs("target", BLOB_TARGET_DEG, _PDA_KEEP)],
    },
    "mtpda-blobs": {
        "kind": "MTPDA", "num_classes": BLOB_CLASSES,
        "sources": [_blobs("source")],
        "targets": [_blobs("target0", 30.0, _PDA_KEEP), _blobs("target1", BLOB_TARGET_DEG, _PDA_KEEP)],
    },
}


def _reject_unknown(d: Dict, allowed, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    for key in d:
        if key not in allowed:
            hint = difflib.get_close_matches(key, allowed, n=1)
            extra = f" (did you mean {hint[0]!r}?)" if hint else ""
            raise ConfigError(f"{where}: unknown key {key!r}{extra}")


def resolve_scenario(scenario) -> Dict:
    """Expand a preset name and validate an inline descriptor's keys."""
    if isinstance(scenario, str):
        try:
            return copy.deepcopy(PRESETS[scenario])
        except KeyError:
            raise ConfigError(
                f"unknown scenario preset {scenario!r}; choose from {sorted(PRESETS)}"
            ) from None
    _reject_unknown(scenario, SCENARIO_KEYS, "scenario")
    for key in SCENARIO_KEYS:
        if key not in scenario:
            raise ConfigError(f"scenario: missing key {key!r}")
    if scenario["kind"] not in SCENARIO_KINDS:
        raise ConfigError(f"scenario: unknown kind {scenario['kind']!r}")
    for role in ("sources", "targets"):
        if not isinstance(scenario[role], list) or not scenario[role]:
            raise ConfigError(f"scenario.{role}: expected a non-empty list")
        for i, dom in enumerate(scenario[role]):
            _reject_unknown(dom, DOMAIN_KEYS, f"scenario.{role}[{i}]")
            if "shift" in dom:
                _reject_unknown(dom["shift"], SHIFT_KEYS, f"scenario.{role}[{i}].shift")
    return copy.deepcopy(scenario)


def _derived_seed(run_seed: int, role: str, index: int) -> int:
    salt = 0 if role == "sources" else 1
    return int(np.random.SeedSequence([run_seed, salt, index]).generate_state(1)[0])


def _shift_from(desc: Dict) -> ShiftTransform:
    angle = math.radians(float(desc.get("rotation_deg", 0.0)))
    scale = float(desc.get("scale", 1.0))
    translation = desc.get("translation")
    pivot = desc.get("pivot")
    if pivot is not None:
        # rotate and scale about the pivot instead of the origin
        p = np.asarray(pivot, dtype=np.float64)
        offset = p - scale * rotation_matrix(angle) @ p
        if translation is not None:
            offset = offset + np.asarray(translation, dtype=np.float64)
        translation = offset.tolist()
    return ShiftTransform(
        rotation=angle,
        translation=None if translation is None else tuple(float(v) for v in translation),
        scale=scale,
        noise_sigma=float(desc.get("noise_sigma", 0.0)),
    )


def build_domain(desc: Dict, seed: int) -> DomainDataset:
    seed = desc.get("seed") if desc.get("seed") is not None else seed
    domain_id = desc.get("domain_id", "domain")
    gen = desc.get("generator")
    seeds = np.random.SeedSequence(seed).spawn(2)
    if gen == "two_moons":
        ds = gen_two_moons(int(desc.get("n_per_class", MOONS_PER_CLASS)),
                           float(desc.get("noise", MOONS_NOISE)), seeds[0], domain_id)
    elif gen == "blobs":
        ds = gen_blob_domains(int(desc.get("num_classes", BLOB_CLASSES)), 1, None,
                              int(desc.get("n_per_class", BLOB_PER_CLASS)), seeds[0])[0]
    else:
        raise ConfigError(f"unknown generator {gen!r}; expected 'two_moons' or 'blobs'")
    if "shift" in desc:
        ds = shift_domain(ds, _shift_from(desc["shift"]), domain_id, seeds[1])
    else:
        ds = DomainDataset(ds.points, ds.labels, domain_id, ds.label_set)
    if desc.get("keep_labels") is not None:
        ds = restrict_labels(ds, desc["keep_labels"])
    return ds


def build_scenario(descriptor: Dict, run_seed: int) -> ScenarioSpec:
    """Instantiate every dataset of a resolved scenario descriptor."""
    try:
        sources = [build_domain(d, _derived_seed(run_seed, "sources", i))
                   for i, d in enumerate(descriptor["sources"])]
        targets = [build_domain(d, _derived_seed(run_seed, "targets", i))
                   for i, d in enumerate(descriptor["targets"])]
        return ScenarioSpec(descriptor["kind"], sources, targets, int(descriptor["num_classes"]))
    except ConfigError:
        raise
    except (MCCError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc


def config_from_dict(raw: Dict) -> Tuple[Dict, TrainConfig]:
    """Validate a config mapping; returns (resolved scenario descriptor, TrainConfig)."""
    if "config" in raw and "command" in raw:  # a run manifest
        raw = raw["config"]
    _reject_unknown(raw, ("scenario", *TRAIN_KEYS), "config")
    if "scenario" not in raw:
        raise ConfigError("config: missing key 'scenario'")
    scenario = resolve_scenario(raw["scenario"])
    kwargs = {k: v for k, v in raw.items() if k != "scenario"}
    defaults = TrainConfig()
    for key, value in kwargs.items():
        want = type(getattr(defaults, key))
        ok = isinstance(value, want) and not (want is int and isinstance(value, bool))
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            ok = True
        if not ok:
            raise ConfigError(f"config: {key!r} must be {want.__name__}, got {value!r}")
    try:
        cfg = TrainConfig(**kwargs)
    except (MCCError, TypeError, ValueError) as exc:
        raise ConfigError(f"config: {exc}") from exc
    build_scenario(scenario, cfg.seed)  # surface invariant violations now
    return scenario, cfg


def load_config(path) -> Tuple[Dict, TrainConfig]:
    """Read a JSON config (or a run manifest) from ``path``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return config_from_dict(raw)


def dump_config(scenario: Dict, cfg: TrainConfig) -> Dict:
    return {"scenario": copy.deepcopy(scenario), **asdict(cfg)}


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    output_dir: str
    seed: int
    tool_version: str = __version__

    def to_dict(self) -> Dict:
        return asdict(self)
