"""Run configuration: schema, loading, and construction of systems and settings."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np
import yaml

from .algebra import SubspaceProjection, ladder, matrix_exp, pauli_string
from .integrate import SolverConfig
from .objective import CostConfig
from .optimize import TrainSchedule
from .systems import (Control, ControlSystem, NoiseChannel, _arctan_sin_form, _const, _sin_form,
                      get_preset, make_parameterization)

__all__ = ["SCHEMA", "ConfigError", "RunConfig", "load_config", "output_root", "OUT_ENV", "operator"]

OUT_ENV = "ROBUSTPULSE_OUT"

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg_int = {"type": "integer", "minimum": 0}
_term = {
    "type": "object",
    "required": ["op"],
    "additionalProperties": False,
    "properties": {"op": {"type": "string"}, "coeff": _num},
}
_terms = {"type": "array", "items": _term}

SCHEMA: dict = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "robustpulse run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["system"],
    "properties": {
        "system": {
            "type": "object",
            "oneOf": [{"required": ["preset"]}, {"required": ["inline"]}],
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": ["spin-cz", "spin-x90", "spin-two-tone", "transmon"]},
                "options": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "J": _num, "anharmonicity": _num, "levels": {"type": "integer", "minimum": 3},
                        "duration": _pos, "kappaT": _pos, "eps_max": {"type": "number", "minimum": 0},
                        "weight": {"type": "number", "minimum": 0},
                        "decay_rates": {"type": "array", "items": {"type": "number", "minimum": 0}},
                    },
                },
                "inline": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["dim", "drift", "controls", "noise", "target", "duration"],
                    "properties": {
                        "name": {"type": "string"},
                        "dim": {"type": "integer", "minimum": 2},
                        "energy_unit": {"type": "number", "not": {"const": 0}},
                        "drift": _terms,
                        "controls": {
                            "type": "array", "minItems": 1,
                            "items": {
                                "type": "object", "required": ["op"], "additionalProperties": False,
                                "properties": {
                                    "op": {"type": "string"}, "coeff": _num, "label": {"type": "string"},
                                    "form": {"enum": ["sin", "arctan_sin"]}, "amplitude": _pos,
                                },
                            },
                        },
                        "noise": {
                            "type": "array",
                            "items": {
                                "type": "object", "required": ["op", "eps_max"], "additionalProperties": False,
                                "properties": {
                                    "op": {"type": "string"}, "coeff": _num, "label": {"type": "string"},
                                    "eps_max": {"type": "number", "minimum": 0},
                                    "weight": {"type": "number", "minimum": 0},
                                },
                            },
                        },
                        "target": {
                            "type": "object", "required": ["generator"], "additionalProperties": False,
                            "properties": {"generator": _terms},
                        },
                        "subspace": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                        "duration": _pos,
                        "kappaT": _pos,
                        "decay_rates": {"type": "array", "items": {"type": "number", "minimum": 0}},
                    },
                },
            },
        },
        "cost": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k": {"type": "integer", "minimum": 1},
                "l": {"type": "integer", "minimum": 1},
                "order": {"enum": [1, 2, 3]},
                "weights": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "eps_max": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "decay": {"type": "boolean"},
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "amsgrad_iters": _nonneg_int, "amsgrad_lr": _pos, "beta1": _num, "beta2": _num,
                "epsilon_hat": _pos, "bfgs_iters": _nonneg_int, "bfgs_initial_step_norm": _pos,
                "seed": _nonneg_int, "restarts": _nonneg_int, "cost_target": _pos,
                "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "input_map": {"enum": ["tau", "symmetric"]},
                "train_alpha": {"type": "boolean"},
                "refine_evals": _nonneg_int, "refine_round": {"type": "integer", "minimum": 1},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"rtol": _pos, "atol": _pos, "max_steps": {"type": "integer", "minimum": 1}},
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps_min": _num, "eps_max": _num, "points": {"type": "integer", "minimum": 2},
                "channels": {"type": "array", "items": _nonneg_int},
                "delta_f_T": _pos, "window": {"enum": ["hard", "hann"]},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}


class ConfigError(ValueError):
    pass


def operator(name: str, dim: int) -> np.ndarray:
    """Named operator: a Pauli string (``"XI"``) or a ladder expression.

    Ladder names: ``a``, ``adag``, ``n``, ``x`` = ``a + a^dag``,
    ``y`` = ``i (a - a^dag)``, ``n(n-1)``, ``I``.
    """
    if set(name) <= set("IXYZ") and 2 ** len(name) == dim:
        return pauli_string(name)
    a = ladder(dim)
    ad = a.conj().T
    n = ad @ a
    table = {"a": a, "adag": ad, "n": n, "x": a + ad, "y": 1j * (a - ad), "n(n-1)": n @ (n - np.eye(dim)),
             "I": np.eye(dim)}
    if name not in table:
        raise ConfigError(f"unknown operator {name!r} for dimension {dim}")
    return table[name].astype(complex)


def _sum_terms(terms, dim):
    out = np.zeros((dim, dim), dtype=complex)
    for t in terms:
        out += t.get("coeff", 1.0) * operator(t["op"], dim)
    return out


def _inline_system(spec: dict) -> ControlSystem:
    dim = spec["dim"]
    unit = spec.get("energy_unit", 1.0)
    time_unit = 2 * np.pi / abs(unit)
    T = spec["duration"] * time_unit
    kappa = spec.get("kappaT", 20.0) / T
    keep = spec.get("subspace")
    proj = SubspaceProjection.identity(dim) if keep is None else SubspaceProjection.levels(dim, keep)
    forms = []
    controls = []
    for c in spec["controls"]:
        controls.append(Control(c.get("coeff", 1.0) * operator(c["op"], dim), c.get("label", c["op"])))
        amp = c.get("amplitude", 1.0)
        forms.append(_arctan_sin_form(amp) if c.get("form", "sin") == "arctan_sin" else _sin_form(amp))
    noise = tuple(NoiseChannel(operator(nz["op"], dim), _const(nz.get("coeff", 1.0)), nz["eps_max"],
                               nz.get("weight", 1.0), nz.get("label", nz["op"])) for nz in spec["noise"])
    gen = _sum_terms(spec["target"]["generator"], proj.D)
    lowering = ladder(dim) if "n" in {t["op"] for t in spec["noise"]} else None
    return ControlSystem(
        name=spec.get("name", "inline"),
        projection=proj,
        drift=_sum_terms(spec["drift"], dim),
        controls=tuple(controls),
        noise_channels=noise,
        T=T,
        target=matrix_exp(-1j * gen),
        parameterize=make_parameterization(forms, kappa, T),
        n_params=2 * len(controls),
        decay_rates=tuple(spec.get("decay_rates", ())),
        time_unit=time_unit,
        energy_unit=unit,
        lowering=lowering,
        defaults=dict(k=1, l=2, order=1),
    )


@dataclass
class RunConfig:
    raw: dict
    system: ControlSystem
    cost: CostConfig
    schedule: TrainSchedule
    solver: SolverConfig
    sweep: dict
    output_dir: Path

    @property
    def preset(self) -> Optional[str]:
        return self.raw["system"].get("preset")


def output_root(path: str) -> Path:
    """Resolve an output directory, honouring the ``ROBUSTPULSE_OUT`` override for relative paths."""
    p = Path(path)
    root = os.environ.get(OUT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def validate(doc: Any) -> dict:
    v = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(v.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            msgs.append(f"{where}: {e.message}")
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(msgs))
    return doc


def build(doc: dict) -> RunConfig:
    """Validate ``doc`` and build the system and settings it describes."""
    validate(doc)
    sysdoc = doc["system"]
    if "preset" in sysdoc:
        try:
            system = get_preset(sysdoc["preset"], **sysdoc.get("options", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"system/options: {exc}") from None
    else:
        system = _inline_system(sysdoc["inline"])
    cdoc = doc.get("cost", {})
    if "eps_max" in cdoc:
        eps = cdoc["eps_max"]
        if len(eps) != len(system.noise_channels):
            raise ConfigError(f"cost/eps_max: expected {len(system.noise_channels)} values, got {len(eps)}")
        from dataclasses import replace
        system = system.with_(noise_channels=tuple(replace(c, eps_max=e) for c, e in zip(system.noise_channels, eps)))
    if "weights" in cdoc and len(cdoc["weights"]) != len(system.noise_channels):
        raise ConfigError(f"cost/weights: expected {len(system.noise_channels)} values")
    d = system.defaults
    cost = CostConfig(k=cdoc.get("k", d.get("k", 1)), l=cdoc.get("l", d.get("l", 2)),
                      weights=cdoc.get("weights"), decay_enabled=cdoc.get("decay", False))
    sdoc = {**d.get("schedule", {}), **doc.get("schedule", {})}
    if "hidden" in sdoc:
        sdoc["hidden"] = tuple(sdoc["hidden"])
    try:
        schedule = TrainSchedule(**sdoc)
    except ValueError as exc:
        raise ConfigError(f"schedule: {exc}") from None
    solver = SolverConfig(order=cdoc.get("order", d.get("order", 1)), **doc.get("solver", {}))
    out = output_root(doc.get("output", {}).get("dir", "out"))
    return RunConfig(doc, system, cost, schedule, solver, doc.get("sweep", {}), out)


def load_config(path) -> dict:
    """Parse a YAML or JSON file (schema validation happens in :func:`build`)."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc
