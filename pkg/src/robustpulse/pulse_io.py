"""Chebyshev pulse series, the shipped appendix fixtures, and CSV/JSON export."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .chebyshev import RankDeficient, clenshaw, fit_coefficients
from .pulses import ChebyshevFieldPulse, sample_fields
from .systems import ControlSystem, get_preset

__all__ = [
    "ChebyshevPulse",
    "FixtureSet",
    "DomainError",
    "UnitMismatch",
    "RankDeficient",
    "chebyshev_eval",
    "chebyshev_fit",
    "fixtures",
    "fixture_file",
    "fixture_checksum",
    "FIXTURE_SHA256",
    "fixture_system",
    "export_pulse",
    "import_pulse",
    "pulse_from_series",
]

FIXTURE_SHA256 = "497cb8fbd3d62e1dad5fdea73ec7b32ed0a0995b842ef9039884f6f9cfd571b2"


class DomainError(ValueError):
    """Evaluation time outside ``[0, tau0]``."""


class UnitMismatch(ValueError):
    """Pulse file was written for a different system or unit convention."""


@dataclass(frozen=True)
class ChebyshevPulse:
    """``sum_n c_n T_n(2 tau / tau0 - 1)`` in dimensionless time ``tau``."""

    coefficients: tuple
    tau0: float
    field_label: str = ""
    residual: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if not self.coefficients:
            raise ValueError("coefficient list is empty")
        if not self.tau0 > 0:
            raise ValueError("tau0 must be positive")

    @property
    def n_terms(self) -> int:
        return len(self.coefficients)

    def __call__(self, tau):
        return chebyshev_eval(self, tau)


def chebyshev_eval(pulse: ChebyshevPulse, tau):
    """Evaluate the series at ``tau`` (scalar or array) with Clenshaw's recurrence."""
    tau_arr = np.asarray(tau, dtype=float)
    slack = 1e-12 * pulse.tau0
    if np.any(tau_arr < -slack) or np.any(tau_arr > pulse.tau0 + slack):
        raise DomainError(f"tau outside [0, {pulse.tau0}]")
    x = np.clip(2.0 * tau_arr / pulse.tau0 - 1.0, -1.0, 1.0)
    val = clenshaw(np.asarray(pulse.coefficients), x)
    return float(val) if np.ndim(val) == 0 else val


def chebyshev_fit(samples, order: int, tau0: float, field_label: str = "") -> ChebyshevPulse:
    """Least-squares fit of ``order`` Chebyshev terms to ``(tau, value)`` samples.

    The maximum absolute residual is stored on the result.  Raises
    :class:`RankDeficient` when the samples cannot determine ``order`` terms.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != 2:
        raise ValueError("samples must be a sequence of (tau, value) pairs")
    if order >= len(samples):
        raise RankDeficient(f"order {order} needs more than {len(samples)} samples")
    tau, y = samples[:, 0], samples[:, 1]
    c, resid = fit_coefficients(2.0 * tau / tau0 - 1.0, y, order)
    return ChebyshevPulse(tuple(c), float(tau0), field_label, resid)


# -- fixtures -------------------------------------------------------------------

@dataclass(frozen=True)
class FixtureSet:
    name: str
    preset: str
    tau0: float
    fields: dict = field(default_factory=dict)  # label -> ChebyshevPulse

    @property
    def labels(self) -> list:
        return list(self.fields)

    def coefficient_matrix(self) -> np.ndarray:
        n = max(p.n_terms for p in self.fields.values())
        out = np.zeros((len(self.fields), n))
        for i, p in enumerate(self.fields.values()):
            out[i, :p.n_terms] = p.coefficients
        return out


def fixture_file() -> Path:
    return Path(str(resources.files("robustpulse") / "data" / "appendix_fixtures.json"))


def fixture_checksum() -> str:
    return hashlib.sha256(fixture_file().read_bytes()).hexdigest()


def fixtures() -> dict:
    """Tabulated appendix pulses keyed ``cz``, ``x90``, ``iswap``, ``transmon``."""
    doc = json.loads(fixture_file().read_text())
    out = {}
    for name, entry in doc.items():
        tau0 = float(entry["tau0"])
        out[name] = FixtureSet(
            name, entry["preset"], tau0,
            {lab: ChebyshevPulse(tuple(c), tau0, lab) for lab, c in entry["fields"].items()},
        )
    return out


# Sign conventions under which the tabulated series reproduce their stated
# gates (see the project notes): the spin tables correspond to J < 0 in
# H = (J/4) ZZ + ..., and the transmon table to a positive anharmonicity
# with the detuning column negated.
_FIXTURE_CONVENTION = {
    "spin-cz": (dict(J=-1.0), None),
    "spin-x90": (dict(J=-1.0), None),
    "spin-two-tone": (dict(J=-1.0), None),
    "transmon": (dict(anharmonicity=1.0), (1.0, 1.0, -1.0)),
}


def fixture_system(name: str, literal: bool = False, **preset_kwargs):
    """``(system, pulse)`` that replays fixture ``name``.

    With ``literal=True`` the coefficients are used with the presets' default
    signs instead of the calibrated convention.
    """
    fx = fixtures()[name]
    kwargs, signs = _FIXTURE_CONVENTION[fx.preset]
    if literal:
        kwargs, signs = {}, None
    system = get_preset(fx.preset, **{**kwargs, **preset_kwargs})
    coeffs = fx.coefficient_matrix()
    if signs is not None:
        coeffs = coeffs * np.asarray(signs)[:, None]
    if not np.isclose(fx.tau0 * system.time_unit, system.T):
        system = system.with_(T=fx.tau0 * system.time_unit)
    return system, ChebyshevFieldPulse(coeffs, system.T)


def pulse_from_series(system: ControlSystem, series: Sequence[ChebyshevPulse]):
    """``(system, pulse)`` from one series per control field.

    The returned system has its duration set to ``tau0`` time units.
    """
    if len(series) != system.n_fields:
        raise ValueError(f"{system.name} has {system.n_fields} fields, got {len(series)} series")
    n = max(s.n_terms for s in series)
    c = np.zeros((len(series), n))
    for i, s in enumerate(series):
        c[i, :s.n_terms] = s.coefficients
    T = series[0].tau0 * system.time_unit
    if not np.isclose(T, system.T, rtol=1e-12):
        system = system.with_(T=T)
    return system, ChebyshevFieldPulse(c, T)


# -- export / import ------------------------------------------------------------

def _slug(label: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in label).strip("_")


def export_pulse(system: ControlSystem, pulse, prefix, theta=None, n_samples: int = 1001,
                 n_terms: int = 29, preset: Optional[str] = None) -> Path:
    """Write one ``tau,value`` CSV per field plus a JSON sidecar.

    Time is in units of ``system.time_unit`` and covers the physical gate
    duration (``alpha * T``); the sidecar stores a Chebyshev fit of each
    field with ``n_terms`` terms and its residual.  Returns the sidecar path.
    """
    theta = pulse.theta if theta is None else theta
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    alpha = float(pulse.alpha(theta))
    tau0 = alpha * system.T / system.time_unit
    tau = np.linspace(0.0, tau0, n_samples)
    f = np.asarray(sample_fields(pulse, tau * system.time_unit / alpha, theta))
    entries = {}
    for i, ctrl in enumerate(system.controls):
        label = ctrl.label or f"field{i}"
        path = prefix.with_name(f"{prefix.name}_{_slug(label)}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau", "value"])
            for a, b in zip(tau, f[:, i]):
                w.writerow([repr(float(a)), repr(float(b))])
        fit = chebyshev_fit(np.column_stack([tau, f[:, i]]), min(n_terms, n_samples - 1), tau0, label)
        entries[label] = {"csv": path.name, "chebyshev": list(fit.coefficients), "fit_residual": fit.residual}
    sidecar = prefix.with_name(prefix.name + ".json")
    doc = {
        "format": "robustpulse-pulse/1",
        "preset": preset or system.name,
        "tau0": tau0,
        "n_samples": n_samples,
        "units": {
            "time": f"2*pi/|{system.energy_unit:g}|",
            "field": f"energy/{system.energy_unit:g}",
            "energy_unit": system.energy_unit,
        },
        "fields": entries,
    }
    sidecar.write_text(json.dumps(doc, indent=1))
    return sidecar


def import_pulse(sidecar, system: Optional[ControlSystem] = None, use: str = "chebyshev"):
    """Read a pulse written by :func:`export_pulse`.

    Returns ``((system, pulse), doc)``, or ``(series, doc)`` without a
    system.  With ``use="samples"`` the CSV samples are
    refitted instead of reading the stored coefficients.  When ``system`` is
    given its name and energy unit must match the sidecar.
    """
    sidecar = Path(sidecar)
    doc = json.loads(sidecar.read_text())
    if doc.get("format") != "robustpulse-pulse/1":
        raise ValueError(f"{sidecar} is not a pulse sidecar")
    if system is not None:
        if doc["preset"] != system.name or not np.isclose(doc["units"]["energy_unit"], system.energy_unit):
            raise UnitMismatch(f"pulse was written for {doc['preset']} (unit {doc['units']['energy_unit']}), "
                               f"not {system.name} (unit {system.energy_unit})")
    tau0 = float(doc["tau0"])
    series = []
    for label, entry in doc["fields"].items():
        if use == "samples":
            data = np.loadtxt(sidecar.with_name(entry["csv"]), delimiter=",", skiprows=1, ndmin=2)
            series.append(chebyshev_fit(data, len(entry["chebyshev"]), tau0, label))
        else:
            series.append(ChebyshevPulse(tuple(entry["chebyshev"]), tau0, label))
    if system is None:
        return series, doc
    return pulse_from_series(system, series), doc
