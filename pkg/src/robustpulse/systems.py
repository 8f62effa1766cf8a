"""Physical system definitions and the built-in presets.

Conventions: hbar = 1 and all frequencies are angular.  Each preset picks an
energy unit (the exchange J or the anharmonicity |Delta|) and quotes its gate
time in units of ``h / unit``; ``time_unit = 2 pi / |unit|`` converts those
into internal time.  Field values handed around by pulses are dimensionless
(field / unit), exactly like the columns of the published coefficient tables.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import jax.numpy as jnp
import numpy as np

from .algebra import (
    PAULI,
    SubspaceProjection,
    is_hermitian,
    is_unitary,
    ladder,
    matrix_exp,
    pauli_string,
)

__all__ = [
    "NoiseChannel",
    "Control",
    "ControlSystem",
    "envelope",
    "preset_spin_cz",
    "preset_spin_x90",
    "preset_spin_two_tone",
    "preset_transmon",
    "PRESETS",
    "get_preset",
    "lie_closure_dimension",
]


@dataclass(frozen=True, eq=False)
class NoiseChannel:
    """One quasistatic noise term ``eps * chi(t, fields) * generator``.

    ``coupling`` receives the time and the current field vector so that
    control-dependent (multiplicative) noise can be written down.
    """

    generator: np.ndarray
    coupling: Callable
    eps_max: float
    weight: float = 1.0
    label: str = ""

    def __post_init__(self):
        G = np.asarray(self.generator, dtype=complex)
        if not is_hermitian(G):
            raise ValueError(f"noise generator {self.label!r} is not Hermitian")
        if self.eps_max <= 0 or self.weight <= 0:
            raise ValueError("eps_max and weight must be positive")
        object.__setattr__(self, "generator", G)


@dataclass(frozen=True, eq=False)
class Control:
    """A control Hamiltonian term ``field_k(t) * generator``."""

    generator: np.ndarray
    label: str = ""

    def __post_init__(self):
        G = np.asarray(self.generator, dtype=complex)
        if not is_hermitian(G):
            raise ValueError(f"control generator {self.label!r} is not Hermitian")
        object.__setattr__(self, "generator", G)


@dataclass(frozen=True, eq=False)
class ControlSystem:
    """Drift + controls + noise, a target gate and a pulse parameterisation.

    ``parameterize(t, p)`` turns the network output ``p`` at internal time
    ``t`` into the field vector (one entry per control).  ``defaults`` holds
    the run settings a configuration falls back on: cost exponents ``k``,
    ``l``, the correction ``order`` and optional ``schedule`` overrides.
    """

    name: str
    projection: SubspaceProjection
    drift: np.ndarray
    controls: tuple
    noise_channels: tuple
    T: float
    target: np.ndarray
    parameterize: Optional[Callable] = None
    n_params: int = 0
    decay_rates: tuple = ()
    time_unit: float = 1.0
    energy_unit: float = 1.0
    lowering: Optional[np.ndarray] = None
    defaults: dict = field(default_factory=dict)

    def __post_init__(self):
        drift = np.asarray(self.drift, dtype=complex)
        if not is_hermitian(drift):
            raise ValueError("drift is not Hermitian")
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "controls", tuple(self.controls))
        object.__setattr__(self, "noise_channels", tuple(self.noise_channels))
        U0 = np.asarray(self.target, dtype=complex)
        if U0.shape != (self.D, self.D) or not is_unitary(U0):
            raise ValueError("target must be a D x D unitary")
        object.__setattr__(self, "target", U0)
        if self.T <= 0:
            raise ValueError("gate time must be positive")
        for op in [c.generator for c in self.controls] + [c.generator for c in self.noise_channels]:
            if op.shape != (self.n, self.n):
                raise ValueError("generator dimension does not match the system")

    @property
    def n(self) -> int:
        return self.drift.shape[0]

    @property
    def D(self) -> int:
        return self.projection.D

    @property
    def n_fields(self) -> int:
        return len(self.controls)

    @property
    def control_stack(self) -> np.ndarray:
        if not self.controls:
            return np.zeros((0, self.n, self.n), dtype=complex)
        return np.array([c.generator for c in self.controls])

    def hamiltonian(self, fields) -> np.ndarray:
        """Numeric ``H_c`` for a given field vector (numpy)."""
        f = np.asarray(fields, dtype=float).reshape(-1)
        return self.drift + np.tensordot(f, self.control_stack, axes=1)

    def with_(self, **changes) -> "ControlSystem":
        return replace(self, **changes)


def envelope(t, kappa, T):
    """Smoothed unit square window; exactly zero at ``t = 0`` and ``t = T``.

    Algebraically ``coth(kT)[tanh(kt) - tanh(k(t-T))] - 1``, rearranged so the
    endpoint cancellation is exact in floating point.
    """
    th = jnp.tanh(kappa * T)
    return (jnp.tanh(kappa * t) - jnp.tanh(kappa * (t - T)) - th) / th


# -- parameterisation building blocks -----------------------------------------

def _sin_form(amp):
    return lambda A, pa, pb: amp * A * pa * jnp.sin(pb)


def _arctan_sin_form(amp):
    return lambda A, pa, pb: amp * A * (2 / jnp.pi) * jnp.arctan(pa) * jnp.sin(pb)


def make_parameterization(forms: Sequence[Callable], kappa: float, T: float):
    """Fields ``f_k = form_k(A(t), p[2k], p[2k+1])``."""
    forms = tuple(forms)

    def parameterize(t, p):
        A = envelope(t, kappa, T)
        return jnp.stack([form(A, p[2 * k], p[2 * k + 1]) for k, form in enumerate(forms)])

    return parameterize


def _const(value):
    return lambda t, fields: value


# -- presets ------------------------------------------------------------------

def _spin_common(J, duration, kappaT):
    time_unit = 2 * np.pi / abs(J)
    T = duration * time_unit
    return time_unit, T, kappaT / T


def preset_spin_cz(J: float = 1.0, duration: float = 4.8, kappaT: float = 30.0,
                   eps_max: float = 0.24, weight: float = 1.0,
                   decay_rates: Sequence[float] = ()) -> ControlSystem:
    """Exchange-coupled spin pair driven by ``B_x`` on qubit 1, CZ-type target.

    ``H = (J/4) ZZ + (J/2) f(t) XI`` with ``f = g mu_B B_x / J =
    A(t) p1 sin(p2) / 2``; noise ``eps_J (J/4) ZZ``.
    """
    time_unit, T, kappa = _spin_common(J, duration, kappaT)
    ZZ = pauli_string("ZZ")
    return ControlSystem(
        name="spin-cz",
        projection=SubspaceProjection.identity(4),
        drift=J / 4 * ZZ,
        controls=(Control(J / 2 * pauli_string("XI"), "gmuB_Bx/J"),),
        noise_channels=(NoiseChannel(ZZ, _const(J / 4), eps_max, weight, "eps_J"),),
        T=T,
        target=matrix_exp(-1j * np.pi / 4 * ZZ),
        parameterize=make_parameterization([_sin_form(0.5)], kappa, T),
        n_params=2,
        decay_rates=tuple(decay_rates),
        time_unit=time_unit,
        energy_unit=J,
        defaults=dict(k=2, l=2, order=2, kappaT=kappaT, duration=duration, schedule=dict(refine_evals=400)),
    )


def preset_spin_x90(J: float = 1.0, duration: float = 3.2, kappaT: float = 20.0,
                    eps_max: float = 0.2, weight: float = 1.0,
                    decay_rates: Sequence[float] = ()) -> ControlSystem:
    """Same hardware as :func:`preset_spin_cz`, single-qubit ``X_{pi/2}`` target."""
    base = preset_spin_cz(J, duration, kappaT, eps_max, weight, decay_rates)
    return base.with_(
        name="spin-x90",
        target=matrix_exp(-1j * np.pi / 4 * pauli_string("XI")),
        defaults=dict(k=2, l=2, order=1, kappaT=kappaT, duration=duration),
    )


def preset_spin_two_tone(J: float = 1.0, duration: float = 3.2, kappaT: float = 20.0,
                         eps_max: float = 0.2, weight: float = 1.0,
                         decay_rates: Sequence[float] = ()) -> ControlSystem:
    """Two-tone drive ``B_x, B_y`` on both qubits; sqrt(iSWAP)-class target."""
    time_unit, T, kappa = _spin_common(J, duration, kappaT)
    ZZ = pauli_string("ZZ")
    labels = ["XI", "YI", "IX", "IY"]
    names = ["g1muB_Bx1/J", "g1muB_By1/J", "g2muB_Bx2/J", "g2muB_By2/J"]
    return ControlSystem(
        name="spin-two-tone",
        projection=SubspaceProjection.identity(4),
        drift=J / 4 * ZZ,
        controls=tuple(Control(J / 2 * pauli_string(s), nm) for s, nm in zip(labels, names)),
        noise_channels=(NoiseChannel(ZZ, _const(J / 4), eps_max, weight, "eps_J"),),
        T=T,
        target=matrix_exp(-1j * np.pi / 8 * (pauli_string("YY") + ZZ)),
        parameterize=make_parameterization([_sin_form(0.5)] * 4, kappa, T),
        n_params=8,
        decay_rates=tuple(decay_rates),
        time_unit=time_unit,
        energy_unit=J,
        defaults=dict(k=2, l=2, order=1, kappaT=kappaT, duration=duration),
    )


def preset_transmon(levels: int = 4, anharmonicity: float = -1.0, duration: float = 2.0,
                    kappaT: float = 50 / 4, eps_max: float = 0.035, weight: float = 1.0,
                    decay_rates: Sequence[float] = ()) -> ControlSystem:
    """Driven transmon truncated to ``levels`` states, ``X_{pi/2}`` on {0, 1}.

    ``H = delta n + (Delta/2) n(n-1) + (Omega a + Omega* a^dag)/2`` with the
    three fields ``Omega_x/Delta, Omega_y/Delta, delta/Delta``; amplitudes are
    clamped through ``(2/pi) arctan`` to ``4|Delta|`` and ``2|Delta|``.  The
    noise is a detuning shift ``eps |Delta| n``.
    """
    if levels < 3:
        raise ValueError("transmon needs at least 3 levels")
    D = anharmonicity
    a = ladder(levels)
    ad = a.conj().T
    N = ad @ a
    I = np.eye(levels)
    time_unit = 2 * np.pi / abs(D)
    T = duration * time_unit
    kappa = kappaT / T
    return ControlSystem(
        name="transmon",
        projection=SubspaceProjection.levels(levels, [0, 1]),
        drift=D / 2 * N @ (N - I),
        controls=(
            Control(D * (a + ad) / 2, "Omega_x/Delta"),
            Control(D * 1j * (a - ad) / 2, "Omega_y/Delta"),
            Control(D * N, "delta/Delta"),
        ),
        noise_channels=(NoiseChannel(N, _const(abs(D)), eps_max, weight, "eps/|Delta|"),),
        T=T,
        target=matrix_exp(-1j * np.pi / 4 * PAULI["X"]),
        parameterize=make_parameterization(
            [_arctan_sin_form(4.0), _arctan_sin_form(4.0), _arctan_sin_form(2.0)], kappa, T),
        n_params=6,
        decay_rates=tuple(decay_rates),
        time_unit=time_unit,
        energy_unit=D,
        lowering=a,
        defaults=dict(k=1, l=2, order=1, kappaT=kappaT, duration=duration, levels=levels),
    )


PRESETS = {
    "spin-cz": preset_spin_cz,
    "spin-x90": preset_spin_x90,
    "spin-two-tone": preset_spin_two_tone,
    "transmon": preset_transmon,
}


def get_preset(name: str, **kwargs) -> ControlSystem:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**kwargs)


def lie_closure_dimension(ops: Sequence[np.ndarray], tol: float = 1e-9, max_rounds: int = 10) -> int:
    """Dimension of the real Lie algebra generated by ``i * ops``."""
    def flat(M):
        return np.concatenate([M.real.ravel(), M.imag.ravel()])

    basis: list = []

    def add(M):
        v = flat(M)
        if basis:
            B = np.array(basis)
            v = v - B.T @ (B @ v)
        nrm = np.linalg.norm(v)
        if nrm > tol:
            basis.append(v / nrm)
            return True
        return False

    elems = [1j * np.asarray(o) for o in ops]
    elems = [e for e in elems if add(e)]
    for _ in range(max_rounds):
        new = []
        for x in list(elems):
            for y in list(elems):
                c = x @ y - y @ x
                if add(c):
                    new.append(c)
        if not new:
            break
        elems += new
    return len(basis)
