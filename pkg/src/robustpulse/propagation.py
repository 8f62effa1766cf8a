"""Co-integration of the control propagator and its noise error integrals.

State (all complex):

* ``U``  - ``U_c(t)``, n x n
* ``E``  - first-order integrals ``E_i = int U^dag chi_i L_i U``, (m, n, n)
* ``E2`` - second-order integrals, (m, m, n, n), when ``order >= 2``
* ``E3`` - third-order integrals, (m, m, m, n, n), when ``order == 3``

Everything is multiplied by the pulse's time scale ``alpha``, so the
integrals are physical-time quantities and ``U(eps) ~ U_c exp(-i sum eps_i
E_i - sum eps_i eps_j E2_ij + ...)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np

from .integrate import Grid, SolverConfig, solve_adaptive, solve_on_grid

__all__ = [
    "PropagationState",
    "propagate",
    "propagate_on_grid",
    "second_order_pair",
    "third_order_footnote",
    "third_order_magnus",
    "full_noisy_propagate",
    "make_rhs",
    "initial_state",
]


@dataclass
class PropagationState:
    Uc: np.ndarray
    E: np.ndarray
    E2: Optional[np.ndarray] = None
    E3: Optional[np.ndarray] = None
    grid: Optional[Grid] = None
    alpha: float = 1.0

    @classmethod
    def from_tree(cls, y, grid=None, alpha=1.0):
        return cls(np.asarray(y["U"]), np.asarray(y["E"]),
                   None if "E2" not in y else np.asarray(y["E2"]),
                   None if "E3" not in y else np.asarray(y["E3"]),
                   grid, float(alpha))


def second_order_pair(dEi, Ej):
    """Right-hand side ``(dE_i E_j - E_j dE_i) / 2`` of the second-order integral."""
    return (dEi @ Ej - Ej @ dEi) / 2


def third_order_footnote(dEi, Ej, Ek, E2jk, E2kj):
    """Third-order integrand in the form quoted with the method (kept verbatim)."""
    return (E2jk @ dEi - Ej @ dEi @ Ek - Ek @ dEi @ Ej + dEi @ E2kj) / 3


def third_order_magnus(dEi, Ej, Ek, E2jk):
    """Integrand whose integral gives the third Magnus term, ``Omega_3 = i sum eps^3 X``.

    From ``Omega' = A - [Omega, A]/2 + [Omega, [Omega, A]]/12 - ...`` with
    ``A = -i sum eps_i dE_i``.
    """
    comm = lambda x, y: x @ y - y @ x
    return comm(dEi, E2jk) / 2 + comm(Ej, comm(Ek, dEi)) / 12


def initial_state(n: int, m: int, order: int):
    y = {"U": jnp.eye(n, dtype=complex), "E": jnp.zeros((m, n, n), dtype=complex)}
    if order >= 2:
        y["E2"] = jnp.zeros((m, m, n, n), dtype=complex)
    if order >= 3:
        y["E3"] = jnp.zeros((m, m, m, n, n), dtype=complex)
    return y


@lru_cache(maxsize=64)
def make_rhs(system, pulse, order: int, third: str = "footnote"):
    """Right-hand side ``f(t, y, theta)`` for the given system and pulse."""
    drift = jnp.asarray(system.drift)
    ctrl = jnp.asarray(system.control_stack)
    gens = jnp.asarray(np.array([c.generator for c in system.noise_channels])) \
        if system.noise_channels else jnp.zeros((0, system.n, system.n), dtype=complex)
    couplings = tuple(c.coupling for c in system.noise_channels)
    m = len(couplings)

    def rhs(t, y, theta):
        alpha = jnp.asarray(pulse.alpha(theta)).astype(complex)
        f = pulse.fields(theta, t)
        H = drift + jnp.tensordot(f.astype(complex), ctrl, axes=1) if ctrl.shape[0] else drift
        U = y["U"]
        out = {"U": -1j * alpha * (H @ U)}
        if m:
            chi = jnp.stack([jnp.asarray(c(t, f), dtype=float) for c in couplings]).astype(complex)
            Ud = U.conj().T
            dE = alpha * chi[:, None, None] * jnp.einsum("ab,ibc,cd->iad", Ud, gens, U)
        else:
            dE = jnp.zeros_like(y["E"])
        out["E"] = dE
        if order >= 2:
            E = y["E"]
            out["E2"] = (jnp.einsum("iab,jbc->ijac", dE, E) - jnp.einsum("jab,ibc->ijac", E, dE)) / 2
        if order >= 3:
            E, E2 = y["E"], y["E2"]
            if third == "footnote":
                out["E3"] = (jnp.einsum("jkab,ibc->ijkac", E2, dE)
                             - jnp.einsum("jab,ibc,kcd->ijkad", E, dE, E)
                             - jnp.einsum("kab,ibc,jcd->ijkad", E, dE, E)
                             + jnp.einsum("iab,kjbc->ijkac", dE, E2)) / 3
            else:
                c1 = jnp.einsum("iab,jkbc->ijkac", dE, E2) - jnp.einsum("jkab,ibc->ijkac", E2, dE)
                inner = jnp.einsum("kab,ibc->ikac", E, dE) - jnp.einsum("iab,kbc->ikac", dE, E)
                c2 = jnp.einsum("jab,ikbc->ijkac", E, inner) - jnp.einsum("ikab,jbc->ijkac", inner, E)
                out["E3"] = c1 / 2 + c2 / 12
        return out

    return rhs


def propagate(system, pulse, theta=None, cfg: SolverConfig = SolverConfig(), third: str = "footnote"):
    """Integrate ``U_c`` and the error integrals from 0 to ``system.T``.

    Returns a :class:`PropagationState` whose ``grid`` records the accepted
    steps (reuse it with :func:`propagate_on_grid` for gradients).
    """
    theta = pulse.theta if theta is None else theta
    rhs = make_rhs(system, pulse, cfg.order, third)
    y0 = initial_state(system.n, len(system.noise_channels), cfg.order)
    y, grid = solve_adaptive(rhs, y0, 0.0, system.T, theta, cfg)
    return PropagationState.from_tree(y, grid, pulse.alpha(theta))


def propagate_on_grid(system, pulse, theta, grid: Grid, order: int, third: str = "footnote"):
    """Jax-traceable replay of :func:`propagate`; returns the raw state dict."""
    rhs = make_rhs(system, pulse, order, third)
    y0 = initial_state(system.n, len(system.noise_channels), order)
    return solve_on_grid(rhs, y0, grid, theta)


@lru_cache(maxsize=64)
def _noisy_rhs(system, pulse):
    drift = jnp.asarray(system.drift)
    ctrl = jnp.asarray(system.control_stack)
    gens = jnp.asarray(np.array([c.generator for c in system.noise_channels])) \
        if system.noise_channels else jnp.zeros((0, system.n, system.n), dtype=complex)
    couplings = tuple(c.coupling for c in system.noise_channels)

    def rhs(t, U, args):
        theta, eps = args
        f = pulse.fields(theta, t)
        H = drift + jnp.tensordot(f, ctrl, axes=1) if ctrl.shape[0] else drift
        if couplings:
            chi = jnp.stack([jnp.asarray(c(t, f), dtype=float) for c in couplings])
            H = H + jnp.tensordot(eps * chi, gens, axes=1)
        return -1j * pulse.alpha(theta) * (H @ U)

    return rhs


def full_noisy_propagate(system, pulse, eps, theta=None, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Exact ``U(T)`` under ``H_c + sum_i eps_i chi_i L_i`` (no perturbation theory)."""
    theta = pulse.theta if theta is None else theta
    m = len(system.noise_channels)
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (m,)) if m else np.zeros(0)
    rhs = _noisy_rhs(system, pulse)
    U, _ = solve_adaptive(rhs, jnp.eye(system.n, dtype=complex), 0.0, system.T,
                          (theta, jnp.asarray(eps)), cfg)
    return np.asarray(U)
