"""Fidelity + noise-sensitivity cost and its exact discrete gradient."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np
from jax.flatten_util import ravel_pytree

from .algebra import SubspaceProjection
from .integrate import Grid, SolverConfig, _replay, solve_adaptive
from .propagation import PropagationState, initial_state, make_rhs

__all__ = [
    "CostConfig",
    "CostReport",
    "gate_fidelity",
    "sensitivity_norm",
    "cost",
    "Objective",
    "cost_gradient",
]


@dataclass(frozen=True)
class CostConfig:
    """Exponents and weights of the cost.

    ``weights`` (per channel), ``second_order_weights`` (m x m) and
    ``third_order_weights`` (m x m x m) default to each channel's own weight,
    products for the higher orders.  ``decay_enabled`` multiplies the
    fidelity term by ``exp(-sum(Gamma) * alpha * T)``.
    """

    k: int = 1
    l: int = 2
    weights: Optional[Sequence[float]] = None
    second_order_weights: Optional[Sequence] = None
    third_order_weights: Optional[Sequence] = None
    decay_enabled: bool = False

    def __post_init__(self):
        if int(self.k) < 1 or int(self.l) < 1:
            raise ValueError("exponents k and l must be >= 1")


@dataclass
class CostReport:
    total: float
    fidelity_term: float
    sensitivity_terms: list
    second_order_terms: Optional[list] = None
    third_order_terms: Optional[list] = None
    decay_factor: float = 1.0
    trace_fidelity: float = 0.0

    @property
    def infidelity(self) -> float:
        """Gate infidelity ``1 - |tr(P U P^dag U0^dag)/D|^2`` of the noiseless pulse."""
        return 1.0 - self.trace_fidelity**2

    def as_row(self) -> list:
        row = [self.total, self.fidelity_term, *self.sensitivity_terms]
        if self.second_order_terms:
            row += list(self.second_order_terms)
        if self.third_order_terms:
            row += list(self.third_order_terms)
        return row


def _proj_matrix(P):
    return P.P if isinstance(P, SubspaceProjection) else np.asarray(P)


def gate_fidelity(U, U0, P) -> float:
    """``|tr([P U P^dag] U0^dag) / D|^2``; ``U`` may already be the D x D block."""
    Pm = _proj_matrix(P)
    U = np.asarray(U)
    D = Pm.shape[0]
    if U.shape != (D, D):
        U = Pm @ U @ Pm.conj().T
    return float(abs(np.trace(U @ np.asarray(U0).conj().T) / D) ** 2)


def sensitivity_norm(E, P) -> float:
    """``|| P E - (tr[P E P^dag] / D) P ||``: logical-row part of ``E`` with its trace removed."""
    Pm = _proj_matrix(P)
    D = Pm.shape[0]
    PE = Pm @ np.asarray(E)
    M = PE - np.trace(PE @ Pm.conj().T) / D * Pm
    return float(np.sqrt(np.sum(np.abs(M) ** 2)))


def _sq_sensitivity(E, P, D):
    PE = P @ E
    M = PE - jnp.trace(PE @ P.conj().T, axis1=-2, axis2=-1)[..., None, None] / D * P
    return jnp.sum(jnp.abs(M) ** 2, axis=(-2, -1))


def _safe_pow_sq(x2, l):
    """``sqrt(x2) ** l`` with a finite gradient at zero."""
    pos = x2 > 0
    safe = jnp.where(pos, x2, 1.0)
    return jnp.where(pos, safe ** (l / 2), 0.0)


def _weights(system, cfg: CostConfig):
    m = len(system.noise_channels)
    w = np.array(cfg.weights if cfg.weights is not None else [c.weight for c in system.noise_channels],
                 dtype=float).reshape(m)
    eps = np.array([c.eps_max for c in system.noise_channels], dtype=float)
    w2 = np.array(cfg.second_order_weights, dtype=float).reshape(m, m) \
        if cfg.second_order_weights is not None else np.outer(w, w)
    w3 = np.array(cfg.third_order_weights, dtype=float).reshape(m, m, m) \
        if cfg.third_order_weights is not None else np.einsum("i,j,k->ijk", w, w, w)
    return w, w2, w3, eps


def _terms(y, system, alpha, cfg: CostConfig):
    """All cost pieces as jax scalars/arrays (traceable)."""
    P = jnp.asarray(system.projection.P)
    D = system.D
    U0 = jnp.asarray(system.target)
    tr = jnp.trace(P @ y["U"] @ P.conj().T @ U0.conj().T)
    ftr = jnp.abs(tr) / D
    decay = 1.0
    if cfg.decay_enabled and system.decay_rates:
        decay = jnp.exp(-sum(system.decay_rates) * alpha * system.T)
    fid = 1.0 - ftr ** cfg.k * decay
    w, w2, w3, eps = _weights(system, cfg)
    out = {"fidelity_term": fid, "trace_fidelity": ftr, "decay": jnp.asarray(decay, dtype=float)}
    total = fid
    if len(eps):
        pref = w * eps / D
        sens = _safe_pow_sq(pref**2 * _sq_sensitivity(y["E"], P, D), cfg.l)
        out["sens"] = sens
        total = total + jnp.sum(sens)
        if "E2" in y:
            pref2 = w2 * np.outer(eps, eps) / D
            s2 = _safe_pow_sq(pref2**2 * _sq_sensitivity(y["E2"], P, D), cfg.l)
            out["sens2"] = s2.reshape(-1)
            total = total + jnp.sum(s2)
        if "E3" in y:
            pref3 = w3 * np.einsum("i,j,k->ijk", eps, eps, eps) / D
            s3 = _safe_pow_sq(pref3**2 * _sq_sensitivity(y["E3"], P, D), cfg.l)
            out["sens3"] = s3.reshape(-1)
            total = total + jnp.sum(s3)
    out["total"] = total
    return out


def _residuals(y, system, cfg: CostConfig):
    """Real residual vector whose pieces vanish exactly where the cost terms do.

    The fidelity block is ``sqrt(k / 2D) (U P^dag - e^{i phi} P^dag U0)``
    with the phase ``phi`` of the trace overlap.  It keeps the leaked columns,
    so its squared norm is exactly ``k (1 - F)`` for unitary ``U``.  Each
    sensitivity block is the trace-removed ``P E`` scaled by its prefactor,
    whose squared norm is the ``l = 2`` term.
    """
    P = jnp.asarray(system.projection.P)
    D = system.D
    U0 = jnp.asarray(system.target)
    UP = y["U"] @ P.conj().T
    tr = jnp.trace(P @ UP @ U0.conj().T)
    phase = tr / jnp.abs(tr)
    parts = [jnp.sqrt(cfg.k / (2.0 * D)) * (UP - phase * P.conj().T @ U0).ravel()]
    w, w2, w3, eps = _weights(system, cfg)

    def block(E, pref):
        PE = P @ E
        M = PE - jnp.trace(PE @ P.conj().T, axis1=-2, axis2=-1)[..., None, None] / D * P
        return (jnp.asarray(pref)[..., None, None] * M).ravel()

    if len(eps):
        parts.append(block(y["E"], w * eps / D))
        if "E2" in y:
            parts.append(block(y["E2"], w2 * np.outer(eps, eps) / D))
        if "E3" in y:
            parts.append(block(y["E3"], w3 * np.einsum("i,j,k->ijk", eps, eps, eps) / D))
    r = jnp.concatenate(parts)
    return jnp.concatenate([r.real, r.imag])


def _report(terms) -> CostReport:
    g = lambda k: None if k not in terms else [float(v) for v in np.asarray(terms[k]).ravel()]
    return CostReport(
        total=float(terms["total"]),
        fidelity_term=float(terms["fidelity_term"]),
        sensitivity_terms=g("sens") or [],
        second_order_terms=g("sens2"),
        third_order_terms=g("sens3"),
        decay_factor=float(terms["decay"]),
        trace_fidelity=float(terms["trace_fidelity"]),
    )


def cost(state: PropagationState, system, cfg: CostConfig = CostConfig()) -> CostReport:
    """Evaluate the cost from a finished propagation."""
    y = {"U": state.Uc, "E": state.E}
    if state.E2 is not None:
        y["E2"] = state.E2
    if state.E3 is not None:
        y["E3"] = state.E3
    return _report(_terms({k: jnp.asarray(v) for k, v in y.items()}, system, state.alpha, cfg))


class Objective:
    """Cost of a pulse as a function of its ``theta``, with gradients.

    The adaptive solve fixes the step sequence; the gradient is that of the
    replayed discrete solution (reverse mode through every Runge-Kutta
    stage).  ``flat`` exposes the same thing on a 1-D parameter vector.
    """

    def __init__(self, system, pulse, cost_cfg: CostConfig = CostConfig(),
                 solver_cfg: SolverConfig = SolverConfig(), third: str = "footnote"):
        self.system = system
        self.pulse = pulse
        self.cost_cfg = cost_cfg
        self.solver_cfg = solver_cfg
        self.rhs = make_rhs(system, pulse, solver_cfg.order, third)
        self.y0 = initial_state(system.n, len(system.noise_channels), solver_cfg.order)
        _, self._unravel = ravel_pytree(pulse.theta)

        def total_on_grid(theta, ts, hs):
            y = _replay(self.rhs, self.y0, ts, hs, theta)
            terms = _terms(y, system, pulse.alpha(theta), cost_cfg)
            return terms["total"], terms

        def flat_residuals(x, ts, hs):
            y = _replay(self.rhs, self.y0, ts, hs, self._unravel(x))
            return _residuals(y, system, cost_cfg)

        self._value = jax.jit(total_on_grid)
        self._value_and_grad = jax.jit(jax.value_and_grad(total_on_grid, has_aux=True))
        self._residuals = jax.jit(flat_residuals)
        self._jacobian = jax.jit(jax.jacrev(flat_residuals))
        self.n_evals = 0

    def grid(self, theta) -> Grid:
        _, grid = solve_adaptive(self.rhs, self.y0, 0.0, self.system.T, theta, self.solver_cfg)
        return grid

    def state(self, theta) -> PropagationState:
        y, grid = solve_adaptive(self.rhs, self.y0, 0.0, self.system.T, theta, self.solver_cfg)
        return PropagationState.from_tree(y, grid, self.pulse.alpha(theta))

    def report(self, theta, grid: Optional[Grid] = None) -> CostReport:
        grid = self.grid(theta) if grid is None else grid
        _, terms = self._value(theta, grid.ts, grid.hs)
        self.n_evals += 1
        return _report(terms)

    def value_and_grad(self, theta, grid: Optional[Grid] = None):
        """``(CostReport, gradient pytree)``; raises on a non-finite gradient."""
        grid = self.grid(theta) if grid is None else grid
        (_, terms), g = self._value_and_grad(theta, grid.ts, grid.hs)
        self.n_evals += 1
        flat_g, _ = ravel_pytree(g)
        if not np.all(np.isfinite(np.asarray(flat_g))):
            raise FloatingPointError("non-finite cost gradient")
        return _report(terms), g

    # flat-vector interface used by the optimisers
    def ravel(self, theta) -> np.ndarray:
        return np.asarray(ravel_pytree(theta)[0])

    def unravel(self, x):
        return self._unravel(jnp.asarray(x))

    def flat_value(self, x, grid: Optional[Grid] = None) -> float:
        return self.report(self.unravel(x), grid).total

    def flat_value_and_grad(self, x):
        rep, g = self.value_and_grad(self.unravel(x))
        return rep, np.asarray(ravel_pytree(g)[0])

    def flat_residuals(self, x, grid: Grid) -> np.ndarray:
        """Residual vector (see :func:`_residuals`) on a fixed step sequence."""
        return np.asarray(self._residuals(jnp.asarray(x), grid.ts, grid.hs))

    def flat_jacobian(self, x, grid: Grid) -> np.ndarray:
        return np.asarray(self._jacobian(jnp.asarray(x), grid.ts, grid.hs))


def cost_gradient(system, pulse, theta=None, cost_cfg: CostConfig = CostConfig(),
                  solver_cfg: SolverConfig = SolverConfig()):
    """Gradient of the total cost with respect to every entry of ``theta``."""
    theta = pulse.theta if theta is None else theta
    _, g = Objective(system, pulse, cost_cfg, solver_cfg).value_and_grad(theta)
    return g
