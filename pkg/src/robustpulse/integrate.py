"""Dormand-Prince 5(4) with PI step control, written for jax pytrees.

Two entry points share one stepper:

``solve_adaptive``
    the usual accept/reject loop (a ``lax.while_loop``); it records every
    accepted ``(t, h)`` pair.
``solve_on_grid``
    replays a recorded grid with a ``lax.scan``.  It is reverse-mode
    differentiable, which is how parameter gradients are obtained: the
    derivative of the discrete solution with the step sequence held fixed.

Step sizes are padded with zeros up to a bucketed length so the replay only
recompiles when the step count crosses a bucket boundary; a zero step is an
exact no-op.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import jax
import jax.numpy as jnp
import numpy as np
from jax import lax
from jax.tree_util import tree_leaves, tree_map

__all__ = ["SolverConfig", "Grid", "solve_adaptive", "solve_on_grid", "PropagationError",
           "DivergenceError", "NumericError"]


class PropagationError(RuntimeError):
    pass


class DivergenceError(PropagationError):
    """Step budget exhausted before reaching the final time."""


class NumericError(PropagationError):
    """Non-finite state or step size underflow."""


@dataclass(frozen=True)
class SolverConfig:
    """Integration settings.

    ``rtol`` and ``atol`` are targets for the error at the final time.  Local
    errors add up over the few hundred steps of a typical gate, so the step
    controller runs at the tolerances divided by ``local_factor``.
    """

    rtol: float = 1e-9
    atol: float = 1e-9
    max_steps: int = 20000
    order: int = 1
    local_factor: float = 50.0

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.local_factor < 1:
            raise ValueError("local_factor must be >= 1")
        if self.order not in (1, 2, 3):
            raise ValueError("Magnus order must be 1, 2 or 3")


@dataclass(frozen=True)
class Grid:
    """Accepted step sequence of an adaptive solve (zero-padded)."""

    ts: np.ndarray
    hs: np.ndarray
    n_steps: int
    n_rejected: int


# Dormand & Prince (1980), 5th-order solution with FSAL.
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = _A[6] + (0.0,)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


def _axpy(y, h, coeffs, ks):
    """``y + h * sum_j coeffs[j] * ks[j]`` skipping zero coefficients."""
    def comb(y_leaf, *k_leaves):
        acc = y_leaf
        for c, k in zip(coeffs, k_leaves):
            if c != 0.0:
                acc = acc + (h * c) * k
        return acc
    return tree_map(comb, y, *ks)


def _stages(f, t, y, h, k1, args):
    ks = [k1]
    for i in range(1, 6):
        yi = _axpy(y, h, _A[i], ks)
        ks.append(f(t + _C[i] * h, yi, args))
    y_new = _axpy(y, h, _A[6], ks)
    return y_new, ks


def _rk_step_plain(f, t, y, h, args):
    k1 = f(t, y, args)
    y_new, _ = _stages(f, t, y, h, k1, args)
    return y_new


def _error_norm(err, y, y_new, rtol, atol):
    tot, cnt = 0.0, 0
    for e, a, b in zip(tree_leaves(err), tree_leaves(y), tree_leaves(y_new)):
        sc = atol + rtol * jnp.maximum(jnp.abs(a), jnp.abs(b))
        tot = tot + jnp.sum(jnp.abs(e / sc) ** 2)
        cnt += e.size
    return jnp.sqrt(tot / cnt)


def _initial_step(f, t0, y0, f0, args, rtol, atol, span):
    def nrm(z):
        tot, cnt = 0.0, 0
        for a, b in zip(tree_leaves(z), tree_leaves(y0)):
            tot = tot + jnp.sum(jnp.abs(a / (atol + rtol * jnp.abs(b))) ** 2)
            cnt += a.size
        return jnp.sqrt(tot / cnt)

    d0, d1 = nrm(y0), nrm(f0)
    h0 = jnp.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / d1)
    h0 = jnp.minimum(h0, span)
    y1 = tree_map(lambda a, b: a + h0 * b, y0, f0)
    f1 = f(t0 + h0, y1, args)
    d2 = nrm(tree_map(lambda a, b: a - b, f1, f0)) / h0
    h1 = jnp.where(jnp.maximum(d1, d2) <= 1e-15, jnp.maximum(1e-6, h0 * 1e-3),
                   (0.01 / jnp.maximum(d1, d2)) ** (1 / 5))
    return jnp.minimum(jnp.minimum(100 * h0, h1), span)


_SAFE, _FAC_MIN, _FAC_MAX, _BETA = 0.9, 0.2, 10.0, 0.04


@partial(jax.jit, static_argnames=("f", "max_steps"))
def _adaptive(f, y0, t0, t1, args, rtol, atol, max_steps):
    span = t1 - t0
    f0 = f(t0, y0, args)
    h_init = _initial_step(f, t0, y0, f0, args, rtol, atol, span)
    expo1 = 0.2 - 0.75 * _BETA

    def cond(c):
        t, _, _, _, _, n_acc, n_rej, _, _, status = c
        return (t < t1) & (status == 0) & (n_acc + n_rej < 4 * max_steps)

    def body(c):
        t, y, h, k1, err_old, n_acc, n_rej, ts, hs, status = c
        last = t + h >= t1 - 1e-13 * jnp.abs(span)
        h_eff = jnp.where(last, t1 - t, h)
        y_new, ks = _stages(f, t, y, h_eff, k1, args)
        k7 = f(t + h_eff, y_new, args)
        err_vec = _axpy(tree_map(jnp.zeros_like, y), h_eff, _E, ks + [k7])
        err = _error_norm(err_vec, y, y_new, rtol, atol)
        finite = jnp.isfinite(err)
        err = jnp.where(finite, err, 1e10)
        accept = finite & (err <= 1.0)

        fac11 = err ** expo1
        fac = fac11 / err_old ** _BETA
        fac = jnp.clip(fac / _SAFE, 1 / _FAC_MAX, 1 / _FAC_MIN)
        h_acc = h_eff / fac
        h_rej = h_eff / jnp.minimum(1 / _FAC_MIN, fac11 / _SAFE)

        overflow = accept & (n_acc >= max_steps)
        idx = jnp.minimum(n_acc, max_steps - 1)
        ts = jnp.where(accept, ts.at[idx].set(t), ts)
        hs = jnp.where(accept, hs.at[idx].set(h_eff), hs)
        t_next = jnp.where(accept, jnp.where(last, t1, t + h_eff), t)
        y_next = tree_map(lambda a, b: jnp.where(accept, a, b), y_new, y)
        k_next = tree_map(lambda a, b: jnp.where(accept, a, b), k7, k1)
        h_next = jnp.where(accept, h_acc, h_rej)
        tiny = h_next < 1e-14 * jnp.abs(span)
        status = jnp.where(overflow, 1, jnp.where(tiny, 2, status))
        return (t_next, y_next, h_next, k_next,
                jnp.where(accept, jnp.maximum(err, 1e-4), err_old),
                n_acc + accept, n_rej + (~accept), ts, hs, status)

    ts = jnp.zeros(max_steps)
    hs = jnp.zeros(max_steps)
    init = (jnp.asarray(t0, dtype=float), y0, h_init, f0, jnp.asarray(1e-4),
            jnp.asarray(0), jnp.asarray(0), ts, hs, jnp.asarray(0))
    out = lax.while_loop(cond, body, init)
    t, y, _, _, _, n_acc, n_rej, ts, hs, status = out
    status = jnp.where((status == 0) & (t < t1), 1, status)
    finite = jnp.all(jnp.array([jnp.all(jnp.isfinite(l)) for l in tree_leaves(y)]))
    status = jnp.where(finite, status, 2)
    return y, ts, hs, n_acc, n_rej, status


def _bucket(n: int) -> int:
    """Round ``n`` up to 1, 2, 3 or 4 times a power of two ... keeps padding < 34%."""
    if n <= 64:
        return 64
    p = 1 << (n.bit_length() - 2)
    return -(-n // p) * p


def solve_adaptive(f, y0, t0: float, t1: float, args, cfg: SolverConfig):
    """Adaptive solve; returns ``(y(t1), Grid)``.

    ``f(t, y, args)`` must be a pure jax function; it is treated as a static
    argument, so pass the same callable object to reuse compiled code.
    """
    y, ts, hs, n_acc, n_rej, status = _adaptive(f, y0, float(t0), float(t1), args, cfg.rtol / cfg.local_factor,
                                                cfg.atol / cfg.local_factor, cfg.max_steps)
    status = int(status)
    if status == 1:
        raise DivergenceError(f"no convergence within {cfg.max_steps} steps")
    if status == 2:
        raise NumericError("non-finite state or step-size underflow")
    n = int(n_acc)
    m = _bucket(n)
    ts_np = np.zeros(m)
    hs_np = np.zeros(m)
    ts_np[:n] = np.asarray(ts[:n])
    hs_np[:n] = np.asarray(hs[:n])
    ts_np[n:] = float(t1)
    return y, Grid(ts_np, hs_np, n, int(n_rej))


@partial(jax.jit, static_argnames=("f",))
def _replay(f, y0, ts, hs, args):
    def step(y, th):
        t, h = th
        return _rk_step_plain(f, t, y, h, args), None

    y, _ = lax.scan(step, y0, (ts, hs))
    return y


def solve_on_grid(f, y0, grid: Grid, args):
    """Replay a recorded step sequence (differentiable in ``y0`` and ``args``)."""
    return _replay(f, y0, jnp.asarray(grid.ts), jnp.asarray(grid.hs), args)
