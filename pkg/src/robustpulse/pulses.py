"""Pulse objects: pure maps ``(theta, t) -> field vector``.

A pulse is static (hashable by identity, safe to close over inside jitted
code); the numbers it depends on live in the ``theta`` pytree, which is what
gets differentiated.  Every pulse also carries a time scale ``alpha(theta)``
that multiplies the whole equation of motion; it is 1 except for trainable
neural pulses.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import jax
import jax.numpy as jnp
import numpy as np

from .chebyshev import clenshaw

__all__ = [
    "Pulse",
    "CallablePulse",
    "ConstantPulse",
    "ChebyshevFieldPulse",
    "FourierFieldPulse",
    "zero_pulse",
    "sample_fields",
]


class Pulse:
    n_fields: int
    theta: Any

    def fields(self, theta, t):
        raise NotImplementedError

    def alpha(self, theta):
        return 1.0

    def duration(self, theta, T: float) -> float:
        """Physical gate time once ``alpha`` is applied."""
        return float(self.alpha(theta)) * T


@dataclass(frozen=True, eq=False)
class CallablePulse(Pulse):
    """Wraps ``fn(theta, t) -> fields``; handy for tests and analytic pulses."""

    fn: Callable
    n_fields: int
    theta: Any = ()

    def fields(self, theta, t):
        return jnp.atleast_1d(self.fn(theta, t))


@dataclass(frozen=True, eq=False)
class ConstantPulse(Pulse):
    """Time-independent fields; ``theta`` is the field vector itself."""

    theta: Any

    @property
    def n_fields(self):
        return int(np.size(self.theta))

    def fields(self, theta, t):
        return jnp.atleast_1d(jnp.asarray(theta, dtype=float))


def zero_pulse(n_fields: int) -> ConstantPulse:
    return ConstantPulse(np.zeros(n_fields))


@dataclass(frozen=True, eq=False)
class ChebyshevFieldPulse(Pulse):
    """Fields given as Chebyshev series on ``[0, T]`` (coefficients in theta).

    ``theta`` has shape ``(n_fields, n_terms)``.
    """

    theta: Any
    T: float

    @property
    def n_fields(self):
        return int(np.shape(self.theta)[0])

    def fields(self, theta, t):
        return clenshaw(jnp.asarray(theta), 2.0 * t / self.T - 1.0)


@dataclass(frozen=True, eq=False)
class FourierFieldPulse(Pulse):
    """Band-limited trigonometric series on ``[0, T]``.

    ``theta = (a, b)`` with shapes ``(n_fields, K+1)`` and ``(n_fields, K+1)``;
    ``f(t) = sum_k a_k cos(2 pi k t/T) + b_k sin(2 pi k t/T)``.
    """

    theta: Any
    T: float

    @property
    def n_fields(self):
        return int(np.shape(self.theta[0])[0])

    def fields(self, theta, t):
        a, b = theta
        k = jnp.arange(a.shape[-1])
        phase = 2 * jnp.pi * k * t / self.T
        return a @ jnp.cos(phase) + b @ jnp.sin(phase)


def sample_fields(pulse: Pulse, ts, theta=None) -> np.ndarray:
    """Field values at the times ``ts``; shape ``(len(ts), n_fields)``."""
    theta = pulse.theta if theta is None else theta
    ts = jnp.asarray(ts, dtype=float)
    vals = jax.vmap(lambda t: pulse.fields(theta, t))(ts)
    return np.asarray(vals)
