"""Fully connected tanh network producing the smooth control curve p(t)."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import jax.numpy as jnp
import numpy as np

from .pulses import Pulse

__all__ = [
    "Layer",
    "TrainableParameters",
    "mlp_new",
    "mlp_forward",
    "parameter_count",
    "NeuralPulse",
    "save_parameters",
    "load_parameters",
    "load_pulse",
]


class Layer(NamedTuple):
    W: jnp.ndarray  # (out, in)
    b: jnp.ndarray  # (out,)


class TrainableParameters(NamedTuple):
    """Network layers plus the unconstrained log of the time scale alpha."""

    layers: tuple
    log_alpha: jnp.ndarray

    @property
    def alpha(self):
        return jnp.exp(self.log_alpha)

    @property
    def sizes(self) -> list:
        return [int(self.layers[0].W.shape[1])] + [int(L.W.shape[0]) for L in self.layers]


def parameter_count(hidden_sizes: Sequence[int], out_dim: int, in_dim: int = 1) -> int:
    sizes = [in_dim, *hidden_sizes, out_dim]
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def mlp_new(hidden_sizes: Sequence[int], out_dim: int, seed: int, alpha: float = 1.0) -> TrainableParameters:
    """Glorot-uniform weights, fan-in uniform biases, from ``seed``."""
    if any(h < 1 for h in hidden_sizes) or out_dim < 1:
        raise ValueError("layer sizes must be >= 1")
    rng = np.random.default_rng(seed)
    sizes = [1, *hidden_sizes, out_dim]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-lim, lim, size=(fan_out, fan_in))
        b = rng.uniform(-1.0, 1.0, size=fan_out) / np.sqrt(fan_in)
        layers.append(Layer(jnp.asarray(W), jnp.asarray(b)))
    return TrainableParameters(tuple(layers), jnp.asarray(np.log(alpha)))


def mlp_forward(layers, x):
    """Apply the network to a scalar input; tanh on every layer but the last."""
    h = jnp.atleast_1d(x)
    for L in layers[:-1]:
        h = jnp.tanh(L.W @ h + L.b)
    L = layers[-1]
    return L.W @ h + L.b


@dataclass(frozen=True, eq=False)
class NeuralPulse(Pulse):
    """``t -> p(x(t)) -> fields`` through a system's parameterisation.

    The network input ``x`` is the dimensionless time ``t / time_unit``
    (``input_map="tau"``) or ``2t/T - 1`` (``input_map="symmetric"``).
    """

    parameterize: object
    T: float
    theta: TrainableParameters
    n_fields: int
    time_unit: float = 1.0
    input_map: str = "tau"

    def __post_init__(self):
        if self.input_map not in ("tau", "symmetric"):
            raise ValueError("input_map must be 'tau' or 'symmetric'")

    @classmethod
    def for_system(cls, system, theta: TrainableParameters, input_map: str = "tau") -> "NeuralPulse":
        if theta.sizes[-1] != system.n_params:
            raise ValueError(f"network outputs {theta.sizes[-1]} values, "
                             f"system {system.name!r} expects {system.n_params}")
        return cls(system.parameterize, system.T, theta, system.n_fields, system.time_unit, input_map)

    def network_input(self, t):
        if self.input_map == "tau":
            return t / self.time_unit
        return 2.0 * t / self.T - 1.0

    def fields(self, theta, t):
        p = mlp_forward(theta.layers, self.network_input(t))
        return self.parameterize(t, p)

    def alpha(self, theta):
        return jnp.exp(theta.log_alpha)


# -- serialisation ------------------------------------------------------------

def _flatten(theta: TrainableParameters) -> list:
    vals = []
    for L in theta.layers:
        vals += np.asarray(L.W, dtype=float).ravel().tolist()
        vals += np.asarray(L.b, dtype=float).ravel().tolist()
    vals.append(float(theta.log_alpha))
    return vals


def save_parameters(theta: TrainableParameters, path, seed=None, input_map: str = "tau", **meta) -> None:
    """Write layer sizes, seed and the flat parameter list as JSON.

    Python's float repr round-trips, so reloading is bit-exact.
    """
    doc = {
        "format": "robustpulse-mlp/1",
        "sizes": theta.sizes,
        "activation": "tanh",
        "output": "linear",
        "input_map": input_map,
        "seed": seed,
        "meta": meta,
        "values": _flatten(theta),
    }
    Path(path).write_text(json.dumps(doc))


def load_parameters(path) -> TrainableParameters:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "robustpulse-mlp/1":
        raise ValueError(f"{path} is not a network parameter file")
    sizes = doc["sizes"]
    vals = np.asarray(doc["values"], dtype=float)
    expected = parameter_count(sizes[1:-1], sizes[-1], sizes[0]) + 1
    if vals.size != expected:
        raise ValueError(f"parameter file holds {vals.size} values, layer sizes imply {expected}")
    layers, pos = [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = vals[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in)
        pos += fan_in * fan_out
        b = vals[pos:pos + fan_out]
        pos += fan_out
        layers.append(Layer(jnp.asarray(W), jnp.asarray(b)))
    return TrainableParameters(tuple(layers), jnp.asarray(vals[pos]))


def load_pulse(path, system) -> NeuralPulse:
    """Network pulse for ``system`` from a parameter file."""
    doc = json.loads(Path(path).read_text())
    return NeuralPulse.for_system(system, load_parameters(path), doc.get("input_map", "tau"))
