"""Post-hoc assessment: noise sweeps, Magnus-order scaling, bandwidth, Lindblad."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import jax.numpy as jnp
import numpy as np

from .integrate import SolverConfig, solve_adaptive
from .pulses import FourierFieldPulse, sample_fields
from .propagation import full_noisy_propagate

__all__ = [
    "THRESHOLD",
    "SweepResult",
    "infidelity",
    "noise_sweep",
    "threshold_crossing",
    "magnus_scaling_exponent",
    "bandwidth_limit",
    "LindbladConfig",
    "lindblad_propagate",
    "averaged_fidelity",
    "leakage",
]

THRESHOLD = 1e-4


def infidelity(A, B) -> float:
    """``1 - |tr(A B^dag) / D|^2`` for D x D blocks.

    When ``A B^dag`` is unitary the value is computed from its eigenphases,
    ``(2/D^2) sum_jk sin^2((phi_j - phi_k)/2)``, which stays accurate far
    below the 1e-16 floor of the direct formula.
    """
    A = np.asarray(A)
    B = np.asarray(B)
    D = A.shape[0]
    V = A @ B.conj().T
    if np.allclose(V @ V.conj().T, np.eye(D), atol=1e-10):
        phi = np.angle(np.linalg.eigvals(V))
        diff = phi[:, None] - phi[None, :]
        return float(2.0 * np.sum(np.sin(diff / 2) ** 2) / D**2)
    return float(1.0 - abs(np.trace(V) / D) ** 2)


@dataclass
class SweepResult:
    eps_values: np.ndarray
    infidelities: np.ndarray
    threshold_crossing: float
    baseline: float
    bounded: bool = True  # False when the curve never crosses inside the grid

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "infidelity"])
            for e, v in zip(self.eps_values, self.infidelities):
                w.writerow([repr(float(e)), repr(float(v))])


def threshold_crossing(eps, infid, threshold: float = THRESHOLD):
    """Largest ``c`` such that infidelity stays below ``threshold`` for ``|eps| <= c``.

    Walks outwards from the point nearest zero on each side and, where the
    curve first exceeds the threshold, interpolates with the power law through
    the two bracketing points (a quadratic when the inner point is the
    origin); the smaller of the two sides is returned.  Returns
    ``(c, bounded)``.
    """
    eps = np.asarray(eps, dtype=float)
    infid = np.asarray(infid, dtype=float)
    order = np.argsort(eps)
    eps, infid = eps[order], infid[order]
    i0 = int(np.argmin(np.abs(eps)))
    if infid[i0] > threshold:
        return 0.0, True
    sides = []
    bounded = True
    for step in (1, -1):
        i = i0
        while 0 <= i + step < len(eps) and infid[i + step] <= threshold:
            i += step
        if not 0 <= i + step < len(eps):
            sides.append(abs(eps[i]))
            if abs(eps[i]) > 0 or len(eps) == 1:
                bounded = False if step == 1 or eps[0] < 0 else bounded
            continue
        a, b = abs(eps[i]), abs(eps[i + step])
        fa, fb = infid[i], infid[i + step]
        if a > 0 and fa > 0:
            # power law through the bracketing points
            p = np.log(fb / fa) / np.log(b / a)
            sides.append(a * (threshold / fa) ** (1.0 / p) if p > 0 else a)
        else:
            # from the origin: assume quadratic growth
            sides.append(b * np.sqrt(threshold / fb))
    return float(min(sides)), bounded


def noise_sweep(system, pulse, eps_grid, theta=None, channels: Optional[Sequence[int]] = None,
                cfg: SolverConfig = SolverConfig(), threshold: float = THRESHOLD,
                jobs: int = 1) -> SweepResult:
    """Exact gate infidelity under quasistatic noise of each strength in ``eps_grid``.

    ``channels`` selects which noise channels receive ``eps`` (default: all).
    Points are independent; ``jobs > 1`` evaluates them on a thread pool,
    results are assembled in grid order.
    """
    eps_grid = np.asarray(eps_grid, dtype=float)
    m = len(system.noise_channels)
    mask = np.zeros(m)
    mask[list(range(m) if channels is None else channels)] = 1.0
    P = system.projection.P
    U0 = system.target

    def one(e):
        U = full_noisy_propagate(system, pulse, e * mask, theta, cfg)
        return infidelity(P @ U @ P.conj().T, U0)

    if jobs > 1:
        one(0.0)  # compile once before fanning out
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            vals = list(ex.map(one, eps_grid))
    else:
        vals = [one(e) for e in eps_grid]
    vals = np.clip(np.asarray(vals), 0.0, 1.0)
    i0 = np.argmin(np.abs(eps_grid))
    baseline = float(vals[i0]) if eps_grid[i0] == 0 else one(0.0)
    c, bounded = threshold_crossing(eps_grid, vals, threshold)
    return SweepResult(eps_grid, vals, c, baseline, bounded)


def magnus_scaling_exponent(system, pulse, eps_grid_small, theta=None, floor: float = 1e-14,
                            reference: str = "noiseless", channels: Optional[Sequence[int]] = None,
                            cfg: SolverConfig = SolverConfig(rtol=1e-12, atol=1e-12),
                            min_decades: float = 1.0, return_points: bool = False):
    """Log-log slope of infidelity against ``eps``.

    With ``reference="noiseless"`` the infidelity is measured against the
    pulse's own gate ``P U(0) P^dag``, so a small baseline error does not mask
    the noise scaling; ``"target"`` uses the target gate.  Points below
    ``floor`` are dropped.
    """
    eps = np.abs(np.asarray(eps_grid_small, dtype=float))
    eps = eps[eps > 0]
    if eps.size < 2 or np.log10(eps.max() / eps.min()) < min_decades - 1e-9:
        raise ValueError(f"need at least two points spanning {min_decades} decades")
    m = len(system.noise_channels)
    mask = np.zeros(m)
    mask[list(range(m) if channels is None else channels)] = 1.0
    P = system.projection.P
    if reference == "noiseless":
        ref = P @ full_noisy_propagate(system, pulse, 0.0 * mask, theta, cfg) @ P.conj().T
    elif reference == "target":
        ref = system.target
    else:
        raise ValueError("reference must be 'noiseless' or 'target'")
    vals = np.array([infidelity(P @ full_noisy_propagate(system, pulse, e * mask, theta, cfg) @ P.conj().T, ref)
                     for e in eps])
    keep = vals > floor
    if keep.sum() < 2:
        raise ValueError("fewer than two points above the infidelity floor")
    slope = float(np.polyfit(np.log(eps[keep]), np.log(vals[keep]), 1)[0])
    if return_points:
        return slope, eps, vals
    return slope


def bandwidth_limit(pulse, delta_f: float, T: Optional[float] = None, theta=None, n_samples: int = 4096,
                    window: str = "hard") -> FourierFieldPulse:
    """Remove spectral content above ``delta_f`` (cycles per unit of the pulse's time axis).

    The fields are sampled on ``n_samples`` uniform points of ``[0, T)``,
    transformed with a real FFT, and every harmonic ``k > delta_f * T`` is
    dropped (``window="hard"``) or the kept ones are tapered with a Hann
    window (``window="hann"``).  The result is a trigonometric pulse on the
    same time axis; the hard filter is idempotent.
    """
    if not delta_f > 0:
        raise ValueError("delta_f must be positive")
    T = float(getattr(pulse, "T", None) if T is None else T)
    theta = pulse.theta if theta is None else theta
    t = np.arange(n_samples) * T / n_samples
    f = np.asarray(sample_fields(pulse, t, theta)).T  # (n_fields, n_samples)
    X = np.fft.rfft(f, axis=-1)
    kmax = int(np.floor(delta_f * T + 1e-9))
    kmax = min(kmax, n_samples // 2 - 1)
    X = X[:, :kmax + 1]
    if window == "hann":
        X = X * np.cos(np.pi * np.arange(kmax + 1) / (2 * (kmax + 1))) ** 2
    elif window != "hard":
        raise ValueError("window must be 'hard' or 'hann'")
    a = 2 * X.real / n_samples
    b = -2 * X.imag / n_samples
    a[:, 0] /= 2
    b[:, 0] = 0.0
    return FourierFieldPulse((jnp.asarray(a), jnp.asarray(b)), T)


# -- open-system evolution --------------------------------------------------------

@dataclass(frozen=True)
class LindbladConfig:
    """Relaxation and pure-dephasing times in the system's internal time units.

    ``None`` switches a process off.
    """

    T1: Optional[float] = None
    Tphi: Optional[float] = None

    def __post_init__(self):
        for v in (self.T1, self.Tphi):
            if v is not None and not v > 0:
                raise ValueError("T1 and Tphi must be positive")

    @classmethod
    def from_dimensionless(cls, system, T1: Optional[float] = None, Tphi: Optional[float] = None):
        """Times given in units of the system's time unit (e.g. ``T1 |Delta| / h``)."""
        u = system.time_unit
        return cls(None if T1 is None else T1 * u, None if Tphi is None else Tphi * u)

    @staticmethod
    def dephasing_time(T1: float, T2: float) -> float:
        """``1/Tphi = 1/T2 - 1/(2 T1)``."""
        return 1.0 / (1.0 / T2 - 1.0 / (2.0 * T1))


@lru_cache(maxsize=32)
def _lindblad_rhs(system, pulse, lcfg: LindbladConfig):
    drift = jnp.asarray(system.drift)
    ctrl = jnp.asarray(system.control_stack)
    jumps = []
    if lcfg.T1 is not None or lcfg.Tphi is not None:
        if system.lowering is None:
            raise ValueError(f"system {system.name!r} defines no lowering operator")
        a = np.asarray(system.lowering)
        if lcfg.T1 is not None:
            jumps.append((a, 1.0 / lcfg.T1))
        if lcfg.Tphi is not None:
            jumps.append((a.conj().T @ a, 1.0 / lcfg.Tphi))
    Ls = [jnp.asarray(L) for L, _ in jumps]
    rates = [r for _, r in jumps]
    LdLs = [jnp.asarray(np.asarray(L).conj().T @ np.asarray(L)) for L, _ in jumps]

    def rhs(t, rho, theta):
        f = pulse.fields(theta, t)
        H = drift + jnp.tensordot(f.astype(complex), ctrl, axes=1) if ctrl.shape[0] else drift
        out = -1j * (H @ rho - rho @ H)
        for L, LdL, g in zip(Ls, LdLs, rates):
            out = out + g * (L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL))
        return jnp.asarray(pulse.alpha(theta)).astype(complex) * out

    return rhs


def lindblad_propagate(system, pulse, lcfg: LindbladConfig, rho0, theta=None,
                       cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Integrate the master equation from ``rho0`` over the gate.

    ``rho0`` may be a stack ``(k, n, n)``; by linearity non-physical inputs
    such as Pauli operators are propagated as well, which is how the channel
    is applied to a basis.
    """
    theta = pulse.theta if theta is None else theta
    rho0 = np.asarray(rho0, dtype=complex)
    rhs = _lindblad_rhs(system, pulse, lcfg)
    batched = rho0.ndim == 3
    if batched:
        stack_rhs = _batched(rhs)
        y, _ = solve_adaptive(stack_rhs, jnp.asarray(rho0), 0.0, system.T, theta, cfg)
    else:
        y, _ = solve_adaptive(rhs, jnp.asarray(rho0), 0.0, system.T, theta, cfg)
    return np.asarray(y)


@lru_cache(maxsize=32)
def _batched(rhs):
    import jax

    return jax.vmap(rhs, in_axes=(None, 0, None))


def averaged_fidelity(system, pulse, lcfg: LindbladConfig, theta=None, reference: str = "noiseless",
                      cfg: SolverConfig = SolverConfig()) -> float:
    """State-averaged gate fidelity of a two-dimensional logical subspace.

    ``1/2 + (1/12) sum_i tr[Q(s_i) U s_i U^dag]`` over the Pauli matrices
    ``s_i`` embedded with zeros on leakage levels, where ``Q`` is the
    master-equation channel.  ``U`` is the pulse's own noiseless logical
    block (``reference="noiseless"``) or the target gate (``"target"``).
    """
    if system.D != 2:
        raise NotImplementedError("averaged fidelity is defined here for a 2-level logical subspace")
    P = system.projection.P
    sig = [np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.array([[1, 0], [0, -1]])]
    embedded = np.stack([P.conj().T @ s @ P for s in sig]).astype(complex)
    Q = lindblad_propagate(system, pulse, lcfg, embedded, theta, cfg)
    if reference == "noiseless":
        U = P @ full_noisy_propagate(system, pulse, np.zeros(len(system.noise_channels)), theta, cfg) @ P.conj().T
    elif reference == "target":
        U = np.asarray(system.target)
    else:
        raise ValueError("reference must be 'noiseless' or 'target'")
    total = sum(np.trace(P @ Qi @ P.conj().T @ U @ s @ U.conj().T) for Qi, s in zip(Q, sig))
    return float(0.5 + np.real(total) / 12.0)


def leakage(system, pulse, theta=None, cfg: SolverConfig = SolverConfig()) -> float:
    """Average population leaving the logical subspace, ``1 - ||P U P^dag||_F^2 / D``."""
    P = system.projection.P
    U = full_noisy_propagate(system, pulse, np.zeros(len(system.noise_channels)), theta, cfg)
    B = P @ U @ P.conj().T
    return float(1.0 - np.sum(np.abs(B) ** 2) / system.D)
