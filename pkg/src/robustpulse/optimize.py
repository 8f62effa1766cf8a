"""Training loop: seeded network, AMSGrad warm-up, BFGS, optional least-squares refinement."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from jax.tree_util import tree_map
from scipy.optimize import least_squares, line_search

from .integrate import PropagationError, SolverConfig
from .network import NeuralPulse, TrainableParameters, mlp_new
from .objective import CostConfig, CostReport, Objective

__all__ = [
    "TrainSchedule",
    "AMSGradState",
    "amsgrad_init",
    "amsgrad_step",
    "BFGSResult",
    "bfgs_minimize",
    "refine",
    "SynthesisResult",
    "synthesize",
    "write_history",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSchedule:
    amsgrad_iters: int = 200
    amsgrad_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_hat: float = 1e-8
    bfgs_iters: int = 350
    bfgs_initial_step_norm: float = 1e-3
    seed: int = 0
    cost_target: float = 1e-8
    restarts: int = 0
    hidden: tuple = (32, 32)
    input_map: str = "tau"
    train_alpha: bool = True
    refine_evals: int = 0
    refine_round: int = 50

    def __post_init__(self):
        if self.refine_evals < 0 or self.refine_round < 1:
            raise ValueError("refine_evals must be >= 0 and refine_round >= 1")
        if self.amsgrad_iters < 0 or self.bfgs_iters < 0 or self.restarts < 0:
            raise ValueError("iteration and restart counts must be >= 0")
        if self.amsgrad_lr <= 0 or self.bfgs_initial_step_norm <= 0:
            raise ValueError("learning rate and BFGS step norm must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1, beta2 must lie in [0, 1)")


# -- AMSGrad ------------------------------------------------------------------

class AMSGradState(NamedTuple):
    m: object
    v: object
    vhat: object


def amsgrad_init(params) -> AMSGradState:
    z = tree_map(lambda p: np.zeros_like(np.asarray(p, dtype=float)), params)
    return AMSGradState(z, z, z)


def amsgrad_step(params, grad, state: Optional[AMSGradState] = None, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One AMSGrad update (no bias correction); works on any pytree of arrays."""
    state = amsgrad_init(params) if state is None else state
    m = tree_map(lambda m, g: beta1 * m + (1 - beta1) * np.asarray(g), state.m, grad)
    v = tree_map(lambda v, g: beta2 * v + (1 - beta2) * np.asarray(g) ** 2, state.v, grad)
    vhat = tree_map(np.maximum, state.vhat, v)
    new = tree_map(lambda p, m, vh: np.asarray(p) - lr * m / (np.sqrt(vh) + eps), params, m, vhat)
    return new, AMSGradState(m, v, vhat)


# -- BFGS ---------------------------------------------------------------------

@dataclass
class BFGSResult:
    x: np.ndarray
    fun: float
    status: str  # "converged", "max-iter", "line-search-failed", "target-reached"
    n_iter: int
    history: list


class _Memo:
    """Share one evaluation between separate value and gradient requests."""

    def __init__(self, cost_fn, grad_fn, value_and_grad):
        self.cost_fn, self.grad_fn, self.vg = cost_fn, grad_fn, value_and_grad
        self.x = None
        self.f = self.g = None
        self.best_x, self.best_f = None, np.inf

    def _eval(self, x, need_grad):
        if self.x is not None and np.array_equal(x, self.x) and (self.g is not None or not need_grad):
            return
        if self.vg is not None:
            f, g = self.vg(x)
        else:
            f = self.cost_fn(x)
            g = self.grad_fn(x) if need_grad else None
        self.x, self.f, self.g = np.array(x, copy=True), float(f), None if g is None else np.asarray(g, float)
        if np.isfinite(self.f) and self.f < self.best_f:
            self.best_x, self.best_f = self.x.copy(), self.f

    def f_(self, x):
        self._eval(x, False)
        return self.f

    def g_(self, x):
        self._eval(x, True)
        return self.g


def _backtrack(fun, x, f0, g0, p, c1=1e-4, shrink=0.5, tries=30):
    slope = float(g0 @ p)
    a = 1.0
    for _ in range(tries):
        fa = fun(x + a * p)
        if np.isfinite(fa) and fa <= f0 + c1 * a * slope:
            return a
        a *= shrink
    return None


def bfgs_minimize(cost_fn: Optional[Callable], grad_fn: Optional[Callable], params0, iters: int = 350,
                  initial_step_norm: float = 1e-3, gtol: float = 1e-12, f_target: float = -np.inf,
                  value_and_grad: Optional[Callable] = None, callback: Optional[Callable] = None,
                  rescale: bool = False) -> BFGSResult:
    """Quasi-Newton minimisation on a flat parameter vector.

    The initial inverse Hessian is ``(initial_step_norm / |g0|) I`` so the
    first trial step has that length (with ``rescale`` it is replaced by
    ``(s.y / y.y) I`` before the first update).  Each step uses a strong-Wolfe line search with a
    backtracking Armijo fallback; a step is only taken if the cost does not
    increase, so the accepted cost sequence is monotone.

    Parameters
    ----------
    cost_fn, grad_fn
        ``x -> float`` and ``x -> ndarray``.  Either may be ``None`` when
        ``value_and_grad`` is given.
    callback
        Called as ``callback(k, x, f)`` after every accepted step.
    """
    memo = _Memo(cost_fn, grad_fn, value_and_grad)
    x = np.array(params0, dtype=float)
    f = memo.f_(x)
    if not np.isfinite(f):
        raise ValueError("cost is not finite at the starting point")
    g = memo.g_(x)
    n = x.size
    gnorm = np.linalg.norm(g)
    H = np.eye(n) * (initial_step_norm / gnorm if gnorm > 0 else 1.0)
    history = [f]
    status, k = "max-iter", 0
    first = True
    for k in range(1, iters + 1):
        if np.linalg.norm(g) <= gtol:
            status = "converged"
            k -= 1
            break
        if f <= f_target:
            status = "target-reached"
            k -= 1
            break
        p = -H @ g
        if g @ p >= 0:  # lost positive definiteness; restart from a scaled identity
            H = np.eye(n) * (initial_step_norm / np.linalg.norm(g))
            p = -H @ g
        try:
            a, *_ = line_search(memo.f_, memo.g_, x, p, gfk=g, old_fval=f, maxiter=20)
        except (PropagationError, FloatingPointError):
            a = None
        if a is None or not np.isfinite(memo.f_(x + a * p)) or memo.f_(x + a * p) > f:
            a = _backtrack(memo.f_, x, f, g, p)
        if a is None:
            status = "line-search-failed"
            break
        x_new = x + a * p
        f_new = memo.f_(x_new)
        g_new = memo.g_(x_new)
        s, y = x_new - x, g_new - g
        sy = float(s @ y)
        if sy > 1e-300:
            if first and rescale:
                H = np.eye(n) * (sy / float(y @ y))
                first = False
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
        x, f, g = x_new, f_new, g_new
        history.append(f)
        if callback is not None:
            callback(k, x, f)
    if memo.best_f < f:  # pragma: no cover - guards against a noisy line search
        x, f = memo.best_x, memo.best_f
    return BFGSResult(x, f, status, k, history)


# -- synthesis ------------------------------------------------------------------

@dataclass
class SynthesisResult:
    params: TrainableParameters
    report: CostReport
    history: list  # (restart, iteration, phase, CostReport)
    status: str  # "converged" or "not-converged"
    seed: int
    attempts: int
    elapsed: float = 0.0
    seeds_tried: list = field(default_factory=list)
    input_map: str = "tau"

    def pulse(self, system) -> NeuralPulse:
        return NeuralPulse.for_system(system, self.params, self.input_map)


def refine(obj: Objective, x, max_evals: int, round_evals: int = 50, mask=None, callback=None):
    """Drive the cost residuals to zero with a trust-region least-squares solver.

    Each round freezes the adaptive step sequence at the current point and runs
    at most ``round_evals`` residual evaluations of ``scipy.optimize.least_squares``
    (``trf``, Jacobian by reverse-mode differentiation, Jacobian column scaling).
    A round is kept only if it lowers the cost recomputed on a fresh step
    sequence.  Stops when the budget ``max_evals`` is spent, a round fails to
    improve, or the solver reports convergence.

    Parameters
    ----------
    obj : Objective
    x : ndarray
        Flat starting parameters.
    mask : ndarray, optional
        Nonzero entries mark the parameters that may change.
    callback : callable, optional
        ``callback(round, x, report)`` after each kept round.

    Returns
    -------
    x : ndarray
    report : CostReport
    """
    x = np.asarray(x, dtype=float).copy()
    free = np.flatnonzero(np.ones_like(x) if mask is None else mask)
    rep = obj.report(obj.unravel(x))
    used, rnd = 0, 0
    while used < max_evals:
        grid = obj.grid(obj.unravel(x))
        base = x.copy()

        def full(z):
            y = base.copy()
            y[free] = z
            return y

        try:
            sol = least_squares(lambda z: obj.flat_residuals(full(z), grid),
                                x[free], jac=lambda z: obj.flat_jacobian(full(z), grid)[:, free],
                                method="trf", x_scale="jac", max_nfev=min(round_evals, max_evals - used),
                                ftol=1e-15, xtol=1e-15, gtol=1e-15)
        except (PropagationError, FloatingPointError, ValueError):
            break
        used += sol.nfev
        cand = full(sol.x)
        try:
            crep = obj.report(obj.unravel(cand))
        except (PropagationError, FloatingPointError):
            break
        if not np.isfinite(crep.total) or crep.total >= rep.total:
            break
        x, rep, rnd = cand, crep, rnd + 1
        if callback is not None:
            callback(rnd, x, rep)
        if sol.status > 0:
            break
    return x, rep


def _train_once(obj: Objective, schedule: TrainSchedule, seed: int, restart: int, history: list,
                log_every: int):
    theta = mlp_new(list(schedule.hidden), obj.system.n_params, seed)
    x = obj.ravel(theta)
    # log(alpha) is the last entry of the flat vector
    mask = np.ones_like(x)
    if not schedule.train_alpha:
        mask[-1] = 0.0
    state = amsgrad_init(x)
    best_x, best_f = x.copy(), np.inf
    reached = False
    for it in range(schedule.amsgrad_iters):
        rep, g = obj.flat_value_and_grad(x)
        g = g * mask
        history.append((restart, it, "amsgrad", rep))
        if rep.total < best_f:
            best_x, best_f = x.copy(), rep.total
        if log_every and it % log_every == 0:
            log.info("seed %d amsgrad %d cost %.3e", seed, it, rep.total)
        if rep.total <= schedule.cost_target:
            reached = True
            break
        x, state = amsgrad_step(x, g, state, schedule.amsgrad_lr, schedule.beta1, schedule.beta2,
                                schedule.epsilon_hat)
    x = best_x
    if not reached and schedule.bfgs_iters:
        last = {}

        def vg(z):
            try:
                rep, g = obj.flat_value_and_grad(z)
            except (PropagationError, FloatingPointError):
                return np.inf, np.full_like(z, np.nan)
            last[z.tobytes()] = rep
            return rep.total, g * mask

        it0 = schedule.amsgrad_iters

        def cb(k, z, f):
            history.append((restart, it0 + k - 1, "bfgs", last.get(z.tobytes()) or obj.report(obj.unravel(z))))
            if log_every and k % log_every == 0:
                log.info("seed %d bfgs %d cost %.3e", seed, k, f)

        res = bfgs_minimize(None, None, x, schedule.bfgs_iters, schedule.bfgs_initial_step_norm,
                            f_target=schedule.cost_target, value_and_grad=vg, callback=cb)
        x = res.x
    if schedule.refine_evals:
        it0 = schedule.amsgrad_iters + schedule.bfgs_iters

        def rcb(k, z, rep):
            history.append((restart, it0 + k - 1, "refine", rep))
            if log_every:
                log.info("seed %d refine %d cost %.3e", seed, k, rep.total)

        x, _ = refine(obj, x, schedule.refine_evals, schedule.refine_round, mask, rcb)
    theta = obj.unravel(x)
    return theta, obj.report(theta)


def synthesize(system, cost_cfg: CostConfig = CostConfig(), schedule: TrainSchedule = TrainSchedule(),
               solver_cfg: SolverConfig = SolverConfig(), success: Optional[Callable] = None,
               log_every: int = 0) -> SynthesisResult:
    """Train a network pulse for ``system``, re-seeding on failure.

    Each attempt runs ``mlp_new(seed)``, ``amsgrad_iters`` AMSGrad steps and
    ``bfgs_iters`` BFGS iterations, then up to ``refine_evals`` residual
    evaluations of :func:`refine` when that is nonzero.  An attempt succeeds when
    ``success(system, params, report)`` is true (default: total cost below
    ``schedule.cost_target``).  Up to ``schedule.restarts`` further attempts
    use seeds ``seed + 1, seed + 2, ...``; the best attempt by total cost is
    returned with status ``"not-converged"`` if none succeeded.
    """
    if success is None:
        success = lambda s, p, r: r.total <= schedule.cost_target
    t0 = time.time()
    template = NeuralPulse.for_system(system, mlp_new(list(schedule.hidden), system.n_params, schedule.seed),
                                      schedule.input_map)
    obj = Objective(system, template, cost_cfg, solver_cfg)
    history: list = []
    best = None
    seeds = []
    for r in range(schedule.restarts + 1):
        seed = schedule.seed + r
        seeds.append(seed)
        theta, rep = _train_once(obj, schedule, seed, r, history, log_every)
        ok = bool(success(system, theta, rep))
        if best is None or ok or rep.total < best[1].total:
            best = (theta, rep, seed, ok)
        log.info("attempt %d (seed %d): cost %.3e infidelity %.3e %s", r, seed, rep.total, rep.infidelity,
                 "ok" if ok else "rejected")
        if ok:
            break
    theta, rep, seed, ok = best
    return SynthesisResult(theta, rep, history, "converged" if ok else "not-converged", seed,
                           len(seeds), time.time() - t0, seeds, schedule.input_map)


def write_history(path, history: Sequence) -> None:
    """CSV with columns restart, iteration, phase, total, fidelity_term, sensitivity terms."""
    if not history:
        raise ValueError("empty history")
    first = history[0][3]
    m = len(first.sensitivity_terms)
    n2 = len(first.second_order_terms or [])
    n3 = len(first.third_order_terms or [])
    header = ["restart", "iteration", "phase", "total", "fidelity_term"]
    header += [f"sens_{i}" for i in range(m)] + [f"sens2_{i}" for i in range(n2)] + [f"sens3_{i}" for i in range(n3)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for restart, it, phase, rep in history:
            w.writerow([restart, it, phase, *(repr(float(v)) for v in rep.as_row())])
