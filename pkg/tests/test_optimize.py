import numpy as np
import pytest
from scipy.optimize import minimize, rosen, rosen_der

from robustpulse.algebra import PAULI, SubspaceProjection, matrix_exp
from robustpulse.integrate import SolverConfig
from robustpulse.objective import CostConfig, Objective
from robustpulse.optimize import (
    TrainSchedule,
    amsgrad_init,
    amsgrad_step,
    bfgs_minimize,
    refine,
    synthesize,
    write_history,
)
from robustpulse.pulses import ChebyshevFieldPulse
from robustpulse.systems import Control, ControlSystem, NoiseChannel, _const, get_preset

from conftest import random_hermitian


def test_amsgrad_hand_computed_step():
    x, st = amsgrad_step(np.array([1.0]), np.array([2.0]), None, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8)
    np.testing.assert_allclose(st.m, [0.2])
    np.testing.assert_allclose(st.v, [0.004])
    np.testing.assert_allclose(x, [1 - 1e-3 * 0.2 / (np.sqrt(0.004) + 1e-8)], rtol=1e-14)
    assert x[0] == pytest.approx(0.9968, abs=1e-4)


def test_amsgrad_zero_gradient_fixed_point():
    params = {"a": np.arange(3.0), "b": np.ones((2, 2))}
    zero = {"a": np.zeros(3), "b": np.zeros((2, 2))}
    new, st = amsgrad_step(params, zero, amsgrad_init(params))
    np.testing.assert_array_equal(new["a"], params["a"])
    np.testing.assert_array_equal(new["b"], params["b"])


def test_amsgrad_vhat_never_decreases():
    rng = np.random.default_rng(0)
    x = np.zeros(4)
    st = amsgrad_init(x)
    prev = st.vhat
    for k in range(50):
        g = rng.normal(size=4) * (10.0 if k < 5 else 0.01)
        x, st = amsgrad_step(x, g, st)
        assert np.all(st.vhat >= prev)
        prev = st.vhat


def test_amsgrad_minimises_quadratic():
    x = np.array([2.0, -1.0])
    st = None
    for _ in range(3000):
        x, st = amsgrad_step(x, 2 * x, st, lr=1e-2)
    assert np.linalg.norm(x) < 0.05


def test_bfgs_quadratic():
    res = bfgs_minimize(lambda x: float((x[0] - 3) ** 2), lambda x: np.array([2 * (x[0] - 3)]), [0.0], iters=5)
    assert res.n_iter <= 5
    assert abs(res.x[0] - 3) < 1e-8


def test_bfgs_first_step_length():
    seen = []

    def f(x):
        seen.append(np.array(x))
        return float(x @ x)

    bfgs_minimize(f, lambda x: 2 * x, np.array([3.0, 4.0]), iters=1, initial_step_norm=1e-3)
    trial = next(p for p in seen if not np.array_equal(p, seen[0]))
    assert np.linalg.norm(trial - seen[0]) == pytest.approx(1e-3, rel=1e-12)


def test_bfgs_rosenbrock():
    res = bfgs_minimize(rosen, rosen_der, np.array([-1.2, 1.0]), iters=500, initial_step_norm=1e-3)
    ref = minimize(rosen, [-1.2, 1.0], jac=rosen_der, method="BFGS", options={"gtol": 1e-12})
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-6)
    np.testing.assert_allclose(res.x, ref.x, atol=1e-6)


def test_bfgs_monotone_history():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(6, 6))
    A = A @ A.T + 0.1 * np.eye(6)
    f = lambda x: float(0.5 * x @ A @ x + np.sum(np.cos(x)))
    g = lambda x: A @ x - np.sin(x)
    res = bfgs_minimize(f, g, rng.normal(size=6) * 3, iters=100)
    assert np.all(np.diff(res.history) <= 0)


def test_bfgs_target_and_status():
    res = bfgs_minimize(rosen, rosen_der, np.array([-1.2, 1.0]), iters=500, f_target=1e-3)
    assert res.status == "target-reached" and res.fun <= 1e-3
    res = bfgs_minimize(lambda x: float(x @ x), lambda x: 2 * x, np.ones(3), iters=100)
    assert res.status == "converged"


def test_bfgs_rejects_nonfinite_start():
    with pytest.raises(ValueError):
        bfgs_minimize(lambda x: np.nan, lambda x: x, np.ones(2))


def test_schedule_validation():
    with pytest.raises(ValueError):
        TrainSchedule(amsgrad_lr=0.0)
    with pytest.raises(ValueError):
        TrainSchedule(bfgs_iters=-1)
    with pytest.raises(ValueError):
        TrainSchedule(beta1=1.0)
    with pytest.raises(ValueError):
        TrainSchedule(refine_evals=-1)


def _short_run(seed):
    s = get_preset("spin-x90")
    sched = TrainSchedule(amsgrad_iters=6, bfgs_iters=6, seed=seed, hidden=(6,), cost_target=1e-30)
    return synthesize(s, CostConfig(k=2, l=2), sched, SolverConfig(rtol=1e-8, atol=1e-8))


def test_synthesis_deterministic_and_decreasing(tmp_path):
    a = _short_run(3)
    b = _short_run(3)
    ca = [h[3].total for h in a.history]
    cb = [h[3].total for h in b.history]
    assert ca == cb
    assert all(c > 0 for c in ca)
    assert a.report.total < ca[0]
    assert a.status == "not-converged" and a.attempts == 1 and a.seed == 3
    write_history(tmp_path / "h.csv", a.history)
    write_history(tmp_path / "h2.csv", b.history)
    assert (tmp_path / "h.csv").read_bytes() == (tmp_path / "h2.csv").read_bytes()
    phases = {h[2] for h in a.history}
    assert phases == {"amsgrad", "bfgs"}


def test_synthesis_restarts_and_success_predicate():
    s = get_preset("spin-x90")
    sched = TrainSchedule(amsgrad_iters=2, bfgs_iters=0, seed=5, restarts=2, hidden=(4,))
    res = synthesize(s, CostConfig(), sched, SolverConfig(rtol=1e-8, atol=1e-8),
                     success=lambda sys, p, r: False)
    assert res.attempts == 3 and res.seeds_tried == [5, 6, 7]
    assert res.status == "not-converged"
    res = synthesize(s, CostConfig(), sched, SolverConfig(rtol=1e-8, atol=1e-8),
                     success=lambda sys, p, r: True)
    assert res.attempts == 1 and res.status == "converged"


def test_fixed_alpha():
    s = get_preset("spin-x90")
    sched = TrainSchedule(amsgrad_iters=5, bfgs_iters=3, hidden=(4,), train_alpha=False)
    res = synthesize(s, CostConfig(), sched, SolverConfig(rtol=1e-8, atol=1e-8))
    assert float(res.params.alpha) == 1.0


def _chebyshev_problem():
    rng = np.random.default_rng(11)
    s = ControlSystem("q", SubspaceProjection.identity(2), random_hermitian(rng, 2),
                      (Control(PAULI["X"]), Control(PAULI["Y"])),
                      (NoiseChannel(PAULI["Z"], _const(1.0), 0.1),), 3.0, matrix_exp(-1j * np.pi / 4 * PAULI["X"]))
    return s, ChebyshevFieldPulse(rng.normal(scale=0.3, size=(2, 8)), s.T)


def test_refine_drives_residuals_down():
    s, pulse = _chebyshev_problem()
    obj = Objective(s, pulse, CostConfig(k=1, l=2), SolverConfig())
    x0 = obj.ravel(pulse.theta)
    start = obj.report(pulse.theta).total
    kept = []
    x, rep = refine(obj, x0, 200, 20, callback=lambda k, z, r: kept.append(r.total))
    assert rep.total < 1e-6 * start
    assert kept == sorted(kept, reverse=True)
    mask = np.ones_like(x0)
    mask[:10] = 0
    x, rep = refine(obj, x0, 40, 20, mask=mask)
    np.testing.assert_array_equal(x[:10], x0[:10])
    assert rep.total < start


def test_synthesis_with_refine_phase():
    s = get_preset("spin-x90")
    sched = TrainSchedule(amsgrad_iters=3, bfgs_iters=3, hidden=(4,), refine_evals=30, refine_round=10,
                          cost_target=1e-30)
    res = synthesize(s, CostConfig(k=2, l=2), sched, SolverConfig(rtol=1e-8, atol=1e-8))
    phases = [h[2] for h in res.history]
    assert "refine" in phases
    bfgs_last = [h[3].total for h in res.history if h[2] == "bfgs"][-1]
    assert res.report.total < bfgs_last
