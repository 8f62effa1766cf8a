"""End-to-end acceptance checks.

Each test prints one ``criterion N: PASS/FAIL`` line before asserting.  The
synthesis runs (criteria 5 and 6) take several minutes each on one core.
"""
import json

import numpy as np
import pytest
from jax.flatten_util import ravel_pytree

from robustpulse import cli
from robustpulse.algebra import SubspaceProjection, generator_basis, is_unitary, ladder, matrix_exp
from robustpulse.chebyshev import clenshaw, fit_coefficients
from robustpulse.evaluation import (
    LindbladConfig,
    averaged_fidelity,
    bandwidth_limit,
    lindblad_propagate,
    magnus_scaling_exponent,
    noise_sweep,
)
from robustpulse.integrate import SolverConfig
from robustpulse.network import NeuralPulse, load_pulse, mlp_new
from robustpulse.objective import CostConfig, Objective
from robustpulse.optimize import amsgrad_step, bfgs_minimize, refine
from robustpulse.propagation import propagate
from robustpulse.pulses import zero_pulse
from robustpulse.pulse_io import fixture_system
from robustpulse.systems import ControlSystem, get_preset

THRESHOLD = 1e-4
SMALL_EPS = np.geomspace(1e-3, 1e-2, 7)


def _line(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def _synthesize_cli(tmp_path_factory, preset, crossing_min, max_restarts=5):
    """Run ``synthesize --preset`` with seeds 0, 1, ... until the criterion holds.

    Returns the system, the first passing pulse (or the lowest-cost one if
    none passes), its summary and the summaries of all attempts.
    """
    tried = []
    for seed in range(max_restarts + 1):
        out = tmp_path_factory.mktemp(f"{preset}-{seed}")
        cli.main(["synthesize", "--preset", preset, "--seed", str(seed), "--out", str(out), "--log-every", "0"])
        summary = json.loads((out / "summary.json").read_text())
        summary["passed"] = (summary["baseline_infidelity"] <= THRESHOLD
                             and summary["threshold_crossing"] >= crossing_min)
        tried.append((out, summary))
        if summary["passed"]:
            break
    out, summary = tried[-1] if tried[-1][1]["passed"] else min(tried, key=lambda r: r[1]["final_cost"])
    system = get_preset(preset)
    return system, load_pulse(out / "params.json", system), summary, [t[1] for t in tried]


@pytest.fixture(scope="session")
def transmon_run(tmp_path_factory):
    return _synthesize_cli(tmp_path_factory, "transmon", 0.02)


@pytest.fixture(scope="session")
def cz_run(tmp_path_factory):
    return _synthesize_cli(tmp_path_factory, "spin-cz", 0.15)


def test_criterion_1_cz_fixture(capsys):
    s, p = fixture_system("cz")
    sw = noise_sweep(s, p, np.linspace(-0.2, 0.2, 41))
    worst = float(np.max(sw.infidelities))
    ok = sw.baseline <= THRESHOLD and worst <= THRESHOLD
    _line(capsys, 1, ok, f"baseline {sw.baseline:.2e}, max over |eps_J|<=0.20 {worst:.2e}, "
                         f"crossing {sw.threshold_crossing:.3f}")
    assert ok


def test_criterion_2_transmon_fixture(capsys):
    eps = np.linspace(-0.028, 0.028, 29)
    s4, p4 = fixture_system("transmon")
    s6, p6 = fixture_system("transmon", levels=6)
    sw4 = noise_sweep(s4, p4, eps)
    sw6 = noise_sweep(s6, p6, eps)
    worst = float(np.max(sw4.infidelities))
    shift = float(np.max(np.abs(sw6.infidelities - sw4.infidelities)))
    ok = worst <= THRESHOLD and shift <= 2e-5
    _line(capsys, 2, ok, f"max over |eps|<=0.028 {worst:.2e}, crossing {sw4.threshold_crossing:.4f}, "
                         f"6-level shift {shift:.1e}")
    assert ok


def test_criterion_3_naive_oracle(capsys):
    s = get_preset("spin-cz", duration=0.5)
    eps = np.linspace(-0.3, 0.3, 61)
    sw = noise_sweep(s, zero_pulse(1), eps, cfg=SolverConfig(rtol=1e-12, atol=1e-12))
    err = float(np.max(np.abs(sw.infidelities - (1 - np.cos(np.pi * eps / 4) ** 2))))
    ok = err <= 1e-8
    _line(capsys, 3, ok, f"max deviation from 1 - cos^2(pi eps/4): {err:.1e}")
    assert ok


def test_criterion_4_full_gradient(capsys):
    s = get_preset("spin-cz")
    pulse = NeuralPulse.for_system(s, mlp_new([32, 32], s.n_params, 1234))
    obj = Objective(s, pulse, CostConfig(k=2, l=2), SolverConfig(order=2))
    theta = pulse.theta
    grid = obj.grid(theta)
    _, g = obj.value_and_grad(theta, grid)
    g = np.asarray(ravel_pytree(g)[0])
    x = obj.ravel(theta)
    h = 1e-5
    worst, checked = 0.0, 0
    for j in range(x.size):
        if abs(g[j]) <= 1e-8:
            continue
        e = np.zeros_like(x)
        e[j] = h
        fd = (obj.flat_value(x + e, grid) - obj.flat_value(x - e, grid)) / (2 * h)
        worst = max(worst, abs(fd - g[j]) / abs(g[j]))
        checked += 1
    ok = x.size == 1187 and worst <= 1e-4
    _line(capsys, 4, ok, f"{checked}/{x.size} components, max relative error {worst:.1e}")
    assert ok


def _refined(system, pulse, order):
    d = system.defaults
    obj = Objective(system, pulse, CostConfig(k=d["k"], l=d["l"]), SolverConfig(order=order))
    x, _ = refine(obj, obj.ravel(pulse.theta), 1600)
    return NeuralPulse.for_system(system, obj.unravel(x), pulse.input_map)


def test_criterion_5_magnus_scaling(capsys, transmon_run, cz_run):
    s_t, p_t = transmon_run[:2]
    slope_first = magnus_scaling_exponent(s_t, _refined(s_t, p_t, 1), SMALL_EPS)
    s_cz, p_cz = cz_run[:2]
    slope_second = magnus_scaling_exponent(s_cz, p_cz, SMALL_EPS)
    naive = get_preset("spin-cz", duration=0.5)
    slope_none = magnus_scaling_exponent(naive, zero_pulse(1), SMALL_EPS)
    ok = abs(slope_first - 4) <= 0.3 and abs(slope_second - 6) <= 0.5 and abs(slope_none - 2) <= 0.2
    _line(capsys, 5, ok, f"slopes: first-order {slope_first:.3f}, second-order CZ {slope_second:.3f}, "
                         f"uncorrected {slope_none:.3f}")
    assert ok


def test_criterion_6_end_to_end_synthesis(capsys, transmon_run, cz_run):
    parts, ok = [], True
    for name, run in (("transmon", transmon_run), ("spin-cz", cz_run)):
        summ, tried = run[2], run[3]
        ok &= summ["passed"]
        parts.append(f"{name} seed {summ['seed']} of {len(tried)} tried: baseline {summ['baseline_infidelity']:.1e}, "
                     f"crossing {summ['threshold_crossing']:.4f}, alpha {summ['alpha']:.2f}")
    _line(capsys, 6, ok, "; ".join(parts))
    assert ok


def test_criterion_7_bandwidth(capsys):
    vals = []
    for name, dfT in (("cz", 20.0), ("transmon", 4.73)):
        s, p = fixture_system(name)
        vals.append(noise_sweep(s, bandwidth_limit(p, dfT / s.T, T=s.T), [0.0]).baseline)
    ok = max(vals) <= THRESHOLD
    _line(capsys, 7, ok, f"baseline after filtering: cz (20/T) {vals[0]:.1e}, transmon (4.73/T) {vals[1]:.1e}")
    assert ok


def test_criterion_8_open_system(capsys, transmon_run):
    q = ControlSystem("qubit", SubspaceProjection.identity(2), np.zeros((2, 2)), (), (), 3.0, np.eye(2),
                      lowering=ladder(2))
    Tphi = 5.0
    F = averaged_fidelity(q, zero_pulse(0), LindbladConfig(Tphi=Tphi), cfg=SolverConfig(rtol=1e-12, atol=1e-12))
    dephasing_err = abs(F - (2 / 3 + np.exp(-q.T / (2 * Tphi)) / 3))
    s, p = transmon_run[:2]
    lcfg = LindbladConfig.from_dimensionless(s, T1=3554.0, Tphi=35540.0)
    loss = 1 - averaged_fidelity(s, p, lcfg)
    sf, pf = fixture_system("transmon")
    loss_fixture = 1 - averaged_fidelity(sf, pf, LindbladConfig.from_dimensionless(sf, T1=3554.0, Tphi=35540.0))
    ok = dephasing_err <= 1e-6 and loss < THRESHOLD
    _line(capsys, 8, ok, f"dephasing oracle error {dephasing_err:.1e}; 1 - <F>: synthesized pulse {loss:.2e} "
                         f"(alpha {float(p.alpha(p.theta)):.3f}), tabulated pulse {loss_fixture:.2e}")
    assert ok


def test_criterion_9_structural_invariants(capsys):
    rng = np.random.default_rng(9)
    fails = []
    cfg = SolverConfig(rtol=1e-9, atol=1e-9, order=2)
    s, p = fixture_system("cz")
    st = propagate(s, p, cfg=cfg)
    U = np.asarray(st.Uc)
    if np.linalg.norm(U.conj().T @ U - np.eye(4)) > 10 * cfg.rtol:
        fails.append("unitarity")
    E = np.asarray(st.E)
    if np.max(np.abs(E - np.conj(np.swapaxes(E, -1, -2)))) > 10 * cfg.rtol:
        fails.append("E hermiticity")
    rho0 = np.diag([0.5, 0.3, 0.2, 0.0]).astype(complex)
    st_, pt_ = fixture_system("transmon")
    rho = lindblad_propagate(st_, pt_, LindbladConfig.from_dimensionless(st_, T1=5.0, Tphi=7.0), rho0)
    if abs(np.trace(rho) - 1) > 1e-9 or np.min(np.linalg.eigvalsh(rho)) < -1e-9:
        fails.append("trace/positivity")
    B = np.asarray(generator_basis(4).generators)
    gram = np.einsum("aij,bji->ab", B, B)
    if len(B) != 15 or not np.allclose(gram, 4 * np.eye(15), atol=1e-12):
        fails.append("generator orthonormality")
    x = rng.normal(size=5)
    y, _ = amsgrad_step(x, np.zeros(5))
    if not np.array_equal(x, y):
        fails.append("AMSGrad fixed point")
    A = np.diag([1.0, 10.0, 100.0])
    trace = []
    bfgs_minimize(lambda z: 0.5 * z @ A @ z, lambda z: A @ z, np.ones(3), 30, 1e-3,
                  callback=lambda k, z, f: trace.append(f))
    if any(b > a for a, b in zip(trace, trace[1:])):
        fails.append("BFGS monotonicity")
    c = rng.normal(size=12)
    tau = np.cos(np.pi * (np.arange(40) + 0.5) / 40)
    if not np.allclose(fit_coefficients(tau, clenshaw(c, tau), 12)[0], c, atol=1e-12):
        fails.append("Chebyshev round trip")
    U0 = matrix_exp(-1j * np.pi / 4 * np.diag([1.0, -1.0, -1.0, 1.0]))
    if not is_unitary(U0):
        fails.append("matrix exponential unitarity")
    ok = not fails
    _line(capsys, 9, ok, "all invariants hold" if ok else "broken: " + ", ".join(fails))
    assert ok
