"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 non-convergence,
4 verification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, build, load_config
from .evaluation import (THRESHOLD, LindbladConfig, averaged_fidelity, bandwidth_limit,
                         leakage, magnus_scaling_exponent, noise_sweep)
from .integrate import PropagationError
from .network import load_pulse, save_parameters
from .objective import Objective
from .optimize import synthesize, write_history
from .pulse_io import UnitMismatch, export_pulse, fixture_system, fixtures, import_pulse

__all__ = ["main", "EXIT_OK", "EXIT_CONFIG", "EXIT_NOT_CONVERGED", "EXIT_VERIFY"]

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_VERIFY = 0, 2, 3, 4

log = logging.getLogger("robustpulse")


def _config_from_args(args) -> dict:
    doc = load_config(args.config) if getattr(args, "config", None) else {}
    if getattr(args, "preset", None):
        doc["system"] = {"preset": args.preset, **({"options": doc["system"].get("options", {})}
                                                   if "system" in doc and "preset" in doc["system"] else {})}
    doc.setdefault("system", {"preset": "spin-cz"})
    sched = doc.setdefault("schedule", {})
    for key in ("seed", "restarts", "amsgrad_iters", "bfgs_iters", "refine_evals"):
        v = getattr(args, key, None)
        if v is not None:
            sched[key] = v
    if not sched:
        del doc["schedule"]
    if getattr(args, "order", None) is not None:
        doc.setdefault("cost", {})["order"] = args.order
    if getattr(args, "out", None):
        doc.setdefault("output", {})["dir"] = args.out
    return doc


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))


def _default_grid(system, sweep: dict):
    emax = max((c.eps_max for c in system.noise_channels), default=0.1) or 0.1
    lo = sweep.get("eps_min", -1.5 * emax)
    hi = sweep.get("eps_max", 1.5 * emax)
    n = sweep.get("points", 61)
    grid = np.linspace(lo, hi, n)
    if lo < 0 < hi and not np.any(grid == 0):
        grid = np.sort(np.append(grid, 0.0))
    return grid


def _load_pulse(path, system):
    """Network parameter file or exported pulse sidecar -> ``(system, pulse)``."""
    doc = json.loads(Path(path).read_text())
    fmt = doc.get("format")
    if fmt == "robustpulse-mlp/1":
        return system, load_pulse(path, system)
    if fmt == "robustpulse-pulse/1":
        (sys2, pulse), _ = import_pulse(path, system)
        return sys2, pulse
    raise ConfigError(f"{path}: unrecognised pulse file format {fmt!r}")


def cmd_synthesize(args) -> int:
    rc = build(_config_from_args(args))
    out = rc.output_dir
    out.mkdir(parents=True, exist_ok=True)
    res = synthesize(rc.system, rc.cost, rc.schedule, rc.solver, log_every=args.log_every)
    save_parameters(res.params, out / "params.json", seed=res.seed, input_map=res.input_map,
                    system=rc.system.name)
    write_history(out / "cost_history.csv", res.history)
    pulse = res.pulse(rc.system)
    export_pulse(rc.system, pulse, out / "pulse", preset=rc.preset)
    sweep = noise_sweep(rc.system, pulse, _default_grid(rc.system, rc.sweep), cfg=rc.solver,
                        channels=rc.sweep.get("channels"), jobs=args.jobs)
    sweep.to_csv(out / "sweep.csv")
    summary = {
        "system": rc.system.name,
        "status": res.status,
        "seed": res.seed,
        "attempts": res.attempts,
        "final_cost": res.report.total,
        "baseline_infidelity": res.report.infidelity,
        "sensitivity_terms": res.report.sensitivity_terms,
        "second_order_terms": res.report.second_order_terms,
        "threshold_crossing": sweep.threshold_crossing,
        "alpha": float(res.params.alpha),
        "meta": {"elapsed_s": res.elapsed, "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
                 "version": __version__},
    }
    _write_json(out / "summary.json", summary)
    print(f"{res.status}: cost {res.report.total:.3e}, baseline infidelity {res.report.infidelity:.3e}, "
          f"threshold crossing {sweep.threshold_crossing:.4g} -> {out}")
    return EXIT_OK if res.status == "converged" else EXIT_NOT_CONVERGED


def cmd_evaluate(args) -> int:
    rc = build(_config_from_args(args))
    system, pulse = _load_pulse(args.pulse, rc.system)
    obj = Objective(system, pulse, rc.cost, rc.solver)
    rep = obj.report(pulse.theta)
    summary = {
        "system": system.name,
        "total_cost": rep.total,
        "fidelity_term": rep.fidelity_term,
        "baseline_infidelity": rep.infidelity,
        "sensitivity_terms": rep.sensitivity_terms,
        "second_order_terms": rep.second_order_terms,
        "leakage": leakage(system, pulse, cfg=rc.solver),
    }
    if args.T1 is not None or args.Tphi is not None:
        lcfg = LindbladConfig.from_dimensionless(system, args.T1, args.Tphi)
        summary["averaged_infidelity"] = 1.0 - averaged_fidelity(system, pulse, lcfg, cfg=rc.solver)
    print(json.dumps(summary, indent=1))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "evaluation.json", summary)
    return EXIT_OK


def _sweep_pulse(args, rc):
    if args.fixture:
        system, pulse = fixture_system(args.fixture)
    else:
        system, pulse = _load_pulse(args.pulse, rc.system)
    if args.delta_f_T:
        pulse = bandwidth_limit(pulse, args.delta_f_T / system.T, T=system.T, window=args.window)
    return system, pulse


def cmd_sweep(args) -> int:
    if not args.fixture and not args.pulse:
        raise ConfigError("sweep needs --pulse or --fixture")
    rc = build(_config_from_args(args))
    system, pulse = _sweep_pulse(args, rc)
    grid = _default_grid(system, {**rc.sweep, **{k: v for k, v in
                                                 (("eps_min", args.eps_min), ("eps_max", args.eps_max),
                                                  ("points", args.points)) if v is not None}})
    res = noise_sweep(system, pulse, grid, channels=rc.sweep.get("channels"), cfg=rc.solver, jobs=args.jobs)
    out = rc.output_dir
    out.mkdir(parents=True, exist_ok=True)
    res.to_csv(out / "sweep.csv")
    emax = max(c.eps_max for c in system.noise_channels) or 0.1
    try:
        slope = magnus_scaling_exponent(system, pulse, np.geomspace(1e-3, 1e-2, 7) * emax / 0.1)
    except ValueError:
        slope = None
    summary = {"system": system.name, "baseline_infidelity": res.baseline,
               "threshold_crossing": res.threshold_crossing, "crossing_bounded": res.bounded,
               "scaling_exponent": slope, "meta": {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")}}
    _write_json(out / "sweep_summary.json", summary)
    print(f"baseline {res.baseline:.3e}, threshold crossing {res.threshold_crossing:.4g}, "
          f"scaling exponent {slope if slope is None else round(slope, 2)} -> {out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    names = [args.fixture] if args.fixture else list(fixtures())
    out = Path(build({"system": {"preset": "spin-cz"}, "output": {"dir": args.out or "out"}}).output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in names:
        fx = fixtures()[name]
        system, pulse = fixture_system(name)
        export_pulse(system, pulse, out / name, n_terms=max(p.n_terms for p in fx.fields.values()),
                     preset=fx.preset)
        print(f"{name}: {len(fx.fields)} field(s), tau0 = {fx.tau0} -> {out / name}.json")
    return EXIT_OK


def verify_appendix(jobs: int = 1):
    """Rows ``(label, value, limit, passed)`` for the tabulated pulses."""
    rows = []
    s, p = fixture_system("cz")
    sw = noise_sweep(s, p, np.linspace(-0.2, 0.2, 41), jobs=jobs)
    rows.append(("cz baseline infidelity", sw.baseline, THRESHOLD, sw.baseline <= THRESHOLD))
    worst = float(np.max(sw.infidelities))
    rows.append(("cz max infidelity |eps_J| <= 0.20", worst, THRESHOLD, worst <= THRESHOLD))
    eps = np.linspace(-0.028, 0.028, 29)
    s, p = fixture_system("transmon")
    sw = noise_sweep(s, p, eps, jobs=jobs)
    worst = float(np.max(sw.infidelities))
    rows.append(("transmon max infidelity |eps| <= 0.028", worst, THRESHOLD, worst <= THRESHOLD))
    s6, p6 = fixture_system("transmon", levels=6)
    shift = float(np.max(np.abs(noise_sweep(s6, p6, eps, jobs=jobs).infidelities - sw.infidelities)))
    rows.append(("transmon 6-level infidelity shift", shift, 2e-5, shift <= 2e-5))
    for name in ("x90", "iswap"):
        s, p = fixture_system(name)
        b = noise_sweep(s, p, [0.0]).baseline
        rows.append((f"{name} baseline infidelity", b, THRESHOLD, b <= THRESHOLD))
    for name, dfT in (("cz", 20.0), ("transmon", 4.73)):
        s, p = fixture_system(name)
        b = noise_sweep(s, bandwidth_limit(p, dfT / s.T, T=s.T), [0.0]).baseline
        rows.append((f"{name} baseline, bandwidth {dfT}/T", b, THRESHOLD, b <= THRESHOLD))
    return rows


def cmd_verify_appendix(args) -> int:
    rows = verify_appendix(args.jobs)
    width = max(len(r[0]) for r in rows)
    for label, val, lim, ok in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {label:<{width}}  {val:.3e}  (limit {lim:.0e})")
    failed = [r[0] for r in rows if not r[3]]
    if failed:
        print("failed: " + "; ".join(failed), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robustpulse", description="Noise-robust pulse synthesis and checks.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, preset=True):
        p.add_argument("--config", help="YAML or JSON run configuration")
        if preset:
            p.add_argument("--preset", choices=["spin-cz", "spin-x90", "spin-two-tone", "transmon"])
        p.add_argument("--order", type=int, choices=[1, 2, 3])
        p.add_argument("--out", help="output directory (relative paths honour $ROBUSTPULSE_OUT)")
        p.add_argument("--jobs", type=int, default=1, help="parallel sweep points (default 1)")

    p = sub.add_parser("synthesize", help="train a robust pulse")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--amsgrad-iters", dest="amsgrad_iters", type=int)
    p.add_argument("--bfgs-iters", dest="bfgs_iters", type=int)
    p.add_argument("--refine-evals", dest="refine_evals", type=int,
                   help="residual evaluations for the least-squares refinement (0 disables)")
    p.add_argument("--log-every", dest="log_every", type=int, default=50)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="cost terms, leakage and optional open-system fidelity")
    common(p)
    p.add_argument("--pulse", required=True, help="params.json or pulse sidecar JSON")
    p.add_argument("--T1", type=float, help="relaxation time in system time units")
    p.add_argument("--Tphi", type=float, help="pure dephasing time in system time units")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="infidelity against noise strength")
    common(p)
    p.add_argument("--pulse")
    p.add_argument("--fixture", choices=["cz", "x90", "iswap", "transmon"])
    p.add_argument("--eps-min", dest="eps_min", type=float)
    p.add_argument("--eps-max", dest="eps_max", type=float)
    p.add_argument("--points", type=int)
    p.add_argument("--delta-f", dest="delta_f_T", type=float,
                   help="bandwidth limit in units of 1/T applied before sweeping")
    p.add_argument("--window", choices=["hard", "hann"], default="hard")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reconstruct", help="export the tabulated pulses as CSV + JSON")
    p.add_argument("--fixture", choices=["cz", "x90", "iswap", "transmon"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("verify-appendix", help="check the tabulated pulses against their thresholds")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_verify_appendix)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        logging.getLogger("robustpulse.optimize").setLevel(logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, UnitMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PropagationError as exc:
        print(f"error: propagation failed: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
