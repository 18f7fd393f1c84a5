"""Command-line surface.

Exit codes are part of the stable interface: 0 success, 1 infeasible,
2 usage or malformed input, 3 internal consistency failure (structured
solver and oracle disagree).  Every failure prints one machine-parseable
line ``dpacq: code=<n> kind=<kind> detail=<message>`` on stderr.

The environment variable ``DPACQ_TOL`` (a float) overrides the default
pass/fail tolerances of ``verify`` and ``audit``; per-gate flags take
precedence over it.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

import numpy as np

from . import files
from .benefit import LinearBenefit
from .errors import (InfeasibleError, InternalConsistencyError,
                     OracleFailureError, ValidationError)
from .model import FixedEtaSolution, Instance, PrivacyConstrained, QuasiLinear
from .oracles import kkt_certify_pc, kkt_certify_ql, oracle_fixed_eta_pc, \
    oracle_fixed_eta_ql
from .pc import solve_fixed_eta_pc, solve_pc
from .ql import SweepGrid, default_sweep_grid, solve_fixed_eta_ql, sweep_eta_ql
from .sim import empirical_variance, misreport_audit_pc

ENV_TOL = "DPACQ_TOL"


def _env_tol() -> Optional[float]:
    raw = os.environ.get(ENV_TOL)
    if raw is None:
        return None
    try:
        return float(raw)
    except ValueError:
        raise ValidationError(f"{ENV_TOL} must be a number, got {raw!r}")


def _gate_tol(flag_value: Optional[float], default: float) -> float:
    if flag_value is not None:
        return flag_value
    env = _env_tol()
    return env if env is not None else default


def _model_name(instance: Instance) -> str:
    return "quasi_linear" if isinstance(instance.model, QuasiLinear) else \
        "privacy_constrained"


def _g(x: float) -> str:
    return format(float(x), ".10g")


def _print_summary(instance: Instance, sol: FixedEtaSolution) -> None:
    print(f"model={_model_name(instance)} n={instance.n} eta={_g(sol.eta)} "
          f"objective={_g(sol.objective)}")
    structure = f"structure: t={sol.pool_size} W={_g(sol.pooled_weight)}"
    if sol.scale is not None:
        structure += f" K={_g(sol.scale)}"
    print(structure)
    doc = files.solution_to_dict(instance, sol)
    print(f"{'agent':<10} {'weight':>14} {'epsilon':>14} {'slack':>14}")
    for aid, entry in doc["per_agent"].items():
        print(f"{aid:<10} {_g(entry['weight']):>14} {_g(entry['epsilon']):>14} "
              f"{_g(entry['constraint_slack']):>14}")


def _solve_instance(instance: Instance, eta: Optional[float]):
    """Returns (solution, eta_search_meta)."""
    if eta is not None:
        if isinstance(instance.model, PrivacyConstrained):
            sol = solve_fixed_eta_pc(instance.thresholds(), instance.sigma2, eta)
        else:
            sol = solve_fixed_eta_ql(instance, eta)
        return sol, {"method": "fixed"}
    if isinstance(instance.model, PrivacyConstrained):
        ms = solve_pc(instance)
    else:
        ms = sweep_eta_ql(instance, default_sweep_grid(instance))
    return ms.best, files.eta_search_meta(ms.eta_search)


def _cmd_solve(args) -> int:
    instance = files.load_instance(args.instance)
    sol, meta = _solve_instance(instance, args.eta)
    _print_summary(instance, sol)
    if args.out:
        files.write_solution(args.out, files.solution_to_dict(
            instance, sol, search_meta=meta))
        print(f"wrote {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    instance = files.load_instance(args.instance)
    if not isinstance(instance.model, QuasiLinear):
        raise ValidationError("sweep applies to quasi-linear instances; "
                              "privacy-constrained eta is found in closed form "
                              "by `solve`")
    grid = SweepGrid(lo=args.lo, hi=args.hi, points=args.points,
                     refine_rounds=args.refine)
    ms = sweep_eta_ql(instance, grid)
    files.emit_trace_csv(ms.trace, args.trace)
    print(f"wrote {args.trace} ({len(ms.trace)} rows)")
    _print_summary(instance, ms.best)
    if args.out:
        files.write_solution(args.out, files.mechanism_solution_to_dict(instance, ms))
        print(f"wrote {args.out}")
    return 0


def _kkt_dict(report) -> dict:
    return {
        "stationarity": report.stationarity_residual,
        "complementary_slackness": report.complementary_slackness_residual,
        "primal_feasibility": report.primal_feasibility_residual,
        "dual_feasibility_ok": report.dual_feasibility_ok,
        "inconclusive": report.inconclusive,
    }


def _cmd_verify(args) -> int:
    instance = files.load_instance(args.instance)
    sol, _ = _solve_instance(instance, args.eta)
    print(f"verify model={_model_name(instance)} n={instance.n} eta={_g(sol.eta)}")
    ok = True
    if isinstance(instance.model, PrivacyConstrained):
        tol_gap = _gate_tol(args.tol_gap, 1e-6)
        tol_w = _gate_tol(args.tol_w, 1e-5)
        tol_kkt = _gate_tol(args.tol_kkt, 1e-8)
        w_oracle = oracle_fixed_eta_pc(instance.thresholds(), instance.sigma2,
                                       sol.eta)
        obj_oracle = instance.sigma2 * float(w_oracle @ w_oracle) \
            + 2.0 / sol.eta ** 2
        gap = abs(sol.objective - obj_oracle)
        dw = float(np.max(np.abs(sol.weights - w_oracle)))
        good = gap <= tol_gap
        ok &= good
        print(f"objective structured={_g(sol.objective)} oracle={_g(obj_oracle)} "
              f"gap={gap:.3e} [{'PASS' if good else 'FAIL'} tol={tol_gap:g}]")
        good = dw <= tol_w
        ok &= good
        print(f"weights max|dw|={dw:.3e} [{'PASS' if good else 'FAIL'} tol={tol_w:g}]")
        report = kkt_certify_pc(sol, instance.thresholds(), instance.sigma2)
    else:
        tol_gap = _gate_tol(args.tol_gap, 1e-5)
        tol_kkt = _gate_tol(args.tol_kkt, 1e-8)
        oracle = oracle_fixed_eta_ql(instance, sol.eta)
        gap = abs(sol.objective - oracle.objective)
        good = oracle.feasible and gap <= tol_gap
        ok &= good
        print(f"objective structured={_g(sol.objective)} oracle={_g(oracle.objective)} "
              f"gap={gap:.3e} [{'PASS' if good else 'FAIL'} tol={tol_gap:g}]")
        dw = float(np.max(np.abs(sol.weights - oracle.weights)))
        print(f"weights max|dw|={dw:.3e} [ungated; subgradient oracle]")
        report = kkt_certify_ql(sol, instance, sol.eta)
    good = report.passes(tol_kkt)
    ok &= good
    print(f"kkt stationarity={report.stationarity_residual:.3e} "
          f"complementary={report.complementary_slackness_residual:.3e} "
          f"primal={report.primal_feasibility_residual:.3e} "
          f"dual_ok={report.dual_feasibility_ok} "
          f"inconclusive={report.inconclusive} "
          f"[{'PASS' if good else 'FAIL'} tol={tol_kkt:g}]")
    print("VERIFY PASS" if ok else "VERIFY FAIL")
    return 0 if ok else 3


def _cmd_audit(args) -> int:
    instance = files.load_instance(args.instance)
    if not isinstance(instance.model, PrivacyConstrained):
        raise ValidationError(
            "audit applies to privacy-constrained instances; strategic cost "
            "reporting in the quasi-linear model is out of scope")
    try:
        lo, hi, points = args.grid.split(",")
        grid = (float(lo), float(hi), int(points))
    except ValueError:
        raise ValidationError(f"--grid expects lo,hi,points, got {args.grid!r}")
    tol = _gate_tol(args.tol, 1e-9)
    if args.agent is not None:
        if args.agent not in instance.ids:
            raise ValidationError(f"unknown agent id {args.agent!r}")
        indices = [instance.ids.index(args.agent)]
    else:
        indices = list(range(instance.n))
    print(f"audit model=privacy_constrained n={instance.n} "
          f"grid=[{grid[0]:g},{grid[1]:g}]x{grid[2]}")
    ok = True
    for idx in indices:
        for variant in ("joint", "fixed_eta"):
            result = misreport_audit_pc(instance, idx, report_grid=grid,
                                        variant=variant)
            good = result.max_gain <= tol
            ok &= good
            print(f"agent={instance.ids[idx]:<8} variant={variant:<10} "
                  f"max_gain={result.max_gain:.6g} "
                  f"[{'PASS' if good else 'FAIL'} tol={tol:g}]")
    print("AUDIT PASS" if ok else "AUDIT FAIL")
    return 0 if ok else 3


def _cmd_simulate(args) -> int:
    instance = files.load_instance(args.instance)
    sol, _ = _solve_instance(instance, args.eta)
    report = empirical_variance(instance, sol.weights, sol.eta, args.trials,
                                args.seed, args.mean)
    analytic = float(instance.sigma2 * float(sol.weights @ sol.weights)
                     + 2.0 / sol.eta ** 2)
    se_mean = float(np.sqrt(report.variance / args.trials))
    print(f"simulate trials={args.trials} seed={args.seed} eta={_g(sol.eta)}")
    print(f"mean empirical={_g(report.mean)} expected={_g(args.mean)} "
          f"z={(report.mean - args.mean) / se_mean:+.2f}")
    print(f"variance empirical={_g(report.variance)} analytic={_g(analytic)} "
          f"z={(report.variance - analytic) / report.stderr_variance:+.2f} "
          f"stderr={report.stderr_variance:.3e}")
    return 0


def _cmd_gen(args) -> int:
    try:
        a_str, b_str = args.benefit.split(",")
        benefit = LinearBenefit(a=float(a_str), b=float(b_str))
    except ValueError:
        raise ValidationError(f"--benefit expects a,b, got {args.benefit!r}")
    model = {"pc": "privacy_constrained", "ql": "quasi_linear"}[args.model]
    instance = files.gen_instance(
        args.n, args.seed, model=model, sigma2=args.sigma2,
        tau_range=(args.tau_lo, args.tau_hi), c_range=(args.c_lo, args.c_hi),
        benefit=benefit, outside_option=args.outside_option)
    files.write_instance(args.out, instance)
    print(f"wrote {args.out} (n={instance.n}, model={model})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpacq",
        description="Variance-optimal weighted DP mean estimation for "
                    "privacy-aware data acquisition.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve an instance (optionally at fixed eta)")
    p.add_argument("instance")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--out", default=None, help="write a solution file here")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("sweep", help="grid-sweep eta for a quasi-linear instance")
    p.add_argument("instance")
    p.add_argument("--lo", type=float, required=True)
    p.add_argument("--hi", type=float, required=True)
    p.add_argument("--points", type=int, required=True)
    p.add_argument("--refine", type=int, default=3)
    p.add_argument("--trace", required=True, help="CSV trace output path")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("verify", help="cross-check solver, oracle, and KKT certificate")
    p.add_argument("instance")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--tol-gap", type=float, default=None, dest="tol_gap")
    p.add_argument("--tol-w", type=float, default=None, dest="tol_w")
    p.add_argument("--tol-kkt", type=float, default=None, dest="tol_kkt")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("audit", help="misreport audit (privacy-constrained)")
    p.add_argument("instance")
    p.add_argument("--agent", default=None, help="audit a single agent id")
    p.add_argument("--grid", default="0.2,5.0,50", help="lo,hi,points report grid")
    p.add_argument("--tol", type=float, default=None)
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("simulate", help="Monte Carlo variance check")
    p.add_argument("instance")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--mean", type=float, required=True)
    p.add_argument("--eta", type=float, default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("gen", help="generate a random instance file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--model", choices=("pc", "ql"), required=True)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--tau-lo", type=float, default=0.01, dest="tau_lo")
    p.add_argument("--tau-hi", type=float, default=1.0, dest="tau_hi")
    p.add_argument("--c-lo", type=float, default=0.1, dest="c_lo")
    p.add_argument("--c-hi", type=float, default=10.0, dest="c_hi")
    p.add_argument("--benefit", default="1.0,0.1", help="linear benefit a,b")
    p.add_argument("--outside-option", type=float, default=0.0,
                   dest="outside_option")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen)
    return parser


def _fail(code: int, kind: str, detail: str) -> int:
    print(f"dpacq: code={code} kind={kind} detail={detail}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        return args.func(args)
    except InfeasibleError as e:
        return _fail(1, "infeasible", str(e))
    except ValidationError as e:
        return _fail(2, "usage", str(e))
    except (InternalConsistencyError, OracleFailureError) as e:
        return _fail(3, "internal", str(e))
    except FileNotFoundError as e:
        return _fail(2, "usage", f"cannot read {e.filename}")


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
