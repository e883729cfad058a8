"""Command-line front end: ``amylin-mpc <subcommand>``.

Exit codes: 0 success, 1 runtime failure, 2 usage or input validation
error, 3 linearization tolerance violated, 4 fit did not converge.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io, linearize, zoo
from .sim import SimulationError, generate_cohort, run_arms, run_scenario

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_TOLERANCE, EXIT_NOT_CONVERGED = 0, 1, 2, 3, 4
THREADS_ENV = "AMYLIN_MPC_THREADS"

log = logging.getLogger("amylin_mpc")


def _threads(value) -> int:
    if value is None:
        value = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(value)
    except ValueError:
        raise io.ConfigError(f"thread count must be an integer, got {value!r}") from None
    if n < 1:
        raise io.ConfigError("thread count must be >= 1")
    return n


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _error(msg: str, code: int) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def cmd_simulate(scenario_path, out_dir=".", seed=None, overrides=(), threads=None) -> int:
    """Run one scenario; writes ``trace.csv`` and ``summary.json``."""
    try:
        _threads(threads)  # validated for a uniform interface; one loop is sequential
        if seed is not None:
            overrides = [*overrides, f"seed={int(seed)}"]
        scn = io.load_scenario(scenario_path, overrides)
    except io.ConfigError as exc:
        return _error(str(exc), EXIT_USAGE)
    try:
        trace, summary = run_scenario(scn)
    except SimulationError as exc:
        return _error(str(exc), EXIT_RUNTIME)
    out = _out_dir(out_dir)
    io.write_trace(trace, out / "trace.csv")
    io.write_summary(summary, out / "summary.json")
    print(f"TIR {summary.pct_tir:.2f}%  mean CGM {summary.mean_cgm:.1f} mg/dL  -> {out}")
    return EXIT_OK


def cmd_compare_arms(cohort_spec=None, out_dir=".", seed=None, overrides=(),
                     threads=None) -> int:
    """Run every arm on a synthetic cohort; writes table3.csv, table4.csv and a report."""
    try:
        n_threads = _threads(threads)
        if seed is not None:
            overrides = [*overrides, f"seed={int(seed)}"]
        spec = io.load_cohort(cohort_spec, overrides)
    except io.ConfigError as exc:
        return _error(str(exc), EXIT_USAGE)
    try:
        cohort = generate_cohort(spec.n_patients, seed=spec.seed, base=spec.patient)
        results = run_arms(cohort, spec.schedules(), spec.duration_days, mpc=spec.mpc,
                           mdd=spec.mdd, arms=spec.arms, threads=n_threads, seed=spec.seed)
    except (ValueError, RuntimeError) as exc:
        return _error(str(exc), EXIT_RUNTIME)
    if all(not r["summaries"] for r in results.values()):
        return _error("every patient failed in every arm", EXIT_RUNTIME)
    out = _out_dir(out_dir)
    io.write_table(io.arm_table(results, io.TABLE3_ARMS), out / "table3.csv")
    io.write_table(io.arm_table(results, io.TABLE4_ARMS), out / "table4.csv")
    (out / "report.md").write_text(io.markdown_report(spec, results))
    print(f"{spec.n_patients} patients x {len(spec.arms)} arms -> {out}")
    return EXIT_OK


def cmd_check_linearization(n_states=100, seed=0, rtol=1e-5, exact_tol=1e-12) -> int:
    """Jacobian and FOH/ZOH exactness over random states; exit 3 on violation."""
    if n_states < 1:
        return _error("n_states must be >= 1", EXIT_USAGE)
    rep = linearize.check_linearization(n_states, seed, rtol=rtol, exact_tol=exact_tol)
    print(f"states checked:            {rep.n_states}")
    print(f"jacobian max rel error:    {rep.jacobian_max_rel:.3e} (tol {rtol:g})")
    print(f"FOH reconstruction error:  {rep.foh_max_abs:.3e} (tol {exact_tol:g})")
    print(f"ZOH reconstruction error:  {rep.zoh_max_abs:.3e} (tol {exact_tol:g})")
    if rep.ok:
        return EXIT_OK
    worst = (rep.worst_jacobian_state if rep.jacobian_max_rel >= rtol
             else rep.worst_exact_state)
    print("tolerance violated at state: " + " ".join(f"{v:.6g}" for v in worst))
    return EXIT_TOLERANCE


def _write_residuals(path, result: zoo.FitResult, data: zoo.Dataset):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_min", "observable_name", "residual"])
        for name, (ts, _) in data.series.items():
            for t, r in zip(ts, result.residuals.get(name, [])):
                w.writerow([repr(float(t)), name, repr(float(r))])


def cmd_fit(family, variant, data_csv, out_dir=".", seed=0, n_starts=8) -> int:
    """Fit one model-zoo candidate; writes ``fit.json`` and ``residuals.csv``."""
    if n_starts < 1:
        return _error("n_starts must be >= 1", EXIT_USAGE)
    try:
        model = zoo.candidate(family, int(variant))
        data = zoo.read_observations(data_csv)
        missing = set(data.series) - set(model.observables)
        if missing:
            raise ValueError(f"observable(s) {sorted(missing)} not produced by "
                             f"{model.family.value}; expected {list(model.observables)}")
    except (ValueError, OSError) as exc:
        return _error(str(exc), EXIT_USAGE)
    result = zoo.fit_model(model, data, n_starts=n_starts, seed=seed)
    out = _out_dir(out_dir)
    payload = {"family": model.family.value, "variant": model.variant, **result.as_dict()}
    if not np.isfinite(payload["rmse"]):
        payload["rmse"] = None
    (out / "fit.json").write_text(json.dumps(payload, indent=2) + "\n")
    _write_residuals(out / "residuals.csv", result, data)
    print(f"{model.family.value} {model.variant}: rmse {result.rmse:.6g}, "
          f"converged={result.converged}")
    for name, value in payload["params"].items():
        print(f"  {name} = {value:.6g}")
    return EXIT_OK if result.converged and np.isfinite(result.rmse) else EXIT_NOT_CONVERGED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amylin-mpc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_default=None):
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted key override, repeatable")
        p.add_argument("--threads", default=None,
                       help=f"worker processes (default ${THREADS_ENV} or 1)")

    p = sub.add_parser("simulate", help="run one scenario")
    p.add_argument("scenario", help="scenario JSON file")
    common(p)

    p = sub.add_parser("compare-arms", help="compare delivery policies on a cohort")
    p.add_argument("cohort_spec", nargs="?", default=None,
                   help="cohort JSON file (defaults apply when omitted)")
    common(p)

    p = sub.add_parser("check-linearization", help="verify the analytic linearization")
    p.add_argument("--n-states", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rtol", type=float, default=1e-5)

    p = sub.add_parser("fit", help="fit a model-zoo candidate to observations")
    p.add_argument("family", choices=[f.value for f in zoo.Family])
    p.add_argument("variant", type=int)
    p.add_argument("data_csv", help="CSV with time_min, observable_name, value")
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-starts", type=int, default=8)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "simulate":
        return cmd_simulate(args.scenario, args.out, args.seed, args.override, args.threads)
    if args.command == "compare-arms":
        return cmd_compare_arms(args.cohort_spec, args.out, args.seed, args.override,
                                args.threads)
    if args.command == "check-linearization":
        return cmd_check_linearization(args.n_states, args.seed, args.rtol)
    return cmd_fit(args.family, args.variant, args.data_csv, args.out, args.seed,
                   args.n_starts)


if __name__ == "__main__":
    sys.exit(main())
