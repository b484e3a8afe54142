"""Command-line entry point ``lckmp``.

Exit status is 0 on success, 1 for invalid input, 2 for numerical
failures and 3 for unreadable or unwritable files. Errors are printed to
stderr with the pipeline stage that raised them.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .config import ScenarioConfig, desired_points, run_pipeline
from .exceptions import DataFileError, LcKmpError, NumericalError, ValidationError
from .model import ConstraintSet, adapt, constraint_slack, predict, train
from .mpc import KKT_TOL, equivalence_check, kkt_ok, receding_horizon, solve_batch
from .scenarios import gen_scenario
from .trajdata import write_demos

VERIFY_TOL = 1e-6
_STAGES = {"gen": "ingest", "fit": "assemble", "adapt": "assemble", "predict": "predict",
           "verify": "predict", "mpc-compare": "mpc", "mpc-solve": "mpc"}


def parse_times(text):
    """``"a:b:n"`` (n evenly spaced points), ``"t1,t2,..."`` or ``""`` (no times)."""
    text = (text or "").strip()
    if not text:
        return np.zeros(0)
    try:
        if ":" in text:
            a, b, n = text.split(":")
            n = int(n)
            if n < 1:
                raise ValueError("point count must be positive")
            return np.linspace(float(a), float(b), n)
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError as exc:
        raise ValidationError(f"cannot parse times {text!r}: {exc}", "predict") from None


def _need(args, name, flag):
    value = getattr(args, name, None)
    if value is None:
        raise ValidationError(f"{args.command} needs {flag}", "ingest")
    return value


def _load_config(args):
    return ScenarioConfig.load(_need(args, "config", "--config"), seed=args.seed)


def _worst_slack(model):
    slack = constraint_slack(model)
    active = model.constraints.active
    return float(np.min(slack[active])) if active.any() else None


def _report_fit(model, out):
    sol = model.dual
    iterations = sol.iterations if sol is not None else 0
    worst = _worst_slack(model)
    print(f"dual status: {model.dual_status}", file=out)
    print(f"dual iterations: {iterations}", file=out)
    print(f"active constraints: {model.constraints.n_active}", file=out)
    print("worst constraint slack: " + ("none" if worst is None else f"{worst:.3e}"), file=out)


def _save_outputs(args, res):
    fileio.save_model(res.model, _need(args, "out", "--out"))
    if args.trajectory:
        times = res.model.ref.times
        fileio.write_trajectory_csv(times, predict(res.model, times), args.trajectory,
                                    res.model.output_dim)
    if args.reference:
        fileio.write_reference_csv(res.reference, args.reference)
    if args.gmm_out and res.gmm is not None:
        fileio.save_gmm(res.gmm, args.gmm_out)


def cmd_gen(args):
    demos = gen_scenario(args.name, None, 0 if args.seed is None else args.seed)
    write_demos(demos, _need(args, "out", "--out"))
    print(f"wrote {demos.n_demos} demonstrations of {demos.length} points (O={demos.output_dim})")
    return 0


def cmd_fit(args):
    config = _load_config(args)
    res = run_pipeline(config, constrained=not args.unconstrained)
    _save_outputs(args, res)
    _report_fit(res.model, sys.stdout)
    return 0


def cmd_predict(args):
    model = fileio.load_model(args.model)
    times = parse_times(args.times)
    eta = predict(model, times) if times.size else np.zeros((0, 2 * model.output_dim))
    fileio.write_trajectory_csv(times, eta, _need(args, "out", "--out"), model.output_dim)
    return 0


def cmd_adapt(args):
    """Re-train a saved model after inserting desired points from a YAML list."""
    model = fileio.load_model(args.model)
    doc = fileio.load_yaml(args.points, "assemble")
    entries = doc.get("desired_points")
    if not isinstance(entries, list) or not entries:
        raise ValidationError(f"{args.points}: expected a non-empty 'desired_points' list",
                              "assemble")
    o = model.output_dim
    points = []
    for p in entries:
        p = dict(p)
        mu = np.asarray(p.get("mu", []), dtype=float).reshape(-1)
        if mu.size == o:
            # keep the current velocity at that time
            p["mu"] = np.concatenate([mu, predict(model, float(p["t"]))[o:]])
        points.append(p)
    config = ScenarioConfig(name="adapt", seed=0, lam=model.lam, k_h=model.spec.k_h,
                            delta=model.spec.delta, rows=model.rows,
                            desired_points=tuple(points))
    ref = adapt(model.ref, desired_points(config, None, o))
    if model.constraints.n_active and not model.rows:
        raise ValidationError("model stores no constraint rows to re-expand", "assemble")
    cons = ConstraintSet.from_rows(ref.times, model.rows, o)
    new = train(model.spec, model.lam, ref, cons, rows=model.rows)
    fileio.save_model(new, _need(args, "out", "--out"))
    _report_fit(new, sys.stdout)
    return 0


def verify_lines(model, fine_factor):
    """Per-constraint minimum slack on the training grid and between grid points.

    Returns ``(lines, failed)``. Between two training times the constraint
    of the right neighbour applies, matching the ``(start, end]`` ranges.
    """
    if int(fine_factor) != fine_factor or fine_factor < 1:
        raise ValidationError(f"fine factor must be an integer >= 1, got {fine_factor}",
                              "predict")
    cons = model.constraints
    times = model.ref.times
    lines, failed = [], False
    if not cons.n_active:
        return ["no active constraints", "PASS"], False
    train_slack = constraint_slack(model)
    frac = np.arange(1, fine_factor) / fine_factor
    if frac.size and times.size > 1:
        mid = (times[:-1, None] + frac[None, :] * np.diff(times)[:, None])
        eta_mid = predict(model, mid.reshape(-1)).reshape(mid.shape + (-1,))
    else:
        eta_mid = None
    for f in range(cons.n_constraints):
        active = cons.active[:, f]
        if not active.any():
            continue
        s_train = float(np.min(train_slack[active, f]))
        status = "FAIL" if s_train < -VERIFY_TOL else "ok"
        failed |= status == "FAIL"
        text = f"constraint {f}: grid min slack {s_train:.3e} {status}"
        if eta_mid is not None:
            right = active[1:]
            if right.any():
                s_mid = np.einsum("nd,nkd->nk", cons.g[1:, f], eta_mid) - cons.c[1:, f, None]
                worst = float(np.min(s_mid[right]))
                flag = "WARN" if worst < -VERIFY_TOL else "ok"
                text += f"; between grid points min slack {worst:.3e} {flag}"
        lines.append(text)
    lines.append("FAIL" if failed else "PASS")
    return lines, failed


def cmd_verify(args):
    model = fileio.load_model(args.model)
    lines, failed = verify_lines(model, args.fine_factor)
    _emit(lines, args.out, "predict")
    return 2 if failed else 0


def _emit(lines, out_path, stage):
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out_path:
        try:
            Path(out_path).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise DataFileError(f"cannot write {out_path}: {exc.strerror or exc}",
                                stage) from exc


def cmd_mpc_compare(args):
    config = _load_config(args)
    features = config.feature_map()
    if features is None:
        raise ValidationError(f"config {config.name!r} has no 'features' section", "mpc")
    steps = len(config.reference["times"]) if config.reference else config.grid["n"]
    if steps > 4:
        raise ValidationError(
            f"instance too large for the explicit-feature check: N={steps} (max 4)", "mpc")
    res = run_pipeline(config)
    report = equivalence_check(res.model, features)
    _emit(report.lines(), args.out, "mpc")
    return 0 if report.passed else 2


def cmd_mpc_solve(args):
    config = _load_config(args)
    problem = config.mpc_problem()
    if args.replan_every:
        u, eta = receding_horizon(problem, args.replan_every)
        status = f"closed loop, re-planned every {args.replan_every} step(s)"
    else:
        sol = solve_batch(problem)
        if not kkt_ok(sol.kkt, KKT_TOL):
            raise NumericalError(f"batch solution misses the KKT tolerance: {sol.kkt}", "mpc")
        u, eta, status = sol.u, sol.eta, f"dual status {sol.status}"
    dt = float(config.mpc.get("dt", 1.0))
    times = dt * np.arange(eta.shape[0])
    fileio.write_mpc_csv(times, eta, u, _need(args, "out", "--out"))
    print(status)
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the scenario seed")
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="scenario file or bundled scenario name")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output file")

    parser = argparse.ArgumentParser(prog="lckmp", parents=[common],
                                     description="Linearly constrained kernelized movement "
                                                 "primitives")
    parser.set_defaults(seed=None, config=None, out=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="write synthetic demonstrations to CSV")
    p.add_argument("name", help="generator: letter_g_2d, letter_g_3d or walk_com")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", parents=[common], help="train a model from a scenario")
    p.add_argument("--trajectory", help="also write the prediction on the grid")
    p.add_argument("--reference", help="also write the reference trajectory")
    p.add_argument("--gmm-out", help="also write the mixture model")
    p.add_argument("--unconstrained", action="store_true", help="ignore all constraints")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", parents=[common], help="evaluate a saved model")
    p.add_argument("model")
    p.add_argument("--times", default="", help='"start:end:n", "t1,t2,..." or empty')
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("adapt", parents=[common], help="re-train with added desired points")
    p.add_argument("model")
    p.add_argument("points", help="YAML file with a desired_points list")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("verify", parents=[common], help="check constraints on a finer grid")
    p.add_argument("model")
    p.add_argument("--fine-factor", type=int, default=1)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("mpc-compare", parents=[common],
                       help="solve a small scenario again as batch MPC and compare")
    p.set_defaults(func=cmd_mpc_compare)

    p = sub.add_parser("mpc-solve", parents=[common], help="solve an MPC problem file")
    p.add_argument("--replan-every", type=int, default=0,
                   help="simulate receding-horizon execution")
    p.set_defaults(func=cmd_mpc_solve)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LcKmpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except np.linalg.LinAlgError as exc:
        print(f"error: [{_STAGES[args.command]}] {exc}", file=sys.stderr)
        return NumericalError.exit_code


if __name__ == "__main__":
    sys.exit(main())
