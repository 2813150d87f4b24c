"""Command-line entry point: ``alfg {pose-est,rot-sync,mpc,plot,selftest}``.

Every experiment writes a CSV plus a JSON manifest next to it
(``<out>.manifest.json``). Parameters come from flags and, optionally, a
plain-text ``--config`` file of ``key = value`` lines; flags win.

Exit codes: 0 success, 1 solver failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import tempfile
import time
from importlib.resources import files
from pathlib import Path

import numpy as np

from . import __version__
from .linear import SolverError
from .manifold import ContractError

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- config files ------------------------------------------------------------


def read_key_values(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment, keys may use - or _."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _parse_bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def apply_config(parser: argparse.ArgumentParser, values: dict[str, str], source) -> None:
    """Install config values as parser defaults after type conversion."""
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, text in values.items():
        action = actions.get(key)
        if action is None:
            raise UsageError(f"{source}: unknown key {key!r}")
        try:
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                value = _parse_bool(text)
            else:
                value = action.type(text) if action.type else text
        except (TypeError, ValueError) as exc:
            raise UsageError(f"{source}: bad value for {key!r}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{source}: {key!r} must be one of {sorted(action.choices)}")
        defaults[key] = value
    parser.set_defaults(**defaults)


# --- output ------------------------------------------------------------------


def _atomic_write(path: Path, write) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows) -> Path:
    path = Path(path)

    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)

    _atomic_write(path, write)
    return path


def manifest_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.name + ".manifest.json")


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_manifest(csv_path, args, argv, wall_time, outputs, summary) -> Path:
    config = {k: v for k, v in vars(args).items() if k not in ("func",)}
    doc = {
        "command": args.command,
        "argv": list(argv),
        "config": config,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "wall_time_s": wall_time,
        "outputs": [str(p) for p in outputs],
        "summary": summary,
    }
    path = manifest_path(csv_path)
    _atomic_write(path, lambda fh: json.dump(_jsonable(doc), fh, indent=2, sort_keys=True))
    return path


# --- subcommands -------------------------------------------------------------


def cmd_pose_est(args):
    from .apps import pose_estimation as pe

    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    template = pe.PoseEstimationProblem(
        Omega_gps=args.omega_gps * np.eye(2), Omega_odom=args.omega_odom * np.eye(3),
        v=args.v, T=args.T, theta0=args.theta0,
    )
    results = pe.run_monte_carlo(args.trials, args.seed, template)
    out = write_csv(args.out, pe.CSV_COLUMNS, [r.row() for r in results])
    summary = pe.summarize(results)
    failed = sum(not (r.converged_free and r.converged_constrained) for r in results)
    summary["unconverged_trials"] = failed
    print(f"pose-est: {args.trials} trials, mean e_t free {summary['mean_e_t_free']:.4f} "
          f"constrained {summary['mean_e_t_constrained']:.4f} -> {out}")
    return [out], summary, EXIT_FAILURE if failed else EXIT_OK


SYNC_COLUMNS = ("run", "seed", "omega", "method", "dalpha_x", "dalpha_y", "dalpha_z",
                "orth_violation", "det_violation", "converged", "outer_iterations")


def cmd_rot_sync(args):
    from .apps import rotation_sync as rs

    init = "random" if args.random_init else args.init
    if args.measurements:
        problem = rs.read_measurements(args.measurements)
        rows = []
        rng = np.random.default_rng(args.seed)
        initial = rs.initial_guess(problem, init, rng)
        for constrained in (False, True):
            res = rs.solve_sync(problem, constrained, initial=initial)
            rows.append(dict(run=0, seed=args.seed, omega=float("nan"), method=res.method,
                             dalpha_x=res.errors[0], dalpha_y=res.errors[1],
                             dalpha_z=res.errors[2], orth_violation=res.orth_violation,
                             det_violation=res.det_violation, converged=res.converged,
                             outer_iterations=res.outer_iterations))
    else:
        if args.n < 3 or args.runs < 1 or not args.omega > 0:
            raise UsageError("need --n >= 3, --runs >= 1 and --omega > 0")
        rows = rs.run_sync_experiment(args.n, args.omega, args.seed, args.runs, init=init)
    out = write_csv(args.out, SYNC_COLUMNS, [[r[c] for c in SYNC_COLUMNS] for r in rows])
    ok = all(r["converged"] for r in rows)
    summary = {
        "rows": len(rows),
        "all_converged": ok,
        "max_orth_violation": max(float(r["orth_violation"]) for r in rows),
        "max_det_violation": max(float(r["det_violation"]) for r in rows),
    }
    for method in ("svd", "constrained"):
        errs = np.array([[r["dalpha_x"], r["dalpha_y"], r["dalpha_z"]]
                         for r in rows if r["method"] == method], dtype=float)
        known = errs[~np.isnan(errs).any(axis=1)] if errs.size else errs
        # measurement files carry no ground truth
        summary[f"mean_errors_{method}"] = known.mean(axis=0).tolist() if known.size else None
    print(f"rot-sync: {len(rows)} rows, max |A^T A - I| {summary['max_orth_violation']:.1e} -> {out}")
    return [out], summary, EXIT_OK if ok else EXIT_FAILURE


LIMIT_KEYS = ("omega_max", "dv_max", "dphi_max", "domega_max")


def read_limits(path) -> dict[str, float]:
    values = read_key_values(path)
    out = {}
    for key, text in values.items():
        if key not in LIMIT_KEYS:
            raise UsageError(f"{path}: unknown limit {key!r}; expected {', '.join(LIMIT_KEYS)}")
        try:
            out[key] = float(text)
        except ValueError:
            raise UsageError(f"{path}: bad value for {key!r}") from None
    return out


def default_goals_path(name: str = "goals11.txt"):
    return files("alfg") / "data" / name


def cmd_mpc(args):
    from .apps import mpc

    goals_path = args.goals or default_goals_path()
    try:
        goals = mpc.load_goals(goals_path)
    except OSError as exc:
        raise UsageError(f"cannot read goals file {goals_path}: {exc.strerror}") from None
    limits = read_limits(args.limits) if args.limits else {}
    config = mpc.MpcConfig(horizon=args.horizon, dt=args.dt, d=args.d,
                           formulation=args.formulation,
                           warm_multipliers=args.warm_multipliers, **limits)
    log = mpc.run_simulation(goals, config, seed=args.seed, noise=args.noise,
                             max_epochs_per_goal=args.max_epochs_per_goal)
    out = write_csv(args.out, mpc.CSV_COLUMNS, log.rows)
    iters = np.array(log.iterations)
    summary = {
        "goals": len(goals),
        "goals_completed": log.goals_completed,
        "travel_times": log.travel_times,
        "epochs": len(log.rows),
        "median_solve_ms": float(np.median(log.solve_ms)),
        "median_iterations": float(np.median(iters)),
        "unconverged_epochs": int(np.sum(iters >= config.solver.max_outer_iterations)),
    }
    print(f"mpc: {sum(log.goals_completed)}/{len(goals)} goals, {len(log.rows)} epochs, "
          f"median solve {summary['median_solve_ms']:.1f} ms -> {out}")
    return [out], summary, EXIT_OK if log.all_goals_completed else EXIT_FAILURE


def summarize_mpc_csv(path):
    """Per-goal travel times and per-epoch solve times from an ``mpc`` CSV."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"epoch", "time", "solve_ms", "iterations", "goal_index"} - set(reader.fieldnames or ())
        if missing:
            raise UsageError(f"{path}: not an mpc CSV (missing {', '.join(sorted(missing))})")
        rows = list(reader)
    travel, per_epoch = [], []
    start = 0.0
    by_goal: dict[int, list] = {}
    for r in rows:
        by_goal.setdefault(int(r["goal_index"]), []).append(r)
        per_epoch.append((int(r["epoch"]), int(r["goal_index"]), float(r["solve_ms"]),
                          int(r["iterations"])))
    for gi in sorted(by_goal):
        end = float(by_goal[gi][-1]["time"])
        ms = [float(r["solve_ms"]) for r in by_goal[gi]]
        travel.append((gi, round(end - start, 10), len(by_goal[gi]), float(np.median(ms))))
        start = end
    return travel, per_epoch


def cmd_plot(args):
    travel, per_epoch = summarize_mpc_csv(args.input)
    prefix = args.out_prefix or str(Path(args.input).with_suffix(""))
    t_out = write_csv(f"{prefix}_travel.csv",
                      ("goal_index", "travel_time", "epochs", "median_solve_ms"), travel)
    s_out = write_csv(f"{prefix}_solve.csv",
                      ("epoch", "goal_index", "solve_ms", "iterations"), per_epoch)
    ms = [p[2] for p in per_epoch]
    summary = {"goals": len(travel), "epochs": len(per_epoch),
               "median_solve_ms": float(np.median(ms)) if ms else None}
    print(f"plot: {len(travel)} goals, {len(per_epoch)} epochs -> {t_out}, {s_out}")
    return [t_out, s_out], summary, EXIT_OK


def cmd_selftest(args):
    from . import selftest

    results = selftest.run_selftest(args.seed)
    for r in results:
        print(r.line())
    return [], {r.name: r.passed for r in results}, (
        EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE)


# --- parser ------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="alfg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"alfg {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="plain-text 'key = value' defaults; flags win")
        p.set_defaults(func=func)
        return p

    p = add("pose-est", cmd_pose_est, "Monte Carlo pose estimation, free vs constrained")
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--theta0", type=float, default=0.5)
    p.add_argument("--v", type=float, default=1.0)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--omega-odom", type=float, default=10.0, help="odometry information scale")
    p.add_argument("--omega-gps", type=float, default=20.0, help="GPS information scale")
    p.add_argument("--out", default="pose_est.csv")

    p = add("rot-sync", cmd_rot_sync, "Rotation synchronization, constrained vs SVD baseline")
    p.add_argument("--n", type=int, default=99)
    p.add_argument("--omega", type=float, default=1e3, help="measurement information norm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--init", choices=("zeros", "identity", "random"), default="zeros")
    p.add_argument("--random-init", action="store_true", help="same as --init random")
    p.add_argument("--measurements", help="edge file: 'i j' + 9 entries + omega per line")
    p.add_argument("--out", default="rot_sync.csv")

    p = add("mpc", cmd_mpc, "Receding-horizon control through a goal list")
    p.add_argument("--goals", help="file of 'g_x g_y g_theta' lines (default: shipped 11 goals)")
    p.add_argument("--formulation", choices=("slack", "maxpen"), default="slack")
    p.add_argument("--horizon", type=int, default=20)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--d", type=float, default=0.5)
    p.add_argument("--limits", help="'key = value' file with " + ", ".join(LIMIT_KEYS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0, help="plant noise std per state")
    p.add_argument("--warm-multipliers", action="store_true",
                   help="carry shifted multipliers between epochs")
    p.add_argument("--max-epochs-per-goal", type=int, default=600)
    p.add_argument("--out", default="mpc.csv")

    p = add("plot", cmd_plot, "Travel-time and solve-time summaries of an mpc CSV")
    p.add_argument("input", help="CSV written by 'alfg mpc'")
    p.add_argument("--out-prefix", help="output prefix (default: input without suffix)")

    p = add("selftest", cmd_selftest, "Run the oracle property suites")
    p.add_argument("--seed", type=int, default=0)
    return parser


def parse(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        apply_config(subparser, read_key_values(args.config), args.config)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    t0 = time.perf_counter()
    try:
        outputs, summary, code = args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (ContractError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if outputs:
        write_manifest(outputs[0], args, argv, time.perf_counter() - t0, outputs, summary)
    return code


if __name__ == "__main__":
    sys.exit(main())
