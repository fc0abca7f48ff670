"""Batch front end: ``dualrl gen | run | compare | catalog``.

Exit codes: 0 success (including non-converged solves), 2 invalid input, 3 coverage
failure, 4 non-ergodic chain. Errors are also written to stderr as JSON lines.
"""

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from dualrl import dataset as ds_mod
from dualrl.catalog import emit_catalog
from dualrl.errors import CoverageError, DualRLError, MissingCatalogEntry, NotErgodic
from dualrl.mdp import FIXTURES, Policy, TabularMdp, random_mdp
from dualrl.registry import parse_method, run_method
from dualrl.solver import SolverConfig

EXIT_OK, EXIT_INVALID, EXIT_COVERAGE, EXIT_NOT_ERGODIC = 0, 2, 3, 4
CSV_COLUMNS = ("seed", "method", "value_estimate", "oracle_value", "abs_error", "zeta_max_error", "iters", "converged", "error")
TARGET_SEED_OFFSET = 100


class CliError(Exception):
    def __init__(self, code, kind, message):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _fail(kind, message, code=EXIT_INVALID):
    raise CliError(code, kind, message)


def _classify(exc):
    if isinstance(exc, CoverageError):
        return EXIT_COVERAGE
    if isinstance(exc, NotErgodic):
        return EXIT_NOT_ERGODIC
    return EXIT_INVALID


# -- building blocks ------------------------------------------------------------


def build_mdp(args, seed=None):
    if getattr(args, "mdp", None):
        return TabularMdp.load(args.mdp)
    if getattr(args, "fixture", None):
        if args.fixture not in FIXTURES:
            _fail("BadSpec", f"unknown fixture {args.fixture!r}; choose from {sorted(FIXTURES)}")
        return FIXTURES[args.fixture]() if args.gamma is None else FIXTURES[args.fixture](discount=args.gamma)
    if args.states is None or args.actions is None:
        _fail("BadSpec", "give --mdp, --fixture, or --states/--actions")
    if args.states < 1 or args.actions < 1:
        _fail("BadSpec", "--states and --actions must be positive")
    gamma = 0.9 if args.gamma is None else args.gamma
    return random_mdp(args.states, args.actions, gamma, args.seed if seed is None else seed)


def build_policy(spec, mdp, seed):
    """"uniform" | "random" | "random:<seed>" | "deterministic:<a0,a1,...>" | path to a JSON table."""
    spec = spec or "uniform"
    kind, _, arg = spec.partition(":")
    if kind == "uniform":
        return Policy.uniform(mdp.n_states, mdp.n_actions)
    if kind == "random":
        return Policy.random(mdp.n_states, mdp.n_actions, int(arg) if arg else seed + TARGET_SEED_OFFSET)
    if kind == "deterministic":
        acts = [int(a) for a in arg.split(",")] if arg else [0] * mdp.n_states
        if len(acts) != mdp.n_states or any(not 0 <= a < mdp.n_actions for a in acts):
            _fail("BadSpec", f"deterministic policy needs {mdp.n_states} actions in [0, {mdp.n_actions})")
        return Policy.deterministic(acts, mdp.n_actions)
    path = Path(spec)
    if path.exists():
        pol = Policy(json.loads(path.read_text()))
        pol.check_matches(mdp)
        return pol
    _fail("BadSpec", f"unrecognized policy spec {spec!r}")


def build_config(args):
    data = dict(getattr(args, "solver_dict", None) or {})
    if getattr(args, "solver", None):
        data.update(json.loads(Path(args.solver).read_text()))
    for key in ("max_iters", "grad_tol", "step_size_min", "step_size_max"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    return SolverConfig.from_dict(data) if data else None


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def run_cell(args, method, seed):
    """One (seed, method) experiment; returns the result dictionary."""
    spec = parse_method(method)
    mdp = build_mdp(args, seed)
    if spec.undiscounted:
        mdp = mdp.with_discount(1.0)
    behavior = build_policy(args.behavior, mdp, seed)
    target = build_policy(args.target, mdp, seed) if spec.needs_target else None
    if getattr(args, "dataset", None):
        data = ds_mod.OfflineDataset.load(args.dataset)
    else:
        data = ds_mod.from_behavior(mdp, behavior, args.mode, args.samples, seed)
    config = build_config(args)
    res = run_method(spec, mdp, data, target, config)
    report = res.pop("report")
    res.update(converged=report.converged, iters=report.iters_used, final_grad_norm=report.final_grad_norm, seed=seed,
               mdp_id=mdp.mdp_id(), config=(config or SolverConfig()).to_dict() if config else "method default")
    return res


# -- subcommands -----------------------------------------------------------------


def cmd_gen(args):
    if args.gamma is not None and not (0.0 < args.gamma <= 1.0):
        _fail("BadDiscount", f"--gamma must be in (0, 1], got {args.gamma}")
    mdp = build_mdp(args)
    out = Path(args.out)
    mdp.save(out)
    TabularMdp.load(out)  # reload check
    if args.dataset_out:
        behavior = build_policy(args.behavior, mdp, args.seed)
        ds_mod.from_behavior(mdp, behavior, args.mode, args.samples, args.seed).save(args.dataset_out)
    return EXIT_OK


def cmd_run(args):
    if args.config_file:
        _apply_config_file(args)
    if not args.method:
        _fail("BadSpec", "--method is required")
    res = run_cell(args, args.method, args.seed)
    res["config_echo"] = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    text = json.dumps({k: _jsonable(v) for k, v in sorted(res.items())}, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _apply_config_file(args):
    data = json.loads(Path(args.config_file).read_text())
    for key, val in data.items():
        key = key.replace("-", "_")
        if key == "solver":
            args.solver_dict = val
            continue
        setattr(args, key, val)


def _fmt(x):
    if x is None:
        return "NA"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def parse_seeds(text):
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def cmd_compare(args):
    methods = [m.strip() for chunk in (args.methods or []) for m in chunk.split(",") if m.strip()]
    if not methods:
        _fail("BadSpec", "at least one method is required")
    for m in methods:
        parse_method(m)
    seeds = parse_seeds(args.seeds)
    if not seeds:
        _fail("BadSpec", "at least one seed is required")
    rows = []
    for seed in seeds:
        for method in methods:
            row = {"seed": seed, "method": method}
            try:
                res = run_cell(args, method, seed)
                row.update({k: res.get(k) for k in CSV_COLUMNS if k in res})
                row["error"] = None
            except DualRLError as exc:
                row["error"] = type(exc).__name__
            rows.append(row)
    rows.sort(key=lambda r: (r["seed"], r["method"]))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([_fmt(r.get(c)) for c in CSV_COLUMNS])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_catalog(args):
    text = emit_catalog()
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------


def _add_mdp_flags(p):
    p.add_argument("--mdp", help="MDP JSON file")
    p.add_argument("--fixture", help=f"named fixture: {', '.join(sorted(FIXTURES))}")
    p.add_argument("--states", type=int)
    p.add_argument("--actions", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int, default=0)


def _add_data_flags(p):
    p.add_argument("--behavior", default="uniform")
    p.add_argument("--mode", choices=("exact", "sampled"), default="exact")
    p.add_argument("--samples", type=int)


def _add_solver_flags(p):
    p.add_argument("--solver", help="solver config JSON file")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--grad-tol", type=float)
    p.add_argument("--step-size-min", type=float)
    p.add_argument("--step-size-max", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="dualrl", allow_abbrev=False, description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", allow_abbrev=False, help="write a random or fixture MDP")
    _add_mdp_flags(g)
    _add_data_flags(g)
    g.add_argument("--out", required=True)
    g.add_argument("--dataset-out")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", allow_abbrev=False, help="run one method")
    _add_mdp_flags(r)
    _add_data_flags(r)
    _add_solver_flags(r)
    r.add_argument("--method")
    r.add_argument("--target", default="random")
    r.add_argument("--dataset", help="dataset JSON file (default: built from --behavior)")
    r.add_argument("--config-file", help="experiment JSON with the same keys as the flags")
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", allow_abbrev=False, help="sweep methods over seeds into a CSV")
    _add_mdp_flags(c)
    _add_data_flags(c)
    _add_solver_flags(c)
    c.add_argument("--methods", action="append", help="comma-separated method strings (repeatable)")
    c.add_argument("--seeds", default="0")
    c.add_argument("--target", default="random")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    k = sub.add_parser("catalog", allow_abbrev=False, help="write the objective catalog")
    k.add_argument("--out")
    k.set_defaults(func=cmd_catalog)
    return parser


def _report_error(kind, message):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CliError as exc:
        _report_error(exc.kind, str(exc))
        return exc.code
    except MissingCatalogEntry as exc:
        _report_error("MissingCatalogEntry", str(exc))
        return EXIT_INVALID
    except DualRLError as exc:
        _report_error(type(exc).__name__, str(exc))
        return _classify(exc)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        _report_error(type(exc).__name__, str(exc))
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
