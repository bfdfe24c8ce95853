"""Command-line runner: config-driven sweeps, single runs, tableau validation."""

from __future__ import annotations

import argparse
import itertools
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .analysis import (
    CONVERGENCE_COLUMNS,
    H_COLUMNS,
    TWIN_COLUMNS,
    ConvergenceRow,
    ConvergenceTable,
    ReferenceSpec,
    convergence_rows,
    count_violations,
    h_rows,
    reference_solution,
    twin_integrate,
    twin_rows,
    write_rows,
)
from .corrections import PLAN_NAMES, CorrectionPlan
from .problems import PROBLEM_NOTES, PROBLEMS, make_problem
from .stage_solver import StageStrategy, integrate
from .tableau import BUILTIN, ButcherTableau, get_tableau, validate

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

OUTPUT_ENV = "MPDIRK_OUTPUT_DIR"

_STRATEGY = {
    "type": "object",
    "required": ["kind"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["exact", "linearized", "chopped", "mixed"]},
        "digits": {"type": "integer", "minimum": 1, "maximum": 17},
        "pair": {"type": "string", "pattern": "^[a-z0-9]+/[a-z0-9]+$"},
        "iters": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "minimum": 0},
        "ybar": {"enum": ["step-start", "explicit"]},
        "precision": {"enum": ["double", "extended"]},
    },
    "allOf": [
        {"if": {"properties": {"kind": {"const": "chopped"}}},
         "then": {"required": ["digits"]}},
        {"if": {"properties": {"kind": {"const": "mixed"}}},
         "then": {"required": ["pair"]}},
    ],
}

_PLAN = {
    "type": "object",
    "required": ["name"],
    "additionalProperties": False,
    "properties": {
        "name": {"enum": sorted(PLAN_NAMES)},
        "count": {"oneOf": [{"type": "integer", "minimum": 0}, {"const": "p-1"}]},
        "mu": {"type": "number", "minimum": 0},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["problem", "sweep"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "problem": {
            "type": "object",
            "required": ["name", "n"],
            "additionalProperties": False,
            "properties": {
                "name": {"enum": sorted(PROBLEMS)},
                "n": {"oneOf": [
                    {"type": "integer", "minimum": 4},
                    {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 4}},
                ]},
            },
        },
        "sweep": {
            "type": "object",
            "required": ["tableaus", "dt"],
            "additionalProperties": False,
            "properties": {
                "tableaus": {"type": "array", "minItems": 1,
                             "items": {"enum": sorted(BUILTIN)}},
                "dt": {"type": "array", "minItems": 1,
                       "items": {"type": "number", "exclusiveMinimum": 0}},
                "strategies": {"type": "array", "minItems": 1, "items": _STRATEGY},
                "plans": {"type": "array", "minItems": 1, "items": _PLAN},
            },
        },
        "reference": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["radau", "dop853", "dirk"]},
                "rtol": {"type": "number", "exclusiveMinimum": 0},
                "refine": {"type": "integer", "minimum": 1},
                "precision": {"enum": ["double", "extended"]},
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "format": {"enum": ["csv"]},
                "h_series": {"type": "boolean"},
                "twin": {"type": "boolean"},
                "twin_norm": {"enum": ["inf", "2"]},
            },
        },
    },
}


class ConfigError(ValueError):
    """Configuration does not match the schema or names do not resolve."""


def _path_of(err) -> str:
    parts = [str(p) for p in err.absolute_path]
    return ".".join(parts) if parts else "<root>"


def validate_config(cfg: dict) -> dict:
    """Schema check plus the cross-field rules; returns the config with defaults filled."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("\n".join(f"{_path_of(e)}: {e.message}" for e in errors))
    dts = cfg["sweep"]["dt"]
    if any(b >= a for a, b in zip(dts, dts[1:])):
        raise ConfigError("sweep.dt: step sizes must be strictly decreasing")
    out = json.loads(json.dumps(cfg))
    out.setdefault("name", "experiment")
    out.setdefault("seed", 0)
    ns = out["problem"]["n"]
    out["problem"]["n"] = ns if isinstance(ns, list) else [ns]
    out["sweep"].setdefault("strategies", [{"kind": "exact"}])
    out["sweep"].setdefault("plans", [{"name": "none"}])
    out.setdefault("reference", {})
    out.setdefault("outputs", {})
    out["outputs"].setdefault("dir", f"results/{out['name']}")
    out["outputs"].setdefault("format", "csv")
    out["outputs"].setdefault("h_series", True)
    out["outputs"].setdefault("twin", False)
    out["outputs"].setdefault("twin_norm", "inf")
    for k, s in enumerate(out["sweep"]["strategies"]):
        try:
            strategy_from_dict(s)
        except ValueError as exc:
            raise ConfigError(f"sweep.strategies.{k}: {exc}") from None
    return out


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return validate_config(cfg)


def strategy_from_dict(d: dict) -> StageStrategy:
    return StageStrategy(
        kind=d["kind"], digits=d.get("digits"), pair=d.get("pair"), iters=d.get("iters", 3),
        tol=d.get("tol", 0.0), ybar=d.get("ybar", "step-start"),
        precision=d.get("precision", "double"),
    )


def plan_from_dict(d: dict) -> CorrectionPlan:
    count = d.get("count", "p-1")
    return CorrectionPlan.from_name(d["name"], None if count == "p-1" else int(count), d.get("mu"))


def reference_from_dict(d: dict) -> ReferenceSpec:
    return ReferenceSpec(**{k: v for k, v in d.items()})


# -- cells -----------------------------------------------------------------------------

def _cell(args):
    """One (n, tableau, strategy, plan, dt) integration; runs in a worker process."""
    problem, n, tab, sdict, pdict, dt, y_ref, want_h, twin_norm = args
    p = make_problem(problem, n)
    t = get_tableau(tab)
    strat = strategy_from_dict(sdict)
    plan = plan_from_dict(pdict)
    run = integrate(p, t, dt, strat, plan)
    err = float("inf") if run.diverged else float(np.max(np.abs(run.y - y_ref)))
    key = [problem, n, t.name, strat.label, plan.name, dt]
    out = {
        "row": ConvergenceRow(dt, err, run.diverged, run.t_diverged,
                              float(run.h.max()) if run.h.size else 0.0, run.wall, run.drift),
        "h": list(h_rows(run, key)) if want_h else [],
        "twin": [],
        "violations": None,
    }
    if twin_norm and strat.perturbed and not run.diverged:
        traces = twin_integrate(p, t, dt, strat, plan, norm=twin_norm)
        out["twin"] = list(twin_rows(traces, key))
        out["violations"] = count_violations(traces)
    return out


def run_experiment(cfg: dict, workers: int = 1, out_dir=None) -> dict:
    out_dir = Path(out_dir or os.environ.get(OUTPUT_ENV) or cfg["outputs"]["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    ref_spec = reference_from_dict(cfg["reference"])
    sweep = cfg["sweep"]
    problem = cfg["problem"]["name"]
    want_h = cfg["outputs"]["h_series"]
    twin_norm = cfg["outputs"]["twin_norm"] if cfg["outputs"]["twin"] else None
    files = []
    summary = []
    for n in cfg["problem"]["n"]:
        p = make_problem(problem, n)
        y_ref = reference_solution(p, ref_spec, min(sweep["dt"]))
        groups = list(itertools.product(sweep["tableaus"], sweep["strategies"], sweep["plans"]))
        jobs = [(problem, n, tab, s, pl, dt, y_ref, want_h, twin_norm)
                for tab, s, pl in groups for dt in sweep["dt"]]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_cell, jobs))
        else:
            results = [_cell(j) for j in jobs]
        conv, hs, tw = [], [], []
        per = len(sweep["dt"])
        for g, (tab, s, pl) in enumerate(groups):
            chunk = results[g * per:(g + 1) * per]
            table = ConvergenceTable(
                [c["row"] for c in chunk], get_tableau(tab).name,
                strategy_from_dict(s).label, plan_from_dict(pl).name, problem, n)
            conv.extend(convergence_rows(table))
            for c in chunk:
                hs.extend(c["h"])
                tw.extend(c["twin"])
            summary.append({
                "n": n, "method": table.method, "strategy": table.strategy, "plan": table.plan,
                "order": table.order, "diverged": int(sum(r.diverged for r in table.rows)),
                "twin_violations": [c["violations"] for c in chunk if c["violations"]],
            })
        files.append(write_rows(out_dir / f"convergence_n{n}.csv", CONVERGENCE_COLUMNS, conv))
        if want_h:
            files.append(write_rows(out_dir / f"h_series_n{n}.csv", H_COLUMNS, hs))
        if twin_norm:
            files.append(write_rows(out_dir / f"twin_n{n}.csv", TWIN_COLUMNS, tw))
    manifest = {
        "config": cfg,
        "versions": {"mpdirk": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "wall_seconds": time.perf_counter() - start,
        "files": [f.name for f in files],
        "summary": summary,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return manifest


# -- subcommands -------------------------------------------------------------------------

def parse_strategy(text: str, iters: int = 3) -> StageStrategy:
    """``exact``, ``exact-extended``, ``linearized``, ``chop:D`` or ``mixed:HIGH/LOW[:K]``."""
    kind, _, arg = text.partition(":")
    if kind == "exact":
        return StageStrategy.exact()
    if kind == "exact-extended":
        return StageStrategy.exact("extended")
    if kind == "linearized":
        return StageStrategy.linearized()
    if kind in ("chop", "chopped"):
        if not arg:
            raise ValueError("chop strategy needs digits, e.g. chop:4")
        return StageStrategy.chopped(int(arg))
    if kind == "mixed":
        pair, _, k = arg.partition(":")
        return StageStrategy.mixed(pair, int(k) if k else iters)
    raise ValueError(f"unknown strategy {text!r}")


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    manifest = run_experiment(cfg, args.workers, args.out)
    for s in manifest["summary"]:
        print(f"n={s['n']:<4} {s['method']:<7} {s['strategy']:<24} {s['plan']:<18} "
              f"order={s['order']:.2f} diverged={s['diverged']}")
    return 0


def cmd_single_run(args) -> int:
    try:
        p = make_problem(args.problem, args.n)
        t = get_tableau(args.tableau)
        strat = parse_strategy(args.strategy, args.iters)
        plan = CorrectionPlan.from_name(args.plan, args.corrections, args.mu)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    run = integrate(p, t, args.dt, strat, plan, final_time=args.final_time)
    print(f"problem      {p.name} (n={args.n})")
    print(f"method       {run.label}")
    print(f"steps        {run.n_steps}  wall {run.wall:.3f} s")
    if run.diverged:
        print(f"status       diverged at t={run.t_diverged:.6g} ({run.error})")
    else:
        print("status       completed")
        if args.reference != "none" and args.final_time is None:
            y_ref = reference_solution(p, ReferenceSpec(method=args.reference), args.dt)
            print(f"error        {np.max(np.abs(run.y - y_ref)):.6e}")
    mh = run.max_h
    print("max h        " + " ".join(f"{v:.3e}" for v in mh))
    print(f"drift        {run.drift:.3e}")
    if args.csv:
        key = [p.name, args.n, t.name, strat.label, plan.name, args.dt]
        write_rows(args.csv, H_COLUMNS, h_rows(run, key))
    return 1 if run.diverged else 0


def cmd_validate(args) -> int:
    tabs = [get_tableau(name) for name in sorted(BUILTIN)]
    for path in args.extra or []:
        tabs.append(ButcherTableau.from_json(Path(path).read_text()))
    ok = True
    for t in tabs:
        rep = validate(t)
        print(rep)
        ok &= rep.ok
    return 0 if ok else 1


def cmd_list(_args) -> int:
    for name in sorted(PROBLEMS):
        print(f"{name:<14} {PROBLEM_NOTES[name]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mpdirk", description=__doc__)
    ap.add_argument("--version", action="version", version=f"mpdirk {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a sweep described by a TOML config")
    r.add_argument("config")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out", help=f"output directory (overrides config and ${OUTPUT_ENV})")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("single-run", help="integrate once and print a summary")
    s.add_argument("--problem", required=True, choices=sorted(PROBLEMS))
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--tableau", default="sdirk2")
    s.add_argument("--dt", type=float, required=True)
    s.add_argument("--strategy", default="exact",
                   help="exact, exact-extended, linearized, chop:D, mixed:HIGH/LOW[:K]")
    s.add_argument("--iters", type=int, default=3, help="mixed-precision iterates per stage")
    s.add_argument("--plan", default="none", choices=sorted(PLAN_NAMES))
    s.add_argument("--corrections", type=int, default=None, help="corrections per stage (default p-1)")
    s.add_argument("--mu", type=float, default=None, help="stabilization mu (default a_ii)")
    s.add_argument("--final-time", type=float, default=None)
    s.add_argument("--reference", default="radau", choices=["radau", "dop853", "dirk", "none"])
    s.add_argument("--csv", help="write the h series here")
    s.set_defaults(func=cmd_single_run)

    v = sub.add_parser("validate-tableaus", help="check the B-stability conditions")
    v.add_argument("--extra", nargs="*", help="additional tableau JSON files to check")
    v.set_defaults(func=cmd_validate)

    lp = sub.add_parser("list-problems", help="list the built-in problems")
    lp.set_defaults(func=cmd_list)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
