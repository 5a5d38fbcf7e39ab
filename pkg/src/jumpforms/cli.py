"""Command line entry point.

Exit codes: 0 when every assertion of the run passed, 1 when one failed,
2 for usage or configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import mosco, stochastic
from .exceptions import InvalidParameter, NumericalFailure, PreconditionViolation
from .harness import (
    OPERATORS,
    TrialConfig,
    dumps,
    estimate_constants,
    resolve_seed,
    run_inequality_suite,
    sample_field,
    stability_sweep,
    write_report,
)
from .semigroup import decompose
from .space import Space

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

DEFAULT_CONFIG = {"space_spec": {"builder": "two_state", "params": {"beta": 1.0}}}
SIM_CHECKS = ("expected_square", "bracket", "conditional_g", "terminal_law", "bdg", "martingale")


class UsageError(Exception):
    pass


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return json.loads(json.dumps(DEFAULT_CONFIG))
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return doc


def _trial_config(doc: dict, seed: int, tol: Optional[float]) -> TrialConfig:
    cfg = TrialConfig.from_dict({**doc, "seed": seed})
    if tol is not None:
        cfg.tolerances["quadrature"] = float(tol)
    return cfg


def _field(space: Space, spec, seed: int) -> np.ndarray:
    """A field given as a list of values or as ``{"family", "index"}``."""
    if spec is None:
        spec = {"family": "gaussian", "index": 0}
    if isinstance(spec, dict):
        return sample_field(space, spec.get("family", "gaussian"), seed, int(spec.get("index", 0)))
    f = np.asarray(spec, dtype=float)
    if f.shape != (space.n,):
        raise InvalidParameter(f"field must have {space.n} entries")
    return f


def cmd_space_build(doc, cfg: TrialConfig, args) -> tuple:
    space = cfg.build_space()
    return {"space_spec": cfg.space_spec, "space": space.to_dict()}, True


def cmd_check(doc, cfg: TrialConfig, args) -> tuple:
    opts = doc.get("check", {})
    report = run_inequality_suite(
        cfg, square_functions=bool(opts.get("square_functions", True)), hp_trials=int(opts.get("hp_trials", 0))
    )
    return report, report["passed"]


def cmd_estimate(doc, cfg: TrialConfig, args) -> tuple:
    opts = doc.get("estimate", {})
    operators = opts.get("operators", ["H_nabla"])
    for op in operators:
        if op not in OPERATORS:
            raise InvalidParameter(f"unknown operator {op!r}")
    bounds = opts.get("upper_bounds", {})
    constants, ok = [], True
    for op in operators:
        for rep in estimate_constants(cfg, op, refine_steps=int(opts.get("refine_steps", 0))):
            row = rep.to_dict()
            row["finite"] = bool(np.isfinite(rep.empirical_constant))
            limit = bounds.get(op, {}).get(repr(rep.p), bounds.get(op, {}).get(str(rep.p)))
            row["upper_bound"] = limit
            row["within_bound"] = limit is None or rep.empirical_constant <= float(limit)
            ok &= row["finite"] and row["within_bound"]
            constants.append(row)
    out = {"constants": constants}
    if opts.get("n_values"):
        sweeps = [stability_sweep(cfg, op, opts["n_values"], float(opts.get("max_spread", 0.25))) for op in operators]
        out["stability"] = [dict(row, n=n, value=v) for s in sweeps for row in s["rows"] for n, v in row["by_n"].items()]
        for row in out["stability"]:
            row.pop("by_n")
        ok &= all(s["passed"] for s in sweeps)
    return out, ok


def cmd_mosco(doc, cfg: TrialConfig, args) -> tuple:
    opts = doc.get("mosco", {})
    space = cfg.build_space()
    radii = opts.get("radii") or mosco.default_radii(space, int(opts.get("count", 12))).tolist()
    f = _field(space, opts.get("field"), cfg.seed)
    t = float(opts.get("t", 1.0))
    res = mosco.sweep(space, radii, f, t)
    limit = float(opts.get("final_error_tol", 1e-12))
    res["final_error_tol"] = limit
    ok = res["monotone"] and res["final_error"] <= limit
    if "refine" in opts:
        r = opts["refine"]
        factor = float(r.get("r_factor", 0.5))
        res["refine_rows"] = mosco.refine_and_truncate(r["n_list"], float(r["alpha"]), lambda n: factor / n, t)
    return res, ok


def cmd_simulate(doc, cfg: TrialConfig, args) -> tuple:
    opts = doc.get("stochastic", {})
    space = cfg.build_space()
    dec = decompose(space)
    f = _field(space, opts.get("field"), cfg.seed)
    x0 = int(opts.get("x0", 0))
    T = float(opts.get("T", 1.0))
    n_paths = int(opts.get("n_paths", 100_000))
    mode = opts.get("mode", "uniformized")
    threads = args.threads
    checks = opts.get("checks", ["expected_square", "bracket"])
    results = []
    for name in checks:
        if name == "expected_square":
            r = stochastic.expected_square(space, dec, f, x0, T, n_paths, cfg.seed, mode, threads=threads)
        elif name == "bracket":
            r = stochastic.bracket_check(space, dec, f, x0, T, n_paths, cfg.seed, mode, threads=threads)
        elif name == "conditional_g":
            r = stochastic.conditional_g_check(
                space, dec, f, T, n_paths, cfg.seed, tol=cfg.tolerances["quadrature"], mode=mode, threads=threads
            )
        elif name == "terminal_law":
            r = stochastic.terminal_law_check(space, dec, x0, T, n_paths, cfg.seed, threads=threads)
        elif name == "bdg":
            r = stochastic.bdg_ratio(space, dec, f, float(opts.get("p", 2.0)), T, n_paths, cfg.seed, x0, mode, threads=threads)
        elif name == "martingale":
            grid = opts.get("s_grid", [0.25 * T, 0.5 * T, 0.75 * T])
            r = stochastic.martingale_check(space, dec, f, x0, T, grid, n_paths, cfg.seed, mode, threads=threads)
        else:
            raise InvalidParameter(f"unknown stochastic check {name!r}; choose from {SIM_CHECKS}")
        results.append({"check": name, **r})
    return {"checks": results}, all(r["passed"] for r in results)


COMMANDS = {
    "space-build": cmd_space_build,
    "check": cmd_check,
    "estimate": cmd_estimate,
    "mosco-sweep": cmd_mosco,
    "simulate": cmd_simulate,
}


def _flatten(row: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in row.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, list):
            if all(not isinstance(x, (dict, list)) for x in v):
                out[key] = " ".join(str(x) for x in v)
        else:
            out[key] = v
    return out


def render_tables(doc: dict) -> Dict[str, str]:
    """CSV text for every top-level list of records in a report."""
    tables = {}
    for name, value in doc.items():
        if isinstance(value, list) and value and all(isinstance(r, dict) for r in value):
            rows = [_flatten(r) for r in value]
            columns: List[str] = []
            for r in rows:
                columns += [k for k in r if k not in columns]
            buf = io.StringIO()
            writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
            writer.writeheader()
            for r in rows:
                writer.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in columns})
            tables[name] = buf.getvalue()
    if "space" in doc and isinstance(doc["space"], dict) and "measure" in doc["space"]:
        sp = doc["space"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "coord", "measure"])
        coords = sp.get("coords") or [None] * len(sp["measure"])
        for i, (c, m) in enumerate(zip(coords, sp["measure"])):
            w.writerow([i, "" if c is None else c, m])
        tables["points"] = buf.getvalue()
    return tables


def _write_tables(doc: dict, json_path: Path) -> List[Path]:
    paths = []
    # render from the canonical JSON so CSVs match what `report` produces later
    for name, text in render_tables(json.loads(dumps(doc))).items():
        p = json_path.with_name(f"{json_path.stem}.{name}.csv")
        p.write_text(text)
        paths.append(p)
    return paths


def cmd_report(args) -> int:
    if not args.path:
        raise UsageError("report needs the path of a stored JSON report")
    p = Path(args.path)
    if not p.is_file():
        raise UsageError(f"report file not found: {args.path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.path} is not valid JSON: {exc}") from None
    if "schema_version" not in doc:
        raise UsageError(f"{args.path} has no schema_version; not a report")
    tables = render_tables(doc.get("result", doc))
    if args.table:
        if args.table not in tables:
            raise UsageError(f"no table {args.table!r}; available: {', '.join(sorted(tables))}")
        sys.stdout.write(tables[args.table])
        return EXIT_OK
    out = Path(args.out) / "report"
    out.mkdir(parents=True, exist_ok=True)
    for name, text in tables.items():
        dest = out / f"{p.stem}.{name}.csv"
        dest.write_text(text)
        print(dest)
    return EXIT_OK


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="JSON configuration file")
    parser.add_argument("--seed", type=int, default=d, help="master seed (overrides env and config)")
    parser.add_argument("--out", default=argparse.SUPPRESS if suppress else "out", help="results directory")
    parser.add_argument("--tol", type=float, default=d, help="quadrature tolerance")
    parser.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1, help="worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jumpforms", description=__doc__.splitlines()[0])
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    space = sub.add_parser("space", help="space utilities")
    space_sub = space.add_subparsers(dest="action", required=True)
    _common(space_sub.add_parser("build", help="build a space from the config and store it"), suppress=True)
    for name, text in (
        ("check", "run the inequality suite"),
        ("estimate", "estimate empirical operator constants"),
        ("mosco-sweep", "truncated-kernel convergence sweep"),
        ("simulate", "Monte Carlo bracket checks"),
    ):
        _common(sub.add_parser(name, help=text), suppress=True)
    rep = sub.add_parser("report", help="render a stored JSON report as CSV tables")
    _common(rep, suppress=True)
    rep.add_argument("path", nargs="?", help="stored JSON report")
    rep.add_argument("--table", help="print one table to stdout")
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if args.command == "report":
            return cmd_report(args)
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        if args.tol is not None and not args.tol > 0:
            raise UsageError("--tol must be positive")
        name = "space-build" if args.command == "space" else args.command
        doc = load_config(args.config)
        seed = resolve_seed(doc.get("seed", 0), args.seed)
        cfg = _trial_config(doc, seed["seed"], args.tol)
        result, passed = COMMANDS[name](doc, cfg, args)
    except (UsageError, InvalidParameter, PreconditionViolation, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    report = {"command": name, "config": cfg.to_dict(), **seed, "passed": bool(passed), "result": result}
    path = write_report(report, args.out, name, seed["seed"])
    print(path)
    for p in _write_tables({**result}, path):
        print(p)
    status = "PASS" if passed else "FAIL"
    print(f"{name}: {status}")
    return EXIT_OK if passed else EXIT_FAIL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
