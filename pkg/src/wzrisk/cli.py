"""Command-line front end.

Commands
--------
estimate     ML drift/variance from a ``time,abundance`` CSV file
assess       point estimates and intervals at the Criterion E horizons
span         required observation span for a target upper bound
coverage     Monte Carlo coverage experiment
grid         w-z CI width over a (w, z) grid
trajectory   G and CI width along increasing horizons

Exit status: 0 success, 2 parse/usage error, 3 domain error, 4 convergence
failure, 1 any other package error.  ``--config FILE`` (JSON) supplies option
values that override those given on the command line; ``WZRISK_OUTDIR``
sets the directory for relative ``--out`` paths.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import replace

from . import __version__
from .ci_methods import METHODS, compute_interval, interval_width
from .errors import DomainError, ParseError, WzRiskError
from .estimate import DriftEstimate, HorizonSpec, TimeSeries, fit_drift, log_distance
from .mc_harness import PRESETS as GRID_PRESETS
from .mc_harness import coverage_experiment, report
from .risk_analysis import SpanRequest, ci_width_grid, horizon_trajectory, required_span
from .stable_eval import format_prob

OUTDIR_ENV = "WZRISK_OUTDIR"
DEFAULT_HORIZONS = (25.5, 42.5, 100.0)

#: horizon -> (category, threshold): at least 50% in 3 generations, 20% in 5, 10% in 100 years
CRITERION_E = {25.5: ("CR", 0.5), 42.5: ("EN", 0.2), 100.0: ("VU", 0.1)}

#: published estimates (mu_hat, sigma2_hat, x_d_hat) with q = t_q = 63
ESTIMATE_PRESETS = {
    "glass": (-0.0054, 0.33, 16.0),
    "glass-elver": (-0.07, 0.17, 12.4),
    "yellow-silver": (-0.059, 0.014, 12.6),
}
PRESET_Q = 63

#: parameter sets for ``trajectory`` (mu, sigma2, x_d)
TRAJECTORY_PRESETS = {
    "mu-neg": (-0.058925, 0.116939**2, 12.64433),
    "mu-pos": (0.10, 0.20**2, 13.0),
}


# ---------------------------------------------------------------------------
# CSV input / output


def parse_series(text: str, source: str = "<input>") -> TimeSeries:
    """Parse two-column ``time,abundance`` CSV text with an optional header row."""
    times, values = [], []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not c.strip() for c in row) or row[0].lstrip().startswith("#"):
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 columns, found {len(row)}", lineno)
        try:
            t, n = float(row[0]), float(row[1])
        except ValueError:
            if not times and lineno == _first_content_line(text):
                continue  # header
            raise ParseError(f"non-numeric field in {row!r}", lineno) from None
        if not (math.isfinite(t) and math.isfinite(n)):
            raise ParseError(f"non-finite value in {row!r}", lineno)
        if n <= 0:
            raise DomainError(f"{source}: line {lineno}: abundance must be positive, got {n!r}")
        times.append(t)
        values.append(n)
    if len(times) < 2:
        raise ParseError(f"{source}: need at least two observations, found {len(times)}")
    for i in range(1, len(times)):
        if times[i] <= times[i - 1]:
            raise ParseError(f"times must be strictly increasing ({times[i - 1]!r} then {times[i]!r})")
    return TimeSeries(tuple(times), tuple(values))


def _first_content_line(text: str) -> int:
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if row and any(c.strip() for c in row) and not row[0].lstrip().startswith("#"):
            return lineno
    return 0


def serialize_series(s: TimeSeries) -> str:
    """CSV text with a header; floats written with ``repr`` so parsing round-trips exactly."""
    out = ["time,abundance"]
    out += [f"{t!r},{n!r}" for t, n in zip(s.times, s.values)]
    return "\n".join(out) + "\n"


def read_series(path: str) -> TimeSeries:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    return parse_series(text, path)


def _out_path(path: str | None) -> str | None:
    if path is None or path == "-":
        return None
    base = os.environ.get(OUTDIR_ENV)
    if base and not os.path.isabs(path):
        os.makedirs(base, exist_ok=True)
        return os.path.join(base, path)
    return path


def write_table(rows: list[dict], fields, path: str | None, stream):
    """Write delimiter-separated rows to ``path`` (or ``stream`` when no path)."""
    target = _out_path(path)
    if target is None:
        w = csv.DictWriter(stream, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return
    with open(target, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _num(x: float) -> str:
    """Locale-independent, round-trippable number."""
    return repr(float(x))


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wzrisk", description="Finite-horizon extinction risk with w-z intervals.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of option values (overrides command-line flags)")
        sp.add_argument("--out", help="output file for delimiter-separated results")

    sp = sub.add_parser("estimate", help="fit drift and variance to a series")
    sp.add_argument("--input", required=False, help="CSV file with time,abundance columns")
    common(sp)

    sp = sub.add_parser("assess", help="extinction probabilities and intervals")
    sp.add_argument("--input", help="CSV file with time,abundance columns")
    sp.add_argument("--ne", type=float, help="extinction threshold (x_d = log(n0/ne))")
    sp.add_argument("--xd", type=float, help="initial log-distance, overriding --ne")
    sp.add_argument("--preset", choices=sorted(ESTIMATE_PRESETS), help="published estimates")
    sp.add_argument("--mu", type=float, help="injected drift estimate")
    sp.add_argument("--sigma2", type=float, help="injected ML variance estimate")
    sp.add_argument("--q", type=int, help="number of increments for injected estimates")
    sp.add_argument("--tq", type=float, help="observation span for injected estimates (default q)")
    sp.add_argument("--tstar", type=float, action="append", help="horizon in years (repeatable)")
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--method", action="append", choices=list(METHODS) + ["all"], help="CI method (repeatable)")
    sp.add_argument("--B", type=int, default=2000, help="bootstrap replicates")
    sp.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    common(sp)

    sp = sub.add_parser("span", help="required observation span")
    sp.add_argument("--g-true", dest="g_true", type=float, required=False)
    sp.add_argument("--z", type=float, required=False)
    sp.add_argument("--tstar", type=float, action="append")
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--target", type=float, default=0.1)
    common(sp)

    sp = sub.add_parser("coverage", help="Monte Carlo coverage experiment")
    sp.add_argument("--preset", choices=sorted(GRID_PRESETS), default="desk")
    sp.add_argument("--reps", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--B", type=int, help="bootstrap replicates inside the harness")
    sp.add_argument("--method", action="append", choices=list(METHODS) + ["all"])
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--max-cells", dest="max_cells", type=int, default=None, help="run only the first N cells")
    common(sp)

    sp = sub.add_parser("grid", help="CI width over a (w, z) grid")
    sp.add_argument("--wmin", type=float, default=-10.0)
    sp.add_argument("--wmax", type=float, default=10.0)
    sp.add_argument("--zmin", type=float, default=-10.0)
    sp.add_argument("--zmax", type=float, default=10.0)
    sp.add_argument("--step", type=float, default=0.5)
    sp.add_argument("--q", type=int, default=63)
    sp.add_argument("--tq", type=float)
    sp.add_argument("--tstar", type=float, action="append")
    sp.add_argument("--alpha", type=float, default=0.05)
    common(sp)

    sp = sub.add_parser("trajectory", help="G and CI width over horizons")
    sp.add_argument("--preset", choices=sorted(TRAJECTORY_PRESETS))
    sp.add_argument("--mu", type=float)
    sp.add_argument("--sigma2", type=float)
    sp.add_argument("--xd", type=float)
    sp.add_argument("--q", type=int, default=63)
    sp.add_argument("--tq", type=float)
    sp.add_argument("--tstar", type=float, action="append")
    sp.add_argument("--alpha", type=float, default=0.05)
    common(sp)
    return p


def _apply_config(args: argparse.Namespace) -> argparse.Namespace:
    path = getattr(args, "config", None)
    if not path:
        return args
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"config {path}: {exc.msg}", exc.lineno) from None
    if not isinstance(cfg, dict):
        raise ParseError(f"config {path}: expected a JSON object")
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest in ("command", "config") or not hasattr(args, dest):
            raise ParseError(f"config {path}: unknown option {key!r} for '{args.command}'")
        if dest in ("tstar", "method") and not isinstance(value, list):
            value = [value]
        setattr(args, dest, value)
    return args


# ---------------------------------------------------------------------------
# commands


def cmd_estimate(args, out) -> int:
    if not args.input:
        raise ParseError("--input is required")
    e = fit_drift(read_series(args.input))
    rows = [
        ("mu_hat", e.mu_hat),
        ("sigma2_hat", e.sigma2_hat),
        ("sigma2_unbiased", e.sigma2_unbiased),
        ("q", e.q),
        ("t_q", e.t_q),
        ("r_hat", e.r_hat),
    ]
    for name, v in rows:
        out.write(f"{name:<16} {v}\n" if isinstance(v, int) else f"{name:<16} {v:.6g}\n")
    if args.out:
        table = [{"quantity": k, "value": str(v) if isinstance(v, int) else _num(v)} for k, v in rows]
        write_table(table, ("quantity", "value"), args.out, out)
    return 0


def _assessment_inputs(args):
    sources = [bool(args.input), bool(args.preset), args.mu is not None or args.sigma2 is not None]
    if sum(sources) != 1:
        raise ParseError("give exactly one of --input, --preset, or injected --mu/--sigma2/--q")
    if args.preset:
        mu, s2, xd = ESTIMATE_PRESETS[args.preset]
        e = DriftEstimate(mu, s2, PRESET_Q, float(PRESET_Q))
        if args.xd is not None:
            xd = args.xd
        return e, xd
    if args.input:
        s = read_series(args.input)
        e = fit_drift(s)
        if (args.ne is None) == (args.xd is None):
            raise ParseError("give exactly one of --ne or --xd")
        xd = args.xd if args.xd is not None else log_distance(s.values[0], args.ne)
        return e, xd
    if args.mu is None or args.sigma2 is None or args.q is None or args.xd is None:
        raise ParseError("injected estimates need --mu, --sigma2, --q and --xd")
    e = DriftEstimate(args.mu, args.sigma2, args.q, float(args.tq if args.tq is not None else args.q))
    return e, args.xd


def _methods(values):
    if not values:
        return ["wz"]
    if "all" in values:
        return list(METHODS)
    seen = []
    for m in values:
        if m not in METHODS:
            raise ParseError(f"unknown method {m!r}")
        if m not in seen:
            seen.append(m)
    return seen


def _verdict(t_star, point, upper):
    rule = CRITERION_E.get(float(t_star))
    if rule is None:
        return "", ""
    cat, thr = rule
    if point.g >= thr:
        return cat, "meets"
    if upper.g >= thr:
        return cat, "inconclusive"
    return cat, "not met"


def cmd_assess(args, out) -> int:
    e, xd = _assessment_inputs(args)
    horizons = args.tstar or list(DEFAULT_HORIZONS)
    methods = _methods(args.method)
    rows = []
    for t_star in horizons:
        h = HorizonSpec(float(t_star), float(xd))
        for m in methods:
            r = compute_interval(m, e, h, args.alpha, args.B, args.seed)
            cat, verdict = _verdict(t_star, r.point, r.upper)
            rows.append({
                "t_star": _num(t_star), "method": m,
                "point": format_prob(r.point), "lower": format_prob(r.lower), "upper": format_prob(r.upper),
                "log10_point": f"{r.point.log10_g:.6f}", "log10_lower": f"{r.lower.log10_g:.6f}",
                "log10_upper": f"{r.upper.log10_g:.6f}",
                "category": cat, "verdict": verdict,
            })
    out.write(f"mu_hat={e.mu_hat:.6g} sigma2_hat={e.sigma2_hat:.6g} x_d={xd:.6g} q={e.q} t_q={e.t_q:g} "
              f"alpha={args.alpha:g}\n")
    out.write(f"{'t*':>6} {'method':<12} {'G':>11} {'lower':>11} {'upper':>11}  criterion\n")
    for r in rows:
        crit = f"{r['category']} {r['verdict']}" if r["category"] else ""
        out.write(f"{float(r['t_star']):>6g} {r['method']:<12} {r['point']:>11} {r['lower']:>11} {r['upper']:>11}  {crit}\n")
    if args.out:
        write_table(rows, list(rows[0]), args.out, out)
    return 0


def cmd_span(args, out) -> int:
    if args.g_true is None or args.z is None:
        raise ParseError("span needs --g-true and --z")
    horizons = args.tstar or [100.0]
    for t_star in horizons:
        t = required_span(SpanRequest(args.g_true, args.z, float(t_star), args.alpha, args.target))
        out.write(f"{t}\n")
    return 0


def cmd_coverage(args, out) -> int:
    g = GRID_PRESETS[args.preset]
    changes = {}
    if args.reps is not None:
        changes["reps"] = args.reps
    if args.alpha is not None:
        changes["alpha"] = args.alpha
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.B is not None:
        changes["bootstrap_B"] = args.B
    if args.method:
        changes["methods"] = tuple(_methods(args.method))
    g = replace(g, **changes)
    if args.max_cells is not None:
        results = []
        from .mc_harness import run_cell

        for c in g.cells()[: args.max_cells]:
            results.extend(run_cell(g, c))
    else:
        results = coverage_experiment(g, workers=args.workers)
    rep = report(results)
    from .mc_harness import ROW_FIELDS

    rows = [{k: (_num(v) if isinstance(v, float) else v) for k, v in row.items()} for row in rep.rows]
    if args.out:
        write_table(rows, ROW_FIELDS, args.out, out)
    out.write(rep.text() + "\n")
    return 0


def cmd_grid(args, out) -> int:
    import numpy as np

    if not args.step > 0:
        raise DomainError("--step must be positive")
    n_w = int(round((args.wmax - args.wmin) / args.step)) + 1
    n_z = int(round((args.zmax - args.zmin) / args.step)) + 1
    ws = args.wmin + args.step * np.arange(n_w)
    zs = args.zmin + args.step * np.arange(n_z)
    t_star = (args.tstar or [25.0])[0]
    t_q = args.tq if args.tq is not None else float(args.q)
    cells = ci_width_grid(ws, zs, args.q, t_q, float(t_star), args.alpha)
    rows = []
    for c in cells:
        rows.append({
            "w": _num(c.w), "z": _num(c.z),
            "G": "" if c.masked else _num(c.point.g),
            "width": "" if c.masked else _num(c.width),
            "mask": int(c.masked),
        })
    write_table(rows, ("w", "z", "G", "width", "mask"), args.out, out)
    return 0


def cmd_trajectory(args, out) -> int:
    if args.preset:
        mu, s2, xd = TRAJECTORY_PRESETS[args.preset]
    else:
        if args.mu is None or args.sigma2 is None or args.xd is None:
            raise ParseError("trajectory needs --preset or --mu, --sigma2 and --xd")
        mu, s2, xd = args.mu, args.sigma2, args.xd
    horizons = args.tstar or [25.5, 42.5, 100.0, 250.0, 500.0, 1000.0]
    t_q = args.tq if args.tq is not None else float(args.q)
    rows = []
    for r in horizon_trajectory(mu, s2, xd, args.q, t_q, horizons, args.alpha):
        rows.append({
            "t_star": _num(r.t_star), "w": _num(r.w), "z": _num(r.z),
            "G": format_prob(r.point), "log10_G": f"{r.point.log10_g:.6f}",
            "log10_Q": f"{r.point.log10_q:.6f}", "ci_width": f"{r.width:.6e}",
        })
    write_table(rows, list(rows[0]), args.out, out)
    return 0


COMMANDS = {
    "estimate": cmd_estimate,
    "assess": cmd_assess,
    "span": cmd_span,
    "coverage": cmd_coverage,
    "grid": cmd_grid,
    "trajectory": cmd_trajectory,
}


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args = _apply_config(args)
        return COMMANDS[args.command](args, out)
    except WzRiskError as exc:
        err.write(f"wzrisk {args.command}: error: {exc}\n")
        return exc.exit_code
    except OSError as exc:
        err.write(f"wzrisk {args.command}: error: {exc}\n")
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())


def main_entry() -> None:  # console-script wrapper
    sys.exit(main())
