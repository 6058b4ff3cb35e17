"""Command-line entry point: ``jumpresum {reflection,lz,weights,validate}``.

Exit codes: 0 success, 1 usage, 2 Monte Carlo overflow, 3 ODE
non-convergence, 4 validation failure.
"""

from __future__ import annotations

import argparse
import io
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import defaults as D
from .adaptive import SequenceConditioned, StateConditioned, estimate_weights
from .dopri import IntegrationError
from .lz import LZConvergenceError, sweep_lz
from .models import BUILTIN, builtin_run
from .reflection import ReflectionConfig, UndecidedOverflowError, sweep_reflection

EXIT_OK, EXIT_USAGE, EXIT_OVERFLOW, EXIT_ODE, EXIT_VALIDATION = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    subcommand: str
    params: dict = field(default_factory=dict)
    seed: int = D.SEED
    out: Path | None = None
    emit_plot: bool = False


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _floats(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def fmt(x: float) -> str:
    """Nine significant digits, locale independent."""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return format(float(x), f".{D.CSV_DIGITS}g")


def to_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(v if isinstance(v, str) else fmt(v) for v in r) + "\n")
    return buf.getvalue()


def _write(cfg: RunConfig, text: str) -> None:
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        cfg.out.write_bytes(text.encode("utf-8"))


def _plot_path(out: Path | None, default: str) -> Path:
    return out.with_suffix(".plot.py") if out is not None else Path(default)


_REFLECTION_PLOT = '''"""Reflection probability versus E_in / hbar gamma."""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else {csv!r}
with open(path, newline="", encoding="utf-8") as fh:
    rows = list(csv.DictReader(fh))
e = [float(r["e_ratio"]) for r in rows]
fig, ax = plt.subplots(figsize=(5, 3.5))
ax.plot(e, [float(r["p_approx"]) for r in rows], "k-", label="resummed approximation")
ax.plot(e, [float(r["p0"]) for r in rows], "k--", label="leading order")
ax.errorbar(e, [float(r["p_mc"]) for r in rows], yerr=[float(r["p_mc_err"]) for r in rows],
            fmt="o", mfc="none", color="k", label="trajectories")
ax.set_xscale("log")
ax.set_xlabel(r"$E_{{in}}/\\hbar\\gamma$")
ax.set_ylabel("reflection probability")
ax.legend(frameon=False)
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + ".pdf")
'''

_LZ_PLOT = '''"""Landau-Zener transition probability versus dephasing rate, one curve per delta."""
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else {csv!r}
curves = defaultdict(list)
with open(path, newline="", encoding="utf-8") as fh:
    for r in csv.DictReader(fh):
        curves[float(r["delta"])].append((float(r["gamma"]), float(r["p_exact"]), float(r["p_approx"])))
fig, ax = plt.subplots(figsize=(5, 3.5))
for delta, pts in sorted(curves.items()):
    pts = [p for p in pts if p[0] > 0]
    g = [p[0] for p in pts]
    line, = ax.plot(g, [p[2] for p in pts], "-", label=rf"$\\delta={{delta:g}}$")
    ax.plot(g, [p[1] for p in pts], "o", mfc="none", color=line.get_color())
ax.set_xscale("log")
ax.set_xlabel(r"$\\gamma$")
ax.set_ylabel("transition probability")
ax.legend(frameon=False, fontsize=8)
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + ".pdf")
'''


def cmd_reflection(cfg: RunConfig) -> int:
    p = cfg.params
    if not (1e-3 <= p["e_min"] <= 1e3 and 1e-3 <= p["e_max"] <= 1e3):
        raise UsageError("e-ratio bounds must lie in [0.001, 1000]")
    if p["e_min"] > p["e_max"]:
        raise UsageError("--e-min exceeds --e-max")
    if p["points"] < 1:
        raise UsageError("--points must be at least 1")
    if p["trajectories"] < 10_000:
        raise UsageError("--trajectories must be at least 10000")
    if p["points"] == 1 and p["e_min"] != p["e_max"]:
        raise UsageError("a single point needs --e-min equal to --e-max")
    es = np.geomspace(p["e_min"], p["e_max"], p["points"])
    rc = ReflectionConfig(n_traj=p["trajectories"], seed=cfg.seed, n_points=p["grid_points"],
                          half_width=p["half_width"], x0=p["x0"], sigma_x=p["sigma_x"], dt_scale=p["dt_scale"],
                          zone=p["zone"], workers=p["workers"])
    try:
        pts = sweep_reflection(list(es), rc)
    except UndecidedOverflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OVERFLOW
    pts.sort(key=lambda q: q.e_ratio)
    text = to_csv(("e_ratio", "p0", "p_approx", "p_mc", "p_mc_err"),
                  [(q.e_ratio, q.p0, q.p_approx, q.p_mc, q.p_mc_err) for q in pts])
    _write(cfg, text)
    if cfg.emit_plot:
        path = _plot_path(cfg.out, "reflection.plot.py")
        path.write_text(_REFLECTION_PLOT.format(csv=str(cfg.out or "reflection.csv")), encoding="utf-8")
    return EXIT_OK


def cmd_lz(cfg: RunConfig) -> int:
    p = cfg.params
    if any(d <= 0 for d in p["delta"]) or any(g < 0 for g in p["gamma"]):
        raise UsageError("delta must be positive and gamma non-negative")
    if not 1e-10 <= p["tol"] <= 1e-4:
        raise UsageError("--tol must lie in [1e-10, 1e-4]")
    try:
        pts = sweep_lz(p["delta"], p["gamma"], p["tol"])
    except (LZConvergenceError, IntegrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ODE
    text = to_csv(("delta", "gamma", "p_exact", "p_approx", "abs_error"),
                  [(q.delta, q.gamma, q.p_exact, q.p_approx, q.abs_error) for q in pts])
    _write(cfg, text)
    worst = max(q.abs_error for q in pts)
    stream = sys.stderr if cfg.out is None else sys.stdout
    print(f"max abs_error: {fmt(worst)}", file=stream)
    if cfg.emit_plot:
        path = _plot_path(cfg.out, "lz.plot.py")
        path.write_text(_LZ_PLOT.format(csv=str(cfg.out or "lz.csv")), encoding="utf-8")
    return EXIT_OK


_RULES = {"state": StateConditioned, "sequence": SequenceConditioned}


def cmd_weights(cfg: RunConfig) -> int:
    p = cfg.params
    if p["trajectories"] < 100:
        raise UsageError("--trajectories must be at least 100")
    if p["delta"] <= 0 or p["gamma"] < 0:
        raise UsageError("delta must be positive and gamma non-negative")
    try:
        run = builtin_run(p["model"], p["delta"], p["gamma"], p["tau"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        tab = estimate_weights(run.model, _RULES[p["rule"]](), run.initial_state, run.t_end, p["trajectories"],
                               cfg.seed, t0=run.t0, tol=p["tol"], workers=p["workers"])
    except IntegrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ODE
    rows = [(str(n), w, s) for n, (w, s) in enumerate(zip(tab.weights, tab.stderr))]
    _write(cfg, to_csv(("order", "weight", "stderr"), rows))
    if tab.overflow_fraction > D.OVERFLOW_LIMIT:
        print(f"error: {tab.overflow} trajectories reached {D.MAX_JUMPS} jumps", file=sys.stderr)
        return EXIT_OVERFLOW
    return EXIT_OK


def cmd_validate(cfg: RunConfig) -> int:
    from . import validate

    tighten = cfg.params["tighten"] * (100.0 if cfg.params["inject_fault"] else 1.0)
    outcomes = validate.run(quick=cfg.params["quick"], tighten=tighten, seed=cfg.seed, echo=print)
    failed = [o.name for o in outcomes if not o.passed]
    if failed:
        print("failed: " + "; ".join(failed))
        return EXIT_VALIDATION
    print("all invariants pass")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jumpresum", description=__doc__.splitlines()[0],
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def common(sp, workers=True):
        sp.add_argument("--seed", type=_u64, default=D.SEED)
        sp.add_argument("--out", type=Path, default=None, help="output CSV (default: standard output)")
        if workers:
            sp.add_argument("--workers", type=int, default=1)
        return sp

    R = D.REFLECTION
    sp = common(sub.add_parser("reflection", help="reflection sweep"))
    sp.add_argument("--e-min", type=float, default=R["e_min"])
    sp.add_argument("--e-max", type=float, default=R["e_max"])
    sp.add_argument("--points", type=int, default=R["points"])
    sp.add_argument("--trajectories", type=int, default=R["trajectories"])
    sp.add_argument("--grid-points", type=int, default=R["grid_points"])
    sp.add_argument("--half-width", type=float, default=R["half_width"])
    sp.add_argument("--x0", type=float, default=R["x0"])
    sp.add_argument("--sigma-x", type=float, default=R["sigma_x"])
    sp.add_argument("--dt-scale", type=float, default=R["dt_scale"])
    sp.add_argument("--zone", type=float, default=R["zone"])
    sp.add_argument("--emit-plot", action="store_true")

    sp = common(sub.add_parser("lz", help="Landau-Zener sweep"), workers=False)
    sp.add_argument("--delta", type=_floats, default=D.LZ["deltas"], help="comma-separated list")
    sp.add_argument("--gamma", type=_floats, default=D.LZ["gammas"], help="comma-separated list")
    sp.add_argument("--tol", type=float, default=D.LZ["tol"])
    sp.add_argument("--emit-plot", action="store_true")

    W = D.WEIGHTS
    sp = common(sub.add_parser("weights", help="jump-order weights of a builtin model"))
    sp.add_argument("--model", choices=BUILTIN, default=W["model"])
    sp.add_argument("--rule", choices=sorted(_RULES), default="state")
    sp.add_argument("--delta", type=float, default=W["delta"])
    sp.add_argument("--gamma", type=float, default=W["gamma"])
    sp.add_argument("--tau", type=float, default=W["tau"])
    sp.add_argument("--trajectories", type=int, default=W["trajectories"])
    sp.add_argument("--tol", type=float, default=W["tol"])

    sp = sub.add_parser("validate", help="run the invariant suite",
                        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sp.add_argument("--seed", type=_u64, default=D.SEED)
    sp.add_argument("--quick", action="store_true", help="reduced subset")
    sp.add_argument("--tighten", type=float, default=1.0, help="divide every tolerance by this factor")
    sp.add_argument("--inject-fault", action="store_true", help="tighten every tolerance 100x")
    return parser


_COMMANDS = {"reflection": cmd_reflection, "lz": cmd_lz, "weights": cmd_weights, "validate": cmd_validate}
_COMMON = {"subcommand", "seed", "out", "emit_plot"}


def parse(argv: Sequence[str]) -> RunConfig:
    ns = build_parser().parse_args(list(argv))
    d = vars(ns)
    params = {k: v for k, v in d.items() if k not in _COMMON}
    if params.get("workers", 1) < 1:
        raise UsageError("--workers must be at least 1")
    return RunConfig(ns.subcommand, params, ns.seed, d.get("out"), bool(d.get("emit_plot", False)))


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse(argv)
        return _COMMANDS[cfg.subcommand](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
