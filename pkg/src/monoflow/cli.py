"""Command line interface.

Scenario arguments accept a YAML file or ``preset:<name>``.  Run outputs are
archive directories written by ``run``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .facets import facet_trajectory
from .io import (
    SCENARIO_PRESETS,
    compare,
    dump_scenario,
    emit_series,
    load_scenario,
    load_series,
    preset_scenario,
    report,
    resolve_scenario,
)
from .model import InitialDatum, ScenarioError
from .oracles import fine_grid_reference, heat_fourier, one_sided_stationary, tv_vee_facet
from .solver import SolverError, epsilon_convergence_report, fitted_order, run, run_regularized
from .verification import SUITES, run_suite

log = logging.getLogger("monoflow")

ORACLES = ("heat", "tv_vee", "stationary", "fine")


def _apply_overrides(sc, args):
    changes = {}
    if getattr(args, "snapshots", None):
        changes["snapshot_every"] = args.snapshots
    if getattr(args, "method", None):
        changes["method"] = args.method
    tol = {}
    for key in ("tol_prox", "tol_flux", "slope_tol"):
        v = getattr(args, key, None)
        if v is not None:
            tol[key] = v
    if tol:
        changes["tolerances"] = tol
    return sc.replace(**changes) if changes else sc


def _is_archive(ref: str) -> bool:
    return Path(ref, "summary.json").is_file()


def _series_from(ref: str, args=None):
    """Load an archive, or run a scenario reference."""
    if _is_archive(ref):
        return load_series(ref), _archived_scenario(ref)
    sc = resolve_scenario(ref)
    if args is not None:
        sc = _apply_overrides(sc, args)
    return run(sc), sc


def _archived_scenario(path):
    p = Path(path, "scenario.yaml")
    return load_scenario(p) if p.is_file() else None


def _oracle(name, scenario, u0_expr=None, center=0.5, factor=4):
    if name == "heat":
        if scenario is not None:
            return heat_fourier(scenario.initial.function(), scenario.A.value(0), scenario.B.value(0))
        return heat_fourier(u0_expr or "sin(pi*x)")
    if name == "tv_vee":
        return tv_vee_facet(center)
    if name == "stationary":
        if scenario is not None:
            return one_sided_stationary(scenario.initial.function())
        return one_sided_stationary(u0_expr or "1 - x")
    if name == "fine":
        if scenario is None:
            raise ScenarioError("the fine-grid oracle needs a scenario")
        return fine_grid_reference(scenario, factor)
    raise ScenarioError(f"unknown oracle {name!r}; choose from {', '.join(ORACLES)}")


def perturbed(scenario, amplitude: float = 0.05):
    """Same scenario with a deterministic interior bump added to the datum."""
    x = scenario.x
    vals = scenario.u0.values + amplitude * np.sin(np.pi * x) ** 2
    vals[0], vals[-1] = scenario.u0.values[0], scenario.u0.values[-1]
    return scenario.replace(initial=InitialDatum(values=tuple(vals)), name=scenario.name + "_perturbed")


# ----------------------------------------------------------------------
# subcommands


def cmd_run(args):
    sc = _apply_overrides(resolve_scenario(args.scenario), args)
    series = run(sc)
    out = Path(args.out or f"runs/{sc.name}")
    emit_series(series, out, sc)
    d = series.final.diagnostics
    print(f"{sc.name}: {len(series)} snapshots, t={series.final.t:g}, energy={d.energy:.6e}, "
          f"bv={d.bv:.6e}, max|flux|={d.max_flux:.6e}")
    if series.convergence:
        for eps, dist in series.convergence:
            print(f"  eps={eps:<10g} L2 distance to finest {dist:.3e}")
    print(f"archive written to {out}")
    return 0


def cmd_verify(args):
    series = load_series(args.run)
    partner = None
    if args.suite in ("all", "contraction"):
        if args.partner:
            partner = load_series(args.partner)
        else:
            sc = _archived_scenario(args.run)
            if sc is not None:
                partner = run(perturbed(sc))
    tol = {"bv": args.tol_bv, "contraction": args.tol_contract, "convexity": args.tol_convex,
           "energy": args.tol_energy, "flux": args.tol_flux_bound}
    reps = run_suite(series, args.suite, partner=partner, tol={k: v for k, v in tol.items() if v is not None})
    failed = 0
    for r in reps:
        print(r.summary())
        failed += r.passed is False
    return 1 if failed else 0


def cmd_compare(args):
    a, sc = _series_from(args.a, args)
    if args.b.startswith("oracle:"):
        orc = _oracle(args.b.split(":", 1)[1], sc, factor=args.factor)
        print(report(a, orc, out_dir=args.out))
        return 0
    b, _ = _series_from(args.b, args)
    text, rows = compare(a, b)
    print(text)
    if args.out:
        from .io import write_columns

        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_columns(Path(args.out, "difference.dat"), ("t", "l2", "linf"), rows)
    return 0


def cmd_sweep(args):
    sc = _apply_overrides(resolve_scenario(args.scenario), args).replace(method="regularized")
    eps = sorted(args.eps or sc.epsilon_schedule, reverse=True)
    runs = [run_regularized(sc, e) for e in eps]
    rep = epsilon_convergence_report(runs)
    print(f"{'epsilon':>12} {'L2 to finest':>14}")
    for e, d in rep:
        print(f"{e:>12.6g} {d:>14.6e}")
    if len(rep) >= 3:
        print(f"fitted order {fitted_order(rep):.3f}")
    if args.out:
        from .io import write_columns

        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_columns(Path(args.out, "sweep.dat"), ("epsilon", "l2"), rep)
    return 0


def cmd_facets(args):
    series = load_series(args.run)
    rows = facet_trajectory(series)
    cols = ("t", "theta", "xi_minus", "xi_plus", "a", "b", "speed_predicted", "speed_measured")
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(float(r[c])) for c in cols])
    finally:
        if args.out:
            fh.close()
    return 0


def cmd_oracle(args):
    orc = _oracle(args.name, None, u0_expr=args.u0, center=args.center)
    for spec in args.at:
        t, x = (float(v) for v in spec.split(","))
        print(f"{args.name} t={t:g} x={x:g} u={float(orc(np.array([x]), t)[0]):.12g}")
    return 0


def cmd_presets(args):
    for name in SCENARIO_PRESETS:
        if args.show:
            print(f"# {name}\n{dump_scenario(preset_scenario(name))}")
        else:
            print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="monoflow", description="1D gradient flows for monotone-graph diffusion")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def solver_flags(q):
        q.add_argument("--snapshots", type=int, metavar="K", help="keep every K-th step")
        q.add_argument("--method", choices=("prox", "regularized"))
        q.add_argument("--tol-prox", type=float, dest="tol_prox")
        q.add_argument("--tol-flux", type=float, dest="tol_flux")
        q.add_argument("--slope-tol", type=float, dest="slope_tol")

    q = sub.add_parser("run", help="run a scenario and write an archive")
    q.add_argument("scenario", help="YAML file or preset:<name>")
    q.add_argument("--out", help="archive directory (default runs/<name>)")
    solver_flags(q)
    q.set_defaults(func=cmd_run)

    q = sub.add_parser("verify", help="check invariants of an archived run")
    q.add_argument("run")
    q.add_argument("--suite", default="all", choices=("all",) + SUITES)
    q.add_argument("--partner", help="archive used for the contraction check")
    for name in ("bv", "contract", "convex", "energy", "flux-bound"):
        q.add_argument(f"--tol-{name}", type=float, dest="tol_" + name.replace("-", "_"))
    q.set_defaults(func=cmd_verify)

    q = sub.add_parser("compare", help="difference norms between two runs, or a run and an oracle")
    q.add_argument("a")
    q.add_argument("b", help="archive, scenario, or oracle:<heat|tv_vee|stationary|fine>")
    q.add_argument("--out", help="directory for plot-data files")
    q.add_argument("--factor", type=int, default=4, help="refinement of the fine-grid oracle")
    solver_flags(q)
    q.set_defaults(func=cmd_compare)

    q = sub.add_parser("sweep-epsilon", help="regularized runs over a range of epsilon")
    q.add_argument("scenario")
    q.add_argument("--eps", type=float, nargs="+")
    q.add_argument("--out")
    solver_flags(q)
    q.set_defaults(func=cmd_sweep)

    q = sub.add_parser("facets", help="facet trajectory CSV of an archived run")
    q.add_argument("run")
    q.add_argument("--out", help="CSV file (default stdout)")
    q.set_defaults(func=cmd_facets)

    q = sub.add_parser("oracle", help="evaluate a reference solution")
    q.add_argument("name", choices=("heat", "tv_vee", "stationary"))
    q.add_argument("--at", action="append", required=True, metavar="T,X")
    q.add_argument("--u0", help="initial expression (heat, stationary)")
    q.add_argument("--center", type=float, default=0.5, help="kink location (tv_vee)")
    q.set_defaults(func=cmd_oracle)

    q = sub.add_parser("presets", help="list built-in scenarios")
    q.add_argument("--show", action="store_true", help="print the resolved YAML")
    q.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, SolverError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
