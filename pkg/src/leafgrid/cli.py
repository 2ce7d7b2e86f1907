"""Command-line interface.

Every subcommand accepts ``--config FILE`` with a JSON object whose keys are
the long option names (dashes or underscores); flags given on the command
line win over the file.  Exit status is 0 on success, 2 when an estimate is
only partial (unplaced nodes or quarantined lines) and 1 on error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import fixtures
from .alg1 import Alg1Config, run_alg1
from .grid import load_grid, load_lines, observable_tree, save_grid
from .harness import (LONG_FIELDS, ROW_FIELDS, SUMMARY_FIELDS, ExperimentSpec, edge_difference,
                      gen_random_grid, impedance_error, long_form, rows_to_csv, run_experiment,
                      sample_complexity_sweep, summarize, without_timing)
from .moments import D_MIN, analytic_moments, distance_matrix, empirical_moments
from .pipeline import run_alg3
from .result import EstimationResult
from .rg import MODES, RGConfig
from .sampling import InjectionModel, generate_samples, load_samples_csv, save_samples_csv

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of option values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="leafgrid", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-grid", help="random or bundled grid to grid.json")
    _common(p)
    p.add_argument("--buses", type=int, default=10)
    p.add_argument("--max-degree", type=int, default=5)
    p.add_argument("--impedance", type=float, nargs=2, default=[0.1, 0.2])
    p.add_argument("--max-depth", type=int, help="cap on junction depth below the substation")
    p.add_argument("--fixture", choices=sorted(fixtures.NAMED))
    p.add_argument("--allow-degree2", action="store_true",
                   help="do not force hidden buses to degree >= 3")

    p = sub.add_parser("simulate", help="draw injections and solve power flow to samples.csv")
    _common(p)
    p.add_argument("--grid", required=True)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--std", type=float, default=1.0)
    p.add_argument("--corr", type=float, default=0.0)
    p.add_argument("--solver", choices=["lcpf", "acpf"], default="lcpf")
    p.add_argument("--full", action="store_true", help="also write hidden-bus truth")

    p = sub.add_parser("estimate-alg3", help="topology and impedances from observed samples")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--samples", help="samples CSV")
    src.add_argument("--analytic-grid", help="use exact moments of this grid instead")
    p.add_argument("--std", type=float, default=1.0, help="injection std for --analytic-grid")
    p.add_argument("--mode", choices=MODES, default="finite")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--d-min", type=float, default=D_MIN)
    p.add_argument("--root", help="substation id, used when it is observed")

    p = sub.add_parser("estimate-alg1", help="select lines from a permissible set")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--samples", help="leaf samples CSV")
    src.add_argument("--analytic-grid", help="use exact leaf moments of this grid instead")
    p.add_argument("--std", type=float, default=1.0, help="injection std for --analytic-grid")
    p.add_argument("--permissible", required=True, help="line list JSON")
    p.add_argument("--root", required=True)
    p.add_argument("--tau1", type=float, default=1e-6)
    p.add_argument("--tau2", type=float, default=1e-6)

    p = sub.add_parser("evaluate", help="compare an estimate with the true grid")
    _common(p)
    p.add_argument("--estimate", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--full-tree", action="store_true",
                   help="compare with the full grid rather than its observable reduction")

    p = sub.add_parser("sweep", help="repeated-trial experiment described in JSON")
    _common(p)
    p.add_argument("--solver", choices=["lcpf", "acpf"])
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--trials", type=int)
    p.add_argument("--sizes", type=int, nargs="+",
                   help="run a sample-complexity sweep over these grid sizes")
    p.add_argument("--target", type=float, default=0.9)
    return ap


def _apply_config(args: argparse.Namespace, parser: argparse.ArgumentParser, argv) -> dict:
    """Fill options from ``--config``; returns leftover keys (used by ``sweep``)."""
    if not args.config:
        return {}
    doc = json.loads(Path(args.config).read_text())
    if not isinstance(doc, dict):
        raise ValueError("config must be a JSON object")
    given = {a.split("=")[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    rest = {}
    for key, val in doc.items():
        dest = key.replace("-", "_")
        if dest in ("config", "command"):
            continue
        if hasattr(args, dest):
            if dest not in given:
                setattr(args, dest, val)
        else:
            rest[dest] = val
    return rest


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_result(res: EstimationResult, out: Path, plots: bool) -> int:
    doc = res.to_dict()
    (out / "estimate.json").write_text(json.dumps(doc, indent=2, default=str) + "\n")
    with open(out / "edges.csv", "w") as fh:
        fh.write("a,b,r,x,quarantined\n")
        for (a, b), (r, x) in sorted(res.edges.items()):
            fh.write(f"{a},{b},{'' if r is None else repr(r)},{'' if x is None else repr(x)},"
                     f"{int((a, b) in res.quarantined)}\n")
    if plots:
        from .plots import plot_topology
        plot_topology(res.grid, out / "estimate.png", "estimated topology")
    if not res.complete:
        print(f"partial result: {res.diagnostics.get('status')}; "
              f"unresolved={res.diagnostics.get('unresolved')} quarantined={res.quarantined}",
              file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_gen_grid(args) -> int:
    out = _out(args)
    if args.fixture:
        grid = fixtures.load(args.fixture)
    else:
        grid = gen_random_grid(args.buses, args.max_degree, tuple(args.impedance), seed=args.seed,
                               enforce_hidden_degree3=not args.allow_degree2,
                               max_depth=args.max_depth)
    save_grid(grid, out / "grid.json")
    if not args.no_plots:
        from .plots import plot_topology
        plot_topology(grid, out / "grid.png", "grid")
    print(out / "grid.json")
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = _out(args)
    grid = load_grid(args.grid)
    model = InjectionModel.isotropic(grid.non_root, args.std, args.corr)
    samples = generate_samples(grid, model, args.samples, solver=args.solver, seed=args.seed)
    save_samples_csv(samples, out / "samples.csv")
    if args.full:
        save_samples_csv(samples, out / "samples_full.csv", observed_only=False)
    print(out / "samples.csv")
    return EXIT_OK


def _moments(args, leaves_only=False):
    if args.samples:
        return empirical_moments(load_samples_csv(args.samples)), None
    grid = load_grid(args.analytic_grid)
    model = InjectionModel.isotropic(grid.non_root, args.std)
    nodes = grid.leaves if leaves_only else None
    return analytic_moments(grid, model, nodes=nodes), grid


def cmd_estimate_alg3(args) -> int:
    out = _out(args)
    m, grid = _moments(args)
    cfg = RGConfig(epsilon=args.epsilon, tau=args.tau, alpha=args.alpha, mode=args.mode)
    dm = distance_matrix(m, d_min=args.d_min)
    dm.to_csv(out / "distances.csv")
    root = args.root or (grid.root if grid is not None else None)
    res = run_alg3(m, cfg, d_min=args.d_min, root=root)
    return _write_result(res, out, not args.no_plots)


def cmd_estimate_alg1(args) -> int:
    out = _out(args)
    m, _ = _moments(args, leaves_only=True)
    cfg = Alg1Config(tau1=args.tau1, tau2=args.tau2, permissible=load_lines(args.permissible),
                     root=args.root)
    return _write_result(run_alg1(m, cfg), out, not args.no_plots)


def cmd_evaluate(args) -> int:
    out = _out(args)
    doc = json.loads(Path(args.estimate).read_text())
    from .grid import grid_from_dict
    est_grid = grid_from_dict(doc)
    truth = load_grid(args.truth)
    if not args.full_tree:
        truth = observable_tree(truth)
    res = EstimationResult(nodes=est_grid.bus_ids, observed=est_grid.observed,
                           edges={(ln.a, ln.b): (ln.r, ln.x) for ln in est_grid.lines},
                           root=est_grid.root)
    diff = edge_difference(res, truth)
    quarantined = len(doc.get("quarantined", []))
    err = impedance_error(res, truth) if diff == 0 else float("nan")
    with open(out / "evaluation.csv", "w") as fh:
        fh.write("edge_difference,quarantined,exact,impedance_error\n")
        fh.write(f"{diff},{quarantined},{int(diff == 0 and not quarantined)},{err!r}\n")
    print(f"edge_difference={diff} quarantined={quarantined} impedance_error={err:.6g}")
    if not args.no_plots:
        from .plots import plot_topology
        plot_topology(truth, out / "truth.png", "reference topology")
    return EXIT_OK


def cmd_sweep(args, extra: dict) -> int:
    out = _out(args)
    spec_doc = dict(extra.pop("experiment", extra))
    for key in ("solver", "mode", "trials"):
        if getattr(args, key) is not None:
            spec_doc[key] = getattr(args, key)
    spec_doc.setdefault("base_seed", args.seed)
    spec = ExperimentSpec.from_dict(spec_doc)
    (out / "experiment.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    if args.sizes:
        res = sample_complexity_sweep(args.sizes, spec, target=args.target)
        with open(out / "sample_complexity.csv", "w") as fh:
            fh.write("n_buses,n_star\n")
            for r in res["table"]:
                fh.write(f"{r['n_buses']},{r['n_star']}\n")
        print(f"slope={res['slope']:.4f}")
        if not args.no_plots:
            from .plots import plot_sample_complexity
            plot_sample_complexity(res["table"], res["slope"], out / "sample_complexity.png")
        return EXIT_OK
    rows = run_experiment(spec)
    summary = summarize(rows)
    fields = [f for f in ROW_FIELDS if f != "seconds"]
    (out / "trials.csv").write_text(rows_to_csv(without_timing(rows), fields))
    (out / "summary.csv").write_text(rows_to_csv(summary, SUMMARY_FIELDS))
    (out / "summary_long.csv").write_text(rows_to_csv(long_form(summary), LONG_FIELDS))
    if not args.no_plots:
        from .plots import plot_summary
        for metric in ("accuracy", "edge_difference", "impedance_error"):
            plot_summary(summary, metric, out / f"{metric}.png")
    for s in summary:
        print(f"n={s['n_samples']} tol={s['tolerance']:g} accuracy={s['accuracy']:.3f} "
              f"edge_difference={s['edge_difference']:.3f}")
    failed = sum(s["failures"] for s in summary)
    if failed:
        print(f"{failed} trial runs failed; see trials.csv", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


COMMANDS = {"gen-grid": cmd_gen_grid, "simulate": cmd_simulate,
            "estimate-alg3": cmd_estimate_alg3, "estimate-alg1": cmd_estimate_alg1,
            "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        extra = _apply_config(args, parser, argv)
        if args.command == "sweep":
            return cmd_sweep(args, extra)
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return COMMANDS[args.command](args)
    except Exception as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
