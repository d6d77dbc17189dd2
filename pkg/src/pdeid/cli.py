"""Command-line entry point: generate, corrupt, train, report.

Exit codes: 0 success, 2 configuration or file-format problem, 3 numerical
failure, 4 every candidate term pruned away.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_run_config, parse_override
from .data import (PointDataset, load_grid, load_points, sample_domain_points,
                   save_grid, save_points, split_train_test)
from .errors import ConfigError, EmptyPDEError, NumericalError, PdeidError
from .losses import CoefficientVector, pde_residual
from .network import load_network
from .solvers import EQUATIONS, WAVE_DOMAIN, preset, solve, wave_analytic
from .terms import build_eval_plan, load_library
from .training import parse_report, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_EMPTY_PDE = 4


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="pdeid",
        description="Identify sparse PDEs from noisy scattered data.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="solve a preset equation onto a "
                                          "grid file, or sample the "
                                          "analytic wave field")
    gen.add_argument("equation")
    gen.add_argument("--ic", default=None, help="initial condition name")
    gen.add_argument("--out", required=True)
    gen.add_argument("--points", type=int, default=None,
                     help="wave only: number of analytic sample points")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="solver config override")

    cor = sub.add_parser("corrupt", help="subsample, add noise, and split "
                                         "a dataset into train/test files")
    cor.add_argument("source", help="grid file or points CSV")
    cor.add_argument("-n", type=int, required=True,
                     help="training points to draw")
    cor.add_argument("-q", type=float, default=0.0,
                     help="noise level as a multiple of the field std")
    cor.add_argument("--n-test", type=int, default=None,
                     help="test points (default: 20%% of n)")
    cor.add_argument("--sample-seed", type=int, default=0)
    cor.add_argument("--noise-seed", type=int, default=0)
    cor.add_argument("--out", required=True,
                     help="prefix; writes <prefix>_train.csv and "
                          "<prefix>_test.csv")

    tra = sub.add_parser("train", help="run the three-phase identification "
                                       "pipeline from a run config")
    tra.add_argument("config")
    tra.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY.PATH=VALUE", help="config override")
    tra.add_argument("--emit-plot-data", action="store_true",
                     help="also write surrogate and residual fields as CSV")

    rep = sub.add_parser("report", help="pretty-print a saved PDE report")
    rep.add_argument("path", help="identified_pde.txt or a run directory")
    return parser


def cmd_generate(args):
    if args.equation == "wave":
        if not args.points or args.points < 1:
            raise ConfigError("generate wave requires --points >= 1")
        coords = sample_domain_points(WAVE_DOMAIN, args.points, args.seed)
        data = PointDataset(coords, wave_analytic(coords), WAVE_DOMAIN,
                            meta={"equation": "wave", "seed": args.seed})
        save_points(data, args.out)
        print(f"wave: {args.points} analytic points -> {args.out}")
        return EXIT_OK
    if args.equation not in EQUATIONS:
        raise ConfigError(f"unknown equation {args.equation!r}; valid "
                          f"names: {', '.join([*EQUATIONS, 'wave'])}")
    overrides = {}
    for text in args.overrides:
        keys, value = parse_override(text)
        if len(keys) != 1:
            raise ConfigError(f"solver overrides are flat keys, "
                              f"got {text!r}")
        overrides[keys[0]] = value
    grid = solve(preset(args.equation, ic=args.ic, **overrides))
    save_grid(grid, args.out)
    shape = "x".join(str(len(ax)) for ax in grid.axes)
    print(f"{args.equation}: grid {shape} -> {args.out}")
    return EXIT_OK


def _load_source(path):
    try:
        return load_grid(path)
    except ConfigError:
        return load_points(path)


def cmd_corrupt(args):
    source = _load_source(args.source)
    train_ds, test_ds = split_train_test(
        source, args.n, n_test=args.n_test, q=args.q,
        seeds=(args.sample_seed, args.noise_seed))
    stamp = {"source": args.source, "n": args.n, "q": args.q,
             "sample_seed": args.sample_seed,
             "noise_seed": args.noise_seed}
    train_ds.meta.update(stamp)
    test_ds.meta.update(stamp)
    train_path = f"{args.out}_train.csv"
    test_path = f"{args.out}_test.csv"
    save_points(train_ds, train_path)
    save_points(test_ds, test_path)
    print(f"{train_ds.n} train -> {train_path}")
    print(f"{test_ds.n} test  -> {test_path}")
    return EXIT_OK


def _emit_plot_data(config, out_dir):
    """Gridded surrogate evaluations and PDE residual fields as CSV."""
    lib = load_library(config.library)
    plan = build_eval_plan(lib)
    pde_text = (out_dir / "identified_pde.txt").read_text()
    _, fitted = parse_report(pde_text)
    coeff_by_term = dict(fitted)
    xi = CoefficientVector(lib.n_rhs, p=config.p, delta=config.delta)
    inactive = [k for k, term in enumerate(lib.rhs)
                if term not in coeff_by_term]
    for k, term in enumerate(lib.rhs):
        xi.xi[k].set_value(coeff_by_term.get(term, 0.0))
    xi.deactivate(inactive)

    for i, spec in enumerate(config.datasets):
        ds = load_points(spec.train)
        net = load_network(out_dir / f"checkpoint_phase"
                                     f"{len(config.phases) - 1}_net{i}.json")
        dom = ds.domain
        axes = [np.linspace(0.0, dom.t_max, 41)]
        for lo, hi in zip(dom.lows, dom.highs):
            axes.append(np.linspace(lo, hi, 41))
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        surrogate = net.predict(pts)
        # residual graphs are wide; evaluate in slabs to bound memory
        residual = np.concatenate(
            [np.atleast_1d(pde_residual(net, xi, lib, plan, chunk).val)
             for chunk in np.array_split(pts, max(1, len(pts) // 1024))])
        header = ",".join(["t", "x", "y", "z"][:1 + dom.n_d]
                          + ["u", "residual"])
        rows = np.column_stack([pts, surrogate, residual])
        np.savetxt(out_dir / f"plot_data_net{i}.csv", rows,
                   delimiter=",", header=header, comments="")
    print(f"plot data -> {out_dir}/plot_data_net*.csv")


def cmd_train(args):
    config = load_run_config(args.config, overrides=args.overrides)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(args.config, out_dir / "run_config.toml")
    (out_dir / "run_meta.json").write_text(json.dumps(
        {"version": __version__,
         "config_sha256": config.digest(),
         "overrides": list(args.overrides),
         "seed": config.seed,
         "net_seeds": [d.net_seed for d in config.datasets],
         "colloc_seeds": [d.colloc_seed for d in config.datasets]},
        indent=1, sort_keys=True) + "\n")
    pde = train(config)
    print((out_dir / "identified_pde.txt").read_text().strip())
    if args.emit_plot_data:
        _emit_plot_data(config, out_dir)
    return EXIT_OK


def cmd_report(args):
    path = Path(args.path)
    if path.is_dir():
        path = path / "identified_pde.txt"
    if not path.is_file():
        raise ConfigError(f"no PDE report at {path}")
    text = path.read_text().strip()
    lhs, terms = parse_report(text)
    print(text)
    print(f"  {len(terms)} active term(s)")
    for term, coeff in terms:
        print(f"  {coeff:+.4f}  {term.render()}")
    meta_path = path.parent / "provenance.json"
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text())
        epochs = meta.get("phase_epochs")
        print(f"  phases ran {epochs} epochs; "
              f"config {meta.get('config_sha256', '')[:12]}")
    return EXIT_OK


_COMMANDS = {"generate": cmd_generate, "corrupt": cmd_corrupt,
             "train": cmd_train, "report": cmd_report}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except EmptyPDEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY_PDE
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PdeidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
