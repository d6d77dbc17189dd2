#!/usr/bin/env python3
"""Reduced Burgers discovery run: 2000 points at 25% noise, 17-term library.

Generates the clean field, corrupts it, trains the three-phase pipeline,
and prints the identified PDE. One positional argument selects the seed.
"""

import argparse
import sys
import time
from pathlib import Path

from pdeid.config import build_run_config
from pdeid.data import load_grid, save_grid, save_points, split_train_test
from pdeid.solvers import preset, solve
from pdeid.training import train

REPO = Path(__file__).resolve().parent.parent


def run(seed, out_root, epochs=(500, 500, 500), n_data=2000, q=0.25,
        n_random_coll=1000, w_lp=1e-4, patience=0, metric_window=0):
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    grid_path = out_root / "burgers_clean.grid"
    if not grid_path.is_file():
        save_grid(solve(preset("burgers")), grid_path)
    grid = load_grid(grid_path)

    train_ds, test_ds = split_train_test(grid, n_data, q=q,
                                         seeds=(seed, 100 + seed))
    train_path = out_root / f"seed{seed}_train.csv"
    test_path = out_root / f"seed{seed}_test.csv"
    save_points(train_ds, train_path)
    save_points(test_ds, test_path)

    doc = {
        "run": {
            "library": str(REPO / "configs" / "burgers17.toml"),
            "out_dir": str(out_root / f"seed{seed}"),
            "n_random_coll": n_random_coll,
            "seed": seed,
        },
        "dataset": [{
            "train": str(train_path),
            "test": str(test_path),
            "hidden": [20, 20, 20, 20, 20],
        }],
        "phases": {
            "burn_in": {"epochs": epochs[0], "lr": 1e-3},
            "sparsification": {"epochs": epochs[1], "lr": 1e-3,
                               "w_lp": w_lp},
            "fine_tune": {"epochs": epochs[2], "lr": 1e-3,
                          "patience": patience,
                          "metric_window": metric_window},
        },
    }
    config = build_run_config(doc, base_dir=out_root)
    t0 = time.time()
    pde = train(config)
    minutes = (time.time() - t0) / 60.0
    text = (Path(config.out_dir) / "identified_pde.txt").read_text().strip()
    print(f"seed {seed} ({minutes:.1f} min): {text}")
    return pde


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("seed", type=int, nargs="?", default=0)
    ap.add_argument("--out", default=str(REPO / "runs" / "burgers_reduced"))
    ap.add_argument("--epochs", type=int, nargs=3, default=(500, 500, 500),
                    metavar=("BURN", "SPARSE", "TUNE"))
    ap.add_argument("--n-data", type=int, default=2000)
    ap.add_argument("--n-coll", type=int, default=1000)
    ap.add_argument("--w-lp", type=float, default=1e-4)
    args = ap.parse_args(argv)
    run(args.seed, args.out, epochs=tuple(args.epochs), n_data=args.n_data,
        n_random_coll=args.n_coll, w_lp=args.w_lp)
    return 0


if __name__ == "__main__":
    sys.exit(main())
