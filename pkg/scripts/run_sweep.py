#!/usr/bin/env python3
"""Window-length sweep over a synthetic cohort through the CLI, then a compact RMSE table.

The default grid is 4x4 (w_in 3,5,7,9 by w_out 1,3,5,7), i.e. 16 full
leave-one-out runs; use --w-in/--w-out to narrow it or --fast for a smoke run.

    python3 scripts/run_sweep.py --out runs/sweep --w-in 3 5 --w-out 1 3
"""
import argparse
import json
from pathlib import Path

from adaptstress.cli import main as cli
from adaptstress.experiment import DESK_CONFIG
from adaptstress.reporting import read_csv

FAST = {"d_model": 16, "n_heads": 2, "n_layers": 1, "d_ff": 32, "epochs": 30, "n_trees": 20,
        "uncertainty_passes": 5, "tta_epochs": 2, "probe_epochs": 1}


def run(argv):
    code = cli(argv)
    if code:
        raise SystemExit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--participants", type=int, default=16)
    ap.add_argument("--w-in", type=int, nargs="+", default=[3, 5, 7, 9])
    ap.add_argument("--w-out", type=int, nargs="+", default=[1, 3, 5, 7])
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--fast", action="store_true", help="tiny model for a quick look")
    args = ap.parse_args()

    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)
    config = {**DESK_CONFIG, **(FAST if args.fast else {}), "seed": args.seed,
              "w_in_grid": args.w_in, "w_out_grid": args.w_out}
    (root / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    c = ["--config", str(root / "config.json"), "--jobs", str(args.jobs)]

    run(["generate", "--out", str(root / "raw"), "--seed", str(args.seed),
         "--participants", str(args.participants)])
    run(["preprocess", "--cohort", str(root / "raw"), "--out", str(root / "clean"), *c])
    run(["sweep", "--cohort", str(root / "clean"), "--out", str(root / "sweep"), *c])
    run(["report", "--run", str(root / "sweep")])

    _, rows = read_csv(root / "sweep" / "sweep_report.csv")
    rmse = {(int(r["w_in"]), int(r["w_out"]), r["model_variant"]): float(r["mean"])
            for r in rows if r["metric"] == "rmse"}
    print("mean RMSE (adaptstress / persistence)")
    print("w_in \\ w_out " + "".join(f"{o:>16d}" for o in args.w_out))
    for i in args.w_in:
        cells = "".join(f"{rmse[i, o, 'adaptstress']:>8.4f}/{rmse[i, o, 'persistence']:<7.4f}" for o in args.w_out)
        print(f"{i:>12d} {cells}")
    print("full report:", root / "sweep" / "sweep_report.csv")


if __name__ == "__main__":
    main()
