"""End-to-end synthetic experiment driven through the CLI.

generate -> preprocess -> sweep (one grid cell by default) -> explain -> report,
all under one output directory. Returns the pieces the directional checks need.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

from .cli import main
from .reporting import read_csv, read_json

# Reduced settings that fit a 16-fold run in a few minutes on one CPU core.
DESK_CONFIG = {
    "d_model": 64, "n_heads": 8, "d_ff": 128, "batch_size": 64,
    "shap_background": 20, "shap_samples": 20, "shap_coalitions": 512,
}


@dataclass
class ExperimentOutcome:
    root: Path
    sweep_report: Path
    shap_summary: Path
    aggregate: dict
    shap: dict
    truth: dict
    folds: dict
    seconds: dict


def _run(argv: list[str]) -> None:
    code = main(argv)
    if code != 0:
        raise RuntimeError(f"adaptstress {' '.join(argv)} exited with {code}")


def run_experiment(root: str | Path, seed: int = 0, participants: int = 16, days: tuple[int, int] = (90, 110),
                   overrides: dict | None = None, w_in: int = 5, w_out: int = 1,
                   verbose: bool = False) -> ExperimentOutcome:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    config = {**DESK_CONFIG, "w_in_grid": [w_in], "w_out_grid": [w_out], "w_in": w_in, "w_out": w_out,
              "seed": seed, **(overrides or {})}
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    v = ["-v"] if verbose else []
    raw, clean, sweep, shap = root / "raw", root / "clean", root / "sweep", root / "shap"
    seconds = {}
    steps = [
        ("generate", ["generate", "--out", str(raw), "--seed", str(seed), "--participants", str(participants),
                      "--days-min", str(days[0]), "--days-max", str(days[1])]),
        ("preprocess", ["preprocess", "--cohort", str(raw), "--out", str(clean), "--config", str(cfg_path)]),
        ("sweep", ["sweep", "--cohort", str(clean), "--out", str(sweep), "--config", str(cfg_path)]),
        ("explain", ["explain", "--cohort", str(clean), "--run", str(sweep / f"w{w_in}_p{w_out}"),
                     "--out", str(shap), "--config", str(cfg_path)]),
        ("report", ["report", "--run", str(sweep)]),
    ]
    for name, argv in steps:
        t0 = time.perf_counter()
        _run(v + argv)
        seconds[name] = time.perf_counter() - t0
    cell = sweep / f"w{w_in}_p{w_out}"
    folds = {p.stem.removeprefix("fold_"): read_json(p) for p in sorted(cell.glob("fold_*.json"))}
    _, rows = read_csv(sweep / "sweep_report.csv")
    agg: dict = {}
    for r in rows:
        agg.setdefault(r["model_variant"], {})[r["metric"]] = float(r["mean"])
    return ExperimentOutcome(root, sweep / "sweep_report.csv", shap / "shap_summary.json", agg,
                             read_json(shap / "shap_summary.json"), read_json(raw / "ground_truth.json"),
                             folds, seconds)
