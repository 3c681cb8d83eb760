"""Command-line entry point: ``adaptstress <subcommand> [flags]``.

Every subcommand writes ``manifest.json`` into its output directory; every
result file carries the manifest hash (JSON field or ``# manifest:`` CSV line).
Failures print a JSON error record to stderr (and ``error.json`` when the
output directory exists) and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

import torch

from . import seeding
from .config import RunConfig, directory_hash, make_manifest
from .data import load_cohort, write_cohort
from .evaluation import (FoldResult, LoocvResult, aggregate, assign_folds, radar_rows, run_loocv,
                         run_sweep)
from .explain import explain_participant, write_explanations
from .model import AdaptStress, ModelConfig
from .numerics import load_checkpoint, read_checkpoint, save_checkpoint
from .preprocessing import apply_scaler, fit_scaler, preprocess_cohort
from .reporting import read_csv, read_json, write_csv, write_json
from .selection import SelectionResult, select_features
from .synthetic import CohortSpec, generate_synthetic
from .training import train_phase1
from .tta import TtaHistoryStore
from .windowing import assemble_fold, selection_matrix

log = logging.getLogger("adaptstress")

EXIT_RUNTIME, EXIT_USAGE, EXIT_PATH = 1, 2, 3


class PathError(FileNotFoundError):
    pass


class ManifestMismatch(RuntimeError):
    pass


def _require_dir(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise PathError(f"{what} directory not found: {p}")
    return p


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_config(args) -> RunConfig:
    base = RunConfig.load(args.config).to_dict() if getattr(args, "config", None) else RunConfig().to_dict()
    for item in getattr(args, "set", None) or []:
        key, _, value = item.partition("=")
        if key not in base:
            raise argparse.ArgumentTypeError(f"unknown config key {key!r}")
        base[key] = _parse_value(value)
    for flag, key in (("seed", "seed"), ("jobs", "jobs"), ("w_in", "w_in"), ("w_out", "w_out")):
        v = getattr(args, flag, None)
        if v is not None:
            base[key] = v
    if getattr(args, "no_tta", False):
        base["tta_mode"] = "none"
    if getattr(args, "force_tta", False):
        base["tta_mode"] = "forced"
    if getattr(args, "cohort", None):
        base["cohort_dir"] = args.cohort
    if getattr(args, "out", None):
        base["output_dir"] = args.out
    if getattr(args, "history", None):
        base["history_path"] = args.history
    return RunConfig.from_dict(base)


def _manifest(command: str, cfg: RunConfig, out: Path, inputs: dict[str, str]):
    m = make_manifest(command, cfg, inputs)
    m.write(out)
    return m


def cmd_generate(args) -> None:
    cfg = build_config(args)
    out = Path(cfg.output_dir)
    spec = CohortSpec(n_participants=args.participants, days_per_participant=(args.days_min, args.days_max),
                      seed=cfg.seed)
    synth = generate_synthetic(spec)
    write_cohort(synth.cohort, out)
    m = _manifest("generate", cfg, out, {"spec": json.dumps(
        {"n": args.participants, "days": [args.days_min, args.days_max]})})
    truth = synth.ground_truth()
    truth["manifest_hash"] = m.hash
    write_json(out / "ground_truth.json", truth)


def cmd_preprocess(args) -> None:
    cfg = build_config(args)
    src = _require_dir(cfg.cohort_dir, "cohort")
    out = Path(cfg.output_dir)
    cohort = load_cohort(src)
    imputed, report = preprocess_cohort(cohort, cfg.iqr_multiplier, cfg.rolling_window_days, cfg.rolling_k)
    write_cohort(imputed, out)
    m = _manifest("preprocess", cfg, out, {"cohort": directory_hash(src)})
    write_json(out / "quality_report.json", {"manifest_hash": m.hash, **report.to_dict()})


def cmd_select(args) -> None:
    cfg = build_config(args)
    src = _require_dir(cfg.cohort_dir, "cohort")
    out = Path(cfg.output_dir)
    cohort = load_cohort(src)
    m = _manifest("select-features", cfg, out, {"cohort": directory_hash(src)})
    folds = {}
    for a in assign_folds(cohort.ids, cfg.seed):
        train = [cohort[p] for p in a.train]
        scaler = fit_scaler(train)
        X, y, names = selection_matrix([apply_scaler(scaler, s) for s in train], cfg.w_in, cfg.w_out)
        s = cfg.selection_settings(seeding.sub_seed(cfg.seed, "selection", a.test) % 2**32)
        folds[a.test] = select_features(X, y, names, s.n_keep, s.corr_threshold, s.mi_bins,
                                        s.n_trees, s.seed).to_dict()
    write_json(out / "selection.json", {"manifest_hash": m.hash, "w_in": cfg.w_in, "w_out": cfg.w_out,
                                        "folds": folds})


def cmd_train(args) -> None:
    cfg = build_config(args)
    src = _require_dir(cfg.cohort_dir, "cohort")
    out = Path(cfg.output_dir)
    cohort = load_cohort(src)
    folds = {a.test: a for a in assign_folds(cohort.ids, cfg.seed)}
    if args.test not in folds:
        raise PathError(f"participant {args.test} not in cohort")
    a = folds[args.test]
    m = _manifest("train", cfg, out, {"cohort": directory_hash(src), "test": args.test})
    data = assemble_fold(cohort, a, cfg.w_in, cfg.w_out,
                         cfg.selection_settings(seeding.sub_seed(cfg.seed, "selection", a.test) % 2**32))
    n_train = len(a.train)
    mcfg = cfg.model_config(len(data.selection.kept), n_train if n_train >= 2 else None)
    model, record = train_phase1(data.train, data.val, mcfg,
                                 cfg.train_settings(seeding.sub_seed(cfg.seed, "train", a.test)))
    save_checkpoint(out / f"fold_{a.test}.ckpt", model,
                    meta={"manifest_hash": m.hash, "test": a.test, "model_config": mcfg.to_dict(),
                          "features": list(data.selection.kept)})
    write_json(out / "selection.json", {"manifest_hash": m.hash, "folds": {a.test: data.selection.to_dict()}})
    write_json(out / "train_record.json", {"manifest_hash": m.hash, "test": a.test, "val": a.val,
                                           **record.to_dict()})


def cmd_evaluate(args) -> None:
    cfg = build_config(args)
    src = _require_dir(cfg.cohort_dir, "cohort")
    out = Path(cfg.output_dir)
    cohort = load_cohort(src)
    m = _manifest("evaluate", cfg, out, {"cohort": directory_hash(src)})
    run_loocv(cohort, cfg, history=TtaHistoryStore(cfg.history_file), run_id=m.hash,
              out_dir=out, manifest_hash=m.hash)


def cmd_sweep(args) -> None:
    cfg = build_config(args)
    src = _require_dir(cfg.cohort_dir, "cohort")
    out = Path(cfg.output_dir)
    cohort = load_cohort(src)
    m = _manifest("sweep", cfg, out, {"cohort": directory_hash(src)})
    run_sweep(cohort, cfg, out, TtaHistoryStore(cfg.history_file), m.hash, m.hash)


def _consistent_hash(paths: list[Path]) -> str:
    hashes = set()
    for p in paths:
        if p.suffix == ".json":
            hashes.add(read_json(p).get("manifest_hash"))
        elif p.suffix == ".csv":
            hashes.add(read_csv(p)[0])
        else:
            hashes.add(read_checkpoint(p)[1].get("manifest_hash"))
    if len(hashes) != 1 or None in hashes:
        raise ManifestMismatch(f"inputs carry different manifest hashes: {sorted(map(str, hashes))}")
    return hashes.pop()


def cmd_explain(args) -> None:
    cfg = build_config(args)
    src = _require_dir(cfg.cohort_dir, "cohort")
    run = _require_dir(args.run, "run")
    out = Path(cfg.output_dir)
    ckpts = sorted(run.glob("fold_*.ckpt"))
    if not ckpts:
        raise PathError(f"no fold checkpoints in {run}; run evaluate with save_checkpoints")
    run_hash = _consistent_hash(ckpts + sorted(run.glob("fold_*.json")))
    cohort = load_cohort(src)
    m = _manifest("explain", cfg, out, {"cohort": directory_hash(src), "run": run_hash})
    attributions = {}
    folds = {a.test: a for a in assign_folds(cohort.ids, cfg.seed)}
    for path in ckpts:
        entries, meta = read_checkpoint(path)
        pid = meta["test"]
        w_in, w_out = meta["model_config"]["w_in"], meta["model_config"]["w_out"]
        data = assemble_fold(cohort, folds[pid], w_in, w_out,
                             SelectionResult(tuple(meta["features"]), {}, {}))
        model = AdaptStress(ModelConfig(**meta["model_config"]))
        load_checkpoint(path, model)
        model.eval()
        attributions[pid] = explain_participant(
            model, data.train.inputs, data.test.inputs, data.selection.kept, pid,
            cfg.shap_background, cfg.shap_samples, cfg.shap_coalitions, cfg.seed)
    write_explanations(attributions, cohort.catalog.predictors, out, m.hash,
                       {"background": cfg.shap_background, "samples": cfg.shap_samples,
                        "coalitions": cfg.shap_coalitions, "horizon_day": 1})


def cmd_report(args) -> None:
    run = _require_dir(args.run, "run")
    out = Path(args.out or run)
    cells = sorted({p.parent for p in run.rglob("fold_*.json")})
    if not cells:
        raise PathError(f"no fold results under {run}")
    files = sorted(run.rglob("fold_*.json")) + sorted(run.rglob("aggregate.json"))
    if (run / "sweep_report.csv").exists():
        files.append(run / "sweep_report.csv")
    h = _consistent_hash(files)
    manifest = run / "manifest.json"
    if manifest.exists() and read_json(manifest)["manifest_hash"] != h:
        raise ManifestMismatch(f"{manifest} does not match its result files")
    results = []
    for cell in cells:
        docs = [read_json(p) for p in sorted(cell.glob("fold_*.json"))]
        folds = [FoldResult(d["test"], d["val"], tuple(d["train"]), tuple(d["features"]),
                            {v: {k: (float("nan") if x is None else x) for k, x in mm.items()}
                             for v, mm in d["metrics"].items()},
                            d["decision"], d["tta_change"], {}, d["adapt_curve"]) for d in docs]
        results.append(LoocvResult(docs[0]["w_in"], docs[0]["w_out"], folds, aggregate(folds)))
    write_csv(out / "radar_data.csv", ["w_in", "w_out", "participant", "model_variant", "mae", "mse", "rmse"],
              radar_rows(results), h)
    series = []
    for cell in cells:
        for p in sorted(cell.glob("fold_*.json")):
            d = read_json(p)
            pr = d["predictions"]
            for i, day in enumerate(pr["anchor_dates"]):
                series.append([d["w_in"], d["w_out"], d["test"], day, pr["target"][i][0],
                               pr["prediction"][i][0], pr["band_lower"][i][0], pr["band_upper"][i][0]])
    write_csv(out / "prediction_series.csv",
              ["w_in", "w_out", "participant", "anchor_date", "target", "prediction", "lower", "upper"],
              series, h)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adaptstress", description="Personalized stress forecasting pipeline")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, cohort=True):
        sp.add_argument("--config", help="JSON config file (flat keys)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--jobs", type=int)
        sp.add_argument("--w-in", dest="w_in", type=int)
        sp.add_argument("--w-out", dest="w_out", type=int)
        sp.add_argument("--out", required=True, help="output directory")
        if cohort:
            sp.add_argument("--cohort", required=True, help="cohort directory")

    g = sub.add_parser("generate", help="write a seeded synthetic cohort")
    common(g, cohort=False)
    g.add_argument("--participants", type=int, default=16)
    g.add_argument("--days-min", type=int, default=90)
    g.add_argument("--days-max", type=int, default=110)
    g.set_defaults(func=cmd_generate)

    common(sub.add_parser("preprocess", help="trim, flag anomalies, impute"))
    sub.choices["preprocess"].set_defaults(func=cmd_preprocess)
    common(sub.add_parser("select-features", help="ensemble feature selection per fold"))
    sub.choices["select-features"].set_defaults(func=cmd_select)

    t = sub.add_parser("train", help="phase-1 training for one fold")
    common(t)
    t.add_argument("--test", required=True, help="held-out participant id")
    t.set_defaults(func=cmd_train)

    for name, func in (("evaluate", cmd_evaluate), ("sweep", cmd_sweep)):
        sp = sub.add_parser(name, help="leave-one-out evaluation" if name == "evaluate"
                            else "evaluation over the window grid")
        common(sp)
        tta = sp.add_mutually_exclusive_group()
        tta.add_argument("--no-tta", action="store_true", help="never adapt")
        tta.add_argument("--force-tta", action="store_true", help="adapt every participant")
        sp.add_argument("--history", help="TTA history file (default: <out>/tta_history.jsonl)")
        sp.set_defaults(func=func)

    e = sub.add_parser("explain", help="kernel SHAP over evaluated fold models")
    common(e)
    e.add_argument("--run", required=True, help="directory with fold_*.ckpt from evaluate/sweep")
    e.set_defaults(func=cmd_explain)

    r = sub.add_parser("report", help="plot-ready CSVs from finished runs")
    r.add_argument("--run", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    torch.set_num_threads(1)
    try:
        args.func(args)
    except Exception as exc:
        code = EXIT_PATH if isinstance(exc, (PathError, FileNotFoundError)) else (
            EXIT_USAGE if isinstance(exc, argparse.ArgumentTypeError) else EXIT_RUNTIME)
        record = {"command": args.command, "error": type(exc).__name__, "message": str(exc),
                  "exit_code": code}
        if args.verbose:
            record["traceback"] = traceback.format_exc()
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        out = getattr(args, "out", None)
        if out and Path(out).is_dir():
            (Path(out) / "error.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
