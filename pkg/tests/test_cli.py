import json

import pytest

from adaptstress.cli import main
from adaptstress.reporting import read_csv, read_json

TINY = {"d_model": 8, "n_heads": 2, "n_layers": 1, "d_ff": 16, "scorer_hidden": 8, "head_hidden": 8,
        "epochs": 3, "warmup": 1, "batch_size": 64, "n_trees": 10, "uncertainty_passes": 2,
        "tta_epochs": 1, "probe_epochs": 1, "w_in": 3, "w_out": 1, "w_in_grid": [3, 4], "w_out_grid": [1],
        "shap_background": 3, "shap_samples": 2, "shap_coalitions": 64}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(TINY))
    c = ["--config", str(cfg)]
    assert main(["generate", "--out", str(root / "raw"), "--participants", "4",
                 "--days-min", "40", "--days-max", "44", "--seed", "2"]) == 0
    assert main(["preprocess", "--cohort", str(root / "raw"), "--out", str(root / "clean"), *c]) == 0
    return root, c


def test_generate_and_preprocess_outputs(pipeline):
    root, _ = pipeline
    truth = read_json(root / "raw" / "ground_truth.json")
    manifest = read_json(root / "raw" / "manifest.json")
    assert truth["manifest_hash"] == manifest["manifest_hash"]
    assert len(list((root / "raw").glob("P*.csv"))) == 4
    assert read_json(root / "clean" / "quality_report.json")["manifest_hash"]


def test_select_features(pipeline):
    root, c = pipeline
    assert main(["select-features", "--cohort", str(root / "clean"), "--out", str(root / "sel"), *c]) == 0
    doc = read_json(root / "sel" / "selection.json")
    assert len(doc["folds"]) == 4
    assert all(len(f["kept"]) == 15 for f in doc["folds"].values())


def test_train_one_fold(pipeline):
    root, c = pipeline
    assert main(["train", "--cohort", str(root / "clean"), "--out", str(root / "train"), "--test", "P02", *c]) == 0
    rec = read_json(root / "train" / "train_record.json")
    assert rec["test"] == "P02" and len(rec["epochs"]) == 3
    assert (root / "train" / "fold_P02.ckpt").exists()


def test_evaluate_rerun_is_byte_identical(pipeline):
    root, c = pipeline
    outs = []
    for name in ("ev1", "ev2"):
        assert main(["evaluate", "--cohort", str(root / "clean"), "--out", str(root / name), *c]) == 0
        outs.append(root / name)
    for f in ["aggregate.json", "fold_P01.json", "fold_P03.ckpt"]:
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f
    # the manifest records the output path, but its hash ignores paths
    hashes = [read_json(o / "manifest.json")["manifest_hash"] for o in outs]
    assert hashes[0] == hashes[1]


def test_sweep_explain_report(pipeline):
    root, c = pipeline
    sweep = root / "sweep"
    assert main(["sweep", "--cohort", str(root / "clean"), "--out", str(sweep), "--force-tta", *c]) == 0
    h, rows = read_csv(sweep / "sweep_report.csv")
    assert h == read_json(sweep / "manifest.json")["manifest_hash"]
    assert {(r["w_in"], r["w_out"]) for r in rows} == {("3", "1"), ("4", "1")}
    assert read_json(sweep / "manifest.json")["config"]["tta_mode"] == "forced"

    assert main(["explain", "--cohort", str(root / "clean"), "--run", str(sweep / "w3_p1"),
                 "--out", str(root / "shap"), *c]) == 0
    summary = read_json(root / "shap" / "shap_summary.json")
    assert len(summary["features"]) == 22 and set(summary["per_participant"]) == {"P01", "P02", "P03", "P04"}

    assert main(["report", "--run", str(sweep)]) == 0
    _, radar = read_csv(sweep / "radar_data.csv")
    assert len(radar) == 2 * 4 * 5
    assert {"mae", "mse", "rmse", "model_variant"} <= set(radar[0])
    _, series = read_csv(sweep / "prediction_series.csv")
    assert series and float(series[0]["lower"]) <= float(series[0]["upper"])


def test_report_refuses_mixed_manifests(pipeline, tmp_path):
    root, _ = pipeline
    mixed = tmp_path / "mixed"
    mixed.mkdir()
    for name in ("ev1", "sweep/w3_p1"):
        src = root / name / "fold_P01.json"
        if src.exists():
            doc = read_json(src)
            (mixed / f"fold_{name.replace('/', '_')}.json").write_text(json.dumps(doc))
    assert main(["report", "--run", str(mixed)]) == 1


def test_missing_cohort_is_path_error(tmp_path, capsys):
    code = main(["preprocess", "--cohort", str(tmp_path / "nope"), "--out", str(tmp_path)])
    assert code == 3
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["exit_code"] == 3 and record["command"] == "preprocess"
    assert json.loads((tmp_path / "error.json").read_text())["error"] == "PathError"


def test_unknown_override_is_usage_error(pipeline, tmp_path):
    root, _ = pipeline
    assert main(["evaluate", "--cohort", str(root / "clean"), "--out", str(tmp_path),
                 "--set", "not_a_key=1"]) == 2


def test_tta_flags_are_exclusive(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--cohort", "x", "--out", str(tmp_path), "--no-tta", "--force-tta"])
    assert exc.value.code == 2
