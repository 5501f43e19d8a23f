from pathlib import Path as _P
import hashlib
import json
import logging
import os
import sys

import numpy as np
import pandas as pd
import pytest
import yaml

ROOT = _P(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

from app.core.errors import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION
from app.core.utils import read_jsonl, write_png
from app.main import main
from app.services.nn.checkpoint import load_head, save_head
from app.services.nn.layers import ClassifierParams

SMALL = {
    "seed": 3,
    "synth": {"plates_per_class": 1, "blobs_per_plate": 10, "plate_height": 640, "plate_width": 640},
    "training": {"max_epochs": 2, "hidden": [16, 8], "epoch_multiplicity": 1, "lr": 1e-3},
    "grid": {"max_epochs": 1, "widths_first": [16], "widths_second": [8, 4],
             "dropout_rates": [0.5], "optimizers": ["adam"]},
    "finetune": {"max_epochs": 1},
    "pretrain": {"max_epochs": 1},
    "mc": {"passes": 10},
}


def _config(tmp_path, data=None) -> str:
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(data if data is not None else SMALL))
    return str(path)


def _run(tmp_path, *argv, config=None):
    return main([*argv, "--config", config or _config(tmp_path), "--out", str(tmp_path / "run")])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> extract -> split -> train on a tiny benchmark, shared by the tests below."""
    tmp = tmp_path_factory.mktemp("pipeline")
    for command in ("synth", "extract", "split", "train"):
        assert _run(tmp, command) == EXIT_OK, command
    return tmp


def test_pipeline_artifacts(pipeline):
    out = pipeline / "run"
    assert len(list((out / "plates").glob("*/*.png"))) == 4
    detections = read_jsonl(out / "data" / "detections.jsonl")
    assert len(detections) == 40
    assert {d["label"] for d in detections} == {"planktic", "calcareous_benthic", "agglutinated_benthic", "sediment"}

    manifest = json.loads((out / "manifest.json").read_text())
    splits = pd.Series([r["split"] for r in manifest["records"]]).value_counts().to_dict()
    assert splits == {"train": 32, "val": 4, "test": 4}
    assert not _P(manifest["records"][0]["path"]).is_absolute()

    report = json.loads((out / "train_report.json").read_text())
    assert report["feature_dim"] == 1568
    assert report["backbone"].startswith("builtin_small:")
    assert len(report["val_accuracy"]) <= 2
    head, meta = load_head(out / "head.npz")
    assert head.dims == [1568, 16, 8, 4]
    assert meta["backbone"] == report["backbone"]


def test_evaluate_and_mc_dropout(pipeline, capsys):
    out = pipeline / "run"
    assert _run(pipeline, "evaluate") == EXIT_OK
    summary = json.loads((out / "evaluation.json").read_text())
    assert summary["n"] == 4 and summary["split"] == "test"
    confusion = pd.read_csv(out / "confusion.csv")
    assert int(confusion.drop(columns="true").to_numpy().sum()) == 4

    assert _run(pipeline, "mc-dropout", "--split", "val") == EXIT_OK
    frame = pd.read_csv(out / "mc_report.csv")
    assert len(frame) == 4
    votes = frame[[c for c in frame.columns if c.startswith("votes_")]]
    assert (votes.sum(axis=1) == 10).all()
    stats = json.loads((out / "mc_summary.json").read_text())
    assert stats["n_passes"] == 10 and stats["split"] == "val"
    assert sum(stats["flags"].values()) == 4
    assert len(json.loads((out / "mc_report.json").read_text())) == 4
    assert pd.read_csv(out / "mc_histograms.csv").shape == (4, 21)
    assert "mc-dropout:" in capsys.readouterr().out


def test_grid_search_and_finetune(pipeline):
    out = pipeline / "run"
    assert _run(pipeline, "grid-search") == EXIT_OK
    grid = pd.read_csv(out / "grid_search.csv")
    assert len(grid) == 2
    assert list(grid["rank"]) == [1, 2]

    assert _run(pipeline, "finetune") == EXIT_OK
    assert (out / "backbone_finetuned.npz").is_file()
    report = json.loads((out / "finetune_report.json").read_text())
    assert report["config"]["trainable_blocks"] == [4, 5]
    assert _run(pipeline, "evaluate", "--finetuned", "--split", "val") == EXIT_OK


def _digests(root: _P) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_rerun_with_same_config_is_byte_identical(tmp_path):
    config = _config(tmp_path)
    commands = ("synth", "extract", "split", "train", "evaluate", "mc-dropout")
    for command in commands:
        assert _run(tmp_path, command, config=config) == EXIT_OK, command
    first = _digests(tmp_path / "run")
    for command in commands:
        assert _run(tmp_path, command, config=config) == EXIT_OK, command
    second = _digests(tmp_path / "run")
    assert first.keys() == second.keys()
    assert [name for name in first if first[name] != second[name]] == []


def test_checkpoint_with_other_class_names_is_rejected(pipeline, tmp_path, caplog):
    out = pipeline / "run"
    head, meta = load_head(out / "head.npz")
    renamed = ClassifierParams(head.layers, head.dropout_rate, head.rng_seed, ["a", "b", "c", "d"])
    backup = (out / "head.npz").read_bytes()
    try:
        save_head(out / "head.npz", renamed)
        with caplog.at_level(logging.ERROR):
            assert _run(pipeline, "evaluate") == EXIT_VALIDATION
        assert "ClassMismatchError" in caplog.text
    finally:
        (out / "head.npz").write_bytes(backup)


def test_missing_artifacts_exit_with_validation_error(tmp_path, caplog):
    with caplog.at_level(logging.ERROR):
        assert _run(tmp_path, "train") == EXIT_VALIDATION
    assert "manifest" in caplog.text
    assert _run(tmp_path, "extract") == EXIT_VALIDATION


def test_extract_skips_unreadable_plates(tmp_path):
    plates = tmp_path / "run" / "plates"
    plates.mkdir(parents=True)
    (plates / "broken.png").write_bytes(b"not a png")
    assert _run(tmp_path, "extract") == EXIT_RUNTIME

    from app.services.dataset.synthetic import PlateSpec, generate_synthetic

    plate, _ = generate_synthetic(PlateSpec(plate_id="good", height=500, width=500, areas=[1800, 2400, 3000]), 0)
    write_png(plates / "good.png", plate.pixels)
    assert _run(tmp_path, "extract") == EXIT_OK
    data = tmp_path / "run" / "data"
    assert sorted(p.name for p in data.glob("*.png")) == ["good_0.png", "good_1.png", "good_2.png"]
    assert len(read_jsonl(data / "detections.jsonl")) == 3


def test_extract_on_empty_directory(tmp_path, caplog):
    (tmp_path / "run" / "plates").mkdir(parents=True)
    with caplog.at_level(logging.WARNING):
        assert _run(tmp_path, "extract") == EXIT_OK
    assert "No PNG plates" in caplog.text
    assert read_jsonl(tmp_path / "run" / "data" / "detections.jsonl") == []


def test_print_config_round_trips(tmp_path, capsys):
    assert main(["--print-config", "--seed", "11"]) == EXIT_OK
    printed = yaml.safe_load(capsys.readouterr().out)
    assert printed["seed"] == 11
    assert printed["training"]["batch_size"] == 32


def test_usage_and_config_errors(tmp_path, caplog):
    assert main([]) == EXIT_VALIDATION
    assert main(["no-such-command"]) == EXIT_VALIDATION
    assert main(["evaluate", "--split", "holdout"]) == EXIT_VALIDATION
    bad = _config(tmp_path, {"training": {"batch": 16}})
    with caplog.at_level(logging.ERROR):
        assert _run(tmp_path, "train", config=bad) == EXIT_VALIDATION
    assert "training.batch" in caplog.text


@pytest.mark.skipif(not os.environ.get("FORAM_SLOW"), reason="set FORAM_SLOW=1 for the full synthetic benchmark")
def test_default_benchmark_accuracy(tmp_path):
    for command in ("synth", "extract", "split", "train"):
        assert main([command, "--out", str(tmp_path), "--seed", "0"]) == EXIT_OK
    report = json.loads((tmp_path / "train_report.json").read_text())
    assert report["test_accuracy"] >= 0.95
    assert np.isfinite(report["train_loss"]).all()
