import json

import numpy as np
import pytest

from gazekit.cli import main
from gazekit.dataio import load_manifest, load_model


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    code = main(
        [
            "synth",
            "--subjects", "2",
            "--frames-per-region", "120",
            "--seed", "7",
            "--alphas", "0.2,0.8",
            "--out", str(out),
        ]
    )
    assert code == 0
    return out


def test_synth_requires_out(capsys):
    assert main(["synth", "--subjects", "2"]) == 2
    capsys.readouterr()


def test_synth_manifest_and_determinism(dataset, tmp_path, capsys):
    manifest = load_manifest(dataset)
    assert manifest["total_frames"] == 2 * 6 * 120
    again = tmp_path / "again"
    assert (
        main(
            [
                "synth",
                "--subjects", "2",
                "--frames-per-region", "120",
                "--seed", "7",
                "--alphas", "0.2,0.8",
                "--out", str(again),
            ]
        )
        == 0
    )
    capsys.readouterr()
    assert load_manifest(again)["frames_sha256"] == manifest["frames_sha256"]


def test_synth_rejects_small_populations(tmp_path, capsys):
    code = main(
        ["synth", "--subjects", "1", "--frames-per-region", "10", "--out", str(tmp_path / "x")]
    )
    assert code == 2
    capsys.readouterr()


def _train(dataset, tmp_path, mode, capsys, extra=()):
    model_path = tmp_path / f"model_{mode}.gzkf"
    code = main(
        [
            "train",
            "--data", str(dataset),
            "--out", str(model_path),
            "--mode", mode,
            "--trees", "12",
            "--depth", "8",
            "--seed", "5",
            *extra,
        ]
    )
    out = capsys.readouterr().out
    return code, model_path, out


def test_train_both_modes(dataset, tmp_path, capsys):
    code, path, out = _train(dataset, tmp_path, "head-eye", capsys)
    assert code == 0
    summary = json.loads(out)
    assert summary["feature_dim"] == 138
    assert load_model(path).feature_dim == 138

    code, path, _ = _train(dataset, tmp_path, "head-only", capsys)
    assert code == 0
    assert load_model(path).feature_dim == 136


def test_train_insufficient_data(dataset, tmp_path, capsys):
    code = main(
        [
            "train",
            "--data", str(dataset),
            "--out", str(tmp_path / "m.gzkf"),
            "--min-frames", "500",
        ]
    )
    assert code == 3
    err = capsys.readouterr().err
    assert "s00" in err and "road" in err


def test_classify_stream(dataset, tmp_path, capsys):
    code, model_path, _ = _train(dataset, tmp_path, "head-eye", capsys)
    assert code == 0
    decisions = tmp_path / "decisions.jsonl"
    code = main(
        [
            "classify",
            "--model", str(model_path),
            "--data", str(dataset),
            "--out", str(decisions),
            "--confidence-threshold", "1",
        ]
    )
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    lines = [json.loads(l) for l in decisions.read_text().splitlines()]
    assert len(lines) == 2 * 6 * 120  # one output record per input frame
    accepted = [l for l in lines if l["status"] == "accepted"]
    assert summary["confident_decisions"] == len(accepted)
    assert summary["pupils_detected"] >= len(accepted)
    statuses = {l["status"] for l in lines}
    assert statuses <= {"accepted", "low_confidence", "pupil_failed", "no_face"}
    for line in accepted:
        assert line["region"] in {
            "road", "center_stack", "instrument_cluster", "rearview_mirror", "left", "right"
        }
        assert line["confidence"] is None or line["confidence"] > 1.0


def test_classify_handles_corrupt_lines_and_infinite_threshold(dataset, tmp_path, capsys):
    code, model_path, _ = _train(dataset, tmp_path, "head-eye", capsys)
    jsonl = dataset / "frames.jsonl"
    corrupt = tmp_path / "corrupt"
    corrupt.mkdir()
    lines = jsonl.read_text().splitlines()[:20]
    lines[4] = "{ broken"
    (corrupt / "frames.jsonl").write_text("\n".join(lines) + "\n")
    (corrupt / "crops").symlink_to(dataset / "crops")

    decisions = tmp_path / "d.jsonl"
    code = main(
        [
            "classify",
            "--model", str(model_path),
            "--data", str(corrupt),
            "--out", str(decisions),
            "--confidence-threshold", "inf",
        ]
    )
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    out_lines = [json.loads(l) for l in decisions.read_text().splitlines()]
    assert len(out_lines) == 20
    assert out_lines[4]["status"] == "no_face"
    assert summary["confident_decisions"] == 0  # nothing exceeds +inf
    assert all(l["status"] != "accepted" for l in out_lines)


def _evaluate(dataset, out_dir, extra=()):
    return main(
        [
            "evaluate",
            "--data", str(dataset),
            "--out", str(out_dir),
            "--trees", "10",
            "--depth", "7",
            "--repetitions", "2",
            "--seed", "3",
            "--confidence-threshold", "2",
            *extra,
        ]
    )


def test_evaluate_reports(dataset, tmp_path, capsys):
    out_dir = tmp_path / "reports"
    assert _evaluate(dataset, out_dir) == 0
    capsys.readouterr()
    assert json.loads((out_dir / "status.json").read_text())["complete"] is True
    ledger = json.loads((out_dir / "ledger.json").read_text())
    assert (
        ledger["total_frames"]
        >= ledger["faces_detected"]
        >= ledger["pupils_detected"]
        >= ledger["confident_decisions"]
    )
    deltas = (out_dir / "region_deltas.csv").read_text().splitlines()
    assert len(deltas) == 7  # header + six regions
    per_user = (out_dir / "per_user.csv").read_text().splitlines()
    assert len(per_user) == 3
    config = json.loads((out_dir / "resolved_config.json").read_text())
    assert config["seed"] == 3 and config["command"] == "evaluate"
    summary = json.loads((out_dir / "summary.json").read_text())
    assert set(summary["modes"]) == {"head-only", "head-eye"}


def test_evaluate_threshold_one_accepts_nearly_everything(dataset, tmp_path, capsys):
    out_dir = tmp_path / "t1"
    assert (
        main(
            [
                "evaluate",
                "--data", str(dataset),
                "--out", str(out_dir),
                "--mode", "head-eye",
                "--trees", "10",
                "--depth", "7",
                "--repetitions", "1",
                "--seed", "3",
                "--confidence-threshold", "1",
            ]
        )
        == 0
    )
    capsys.readouterr()
    ledger = json.loads((out_dir / "ledger.json").read_text())
    # strict > 1 rejects only exact top-two probability ties
    assert ledger["confident_decisions"] <= ledger["pupils_detected"]
    assert ledger["confident_decisions"] >= 0.95 * ledger["pupils_detected"]


def test_evaluate_single_mode_and_plots(dataset, tmp_path, capsys):
    out_dir = tmp_path / "single"
    assert _evaluate(dataset, out_dir, extra=("--mode", "head-eye")) == 0
    capsys.readouterr()
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["modes"] == ["head-eye"]
    assert not (out_dir / "region_deltas.csv").exists()

    plot_dir = tmp_path / "plots"
    assert _evaluate(dataset, plot_dir, extra=("--plots",)) == 0
    capsys.readouterr()
    assert (plot_dir / "plots" / "region_deltas.svg").exists()
    assert (plot_dir / "plots" / "owlness_vs_delta.svg").exists()


def test_config_file_merging(dataset, tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"trees": 6, "depth": 5, "repetitions": 1, "seed": 2,
                                  "confidence_threshold": 2.0}))
    out_dir = tmp_path / "cfg_reports"
    code = main(
        [
            "evaluate",
            "--data", str(dataset),
            "--out", str(out_dir),
            "--config", str(config),
            "--trees", "8",  # flag overrides file
        ]
    )
    assert code == 0
    capsys.readouterr()
    resolved = json.loads((out_dir / "resolved_config.json").read_text())
    assert resolved["trees"] == 8
    assert resolved["depth"] == 5
    assert resolved["repetitions"] == 1


def test_config_file_unknown_key(dataset, tmp_path, capsys):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"tress": 6}))
    code = main(
        ["evaluate", "--data", str(dataset), "--out", str(tmp_path / "r"), "--config", str(config)]
    )
    assert code == 2
    assert "tress" in capsys.readouterr().err


def test_unreadable_dataset_is_a_data_error(tmp_path, capsys):
    code = main(
        ["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "m.gzkf")]
    )
    assert code == 3
    capsys.readouterr()
