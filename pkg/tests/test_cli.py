import hashlib
import json

import numpy as np
import pandas as pd
import pytest

from main import run
from schemas.models import ANNULUS_COLUMNS, FAILURE_COLUMNS, SWEEP_COLUMNS
from services.dataset_service import DatasetService, write_idx, write_idx_labels

TRAIN_FLAGS = ["--data", "synthetic", "--limit", "400", "--epochs", "10", "--learning-rate", "0.1", "--hidden", "16"]


def _digest(path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Trained biased and bias-free models, a density model and a small IDX test set."""
    root = tmp_path_factory.mktemp("cli")
    assert run(["train", *TRAIN_FLAGS, "--out", str(root / "model.json")]) == 0
    assert run(["fit-density", "--model", str(root / "model.json"), "--data", "synthetic",
                "--limit", "200", "--out", str(root / "density.json")]) == 0
    assert run(["train", *TRAIN_FLAGS, "--no-bias", "--out", str(root / "flat.json")]) == 0
    assert run(["fit-density", "--model", str(root / "flat.json"), "--data", "synthetic",
                "--limit", "200", "--out", str(root / "flat_density.json")]) == 0

    samples = DatasetService().resolve("synthetic", "test", limit=20)
    write_idx(np.stack([s.pixels for s in samples]), 28, 28, root / "images.idx")
    write_idx_labels([s.label for s in samples], root / "labels.idx")
    return root


def _experiment(root, out_dir, **extra):
    config = {
        "model_path": "model.json",
        "density_path": "density.json",
        "dataset": "synthetic",
        "limit": 40,
        "distortions": [{"kind": "noise", "levels": [0, 0.5]}, {"kind": "jpeg", "levels": [50, 100]}],
        "out_dir": out_dir,
        **extra,
    }
    path = root / f"{out_dir}.json"
    path.write_text(json.dumps(config))
    return path


# ── surface ────────────────────────────────────────────────────────────────

def test_version(capsys):
    assert run(["--version"]) == 0
    assert "1.0.0" in capsys.readouterr().out


def test_help_lists_every_subcommand(capsys):
    assert run(["--help"]) == 0
    out = capsys.readouterr().out
    for command in ("train", "fit-density", "score", "distort", "attack", "sweep", "failures", "annulus", "pathology"):
        assert command in out


@pytest.mark.parametrize("argv", [["teleport"], ["train"], ["score", "--model"], ["annulus", "--out", "a.csv", "--dims", "x"]])
def test_usage_errors_exit_1(argv, capsys):
    assert run(argv) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_missing_input_exits_2(tmp_path):
    assert run(["score", "--model", str(tmp_path / "nope.json"), "--density", str(tmp_path / "d.json"),
                "--input", str(tmp_path / "i.idx")]) == 2


def test_malformed_idx_exits_2(workspace, tmp_path):
    bad = tmp_path / "bad.idx"
    bad.write_bytes(b"\x00\x00\x08\x02" + bytes(12))
    assert run(["score", "--model", str(workspace / "model.json"), "--density", str(workspace / "density.json"),
                "--input", str(bad)]) == 2


# ── pipeline ───────────────────────────────────────────────────────────────

def test_train_is_reproducible(workspace, tmp_path):
    assert run(["train", *TRAIN_FLAGS, "--out", str(tmp_path / "again.json")]) == 0
    assert (tmp_path / "again.json").read_bytes() == (workspace / "model.json").read_bytes()


def test_score_prints_report(workspace, capsys):
    before = _digest(workspace / "images.idx")
    code = run(["score", "--model", str(workspace / "model.json"), "--density", str(workspace / "density.json"),
                "--input", str(workspace / "images.idx"), "--index", "3"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) == {"label", "softmax_conf", "posterior", "log_densities"}
    assert sum(report["posterior"]) == pytest.approx(1.0, abs=1e-9)
    assert len(report["posterior"]) == 10
    assert _digest(workspace / "images.idx") == before


def test_score_index_out_of_range(workspace):
    assert run(["score", "--model", str(workspace / "model.json"), "--density", str(workspace / "density.json"),
                "--input", str(workspace / "images.idx"), "--index", "99"]) == 2


def test_distort_writes_idx_and_pgm(workspace, tmp_path):
    before = _digest(workspace / "images.idx")
    assert run(["distort", "--input", str(workspace / "images.idx"), "--distortion", "jpeg:30",
                "--out", str(tmp_path / "jpeg.idx")]) == 0
    assert (tmp_path / "jpeg.idx").stat().st_size == (workspace / "images.idx").stat().st_size
    assert run(["distort", "--input", str(workspace / "images.idx"), "--distortion", "noise:0.3",
                "--index", "0", "--out", str(tmp_path / "one.pgm")]) == 0
    assert (tmp_path / "one.pgm").read_bytes().startswith(b"P5")
    assert _digest(workspace / "images.idx") == before


@pytest.mark.parametrize(
    "extra",
    [["--out", "{input}"], ["--out", "{tmp}/x.png"], ["--out", "{tmp}/x.pgm"]],
)
def test_distort_usage_errors(workspace, tmp_path, extra):
    out = extra[1].format(input=workspace / "images.idx", tmp=tmp_path)
    assert run(["distort", "--input", str(workspace / "images.idx"), "--distortion", "blur:1", "--out", out]) == 1


def test_attack_deepfool_to_stdout(workspace, capsys):
    code = run(["attack", "--model", str(workspace / "model.json"), "--input", str(workspace / "images.idx"),
                "--index", "1", "--attack", "deepfool"])
    assert code == 0
    document = json.loads(capsys.readouterr().out)
    assert document["attack"] == "deepfool:0.02:50"
    assert document["iterations"] >= 1
    assert len(document["perturbed"]) == 784
    assert min(document["perturbed"]) >= 0.0 and max(document["perturbed"]) <= 1.0


def test_attack_fgsm_writes_file(workspace, tmp_path):
    out = tmp_path / "adv.json"
    code = run(["attack", "--model", str(workspace / "model.json"), "--input", str(workspace / "images.idx"),
                "--labels", str(workspace / "labels.idx"), "--attack", "fgsm:0.1", "--out", str(out)])
    assert code == 0
    document = json.loads(out.read_text())
    assert document["true_label"] is not None
    assert document["iterations"] == 1


def test_attack_fgsm_needs_labels(workspace):
    assert run(["attack", "--model", str(workspace / "model.json"), "--input", str(workspace / "images.idx"),
                "--attack", "fgsm:0.1"]) == 1


def test_sweep_writes_tables_and_plots(workspace):
    config = _experiment(workspace, "run_a", annulus={"dims": [1, 10], "n_samples": 2000})
    assert run(["sweep", "--config", str(config)]) == 0
    out = workspace / "run_a"
    for stem in ("sweep_gaussian_noise", "sweep_jpeg"):
        table = pd.read_csv(out / f"{stem}.csv")
        assert tuple(table.columns) == SWEEP_COLUMNS
        assert table["norm_softmax"].iloc[0] == 1.0
        assert (out / f"{stem}.svg").read_text().lstrip().startswith("<?xml")
    assert pd.read_csv(out / "sweep_jpeg.csv")["level"].tolist() == [100.0, 50.0]
    assert tuple(pd.read_csv(out / "annulus.csv").columns) == ANNULUS_COLUMNS


def test_end_to_end_runs_are_byte_identical(tmp_path):
    outputs = []
    for name in ("first", "second"):
        root = tmp_path / name
        root.mkdir()
        assert run(["train", *TRAIN_FLAGS, "--out", str(root / "model.json")]) == 0
        assert run(["fit-density", "--model", str(root / "model.json"), "--limit", "200",
                    "--out", str(root / "density.json")]) == 0
        assert run(["sweep", "--config", str(_experiment(root, "out"))]) == 0
        outputs.append([
            (root / rel).read_bytes()
            for rel in ("model.json", "density.json", "out/sweep_gaussian_noise.csv", "out/sweep_jpeg.csv")
        ])
    assert outputs[0] == outputs[1]


def test_failures_writes_counts(workspace):
    config = _experiment(workspace, "run_b", attack="deepfool", distortions=[])
    assert run(["failures", "--config", str(config)]) == 0
    table = pd.read_csv(workspace / "run_b" / "failures.csv")
    assert tuple(table.columns) == FAILURE_COLUMNS
    assert 0 <= table["softmax_fails"].iloc[0] <= table["n_images"].iloc[0]


def test_failures_without_attack_is_usage_error(workspace):
    assert run(["failures", "--config", str(_experiment(workspace, "run_c"))]) == 1


def test_sweep_bad_config_is_usage_error(workspace):
    config = workspace / "bad.json"
    config.write_text(json.dumps({"model_path": "model.json", "density_path": "density.json", "out_dir": "x",
                                  "distortions": [{"kind": "noise"}]}))
    assert run(["sweep", "--config", str(config)]) == 1


# ── demos ──────────────────────────────────────────────────────────────────

def test_annulus_command(tmp_path):
    out = tmp_path / "annulus.csv"
    assert run(["annulus", "--dims", "1,10", "--samples", "1000", "--out", str(out)]) == 0
    table = pd.read_csv(out)
    assert table["d"].tolist() == [1, 10]
    assert tuple(table.columns) == ANNULUS_COLUMNS


def test_pathology_command(workspace, capsys):
    code = run(["pathology", "--model", str(workspace / "flat.json"), "--density", str(workspace / "flat_density.json"),
                "--input", str(workspace / "images.idx"), "--ks", "1.3,2"])
    assert code == 0
    rows = json.loads(capsys.readouterr().out)
    assert [row["k"] for row in rows] == [1.0, 1.3, 2.0]
    assert rows[2]["softmax_conf"] >= rows[1]["softmax_conf"] >= rows[0]["softmax_conf"]


def test_pathology_rejects_biased_model(workspace):
    assert run(["pathology", "--model", str(workspace / "model.json"), "--density", str(workspace / "density.json"),
                "--input", str(workspace / "images.idx")]) == 2
