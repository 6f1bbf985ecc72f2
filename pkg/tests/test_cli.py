import json
import subprocess
import sys

import numpy as np
import pytest

from survseq.cli import main
from survseq.decoder import read_pdf

TINY = """
[synthetic]
n_samples = 80
n_covariates = 4
seed = 5
[data]
bin_width = 20
[model]
hidden_dim = 6
[train]
max_epochs = 2
folds = 2
[run]
seed = 3
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.cfg").write_text(TINY)
    assert main(["generate", "--config", str(root / "tiny.cfg"), "--out-dir", str(root / "data")]) == 0
    data = ["--observations", str(root / "data" / "observations.csv"), "--labels", str(root / "data" / "labels.csv")]
    assert main(["train", "--config", str(root / "tiny.cfg"), "--out-dir", str(root / "model"), *data]) == 0
    return root, data


def test_generate_writes_dataset_and_manifest(workspace):
    root, _ = workspace
    manifest = json.loads((root / "data" / "manifest.json").read_text())
    assert manifest["n_subjects"] == 80 and manifest["seed"] == 5
    assert manifest["config"]["n_covariates"] == 4
    assert (root / "data" / "labels.csv").read_text().count("\n") == 81


def test_train_outputs(workspace):
    root, _ = workspace
    for name in ("model.ckpt", "history.json", "manifest.json", "run.cfg"):
        assert (root / "model" / name).exists()
    hist = json.loads((root / "model" / "history.json").read_text())
    assert len(hist["epochs"]) == 2


def test_predict_and_export_plots(workspace, capsys):
    root, data = workspace
    ck = ["--checkpoint", str(root / "model" / "model.ckpt")]
    assert main(["predict", "--config", str(root / "tiny.cfg"), "--out-dir", str(root / "pred"), *data, *ck]) == 0
    rows = (root / "pred" / "predictions.csv").read_text().splitlines()
    assert len(rows) == 1 + 80 * 2
    pdf_files = sorted((root / "pred" / "pdfs").glob("*.csv"))
    assert len(pdf_files) == 80
    pdf, meta = read_pdf(pdf_files[0])
    assert pdf.sum() == pytest.approx(1.0, abs=1e-5) and float(meta["bin_width"]) == 20.0

    sid = pdf_files[0].stem
    args = ["export-plots", "--config", str(root / "tiny.cfg"), "--out-dir", str(root / "plots"), *data, *ck]
    assert main([*args, "--sample", sid]) == 0
    lines = (root / "plots" / f"curves_{sid}.csv").read_text().splitlines()
    assert lines[3] == "event,bin,time,pdf,cdf"
    cdf = np.array([float(r.split(",")[4]) for r in lines[4:]])
    assert np.all(np.diff(cdf[: len(cdf) // 2]) >= 0)

    capsys.readouterr()
    assert main([*args, "--sample", "nobody"]) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: kind=KeyError message=unknown subject ids: nobody")
    assert "\n" not in err


def test_evaluate_and_cv(workspace):
    root, data = workspace
    ck = ["--checkpoint", str(root / "model" / "model.ckpt")]
    assert main(["evaluate", "--config", str(root / "tiny.cfg"), "--out-dir", str(root / "eval"), *data, *ck]) == 0
    assert (root / "eval" / "evaluation.json").exists()
    assert main(["cv", "--config", str(root / "tiny.cfg"), "--out-dir", str(root / "cv"), *data]) == 0
    report = json.loads((root / "cv" / "report.json").read_text())
    assert report["n_folds"] == 2 and len(report["rows"]) == 8
    folds = json.loads((root / "cv" / "folds.json").read_text())
    assert sum(len(v) for v in folds.values()) == 80
    assert (root / "cv" / "fold0.ckpt").exists() and (root / "cv" / "fold1.ckpt").exists()


def test_config_command_prints_documented_defaults(capsys):
    assert main(["config"]) == 0
    out = capsys.readouterr().out
    assert "[train]" in out and "# cross-validation folds" in out


def test_error_lines_and_exit_codes(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("[model]\nhiden = 3\n")
    assert main(["train", "--config", str(tmp_path / "bad.cfg")]) == 1
    assert capsys.readouterr().err.startswith("error: kind=ConfigError message=")
    assert main(["predict", "--checkpoint", str(tmp_path / "none.ckpt")]) == 1
    assert capsys.readouterr().err.startswith("error: kind=CheckpointError message=cannot read checkpoint")
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "survseq.cli", "train", "--config", str(tmp_path / "missing.cfg")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 1
    assert proc.stderr.strip().startswith("error: kind=ConfigError")
