import json

import pytest

from tsda.cli import main
from tsda.data import DomainStyle, ShiftSpec

SPEC = ShiftSpec(num_classes=3, channels=2, length=32, samples_per_class=10,
                 target=DomainStyle(frequency_scale=1.1))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(SPEC.to_dict()))
    assert main(["synth", "--spec", str(root / "spec.json"), "--out", str(root / "syn"), "--seed", "3"]) == 0
    (root / "run.ini").write_text(
        "[data]\nmanifest = syn/manifest.json\n"
        "[backbone]\nkind = cnn1d\nwidth = 4\nfeature_dim = 8\n"
        "[train]\nepochs = 2\nbatch_size = 16\nbetas = 0.5, 0.99\n"
        "[hparams]\nlearning_rate = 0.001\nmmd_weight = 1.0\n"
    )
    return root


def test_prepare(dataset, capsys):
    assert main(["prepare", "--manifest", str(dataset / "syn" / "manifest.json")]) == 0
    out = capsys.readouterr().out
    assert "2 domains" in out and "C=2" in out


def test_train_twice_is_bit_identical(dataset):
    outs = []
    for name in ("a", "b"):
        code = main(["train", "--alg", "ddc", "--scenario", "source:target", "--config", str(dataset / "run.ini"),
                     "--seed", "7", "--out", str(dataset / name)])
        assert code == 0
        outs.append(dataset / name)
    a, b = outs
    assert (a / "checkpoint.tsda").read_bytes() == (b / "checkpoint.tsda").read_bytes()
    assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()
    metrics = json.loads((a / "metrics.json").read_text())
    assert 0.0 <= metrics["macro_f1"] <= 1.0
    assert len((a / "train_log.jsonl").read_text().splitlines()) == 2


def test_sweep_and_report(dataset):
    plan = {
        "algorithm": "ddc", "scenarios": ["source:target"],
        "dataset": {"manifest": str(dataset / "syn" / "manifest.json")},
        "n_combos": 2, "seeds": [1], "backbone": {"kind": "cnn1d", "width": 4, "feature_dim": 8},
        "train": {"epochs": 1}, "risks": ["SRC", "TGT"],
    }
    sweep_dir = dataset / "sweeps" / "ddc"
    sweep_dir.mkdir(parents=True)
    (sweep_dir / "plan.json").write_text(json.dumps(plan))
    assert main(["sweep", "--plan", str(sweep_dir / "plan.json")]) == 0
    assert (sweep_dir / "summary.json").exists()
    assert main(["sweep", "--plan", str(sweep_dir / "plan.json"), "--resume"]) == 0
    assert len((sweep_dir / "trials.jsonl").read_text().splitlines()) == 2
    assert main(["report", "--in", str(dataset / "sweeps"), "--out", str(dataset / "report")]) == 0
    md = (dataset / "report" / "report.md").read_text()
    assert "ddc" in md and "INCONSISTENT" in md


def test_validation_errors_exit_2(dataset, tmp_path, capsys):
    assert main(["prepare", "--manifest", str(tmp_path / "missing.json")]) == 2
    assert main(["train", "--alg", "nope", "--scenario", "source:target", "--config",
                 str(dataset / "run.ini")]) == 2
    assert main(["train", "--alg", "ddc", "--scenario", "source-target", "--config",
                 str(dataset / "run.ini")]) == 2
    (tmp_path / "bad.ini").write_text(
        f"[hparams]\nlearning_rate = 5.0\n[data]\nmanifest = {dataset / 'syn' / 'manifest.json'}\n")
    assert main(["train", "--alg", "ddc", "--scenario", "source:target", "--config", str(tmp_path / "bad.ini")]) == 2
    assert "outside" in capsys.readouterr().err
    (tmp_path / "plan.json").write_text("{}")
    assert main(["sweep", "--plan", str(tmp_path / "plan.json")]) == 2
    assert "error:" in capsys.readouterr().err


def test_failed_trial_exit_3(dataset, tmp_path):
    plan = {
        "algorithm": "ddc", "scenarios": ["source:target"],
        "dataset": {"manifest": str(dataset / "syn" / "manifest.json")},
        "n_combos": 1, "seeds": [1], "backbone": {"width": 4, "feature_dim": 8},
        "train": {"epochs": 1}, "risks": ["SRC"], "fixed_hparams": {"mmd_weight": float("inf")},
    }
    (tmp_path / "plan.json").write_text(json.dumps(plan))
    assert main(["sweep", "--plan", str(tmp_path / "plan.json")]) == 3
    row = json.loads((tmp_path / "trials.jsonl").read_text())
    assert row["status"] == "failed"
