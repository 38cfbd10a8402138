import json
from pathlib import Path

import pytest

from dmrcil.cli import main

ROOT = Path(__file__).resolve().parents[1]
QUICKSTART = ROOT / "configs" / "quickstart.json"

SMALL = {
    "data": {"source": "synth", "synth_spec": {"num_classes": 6, "dim": 4, "samples_per_class": 40}},
    "stream": {"base": 2, "increment": 2, "seed": 1},
    "train": {"epochs": 2},
}


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_quickstart_structure(tmp_path):
    assert main(["--quiet", "run", "--config", str(QUICKSTART), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert [s["n_classes"] for s in doc["stages"]] == [4, 8, 12]
    assert doc["config"] == json.loads(QUICKSTART.read_text())
    for name in ("stages.csv", "memory.bank", "classifier.ckpt"):
        assert (tmp_path / name).exists()


def test_schema_error_exit_2(tmp_path, capsys):
    bad = dict(SMALL, train={"epochs": "ten"})
    assert main(["run", "--config", _write(tmp_path, bad)]) == 2
    assert "train.epochs" in capsys.readouterr().err
    bad = dict(SMALL, memory={"fidelity": "exact"})
    assert main(["run", "--config", _write(tmp_path, bad)]) == 2
    assert "memory.fidelity" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path, capsys):
    bad = dict(SMALL, train={"epochz": 3})
    assert main(["run", "--config", _write(tmp_path, bad)]) == 2
    assert "train.epochz" in capsys.readouterr().err


def test_numeric_failure_exit_3(tmp_path, monkeypatch, capsys):
    import dmrcil.experiment as experiment

    def boom(*args, **kwargs):
        raise ArithmeticError("covariance is not positive definite")

    monkeypatch.setattr(experiment, "train_stage", boom)
    assert main(["run", "--config", _write(tmp_path, SMALL), "--out", str(tmp_path / "o")]) == 3
    assert "stage 0" in capsys.readouterr().err


def test_seed_override_and_compare(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    assert main(["--quiet", "run", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["--quiet", "run", "--config", cfg, "--out", str(tmp_path / "b"), "--seed-override", "5"]) == 0
    b = json.loads((tmp_path / "b" / "report.json").read_text())
    assert b["seeds"] == {"stream": 5, "train": 5}
    capsys.readouterr()
    a_path = str(tmp_path / "a" / "report.json")
    assert main(["compare", a_path, a_path]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert rows[0].startswith("report,fidelity,avg_accuracy")
    assert rows[1].split(",")[1:] == rows[2].split(",")[1:]


def test_compare_usage_and_shape_errors(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    main(["--quiet", "run", "--config", cfg, "--out", str(tmp_path / "a")])
    other = dict(SMALL, stream={"base": 4, "increment": 2, "seed": 1})
    main(["--quiet", "run", "--config", _write(tmp_path, other, "o.json"), "--out", str(tmp_path / "b")])
    a, b = str(tmp_path / "a" / "report.json"), str(tmp_path / "b" / "report.json")
    assert main(["compare", a]) == 2
    assert main(["compare", a, b]) == 1
    assert "stream shape" in capsys.readouterr().err


def test_inspect_memory(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    main(["--quiet", "run", "--config", cfg, "--out", str(tmp_path)])
    capsys.readouterr()
    assert main(["inspect-memory", str(tmp_path / "memory.bank")]) == 0
    out = capsys.readouterr().out
    assert "6 classes" in out
    assert sum(1 for line in out.splitlines() if line.strip().split()[:1] and line.split()[0].isdigit()) == 6


def test_inspect_empty_and_corrupt_bank(tmp_path, capsys):
    from dmrcil.memory import MemoryBank, bank_to_bytes

    empty = tmp_path / "empty.bank"
    empty.write_bytes(bank_to_bytes(MemoryBank(8)))
    assert main(["inspect-memory", str(empty)]) == 0
    assert "0 classes" in capsys.readouterr().out
    bad = tmp_path / "bad.bank"
    bad.write_bytes(b"DMRB\x01\x00")
    assert main(["inspect-memory", str(bad)]) == 1
    assert "offset" in capsys.readouterr().err


def test_sweep_writes_one_report_per_value(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    code = main(["--quiet", "sweep", "--config", cfg, "--out", str(tmp_path / "s"),
                 "--grid", "memory.fidelity=prior,dmr-lite,dmr"])
    assert code == 0
    reports = sorted((tmp_path / "s").glob("*/report.json"))
    assert len(reports) == 3
    table = capsys.readouterr().out.strip().splitlines()
    assert len(table) == 4
    assert {row.split(",")[1] for row in table[1:]} == {"prior", "dmr-lite", "dmr"}


def test_sweep_bad_grid_is_usage_error(tmp_path):
    assert main(["sweep", "--config", _write(tmp_path, SMALL), "--grid", "nonsense"]) == 2
