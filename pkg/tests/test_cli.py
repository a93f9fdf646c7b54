import csv
import json

import pytest

from covertnet.cli import main

pytestmark = pytest.mark.filterwarnings("ignore")


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = {"dataset": {"num_graphs": 20}, "train": {"epochs": 20},
           "federated": {"workers": 2, "shard_size": 5, "rounds": 2, "local_epochs_per_round": 1}}
    (d / "cfg.json").write_text(json.dumps(cfg))
    c = str(d / "cfg.json")
    assert main(["gen", "--config", c, "--out", str(d / "raw.jsonl")]) == 0
    assert main(["label", "--config", c, "--dataset", str(d / "raw.jsonl"), "--out", str(d / "ds.jsonl")]) == 0
    assert main(["split", "--config", c, "--dataset", str(d / "ds.jsonl"), "--out", str(d / "split.json")]) == 0
    return d, c


def common(d):
    return ["--dataset", str(d / "ds.jsonl"), "--split", str(d / "split.json")]


def test_pipeline(work, capsys):
    d, c = work
    assert main(["train", "--config", c, *common(d), "--model", "gcn2", "--out", str(d / "g.json"),
                 "--curve", str(d / "curve.csv")]) == 0
    assert main(["train-fed", "--config", c, *common(d), "--out", str(d / "f.json"),
                 "--partition", str(d / "part.json"), "--history", str(d / "h.jsonl")]) == 0
    assert len((d / "h.jsonl").read_text().splitlines()) == 2
    for name in ("g", "f"):
        assert main(["eval", "--config", c, *common(d), "--checkpoint", str(d / f"{name}.json"),
                     "--out", str(d / f"r_{name}.json"), "--per-sample", str(d / f"ps_{name}.csv")]) == 0
    assert main(["compare", str(d / "r_g.json"), str(d / "r_f.json"), "--out", str(d / "cmp.csv")]) == 0
    rows = list(csv.DictReader((d / "cmp.csv").open()))
    assert {r["model_name"] for r in rows} == {"gcn2", "hybrid"}
    assert main(["sweep", "--config", c, *common(d), "--checkpoint", str(d / "g.json"),
                 "--levels", "0", "0.5", "--out", "-"]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "rho,test_mae,test_medae,achieved_sparsity"
    assert main(["prune", "--config", c, *common(d), "--checkpoint", str(d / "g.json"), "--sparsity", "0.3",
                 "--threshold", "100", "--out", str(d / "p.json"), "--report", str(d / "pr.json")]) == 0
    assert json.loads((d / "pr.json").read_text())["accepted"] is True


def test_same_seed_same_bytes(work):
    d, c = work
    for out in ("x.json", "y.json"):
        assert main(["train", "--config", c, *common(d), "--out", str(d / out)]) == 0
    assert (d / "x.json").read_bytes() == (d / "y.json").read_bytes()


def test_run_command(work, tmp_path, capsys):
    _, c = work
    assert main(["run", "--config", c, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "baseline-seed0" / "report_test.json").exists()
    assert main(["run", "--config", c, "--seed", "2", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "baseline-seed2").is_dir()


@pytest.mark.parametrize(
    "argv",
    [
        ["gen", "--config", "/nonexistent.json", "--out", "x"],
        ["label", "--dataset", "/nonexistent.jsonl", "--out", "x"],
    ],
)
def test_invalid_input_exit_1(argv, capsys):
    assert main(argv) == 1
    assert "error" in capsys.readouterr().err


def test_bad_config_exit_1(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"nodes": 5}')
    assert main(["gen", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
    p.write_text("{not json")
    assert main(["gen", "--config", str(p), "--out", str(tmp_path / "o")]) == 1


def test_help_lists_fields(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "federated.local_epochs_per_round" in out and "--checkpoint" not in out
