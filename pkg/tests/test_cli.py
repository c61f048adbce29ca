import json
from pathlib import Path

import pandas as pd
import pytest
from typer.testing import CliRunner

from cli.cli_app import app
from cli.cli_config import apply_overrides, config_from_dict, config_hash, load_config
from cli.cli_ledger import RunLedger
from cli.cli_pipeline import Pipeline, parse_grid
from utils.errors import ArtifactError, ConfigError

runner = CliRunner()

TINY = """
output_dir = "{root}"

[pde]
name = "poisson"
resolution = 16

[model]
width = 4
modes1 = 3
modes2 = 3
layers = 1
dtype = "f64"

[generation]
n = 20
n_unlabeled = 8
n_ood = 3
n_pool = 6

[pretrain]
mask_ratio = 0.5
epochs = 1
batch_size = 4

[finetune]
budgets = [4]
seeds = [1]
init_modes = ["random", "pretrained"]
epochs = 2

[icl]
J = [0, 2]
k = 2
seeds = [1]
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY.format(root=(tmp_path / "runs").as_posix()), encoding="utf-8")
    return path


def test_grid_product():
    points = parse_grid(["mask=0,0.05,0.3,0.7,0.9", "blur=0:0,0:1,0:2,0:4"])
    assert len(points) == 20
    assert points[0] == {"pretrain.mask_ratio": 0.0, "pretrain.blur_min": 0.0, "pretrain.blur_max": 0.0}
    assert points[-1]["pretrain.mask_ratio"] == 0.9 and points[-1]["pretrain.blur_max"] == 4.0
    assert parse_grid(["order=blur_mask", "patch=2"]) == [{"pretrain.order": "blur_mask", "pretrain.mask_patch": 2}]
    with pytest.raises(ConfigError):
        parse_grid(["dropout=0.1"])
    with pytest.raises(ConfigError):
        parse_grid(["mask=high"])


def test_unknown_key_names_its_path():
    with pytest.raises(ConfigError, match="pretrain.mask_rate"):
        config_from_dict({"pretrain": {"mask_rate": 0.5}})
    with pytest.raises(ConfigError, match="finetune.epochs"):
        config_from_dict({"finetune": {"epochs": "many"}})
    with pytest.raises(ConfigError):
        config_from_dict({"pde": {"name": "heat"}})
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.toml")


def test_hash_ignores_key_order_and_unread_blocks():
    a = config_from_dict({"pde": {"name": "poisson", "resolution": 32}, "pretrain": {"epochs": 3, "mask_ratio": 0.7}})
    b = config_from_dict({"pretrain": {"mask_ratio": 0.7, "epochs": 3}, "pde": {"resolution": 32, "name": "poisson"}})
    assert config_hash(a, "pretrain") == config_hash(b, "pretrain")
    c = apply_overrides(a, {"icl.k": 9})
    assert config_hash(a, "generate", blocks=("pde",)) == config_hash(c, "generate", blocks=("pde",))
    assert config_hash(a, "icl", blocks=("icl",)) != config_hash(c, "icl", blocks=("icl",))
    with pytest.raises(ConfigError):
        apply_overrides(a, {"icl.top_k": 1})


def test_reference_document_loads():
    config = load_config(Path(__file__).resolve().parents[1] / "config" / "poisson.toml")
    assert config.pretrain.mask_ratio == 0.7
    assert config.finetune.budgets == [16, 32, 64, 128]


def test_ledger_records_and_finds(tmp_path):
    ledger = RunLedger(tmp_path / "ledger.jsonl")
    artifact = tmp_path / "out.bin"
    artifact.write_bytes(b"x")
    ledger.record("abc", "generate", [artifact], 1.5)
    assert ledger.find("abc", "generate").secs == 1.5
    assert ledger.find("abc", "pretrain") is None
    artifact.unlink()
    assert ledger.find("abc", "generate") is None
    with open(tmp_path / "ledger.jsonl", "a", encoding="utf-8") as f:
        f.write("not json\n")
    assert len(ledger.entries()) == 1


def test_generate_twice_is_a_no_op(tiny_config, tmp_path):
    pipeline = Pipeline(load_config(tiny_config))
    first = pipeline.generate("labeled", n=4)
    second = pipeline.generate("labeled", n=4)
    assert not first.skipped and second.skipped
    assert second.artifacts == first.artifacts
    lines = (tmp_path / "runs" / "ledger.jsonl").read_text().splitlines()
    assert len(lines) == 1
    forced = Pipeline(load_config(tiny_config), force=True).generate("labeled", n=4)
    assert not forced.skipped


def test_cli_generate_rerun_and_bad_config(tiny_config, tmp_path):
    args = ["generate", "--config", str(tiny_config), "--n", "3", "--unlabeled"]
    assert runner.invoke(app, args).exit_code == 0
    assert runner.invoke(app, args).exit_code == 0
    ledger = [json.loads(line) for line in (tmp_path / "runs" / "ledger.jsonl").read_text().splitlines()]
    assert len(ledger) == 1 and ledger[0]["stage"] == "generate"

    bad = tmp_path / "bad.toml"
    bad.write_text("[pretrain]\nmask_rate = 0.5\n", encoding="utf-8")
    assert runner.invoke(app, ["generate", "--config", str(bad)]).exit_code == 1
    assert runner.invoke(app, ["eval", "--checkpoint", str(tmp_path / "missing"),
                               "--config", str(tiny_config)]).exit_code == 1


def test_missing_explicit_checkpoint_is_an_error(tiny_config, tmp_path):
    pipeline = Pipeline(load_config(tiny_config))
    with pytest.raises(ArtifactError):
        pipeline.icl(str(tmp_path / "nowhere"))
    with pytest.raises(ArtifactError):
        pipeline.finetune(checkpoint=str(tmp_path / "nowhere"))


def test_report_needs_results(tiny_config):
    with pytest.raises(ArtifactError):
        Pipeline(load_config(tiny_config)).report()


def test_icl_resolves_upstream_and_report_round_trip(tiny_config, tmp_path):
    pipeline = Pipeline(load_config(tiny_config), max_workers=2)
    icl = pipeline.icl()
    assert not icl.skipped
    stages = {json.loads(line)["stage"] for line in (tmp_path / "runs" / "ledger.jsonl").read_text().splitlines()}
    assert {"generate", "pretrain", "finetune", "icl"} <= stages

    sweep = pd.read_csv(icl.artifacts[0])
    assert len(sweep) == 2 * 2
    assert set(sweep["J"]) == {0, 2}
    assert pipeline.icl().skipped

    finetune = pipeline.finetune()
    results = pd.read_csv(tmp_path / "runs" / "finetune" / "results.csv")
    assert sorted(results["init"]) == ["pretrained", "random"]
    assert finetune.summary["skipped"] == 1

    leaf = finetune.summary["leaves"][0]
    row = pipeline.evaluate(leaf, "test")
    assert row["split"] == "test" and row["rl2"] > 0

    report = pipeline.report()
    names = {p.split("/")[-1] for p in report.artifacts}
    assert "error_vs_budget.svg" in names and "error_vs_budget.csv" in names
    assert "icl_vs_demos.svg" in names
