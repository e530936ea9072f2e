import csv
import json

import numpy as np
import pytest
import yaml

from fourierhaze.cli import main
from fourierhaze.config import ConfigError, RunConfig, config_from_dict, load_config
from fourierhaze.core import load_checkpoint, load_image, save_image

TINY = {
    "data": {"image_size": 24, "n_pairs": 3, "seed": 1},
    "diffusion": {"T": 20, "S": 2},
    "model": {"hidden": 4, "embed": 8},
    "train": {"phase1_iterations": 3, "phase2_iterations": 2, "batch": 2, "crops_per_image": 2, "lr": 1e-3},
    "gcl": {"channels": 2, "fusion_channels": 4, "iterations": 2, "batch": 2},
    "sample": {"patch": 16, "stride": 8},
}


def test_defaults_validate():
    cfg = load_config()
    assert cfg.diffusion.T == 1000 and cfg.train.lr == 2e-5 and cfg.sample.patch == 64


def test_yaml_roundtrip(tmp_path):
    cfg = config_from_dict(TINY)
    cfg.dump(tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg


@pytest.mark.parametrize(
    "raw,match",
    [
        ({"bogus": {}}, "unknown section"),
        ({"train": {"lrr": 1}}, "unknown key"),
        ({"train": {"batch": "four"}}, "integer"),
        ({"diffusion": {"use_fir": 1}}, "true/false"),
        ({"diffusion": {"S": 7}}, "divide"),
        ({"sample": {"stride": 100}}, "stride"),
        ({"train": 3}, "mapping"),
    ],
)
def test_invalid_configs(raw, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(raw)


def test_malformed_yaml(tmp_path):
    (tmp_path / "bad.yaml").write_text("train: [unclosed")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(tmp_path / "bad.yaml")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "cfg.yaml").write_text(yaml.safe_dump(TINY))
    assert main(["gen-data", "--config", str(root / "cfg.yaml"), "--out", str(root / "data")]) == 0
    return root


def test_full_cli_pipeline(workspace, capsys):
    cfg = str(workspace / "cfg.yaml")
    data = workspace / "data"
    assert len(list((data / "hazy").glob("*.png"))) == 3
    assert json.loads((data / "manifest.json").read_text())["n"] == 3
    assert (data / "config.yaml").exists()

    ckpt = workspace / "run" / "model.ckpt"
    assert main(["train-diffusion", "--config", cfg, "--data", str(data), "--out", str(ckpt)]) == 0
    log = (workspace / "run" / "model.log.tsv").read_text().splitlines()
    assert log[0] == "iteration\tphase\tloss\tlr"
    assert any("\ttransition\t" in line for line in log)
    assert len(log) == 1 + 5 + 1

    gcl = workspace / "run" / "gcl.ckpt"
    assert main(["train-gcl", "--config", cfg, "--data", str(data), "--ckpt", str(ckpt), "--out", str(gcl)]) == 0

    out = workspace / "out"
    assert main(["dehaze", "--ckpt", str(ckpt), "--gcl-ckpt", str(gcl), "--in", str(data / "hazy"),
                 "--out", str(out), "--config", cfg]) == 0
    assert load_image(out / "00000.png").shape == (3, 24, 24)
    assert (out / "fused" / "00000.png").exists()
    first = (out / "00001.png").read_bytes()
    assert main(["dehaze", "--ckpt", str(ckpt), "--in", str(data / "hazy"), "--out", str(out)]) == 0
    assert (out / "00001.png").read_bytes() == first

    report = workspace / "report.csv"
    assert main(["eval", "--pred", str(out), "--gt", str(data / "clean"), "--out", str(report)]) == 0
    rows = list(csv.reader(open(report)))
    assert rows[0][0] == "image_id" and rows[-1][0] == "mean" and len(rows) == 5


def test_resume_extends_training(workspace):
    cfg = dict(TINY)
    cfg["train"] = {**TINY["train"], "phase2_iterations": 4}
    (workspace / "cfg2.yaml").write_text(yaml.safe_dump(cfg))
    ckpt = workspace / "resume" / "model.ckpt"
    assert main(["train-diffusion", "--config", str(workspace / "cfg.yaml"), "--data",
                 str(workspace / "data"), "--out", str(ckpt)]) == 0
    assert main(["train-diffusion", "--config", str(workspace / "cfg2.yaml"), "--data",
                 str(workspace / "data"), "--out", str(ckpt), "--resume"]) == 0
    log = (workspace / "resume" / "model.log.tsv").read_text().splitlines()
    assert log[-1].startswith("7\t2\t")
    assert [line.split("\t")[0] for line in log[1:]] == ["1", "2", "3", "3", "4", "5", "6", "7"]


def test_periodic_checkpoints_match_single_run(workspace):
    cfg = dict(TINY)
    cfg["train"] = {**TINY["train"], "checkpoint_every": 2}
    (workspace / "cfg3.yaml").write_text(yaml.safe_dump(cfg))
    a = workspace / "a" / "m.ckpt"
    b = workspace / "b" / "m.ckpt"
    assert main(["train-diffusion", "--config", str(workspace / "cfg3.yaml"), "--data",
                 str(workspace / "data"), "--out", str(a)]) == 0
    assert main(["train-diffusion", "--config", str(workspace / "cfg.yaml"), "--data",
                 str(workspace / "data"), "--out", str(b)]) == 0
    ta, ma = load_checkpoint(a)
    tb, mb = load_checkpoint(b)
    assert ma["iteration"] == mb["iteration"] == 5
    assert ta.keys() == tb.keys()
    for name in ta:
        np.testing.assert_array_equal(ta[name], tb[name])


def test_exit_codes(workspace, tmp_path):
    assert main([]) == 1
    assert main(["eval", "--pred", str(tmp_path / "none"), "--gt", str(tmp_path), "--out", "x.csv"]) == 1
    (tmp_path / "p").mkdir()
    (tmp_path / "g").mkdir()
    save_image(np.zeros((3, 16, 16)), tmp_path / "p" / "a.png")
    save_image(np.zeros((3, 16, 16)), tmp_path / "g" / "b.png")
    assert main(["eval", "--pred", str(tmp_path / "p"), "--gt", str(tmp_path / "g"), "--out", str(tmp_path / "r.csv")]) == 1
    ckpt = workspace / "exit" / "model.ckpt"
    assert main(["train-diffusion", "--config", str(workspace / "cfg.yaml"), "--data",
                 str(workspace / "data"), "--out", str(ckpt)]) == 0
    bad_cfg = tmp_path / "bad.yaml"
    bad_cfg.write_text("model: {hidden: 8}\nsample: {stride: 8}\n")
    assert main(["dehaze", "--ckpt", str(ckpt), "--in", str(workspace / "data" / "hazy"),
                 "--out", str(tmp_path / "o"), "--config", str(bad_cfg)]) == 1
    assert main(["dehaze", "--ckpt", str(ckpt), "--in", str(workspace / "data" / "hazy"),
                 "--out", str(tmp_path / "o"), "--config", str(bad_cfg), "--force"]) == 0
