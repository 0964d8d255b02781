import csv
import io
import json

import numpy as np
import pytest

from pcrealism import checkpoint, cli, config
from pcrealism.config import ConfigError, RunConfig
from pcrealism.io import save_cloud

TINY = [f"dataset.{n}.{k}={v}" for n in ("real_urban", "real_suburban", "sim_city", "geometric_set",
                                           "misc1", "misc2", "misc3")
        for k, v in (("rows", 8), ("cols", 64))]


def run(tmp_path, *argv):
    return cli.main([*argv[:1], "--out", str(tmp_path), *argv[1:]])


# -- configuration -------------------------------------------------------------


def test_defaults_match_training_defaults():
    cfg = RunConfig()
    tc = cfg.train_config()
    assert (tc.steps, tc.batch_size, tc.lam, tc.warmup, tc.decay_steps) == (6000, 8, 0.3, 500, 5000)
    assert [s.name for s in cfg.dataset_specs()][:2] == ["real_urban", "real_suburban"]


def test_unknown_keys_are_named():
    cfg = RunConfig()
    with pytest.raises(ConfigError, match="train.stepz"):
        cfg.apply_override("train.stepz=3")
    with pytest.raises(ConfigError, match="nosection"):
        cfg.apply_override("nosection.x=1")
    with pytest.raises(ConfigError):
        cfg.apply_override("train.steps")
    with pytest.raises(ConfigError, match="bogus"):
        config.parse_ini("[train]\nbogus = 1\n")
    with pytest.raises(ConfigError):
        config.parse_ini("[dataset.x]\nid = 0\ncategory = real\ngenerator = nope\n")


def test_precedence_file_env_set(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[train]\nsteps = 10\nlam = 0.5\nseed = 4\n")
    env = {"PCREAL_TRAIN__STEPS": "20", "PCREAL_TRAIN__LAM": "0.7", "UNRELATED": "x"}
    cfg = config.load(path, ["train.steps=30"], environ=env)
    t = cfg.sections["train"]
    assert (t["steps"], t["lam"], t["seed"]) == (30, 0.7, 4)
    with pytest.raises(ConfigError):
        config.load(path, environ={"PCREAL_TRAIN__NOPE": "1"})


def test_dataset_overrides_keep_other_sets():
    cfg = config.load(None, ["dataset.sim_city.rows=16", "dataset.misc1.size=inf"], environ={})
    specs = {s.name: s for s in cfg.dataset_specs()}
    assert len(specs) == 7 and specs["sim_city"].params["rows"] == 16
    assert specs["misc1"].size is None


def test_ini_dataset_sections_replace_defaults():
    text = """
[dataset.a]
id = 0
category = real
generator = real_surrogate
style = urban
size = 5
[dataset.b]
id = 1
category = real
generator = real_surrogate
style = suburban
size = 5
[dataset.c]
id = 2
category = synthetic
generator = synthetic_city
size = 5
[dataset.d]
id = 3
category = misc
generator = misc
kind = 2
size = inf
"""
    cfg = config.parse_ini(text)
    specs = cfg.dataset_specs()
    assert [s.name for s in specs] == ["a", "b", "c", "d"]
    assert specs[3].size is None and specs[3].params["kind"] == 2
    assert cfg.train_config().n_outputs_adversary == 4


def test_round_trips_preserve_hash():
    cfg = config.load(None, ["train.steps=7", "sweep.lambdas=0,0.3", "dataset.misc3.sigma=2.5"],
                      environ={})
    again = RunConfig.from_dict(json.loads(cfg.to_json()))
    assert again.hash() == cfg.hash()
    assert config.parse_ini(cfg.to_ini()).hash() == cfg.hash()
    other = config.load(None, ["train.steps=8"], environ={})
    assert other.hash() != cfg.hash()


# -- command line --------------------------------------------------------------


def test_generate_manifest_and_rerun(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["generate", "--set", "generate.n=2", "--set", "generate.format=f32", *sum(
        (["--set", s] for s in TINY), [])]
    assert run(a, *args) == 0
    assert run(b, *args) == 0
    rows = list(csv.DictReader(io.StringIO((a / "manifest.csv").read_text())))
    assert len(rows) == 14
    cats = [r["category"] for r in rows]
    assert cats.count("real") == 4 and cats.count("synthetic") == 4 and cats.count("misc") == 6
    for r in rows:
        assert (a / r["file"]).read_bytes() == (b / r["file"]).read_bytes()
    ra = json.loads((a / "run.json").read_text())
    assert ra["config_hash"] == json.loads((b / "run.json").read_text())["config_hash"]
    assert ra["command"] == "generate" and "version" in ra


def test_generate_zero_gives_empty_manifest(tmp_path):
    assert run(tmp_path, "generate", "--set", "generate.n=0") == 0
    assert (tmp_path / "manifest.csv").read_text() == "file,dataset_id,dataset,category,index,seed\n"


def test_seed_flag_changes_output(tmp_path):
    base = ["generate", "--set", "generate.n=1", *sum((["--set", s] for s in TINY), [])]
    run(tmp_path / "s0", *base, "--seed", "0")
    run(tmp_path / "s1", *base, "--seed", "1")
    f = "sim_city/00000.xyz"
    assert (tmp_path / "s0" / f).read_bytes() != (tmp_path / "s1" / f).read_bytes()


def test_train_zero_steps(tmp_path):
    assert run(tmp_path, "train", "--set", "train.steps=0") == 0
    assert (tmp_path / "metrics.csv").read_text() == "step,loss_c,loss_a,acc_c,acc_a\n"
    assert (tmp_path / "checkpoints" / "step_000000.ckpt").exists()
    model, opt = checkpoint.load(tmp_path / "model.ckpt")
    assert opt.t == 0 and model.u_a == 7


def test_score_anomaly_features_and_replay(tmp_path):
    assert run(tmp_path / "t", "train", "--set", "train.steps=0") == 0
    model = str(tmp_path / "t" / "model.ckpt")
    cloud = tmp_path / "c.xyz"
    save_cloud(cloud, np.random.default_rng(0).normal(size=(300, 3)) * 4)
    out = tmp_path / "s"
    assert run(out, "score", "--model", model, str(cloud)) == 0
    d = json.loads((out / "scores" / "c.xyz.json").read_text())
    assert abs(sum(d["scene"].values()) - 1) < 1e-6
    first = (out / "scores.csv").read_text()
    assert first.splitlines()[0] == "input,real,synthetic,misc,argmax"
    # replay into a fresh directory reproduces the outputs byte for byte
    assert cli.main(["replay", str(out / "run.json"), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "scores.csv").read_text() == first

    assert run(tmp_path / "a", "anomaly", "--model", model, str(cloud)) == 0
    assert (tmp_path / "a" / "c.xyz.anomaly.ply").exists()
    pts = (tmp_path / "a" / "c.xyz.points.csv").read_text().splitlines()
    assert len(pts) == 301
    assert run(tmp_path / "f", "features", "--model", model, str(cloud)) == 0
    assert (tmp_path / "f" / "features.csv").read_text().startswith("cloud,dataset,category,z0,")


def test_errors_exit_nonzero(tmp_path, capsys):
    cloud = tmp_path / "c.xyz"
    save_cloud(cloud, np.zeros((3, 3)))
    assert run(tmp_path / "x", "score", "--model", str(tmp_path / "none.ckpt"), str(cloud)) == 2
    assert "pcreal: error" in capsys.readouterr().err
    bad = tmp_path / "bad.f32"
    bad.write_bytes(b"\0" * 13)
    assert run(tmp_path / "t", "train", "--set", "train.steps=0") == 0
    model = str(tmp_path / "t" / "model.ckpt")
    assert run(tmp_path / "y", "score", "--model", model, str(bad)) == 2
    assert "byte offset 12" in capsys.readouterr().err
    assert run(tmp_path / "z", "train", "--set", "train.nope=1") == 2
    assert "train.nope" in capsys.readouterr().err
    assert run(tmp_path / "w", "sweep", "noise") == 2
    assert run(tmp_path / "v", "generate", "--set", "generate.format=las") == 2
