import json
import subprocess
import sys

import numpy as np
import pytest

from relightkit import config
from relightkit.cli import main
from relightkit.datagen import load_dataset
from relightkit.imaging import read_raw, write_raw


def small_config(tmp_path, **data):
    cfg = config.PipelineConfig()
    cfg.data.width = cfg.data.height = 32
    cfg.data.n_train, cfg.data.n_test = 2, 1
    cfg.data.n_rings, cfg.data.per_ring = 1, 4
    for k, v in data.items():
        setattr(cfg.data, k, v)
    cfg.scale = 0.125
    cfg.train.epochs = 1
    path = tmp_path / "cfg.json"
    config.save(cfg, path)
    return path


def test_config_round_trip(tmp_path):
    cfg = config.PipelineConfig(seed=3)
    cfg.train.lr = 1e-3
    config.save(cfg, tmp_path / "c.json")
    back = config.load(tmp_path / "c.json")
    assert back == cfg
    assert config.dumps(back) == config.dumps(cfg)


def test_config_partial_and_errors():
    cfg = config.loads('{"data": {"width": 48}}')
    assert cfg.data.width == 48 and cfg.data.height == 64
    for bad in ('{"data": {"widht": 4}}', '{"scale": 2.0}', '{"data": {"width": "big"}}', "{oops",
                '{"train": {"depth": "fuzzy"}}', '{"brdf": {"f0": 1.5}}'):
        with pytest.raises(config.ConfigError):
            config.loads(bad)


def test_with_seed():
    cfg = config.PipelineConfig().with_seed(9)
    assert cfg.seed == 9 and cfg.train.seed == 9
    assert config.PipelineConfig().seed == 0


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = small_config(tmp)
    assert main(["gen", "--config", str(cfg), "--out", str(tmp / "data"), "--deterministic"]) == 0
    return tmp, cfg


def test_gen_writes_dataset(dataset):
    tmp, _ = dataset
    samples = load_dataset(tmp / "data")
    assert [s.split for s in samples] == ["train", "train", "test"]
    assert samples[0].relit.shape == (5, 3, 32, 32)
    manifest = json.loads((tmp / "data" / "manifest.json").read_text())
    assert manifest["config"]["data"]["width"] == 32


def test_gen_is_reproducible(dataset, tmp_path):
    tmp, cfg = dataset
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "again"), "--deterministic"]) == 0
    for name in ("scene_0/relit_3.rlk", "scene_2/depth_noisy.rlk", "manifest.json"):
        assert (tmp / "data" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_gen_exit_codes(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["gen", "--out", str(blocker)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"data": {"n_train": -1}}')
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "d")]) == 1
    assert main(["gen", "--config", str(tmp_path / "missing.json")]) == 2


def test_relight_oracle_matches_stored(dataset, tmp_path):
    tmp, cfg = dataset
    scene = tmp / "data" / "scene_2"
    dirs = json.loads((tmp / "data" / "manifest.json").read_text())["directions"]
    w = ",".join(repr(x) for x in dirs[2])
    out = tmp_path / "r.rlk"
    rc = main(["relight", "--config", str(cfg), "--flash", str(scene / "flash.rlk"), "--depth",
               str(scene / "depth.rlk"), f"--light={w}", "--oracle", "--out", str(out)])
    assert rc == 0
    assert np.mean((read_raw(out) - read_raw(scene / "relit_2.rlk")) ** 2) < 1e-10
    assert out.with_suffix(".png").is_file()


def test_relight_rejects_lower_hemisphere(dataset, tmp_path, capsys):
    tmp, cfg = dataset
    scene = tmp / "data" / "scene_0"
    rc = main(["relight", "--flash", str(scene / "flash.rlk"), "--depth", str(scene / "depth.rlk"),
               "--light", "0,0,-1", "--oracle", "--out", str(tmp_path / "x.rlk")])
    assert rc == 1
    assert "light below visible hemisphere" in capsys.readouterr().err
    assert not (tmp_path / "x.rlk").exists()


def test_relight_env_uniform(dataset, tmp_path):
    tmp, cfg = dataset
    scene = tmp / "data" / "scene_0"
    write_raw(tmp_path / "env.rlk", np.ones((3, 8, 32)))
    out = tmp_path / "env_out.rlk"
    rc = main(["relight", "--config", str(cfg), "--flash", str(scene / "flash.rlk"), "--depth",
               str(scene / "depth.rlk"), "--env", str(tmp_path / "env.rlk"), "--oracle", "--out", str(out),
               "--no-preview"])
    assert rc == 0
    img = read_raw(out)
    # sum of the basis images weighted by their share of the sky's 2*pi sr
    assert img.shape == (3, 32, 32) and (img >= 0).all() and img.max() > 0
    assert not out.with_suffix(".png").exists()


def test_shadow_command(dataset, tmp_path):
    tmp, cfg = dataset
    scene = tmp / "data" / "scene_1"
    dirs = json.loads((tmp / "data" / "manifest.json").read_text())["directions"]
    w = ",".join(repr(x) for x in dirs[4])
    assert main(["shadow", "--config", str(cfg), "--depth", str(scene / "depth.rlk"), f"--light={w}",
                 "--out", str(tmp_path)]) == 0
    assert np.array_equal(read_raw(tmp_path / "shadow.rlk"), read_raw(scene / "shadow_4.rlk"))
    assert read_raw(tmp_path / "encoded.rlk").shape == (3, 32, 32)


def test_train_decompose_eval(dataset, tmp_path):
    tmp, cfg = dataset
    models = tmp_path / "models"
    assert main(["train", "--config", str(cfg), "--data", str(tmp / "data"), "--out", str(models)]) == 0
    assert (models / "models.json").is_file() and (models / "checkpoint" / "models.json").is_file()
    scene = tmp / "data" / "scene_2"
    assert main(["decompose", "--flash", str(scene / "flash.rlk"), "--depth", str(scene / "depth.rlk"),
                 "--models", str(models), "--out", str(tmp_path / "maps")]) == 0
    n = read_raw(tmp_path / "maps" / "normal.rlk")
    assert np.allclose(np.linalg.norm(n, axis=0), 1, atol=1e-4)
    reports = []
    for k in range(2):
        path = tmp_path / f"report{k}.json"
        assert main(["eval", "--config", str(cfg), "--data", str(tmp / "data"), "--models", str(models),
                     "--report", str(path), "--deterministic"]) == 0
        reports.append(path.read_bytes())
    assert reports[0] == reports[1]
    rep = json.loads(reports[0])
    assert set(rep["mse"]) == {"Clean", "Noisy"} and rep["scenes"] == ["scene_2"]


def test_eval_without_models_is_io_error(dataset, tmp_path):
    tmp, cfg = dataset
    assert main(["eval", "--data", str(tmp / "data"), "--models", str(tmp_path / "none"),
                 "--report", str(tmp_path / "r.json")]) == 1


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "relightkit", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "relight" in out.stdout
    bad = subprocess.run([sys.executable, "-m", "relightkit", "frobnicate"], capture_output=True, text=True)
    assert bad.returncode != 0
