import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from peglab import experiments as ex
from peglab.cli import main
from peglab.rl import EpisodeRecord

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def smoke_cfg(tmp: Path) -> Path:
    """The shipped smoke config with every path moved under ``tmp``."""
    cfg = yaml.safe_load((CONFIGS / "smoke.yaml").read_text())
    ckpt = str(tmp / "train" / "agent.pt")
    cfg["out"] = str(tmp / "out")
    cfg["transfer"]["sources"][0]["checkpoint"] = ckpt
    cfg["test"]["checkpoints"] = {k: ckpt for k in cfg["test"]["checkpoints"]}
    p = tmp / "smoke.yaml"
    p.write_text(yaml.safe_dump(cfg))
    return p


def listed_and_present(run: Path):
    manifest = json.loads((run / "manifest.json").read_text())
    present = {str(p.relative_to(run)) for p in run.rglob("*") if p.is_file() and p.name != "manifest.json"}
    return set(manifest["files"]), present


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("smoke")
    cfg = smoke_cfg(tmp)
    codes = {"train": main(["train", "--config", str(cfg), "--out", str(tmp / "train")])}
    for verb in ("transfer", "ablate-gains", "test"):
        codes[verb] = main([verb, "--config", str(cfg), "--out", str(tmp / verb)])
    codes["report"] = main(["report", "--config", str(cfg), "--out", str(tmp)])
    return tmp, cfg, codes


def test_smoke_commands_succeed(smoke):
    tmp, _, codes = smoke
    assert all(c == 0 for c in codes.values()), codes
    result = json.loads((tmp / "transfer" / "result.json").read_text())
    W = np.array(result["W"])
    assert W.shape == (1, 6) and np.allclose(W, 1.0)
    assert (tmp / "transfer" / "similarity" / "similarity_long.csv").exists()
    ablate = json.loads((tmp / "ablate-gains" / "result.json").read_text())
    assert [r["gain_factor"] for r in ablate] == [1.0, 4.0]
    test = json.loads((tmp / "test" / "summary.json").read_text())
    assert set(test) == set(ex.TEST_VARIANTS)
    assert (tmp / "report" / "results.csv").read_text().count("\n") >= 4


@pytest.mark.parametrize("run", ["train", "transfer", "ablate-gains", "test", "report"])
def test_manifests_are_complete(smoke, run):
    listed, present = listed_and_present(smoke[0] / run)
    assert listed == present


def test_constant_gain_logs_hold_k_fixed(smoke):
    log = np.genfromtxt(smoke[0] / "test" / "constant-small-K" / "episode_0.csv", delimiter=",", names=True)
    K = np.stack([log[f"K{i}"] for i in range(6)], axis=1)
    assert np.all(K == K[0]) and len(log) <= 20


def test_rerun_is_byte_identical(smoke, tmp_path):
    tmp, cfg, _ = smoke
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    _, files = listed_and_present(tmp / "train")
    for name in files:
        assert (tmp_path / "again" / name).read_bytes() == (tmp / "train" / name).read_bytes(), name


def test_config_hash_mismatch_needs_force(smoke, tmp_path):
    tmp, cfg, _ = smoke
    data = yaml.safe_load(cfg.read_text())
    data["train"]["episodes"] = 2
    other = tmp_path / "other.yaml"
    other.write_text(yaml.safe_dump(data))
    out = tmp_path / "run"
    assert main(["reconfigure", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["reconfigure", "--config", str(other), "--out", str(out)]) == 2
    assert main(["reconfigure", "--config", str(other), "--out", str(out), "--force"]) == 0


def test_reconfigure_table_config(tmp_path):
    assert main(["reconfigure", "--config", str(CONFIGS / "groups.yaml"), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    for group in ("A", "B"):
        assert max(summary[group]["product_spread"]) < 0.005


def test_default_out_is_relative_to_config(tmp_path):
    cfg = yaml.safe_load((CONFIGS / "groups.yaml").read_text())
    cfg["out"] = "rel_out"
    p = tmp_path / "t.yaml"
    p.write_text(yaml.safe_dump(cfg))
    assert main(["reconfigure", "--config", str(p)]) == 0
    assert (tmp_path / "rel_out" / "manifest.json").exists()


@pytest.mark.parametrize("patch", [
    {"bogus": 1},
    {"rl": {"learning_rate": 1e-3}},
    {"tasks": {"x": {"section": {"shape": "circle", "radius": 5}}}},
    {"tasks": {"x": {"section": {"shape": "circle", "radius": 5}, "L_mm": 20, "depth": 3}}},
    {"transfer": {"method": "best"}},
    {"episode": []},
])
def test_schema_rejects(patch):
    with pytest.raises(ex.ConfigError):
        ex.validate(patch)


def test_cli_rejections_exit_nonzero(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) != 0
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 0\nwhatever: 1\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) != 0
    cfg = yaml.safe_load((CONFIGS / "smoke.yaml").read_text())
    cfg["transfer"]["sources"] = []
    p = tmp_path / "nosrc.yaml"
    p.write_text(yaml.safe_dump(cfg))
    assert main(["transfer", "--config", str(p), "--out", str(tmp_path / "t"), "--method", "wdpd"]) != 0
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "t"), "--method", "wdpd"]) != 0
    cfg["transfer"]["gain_factor"] = 4.0
    p.write_text(yaml.safe_dump(cfg))
    assert main(["transfer", "--config", str(p), "--out", str(tmp_path / "t"), "--method", "direct"]) != 0
    assert "rejected" in capsys.readouterr().err


def test_yaml_exponent_floats(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("plant: {E_c: 2.0e9, mu: 1e-1}\n")
    cfg = ex.load_config(p)
    assert cfg["plant"]["E_c"] == 2.0e9 and cfg["plant"]["mu"] == 0.1


def test_config_hash_ignores_private_keys_and_order():
    a = {"seed": 1, "rl": {"gamma": 0.9, "tau": 0.1}, "out": "x", "_base": "/a"}
    b = {"rl": {"tau": 0.1, "gamma": 0.9}, "seed": 1, "out": "y", "_force": True}
    assert ex.config_hash(a) == ex.config_hash(b)
    assert ex.config_hash(a) != ex.config_hash({**a, "seed": 2})


def test_sub_seeds():
    s = ex.sub_seeds(3)
    assert s == ex.sub_seeds(3) and set(s) == set(ex.SEED_NAMES)
    assert len(set(s.values())) == len(s) and s != ex.sub_seeds(4)


def curve(vals):
    return [EpisodeRecord(k, v, v, 1, False) for k, v in enumerate(vals)]


def test_episodes_to_threshold():
    vals = [-3, -3, -2, -1, -1, -1]
    assert ex.episodes_to_threshold(curve(vals), -1.0, window=1) == 4
    # window 2: averages -3, -3, -2.5, -1.5, -1, -1
    assert ex.episodes_to_threshold(curve(vals), -1.0, window=2) == 5
    assert ex.episodes_to_threshold(curve(vals), 0.0, window=2) == 7
    # episodes before ``start`` cannot count
    assert ex.episodes_to_threshold(curve([0, 0, -5, 0, 0]), -1.0, window=1, start=2) == 4
    assert np.allclose(ex.moving_average([1, 2, 3, 4], 2), [1, 1.5, 2.5, 3.5])
