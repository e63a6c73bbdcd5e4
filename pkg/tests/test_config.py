import re
import sys
from pathlib import Path

import pytest

from src.config.pipeline_config import PipelineConfig, config_hash, load_config
from src.utils.errors import ConfigError


def test_defaults():
    cfg = PipelineConfig()
    assert cfg.sonar.slant_bin_width == pytest.approx(160.0 / 1301)
    assert cfg.graph.node_stride == 1
    assert cfg.drift_seed == cfg.run.seed + 2
    assert cfg.sonar.sensor_offset_pose().log() == pytest.approx([0.0] * 6)


def test_load_toml_sections(tmp_path, monkeypatch):
    monkeypatch.delenv("SSS_SLAM_SEED", raising=False)
    monkeypatch.delenv("SSS_SLAM_THREADS", raising=False)
    path = tmp_path / "cfg.toml"
    path.write_text("[run]\nseed = 11\n\n[association]\nradius = 4.5\n\n[drift]\nrng_seed = 99\n")
    cfg = load_config(path)
    assert cfg.run.seed == 11
    assert cfg.association.radius == 4.5
    assert cfg.drift_seed == 99


def test_environment_overrides_file(tmp_path, monkeypatch):
    path = tmp_path / "cfg.toml"
    path.write_text("[run]\nseed = 11\n")
    monkeypatch.setenv("SSS_SLAM_SEED", "21")
    monkeypatch.setenv("SSS_SLAM_THREADS", "3")
    cfg = load_config(path)
    assert (cfg.run.seed, cfg.run.threads) == (21, 3)


@pytest.mark.parametrize("text", [
    "[sonar]\nmax_range = -1\n",
    "[sonar]\nsensor_offset = [0, 0, 0]\n",
    "[unknown]\nvalue = 1\n",
    "[graph]\nmode = \"sometimes\"\n",
    "[run\nseed = 1\n",
])
def test_invalid_config_raises(tmp_path, text):
    path = tmp_path / "cfg.toml"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_overrides_skip_none_and_validate():
    cfg = PipelineConfig()
    changed = cfg.with_overrides(run={"seed": 3, "threads": None}, graph={"node_stride": 4})
    assert changed.run.seed == 3
    assert changed.run.threads == cfg.run.threads
    assert changed.graph.node_stride == 4
    with pytest.raises(ConfigError):
        cfg.with_overrides(graph={"node_stride": 0})
    with pytest.raises(ConfigError):
        cfg.with_overrides(nowhere={"x": 1})


def test_config_hash_tracks_content():
    cfg = PipelineConfig()
    assert config_hash(cfg) == config_hash(PipelineConfig())
    assert config_hash(cfg) != config_hash(cfg.with_overrides(run={"seed": 8}))


def test_example_config_matches_defaults(monkeypatch):
    monkeypatch.delenv("SSS_SLAM_SEED", raising=False)
    monkeypatch.delenv("SSS_SLAM_THREADS", raising=False)
    example = Path(__file__).resolve().parents[1] / "config" / "example.toml"
    assert load_config(example) == PipelineConfig()


def test_requirements_state_the_minimum_python():
    requirements = (Path(__file__).resolve().parents[1] / "requirements.txt").read_text()
    match = re.search(r"Requires Python >= (\d+)\.(\d+)", requirements)
    assert match
    minimum = tuple(int(v) for v in match.groups())
    assert minimum >= (3, 11)
    assert sys.version_info[:2] >= minimum
