import os
import subprocess
import sys

import pytest

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
SCENES = os.path.join(os.path.dirname(__file__), "..", "..", "scenes")


def hairgbuf_cli(*args):
    """Invoke the rendering pipeline through its public CLI."""
    return subprocess.run([sys.executable, "-m", "hairgbuf", *args],
                          capture_output=True, text=True)


def _write_dataset(tmp_dir, scene, frames):
    config = os.path.join(tmp_dir, "ds.config")
    with open(config, "w") as fh:
        fh.write(f"scene = {os.path.abspath(os.path.join(SCENES, scene))}\n")
        fh.write(f"frames = {frames}\nwidth = 64\nheight = 64\n")
    out = os.path.join(tmp_dir, "data")
    result = hairgbuf_cli("make-dataset", "--config", config, "--out", out)
    assert result.returncode == 0, result.stderr
    return out, config


@pytest.fixture(scope="session")
def static_dataset(tmp_path_factory):
    """16-frame static helix dataset rendered via the pipeline CLI."""
    tmp = tmp_path_factory.mktemp("static_ds")
    return _write_dataset(str(tmp), "helix_static.scene", 16)


@pytest.fixture(scope="session")
def rig_dataset(tmp_path_factory):
    """8-frame moving-rig dataset for the temporal stage."""
    tmp = tmp_path_factory.mktemp("rig_ds")
    return _write_dataset(str(tmp), "helix_rig.scene", 8)


@pytest.fixture(scope="session")
def trained_spatial(static_dataset, tmp_path_factory):
    """200-iteration spatial stage on the static dataset, phase 5 held out."""
    from strand_trainer.train import TrainConfig, train_spatial
    data, _ = static_dataset
    out = str(tmp_path_factory.mktemp("ckpt") / "spatial.hgbw")
    config = TrainConfig(stage="spatial", data=data, out=out, iterations=200,
                         batch=4, crop=32, seed=0, holdout_phase=5)
    result = train_spatial(config)
    return config, result


@pytest.fixture(scope="session")
def trained_temporal(rig_dataset, trained_spatial, tmp_path_factory):
    """200-iteration temporal stage, spatial weights frozen."""
    from strand_trainer.train import TrainConfig, train_temporal
    data, _ = rig_dataset
    spatial_config, _ = trained_spatial
    out = str(tmp_path_factory.mktemp("ckpt") / "combined.hgbw")
    config = TrainConfig(stage="temporal", data=data, out=out,
                         init=spatial_config.out, iterations=200, crop=32,
                         seq_len=4, seed=0)
    result = train_temporal(config)
    return config, result
