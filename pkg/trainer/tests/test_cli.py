import os

from strand_trainer.cli import main

from conftest import hairgbuf_cli


def test_spatial_stage_via_cli(static_dataset, tmp_path, capsys):
    data, _ = static_dataset
    out = str(tmp_path / "cli.hgbw")
    code = main(["--stage", "spatial", "--data", data, "--out", out,
                 "--iterations", "2", "--batch", "2", "--seed", "4"])
    assert code == 0
    assert "spatial stage done" in capsys.readouterr().out
    assert os.path.exists(out)
    result = hairgbuf_cli("validate-weights", out)
    assert result.returncode == 0, result.stderr


def test_bad_dataset_exits_nonzero(tmp_path, capsys):
    code = main(["--stage", "spatial", "--data", str(tmp_path),
                 "--out", str(tmp_path / "x.hgbw"), "--iterations", "1"])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_temporal_without_init_exits_nonzero(static_dataset, tmp_path, capsys):
    data, _ = static_dataset
    code = main(["--stage", "temporal", "--data", data,
                 "--out", str(tmp_path / "x.hgbw"), "--iterations", "1"])
    assert code == 1
    assert "frozen spatial" in capsys.readouterr().err
