import pytest

from ingp.cli import main


def test_help(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--help"])
    assert e.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("simulate", "kernel-validate", "fit", "predict", "benchmark", "cache"):
        assert cmd in out


def test_config_error_exit_code(tmp_path, capsys):
    (tmp_path / "c.yaml").write_text("experiment: fit\n")
    assert main(["fit", "--config", str(tmp_path / "c.yaml")]) == 2
    assert "ingp fit: error:" in capsys.readouterr().err


def test_data_error_exit_code(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("x0,x1,y\n2.0,0.0,1.0\n")
    (tmp_path / "c.yaml").write_text(
        "experiment: fit\nseed: 1\ndomain: ushape\nsimulation: {n_paths: 10, n_steps: 2, dt: 0.1}\n"
        "data: {path: d.csv}\n")
    assert main(["fit", "--config", str(tmp_path / "c.yaml")]) == 3
    assert "outside domain" in capsys.readouterr().err


def test_simulate_and_cache(tmp_path, capsys):
    (tmp_path / "p.csv").write_text("x0,x1\n2.0,-1.0\n2.0,1.0\n")
    args = ["--cache-dir", str(tmp_path / "c")]
    assert main(["simulate", "--domain", "ushape", "--points", str(tmp_path / "p.csv"),
                 "--paths", "50", "--steps", "3", "--seed", "1"] + args) == 0
    assert "2 simulated" in capsys.readouterr().out
    assert main(["cache", "list"] + args) == 0
    assert "2 entries" in capsys.readouterr().out
    assert main(["cache", "clear"] + args) == 0
    assert "removed 2" in capsys.readouterr().out


def test_simulate_needs_cache_dir(tmp_path, monkeypatch):
    monkeypatch.delenv("INGP_CACHE_DIR", raising=False)
    (tmp_path / "p.csv").write_text("x0,x1\n2.0,-1.0\n")
    assert main(["simulate", "--domain", "ushape", "--points", str(tmp_path / "p.csv"),
                 "--seed", "1"]) == 2


def test_predict_needs_grid_or_points(tmp_path):
    assert main(["predict", "--model", str(tmp_path / "m.yaml"), "--output", str(tmp_path)]) == 2


def test_fit_and_predict_end_to_end(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("x0,x1,y\n2.0,-1.0,-3\n-0.5,0.0,0\n2.0,1.0,3\n")
    (tmp_path / "c.yaml").write_text(
        "experiment: fit\nseed: 1\ndomain: ushape\nsimulation: {n_paths: 200, n_steps: 10, dt: 0.05}\n"
        "window: {fixed_w: 0.3}\ndata: {path: d.csv}\noutput: out\npredict: {grid: 10}\n")
    c = ["--cache-dir", str(tmp_path / "cache")]
    assert main(["fit", "--config", str(tmp_path / "c.yaml")] + c) == 0
    assert "chosen t:" in capsys.readouterr().out
    assert (tmp_path / "out" / "predictions.csv").exists()
    assert main(["predict", "--model", str(tmp_path / "out" / "model.yaml"), "--grid", "8",
                 "--output", str(tmp_path / "p"), "--variance"] + c) == 2
