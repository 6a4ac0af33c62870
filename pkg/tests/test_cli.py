import json
import subprocess
import sys

import numpy as np
import pytest

from gevmq import gev
from gevmq.cli import main, read_values
from gevmq.multi_quantile import fit_mq, robust_random_triples


@pytest.fixture
def sample_file(tmp_path):
    path = tmp_path / "y.csv"
    assert main(["sample", "--xi", "0.2", "-n", "2000", "--seed", "3", "-o", str(path)]) == 0
    return path


def test_sample_output(sample_file):
    lines = sample_file.read_text().splitlines()
    assert lines[0] == "value" and len(lines) == 2001
    expected = gev.sample((0.2, 0, 1), 2000, np.random.default_rng(3))
    np.testing.assert_array_equal(read_values(str(sample_file)), expected)


def test_fit_mq_json(sample_file, capsys):
    assert main(["fit", "--input", str(sample_file), "--m", "40", "--seed", "1", "--format", "json"]) == 0
    out = json.loads(capsys.readouterr().out)
    row = out[0] if isinstance(out, list) else out
    assert row["valid"] is True and abs(row["xi_hat"] - 0.2) < 0.15
    assert {"m", "dropped", "tau2"} <= set(row["weights"])


def test_fit_matches_library(sample_file, capsys):
    assert main(["fit", "--input", str(sample_file), "--m", "40", "--seed", "1", "--format", "json"]) == 0
    out = json.loads(capsys.readouterr().out)
    row = out[0] if isinstance(out, list) else out
    y = read_values(str(sample_file))
    assert np.isfinite(row["xi_hat"]) and row["estimator"] == "MQ"
    M = robust_random_triples(40, 0.0, np.random.default_rng(1))
    assert row["xi_hat"] == fit_mq(M, y).params.xi


@pytest.mark.parametrize("est", ("mle", "pwm", "deh"))
def test_fit_classical(sample_file, capsys, est):
    assert main(["fit", "--input", str(sample_file), "--estimator", est, "--k", "50"]) == 0
    header, row = capsys.readouterr().out.splitlines()[:2]
    assert "xi_hat" in header.split(",") and row.startswith(est.upper())


def test_bad_line_message(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("value\n1.0\n2.0\nabc\n")
    assert main(["fit", "--input", str(path)]) == 2
    assert "--input: line 4: not a number" in capsys.readouterr().err


def test_usage_error_names_flag(capsys):
    assert main(["mc-compare", "--xi", "0.2", "-n", "500", "--reps", "2", "--estimators", "mq"]) == 2
    assert "-n" in capsys.readouterr().err
    assert main(["sample", "--xi", "0.2", "-n", "0"]) == 2
    assert "argument -n" in capsys.readouterr().err


def test_invalid_fit_exits_one(tmp_path, capsys):
    path = tmp_path / "flat.csv"
    path.write_text("\n".join(["1.0"] * 1200) + "\n")
    assert main(["fit", "--input", str(path), "--m", "20"]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert {"error", "message"} <= set(err)


def test_help_states_units(capsys):
    assert main(["mc-compare", "--help"]) == 0
    text = capsys.readouterr().out
    assert "count" in text and "dimensionless" in text


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nxi = 0.5\nn = 7\nseed = 4\n")
    assert main(["--config", str(cfg), "sample"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 8
    assert float(out[1]) == gev.sample((0.5, 0, 1), 7, np.random.default_rng(4))[0]


def test_config_bad_value(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n = many\n")
    assert main(["--config", str(cfg), "sample", "--xi", "0"]) == 2
    assert "--config" in capsys.readouterr().err


def test_avar(capsys):
    assert main(["avar", "--xi", "0.2", "--q", "0.1,0.5,0.9"]) == 0
    header, row = capsys.readouterr().out.splitlines()[:2]
    cols = dict(zip(header.split(","), row.split(",")))
    assert float(cols["avar_xi"]) == pytest.approx(2.1754, abs=1e-4)
    assert float(cols["crb"]) > 0


def test_optimal_triplet_negative_xi(capsys):
    assert main(["optimal-triplet", "--xi", "-1"]) == 0
    header, row = capsys.readouterr().out.splitlines()[:2]
    cols = dict(zip(header.split(","), row.split(",")))
    assert abs(float(cols["q1"]) - 0.037) < 0.02 and abs(float(cols["q3"]) - 0.987) < 0.02
    assert cols["efficiency"] == ""


def test_tau2_curve(capsys):
    assert main(["tau2-curve", "--xi", "0.2", "--m-values", "10,20,40", "--nested"]) == 0
    rows = capsys.readouterr().out.splitlines()[1:]
    t = [float(r.split(",")[2]) for r in rows]
    assert len(t) == 3 and t[0] >= t[1] >= t[2]


def test_block_maxima(tmp_path, capsys):
    path = tmp_path / "u.csv"
    path.write_text("\n".join(format(v, ".17g") for v in np.random.default_rng(5).random(40_000)) + "\n")
    assert main(["block-maxima", "--input", str(path), "--block-size", "40", "--m", "40", "--bootstrap", "20"]) == 0
    header, row = capsys.readouterr().out.splitlines()[:2]
    cols = dict(zip(header.split(","), row.split(",")))
    assert -1.3 < float(cols["xi_hat"]) < -0.7 and cols["n_blocks"] == "1000"


def test_mc_compare_deterministic(tmp_path):
    args = ["mc-compare", "--xi=-1,0.2", "-n", "500", "--reps", "6", "--m", "40",
            "--estimators", "mq,pwm", "--seed", "9"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--threads", "1", "-o", str(a)]) == 0
    assert main(args + ["--threads", "2", "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().splitlines()[0] == "estimator,xi,n,reps,bias,stderr,failure_rate,wall_ms"


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "gevmq", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "mc-compare" in res.stdout
