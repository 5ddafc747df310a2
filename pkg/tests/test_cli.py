import csv
import json

import numpy as np
import pytest

from ssgp.cli import _parse_k, main
from ssgp.data import read_csv


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def report(path):
    return {r["field"]: r["value"] for r in rows(path)}


@pytest.fixture
def data(tmp_path):
    p = tmp_path / "d.csv"
    assert main(["simulate", "--generator", "sinc", "--n", "120", "--seed", "3", "--out", str(p)]) == 0
    return p


def test_simulate_to_stdout(capsys):
    assert main(["simulate", "--generator", "logistic", "--n", "5", "--seed", "1"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "t,y" and len(out) == 6


def test_simulate_is_reproducible(tmp_path, data):
    again = tmp_path / "e.csv"
    main(["simulate", "--generator", "sinc", "--n", "120", "--seed", "3", "--out", str(again)])
    assert data.read_bytes() == again.read_bytes()


def test_fit_report_and_dense_oracle(tmp_path, data):
    rep = tmp_path / "r.csv"
    code = main(["fit", str(data), "--kernel", "matern32", "--lengthscale", "0.1", "--sigma-f", "2",
                 "--sigma-n", "0.5", "--infer", "exact", "--oracle", "dense", "--report", str(rep)])
    assert code == 0
    r = report(rep)
    assert r["scheme"] == "exact" and int(r["n"]) == 120
    assert float(r["mae_alpha"]) < 1e-8 and float(r["mae_mu"]) < 1e-8
    assert float(r["theta.kernel.log_lengthscale"]) == pytest.approx(np.log(0.1))


def test_fit_interp_reports_log_z_change(tmp_path, data):
    rep = tmp_path / "r.csv"
    assert main(["fit", str(data), "--interp", "K=10", "--report", str(rep)]) == 0
    assert 0 <= float(report(rep)["rel_delta_log_z_interp"]) < 1e-2


def test_fit_predict_roundtrip_matches_dense(tmp_path, data):
    model = tmp_path / "m.json"
    pred = tmp_path / "p.csv"
    assert main(["fit", str(data), "--lengthscale", "0.1", "--sigma-f", "2", "--sigma-n", "0.5",
                 "--model-out", str(model), "--report", str(tmp_path / "r.csv")]) == 0
    d = read_csv(data)
    at = tmp_path / "at.csv"
    at.write_text("t\n" + "\n".join(repr(float(x)) for x in d.t) + "\n")
    assert main(["predict", "--model", str(model), "--at", str(at), "--out", str(pred)]) == 0
    got = np.array([float(r["mean"]) for r in rows(pred)])
    from ssgp.inference import GPModel, infer
    from ssgp.kernels import Matern
    from ssgp.likelihoods import Gaussian

    m = GPModel(Matern(1.5, 0.1, 2.0), Gaussian(0.5))
    ref = infer(m, d.t, d.y, "exact", backend="dense")
    np.testing.assert_allclose(got, ref.post_mean, atol=1e-8)
    doc = json.loads(model.read_text())
    assert doc["scheme"] == "exact" and len(doc["W"]) == 120


def test_predict_grid(tmp_path, data, capsys):
    model = tmp_path / "m.json"
    main(["fit", str(data), "--model-out", str(model), "--report", str(tmp_path / "r.csv")])
    assert main(["predict", "--model", str(model), "--grid", "0:1:11"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "t,mean,var" and len(out) == 12


def test_optimize_with_fixed_noise_and_config(tmp_path, data):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[kernel]\ntype = matern52\nlengthscale = 0.2\n"
                   "[likelihood]\nsigma_n = 0.4\n[optimizer]\noptimize = true\nmax_evals = 15\nfix = sigma_n\n")
    rep = tmp_path / "r.csv"
    assert main(["fit", str(data), "--config", str(cfg), "--report", str(rep)]) == 0
    r = report(rep)
    assert r["kernel"] == "matern52"
    assert float(r["theta.lik.log_sigma_n"]) == pytest.approx(np.log(0.4))
    assert int(r["opt_evals"]) <= 16


def test_cross_validation_is_deterministic(tmp_path):
    d = tmp_path / "s.csv"
    main(["simulate", "--generator", "studentt", "--n", "100", "--seed", "0", "--out", str(d)])
    out = []
    for i in range(2):
        rep = tmp_path / f"r{i}.csv"
        assert main(["fit", str(d), "--lik", "studentt", "--nu", "3", "--sigma-n", "0.5",
                     "--lengthscale", "0.1", "--sigma-f", "2", "--infer", "kl", "--cv", "5",
                     "--report", str(rep)]) == 0
        r = report(rep)
        out.append((r["cv_rmse"], r["cv_nlpd"]))
    assert out[0] == out[1]


def test_bench_empty_grid(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bench", "--n", "", "--out", str(out)]) == 0
    assert out.read_text() == ""


def test_bench_small(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bench", "--n", "50,100", "--reps", "2", "--interp", "20", "--out", str(out)]) == 0
    r = rows(out)
    assert {x["method"] for x in r} == {"statespace", "interp-20", "dense"}
    assert all(float(x["max_abs_mean_diff"]) < 1e-6 for x in r if x["method"] == "statespace")


def test_check_passes(capsys):
    assert main(["check", "--n", "100"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 12 and all(line.startswith("PASS") for line in lines)


@pytest.mark.parametrize(
    "argv",
    [
        ["fit", "missing.csv"],
        ["fit", "{data}", "--kernel", "matern72"],
        ["fit", "{data}", "--lik", "poisson"],
        ["fit", "{data}", "--fix", "bogus", "--optimize"],
    ],
)
def test_errors_exit_2(argv, data, capsys):
    argv = [a.replace("{data}", str(data)) for a in argv]
    assert main(argv) == 2
    assert capsys.readouterr().err.startswith("error: ")


def test_oracle_cap(tmp_path, data):
    assert main(["fit", str(data), "--oracle", "dense", "--oracle-cap", "10",
                 "--report", str(tmp_path / "r.csv")]) == 2


def test_parse_k():
    assert _parse_k("20") == 20 and _parse_k("K=15") == 15 and _parse_k("k=7") == 7
    import argparse

    with pytest.raises(argparse.ArgumentTypeError):
        _parse_k("K=ten")


def test_verbose_after_subcommand(capsys, data, tmp_path):
    assert main(["fit", str(data), "-v", "--report", str(tmp_path / "r.csv")]) == 0
    assert "level=INFO" in capsys.readouterr().err
