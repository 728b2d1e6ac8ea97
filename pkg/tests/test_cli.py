import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from hdcpd.cli import (EXIT_INVALID, EXIT_MISSING_COLUMN, EXIT_MISSING_FILE, EXIT_NO_ROWS,
                       EXIT_OK, EXIT_USAGE, EXIT_ZERO_VARIANCE, MissingColumnError,
                       MissingFileError, NoUsableRowsError, RunSpec, SpecError,
                       ZeroVarianceError, load_csv, load_grid, main, read_config,
                       run_pipeline, standardize_response)
from hdcpd.core import Dataset

DATA = Path(__file__).parent / "data"
COVS = ",".join(f"x{j}" for j in range(1, 9))
# regenerate with the commands in README ("Golden files"); never edit by hand
GOLDEN_FIXED = ["detect", "--input", "golden_input.csv", "--response", "y", "--covariates", COVS,
                "--label-column", "t", "--method", "dp-lr", "--lambda", "1", "--gamma", "15",
                "--zeta", "1", "--min-seg-len", "5", "--no-timings"]
GOLDEN_CV = ["detect", "--input", "golden_input.csv", "--response", "y", "--label-column", "t",
             "--method", "dp-lr", "--cv", "--min-seg-len", "5", "--stride", "2", "--no-timings"]


def write_csv(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    return path


def run_cli(argv, capsys):
    code = main(argv)
    return code, capsys.readouterr().out


# loading and standardization

def test_load_csv_drops_incomplete_rows(tmp_path):
    f = write_csv(tmp_path / "a.csv", ["y", "a", "b"],
                  [[1, 2, 3], [2, "", 4], [3, 1, 1], [4, 5, "x"], [5, 0, 2], [6, 1, 7]])
    d = load_csv(f, "y", ["b", "a"])
    assert (d.dataset.n, d.dataset.p, d.dropped) == (4, 2, 2)
    assert d.covariates == ["b", "a"]
    np.testing.assert_array_equal(d.dataset.X[0], [3, 2])
    f = write_csv(tmp_path / "b.csv", ["y", "a"], [[1, 2], [2, ""], [3, 1], [4, 5], [5, 0]])
    d = load_csv(f, "y")
    assert d.dataset.n == 4 and d.dropped == 1


def test_load_csv_errors(tmp_path):
    f = write_csv(tmp_path / "a.csv", ["y", "a"], [[1, 2], [2, 3]])
    with pytest.raises(MissingColumnError):
        load_csv(f, "z")
    with pytest.raises(MissingColumnError):
        load_csv(f, "y", ["q"])
    with pytest.raises(MissingFileError):
        load_csv(tmp_path / "nope.csv", "y")
    g = write_csv(tmp_path / "g.csv", ["y", "a"], [[1, ""], ["", 2]])
    with pytest.raises(NoUsableRowsError):
        load_csv(g, "y")
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(NoUsableRowsError):
        load_csv(tmp_path / "empty.csv", "y")


def test_load_csv_realistic_shape(tmp_path, rng):
    # 365 days, 18 covariates, 22 days with a gap somewhere
    vals = rng.standard_normal((365, 19)).round(4).astype(object)
    gaps = rng.choice(365, 22, replace=False)
    vals[gaps, rng.integers(0, 19, 22)] = ""
    header = ["date", "y"] + [f"c{j}" for j in range(18)]
    rows = [[f"d{t}"] + list(vals[t]) for t in range(365)]
    d = load_csv(write_csv(tmp_path / "aq.csv", header, rows), "y", label_column="date")
    assert (d.dataset.n, d.dataset.p, d.dropped) == (343, 18, 22)
    assert len(d.labels) == 343 and "date" not in d.covariates


def test_quoted_fields(tmp_path):
    f = tmp_path / "q.csv"
    f.write_text('"y","a b"\n"1.5","2"\n"2.5","4"\n"0","1"\n')
    d = load_csv(f, "y")
    assert d.covariates == ["a b"] and d.dataset.y.tolist() == [1.5, 2.5, 0.0]


def test_standardize_response():
    X = np.ones((4, 1))
    y = np.array([0.0, 0.0, 4.0, 4.0]) * (2 / np.std([0, 0, 4, 4], ddof=1))
    out, sd = standardize_response(Dataset(X, y))
    assert sd == pytest.approx(2.0)
    np.testing.assert_allclose(out.y, y / 2)
    assert out.X is X or np.array_equal(out.X, X)
    z = np.array([1.0, -1.0, 1.0, -1.0]) / np.std([1, -1, 1, -1], ddof=1)
    out, sd = standardize_response(Dataset(X, z))
    assert sd == pytest.approx(1.0) and np.allclose(out.y, z)
    with pytest.raises(ZeroVarianceError):
        standardize_response(Dataset(X, np.full(4, 3.0)))


def test_runspec_validation():
    with pytest.raises(SpecError):
        RunSpec("a.csv", "y", method="dp", lam=1.0)
    with pytest.raises(SpecError):
        RunSpec("a.csv", "y", method="dp-lr", lam=1.0, gamma=1.0)
    with pytest.raises(SpecError):
        RunSpec("a.csv", "y", method="pelt", lam=1.0, gamma=1.0)
    with pytest.raises(SpecError):
        RunSpec("a.csv", "y", method="binseg", cv=True)
    RunSpec("a.csv", "y", method="dp-lr", cv=True)


def test_grid_and_config_files(tmp_path):
    g = tmp_path / "g.txt"
    g.write_text("lambdas=1,2\ngammas=3  # comment\nzetas=0.5\n")
    grid = load_grid(g)
    assert list(grid.lambdas) == [1, 2] and list(grid.gammas) == [3] and list(grid.zetas) == [0.5]
    j = tmp_path / "g.json"
    j.write_text(json.dumps({"lambdas": [1], "gammas": [2]}))
    assert load_grid(j).zetas is None
    j.write_text(json.dumps({"lambdas": [1]}))
    with pytest.raises(SpecError):
        load_grid(j)
    c = tmp_path / "c.cfg"
    c.write_text("# defaults\nmethod = dp\nlambda=2\nstandardize=false\ncv\n")
    assert read_config(c) == ["--method", "dp", "--lambda", "2", "--no-standardize", "--cv"]


# pipeline behaviour

@pytest.fixture()
def sim_csv(tmp_path):
    out = tmp_path / "sim.csv"
    assert main(["simulate", "--n", "120", "--p", "6", "--change-points", "61", "--kappa", "6",
                 "--d0", "2", "--seed", "3", "--output", str(out)]) == EXIT_OK
    return out


def test_huge_gamma_gives_no_changepoints(sim_csv):
    rep = run_pipeline(RunSpec(str(sim_csv), "y", method="dp", lam=1.0, gamma=1e12,
                               min_seg_len=5, stride=5))
    assert rep["k_hat"] == 0 and rep["changepoints"] == []
    assert len(rep["segments"]) == 1 and rep["segments"][0]["end"] == 120


def test_report_contents(sim_csv):
    rep = run_pipeline(RunSpec(str(sim_csv), "y", method="dp-lr", lam=1.0, gamma=10.0,
                               zeta=1.0, min_seg_len=5, label_column="t"))
    assert rep["changepoints"] == [61] and rep["changepoint_labels"] == ["61"]
    assert rep["covariates"] == [f"x{j}" for j in range(1, 7)]
    segs = rep["segments"]
    assert [(s["start"], s["end"]) for s in segs] == [(1, 60), (61, 120)]
    assert set(segs[0]["support"]) >= {"x1", "x2"}
    assert np.sign(segs[0]["coefficients"]["x1"]) == -np.sign(segs[1]["coefficients"]["x1"])
    assert rep["diagnostics"]["nonconverged_fits"] == 0
    assert "wall_seconds" in rep["diagnostics"]
    json.dumps(rep, allow_nan=False)


def test_binseg_and_covariate_scaling(sim_csv):
    rep = run_pipeline(RunSpec(str(sim_csv), "y", method="binseg", lam=1.0, gamma=10.0,
                               min_seg_len=5, standardize_covariates=True))
    assert rep["changepoints"] == [61] and rep["notes"]


def _rescaled_copy(src, dst, factor=None):
    lines = src.read_text().splitlines()
    y = np.array([float(l.split(",")[1]) for l in lines[1:]])
    factor = np.std(y, ddof=1) if factor is None else factor
    out = [lines[0]]
    for l, v in zip(lines[1:], y / factor):
        cells = l.split(",")
        cells[1] = repr(float(v))
        out.append(",".join(cells))
    dst.write_text("\n".join(out) + "\n")
    return dst


@pytest.mark.parametrize("method,extra", [("dp", {}), ("dp-lr", {"zeta": 0.7})])
def test_rescaling_invariance(sim_csv, tmp_path, method, extra):
    kw = dict(method=method, lam=0.8, gamma=6.0, min_seg_len=5, **extra)
    base = run_pipeline(RunSpec(str(sim_csv), "y", **kw))
    pre = _rescaled_copy(sim_csv, tmp_path / "pre.csv")
    prescaled = run_pipeline(RunSpec(str(pre), "y", standardize=False, **kw))
    assert prescaled["changepoints"] == base["changepoints"]
    assert prescaled["segments"] == base["segments"]
    big = _rescaled_copy(sim_csv, tmp_path / "big.csv", factor=1 / 37.5)
    assert run_pipeline(RunSpec(str(big), "y", **kw))["changepoints"] == base["changepoints"]


# command line

def test_exit_codes(tmp_path, sim_csv, capsys):
    code, out = run_cli(["detect", "--input", str(tmp_path / "x.csv"), "--response", "y",
                         "--method", "dp", "--lambda", "1", "--gamma", "1"], capsys)
    assert code == EXIT_MISSING_FILE
    err = json.loads(out)["error"]
    assert err["type"] == "missing_file" and err["exit_status"] == EXIT_MISSING_FILE
    code, out = run_cli(["detect", "--input", str(sim_csv), "--response", "nope",
                         "--method", "dp", "--lambda", "1", "--gamma", "1"], capsys)
    assert code == EXIT_MISSING_COLUMN
    bad = write_csv(tmp_path / "bad.csv", ["y", "a"], [["", 1], [2, ""]])
    code, _ = run_cli(["detect", "--input", str(bad), "--response", "y", "--method", "dp",
                       "--lambda", "1", "--gamma", "1"], capsys)
    assert code == EXIT_NO_ROWS
    flat = write_csv(tmp_path / "flat.csv", ["y", "a"], [[1, 1], [1, 2], [1, 3]])
    code, _ = run_cli(["detect", "--input", str(flat), "--response", "y", "--method", "dp",
                       "--lambda", "1", "--gamma", "1"], capsys)
    assert code == EXIT_ZERO_VARIANCE
    code, out = run_cli(["detect", "--input", str(sim_csv), "--response", "y", "--method", "dp",
                         "--lambda", "1"], capsys)
    assert code == EXIT_INVALID and "--gamma" in json.loads(out)["error"]["message"]
    code, _ = run_cli(["detect", "--input", str(sim_csv), "--response", "y", "--method", "dp",
                       "--lambda", "-1", "--gamma", "1"], capsys)
    assert code == EXIT_INVALID
    code, _ = run_cli(["detect", "--input", str(sim_csv), "--response", "y", "--method", "dp",
                       "--lambda", "1", "--gamma", "1", "--stride", "0"], capsys)
    assert code == EXIT_INVALID
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["detect", "--bogus"]) == EXIT_USAGE
    capsys.readouterr()
    assert len({EXIT_MISSING_FILE, EXIT_MISSING_COLUMN, EXIT_NO_ROWS, EXIT_ZERO_VARIANCE,
                EXIT_INVALID, EXIT_USAGE}) == 6


def test_config_file_and_override(tmp_path, sim_csv):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"input={sim_csv}\nresponse=y\nmethod=dp\nlambda=1\ngamma=1e12\n"
                   "min_seg_len=5\ntimings=false\n")
    out = tmp_path / "r.json"
    assert main(["detect", "--config", str(cfg), "--output", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["k_hat"] == 0
    assert main(["detect", "--config", str(cfg), "--gamma", "10", "--output", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["changepoints"] == [61]
    assert main(["detect", "--config", str(tmp_path / "none.cfg")]) == EXIT_MISSING_FILE


def test_grid_file_and_tune(tmp_path, sim_csv):
    g = tmp_path / "grid.json"
    g.write_text(json.dumps({"lambdas": [0.5, 1.0], "gammas": [5.0, 20.0], "zetas": [1.0]}))
    out = tmp_path / "t.json"
    assert main(["tune", "--input", str(sim_csv), "--response", "y", "--method", "dp-lr",
                 "--grid-file", str(g), "--min-seg-len", "5", "--stride", "5",
                 "--output", str(out)]) == EXIT_OK
    rep = json.loads(out.read_text())
    assert len(rep["table"]) == 4 and set(rep["best"]) == {"lambda", "gamma", "zeta"}
    assert main(["detect", "--input", str(sim_csv), "--response", "y", "--method", "dp",
                 "--cv", "--grid-file", str(g), "--min-seg-len", "5", "--stride", "5",
                 "--output", str(out)]) == EXIT_OK
    rep = json.loads(out.read_text())
    assert rep["tuning"]["mode"] == "cv" and len(rep["tuning"]["table"]) == 4
    assert rep["changepoints"] == [61]


def test_simulate_and_benchmark(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["simulate", "--n", "50", "--p", "3", "--change-points", "26", "--d0", "1",
            "--seed", "11"]
    assert main(args + ["--output", str(a)]) == EXIT_OK
    assert main(args + ["--output", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().splitlines()[0] == "t,y,x1,x2,x3"
    out, tsv = tmp_path / "bench.json", tmp_path / "bench.tsv"
    assert main(["benchmark", "--n", "80", "--p", "5", "--change-points", "41", "--kappas", "6",
                 "--d0s", "2", "--reps", "2", "--methods", "dp,binseg", "--no-cv",
                 "--lambda", "1", "--gamma", "10", "--min-seg-len", "5", "--stride", "5",
                 "--output", str(out), "--tsv", str(tsv)]) == EXIT_OK
    rows = json.loads(out.read_text())["rows"]
    assert [r["method"] for r in rows] == ["dp", "binseg"]
    assert all(r["n_reps"] == 2 and r["failures"] == 0 for r in rows)
    assert len(tsv.read_text().splitlines()) == 3
    code, _ = run_cli(["benchmark", "--methods", "dp", "--no-cv", "--lambda", "1"], capsys)
    assert code == EXIT_INVALID


@pytest.mark.parametrize("argv,golden", [(GOLDEN_FIXED, "golden_report.json"),
                                         (GOLDEN_CV, "golden_cv_report.json")])
def test_golden_report(tmp_path, monkeypatch, argv, golden):
    for f in ("golden_input.csv", golden):
        shutil.copy(DATA / f, tmp_path / f)
    monkeypatch.chdir(tmp_path)
    for run in range(2):
        out = tmp_path / f"out{run}.json"
        assert main(argv + ["--output", str(out)]) == EXIT_OK
        assert out.read_bytes() == (DATA / golden).read_bytes()


def test_golden_input_matches_simulator(tmp_path):
    out = tmp_path / "g.csv"
    main(["simulate", "--n", "160", "--p", "8", "--change-points", "51,111", "--kappa", "6",
          "--d0", "3", "--seed", "7", "--output", str(out)])
    assert out.read_bytes() == (DATA / "golden_input.csv").read_bytes()
