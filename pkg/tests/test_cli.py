import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mesreg.cli import EXIT_DATA, EXIT_ESTIMATION, EXIT_OK, EXIT_USAGE, main
from mesreg.datasets import path

FIT_EXAMPLE = str(path("fit_example.csv"))
ERC_ASSETS = str(path("erc_assets.csv"))
FIT_ARGS = ["fit", "--input", FIT_EXAMPLE, "--y", "y", "--x", "x", "--zv", "1,z1,z2",
            "--zm", "1,z1,z2"]


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def listing(root):
    return sorted(p.relative_to(root).as_posix() for p in root.rglob("*"))


def test_fit_bundled_example(workdir, capsys):
    assert main(FIT_ARGS + ["--beta", "0.9", "--out", "res"]) == EXIT_OK
    doc = json.loads((workdir / "res" / "fit.json").read_text())
    assert doc["schema_version"] == 1 and doc["n"] == 500
    assert len(doc["parameters"]) == 6
    assert all(isinstance(p["se"], float) and p["se"] > 0 for p in doc["parameters"])
    assert all(p["ci_lower"] <= p["estimate"] <= p["ci_upper"] for p in doc["parameters"])
    with open(workdir / "res" / "fitted.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 500 and set(rows[0]) == {"t", "x", "y", "var", "mes", "exceed"}
    assert sum(int(r["exceed"]) for r in rows) == doc["exceedances"]
    out = capsys.readouterr()
    assert "v:z1" in out.out and out.err == ""
    assert listing(workdir) == ["res", "res/fit.json", "res/fitted.csv"]


def test_fit_without_out_writes_nothing(workdir):
    assert main(FIT_ARGS + ["--beta", "0.9"]) == EXIT_OK
    assert listing(workdir) == []


def test_missing_beta_is_usage_error(capsys):
    with pytest.raises(SystemExit) as err:
        main(FIT_ARGS)
    assert err.value.code == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_out_of_range_beta(capsys):
    with pytest.raises(SystemExit) as err:
        main(FIT_ARGS + ["--beta", "1.5"])
    assert err.value.code == EXIT_USAGE
    assert "strictly between 0 and 1" in capsys.readouterr().err


def test_data_error_exit_code(workdir, capsys):
    (workdir / "bad.csv").write_text("y,x,z\n1,2,3\n4,nan,6\n" + "1,2,3\n" * 20)
    code = main(["fit", "--input", "bad.csv", "--y", "y", "--x", "x", "--zv", "1,z",
                 "--zm", "1,z", "--beta", "0.9"])
    assert code == EXIT_DATA
    assert "row 2" in capsys.readouterr().err
    assert main(FIT_ARGS[:-1] + ["1,zz", "--beta", "0.9"]) == EXIT_DATA


def test_estimation_error_exit_code(workdir):
    rng = np.random.default_rng(0)
    a = rng.normal(size=(100, 3))
    a = np.c_[a, 2 * a[:, 2]]
    np.savetxt(workdir / "rd.csv", a, delimiter=",", header="y,x,z,w", comments="")
    code = main(["fit", "--input", "rd.csv", "--y", "y", "--x", "x", "--zv", "1,z,w",
                 "--zm", "1", "--beta", "0.9"])
    assert code == EXIT_ESTIMATION


def test_simulate_byte_identical(workdir, capsys):
    args = ["simulate", "--beta", "0.9", "--n", "400", "--reps", "6", "--seed", "1"]
    assert main(args + ["--out", "a"]) == EXIT_OK
    assert main(args + ["--out", "b"]) == EXIT_OK
    assert (workdir / "a/summary.csv").read_bytes() == (workdir / "b/summary.csv").read_bytes()
    assert (workdir / "a/summary.json").read_bytes() == (workdir / "b/summary.json").read_bytes()
    text = (workdir / "a/summary.csv").read_text()
    assert text.splitlines()[0] == "parameter,bias,sd_emp,sd_asy_mean,coverage,n_fail"
    assert capsys.readouterr().out == text + text


def test_simulate_single_rep_marks_coverage_absent(workdir, capsys):
    assert main(["simulate", "--beta", "0.9", "--n", "400", "--reps", "1"]) == EXIT_OK
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert all(r["coverage"] == "NA" and r["sd_emp"] == "NA" for r in rows)


def test_seed_environment_override(workdir, monkeypatch, capsys):
    args = ["simulate", "--beta", "0.9", "--n", "300", "--reps", "3"]
    main(args + ["--seed", "5"])
    by_flag = capsys.readouterr().out
    monkeypatch.setenv("MESREG_SEED", "5")
    main(args + ["--seed", "99"])
    assert capsys.readouterr().out == by_flag


def test_brs_default_window(workdir):
    n = 400
    rng = np.random.default_rng(1)
    a = np.c_[rng.normal(size=(n, 2)), rng.gamma(2.0, size=n)]
    np.savetxt(workdir / "b.csv", a, delimiter=",", header="y,x,z", comments="")
    assert main(["brs", "--input", "b.csv", "--y", "y", "--x", "x", "--zm", "1,z",
                 "--beta", "0.95", "--out", "o"]) == EXIT_OK
    doc = json.loads((workdir / "o/brs.json").read_text())
    assert doc["window"] == 250
    rows = (workdir / "o/y_star.csv").read_text().splitlines()
    assert len(rows) == 1 + n - 250 and rows[1].startswith("250,")


def test_decompose_reports(workdir):
    rng = np.random.default_rng(2)
    n = 800
    z = rng.gamma(2.0, size=n)
    comp = (1 + 0.5 * z)[:, None] * rng.standard_t(5, size=(n, 3))
    x = comp @ [0.2, 0.3, 0.5]
    np.savetxt(workdir / "d.csv", np.c_[x, comp, z], delimiter=",",
               header="x,a,b,c,z", comments="")
    assert main(["decompose", "--input", "d.csv", "--x", "x", "--components", "a,b,c",
                 "--weights", "0.2,0.3,0.5", "--zv", "1,z", "--zm", "1,z", "--beta", "0.9",
                 "--out", "o"]) == EXIT_OK
    doc = json.loads((workdir / "o/decompose.json").read_text())
    assert 1 + len(doc["components"]) == 4
    assert [c["outcome"] for c in doc["components"]] == ["a", "b", "c"]
    assert max(abs(r) for r in doc["reconciliation"]) < 1e-10
    assert main(["decompose", "--input", "d.csv", "--x", "x", "--components", "a,q",
                 "--zv", "1", "--zm", "1", "--beta", "0.9"]) == EXIT_DATA


def test_erc_weights_sum_to_one(workdir, capsys):
    assert main(["erc", "--input", ERC_ASSETS, "--assets", "asset1,asset2,asset3,asset4,asset5",
                 "--z", "1,vol_lag", "--start", "1720", "--step", "8",
                 "--out", "o"]) == EXIT_OK
    with open(workdir / "o/weights.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    for r in rows:
        w = [float(r[f"w_asset{i}"]) for i in range(1, 6)]
        assert abs(sum(w) - 1.0) <= 1e-9 and min(w) >= 0
    doc = json.loads((workdir / "o/metrics.json").read_text())
    assert doc["beta"] == 0.975 and set(doc["erc"]) == set(doc["ew"])
    assert "ERC" in capsys.readouterr().out
    assert listing(workdir) == ["o", "o/losses.csv", "o/metrics.json", "o/weights.csv"]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mesreg", "--version"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "mesreg" in res.stdout
