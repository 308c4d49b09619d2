import csv
import json
import subprocess
import sys

import pytest

from megh.cli import main

from conftest import DATA_DIR, LEUKSURV

LEUK_ARGS = [
    "--data", str(LEUKSURV), "--cluster-col", "district", "--hazard-cols", "age,sex,wbc,tpi",
    "--time-cols", "age", "--standardize", "age,wbc,tpi", "--truncate", "wbc=500", "--time-divisor", "365.25",
]
NULL_ARGS = ["--data", str(DATA_DIR / "null_seed1.csv"), "--hazard-cols", "age,sex,wbc,tpi", "--time-cols", "age"]


def _json(path):
    return json.loads(path.read_text())


@pytest.fixture(scope="module")
def leuk_fit_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    code = main(["fit", *LEUK_ARGS, "--model", "megh1", "--baseline", "loglogistic", "--re", "normal",
                 "--seed", "3", "--out", str(out)])
    assert code == 0
    return out


def test_fit_leuksurv(leuk_fit_dir):
    res = _json(leuk_fit_dir / "fit.json")
    assert res["aic"] == pytest.approx(1553.7, abs=1.0)
    sigma = next(r for r in res["parameters"] if r["name"] == "sigma_u")
    assert sigma["estimate"] == pytest.approx(0.144, abs=0.02)
    assert res["converged"] is True and res["n_parameters"] == 8
    age = next(r for r in res["parameters"] if r["name"] == "beta_age")
    assert "estimate_original_scale" in age
    with open(leuk_fit_dir / "coefficients.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["name"] for r in rows] == [r["name"] for r in res["parameters"]]
    man = _json(leuk_fit_dir / "manifest.json")
    assert man["command"] == "fit" and man["exit_code"] == 0 and man["seed"] == 3
    assert {"config", "version", "outputs", "wall_time"} <= set(man)


def test_fit_gh_leuksurv(tmp_path):
    assert main(["fit", *LEUK_ARGS, "--model", "gh", "--baseline", "loglogistic", "--no-se", "--out", str(tmp_path)]) == 0
    assert _json(tmp_path / "fit.json")["aic"] == pytest.approx(1556.4, abs=1.0)


def test_fit_is_deterministic(leuk_fit_dir, tmp_path):
    main(["fit", *LEUK_ARGS, "--model", "megh1", "--baseline", "loglogistic", "--re", "normal",
          "--seed", "3", "--out", str(tmp_path)])
    assert (tmp_path / "fit.json").read_bytes() == (leuk_fit_dir / "fit.json").read_bytes()
    assert (tmp_path / "coefficients.csv").read_bytes() == (leuk_fit_dir / "coefficients.csv").read_bytes()


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MEGH_SEED", "17")
    assert main(["km", *LEUK_ARGS, "--out", str(tmp_path)]) == 0
    assert _json(tmp_path / "manifest.json")["seed"] == 17
    assert main(["km", *LEUK_ARGS, "--seed", "2", "--out", str(tmp_path)]) == 0
    assert _json(tmp_path / "manifest.json")["seed"] == 2


def test_km(tmp_path):
    assert main(["km", *LEUK_ARGS, "--out", str(tmp_path)]) == 0
    with open(tmp_path / "km.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["cluster", "time", "survival", "at_risk"]
    assert len({r["cluster"] for r in rows}) == 24


def test_usage_error_exit_code(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "megh", "fit", *LEUK_ARGS, "--model", "weibull", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "invalid choice" in proc.stderr


def test_validation_exit_code(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("cluster,time,status,x\n1,-1,1,0.5\n1,2,1,0.1\n")
    code = main(["fit", "--data", str(bad), "--hazard-cols", "x", "--out", str(tmp_path)])
    assert code == 3
    err = _json(tmp_path / "manifest.json")["error"]
    assert err["kind"] == "validation" and "rows 0" in err["message"]


def test_weibull_with_time_effects_is_rejected(tmp_path):
    code = main(["fit", *LEUK_ARGS, "--model", "gh", "--fix", "delta=1", "--out", str(tmp_path)])
    assert code == 3


def test_numeric_exit_code(tmp_path, monkeypatch):
    from megh import NumericError
    import megh.cli

    def refuse(*args, **kwargs):
        raise NumericError("reduced fit did not converge")

    monkeypatch.setattr(megh.cli, "lrt_random_effects", refuse)
    assert main(["test-re", *NULL_ARGS, "--out", str(tmp_path)]) == 4
    assert _json(tmp_path / "manifest.json")["error"]["kind"] == "numeric"


def test_simulate_reproduces_fixture(tmp_path):
    code = main(["simulate", "--truth", str(DATA_DIR / "null_truth.json"), "--seed", "1", "--reps", "2",
                 "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "sim_0000.csv").read_bytes() == (DATA_DIR / "null_seed1.csv").read_bytes()
    assert (tmp_path / "sim_0001.csv").exists()


def test_zero_statistic_fixture(tmp_path):
    """sigma_u = 0 data, seed 1: the variance estimate collapses and p = 1."""
    assert main(["test-re", *NULL_ARGS, "--model", "megh1", "--seed", "1", "--no-se", "--out", str(tmp_path)]) == 0
    test = _json(tmp_path / "lrt.json")["test"]
    assert test["statistic"] == 0.0 and test["p_value"] == 1.0


def test_diagnose(tmp_path):
    code = main(["diagnose", *NULL_ARGS, "--model", "megh1", "--baseline", "pgw", "--no-se", "--boot", "3",
                 "--grid", "21", "--starts", "1", "--out", str(tmp_path)])
    assert code == 0
    with open(tmp_path / "gradient.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["u", "delta", "lo", "hi"] and len(rows) == 21
    checks = _json(tmp_path / "manifest.json")["checks"]
    assert checks["gradient_integral"] == pytest.approx(1.0, abs=1e-4)


def test_diagnose_needs_random_effects(tmp_path):
    assert main(["diagnose", *NULL_ARGS, "--model", "gh", "--out", str(tmp_path)]) == 3


def test_study_and_jobs(tmp_path):
    truth = DATA_DIR / "null_truth.json"
    small = tmp_path / "truth.json"
    spec = _json(truth)
    spec.update(n=150, clusters=6)
    small.write_text(json.dumps(spec))
    args = ["study", "--truth", str(small), "--reps", "2", "--fit-models", "gh,megh1", "--no-se", "--seed", "5"]
    assert main([*args, "--jobs", "1", "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--jobs", "2", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "study.json").read_bytes() == (tmp_path / "b" / "study.json").read_bytes()
    assert (tmp_path / "a" / "study.csv").exists()
    assert main([*args[:-2], "--fit-models", "gh,bogus", "--out", str(tmp_path / "c")]) == 3


def test_console_script_version():
    proc = subprocess.run(["megh", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("megh ")
