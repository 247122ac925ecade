import json
import subprocess
import sys

import pytest

from scalelab.cli import main

FAST_FG = {"log_A": [3.0, 6.0], "log_B": [3.0, 6.0], "alpha": [0.5], "beta": [0.5]}
FAST_FT = {"log_A": [3.0, 6.0], "log_E": [0.0], "alpha": [0.5], "beta": [0.5]}


@pytest.fixture
def runs(tmp_path):
    path = tmp_path / "runs.jsonl"
    assert main(["simulate", "--domain", "arxiv", "--seed", "2", "--output", str(path)]) == 0
    return path


def _grid(tmp_path, grid, name="grid.json"):
    p = tmp_path / name
    p.write_text(json.dumps(grid))
    return str(p)


def test_simulate_writes_125_runs(runs):
    lines = runs.read_text().splitlines()
    assert len(lines) == 125 and json.loads(lines[0])["domain"] == "arxiv"


def test_fit_and_predict(tmp_path, runs, capsys):
    out = tmp_path / "fit.json"
    rc = main(["fit", "--family", "forgetting_mult", "--l0-preset", "rewarmed", "--input", str(runs),
               "--output", str(out), "--init-grid", _grid(tmp_path, FAST_FG)])
    assert rc == 0
    res = json.loads(out.read_text())
    assert res["n_records"] == 125 and res["mre"] < 0.01 and res["metadata"]["command"] == "fit"
    cap = capsys.readouterr()
    assert "MRE" in cap.out and "below their baseline" in cap.err
    pred = tmp_path / "pred.csv"
    assert main(["predict", "--input", str(out), "--n", "41000000", "--tokens", "300000", "--p", "0.01",
                 "--output", str(pred)]) == 0
    header, row = pred.read_text().splitlines()
    assert header == "n_params,dft_tokens,p,predicted"
    assert float(row.split(",")[-1]) == pytest.approx(3.2174, abs=0.02)
    assert main(["predict", "--input", str(out), "--runs", str(runs), "--output", str(pred)]) == 0
    assert len(pred.read_text().splitlines()) == 126


def test_missing_l0_is_input_error(runs, capsys):
    assert main(["fit", "--family", "forgetting_mult", "--input", str(runs)]) == 2
    assert "missing L0 table" in capsys.readouterr().err


def test_bad_jsonl_reports_line(tmp_path, runs, capsys):
    bad = tmp_path / "bad.jsonl"
    lines = runs.read_text().splitlines()
    bad.write_text(lines[0] + "\n{not json\n")
    assert main(["fit", "--family", "multiplicative_ft", "--input", str(bad)]) == 2
    assert "bad.jsonl:2" in capsys.readouterr().err


def test_bad_bound(runs, capsys):
    assert main(["fit", "--family", "multiplicative_ft", "--input", str(runs), "--bound", "alpha:1"]) == 2


def test_fit_error_exit_code(monkeypatch, tmp_path, runs, capsys):
    from scalelab import fitting

    def boom(*a, **k):
        raise fitting._Abort("non-finite objective")

    monkeypatch.setattr(fitting, "_run_start", boom)
    rc = main(["fit", "--family", "multiplicative_ft", "--input", str(runs), "--init-grid", _grid(tmp_path, FAST_FT)])
    assert rc == 3
    err = capsys.readouterr().err
    assert "start 0" in err and "start 1" in err


def test_bootstrap_and_extrapolate(tmp_path, runs):
    out, reps = tmp_path / "bs.json", tmp_path / "reps.csv"
    grid = _grid(tmp_path, FAST_FT)
    assert main(["bootstrap", "--family", "multiplicative_ft", "--input", str(runs), "--reps", "2",
                 "--init-grid", grid, "--output", str(out), "--rep-csv", str(reps)]) == 0
    d = json.loads(out.read_text())
    assert len(d["per_rep"]) == 2 and d["metadata"]["mre_reference"].startswith("full original")
    assert reps.read_text().splitlines()[0] == "rep,mre"
    ex = tmp_path / "ex.json"
    assert main(["extrapolate", "--family", "multiplicative_ft", "--input", str(runs), "--init-grid", grid,
                 "--output", str(ex)]) == 0
    rows = json.loads(ex.read_text())["results"]
    assert [(r["setup"], r["n_train"], r["n_test"]) for r in rows] == [("A", 80, 45), ("B", 45, 80)]


def test_curve_and_ucurve(tmp_path, capsys):
    curve = tmp_path / "c.csv"
    assert main(["simulate", "--curve", "--n", "334000000", "--tokens", "3000000", "--p", "0.01",
                 "--output", str(curve)]) == 0
    out = tmp_path / "u.json"
    assert main(["ucurve", "--input", str(curve), "--output", str(out)]) == 0
    u = json.loads(out.read_text())
    assert not u["no_overfitting"] and u["pt_loss_at_bottom"] > 2.60
    assert main(["simulate", "--curve", "--output", str(curve)]) == 2


def test_mix_stats(tmp_path, capsys):
    assert main(["mix-stats", "--n", "200000"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert main(["mix-stats", "--p", "2.0"]) == 2


def test_toy_opt(tmp_path, capsys):
    assert main(["toy-opt", "--output", str(tmp_path / "traj")]) == 0
    assert sorted(p.name for p in (tmp_path / "traj").iterdir()) == ["adam.csv", "adamw.csv", "anchored_adamw.csv"]
    assert "anchored_adamw" in capsys.readouterr().out


def test_report(tmp_path, runs):
    fit_json = tmp_path / "fit.json"
    main(["fit", "--family", "multiplicative_ft", "--input", str(runs), "--output", str(fit_json),
          "--init-grid", _grid(tmp_path, FAST_FT)])
    rep = tmp_path / "report"
    assert main(["report", "--input", str(fit_json), "--runs", str(runs), "--output", str(rep)]) == 0
    names = sorted(p.name for p in rep.iterdir())
    assert names == ["multiplicative_ft_d_slice.csv", "multiplicative_ft_n_slice.csv",
                     "multiplicative_ft_p_slice.csv", "multiplicative_ft_report.json"]
    lines = (rep / "multiplicative_ft_n_slice.csv").read_text().splitlines()
    assert lines[0] == "x,predicted,observed" and len(lines) == 6 and lines[3].split(",")[0] == "334000000"
    assert all(line.split(",")[2] for line in lines[1:])


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "scalelab", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("scalelab ")
