import json

import numpy as np
import pytest

from gpcausal import cli
from gpcausal.cli_io import (
    ColumnBindings,
    PlotSeries,
    make_meta,
    model_from_dict,
    model_to_dict,
    parse_time_value,
    read_csv,
    to_records,
    write_dataset_csv,
    write_report,
)
from gpcausal.errors import InputError, InsufficientDataError, NumericalError
from gpcausal.gp_core import Dataset, fit, posterior
from gpcausal.simulations import SimReport


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def rd_csv(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, 200)
    y = 1.5 * (x - 0.5) + 3 * (x >= 0.5) + rng.normal(0, 0.5, 200)
    lines = ["x,y"] + [f"{float(a)!r},{float(b)!r}" for a, b in zip(x, y)]
    return write(tmp_path / "rd.csv", "\n".join(lines) + "\n")


@pytest.fixture
def arm_csv(tmp_path):
    rng = np.random.default_rng(1)
    x = rng.normal(size=80)
    d = (np.arange(80) % 2).astype(int)
    y = np.sin(x) + 3 * d + rng.normal(0, 0.3, 80)
    lines = ["x,d,y"] + [f"{float(a)!r},{b},{float(c)!r}" for a, b, c in zip(x, d, y)]
    return write(tmp_path / "arms.csv", "\n".join(lines) + "\n")


@pytest.fixture
def its_csv(tmp_path):
    rng = np.random.default_rng(2)
    lines = ["month,y"]
    for i in range(60):
        year, month = 2015 + i // 12, i % 12 + 1
        y = 0.1 * i + 2 * np.sin(2 * np.pi * i / 12) + 5 * (i >= 48) + rng.normal(0, 0.5)
        lines.append(f"{year}-{month:02d},{float(y)!r}")
    return write(tmp_path / "its.csv", "\n".join(lines) + "\n")


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


# -- reading -------------------------------------------------------------------------

def test_missing_outcome_row_dropped(tmp_path):
    p = write(tmp_path / "a.csv", "x,y\n1,2\n2,\n3,5\n")
    data, dropped = read_csv(p, ColumnBindings("y", ("x",)))
    assert data.n == 2 and dropped == 1


def test_header_only_file(tmp_path):
    with pytest.raises(InsufficientDataError):
        read_csv(write(tmp_path / "a.csv", "x,y\n"), ColumnBindings("y", ("x",)))


def test_unparseable_cell_reports_row_and_column(tmp_path):
    p = write(tmp_path / "a.csv", "x,y\n1,2\n2,abc\n")
    with pytest.raises(InputError, match=r"row 3.*'y'"):
        read_csv(p, ColumnBindings("y", ("x",)))


def test_missing_column_and_file(tmp_path):
    p = write(tmp_path / "a.csv", "x,y\n1,2\n")
    with pytest.raises(InputError, match="z"):
        read_csv(p, ColumnBindings("z", ("x",)))
    with pytest.raises(InputError):
        read_csv(tmp_path / "nope.csv", ColumnBindings("y", ("x",)))


def test_csv_round_trip(tmp_path, arm_csv):
    b = ColumnBindings("y", ("x",), treatment="d")
    data, _ = read_csv(arm_csv, b)
    out = tmp_path / "copy.csv"
    write_dataset_csv(data, b, out)
    again, _ = read_csv(out, b)
    np.testing.assert_allclose(again.X, data.X, rtol=1e-15)
    np.testing.assert_allclose(again.y, data.y, rtol=1e-15)
    np.testing.assert_array_equal(again.treat, data.treat)


def test_time_values():
    assert parse_time_value("2020-01") == 12 * 2020
    assert parse_time_value("2020-12") - parse_time_value("2020-11") == 1
    assert parse_time_value("7") == 7.0
    with pytest.raises(ValueError):
        parse_time_value("7.5")
    with pytest.raises(ValueError):
        parse_time_value("2020-13")


# -- writing ---------------------------------------------------------------------------

def test_plot_series_invariants():
    with pytest.raises(ValueError):
        PlotSeries("s", [0.0], [1.0], [2.0], [3.0], "cef")
    with pytest.raises(ValueError):
        PlotSeries("s", [0.0, 1.0], [1.0], [0.0], [2.0], "cef")


def test_empty_results_file(tmp_path):
    write_report([], "json", tmp_path / "e.json", make_meta(3, {}))
    doc = json.loads((tmp_path / "e.json").read_text())
    assert doc["results"] == [] and set(doc["meta"]) == {"seed", "config_hash", "tool_version"}


def test_six_csv_rows(tmp_path):
    rows = [{"setting": s, "estimator": e, "coverage": 0.95} for s in (1, 2) for e in "abc"]
    write_report(SimReport("rd_latent", rows=rows), "csv", tmp_path / "r.csv")
    assert len((tmp_path / "r.csv").read_text().strip().splitlines()) == 1 + 6


def test_json_exact_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    m = fit(Dataset(rng.normal(size=20), rng.normal(size=20)))
    p = posterior(m, np.linspace(-1, 1, 5))
    s = PlotSeries.from_posterior("post", np.linspace(-1, 1, 5), p, "cef")
    write_report([s], "json", tmp_path / "p.json")
    back = json.loads((tmp_path / "p.json").read_text())["results"][0]
    assert back["mean"] == s.mean.tolist() and back["upper"] == s.upper.tolist()


def test_model_round_trip():
    rng = np.random.default_rng(4)
    m = fit(Dataset(rng.normal(size=25), rng.normal(size=25)), "linear + gaussian(auto)")
    m2 = model_from_dict(json.loads(json.dumps(to_plain(model_to_dict(m, ("x",))))))
    T = np.linspace(-2, 2, 6)
    np.testing.assert_array_equal(posterior(m2, T).mean, posterior(m, T).mean)


def to_plain(d):
    from gpcausal.cli_io import _plain

    return _plain(d)


def test_unwritable_path(tmp_path):
    with pytest.raises(InputError):
        write_report([], "json", tmp_path / "missing" / "x.json")


def test_to_records_rejects_unknown():
    with pytest.raises(TypeError):
        to_records(object())


# -- CLI -------------------------------------------------------------------------------

def test_rd_command(tmp_path, rd_csv):
    out = tmp_path / "rd.json"
    code = run_cli("rd", "--input", rd_csv, "--cutoff", 0.5, "--variant", "gp_causal_trim",
                   "--bandwidth", 0.005, "--trim", "0.4,0.6", "-o", out)
    assert code == 0
    r = json.loads(out.read_text())["results"][0]
    assert r["variant"] == "gp_causal_trim" and r["trim_lower"] == 0.4 and abs(r["effect"] - 3) < 1


def test_fit_then_predict_nesting(tmp_path, arm_csv):
    model = tmp_path / "m.json"
    assert run_cli("fit", "--input", arm_csv, "--covariates", "x", "-o", model) == 0
    out = tmp_path / "p.json"
    assert run_cli("predict", "--model", model, "--grid", "-2:2:9", "-o", out) == 0
    series = {s["kind"]: s for s in json.loads(out.read_text())["results"]}
    assert set(series) == {"cef", "predictive"}
    assert np.all(np.array(series["predictive"]["lower"]) < np.array(series["cef"]["lower"]))
    assert np.all(np.array(series["cef"]["upper"]) < np.array(series["predictive"]["upper"]))


def test_ate_and_cate_commands(tmp_path, arm_csv):
    out = tmp_path / "ate.csv"
    assert run_cli("ate", "--input", arm_csv, "--estimand", "att", "--format", "csv", "-o", out) == 0
    assert out.read_text().startswith("estimand,")
    out = tmp_path / "cate.json"
    assert run_cli("cate", "--input", arm_csv, "--grid", "-1,0,1", "-o", out) == 0
    assert len(json.loads(out.read_text())["results"]) == 3


def test_its_command_with_iso_months(tmp_path, its_csv):
    out = tmp_path / "its.json"
    assert run_cli("its", "--input", its_csv, "--time", "month", "--t-treat", "2019-01", "-o", out) == 0
    rows = json.loads(out.read_text())["results"]
    assert len(rows) == 12 and abs(np.mean([r["effect"] for r in rows]) - 5) < 1.5


def test_config_file_with_flag_override(tmp_path, rd_csv):
    cfg = write(tmp_path / "run.cfg", f"command = rd\ninput = {rd_csv}\ncutoff = 0.5\n"
                                      "variant = gp_causal  # comment\nbandwidth = 0.005\n")
    out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
    assert run_cli("--config", cfg, "-o", out1) == 0
    assert run_cli("rd", "--config", cfg, "--variant", "gp_rd", "-o", out2) == 0
    assert json.loads(out1.read_text())["results"][0]["variant"] == "gp_causal"
    assert json.loads(out2.read_text())["results"][0]["variant"] == "gp_rd"


def test_simulate_byte_identical(tmp_path):
    args = ["simulate", "--design", "rd_total_random", "--n", 100, "--reps", 4, "--seed", 7, "--sigmas", "1,2"]
    a, b, c = tmp_path / "a.json", tmp_path / "b.json", tmp_path / "c.json"
    assert run_cli(*args, "-o", a) == 0
    assert run_cli(*args, "-o", b) == 0
    assert run_cli(*args, "--n-jobs", 2, "-o", c) == 0
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()


def test_simulate_without_seed_emits_one(tmp_path):
    out = tmp_path / "s.json"
    assert run_cli("simulate", "--design", "rd_total_random", "--n", 50, "--reps", 2, "--sigmas", 1, "-o", out) == 0
    assert isinstance(json.loads(out.read_text())["meta"]["seed"], int)


def test_stdout_output(capsys, rd_csv):
    assert run_cli("rd", "--input", rd_csv, "--cutoff", 0.5) == 0
    assert json.loads(capsys.readouterr().out)["results"][0]["variant"] == "gp_rd"


# exit-code corpus: (argv builder, expected code)
def _corpus(tmp_path, rd_csv):
    bad_num = write(tmp_path / "bad.csv", "x,y\n0.1,1\n0.2,oops\n")
    header = write(tmp_path / "header.csv", "x,y\n")
    flat = write(tmp_path / "flat.csv", "x,y\n" + "".join(f"{i / 10},1\n" for i in range(10)))
    bad_cfg = write(tmp_path / "bad.cfg", "command = rd\nbogus = 1\n")
    no_eq = write(tmp_path / "noeq.cfg", "command rd\n")
    not_json = write(tmp_path / "model.json", "{not json")
    monthly = write(tmp_path / "monthly.csv", "t,y\n" + "".join(f"{i},{i % 5}\n" for i in range(30)))
    return [
        ([], 1),
        (["frobnicate"], 1),
        (["rd", "--input", rd_csv], 1),  # missing cutoff
        (["rd", "--input", rd_csv, "--cutoff", "abc"], 1),
        (["rd", "--input", rd_csv, "--cutoff", 0.5, "--variant", "nope"], 1),
        (["rd", "--input", rd_csv, "--cutoff", 0.5, "--level", 1.5], 1),
        (["rd", "--input", rd_csv, "--cutoff", 0.5, "--variant", "gp_causal_trim", "--trim", "0.6,0.4"], 1),
        (["rd", "--input", rd_csv, "--cutoff", 0.5, "--variant", "gp_causal_trim", "--trim", "0.55,0.6"], 1),
        (["simulate"], 1),
        (["simulate", "--design", "rd_total_random", "--sigmas", 5, "--seed", 1], 1),
        (["its", "--input", monthly, "--t-treat", "2020-13"], 1),
        (["fit", "--input", rd_csv, "--kernel", "laplace(1)"], 1),
        (["--config", bad_cfg], 1),
        (["--config", no_eq], 1),
        (["--config", tmp_path / "missing.cfg"], 1),
        (["rd", "--input", tmp_path / "missing.csv", "--cutoff", 0.5], 2),
        (["rd", "--input", bad_num, "--cutoff", 0.15], 2),
        (["rd", "--input", header, "--cutoff", 0.5], 2),
        (["rd", "--input", rd_csv, "--cutoff", 5.0], 2),
        (["rd", "--input", rd_csv, "--outcome", "zz", "--cutoff", 0.5], 2),
        (["fit", "--input", flat], 2),
        (["its", "--input", rd_csv, "--time", "x", "--t-treat", 20], 2),  # fractional time
        (["its", "--input", monthly, "--t-treat", 5], 2),  # pre-period too short
        (["ate", "--input", rd_csv, "--treatment", "x"], 2),
        (["predict", "--model", not_json, "--grid", "0:1:3"], 2),
        (["predict", "--model", tmp_path / "nope.json", "--grid", "0:1:3"], 2),
        (["rd", "--input", rd_csv, "--cutoff", 0.5, "-o", tmp_path / "no" / "dir.json"], 2),
    ]


def test_exit_code_corpus(tmp_path, rd_csv, capsys):
    for argv, expected in _corpus(tmp_path, rd_csv):
        code = run_cli(*argv)
        err = capsys.readouterr().err
        assert code == expected, (argv, err)
        if expected:
            assert err.strip(), argv


def test_numerical_error_exit_code(monkeypatch, rd_csv, capsys):
    def boom(*a, **k):
        raise NumericalError("factorization failed")

    monkeypatch.setattr(cli, "rd_estimate", boom)
    assert run_cli("rd", "--input", rd_csv, "--cutoff", 0.5) == 3
    assert "factorization failed" in capsys.readouterr().err
