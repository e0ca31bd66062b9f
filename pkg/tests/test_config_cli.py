"""Config schema, CSV ingestion and the command-line surface."""

import json
import subprocess
import sys

import numpy as np
import pytest

from gposmc import cli
from gposmc.config import ingest_csv, load_config, validate_config
from gposmc.errors import ConfigurationError, IngestError
from gposmc.models import ASV, GSV, Gamma, Normal, ThetaVector, simulate
from gposmc.rng import RngStream

# ---------------------------------------------------------------- schema


def test_empty_config_fills_documented_defaults():
    cfg = validate_config({})
    assert cfg.seed == 0
    assert cfg.sections["smc"]["n_particles"] == 2000
    gpo = cfg.sections["gpo"]
    assert (gpo["L"], gpo["K"], gpo["refit_interval"]) == (50, 450, 25)
    assert gpo["zeta"] == 0.01
    assert gpo["direct_budget"] == 2000
    pmh = cfg.sections["pmh"]
    assert (pmh["iterations"], pmh["burnin"]) == (15000, 5000)
    spsa = cfg.sections["spsa"]
    assert (spsa["a"], spsa["c"], spsa["A"]) == (0.001, 0.30, 35.0)
    assert (spsa["alpha_exp"], spsa["gamma_exp"]) == (0.602, 0.101)
    assert spsa["iterations"] == 350
    assert cfg.sections["epsilon_sweep"]["epsilons"] == [0.1, 0.2, 0.3, 0.4, 0.5]
    assert cfg.sections["simulate"]["T"] == 500


def test_unknown_keys_rejected_everywhere():
    with pytest.raises(ConfigurationError, match="modle"):
        validate_config({"modle": {"id": GSV}})
    with pytest.raises(ConfigurationError, match="gpo"):
        validate_config({"gpo": {"LL": 3}})
    with pytest.raises(ConfigurationError, match="n_particle"):
        validate_config({"smc": {"n_particle": 100}})


def test_booleans_are_not_integers():
    with pytest.raises(ConfigurationError):
        validate_config({"smc": {"n_particles": True}})
    with pytest.raises(ConfigurationError):
        validate_config({"seed": True})


def test_wrong_types_rejected_with_location():
    with pytest.raises(ConfigurationError, match="gpo.L"):
        validate_config({"gpo": {"L": "many"}})
    with pytest.raises(ConfigurationError, match="data.path"):
        validate_config({"data": {"path": 3, "value_column": "r"}})


def test_required_keys_enforced():
    with pytest.raises(ConfigurationError, match="data.path"):
        validate_config({"data": {"value_column": "r"}})
    with pytest.raises(ConfigurationError, match="model.id"):
        validate_config({"model": {}})


def test_seed_validation():
    with pytest.raises(ConfigurationError):
        validate_config({"seed": -1})
    with pytest.raises(ConfigurationError):
        validate_config({"seed": "7"})
    assert validate_config({"seed": 7}).seed == 7


def test_schema_version_pinned():
    assert validate_config({"schema_version": 1}).seed == 0
    with pytest.raises(ConfigurationError, match="schema_version"):
        validate_config({"schema_version": 2})


def test_model_id_checked():
    with pytest.raises(ConfigurationError, match="model.id"):
        validate_config({"model": {"id": "garch"}})


def test_prior_block_validation():
    with pytest.raises(ConfigurationError, match="family"):
        validate_config({"prior": {"mu": {"mean": 0.0}}})
    with pytest.raises(ConfigurationError, match="cauchy"):
        validate_config({"prior": {"mu": {"family": "cauchy"}}})
    # constructor kwargs are checked by the distribution itself
    with pytest.raises(ConfigurationError, match="prior.mu"):
        validate_config({"prior": {"mu": {"family": "normal", "location": 0.0}}})


def test_prior_resolution_against_model():
    raw = {
        "model": {"id": GSV},
        "prior": {
            "mu": {"family": "normal", "mean": 0.0, "std": 1.0},
            "phi": {"family": "truncated_normal", "mean": 0.9, "std": 0.05,
                    "lower": -1.0, "upper": 1.0},
            "sigma_v": {"family": "gamma", "shape": 2.0, "rate": 20.0},
        },
    }
    prior = validate_config(raw).prior()
    assert isinstance(prior.components["mu"], Normal)
    assert isinstance(prior.components["sigma_v"], Gamma)

    incomplete = validate_config({"model": {"id": GSV},
                                  "prior": {"mu": {"family": "normal",
                                                   "mean": 0.0, "std": 1.0}}})
    with pytest.raises(ConfigurationError, match="phi"):
        incomplete.prior()

    extra = dict(raw)
    extra["prior"] = dict(raw["prior"])
    extra["prior"]["alpha"] = {"family": "normal", "mean": 0.0, "std": 1.0}
    with pytest.raises(ConfigurationError, match="alpha"):
        validate_config(extra).prior()


def test_search_box_block_validation():
    with pytest.raises(ConfigurationError, match="search_box.mu"):
        validate_config({"search_box": {"mu": [1.0]}})
    with pytest.raises(ConfigurationError, match="search_box.mu"):
        validate_config({"search_box": {"mu": ["a", "b"]}})
    cfg = validate_config({"model": {"id": GSV},
                           "search_box": {"mu": [-1, 1], "phi": [0.5, 0.99],
                                          "sigma_v": [0.05, 1.0]}})
    box = cfg.search_box()
    assert box.names == ("mu", "phi", "sigma_v")
    assert box.lower == (-1.0, 0.5, 0.05)


def test_theta_extraction():
    cfg = validate_config({"model": {"id": GSV,
                                     "parameters": {"mu": 0.2, "phi": 0.9,
                                                    "sigma_v": 0.15}}})
    assert cfg.theta() == ThetaVector(GSV, (0.2, 0.9, 0.15))
    with pytest.raises(ConfigurationError, match="sigma_v"):
        validate_config({"model": {"id": GSV,
                                   "parameters": {"mu": 0.2, "phi": 0.9}}}).theta()
    with pytest.raises(ConfigurationError, match="alpha"):
        validate_config({"model": {"id": GSV,
                                   "parameters": {"mu": 0.2, "phi": 0.9,
                                                  "sigma_v": 0.15,
                                                  "alpha": 1.7}}}).theta()


def test_abc_resolution_per_model():
    assert validate_config({"model": {"id": GSV}}).abc_config() is None
    abc = validate_config({"model": {"id": ASV}}).abc_config()
    assert (abc.epsilon, abc.psi) == (0.10, "arctan")
    abc = validate_config({"model": {"id": GSV},
                           "smc": {"use_abc": True}}).abc_config()
    assert (abc.epsilon, abc.psi) == (0.20, "identity")
    abc = validate_config({"model": {"id": ASV},
                           "smc": {"epsilon": 0.3}}).abc_config()
    assert abc.epsilon == 0.3
    assert validate_config({"model": {"id": ASV},
                            "smc": {"use_abc": False}}).abc_config() is None


def test_var_asset_entries_validated():
    base = {"n_estimation": 100, "assets": [{"id": "a", "value_column": "r"}]}
    with pytest.raises(ConfigurationError, match=r"var.assets\[0\].path"):
        validate_config({"var": base})
    bad = {"n_estimation": 100,
           "assets": [{"id": "a", "path": "x.csv", "value_column": "r",
                       "tickers": "A"}]}
    with pytest.raises(ConfigurationError, match="tickers"):
        validate_config({"var": bad})


def test_load_config_file_errors(tmp_path):
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigurationError, match="not valid JSON"):
        load_config(bad)


def test_resolved_config_echo():
    raw = {"seed": 3, "model": {"id": GSV}, "gpo": {"L": 10}}
    doc = validate_config(raw).resolved("infer-gpo")
    assert doc["schema_version"] == 1
    assert doc["command"] == "infer-gpo"
    assert doc["seed"] == 3
    assert doc["gpo"]["L"] == 10
    assert doc["gpo"]["K"] == 450  # defaults resolved, not just echoed


# ---------------------------------------------------------------- ingestion


def _write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_ingest_returns_mode(tmp_path):
    p = _write_csv(tmp_path / "r.csv", ("ret",), [(0.5,), (-1.25,), (0.0,)])
    series = ingest_csv(p, "ret")
    assert np.array_equal(series.returns, [0.5, -1.25, 0.0])
    assert series.asset == str(p)
    assert ingest_csv(p, "ret", asset="spx").asset == "spx"


def test_ingest_prices_to_log_returns(tmp_path):
    p = _write_csv(tmp_path / "p.csv", ("close",), [(100,), (101.5,), (99.8,)])
    series = ingest_csv(p, "close", mode="prices")
    assert series.returns == pytest.approx(
        [1.4888612493749953, -1.6890615164423473], abs=1e-14)
    # one percent continuous growth is a return of exactly 1 (in percent)
    q = _write_csv(tmp_path / "q.csv", ("close",),
                   [(1.0,), (repr(float(np.exp(0.01))),)])
    assert ingest_csv(q, "close", mode="prices").returns[0] == pytest.approx(1.0, abs=1e-12)
    flat = _write_csv(tmp_path / "f.csv", ("close",), [(42.0,), (42.0,), (42.0,)])
    assert np.array_equal(ingest_csv(flat, "close", mode="prices").returns, [0.0, 0.0])


def test_ingest_nonpositive_prices_report_rows(tmp_path):
    p = _write_csv(tmp_path / "p.csv", ("close",), [(100,), (-5,), (0,), (3,)])
    with pytest.raises(IngestError, match="rows 3, 4"):
        ingest_csv(p, "close", mode="prices")


def test_ingest_column_and_value_errors(tmp_path):
    p = _write_csv(tmp_path / "r.csv", ("ret",), [(0.5,)])
    with pytest.raises(IngestError, match="'close'"):
        ingest_csv(p, "close")
    bad = _write_csv(tmp_path / "b.csv", ("ret",), [(0.5,), ("abc",)])
    with pytest.raises(IngestError, match="row 3"):
        ingest_csv(bad, "ret")
    gap = tmp_path / "g.csv"
    gap.write_text("ret\n0.5\n\n0.2\n")  # blank line is skipped by csv, not an error
    assert ingest_csv(gap, "ret").returns.shape == (2,)
    hole = tmp_path / "h.csv"
    hole.write_text("ret,other\n0.5,1\n,1\n")
    with pytest.raises(IngestError, match="row 3"):
        ingest_csv(hole, "ret")


def test_ingest_date_handling(tmp_path):
    p = _write_csv(tmp_path / "d.csv", ("day", "close"),
                   [("2024-01-02", 100), ("2024-01-03", 101), ("2024-01-04", 103)])
    series = ingest_csv(p, "close", mode="prices", date_column="day")
    # price mode consumes the first row, so dates align with returns
    assert [d.isoformat() for d in series.dates] == ["2024-01-03", "2024-01-04"]
    assert series.returns.shape == (2,)

    back = _write_csv(tmp_path / "back.csv", ("day", "ret"),
                      [("2024-01-03", 0.5), ("2024-01-02", 0.1)])
    with pytest.raises(IngestError, match="row 3"):
        ingest_csv(back, "ret", date_column="day")
    mangled = _write_csv(tmp_path / "m.csv", ("day", "ret"),
                         [("02/01/2024", 0.5)])
    with pytest.raises(IngestError, match="unparseable date"):
        ingest_csv(mangled, "ret", date_column="day")


def test_ingest_degenerate_inputs(tmp_path):
    one = _write_csv(tmp_path / "one.csv", ("close",), [(100,)])
    with pytest.raises(IngestError, match="at least 2"):
        ingest_csv(one, "close", mode="prices")
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(IngestError, match="empty"):
        ingest_csv(empty, "ret")
    inf = _write_csv(tmp_path / "inf.csv", ("ret",), [(0.5,), ("inf",)])
    with pytest.raises(IngestError, match="non-finite"):
        ingest_csv(inf, "ret")
    with pytest.raises(ConfigurationError, match="mode"):
        ingest_csv(one, "close", mode="levels")
    with pytest.raises(IngestError, match="cannot read"):
        ingest_csv(tmp_path / "nope.csv", "ret")


# ---------------------------------------------------------------- CLI

_SIM_CONFIG = {
    "seed": 11,
    "model": {"id": GSV,
              "parameters": {"mu": 0.2, "phi": 0.96, "sigma_v": 0.15}},
    "simulate": {"T": 40},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def sim_config(workdir):
    p = workdir / "sim.json"
    p.write_text(json.dumps(_SIM_CONFIG))
    return p


@pytest.fixture(scope="module")
def returns_csv(workdir):
    """A 60-point simulated return series written as a headed CSV."""
    theta = ThetaVector(GSV, (0.20, 0.96, 0.15))
    _, y = simulate(GSV, theta, 60, RngStream(321).generator())
    p = workdir / "returns.csv"
    p.write_text("ret\n" + "\n".join(repr(float(v)) for v in y) + "\n")
    return p


def _infer_config(returns_csv, **extra):
    raw = {
        "seed": 5,
        "model": {"id": GSV},
        "data": {"path": str(returns_csv), "value_column": "ret"},
        "smc": {"n_particles": 150},
        "gpo": {"L": 8, "K": 5, "direct_budget": 150},
        "pmh": {"iterations": 60, "burnin": 20},
        "spsa": {"iterations": 12},
        "epsilon_sweep": {"epsilons": [0.3, 0.5]},
    }
    raw.update(extra)
    return raw


@pytest.fixture(scope="module")
def gpo_rundir(workdir, returns_csv):
    cfgp = workdir / "infer.json"
    cfgp.write_text(json.dumps(_infer_config(returns_csv)))
    out = workdir / "gpo_run"
    assert cli.main(["infer-gpo", "--config", str(cfgp), "--out", str(out)]) == 0
    return out


def test_cli_simulate_and_rerun_identical(sim_config, workdir):
    out1, out2 = workdir / "sim1", workdir / "sim2"
    assert cli.main(["simulate", "--config", str(sim_config), "--out", str(out1)]) == 0
    assert cli.main(["simulate", "--config", str(sim_config), "--out", str(out2)]) == 0
    body = (out1 / "simulated.csv").read_bytes()
    assert body == (out2 / "simulated.csv").read_bytes()
    lines = body.decode().strip().split("\n")
    assert lines[0] == "t,x,y"
    assert len(lines) == 41
    resolved = json.loads((out1 / "resolved_config.json").read_text())
    assert resolved["seed"] == 11
    assert resolved["command"] == "simulate"


def test_cli_seed_override_changes_draws(sim_config, workdir):
    base, over = workdir / "sim1", workdir / "seed7"
    assert cli.main(["simulate", "--config", str(sim_config), "--out", str(over),
                     "--seed", "7"]) == 0
    assert json.loads((over / "resolved_config.json").read_text())["seed"] == 7
    assert (over / "simulated.csv").read_bytes() != (base / "simulated.csv").read_bytes()
    with pytest.raises(SystemExit):
        cli.main(["simulate", "--seed", "x"])


def test_cli_console_script_matches_in_process(sim_config, workdir):
    out = workdir / "sim_subproc"
    proc = subprocess.run(
        ["gposmc", "simulate", "--config", str(sim_config), "--out", str(out)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (out / "simulated.csv").read_bytes() == \
        (workdir / "sim1" / "simulated.csv").read_bytes()


def test_cli_error_artifact_for_bad_config(workdir, capsys):
    cfgp = workdir / "broken.json"
    cfgp.write_text(json.dumps({"model": {"id": GSV}}))  # no parameters
    out = workdir / "broken_run"
    assert cli.main(["simulate", "--config", str(cfgp), "--out", str(out)]) == 1
    err = json.loads((out / "error.json").read_text())
    assert err["error"]["code"] == "config"
    assert "parameters" in err["error"]["message"]
    assert "error [config]" in capsys.readouterr().err


def test_cli_error_artifact_for_missing_data(workdir):
    cfgp = workdir / "nodata.json"
    cfgp.write_text(json.dumps(_infer_config(workdir / "absent.csv")))
    out = workdir / "nodata_run"
    assert cli.main(["infer-gpo", "--config", str(cfgp), "--out", str(out)]) == 1
    err = json.loads((out / "error.json").read_text())
    assert err["error"]["code"] == "ingest"
    # the resolved config was already written when ingestion failed
    assert "resolved_config.json" in err["incomplete_artifacts"]


def test_cli_malformed_json_reported(workdir):
    cfgp = workdir / "mangled.json"
    cfgp.write_text("{]")
    out = workdir / "mangled_run"
    assert cli.main(["simulate", "--config", str(cfgp), "--out", str(out)]) == 1
    assert json.loads((out / "error.json").read_text())["error"]["code"] == "config"


def test_cli_threads_validation(workdir):
    out = workdir / "threads_run"
    assert cli.main(["simulate", "--out", str(out), "--threads", "0"]) == 1
    assert json.loads((out / "error.json").read_text())["error"]["code"] == "config"


def test_cli_infer_gpo_artifacts(gpo_rundir):
    doc = json.loads((gpo_rundir / "posterior.json").read_text())
    assert doc["model"] == GSV
    assert doc["components"] == ["mu", "phi", "sigma_v"]
    assert set(doc["map"]) == {"mu", "phi", "sigma_v"}
    assert all(doc["marginal_std"][n] > 0 for n in doc["map"])
    assert doc["evaluations"] == 13  # design 8 + acquisition 5
    assert doc["epsilon"] is None  # density model runs the exact filter
    assert doc["backend"] in ("cython", "numpy")
    trace_lines = (gpo_rundir / "trace.ndjson").read_text().strip().split("\n")
    assert len(trace_lines) == 5
    state = json.loads((gpo_rundir / "state.json").read_text())
    assert len(state["values"]) == 13
    assert state["design_size"] == 8


def test_cli_infer_pmh_artifacts(workdir, returns_csv):
    cfgp = workdir / "infer.json"
    out = workdir / "pmh_run"
    assert cli.main(["infer-pmh", "--config", str(cfgp), "--out", str(out)]) == 0
    doc = json.loads((out / "result.json").read_text())
    assert doc["evaluations"] == 60  # one proposal per iteration
    assert 0.0 <= doc["acceptance_rate"] <= 1.0
    assert set(doc["posterior_mean"]) == {"mu", "phi", "sigma_v"}
    rows = (out / "chain.csv").read_text().strip().split("\n")
    assert rows[0] == "iteration,mu,phi,sigma_v,xi,accepted"
    assert len(rows) == 62  # header + initial point + 60 iterations


def test_cli_infer_spsa_artifacts(workdir, returns_csv):
    cfgp = workdir / "infer.json"
    out = workdir / "spsa_run"
    assert cli.main(["infer-spsa", "--config", str(cfgp), "--out", str(out)]) == 0
    doc = json.loads((out / "result.json").read_text())
    assert doc["evaluations"] == 24  # two probes per iteration
    rows = (out / "iterates.csv").read_text().strip().split("\n")
    assert len(rows) == 14  # header + start + 12 iterations


def test_cli_epsilon_sweep_artifacts(workdir, returns_csv):
    cfgp = workdir / "infer.json"
    out = workdir / "sweep_run"
    assert cli.main(["epsilon-sweep", "--config", str(cfgp), "--out", str(out)]) == 0
    doc = json.loads((out / "sweep.json").read_text())
    assert doc["epsilons"] == [0.3, 0.5]
    assert doc["psi"] == "identity"
    assert [r["epsilon"] for r in doc["records"]] == [0.3, 0.5]
    for eps in ("0.3", "0.5"):
        assert (out / f"trace_eps_{eps}.ndjson").exists()


def test_cli_backtest_command(workdir):
    var_csv = workdir / "var.csv"
    var_csv.write_text("period,var,portfolio_return\n"
                       "1,1.0,-2.0\n2,1.0,0.3\n3,0.4,-0.5\n")
    cfgp = workdir / "bt.json"
    cfgp.write_text(json.dumps({"backtest": {"var_csv": str(var_csv),
                                             "alpha": 0.99}}))
    out = workdir / "bt_run"
    assert cli.main(["backtest", "--config", str(cfgp), "--out", str(out)]) == 0
    doc = json.loads((out / "backtest.json").read_text())
    assert doc["violations"] == 2
    assert doc["n"] == 3
    assert doc["expected"] == pytest.approx(0.03)

    broken = workdir / "var_broken.csv"
    broken.write_text("period,var\n1,1.0\n")
    cfgp.write_text(json.dumps({"backtest": {"var_csv": str(broken)}}))
    out2 = workdir / "bt_broken"
    assert cli.main(["backtest", "--config", str(cfgp), "--out", str(out2)]) == 1
    assert json.loads((out2 / "error.json").read_text())["error"]["code"] == "ingest"


def test_cli_export_plot_data(gpo_rundir):
    # the export reuses the run directory and must not clobber its config
    resolved_before = (gpo_rundir / "resolved_config.json").read_bytes()
    assert cli.main(["export-plot-data", "--out", str(gpo_rundir)]) == 0
    assert (gpo_rundir / "resolved_config.json").read_bytes() == resolved_before
    post = (gpo_rundir / "plot_posterior.csv").read_text().strip().split("\n")
    assert post[0] == "component,value,density"
    assert len(post) == 1 + 3 * 201  # a 201-point grid per component
    trace = (gpo_rundir / "plot_trace.csv").read_text().strip().split("\n")
    assert len(trace) == 6
    assert trace[0].startswith("iteration,xi,ei,mu_max,theta_mu")


def test_cli_export_plot_data_empty_dir(workdir):
    out = workdir / "nothing_here"
    assert cli.main(["export-plot-data", "--out", str(out)]) == 1
    assert json.loads((out / "error.json").read_text())["error"]["code"] == "config"


@pytest.mark.slow
def test_cli_var_pipeline_thread_count_invisible(workdir):
    theta = ThetaVector(GSV, (0.20, 0.96, 0.15))
    paths = []
    for j, seed in enumerate((808, 809)):
        _, y = simulate(GSV, theta, 120, RngStream(seed).generator())
        p = workdir / f"asset{j}.csv"
        p.write_text("ret\n" + "\n".join(repr(float(v)) for v in y) + "\n")
        paths.append(p)
    raw = {
        "seed": 4,
        "model": {"id": GSV},
        "smc": {"n_particles": 150},
        "gpo": {"L": 6, "K": 4, "direct_budget": 120},
        "var": {
            "assets": [{"id": f"a{j}", "path": str(p), "value_column": "ret"}
                       for j, p in enumerate(paths)],
            "n_estimation": 100,
            "draws": 2000,
        },
    }
    cfgp = workdir / "var.json"
    cfgp.write_text(json.dumps(raw))
    out1, out4 = workdir / "var_t1", workdir / "var_t4"
    assert cli.main(["var-pipeline", "--config", str(cfgp), "--out", str(out1),
                     "--threads", "1"]) == 0
    assert cli.main(["var-pipeline", "--config", str(cfgp), "--out", str(out4),
                     "--threads", "4"]) == 0
    for name in ("resolved_config.json", "copula.json", "var_series.csv",
                 "backtest.json"):
        assert (out1 / name).read_bytes() == (out4 / name).read_bytes(), name
    doc = json.loads((out1 / "backtest.json").read_text())
    assert doc["n"] == 20
    series = (out1 / "var_series.csv").read_text().strip().split("\n")
    assert series[0] == "period,date,var,portfolio_return,violation"
    assert len(series) == 21
    assert series[1].split(",")[0] == "101"
