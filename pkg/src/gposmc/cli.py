"""Command-line surface.

Every command reads a JSON config (validated before any computation),
writes its artifacts into ``--out``, and records the exact resolved
config and seed alongside them. Failures leave a machine-readable
``error.json`` and a nonzero exit status; artifacts written before the
failure are listed there as incomplete. Artifacts never embed
timestamps or thread counts, so reruns with the same seed are
byte-identical.
"""

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import RunConfig, ingest_csv, load_config, require_section, validate_config
from .errors import ConfigurationError, GposmcError, IngestError
from .models import MODEL_COMPONENTS, ThetaVector, simulate
from .rng import RngStream
from .smc import PosteriorEvaluator

# substream roles shared by the infer commands
_KEY_EVALUATOR = 0
_KEY_ALGORITHM = 1


def _jsonable(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats into
    JSON-safe values (non-finite floats become strings)."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isnan(f):
            return "nan"
        if f == math.inf:
            return "inf"
        if f == -math.inf:
            return "-inf"
        return f
    return obj


def _csv_cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "" if value is None else str(value)


class RunDir:
    """Artifact sink for one command invocation; remembers what it wrote."""

    def __init__(self, out):
        self.out = out
        self.written = []
        os.makedirs(out, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def register(self, name: str):
        if name not in self.written:
            self.written.append(name)

    def write_json(self, name: str, obj):
        text = json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"
        with open(self.path(name), "w") as fh:
            fh.write(text)
        self.register(name)

    def write_csv(self, name: str, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_csv_cell(v) for v in row])
        self.register(name)


def _load_series(cfg: RunConfig):
    data = require_section(cfg, "data")
    return ingest_csv(data["path"], data["value_column"], data["mode"],
                      date_column=data["date_column"], asset=data["asset"])


def _acquisition_config(cfg: RunConfig):
    from .driver import AcquisitionConfig
    from .optim import DirectBudget

    gpo = cfg.sections["gpo"]
    jv = gpo["jitter_variance"]
    jitter = tuple(float(v) for v in jv) if isinstance(jv, list) else (float(jv),)
    return AcquisitionConfig(
        zeta=float(gpo["zeta"]),
        jitter_variances=jitter,
        ei_threshold=(None if gpo["ei_threshold"] is None
                      else float(gpo["ei_threshold"])),
        direct_budget=DirectBudget(max_evaluations=gpo["direct_budget"]),
    )


def _laplace_record(cfg: RunConfig, laplace, evaluations: int):
    from ._backend import BACKEND

    names = MODEL_COMPONENTS[cfg.model_id()]
    smc = cfg.sections["smc"]
    abc = cfg.abc_config()
    return {
        "model": cfg.model_id(),
        "components": list(names),
        "map": dict(zip(names, laplace.theta_map)),
        "map_value": laplace.map_value,
        "marginal_std": dict(zip(names, laplace.marginal_std)),
        "covariance": laplace.covariance,
        "hessian": laplace.hessian,
        "boundary": laplace.boundary,
        "repaired": laplace.repaired,
        "evaluations": evaluations,
        "n_particles": smc["n_particles"],
        "epsilon": None if abc is None else abc.epsilon,
        "psi": None if abc is None else abc.psi,
        "backend": BACKEND,
    }


def _run_gpo(cfg: RunConfig, y, stream: RngStream, trace_path=None):
    from .driver import extract_laplace, gpo_run

    gpo = cfg.sections["gpo"]
    evaluator = PosteriorEvaluator(
        cfg.model_id(), y, cfg.sections["smc"]["n_particles"], cfg.prior(),
        stream.child(_KEY_EVALUATOR), abc=cfg.abc_config())
    if trace_path is not None:
        open(trace_path, "w").close()  # gpo_run appends per iteration
    state, model = gpo_run(
        evaluator, cfg.search_box(), gpo["L"], gpo["K"],
        cfg=_acquisition_config(cfg), refit_interval=gpo["refit_interval"],
        stream=stream.child(_KEY_ALGORITHM), trace_path=trace_path,
        eb_restarts=gpo["eb_restarts"])
    laplace = extract_laplace(model, cfg.search_box())
    return state, laplace


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, rundir: RunDir, threads: int):
    T = cfg.sections["simulate"]["T"]
    theta = cfg.theta()
    rng = RngStream(cfg.seed).child(0).generator()
    x, y = simulate(cfg.model_id(), theta, T, rng)
    rows = [(t, x[t], y[t - 1]) for t in range(1, T + 1)]
    rundir.write_csv("simulated.csv", ("t", "x", "y"), rows)


def cmd_infer_gpo(cfg: RunConfig, rundir: RunDir, threads: int):
    series = _load_series(cfg)
    stream = RngStream(cfg.seed)
    trace_path = rundir.path("trace.ndjson")
    rundir.register("trace.ndjson")
    state, laplace = _run_gpo(cfg, series.returns, stream, trace_path=trace_path)
    rundir.write_json("state.json", state.to_dict())
    rundir.write_json("posterior.json",
                      _laplace_record(cfg, laplace, state.evaluations))


def cmd_infer_pmh(cfg: RunConfig, rundir: RunDir, threads: int):
    from .baselines import PmhConfig, default_pmh_config, pmh_run

    series = _load_series(cfg)
    model_id = cfg.model_id()
    pmh = cfg.sections["pmh"]
    theta0 = (None if pmh["theta0"] is None
              else ThetaVector(model_id, tuple(float(v) for v in pmh["theta0"])))
    if pmh["proposal_covariance"] is None:
        run_cfg = default_pmh_config(model_id, theta0=theta0,
                                     iterations=pmh["iterations"],
                                     burnin=pmh["burnin"])
    else:
        if theta0 is None:
            theta0 = default_pmh_config(model_id).theta0
        run_cfg = PmhConfig(theta0=theta0,
                            proposal_covariance=np.asarray(pmh["proposal_covariance"]),
                            iterations=pmh["iterations"], burnin=pmh["burnin"])

    stream = RngStream(cfg.seed)
    evaluator = PosteriorEvaluator(
        model_id, series.returns, cfg.sections["smc"]["n_particles"], cfg.prior(),
        stream.child(_KEY_EVALUATOR), abc=cfg.abc_config())
    result = pmh_run(evaluator, run_cfg, stream.child(_KEY_ALGORITHM))

    names = MODEL_COMPONENTS[model_id]
    header = ("iteration",) + names + ("xi", "accepted")
    rows = []
    for m in range(result.chain.shape[0]):
        acc = "" if m == 0 else int(result.accepted[m - 1])
        rows.append((m,) + tuple(result.chain[m]) + (result.xi_trace[m], acc))
    rundir.write_csv("chain.csv", header, rows)
    rundir.write_json("result.json", {
        "model": model_id,
        "components": list(names),
        "posterior_mean": dict(zip(names, result.posterior_mean)),
        "posterior_std": dict(zip(names, result.posterior_std)),
        "posterior_covariance": result.posterior_covariance,
        "acceptance_rate": result.acceptance_rate,
        "iterations": run_cfg.iterations,
        "burnin": result.burnin,
        "evaluations": result.evaluations,
    })


def cmd_infer_spsa(cfg: RunConfig, rundir: RunDir, threads: int):
    from .baselines import SpsaConfig, default_pmh_config, spsa_run

    series = _load_series(cfg)
    model_id = cfg.model_id()
    spsa = cfg.sections["spsa"]
    theta0 = (default_pmh_config(model_id).theta0.values
              if spsa["theta0"] is None
              else tuple(float(v) for v in spsa["theta0"]))
    run_cfg = SpsaConfig(a=float(spsa["a"]), c=float(spsa["c"]), A=float(spsa["A"]),
                         alpha_exp=float(spsa["alpha_exp"]),
                         gamma_exp=float(spsa["gamma_exp"]),
                         iterations=spsa["iterations"])

    stream = RngStream(cfg.seed)
    evaluator = PosteriorEvaluator(
        model_id, series.returns, cfg.sections["smc"]["n_particles"], cfg.prior(),
        stream.child(_KEY_EVALUATOR), abc=cfg.abc_config())
    result = spsa_run(evaluator, run_cfg, theta0, cfg.search_box(),
                      stream.child(_KEY_ALGORITHM))

    names = MODEL_COMPONENTS[model_id]
    header = ("iteration",) + names + ("skipped",)
    rows = []
    for n in range(result.iterates.shape[0]):
        skip = "" if n == 0 else int(result.skipped[n - 1])
        rows.append((n,) + tuple(result.iterates[n]) + (skip,))
    rundir.write_csv("iterates.csv", header, rows)
    rundir.write_json("result.json", {
        "model": model_id,
        "components": list(names),
        "final": dict(zip(names, result.final)),
        "iterations": run_cfg.iterations,
        "skipped": int(result.skipped.sum()),
        "evaluations": result.evaluations,
    })


def cmd_epsilon_sweep(cfg: RunConfig, rundir: RunDir, threads: int):
    from .smc import AbcConfig, default_abc_config

    series = _load_series(cfg)
    epsilons = cfg.sections["epsilon_sweep"]["epsilons"]
    if not epsilons or not all(
            isinstance(e, (int, float)) and not isinstance(e, bool) and e > 0
            for e in epsilons):
        raise ConfigurationError("epsilon_sweep.epsilons must be positive numbers")
    base = cfg.abc_config()
    if base is None:
        base = default_abc_config(cfg.model_id())

    stream = RngStream(cfg.seed)
    records = []
    names = MODEL_COMPONENTS[cfg.model_id()]
    for i, eps in enumerate(epsilons):
        sweep_cfg = RunConfig(raw=cfg.raw, seed=cfg.seed, sections=dict(cfg.sections))
        sweep_cfg.sections["smc"] = dict(cfg.sections["smc"])
        sweep_cfg.sections["smc"]["use_abc"] = True
        sweep_cfg.sections["smc"]["epsilon"] = float(eps)
        sweep_cfg.sections["smc"]["psi"] = base.psi
        trace_name = f"trace_eps_{eps:g}.ndjson"
        rundir.register(trace_name)
        state, laplace = _run_gpo(sweep_cfg, series.returns, stream.child(i),
                                  trace_path=rundir.path(trace_name))
        records.append({
            "epsilon": float(eps),
            "map": dict(zip(names, laplace.theta_map)),
            "marginal_std": dict(zip(names, laplace.marginal_std)),
            "map_value": laplace.map_value,
            "boundary": laplace.boundary,
            "evaluations": state.evaluations,
        })
    rundir.write_json("sweep.json", {
        "model": cfg.model_id(),
        "components": list(names),
        "psi": base.psi,
        "epsilons": [float(e) for e in epsilons],
        "records": records,
    })


def cmd_var_pipeline(cfg: RunConfig, rundir: RunDir, threads: int):
    from .copula import fit_copula, fit_margin, var_backtest_series

    var = require_section(cfg, "var")
    model_id = cfg.model_id()
    prior, box = cfg.prior(), cfg.search_box()
    smc, gpo = cfg.sections["smc"], cfg.sections["gpo"]
    abc, acq = cfg.abc_config(), _acquisition_config(cfg)

    assets = var["assets"]
    if len(assets) < 2:
        raise ConfigurationError("var.assets needs at least 2 entries")
    series = [ingest_csv(a["path"], a["value_column"], a["mode"],
                         date_column=a["date_column"], asset=a["id"])
              for a in assets]
    lengths = {s.returns.shape[0] for s in series}
    if len(lengths) != 1:
        raise ConfigurationError(
            f"assets have unequal series lengths {sorted(lengths)}")
    T = lengths.pop()
    n_est = var["n_estimation"]
    if not 0 < n_est < T:
        raise ConfigurationError(
            f"var.n_estimation {n_est} must split the {T}-point series")
    alpha = float(var["alpha"])
    nu_bounds = tuple(float(b) for b in var["nu_bounds"])
    weights = (None if var["weights"] is None
               else np.asarray(var["weights"], dtype=float))

    stream = RngStream(cfg.seed)
    stage1 = stream.child(0)

    def factory(child_stream, y):
        return PosteriorEvaluator(model_id, y, smc["n_particles"], prior,
                                  child_stream, abc=abc)

    def fit_one(i):
        return fit_margin(series[i].asset, series[i].returns, factory, box,
                          gpo["L"], gpo["K"], acq, gpo["refit_interval"],
                          stage1.child(i), n_estimation=n_est)

    # per-asset substreams fix the results regardless of scheduling
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fits = list(pool.map(fit_one, range(len(series))))
    else:
        fits = [fit_one(i) for i in range(len(series))]

    margins = [margin for margin, _, _ in fits]
    copula_model, dof_fit = fit_copula(margins, n_est, nu_bounds=nu_bounds)

    returns_matrix = np.column_stack([s.returns for s in series])
    var_series = var_backtest_series(copula_model, returns_matrix, n_est,
                                     weights, alpha, var["draws"],
                                     stream.child(1))

    margin_records = []
    names = MODEL_COMPONENTS[model_id]
    for (margin, laplace, state), est_margin in zip(fits, copula_model.margins):
        margin_records.append({
            "asset": margin.asset,
            "theta": margin.theta.as_dict(),
            "marginal_std": dict(zip(names, laplace.marginal_std)),
            "map_value": laplace.map_value,
            "boundary": laplace.boundary,
            "evaluations": state.evaluations,
            "sorted_residuals": est_margin.sorted_residuals,
        })
    rundir.write_json("copula.json", {
        "model": model_id,
        "components": list(names),
        "correlation": copula_model.correlation,
        "nu": copula_model.nu,
        "nu_boundary": dof_fit.boundary,
        "nu_log_likelihood": dof_fit.log_likelihood,
        "margins": margin_records,
        "n_estimation": n_est,
        "alpha": alpha,
        "draws": var["draws"],
        "weights": var_series.weights,
    })

    dates = series[0].dates[n_est:] if series[0].dates else None
    rows = []
    for idx in range(var_series.var.shape[0]):
        rows.append((n_est + 1 + idx,
                     dates[idx].isoformat() if dates else "",
                     var_series.var[idx],
                     var_series.portfolio_returns[idx],
                     int(var_series.backtest.flags[idx])))
    rundir.write_csv("var_series.csv",
                     ("period", "date", "var", "portfolio_return", "violation"),
                     rows)
    bt = var_series.backtest
    rundir.write_json("backtest.json", {
        "violations": bt.violations,
        "expected": bt.expected,
        "n": bt.n,
        "alpha": alpha,
        "violation_rate": bt.violations / bt.n,
    })


def cmd_backtest(cfg: RunConfig, rundir: RunDir, threads: int):
    from .copula import backtest

    section = require_section(cfg, "backtest")
    path = section["var_csv"]
    var_values, returns = [], []
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            cols = reader.fieldnames or []
            for col in ("var", "portfolio_return"):
                if col not in cols:
                    raise IngestError(f"{path}: no column {col!r}; header has {cols}")
            for idx, rec in enumerate(reader, start=2):
                try:
                    var_values.append(float(rec["var"]))
                    returns.append(float(rec["portfolio_return"]))
                except (TypeError, ValueError):
                    raise IngestError(f"row {idx}: non-numeric var entry") from None
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from None
    if not var_values:
        raise IngestError(f"{path}: no data rows")

    alpha = float(section["alpha"])
    result = backtest(np.asarray(var_values), np.asarray(returns), alpha)
    rundir.write_json("backtest.json", {
        "violations": result.violations,
        "expected": result.expected,
        "n": result.n,
        "alpha": alpha,
        "violation_rate": result.violations / result.n,
    })


def _export_posterior(rundir: RunDir, doc: dict):
    from scipy.stats import norm

    rows = []
    for name in doc["components"]:
        m, s = doc["map"][name], doc["marginal_std"][name]
        grid = np.linspace(m - 4.0 * s, m + 4.0 * s, 201)
        dens = norm.pdf(grid, loc=m, scale=s)
        rows.extend((name, g, d) for g, d in zip(grid, dens))
    rundir.write_csv("plot_posterior.csv", ("component", "value", "density"), rows)


def _export_trace(rundir: RunDir, records: list, names):
    header = (("iteration", "xi", "ei", "mu_max")
              + tuple(f"theta_{n}" for n in names)
              + tuple(f"map_{n}" for n in names))
    rows = []
    for rec in records:
        xi = rec["xi"] if isinstance(rec["xi"], (int, float)) else ""
        rows.append((rec["k"], xi, rec["ei"], rec["mu_max"])
                    + tuple(rec["theta"]) + tuple(rec["map_point"]))
    rundir.write_csv("plot_trace.csv", header, rows)


def _export_sweep(rundir: RunDir, doc: dict):
    rows = []
    for rec in doc["records"]:
        for name in doc["components"]:
            rows.append((rec["epsilon"], name, rec["map"][name],
                         rec["marginal_std"][name]))
    rundir.write_csv("plot_sweep.csv",
                     ("epsilon", "component", "map", "marginal_std"), rows)


def _export_var(rundir: RunDir, rows: list):
    out = [(r["period"], r["date"], float(r["portfolio_return"]),
            -float(r["var"]), r["violation"]) for r in rows]
    rundir.write_csv("plot_var.csv",
                     ("period", "date", "portfolio_return", "var_return_level",
                      "violation"), out)


def cmd_export_plot_data(cfg: RunConfig, rundir: RunDir, threads: int):
    """Rewrite existing run artifacts in ``--out`` as tidy plot tables."""
    exported = []
    post_path = rundir.path("posterior.json")
    if os.path.exists(post_path):
        with open(post_path) as fh:
            doc = json.load(fh)
        _export_posterior(rundir, doc)
        exported.append("plot_posterior.csv")
        trace_path = rundir.path("trace.ndjson")
        if os.path.exists(trace_path):
            with open(trace_path) as fh:
                records = [json.loads(line) for line in fh if line.strip()]
            _export_trace(rundir, records, doc["components"])
            exported.append("plot_trace.csv")
    sweep_path = rundir.path("sweep.json")
    if os.path.exists(sweep_path):
        with open(sweep_path) as fh:
            doc = json.load(fh)
        _export_sweep(rundir, doc)
        exported.append("plot_sweep.csv")
    var_path = rundir.path("var_series.csv")
    if os.path.exists(var_path):
        with open(var_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        _export_var(rundir, rows)
        exported.append("plot_var.csv")
    if not exported:
        raise ConfigurationError(
            f"nothing to export in {rundir.out!r}: no posterior.json, "
            "sweep.json, or var_series.csv found")


_COMMANDS = {
    "simulate": cmd_simulate,
    "infer-gpo": cmd_infer_gpo,
    "infer-pmh": cmd_infer_pmh,
    "infer-spsa": cmd_infer_spsa,
    "epsilon-sweep": cmd_epsilon_sweep,
    "var-pipeline": cmd_var_pipeline,
    "backtest": cmd_backtest,
    "export-plot-data": cmd_export_plot_data,
}

_HELP = {
    "simulate": "draw one synthetic series from the configured model",
    "infer-gpo": "surrogate-optimisation posterior fit with a Laplace summary",
    "infer-pmh": "particle Metropolis-Hastings baseline",
    "infer-spsa": "stochastic-approximation baseline",
    "epsilon-sweep": "repeat infer-gpo across a tolerance grid",
    "var-pipeline": "two-stage margins + copula fit, VaR series, backtest",
    "backtest": "recount violations for an existing VaR series",
    "export-plot-data": "turn run artifacts into tidy plot tables",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gposmc",
        description="likelihood-free inference for stochastic volatility models")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument("--config", default=None, help="path to a JSON run config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=".", help="artifact directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads (never changes numerical results)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    rundir = RunDir(args.out)
    try:
        if args.threads < 1:
            raise ConfigurationError(f"--threads must be >= 1, got {args.threads}")
        cfg = load_config(args.config) if args.config else validate_config({})
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigurationError(f"--seed must be >= 0, got {args.seed}")
            cfg = RunConfig(raw=cfg.raw, seed=args.seed, sections=cfg.sections)
        if args.command != "export-plot-data":
            # the export derives tables from existing artifacts; writing a
            # config here would clobber the original run's record
            rundir.write_json("resolved_config.json", cfg.resolved(args.command))
        _COMMANDS[args.command](cfg, rundir, args.threads)
        return 0
    except GposmcError as exc:
        rundir.write_json("error.json", {
            "error": {"code": exc.code, "message": str(exc)},
            "incomplete_artifacts": [n for n in rundir.written if n != "error.json"],
        })
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - surfaced as an artifact
        rundir.write_json("error.json", {
            "error": {"code": "internal", "message": f"{type(exc).__name__}: {exc}"},
            "incomplete_artifacts": [n for n in rundir.written if n != "error.json"],
        })
        print(f"error [internal]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
