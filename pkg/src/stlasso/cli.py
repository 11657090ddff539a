"""Command-line interface.

Subcommands
-----------
simulate   draw a synthetic panel and write it as CSV (plus the true params)
fit        estimate the model on a panel CSV with a fixed penalty
cv         select the penalty by blocked cross-validation, then fit
mc         replicated simulate-and-fit study with recovery metrics
infer      standard errors and confidence intervals for a stored fit
compare    score OLS, VAR(1), and the spatiotemporal model on one panel
check      stationarity/feasibility report for a stored parameter set

Every option can also be supplied through ``--config file.json`` (keys =
option names with underscores); explicit flags win over config values.
Each run writes ``<command>_manifest.json`` into the output directory.
Output files are deterministic for a given config and seed — wall-clock
timing goes to stderr only.

Exit codes: 0 success, 1 computational/data failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .crossval import CvPlan, grid_search, scores_to_rows
from .errors import EstimationError
from .evaluate import McConfig, compare_models, monte_carlo
from .inference import post_selection
from .model import PanelData, PenaltyConfig, stationarity_check
from .optimize import SolverOptions, fit
from .panel_io import (
    DEFAULT_FREQUENCIES,
    fourier_panel_design,
    impute_backward_forward,
    ingest,
    params_from_fit_dict,
    read_fit_json,
    read_params_json,
    read_regressors_csv,
    write_fit_json,
    write_manifest,
    write_panel_csv,
    write_params_json,
    write_regressors_csv,
    write_rows_csv,
)
from .simulate import DgpConfig, simulate_dataset

_SUPPRESS = argparse.SUPPRESS


def _dgp_options(sub):
    sub.add_argument("--side", type=int, default=_SUPPRESS, help="lattice side; n = side^2")
    sub.add_argument("--T", type=int, default=_SUPPRESS, help="panel length")
    sub.add_argument("--rho", type=float, default=_SUPPRESS, help="spatial strength multiplier")
    sub.add_argument("--phi", type=float, default=_SUPPRESS, help="own-lag coefficient value")
    sub.add_argument("--sigma2", type=float, default=_SUPPRESS, help="error variance")
    sub.add_argument("--zero-frac", type=float, default=_SUPPRESS, dest="zero_frac")
    sub.add_argument("--P", type=int, default=_SUPPRESS, help="temporal order")
    sub.add_argument("--burn-in", type=int, default=_SUPPRESS, dest="burn_in")


def _panel_options(sub):
    sub.add_argument("--panel", default=_SUPPRESS, help="long-format panel CSV")
    sub.add_argument("--regressors", default=_SUPPRESS, help="regressor CSV")
    sub.add_argument(
        "--frequencies",
        default=_SUPPRESS,
        help="comma list of seasonal regressors when no --regressors file "
        "(daily,monthly,biannual,yearly or 'none')",
    )
    sub.add_argument("--completeness", type=float, default=_SUPPRESS)
    sub.add_argument("--P", type=int, default=_SUPPRESS)


def _penalty_options(sub):
    sub.add_argument("--lambda1", type=float, default=_SUPPRESS, help="weight-matrix penalty")
    sub.add_argument("--lambda2", type=float, default=_SUPPRESS, help="temporal penalty")
    sub.add_argument("--lambda3", type=float, default=_SUPPRESS, help="regression penalty")


def _solver_options(sub):
    sub.add_argument("--max-iter", type=int, default=_SUPPRESS, dest="max_iter")
    sub.add_argument("--n-starts", type=int, default=_SUPPRESS, dest="n_starts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stlasso",
        description="Sparse spatiotemporal panel-model estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=_SUPPRESS, help="JSON file of option values")
        p.add_argument("--out", default=_SUPPRESS, help="output directory")
        p.add_argument("--seed", type=int, default=_SUPPRESS)
        p.add_argument("--threads", type=int, default=_SUPPRESS)
        return p

    p = add("simulate", "draw a synthetic panel")
    _dgp_options(p)

    p = add("fit", "penalized fit on a panel CSV")
    _panel_options(p)
    _penalty_options(p)
    _solver_options(p)

    p = add("cv", "blocked cross-validation over a penalty grid")
    _panel_options(p)
    _solver_options(p)
    p.add_argument("--grid", default=_SUPPRESS, help="comma list of values per penalty axis")
    p.add_argument("--n-blocks", type=int, default=_SUPPRESS, dest="n_blocks")

    p = add("mc", "Monte Carlo recovery study")
    _dgp_options(p)
    _penalty_options(p)
    _solver_options(p)
    p.add_argument("--reps", type=int, default=_SUPPRESS)

    p = add("infer", "post-selection standard errors for a stored fit")
    _panel_options(p)
    _solver_options(p)
    p.add_argument("--fit", default=_SUPPRESS, help="fit JSON produced by the fit/cv commands")
    p.add_argument("--tau", type=float, default=_SUPPRESS, help="support threshold")

    p = add("compare", "OLS vs VAR(1) vs spatiotemporal scores")
    _panel_options(p)
    _penalty_options(p)
    _solver_options(p)

    p = add("check", "stationarity/feasibility report for stored parameters")
    p.add_argument("--fit", default=_SUPPRESS, help="fit or parameter JSON")

    return parser


_DEFAULTS = {
    "simulate": {
        "side": 3, "T": 100, "rho": 0.6, "phi": 0.3, "sigma2": 1.0,
        "zero_frac": 0.25, "P": 1, "burn_in": 200, "seed": 0, "out": ".",
    },
    "fit": {
        "panel": None, "regressors": None, "frequencies": None, "completeness": 0.90,
        "P": 1, "lambda1": 0.0, "lambda2": 0.0, "lambda3": 0.0,
        "max_iter": 30, "n_starts": 1, "seed": 0, "out": ".",
    },
    "cv": {
        "panel": None, "regressors": None, "frequencies": None, "completeness": 0.90,
        "P": 1, "grid": None, "n_blocks": 5,
        "max_iter": 30, "n_starts": 1, "seed": 0, "out": ".",
    },
    "mc": {
        "side": 2, "T": 100, "rho": 0.6, "phi": 0.3, "sigma2": 1.0,
        "zero_frac": 0.25, "P": 1, "burn_in": 200, "reps": 20,
        "lambda1": 0.0, "lambda2": 0.0, "lambda3": 0.0,
        "max_iter": 30, "n_starts": 1, "seed": 0, "threads": 1, "out": ".",
    },
    "infer": {
        "panel": None, "regressors": None, "frequencies": None, "completeness": 0.90,
        "fit": None, "tau": 1e-4, "max_iter": 30, "n_starts": 1, "seed": 0, "out": ".",
    },
    "compare": {
        "panel": None, "regressors": None, "frequencies": None, "completeness": 0.90,
        "P": 1, "lambda1": 0.0, "lambda2": 0.0, "lambda3": 0.0,
        "max_iter": 30, "n_starts": 1, "seed": 0, "out": ".",
    },
    "check": {"fit": None, "out": "."},
}

_REQUIRED = {
    "fit": ("panel",),
    "cv": ("panel",),
    "infer": ("panel", "fit"),
    "compare": ("panel",),
    "check": ("fit",),
}


def _resolve_options(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    """defaults < config file < explicit flags; unknown config keys are a
    usage error so typos do not silently fall back to defaults."""
    given = dict(vars(args))
    command = given.pop("command")
    config_path = given.pop("config", None)
    defaults = dict(_DEFAULTS[command])
    from_config = {}
    if config_path is not None:
        with open(config_path, encoding="utf-8") as fh:
            from_config = json.load(fh)
        unknown = sorted(set(from_config) - set(defaults))
        if unknown:
            parser.error(f"unknown config keys for {command}: {unknown}")
    opts = {**defaults, **from_config, **given}
    missing = [k for k in _REQUIRED.get(command, ()) if opts.get(k) is None]
    if missing:
        parser.error(f"{command} requires {', '.join('--' + m for m in missing)}")
    opts["command"] = command
    return opts


def _out_dir(opts) -> Path:
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out: Path, opts: dict):
    config = {k: v for k, v in opts.items() if k not in ("command", "out", "seed")}
    write_manifest(out / f"{opts['command']}_manifest.json", opts["command"], config, opts.get("seed"))


def _parse_frequencies(spec):
    if spec is None:
        return DEFAULT_FREQUENCIES
    if spec.strip().lower() == "none":
        return ()
    return tuple(s.strip() for s in spec.split(",") if s.strip())


def _load_panel(opts) -> PanelData:
    res = ingest(opts["panel"], completeness_threshold=opts["completeness"])
    y = impute_backward_forward(res.values)
    if opts.get("regressors"):
        x, ids, grid, _ = read_regressors_csv(opts["regressors"])
        if ids != res.station_ids:
            raise EstimationError(
                f"regressor stations {ids} do not match panel stations {res.station_ids}"
            )
        if len(grid) != res.T or (grid != res.timestamps).any():
            raise EstimationError("regressor grid does not match the panel grid")
    else:
        x = fourier_panel_design(res.T, res.n, _parse_frequencies(opts["frequencies"]))
    return PanelData(y=y, x=x)


def _solver(opts) -> SolverOptions:
    return SolverOptions(
        max_iter=opts["max_iter"], n_starts=opts["n_starts"], seed=opts["seed"]
    )


def _penalty(opts) -> PenaltyConfig:
    return PenaltyConfig(opts["lambda1"], opts["lambda2"], opts["lambda3"])


def _dgp(opts) -> DgpConfig:
    return DgpConfig(
        n=opts["side"] ** 2,
        T=opts["T"],
        rho=opts["rho"],
        beta=(3.0, 0.0, 2.0),
        phi_value=opts["phi"],
        zero_frac=opts["zero_frac"],
        sigma2=opts["sigma2"],
        P=opts["P"],
        burn_in=opts["burn_in"],
        seed=opts["seed"],
    )


# ---------------------------------------------------------------------------
# subcommand bodies
# ---------------------------------------------------------------------------


def _cmd_simulate(opts) -> int:
    out = _out_dir(opts)
    params, panel = simulate_dataset(_dgp(opts))
    ids = [f"s{i:02d}" for i in range(panel.n)]
    write_panel_csv(out / "panel.csv", panel.y, ids)
    write_regressors_csv(out / "regressors.csv", panel.x, ids)
    write_params_json(out / "truth.json", params)
    _manifest(out, opts)
    print(f"wrote panel.csv, regressors.csv, truth.json to {out}")
    return 0


def _cmd_fit(opts) -> int:
    out = _out_dir(opts)
    panel = _load_panel(opts)
    pen = _penalty(opts)
    result = fit(panel, P=opts["P"], pen=pen, options=_solver(opts))
    write_fit_json(out / "fit.json", result, pen)
    _manifest(out, opts)
    status = "converged" if result.converged else "NOT converged"
    print(f"{status}: loglik={result.loglik:.6g} support={result.support.size}")
    if not result.feasible:
        print("warning: estimate failed the stationarity check", file=sys.stderr)
    return 0


def _cmd_cv(opts) -> int:
    out = _out_dir(opts)
    panel = _load_panel(opts)
    if opts["grid"] is not None:
        values = tuple(float(s) for s in str(opts["grid"]).split(","))
        grid = tuple(
            PenaltyConfig(l1, l2, l3) for l1 in values for l2 in values for l3 in values
        )
    else:
        grid = None
    plan = CvPlan(n_blocks=opts["n_blocks"], grid=grid, refit_full=True)
    result = grid_search(panel, plan, _solver(opts), P=opts["P"])
    write_rows_csv(out / "cv_scores.csv", scores_to_rows(result))
    best = result.best
    summary = {
        "best": {"lambda1": best.lambda1, "lambda2": best.lambda2, "lambda3": best.lambda3},
        "best_rmse": result.best_score,
        "n_triples": len(result.scores),
    }
    with open(out / "cv_result.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    if result.best_fit is not None:
        write_fit_json(out / "fit.json", result.best_fit, best)
    _manifest(out, opts)
    print(
        f"best penalty: lambda1={best.lambda1} lambda2={best.lambda2} "
        f"lambda3={best.lambda3} (rmse={result.best_score:.6g})"
    )
    return 0


def _cmd_mc(opts) -> int:
    out = _out_dir(opts)
    cfg = McConfig(
        dgp=_dgp(opts),
        reps=opts["reps"],
        lambda_mode=_penalty(opts),
        opts=_solver(opts),
        n_jobs=opts["threads"],
    )
    summary, records = monte_carlo(cfg)
    write_rows_csv(out / "mc_summary.csv", summary.to_rows())
    cols = [
        "rep", "seed", "status", "lambda1", "lambda2", "lambda3",
        "converged", "feasible", "objective", "loglik", "support_size",
    ]
    rows = [{c: r.get(c, "") for c in cols} for r in records]
    write_rows_csv(out / "mc_records.csv", rows, columns=cols)
    _manifest(out, opts)
    print(f"{summary.n_reps} replications ({summary.n_failed} failed)")
    print(f"mean fit time {summary.mean_fit_seconds:.3f}s", file=sys.stderr)
    return 0


def _cmd_infer(opts) -> int:
    out = _out_dir(opts)
    panel = _load_panel(opts)
    params = params_from_fit_dict(read_fit_json(opts["fit"]))
    result = post_selection(panel, params, tau=opts["tau"], opts=_solver(opts))
    write_rows_csv(out / "inference.csv", result.to_rows())
    _manifest(out, opts)
    n_excl = len(result.excluded)
    print(
        f"{len(result.names)} parameters in the selected support"
        + (f" ({n_excl} at a bound, no SE)" if n_excl else "")
    )
    if not result.hessian_ok:
        print("warning: information matrix not positive definite", file=sys.stderr)
    return 0


def _cmd_compare(opts) -> int:
    out = _out_dir(opts)
    panel = _load_panel(opts)
    rows = compare_models(panel, P=opts["P"], pen=_penalty(opts), opts=_solver(opts))
    table = [
        {
            "model": r.model,
            "mse": r.mse,
            "aic": r.aic,
            "bic": r.bic,
            "loglik": r.loglik,
            "n_params": r.n_params,
        }
        for r in rows
    ]
    write_rows_csv(out / "comparison.csv", table)
    _manifest(out, opts)
    best = min(table, key=lambda r: r["mse"])
    print(f"lowest one-step MSE: {best['model']} ({best['mse']:.6g})")
    return 0


def _cmd_check(opts) -> int:
    out = _out_dir(opts)
    params = read_params_json(opts["fit"])
    report = stationarity_check(params)
    doc = {
        "stationary": bool(report.stationary),
        "norm_value": report.norm_value,
        "row_sum_max": report.row_sum_max,
        "phi_sum_max": report.phi_sum_max,
        "row_sums_ok": bool(report.row_sums_ok),
        "phi_sums_ok": bool(report.phi_sums_ok),
        "n": params.n,
        "P": params.P,
    }
    with open(out / "check.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    _manifest(out, opts)
    verdict = "stationary" if report.stationary else "NOT stationary"
    print(f"{verdict}: norm={report.norm_value:.4f} max row sum={report.row_sum_max:.4f}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "cv": _cmd_cv,
    "mc": _cmd_mc,
    "infer": _cmd_infer,
    "compare": _cmd_compare,
    "check": _cmd_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    opts = _resolve_options(args, parser)
    t0 = time.perf_counter()
    try:
        code = _COMMANDS[opts["command"]](opts)
    except (EstimationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{opts['command']} finished in {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
