"""Parameter-recovery metrics, the Monte Carlo harness, and baselines.

Replication metrics are plain averages over every entry of a parameter
group across replications:

    bias = (1/(m c)) sum_i sum_entries (est - truth)
    mae  = same with absolute values
    rmse = sqrt of the same with squares

where c is the entry count of the group (k for beta, P*n for phi, n^2 - n
off-diagonal entries for the weights, 1 for sigma2).  The weight group is
additionally split into the true-zero and true-nonzero subsets; the
true-zero row is omitted when the true matrix has no zero off-diagonals.

Baselines for model comparison: per-location least squares on the
regressors only (no dynamics), and a full vector autoregression of order 1
with the location's own regressors.  All models are scored on the same
effective time window and compared by in-sample one-step MSE, AIC, and BIC
under the Gaussian likelihood.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .crossval import CvPlan, grid_search
from .errors import DimensionError, DomainError, NumericalError
from .model import ModelParams, PanelData, PenaltyConfig, predict_one_step
from .optimize import FitResult, SolverOptions, fit
from .simulate import DgpConfig, make_true_params, simulate_panel

GROUP_ORDER = ("beta", "phi", "w_all", "w_zero", "w_nonzero", "sigma")


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo run description.

    ``lambda_mode`` is either a fixed :class:`PenaltyConfig` applied to every
    replication or a :class:`CvPlan` selecting the triple per replication;
    ``None`` means unpenalized fits.  Replication r uses seed
    ``dgp.seed + r``.
    """

    dgp: DgpConfig
    reps: int = 20
    lambda_mode: object = None
    opts: SolverOptions = field(default_factory=SolverOptions)
    n_jobs: int = 1
    max_failure_fraction: float = 0.10

    def __post_init__(self):
        if self.reps < 1:
            raise DomainError(f"reps must be >= 1, got {self.reps}")
        if self.lambda_mode is not None and not isinstance(
            self.lambda_mode, (PenaltyConfig, CvPlan)
        ):
            raise DomainError("lambda_mode must be None, PenaltyConfig, or CvPlan")
        if self.n_jobs < 1:
            raise DomainError("n_jobs must be >= 1")


@dataclass(frozen=True)
class McSummary:
    """Table of bias/MAE/RMSE per parameter group.

    ``groups`` maps group name to {"bias", "mae", "rmse"}; the ``w_zero``
    entry is absent when the true weight matrix has no zero off-diagonals.
    ``mean_fit_seconds`` is populated by the Monte Carlo harness.
    """

    groups: dict
    n_reps: int
    n_failed: int = 0
    mean_fit_seconds: float | None = None

    def to_rows(self) -> list[dict]:
        rows = []
        for name in GROUP_ORDER:
            if name in self.groups:
                g = self.groups[name]
                rows.append(
                    {"group": name, "bias": g["bias"], "mae": g["mae"], "rmse": g["rmse"]}
                )
        return rows


def _metric_triplet(diffs: np.ndarray) -> dict:
    return {
        "bias": float(diffs.mean()),
        "mae": float(np.abs(diffs).mean()),
        "rmse": float(np.sqrt((diffs * diffs).mean())),
    }


def group_metrics(estimates: list[ModelParams], truth: ModelParams) -> McSummary:
    """Bias/MAE/RMSE per parameter group over a replication set."""
    if not estimates:
        raise DomainError("need at least one replication")
    for est in estimates:
        if est.n != truth.n or est.k != truth.k or est.P != truth.P:
            raise DimensionError("estimate shapes do not match the truth")
    m = len(estimates)
    offdiag = ~np.eye(truth.n, dtype=bool)
    groups = {}
    if truth.k:
        groups["beta"] = _metric_triplet(
            np.concatenate([est.beta - truth.beta for est in estimates])
        )
    groups["phi"] = _metric_triplet(
        np.concatenate([(est.phi - truth.phi).ravel() for est in estimates])
    )
    w_diffs = np.stack([(est.w - truth.w) for est in estimates])
    groups["w_all"] = _metric_triplet(w_diffs[:, offdiag])
    zero_mask = (truth.w == 0) & offdiag
    if zero_mask.any():
        groups["w_zero"] = _metric_triplet(w_diffs[:, zero_mask])
    nonzero_mask = (truth.w != 0) & offdiag
    if nonzero_mask.any():
        groups["w_nonzero"] = _metric_triplet(w_diffs[:, nonzero_mask])
    groups["sigma"] = _metric_triplet(
        np.array([est.sigma2 - truth.sigma2 for est in estimates])
    )
    return McSummary(groups=groups, n_reps=m)


def full_model_rmse(fits: list, panels: list[PanelData]) -> float:
    """Pooled one-step prediction RMSE: sqrt((1/(n m)) sum_i ||yhat - y||^2).

    The sum inside runs over every location and effective time point of
    replication i, but the normalization is by n*m only, so the value grows
    like sqrt(T_eff) — it measures total per-location prediction error of a
    whole series, not a per-observation average.
    """
    if len(fits) != len(panels):
        raise DimensionError("fits and panels must pair up")
    if not fits:
        raise DomainError("need at least one replication")
    total = 0.0
    n = panels[0].n
    for f, panel in zip(fits, panels):
        params = f.params if isinstance(f, FitResult) else f
        yhat = predict_one_step(params, panel)
        err = panel.y[:, params.P :] - yhat
        total += float(np.sum(err * err))
    return float(np.sqrt(total / (n * len(fits))))


# ---------------------------------------------------------------------------
# Monte Carlo harness
# ---------------------------------------------------------------------------


def _mc_replication(cfg: McConfig, rep: int) -> dict:
    seed = cfg.dgp.seed + rep
    truth = make_true_params(cfg.dgp)
    panel = simulate_panel(truth, cfg.dgp.T, seed=seed, burn_in=cfg.dgp.burn_in)
    record = {"rep": rep, "seed": seed}
    t0 = time.perf_counter()
    try:
        if isinstance(cfg.lambda_mode, CvPlan):
            search = grid_search(panel, cfg.lambda_mode, cfg.opts, P=cfg.dgp.P)
            pen = search.best
        else:
            pen = cfg.lambda_mode or PenaltyConfig()
        result = fit(panel, P=cfg.dgp.P, pen=pen, options=cfg.opts)
    except Exception as exc:  # noqa: BLE001 - failures are data, not crashes
        record.update(status=f"failed: {exc}", fit_seconds=time.perf_counter() - t0)
        return record
    record.update(
        status="ok",
        fit_seconds=time.perf_counter() - t0,
        lambda1=pen.lambda1,
        lambda2=pen.lambda2,
        lambda3=pen.lambda3,
        converged=result.converged,
        feasible=result.feasible,
        objective=result.objective,
        loglik=result.loglik,
        support_size=result.support.size,
        beta=result.params.beta.tolist(),
        phi=result.params.phi.tolist(),
        w=result.params.w.tolist(),
        sigma2=result.params.sigma2,
    )
    return record


def monte_carlo(cfg: McConfig) -> tuple[McSummary, list[dict]]:
    """Replicated simulate -> (select) -> fit pipeline with derived seeds.

    Returns the metric summary over successful replications plus one raw
    record per replication.  Raises when more than
    ``max_failure_fraction`` of the replications fail.
    """
    reps = range(cfg.reps)
    if cfg.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
            records = list(pool.map(_mc_replication, [cfg] * cfg.reps, reps))
    else:
        records = [_mc_replication(cfg, r) for r in reps]
    records.sort(key=lambda r: r["rep"])
    truth = make_true_params(cfg.dgp)
    good = [r for r in records if r["status"] == "ok"]
    n_failed = cfg.reps - len(good)
    if n_failed > cfg.max_failure_fraction * cfg.reps:
        failures = "; ".join(r["status"] for r in records if r["status"] != "ok")
        raise NumericalError(
            f"{n_failed}/{cfg.reps} replications failed: {failures}"
        )
    estimates = [
        ModelParams(
            beta=np.asarray(r["beta"]),
            phi=np.asarray(r["phi"]),
            w=np.asarray(r["w"]),
            sigma2=r["sigma2"],
        )
        for r in good
    ]
    base = group_metrics(estimates, truth)
    summary = McSummary(
        groups=base.groups,
        n_reps=len(good),
        n_failed=n_failed,
        mean_fit_seconds=float(np.mean([r["fit_seconds"] for r in good])),
    )
    return summary, records


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaselineResult:
    """A fitted comparison model with its in-sample scores."""

    model: str
    mse: float
    aic: float
    bic: float
    loglik: float
    n_params: int
    coef: dict
    rank_deficient: bool = False


def information_criteria(loglik: float, n_params: int, n_obs: int) -> dict:
    """AIC = -2 l + 2 p and BIC = -2 l + ln(n_obs) p."""
    if n_obs < 1:
        raise DomainError(f"n_obs must be >= 1, got {n_obs}")
    return {
        "aic": -2.0 * loglik + 2.0 * n_params,
        "bic": -2.0 * loglik + np.log(n_obs) * n_params,
    }


def _gaussian_loglik(ssr: float, n_obs: int) -> tuple[float, float]:
    """Concentrated Gaussian log-likelihood and the variance estimate."""
    sigma2 = max(ssr / n_obs, 1e-300)
    ll = -0.5 * n_obs * (np.log(2.0 * np.pi * sigma2) + 1.0)
    return ll, sigma2


def fit_ols(panel: PanelData, align_p: int = 1) -> BaselineResult:
    """Per-location least squares of y_t on X_t: no lags, no spatial terms.

    Scored on the same effective window t > align_p as the dynamic models
    so the criteria are commensurable.
    """
    if align_p < 0 or panel.T <= align_p:
        raise DomainError(f"align_p={align_p} leaves no effective window")
    n, k = panel.n, panel.k
    t_eff = panel.T - align_p
    coefs = np.zeros((n, k))
    ssr = 0.0
    rank_deficient = False
    for i in range(n):
        xi = panel.x[align_p:, i, :]
        yi = panel.y[i, align_p:]
        if k:
            bi, _, rank, _ = np.linalg.lstsq(xi, yi, rcond=None)
            if rank < k:
                rank_deficient = True
            coefs[i] = bi
            resid = yi - xi @ bi
        else:
            resid = yi
        ssr += float(resid @ resid)
    n_obs = n * t_eff
    loglik, sigma2 = _gaussian_loglik(ssr, n_obs)
    n_params = n * k + 1
    ic = information_criteria(loglik, n_params, n_obs)
    return BaselineResult(
        model="ols",
        mse=ssr / n_obs,
        aic=ic["aic"],
        bic=ic["bic"],
        loglik=loglik,
        n_params=n_params,
        coef={"beta": coefs, "sigma2": sigma2},
        rank_deficient=rank_deficient,
    )


def fit_var1(panel: PanelData, align_p: int = 1) -> BaselineResult:
    """Full (non-diagonal) first-order vector autoregression with the
    location's own regressors, estimated equation by equation.

    Each location's response is regressed on the previous values of every
    location plus its own regressor row; the lag matrix is unrestricted.
    """
    if align_p < 1:
        raise DomainError("align_p must be >= 1 for a lag-1 model")
    n, k = panel.n, panel.k
    if panel.T < n + k + 2:
        raise DomainError(
            f"T={panel.T} too small to identify a VAR(1) with n={n}, k={k}"
        )
    t_eff = panel.T - align_p
    lag = panel.y[:, align_p - 1 : panel.T - 1].T  # (t_eff, n)
    a_mat = np.zeros((n, n))
    b_mat = np.zeros((n, k))
    ssr = 0.0
    rank_deficient = False
    for i in range(n):
        design = np.hstack([lag, panel.x[align_p:, i, :]]) if k else lag
        yi = panel.y[i, align_p:]
        ci, _, rank, _ = np.linalg.lstsq(design, yi, rcond=None)
        if rank < design.shape[1]:
            rank_deficient = True
        a_mat[i] = ci[:n]
        if k:
            b_mat[i] = ci[n:]
        resid = yi - design @ ci
        ssr += float(resid @ resid)
    n_obs = n * t_eff
    loglik, sigma2 = _gaussian_loglik(ssr, n_obs)
    n_params = n * (n + k) + 1
    ic = information_criteria(loglik, n_params, n_obs)
    return BaselineResult(
        model="var1",
        mse=ssr / n_obs,
        aic=ic["aic"],
        bic=ic["bic"],
        loglik=loglik,
        n_params=n_params,
        coef={"lag": a_mat, "beta": b_mat, "sigma2": sigma2},
        rank_deficient=rank_deficient,
    )


def spatiotemporal_scores(panel: PanelData, result: FitResult) -> BaselineResult:
    """Scores of a fitted spatiotemporal model on its own panel, with the
    parameter count |selected support| + 1 for the variance."""
    params = result.params
    yhat = predict_one_step(params, panel)
    err = panel.y[:, params.P :] - yhat
    n_obs = err.size
    mse = float(np.sum(err * err)) / n_obs
    n_params = result.support.size + 1
    ic = information_criteria(result.loglik, n_params, n_obs)
    return BaselineResult(
        model="spatiotemporal",
        mse=mse,
        aic=ic["aic"],
        bic=ic["bic"],
        loglik=result.loglik,
        n_params=n_params,
        coef={
            "beta": params.beta,
            "phi": params.phi,
            "w": params.w,
            "sigma2": params.sigma2,
        },
    )


def compare_models(
    panel: PanelData,
    P: int = 1,
    pen: object = None,
    opts: SolverOptions | None = None,
) -> list[BaselineResult]:
    """OLS, VAR(1), and the spatiotemporal model on one panel.

    ``pen`` may be a fixed :class:`PenaltyConfig`, a :class:`CvPlan` (the
    triple is then selected by cross-validation first), or None for an
    unpenalized fit.  All three models are scored on the window t > P.
    """
    opts = opts or SolverOptions()
    if isinstance(pen, CvPlan):
        pen = grid_search(panel, pen, opts, P=P).best
    st_fit = fit(panel, P=P, pen=pen, options=opts)
    return [
        fit_ols(panel, align_p=P),
        fit_var1(panel, align_p=P),
        spatiotemporal_scores(panel, st_fit),
    ]
