"""Post-selection inference: unpenalized refit, numerical standard errors.

After the penalized fit selects a support, the model is re-estimated without
penalties with every off-support coordinate frozen at zero.  The observed
information is the numerical Hessian of the negative log-likelihood at the
refit (central differences: four-point stencils off the diagonal, three-point
on it), its inverse approximates the estimator covariance, and standard
errors come from the diagonal:

    Cov(theta_hat) ~ H(theta_hat)^{-1},   z_i = theta_hat_i / SE_i,
    CI = theta_hat_i +/- 1.96 SE_i.

Coordinates that land on a constraint bound after the refit are excluded
from the Hessian with a warning -- Wald inference is invalid on the
boundary -- and are reported with missing standard errors.  All standard
errors are conditional on the selected support; no selective-inference
correction is applied.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, DomainError, NumericalError
from .model import (
    DELTA_PHI,
    DELTA_ROW,
    ModelParams,
    PanelData,
    Support,
    as_segments,
    log_likelihood,
)
from .optimize import FitResult, SolverOptions, fit

Z_95 = 1.96

_BOUND_TOL = 1e-8


def support(params: ModelParams, tau: float = 1e-4) -> Support:
    """Index masks of the coordinates with magnitude above ``tau``."""
    return Support.from_params(params, tau)


def refit_unpenalized(
    panel: PanelData | Sequence[PanelData],
    sup: Support,
    opts: SolverOptions | None = None,
) -> ModelParams:
    """Maximize the unpenalized likelihood over the support coordinates only.

    Off-support coordinates are exactly zero in the result; the constraint
    set is the same as in the penalized fit.
    """
    result = fit(panel, P=sup.P, pen=None, options=opts, support=sup)
    return result.params


# ---------------------------------------------------------------------------
# numerical Hessian
# ---------------------------------------------------------------------------


def _steps(theta: np.ndarray, h: float | np.ndarray | None) -> np.ndarray:
    if h is None:
        return np.maximum(1e-5, 1e-4 * np.abs(theta))
    h = np.broadcast_to(np.asarray(h, dtype=float), theta.shape).copy()
    if np.any(h <= 0):
        raise DomainError("finite-difference steps must be > 0")
    return h


def finite_difference_hessian(
    fun: Callable[[np.ndarray], float],
    theta: np.ndarray,
    h: float | np.ndarray | None = None,
) -> np.ndarray:
    """Central-difference Hessian of a scalar function.

    Diagonals use [f(t+h) - 2 f(t) + f(t-h)] / h^2; off-diagonals the
    four-point stencil [f(++) - f(+-) - f(-+) + f(--)] / (4 h_i h_j).  The
    result is exactly symmetric by construction.  Steps default to
    max(1e-5, 1e-4 |theta_i|) per coordinate.
    """
    theta = np.asarray(theta, dtype=float)
    m = theta.size
    hs = _steps(theta, h)

    def ev(t, what):
        v = fun(t)
        if not np.isfinite(v):
            raise NumericalError(f"objective not finite at stencil point {what}")
        return v

    hess = np.empty((m, m))
    f0 = ev(theta, "center")
    for i in range(m):
        ei = np.zeros(m)
        ei[i] = hs[i]
        fp = ev(theta + ei, f"+e{i}")
        fm = ev(theta - ei, f"-e{i}")
        hess[i, i] = (fp - 2.0 * f0 + fm) / (hs[i] * hs[i])
        for j in range(i + 1, m):
            ej = np.zeros(m)
            ej[j] = hs[j]
            fpp = ev(theta + ei + ej, f"+e{i}+e{j}")
            fpm = ev(theta + ei - ej, f"+e{i}-e{j}")
            fmp = ev(theta - ei + ej, f"-e{i}+e{j}")
            fmm = ev(theta - ei - ej, f"-e{i}-e{j}")
            val = (fpp - fpm - fmp + fmm) / (4.0 * hs[i] * hs[j])
            hess[i, j] = val
            hess[j, i] = val
    return hess


def _free_coordinates(params: ModelParams, sup: Support):
    """Names, groups, values, and an un-flattener for the free coordinates.

    Order: selected betas, selected phis (lag-major), selected weights
    (row-major), then sigma2 last.
    """
    names, groups, values = [], [], []
    for i in sup.beta_indices():
        names.append(f"beta_{i}")
        groups.append("beta")
        values.append(params.beta[i])
    for p, i in sup.phi_indices():
        names.append(f"phi{p + 1}_{i}")
        groups.append("phi")
        values.append(params.phi[p, i])
    for i, j in sup.w_indices():
        names.append(f"w_{i}_{j}")
        groups.append("w")
        values.append(params.w[i, j])
    names.append("sigma2")
    groups.append("sigma")
    values.append(params.sigma2)

    def rebuild(theta: np.ndarray) -> ModelParams:
        beta = params.beta.copy()
        phi = params.phi.copy()
        w = params.w.copy()
        pos = 0
        for i in sup.beta_indices():
            beta[i] = theta[pos]
            pos += 1
        for p, i in sup.phi_indices():
            phi[p, i] = theta[pos]
            pos += 1
        for i, j in sup.w_indices():
            w[i, j] = theta[pos]
            pos += 1
        return ModelParams(beta=beta, phi=phi, w=w, sigma2=float(theta[pos]))

    return names, groups, np.asarray(values, dtype=float), rebuild


def _bound_active(name: str, group: str, value: float, phi_col_sum: np.ndarray,
                  w_row_sum: np.ndarray, params: ModelParams) -> bool:
    if group == "beta" or group == "sigma":
        return False
    if abs(value) <= _BOUND_TOL:
        return True
    if group == "phi":
        i = int(name.rsplit("_", 1)[1])
        return value >= 1.0 - DELTA_PHI - _BOUND_TOL or phi_col_sum[i] >= 1.0 - DELTA_PHI - _BOUND_TOL
    if group == "w":
        i = int(name.split("_")[1])
        return value >= 1.0 - DELTA_ROW - _BOUND_TOL or w_row_sum[i] >= 1.0 - DELTA_ROW - _BOUND_TOL
    return False


def numerical_hessian(
    panel: PanelData | Sequence[PanelData],
    params: ModelParams,
    sup: Support | None = None,
    h: float | np.ndarray | None = None,
) -> np.ndarray:
    """Observed information: Hessian of the negative log-likelihood at
    ``params`` over the free coordinates (support entries plus sigma2)."""
    sup = sup or Support.from_params(params, 0.0)
    segments = as_segments(panel)
    _, _, theta, rebuild = _free_coordinates(params, sup)

    def neg_ll(t):
        if t[-1] <= 0:
            raise NumericalError("sigma2 stencil stepped below zero")
        return -log_likelihood(rebuild(t), segments)

    return finite_difference_hessian(neg_ll, theta, h)


# ---------------------------------------------------------------------------
# standard errors
# ---------------------------------------------------------------------------


def covariance_from_information(information: np.ndarray) -> np.ndarray | None:
    """Inverse of the observed information, or None when not positive
    definite (checked by Cholesky)."""
    information = np.asarray(information, dtype=float)
    if information.ndim != 2 or information.shape[0] != information.shape[1]:
        raise DimensionError("information matrix must be square")
    try:
        np.linalg.cholesky(information)
    except np.linalg.LinAlgError:
        return None
    return np.linalg.inv(information)


@dataclass(frozen=True)
class InferenceResult:
    """Refit estimates with Wald standard errors on the selected support.

    Arrays are aligned with ``names``/``groups``; excluded (bound-active)
    coordinates carry NaN standard errors.  ``z`` is estimate/SE by
    definition and ``ci_lower``/``ci_upper`` are the 95% bounds.
    """

    estimates: ModelParams
    names: tuple
    groups: tuple
    values: np.ndarray
    se: np.ndarray
    z: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    hessian_ok: bool
    excluded: tuple

    def to_rows(self) -> list[dict]:
        """Rows for the parameter table: estimate, SE, z, 95% bounds."""
        rows = []
        for idx, name in enumerate(self.names):
            rows.append(
                {
                    "parameter": name,
                    "group": self.groups[idx],
                    "estimate": float(self.values[idx]),
                    "se": float(self.se[idx]),
                    "z": float(self.z[idx]),
                    "lcl": float(self.ci_lower[idx]),
                    "ucl": float(self.ci_upper[idx]),
                }
            )
        return rows


def standard_errors(
    params: ModelParams,
    information: np.ndarray,
    names: Sequence[str],
    groups: Sequence[str],
    values: np.ndarray,
    included: np.ndarray,
) -> InferenceResult:
    """Wald standard errors from an observed-information matrix.

    ``information`` covers only the included coordinates (in order); the
    excluded ones are reported with NaN inference columns.
    """
    m = len(names)
    se = np.full(m, np.nan)
    cov = covariance_from_information(information) if information.size else None
    hessian_ok = cov is not None
    if hessian_ok:
        diag = np.diag(cov).copy()
        if np.any(diag <= 0):  # pragma: no cover - excluded by Cholesky
            hessian_ok = False
        else:
            se[included] = np.sqrt(diag)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = values / se
    ci_lower = values - Z_95 * se
    ci_upper = values + Z_95 * se
    return InferenceResult(
        estimates=params,
        names=tuple(names),
        groups=tuple(groups),
        values=values,
        se=se,
        z=z,
        ci_lower=ci_lower,
        ci_upper=ci_upper,
        hessian_ok=hessian_ok,
        excluded=tuple(np.asarray(names, dtype=object)[~included]),
    )


def post_selection(
    panel: PanelData | Sequence[PanelData],
    selected: ModelParams | FitResult,
    tau: float = 1e-4,
    opts: SolverOptions | None = None,
    h: float | np.ndarray | None = None,
) -> InferenceResult:
    """Full pipeline: support -> unpenalized refit -> Hessian -> SEs."""
    params = selected.params if isinstance(selected, FitResult) else selected
    sup = Support.from_params(params, tau)
    refit = refit_unpenalized(panel, sup, opts)
    names, groups, values, rebuild = _free_coordinates(refit, sup)
    phi_col_sum = refit.phi.sum(axis=0)
    w_row_sum = refit.w.sum(axis=1)
    included = np.array(
        [
            not _bound_active(nm, g, v, phi_col_sum, w_row_sum, refit)
            for nm, g, v in zip(names, groups, values)
        ]
    )
    if not included.all():
        left_out = [nm for nm, keep in zip(names, included) if not keep]
        warnings.warn(
            "bound-active coordinates excluded from the Hessian: "
            + ", ".join(left_out),
            RuntimeWarning,
            stacklevel=2,
        )
    segments = as_segments(panel)

    def neg_ll_included(t):
        full = values.copy()
        full[included] = t
        if full[-1] <= 0:
            raise NumericalError("sigma2 stencil stepped below zero")
        return -log_likelihood(rebuild(full), segments)

    information = finite_difference_hessian(neg_ll_included, values[included], h)
    return standard_errors(refit, information, names, groups, values, included)


def precision_diagnostic(params: ModelParams) -> np.ndarray:
    """Approximate precision matrix (1/sigma2) (I - W)' (I - W).

    Exact for a purely spatial process (no temporal terms); under weak
    temporal dependence it remains a useful conditional-independence
    diagnostic: a zero off-diagonal entry means no conditional link.
    """
    if params.sigma2 <= 0:
        raise DomainError("sigma2 must be > 0")
    a = np.eye(params.n) - params.w
    return (a.T @ a) / params.sigma2
