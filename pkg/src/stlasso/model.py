"""Core types, residuals, and likelihood for the spatiotemporal panel model.

The observation model for an n-location panel observed at times t = 1..T is

    y_t = X_t beta + sum_p Phi_p y_{t-p} + W y_t + eps_t,   eps_t ~ N(0, sigma2 I_n)

with a k-vector of regression coefficients ``beta``, diagonal temporal lag
matrices ``Phi_p`` (one coefficient per location and lag), an n x n spatial
weight matrix ``W`` with zero diagonal, and iid Gaussian errors.  Estimation
conditions on the first P observations, so all residual-based quantities run
over the T_eff = T - P time points with full lag history.

The conditional log-likelihood is

    ln L = T_eff * ln|det(I - W)| - (n * T_eff / 2) * ln(2 pi sigma2)
           - (1 / (2 sigma2)) * sum_t eps_t' eps_t

and the penalized objective adds the three L1 terms
``lambda1 * sum|w_ij| + lambda2 * sum|phi| + lambda3 * sum|beta|``.

All functions here are pure; several accept either a single :class:`PanelData`
or a sequence of panels that are treated as independent conditional-likelihood
segments sharing one parameter set (used by blocked cross-validation).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import DimensionError, DomainError, SingularityError

# Feasibility margins for the closed constraint set.  Row sums of W are kept
# at or below 1 - DELTA_ROW and per-location temporal coefficient sums at or
# below 1 - DELTA_PHI so the solver works on a closed set; both margins are
# far below estimation noise.
DELTA_ROW = 1e-6
DELTA_PHI = 1e-6

# |det(I - W)| below this is treated as singular.
DET_TOL = 1e-12

_VALIDATION_SLACK = 1e-9


@dataclass(frozen=True)
class PanelData:
    """Observed panel: responses plus exogenous regressors.

    Parameters
    ----------
    y : ndarray, shape (n, T)
        Responses, one row per location, one column per time point.
    x : ndarray, shape (T, n, k)
        Regressor matrices, ``x[t]`` is the n x k design at time t.  ``k`` may
        be zero.

    The panel must be complete: gaps are imputed upstream (see
    :mod:`stlasso.panel_io`).
    """

    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        x = np.asarray(self.x, dtype=float)
        if y.ndim != 2:
            raise DimensionError(f"y must be 2-D (n, T), got shape {y.shape}")
        n, T = y.shape
        if n < 2:
            raise DimensionError(f"need at least 2 locations, got n={n}")
        if x.ndim == 2 and x.size == 0:
            x = np.zeros((T, n, 0))
        if x.ndim != 3:
            raise DimensionError(f"x must be 3-D (T, n, k), got shape {x.shape}")
        if x.shape[0] != T or x.shape[1] != n:
            raise DimensionError(
                f"x has shape {x.shape}, expected ({T}, {n}, k) to match y {y.shape}"
            )
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
            raise DomainError("panel contains NaN or Inf; impute before construction")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[1]

    @property
    def k(self) -> int:
        return self.x.shape[2]


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set of the model.

    Parameters
    ----------
    beta : ndarray, shape (k,)
        Regression coefficients.
    phi : ndarray, shape (P, n)
        Temporal coefficients; ``phi[p, i]`` is the lag-(p+1) coefficient of
        location i (the diagonal of the lag matrix).
    w : ndarray, shape (n, n)
        Spatial weights; zero diagonal, nonnegative entries, row sums at most
        ``1 - DELTA_ROW``.
    sigma2 : float
        Error variance.  Zero is admitted only as the degenerate noise-free
        boundary used when simulating; the likelihood requires sigma2 > 0.
    """

    beta: np.ndarray
    phi: np.ndarray
    w: np.ndarray
    sigma2: float

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        w = np.atleast_2d(np.asarray(self.w, dtype=float))
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DimensionError(f"w must be square, got shape {w.shape}")
        n = w.shape[0]
        if phi.shape[1] != n and phi.size > 0:
            raise DimensionError(f"phi has shape {phi.shape}, expected (P, {n})")
        if np.any(np.abs(np.diag(w)) > 0):
            raise DomainError("w must have an exactly zero diagonal")
        if np.any(w < -_VALIDATION_SLACK):
            raise DomainError("w entries must be nonnegative")
        row_sums = w.sum(axis=1)
        if np.any(row_sums > 1.0 - DELTA_ROW + _VALIDATION_SLACK):
            raise DomainError(
                f"row sums of w must be <= {1.0 - DELTA_ROW}, max is {row_sums.max():.8f}"
            )
        if np.any((phi < -_VALIDATION_SLACK) | (phi > 1.0 + _VALIDATION_SLACK)):
            raise DomainError("phi entries must lie in [0, 1]")
        if not np.isfinite(self.sigma2) or self.sigma2 < 0:
            raise DomainError(f"sigma2 must be >= 0, got {self.sigma2}")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def k(self) -> int:
        return self.beta.shape[0]

    @property
    def P(self) -> int:
        return self.phi.shape[0]


@dataclass(frozen=True)
class PenaltyConfig:
    """L1 penalty levels for the three parameter groups."""

    lambda1: float = 0.0  # spatial weights
    lambda2: float = 0.0  # temporal coefficients
    lambda3: float = 0.0  # regression coefficients

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise DomainError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class StationarityReport:
    """Result of the stability check on a parameter set.

    ``norm_value`` is the spectral norm of (I - W)^{-1} sum_p Phi_p; the
    process is stable when it is below 1.  The report also carries the two
    weaker sufficient conditions (bounded row sums of W, per-location
    temporal coefficient sums below 1) that keep the constraint set
    polyhedral during optimization.
    """

    stationary: bool
    norm_value: float
    row_sum_max: float
    phi_sum_max: float
    row_sums_ok: bool
    phi_sums_ok: bool


@dataclass(frozen=True)
class Support:
    """Boolean masks of the parameters retained as nonzero."""

    beta_mask: np.ndarray  # (k,)
    phi_mask: np.ndarray  # (P, n)
    w_mask: np.ndarray  # (n, n), diagonal always False

    @classmethod
    def from_params(cls, params: ModelParams, tau: float) -> "Support":
        if tau < 0:
            raise DomainError(f"tau must be >= 0, got {tau}")
        w_mask = np.abs(params.w) > tau
        np.fill_diagonal(w_mask, False)
        return cls(
            beta_mask=np.abs(params.beta) > tau,
            phi_mask=np.abs(params.phi) > tau,
            w_mask=w_mask,
        )

    @classmethod
    def full(cls, n: int, k: int, P: int) -> "Support":
        w_mask = np.ones((n, n), dtype=bool)
        np.fill_diagonal(w_mask, False)
        return cls(
            beta_mask=np.ones(k, dtype=bool),
            phi_mask=np.ones((P, n), dtype=bool),
            w_mask=w_mask,
        )

    @property
    def n(self) -> int:
        return self.w_mask.shape[0]

    @property
    def k(self) -> int:
        return self.beta_mask.shape[0]

    @property
    def P(self) -> int:
        return self.phi_mask.shape[0]

    @property
    def size(self) -> int:
        """Number of retained coefficients (sigma2 not counted)."""
        return int(self.beta_mask.sum() + self.phi_mask.sum() + self.w_mask.sum())

    def beta_indices(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.beta_mask)]

    def phi_indices(self) -> list[tuple[int, int]]:
        return [(int(p), int(i)) for p, i in zip(*np.nonzero(self.phi_mask))]

    def w_indices(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.w_mask))]


# ---------------------------------------------------------------------------
# Flat parameter vector
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamLayout:
    """Index layout of the flat parameter vector.

    Ordering: beta (k), phi row-major (P*n, lag-major), off-diagonal w in
    row-major order skipping the diagonal (n*(n-1)), sigma2 (1).
    """

    n: int
    k: int
    P: int

    @property
    def size(self) -> int:
        return self.k + self.P * self.n + self.n * (self.n - 1) + 1

    @property
    def beta_slice(self) -> slice:
        return slice(0, self.k)

    @property
    def phi_slice(self) -> slice:
        return slice(self.k, self.k + self.P * self.n)

    @property
    def w_slice(self) -> slice:
        lo = self.k + self.P * self.n
        return slice(lo, lo + self.n * (self.n - 1))

    @property
    def sigma2_index(self) -> int:
        return self.size - 1


def w_offdiag_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the off-diagonal entries in packing order."""
    rows, cols = np.nonzero(~np.eye(n, dtype=bool))
    return rows, cols


def pack_params(params: ModelParams) -> np.ndarray:
    """Flatten a :class:`ModelParams` into the documented vector ordering."""
    n = params.n
    rows, cols = w_offdiag_indices(n)
    return np.concatenate(
        [
            params.beta,
            params.phi.ravel(),
            params.w[rows, cols],
            [params.sigma2],
        ]
    )


def unpack_params(theta: np.ndarray, layout: ParamLayout) -> ModelParams:
    """Inverse of :func:`pack_params`; bit-exact round trip."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (layout.size,):
        raise DimensionError(
            f"theta has shape {theta.shape}, layout expects ({layout.size},)"
        )
    n, k, P = layout.n, layout.k, layout.P
    w = np.zeros((n, n))
    rows, cols = w_offdiag_indices(n)
    w[rows, cols] = theta[layout.w_slice]
    return ModelParams(
        beta=theta[layout.beta_slice].copy(),
        phi=theta[layout.phi_slice].reshape(P, n).copy(),
        w=w,
        sigma2=float(theta[layout.sigma2_index]),
    )


# ---------------------------------------------------------------------------
# Residuals, likelihood, penalized objective
# ---------------------------------------------------------------------------


def as_segments(panel: PanelData | Sequence[PanelData]) -> list[PanelData]:
    """Normalize a panel-or-sequence argument to a list of segments."""
    if isinstance(panel, PanelData):
        return [panel]
    segments = list(panel)
    if not segments:
        raise DimensionError("need at least one panel segment")
    n0, k0 = segments[0].n, segments[0].k
    for seg in segments[1:]:
        if seg.n != n0 or seg.k != k0:
            raise DimensionError("all segments must share the same n and k")
    return segments


def _check_shapes(params: ModelParams, panel: PanelData) -> None:
    if panel.n != params.n:
        raise DimensionError(
            f"panel has n={panel.n} locations but params expect n={params.n}"
        )
    if panel.k != params.k:
        raise DimensionError(
            f"panel has k={panel.k} regressors but params expect k={params.k}"
        )
    if panel.T <= params.P:
        raise DimensionError(
            f"panel has T={panel.T} time points, need more than P={params.P}"
        )


def residuals(params: ModelParams, panel: PanelData) -> np.ndarray:
    """Model residuals over the time points with full lag history.

    Column ``t - P`` of the result is

        eps_t = (I - W) y_t - X_t beta - sum_p Phi_p y_{t-p}

    for t = P+1..T (1-based), giving an (n, T - P) matrix.
    """
    _check_shapes(params, panel)
    y, x = panel.y, panel.x
    n, T, P = panel.n, panel.T, params.P
    a = np.eye(n) - params.w
    e = a @ y[:, P:]
    if panel.k:
        e -= np.einsum("tnk,k->nt", x[P:], params.beta)
    for p in range(P):
        e -= params.phi[p][:, None] * y[:, P - (p + 1) : T - (p + 1)]
    return e


def log_det_term(w: np.ndarray) -> float:
    """ln|det(I - W)| via a pivoted LU factorization.

    Raises :class:`SingularityError` when |det(I - W)| falls below
    ``DET_TOL``.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise DimensionError(f"w must be square, got shape {w.shape}")
    sign, logabsdet = np.linalg.slogdet(np.eye(w.shape[0]) - w)
    if sign == 0 or not np.isfinite(logabsdet) or logabsdet < np.log(DET_TOL):
        raise SingularityError("I - W is singular within tolerance")
    return float(logabsdet)


def log_likelihood(
    params: ModelParams, panel: PanelData | Sequence[PanelData]
) -> float:
    """Gaussian log-likelihood conditional on the first P observations.

    Accepts a single panel or a sequence of independent segments sharing the
    parameters; segment contributions add, with each segment conditioning on
    its own first P observations.
    """
    if params.sigma2 <= 0:
        raise DomainError(f"sigma2 must be > 0 to evaluate the likelihood")
    segments = as_segments(panel)
    ld = log_det_term(params.w)
    n = params.n
    t_eff = 0
    ssr = 0.0
    for seg in segments:
        e = residuals(params, seg)
        t_eff += e.shape[1]
        ssr += float(np.sum(e * e))
    return (
        t_eff * ld
        - 0.5 * n * t_eff * np.log(2.0 * np.pi * params.sigma2)
        - ssr / (2.0 * params.sigma2)
    )


def penalized_objective(
    params: ModelParams,
    panel: PanelData | Sequence[PanelData],
    pen: PenaltyConfig,
) -> float:
    """Negative log-likelihood plus the three L1 penalty sums."""
    penalty = (
        pen.lambda1 * float(np.sum(np.abs(params.w)))
        + pen.lambda2 * float(np.sum(np.abs(params.phi)))
        + pen.lambda3 * float(np.sum(np.abs(params.beta)))
    )
    return -log_likelihood(params, panel) + penalty


def predict_one_step(params: ModelParams, panel: PanelData) -> np.ndarray:
    """One-step-ahead predictions using observed lags.

    Column ``t - P`` is ``(I - W)^{-1} (X_t beta + sum_p Phi_p y_{t-p})`` for
    t = P+1..T, shape (n, T - P).  Satisfies ``y - yhat = (I - W)^{-1} eps``.
    """
    _check_shapes(params, panel)
    y, x = panel.y, panel.x
    n, T, P = panel.n, panel.T, params.P
    rhs = np.zeros((n, T - P))
    if panel.k:
        rhs += np.einsum("tnk,k->nt", x[P:], params.beta)
    for p in range(P):
        rhs += params.phi[p][:, None] * y[:, P - (p + 1) : T - (p + 1)]
    a = np.eye(n) - params.w
    try:
        lu, piv = scipy.linalg.lu_factor(a)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - guarded upstream
        raise SingularityError("I - W is singular") from exc
    return scipy.linalg.lu_solve((lu, piv), rhs)


def stationarity_check(params: ModelParams) -> StationarityReport:
    """Stability of the fitted process.

    Computes the spectral norm of (I - W)^{-1} sum_p Phi_p; the process is
    stationary when the norm is below 1.  A singular (I - W) yields
    ``stationary=False`` with an infinite norm marker.  The weaker sufficient
    conditions (max row sum of W, max per-location sum of temporal
    coefficients) are reported alongside.
    """
    w, phi = params.w, params.phi
    n = params.n
    row_sum_max = float(w.sum(axis=1).max()) if n else 0.0
    phi_sum_max = float(phi.sum(axis=0).max()) if phi.size else 0.0
    a = np.eye(n) - w
    sign, logabsdet = np.linalg.slogdet(a)
    if sign == 0 or logabsdet < np.log(DET_TOL):
        return StationarityReport(
            stationary=False,
            norm_value=np.inf,
            row_sum_max=row_sum_max,
            phi_sum_max=phi_sum_max,
            row_sums_ok=row_sum_max < 1.0,
            phi_sums_ok=phi_sum_max < 1.0,
        )
    d = phi.sum(axis=0) if phi.size else np.zeros(n)
    product = np.linalg.solve(a, np.diag(d))
    norm = float(np.linalg.norm(product, 2))
    return StationarityReport(
        stationary=norm < 1.0,
        norm_value=norm,
        row_sum_max=row_sum_max,
        phi_sum_max=phi_sum_max,
        row_sums_ok=row_sum_max < 1.0,
        phi_sums_ok=phi_sum_max < 1.0,
    )
