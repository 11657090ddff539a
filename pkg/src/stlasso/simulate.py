"""Synthetic data generation: lattice weight matrices and model simulation.

The benchmark design places n locations on a square grid, connects queen
neighbors (including diagonals), row-standardizes the adjacency matrix, and
scales it by a spatial dependence factor.  Regression coefficients, temporal
coefficients with a sparse block of zeros, and unit error variance complete
the true parameter set.  Panels are simulated by iterating the reduced form

    y_t = (I - W)^{-1} (X_t beta + sum_p Phi_p y_{t-p} + eps_t)

from zero initial conditions through a burn-in period that is discarded.

Randomness is split into named streams derived from one seed so regressors
and errors can be reproduced independently: stream 0 draws regressors,
stream 1 draws errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DimensionError, DomainError
from .model import ModelParams, PanelData

STREAM_REGRESSORS = 0
STREAM_ERRORS = 1


def _stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream)])


@dataclass(frozen=True)
class DgpConfig:
    """Benchmark data-generating design.

    ``n`` must be a perfect square (grid side >= 2).  The first
    ``floor(zero_frac * n)`` locations get temporal coefficient zero and the
    rest ``phi_value`` (split evenly across lags when ``P > 1``), so the true
    temporal structure is sparse.
    """

    n: int = 9
    T: int = 100
    rho: float = 0.6
    beta: tuple = (3.0, 0.0, 2.0)
    phi_value: float = 0.3
    zero_frac: float = 0.25
    sigma2: float = 1.0
    P: int = 1
    burn_in: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.P < 1:
            raise DomainError(f"P must be >= 1, got {self.P}")
        if self.T < self.P + 2:
            raise DomainError(f"T must be >= P + 2, got T={self.T}, P={self.P}")
        if not (0 <= self.rho < 1):
            raise DomainError(f"rho must be in [0, 1), got {self.rho}")
        if self.burn_in < 0:
            raise DomainError("burn_in must be >= 0")
        if self.sigma2 < 0:
            raise DomainError("sigma2 must be >= 0")

    @property
    def k(self) -> int:
        return len(self.beta)


def queen_lattice_weights(n: int) -> np.ndarray:
    """Row-standardized queen-contiguity weights on a square grid.

    Locations are numbered row by row on a side x side grid (side = sqrt(n));
    two cells are neighbors when they touch horizontally, vertically, or
    diagonally.  Each row of the result sums to exactly 1.
    """
    side = math.isqrt(n)
    if side * side != n or side < 2:
        raise DomainError(f"n must be a perfect square >= 4, got {n}")
    adj = np.zeros((n, n))
    for a in range(n):
        ra, ca = divmod(a, side)
        for b in range(n):
            if a == b:
                continue
            rb, cb = divmod(b, side)
            if max(abs(ra - rb), abs(ca - cb)) == 1:
                adj[a, b] = 1.0
    return adj / adj.sum(axis=1, keepdims=True)


def make_true_params(cfg: DgpConfig) -> ModelParams:
    """True parameter set for the benchmark design."""
    w = cfg.rho * queen_lattice_weights(cfg.n)
    n_zero = int(math.floor(cfg.zero_frac * cfg.n))
    phi = np.full((cfg.P, cfg.n), cfg.phi_value / cfg.P)
    phi[:, :n_zero] = 0.0
    return ModelParams(
        beta=np.asarray(cfg.beta, dtype=float),
        phi=phi,
        w=w,
        sigma2=cfg.sigma2,
    )


def simulate_regressors(n: int, T: int, k: int, seed: int) -> np.ndarray:
    """iid standard normal regressors of shape (T, n, k), from stream 0."""
    return _stream(seed, STREAM_REGRESSORS).normal(size=(T, n, k))


def simulate_errors(n: int, T: int, sigma2: float, seed: int) -> np.ndarray:
    """iid N(0, sigma2) errors of shape (n, T), from stream 1."""
    if sigma2 < 0:
        raise DomainError(f"sigma2 must be >= 0, got {sigma2}")
    if sigma2 == 0:
        return np.zeros((n, T))
    return math.sqrt(sigma2) * _stream(seed, STREAM_ERRORS).normal(size=(n, T))


def simulate_panel(
    params: ModelParams,
    T: int,
    *,
    seed: int = 0,
    burn_in: int = 200,
    x: np.ndarray | None = None,
    errors: np.ndarray | None = None,
) -> PanelData:
    """Simulate a panel of length T from the model.

    The recursion starts from zero history and runs for ``burn_in + T``
    steps; the first ``burn_in`` columns are discarded.  ``x`` and
    ``errors`` may be injected for controlled experiments and must then
    cover the full horizon: shapes (burn_in + T, n, k) and
    (n, burn_in + T).  Anything not injected is drawn from the seed's
    named streams.
    """
    n, k, P = params.n, params.k, params.P
    if T < P + 1:
        raise DomainError(f"T must be > P, got T={T}, P={P}")
    if burn_in < 0:
        raise DomainError("burn_in must be >= 0")
    total = burn_in + T
    if x is None:
        x = simulate_regressors(n, total, k, seed)
    else:
        x = np.asarray(x, dtype=float)
        if x.shape != (total, n, k):
            raise DimensionError(
                f"injected x has shape {x.shape}, expected ({total}, {n}, {k})"
            )
    if errors is None:
        errors = simulate_errors(n, total, params.sigma2, seed)
    else:
        errors = np.asarray(errors, dtype=float)
        if errors.shape != (n, total):
            raise DimensionError(
                f"injected errors have shape {errors.shape}, expected ({n}, {total})"
            )
    lu_piv = scipy.linalg.lu_factor(np.eye(n) - params.w)
    y = np.zeros((n, total))
    for t in range(total):
        rhs = errors[:, t].copy()
        if k:
            rhs += x[t] @ params.beta
        for p in range(P):
            if t - (p + 1) >= 0:
                rhs += params.phi[p] * y[:, t - (p + 1)]
        y[:, t] = scipy.linalg.lu_solve(lu_piv, rhs)
    return PanelData(y=y[:, burn_in:], x=x[burn_in:])


def simulate_dataset(cfg: DgpConfig, seed: int | None = None) -> tuple[ModelParams, PanelData]:
    """True parameters plus one simulated panel for the benchmark design."""
    params = make_true_params(cfg)
    panel = simulate_panel(
        params,
        cfg.T,
        seed=cfg.seed if seed is None else seed,
        burn_in=cfg.burn_in,
    )
    return params, panel
