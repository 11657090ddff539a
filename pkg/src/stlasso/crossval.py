"""Penalty selection by temporally blocked cross-validation.

Time is cut into contiguous blocks.  Each block in turn is held out, the
model is fit on the remaining time points, and the held-out block is scored
by one-step-ahead prediction error using observed lags.  Removing an
interior block leaves two disconnected stretches of time; those are treated
as independent conditional-likelihood segments (each conditions on its own
first P observations) rather than being spliced across the seam.  The score
of a penalty triple is the RMSE pooled over every held-out observation; any
fold whose fit fails poisons the triple with an infinite score.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, DomainError, SearchError
from .model import PanelData, PenaltyConfig, predict_one_step
from .optimize import FitResult, SolverOptions, fit

DEFAULT_GRID_VALUES = (0.001, 0.01, 0.1, 1.0, 10.0)


def default_grid() -> list[PenaltyConfig]:
    """Decade-spaced Cartesian grid over the three penalty levels."""
    return [
        PenaltyConfig(lambda1=l1, lambda2=l2, lambda3=l3)
        for l1 in DEFAULT_GRID_VALUES
        for l2 in DEFAULT_GRID_VALUES
        for l3 in DEFAULT_GRID_VALUES
    ]


@dataclass(frozen=True)
class CvPlan:
    """Blocked cross-validation layout.

    ``grid`` is a sequence of :class:`PenaltyConfig` (``None`` selects the
    default decade grid; an explicitly empty grid is an error);
    ``n_blocks`` contiguous temporal blocks; ``refit_full`` asks
    :func:`grid_search` to refit on the whole panel at the winning triple.
    """

    n_blocks: int = 5
    grid: tuple | None = None
    refit_full: bool = True

    def __post_init__(self):
        if self.n_blocks < 2:
            raise DomainError(f"n_blocks must be >= 2, got {self.n_blocks}")
        if self.grid is None:
            object.__setattr__(self, "grid", tuple(default_grid()))
        else:
            grid = tuple(self.grid)
            if not grid:
                raise DomainError("grid must be nonempty")
            object.__setattr__(self, "grid", grid)


@dataclass(frozen=True)
class FoldScore:
    """One (triple, fold) evaluation for the exportable score table."""

    pen: PenaltyConfig
    fold: int
    rmse: float
    status: str  # "ok" or "failed: <reason>"


@dataclass(frozen=True)
class CvResult:
    best: PenaltyConfig
    best_score: float
    scores: tuple  # (PenaltyConfig, pooled score) per triple, grid order
    folds: tuple  # FoldScore rows
    best_fit: FitResult | None = None


def block_split(T: int, n_blocks: int, P: int) -> list[range]:
    """Contiguous temporal blocks as 0-based ranges covering 0..T-1.

    Sizes differ by at most one; when T is not divisible the longer blocks
    come first.  Every block must keep at least P + 2 time points.
    """
    if n_blocks < 2:
        raise DomainError(f"n_blocks must be >= 2, got {n_blocks}")
    if P < 1:
        raise DomainError(f"P must be >= 1, got {P}")
    if T < n_blocks * (P + 2):
        raise DomainError(
            f"T={T} too small for {n_blocks} blocks of at least {P + 2} points"
        )
    base, extra = divmod(T, n_blocks)
    blocks = []
    start = 0
    for b in range(n_blocks):
        size = base + (1 if b < extra else 0)
        blocks.append(range(start, start + size))
        start += size
    return blocks


def _training_segments(panel: PanelData, blocks: list[range], held_out: int) -> list[PanelData]:
    """Merge the retained blocks into maximal contiguous segments."""
    segments = []
    run_start = None
    run_stop = None
    for b, blk in enumerate(blocks):
        if b == held_out:
            if run_start is not None:
                segments.append((run_start, run_stop))
                run_start = None
            continue
        if run_start is None:
            run_start = blk.start
        run_stop = blk.stop
    if run_start is not None:
        segments.append((run_start, run_stop))
    return [
        PanelData(y=panel.y[:, lo:hi], x=panel.x[lo:hi]) for lo, hi in segments
    ]


def _fold_rmse_parts(panel, params, block, P):
    """Sum of squared one-step errors and count over a held-out block.

    Lags are the observed values from the full panel, so only time points
    with t - P before the start of the series are skipped.
    """
    lo = max(block.start, P)
    hi = block.stop
    if lo >= hi:
        return 0.0, 0
    window = PanelData(y=panel.y[:, lo - P : hi], x=panel.x[lo - P : hi])
    yhat = predict_one_step(params, window)
    err = panel.y[:, lo:hi] - yhat
    return float(np.sum(err * err)), err.size


def cv_score(
    panel: PanelData,
    pen: PenaltyConfig,
    plan: CvPlan,
    opts: SolverOptions | None = None,
    P: int = 1,
) -> float:
    """Pooled held-out one-step RMSE of one penalty triple.

    Returns ``inf`` when any fold's fit fails (failed folds poison the
    triple rather than being dropped).
    """
    score, _ = _cv_score_with_folds(panel, pen, plan, opts or SolverOptions(), P)
    return score


def _cv_score_with_folds(panel, pen, plan, opts, P):
    blocks = block_split(panel.T, plan.n_blocks, P)
    total_sq = 0.0
    total_count = 0
    folds = []
    failed = False
    for b, blk in enumerate(blocks):
        try:
            training = _training_segments(panel, blocks, b)
            result = fit(training, P=P, pen=pen, options=opts)
            sq, count = _fold_rmse_parts(panel, result.params, blk, P)
            if not np.isfinite(sq):
                raise ValueError("non-finite prediction error")
        except Exception as exc:  # noqa: BLE001 - any failure poisons the triple
            folds.append(FoldScore(pen=pen, fold=b, rmse=np.inf, status=f"failed: {exc}"))
            failed = True
            continue
        fold_rmse = np.sqrt(sq / count) if count else 0.0
        folds.append(FoldScore(pen=pen, fold=b, rmse=float(fold_rmse), status="ok"))
        total_sq += sq
        total_count += count
    if failed:
        return np.inf, folds
    score = float(np.sqrt(total_sq / total_count)) if total_count else 0.0
    return score, folds


def grid_search(
    panel: PanelData,
    plan: CvPlan,
    opts: SolverOptions | None = None,
    P: int = 1,
) -> CvResult:
    """Scores every triple in the plan's grid and returns the winner.

    Ties are broken toward the larger lambda1, then lambda2, then lambda3
    (the sparser model).  Raises :class:`SearchError` when every triple
    fails.
    """
    opts = opts or SolverOptions()
    if not plan.grid:
        raise DomainError("grid must be nonempty")
    scores = []
    all_folds = []
    for pen in plan.grid:
        score, folds = _cv_score_with_folds(panel, pen, plan, opts, P)
        scores.append((pen, score))
        all_folds.extend(folds)
    finite = [(pen, s) for pen, s in scores if np.isfinite(s)]
    if not finite:
        detail = "; ".join(
            f"({p.lambda1}, {p.lambda2}, {p.lambda3}) fold {f.fold}: {f.status}"
            for p, _ in scores
            for f in all_folds
            if f.pen == p and f.status != "ok"
        )
        raise SearchError(f"every penalty triple failed cross-validation: {detail}")
    best_pen, best_score = min(
        finite, key=lambda ps: (ps[1], -ps[0].lambda1, -ps[0].lambda2, -ps[0].lambda3)
    )
    best_fit = fit(panel, P=P, pen=best_pen, options=opts) if plan.refit_full else None
    return CvResult(
        best=best_pen,
        best_score=best_score,
        scores=tuple(scores),
        folds=tuple(all_folds),
        best_fit=best_fit,
    )


def scores_to_rows(result: CvResult) -> list[dict]:
    """Flatten fold scores into rows for the exportable CSV table."""
    return [
        {
            "lambda1": f.pen.lambda1,
            "lambda2": f.pen.lambda2,
            "lambda3": f.pen.lambda3,
            "fold": f.fold,
            "rmse": f.rmse,
            "status": f.status,
        }
        for f in result.folds
    ]
