"""Solver behavior: gradients, convergence, penalties, constraints."""

import numpy as np
import pytest
from conftest import rand_instance

from stlasso.errors import DimensionError, DomainError
from stlasso.model import (
    ModelParams,
    PanelData,
    PenaltyConfig,
    Support,
    log_likelihood,
    pack_params,
    penalized_objective,
)
from stlasso.optimize import (
    FitResult,
    SolverOptions,
    fit,
    initialize,
    objective_gradient,
)
from stlasso.simulate import DgpConfig, make_true_params, simulate_dataset, simulate_panel

FAST = SolverOptions(tol_obj=1e-9)


# ---------------------------------------------------------------------------
# analytic gradient vs central differences
# ---------------------------------------------------------------------------


def _interior_instance(seed, n=3, T=10, k=2, P=2):
    """Instance with every parameter strictly inside the constraint set so
    central differences never step over a boundary."""
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.05, 0.8 / (n - 1), size=(n, n))
    np.fill_diagonal(w, 0.0)
    params = ModelParams(
        beta=rng.normal(size=k) + np.sign(rng.normal(size=k)) * 0.2,
        phi=rng.uniform(0.05, 0.8 / P, size=(P, n)),
        w=w,
        sigma2=rng.uniform(0.5, 2.0),
    )
    panel = PanelData(y=rng.normal(size=(n, T)), x=rng.normal(size=(T, n, k)))
    return params, panel


def _fd_gradient(params, panel, pen, h=1e-6):
    """Central finite differences through the flat parameter vector."""
    from stlasso.model import ParamLayout, unpack_params

    layout = ParamLayout(n=params.n, k=params.k, P=params.P)
    theta = pack_params(params)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fp = penalized_objective(unpack_params(tp, layout), panel, pen)
        fm = penalized_objective(unpack_params(tm, layout), panel, pen)
        grad[i] = (fp - fm) / (2 * h)
    return grad, layout


@pytest.mark.parametrize("seed", range(8))
def test_gradient_matches_finite_differences(seed):
    params, panel = _interior_instance(seed, n=3, T=10, k=2, P=2)
    pen = PenaltyConfig(lambda1=0.3, lambda2=0.1, lambda3=0.2)
    g = objective_gradient(params, panel, pen)
    fd, layout = _fd_gradient(params, panel, pen)
    analytic = np.concatenate(
        [g.beta, g.phi.ravel(), g.w[~np.eye(3, dtype=bool)], [g.sigma2]]
    )
    scale = np.maximum(1.0, np.abs(fd))
    assert np.max(np.abs(analytic - fd) / scale) < 1e-6


def test_gradient_without_penalty_is_nll_gradient():
    params, panel = _interior_instance(1, n=4, T=12, k=2, P=1)
    g0 = objective_gradient(params, panel)
    assert abs(g0.value - (-log_likelihood(params, panel))) < 1e-9
    fd, _ = _fd_gradient(params, panel, PenaltyConfig())
    analytic = np.concatenate(
        [g0.beta, g0.phi.ravel(), g0.w[~np.eye(4, dtype=bool)], [g0.sigma2]]
    )
    assert np.max(np.abs(analytic - fd) / np.maximum(1, np.abs(fd))) < 1e-6


def test_gradient_accepts_segments():
    params, p1 = rand_instance(2, n=3, T=8)
    _, p2 = rand_instance(3, n=3, T=9)
    g = objective_gradient(params, [p1, p2])
    g1 = objective_gradient(params, p1)
    g2 = objective_gradient(params, p2)
    assert np.allclose(g.beta, g1.beta + g2.beta, atol=1e-10)
    assert abs(g.value - (g1.value + g2.value)) < 1e-9


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def test_initialize_reasonable_on_benchmark_data():
    _, panel = simulate_dataset(DgpConfig(n=9, T=200, seed=0))
    start = initialize(panel, P=1)
    assert np.all(start.w == 0)
    assert start.sigma2 > 0
    assert np.all((start.phi >= 0) & (start.phi < 1))
    # pooled regression should land in the right neighborhood for beta
    assert np.allclose(start.beta, [3.0, 0.0, 2.0], atol=0.8)


def test_initialize_rejects_short_segment():
    _, panel = rand_instance(0, n=3, T=8, P=1)
    short = PanelData(y=panel.y[:, :2], x=panel.x[:2])
    with pytest.raises(DimensionError):
        initialize(short, P=2)


# ---------------------------------------------------------------------------
# unpenalized fit
# ---------------------------------------------------------------------------


def test_fit_recovers_truth_unpenalized():
    true, panel = simulate_dataset(DgpConfig(n=4, T=400, seed=7))
    r = fit(panel, P=1, options=FAST)
    assert r.converged and r.feasible
    assert np.allclose(r.params.beta, true.beta, atol=0.1)
    assert np.allclose(r.params.phi, true.phi, atol=0.1)
    assert np.allclose(r.params.w, true.w, atol=0.1)
    assert abs(r.params.sigma2 - 1.0) < 0.2


def test_fit_reduces_to_ols_when_structure_is_absent():
    # With W = 0 and phi frozen at zero the ML estimate of beta is exactly
    # the pooled least-squares coefficient; compare to the closed form.
    rng = np.random.default_rng(21)
    n, T, k = 4, 80, 2
    x = rng.normal(size=(T, n, k))
    beta = np.array([1.5, -0.7])
    y = np.einsum("tnk,k->nt", x, beta) + rng.normal(0, 0.5, size=(n, T))
    panel = PanelData(y=y, x=x)
    support = Support(
        beta_mask=np.ones(k, dtype=bool),
        phi_mask=np.zeros((1, n), dtype=bool),
        w_mask=np.zeros((n, n), dtype=bool),
    )
    r = fit(panel, P=1, support=support, options=FAST)
    xs = x[1:].reshape(-1, k)
    ys = np.transpose(y[:, 1:]).ravel()
    beta_ols, *_ = np.linalg.lstsq(xs, ys, rcond=None)
    assert np.allclose(r.params.beta, beta_ols, atol=1e-5)
    assert np.all(r.params.w == 0)
    assert np.all(r.params.phi == 0)
    # and sigma2 equals the mean squared residual of that regression
    resid = ys - xs @ beta_ols
    assert abs(r.params.sigma2 - resid @ resid / ys.size) < 1e-5


def test_fit_objective_not_above_truth_objective():
    true, panel = simulate_dataset(DgpConfig(n=4, T=100, seed=9))
    r = fit(panel, P=1, options=FAST)
    assert r.objective <= penalized_objective(true, panel, PenaltyConfig()) + 1e-6


def test_fit_trace_is_monotone_when_constraints_inactive():
    _, panel = simulate_dataset(DgpConfig(n=9, T=100, seed=4))
    r = fit(panel, P=1, pen=PenaltyConfig(lambda1=0.5, lambda2=0.5, lambda3=0.5))
    assert len(r.trace) >= 2
    diffs = np.diff(r.trace)
    assert np.all(diffs <= 1e-7 * np.maximum(1.0, np.abs(np.asarray(r.trace[:-1]))))


def test_fit_is_deterministic():
    _, panel = simulate_dataset(DgpConfig(n=4, T=60, seed=5))
    r1 = fit(panel, P=1, pen=PenaltyConfig(lambda1=0.1))
    r2 = fit(panel, P=1, pen=PenaltyConfig(lambda1=0.1))
    assert np.array_equal(pack_params(r1.params), pack_params(r2.params))
    assert r1.objective == r2.objective


# ---------------------------------------------------------------------------
# penalties and sparsity
# ---------------------------------------------------------------------------


def test_heavy_penalty_drives_everything_to_zero():
    _, panel = simulate_dataset(DgpConfig(n=4, T=60, seed=2))
    big = 1e6
    r = fit(panel, P=1, pen=PenaltyConfig(lambda1=big, lambda2=big, lambda3=big))
    assert np.all(r.params.beta == 0)
    assert np.all(r.params.phi == 0)
    assert np.all(r.params.w == 0)
    assert r.support.size == 0
    # sigma2 then equals the raw second moment of y over the window
    y = panel.y[:, 1:]
    assert abs(r.params.sigma2 - np.mean(y * y)) < 1e-6


def test_penalty_shrinks_l1_norms():
    _, panel = simulate_dataset(DgpConfig(n=9, T=100, seed=8))
    r0 = fit(panel, P=1, options=FAST)
    r1 = fit(panel, P=1, pen=PenaltyConfig(lambda1=5.0, lambda2=5.0, lambda3=5.0), options=FAST)
    assert np.abs(r1.params.w).sum() < np.abs(r0.params.w).sum()
    assert np.abs(r1.params.phi).sum() <= np.abs(r0.params.phi).sum() + 1e-12
    assert np.abs(r1.params.beta).sum() < np.abs(r0.params.beta).sum()


def test_sparsity_pattern_found_at_moderate_penalty():
    # n = 9 lattice: 32 true zero off-diagonal weights.  At this data size
    # the likelihood curvature per weight is in the thousands, so selection
    # needs lambda in the hundreds; most true zeros should vanish while the
    # true edges stay alive.
    true, panel = simulate_dataset(DgpConfig(n=9, T=200, seed=6))
    r = fit(panel, P=1, pen=PenaltyConfig(lambda1=200.0, lambda2=20.0))
    true_zero = (true.w == 0) & ~np.eye(9, dtype=bool)
    frac_zero = (r.params.w[true_zero] == 0).mean()
    assert frac_zero > 0.8
    # estimates at true edges stay in business
    assert r.params.w[true.w > 0].mean() > 0.05


def test_exact_zeros_not_just_small_values():
    _, panel = simulate_dataset(DgpConfig(n=4, T=80, seed=3))
    r = fit(panel, P=1, pen=PenaltyConfig(lambda2=50.0))
    assert np.all((r.params.phi == 0) | (r.params.phi > 1e-4))


# ---------------------------------------------------------------------------
# support freezing
# ---------------------------------------------------------------------------


def test_support_freeze_keeps_coordinates_at_zero():
    true, panel = simulate_dataset(DgpConfig(n=4, T=100, seed=11))
    mask = Support(
        beta_mask=np.array([True, False, True]),
        phi_mask=np.array([[False, True, True, True]]),
        w_mask=(true.w > 0),
    )
    r = fit(panel, P=1, support=mask, options=FAST)
    assert r.params.beta[1] == 0.0
    assert r.params.phi[0, 0] == 0.0
    assert np.all(r.params.w[~mask.w_mask] == 0)
    assert r.converged


def test_support_shape_mismatch_raises():
    _, panel = simulate_dataset(DgpConfig(n=4, T=50, seed=1))
    bad = Support(
        beta_mask=np.ones(2, dtype=bool),
        phi_mask=np.ones((1, 4), dtype=bool),
        w_mask=np.ones((4, 4), dtype=bool),
    )
    with pytest.raises(DimensionError):
        fit(panel, P=1, support=bad)


# ---------------------------------------------------------------------------
# segments, options, edge cases
# ---------------------------------------------------------------------------


def test_fit_on_segments_uses_all_of_them():
    true, panel = simulate_dataset(DgpConfig(n=4, T=300, seed=13))
    seg_a = PanelData(y=panel.y[:, :150], x=panel.x[:150])
    seg_b = PanelData(y=panel.y[:, 150:], x=panel.x[150:])
    r_both = fit([seg_a, seg_b], P=1, options=FAST)
    r_one = fit(seg_a, P=1, options=FAST)
    err_both = np.abs(r_both.params.w - true.w).max()
    # two segments carry the information of nearly the whole panel; the fit
    # must at least beat the half-panel fit's likelihood evaluated jointly
    ll_both = log_likelihood(r_both.params, [seg_a, seg_b])
    ll_one = log_likelihood(r_one.params, [seg_a, seg_b])
    assert ll_both >= ll_one - 1e-6
    assert err_both < 0.2


def test_fit_explicit_init_params():
    true, panel = simulate_dataset(DgpConfig(n=4, T=80, seed=15))
    r = fit(panel, P=1, options=SolverOptions(init=true))
    assert r.converged
    assert np.allclose(r.params.beta, true.beta, atol=0.3)


def test_fit_init_zeros():
    _, panel = simulate_dataset(DgpConfig(n=4, T=80, seed=15))
    r = fit(panel, P=1, options=SolverOptions(init="zeros"))
    assert r.converged


def test_fit_unknown_init_raises():
    _, panel = simulate_dataset(DgpConfig(n=4, T=50, seed=0))
    with pytest.raises(DomainError):
        fit(panel, P=1, options=SolverOptions(init="warm"))


def test_fit_multistart_matches_or_beats_single_start():
    _, panel = simulate_dataset(DgpConfig(n=4, T=80, seed=17))
    pen = PenaltyConfig(lambda1=0.5)
    r1 = fit(panel, P=1, pen=pen)
    r3 = fit(panel, P=1, pen=pen, options=SolverOptions(n_starts=3, seed=1))
    assert r3.objective <= r1.objective + 1e-6


def test_fit_p2_runs_and_respects_phi_sum_constraint():
    cfg = DgpConfig(n=4, T=150, phi_value=0.3, P=2, seed=19)
    true, panel = simulate_dataset(cfg)
    r = fit(panel, P=2, options=FAST)
    assert r.feasible
    assert np.all(r.params.phi.sum(axis=0) <= 1.0 - 1e-6 + 1e-12)


def test_fit_rejects_too_short_panel():
    _, panel = simulate_dataset(DgpConfig(n=4, T=50, seed=0))
    tiny = PanelData(y=panel.y[:, :1], x=panel.x[:1])
    with pytest.raises(DimensionError):
        fit(tiny, P=1)


def test_fit_result_fields_are_consistent():
    _, panel = simulate_dataset(DgpConfig(n=4, T=60, seed=23))
    pen = PenaltyConfig(lambda1=0.2, lambda2=0.2, lambda3=0.2)
    r = fit(panel, P=1, pen=pen)
    assert isinstance(r, FitResult)
    assert abs(r.objective - penalized_objective(r.params, panel, pen)) < 1e-8
    assert abs(r.loglik - log_likelihood(r.params, panel)) < 1e-8
    assert r.support.size == Support.from_params(r.params, 1e-4).size
    assert r.n_iter == len(r.trace) or r.n_iter >= len(r.trace)
