import numpy as np
import pytest
from conftest import kkt_constrained_wls, projected_subgradient, random_spd, random_tree_spec

from romehts import (
    BaseForecastSet,
    CovarianceDesign,
    CovMatrix,
    LossSpec,
    NumericError,
    ReconcilerConfig,
    ResidualPanel,
    ValidationError,
    build_hierarchy,
    combination_weights,
    combine_forecasts,
    matrix_sqrt,
    mint_gmatrix,
    pooled_sigma,
    realize_design,
    reconcile_bottom_up,
    reconcile_mint,
    reconcile_rome,
    rome_gmatrix_step,
)

DESIGN_KINDS = ("ols", "wlsv", "wlss", "sample", "shrink")


def identity_cov(n: int) -> CovMatrix:
    eye = np.eye(n)
    return CovMatrix(W=eye, W_sqrt=eye, W_sqrt_inv=eye)


def cov_from(W: np.ndarray) -> CovMatrix:
    root, inv = matrix_sqrt(W)
    return CovMatrix(W=W, W_sqrt=root, W_sqrt_inv=inv)


def random_instance(rng, max_nodes=30, T=None):
    spec = random_tree_spec(rng, max_nodes)
    h = build_hierarchy(spec)
    T = T or 4 * h.n
    resid = ResidualPanel(rng.standard_normal((h.n, T)))
    yhat = BaseForecastSet(3.0 + rng.standard_normal((h.n, 2)), residuals=resid)
    return h, yhat


# ---------------------------------------------------------------------------
# bottom-up


def test_bottom_up_unit_bottom(figure_tree):
    _, h = figure_tree
    yhat = np.zeros((9, 1))
    yhat[3:, 0] = 1.0
    yhat[:3, 0] = [17.0, -2.0, 9.0]  # aggregates are ignored
    res = reconcile_bottom_up(BaseForecastSet(yhat), h)
    assert np.allclose(res.ytilde[:, 0], [6, 2, 4, 1, 1, 1, 1, 1, 1])
    assert np.array_equal(res.ytilde[3:], yhat[3:])


def test_bottom_up_fixes_coherent_points(figure_tree):
    _, h = figure_tree
    rng = np.random.default_rng(0)
    b = rng.standard_normal((6, 3))
    coherent = BaseForecastSet(h.S @ b)
    res = reconcile_bottom_up(coherent, h)
    assert np.allclose(res.ytilde, coherent.yhat)


def test_bottom_up_two_node(two_node):
    _, h = two_node
    res = reconcile_bottom_up(BaseForecastSet(np.array([[5.0], [3.0]])), h)
    assert np.allclose(res.ytilde[:, 0], [3.0, 3.0])
    assert np.allclose(res.gmatrix @ h.S, np.eye(1))


# ---------------------------------------------------------------------------
# closed-form projection


def test_mint_two_node_half_half(two_node):
    _, h = two_node
    G = mint_gmatrix(h, identity_cov(2))
    assert np.allclose(G, [[0.5, 0.5]])


def test_mint_unbiasedness_random():
    rng = np.random.default_rng(5)
    for _ in range(20):
        h, yhat = random_instance(rng)
        W = cov_from(random_spd(rng, h.n))
        G = mint_gmatrix(h, W)
        assert np.max(np.abs(G @ h.S - np.eye(h.n_b))) < 1e-8


def test_mint_matches_alternative_closed_form(figure_tree):
    _, h = figure_tree
    W = identity_cov(9)
    G = mint_gmatrix(h, W)
    X = np.linalg.solve(W.W, h.S)
    G_alt = np.linalg.solve(h.S.T @ X, X.T)
    assert np.max(np.abs(G - G_alt)) < 1e-10


def test_mint_fixes_coherent_input(figure_tree):
    _, h = figure_tree
    rng = np.random.default_rng(2)
    coherent = BaseForecastSet(h.S @ rng.standard_normal((6, 4)), residuals=None)
    res = reconcile_mint(coherent, h, identity_cov(9))
    assert np.max(np.abs(res.ytilde - coherent.yhat)) < 1e-10
    assert np.all(res.iterations == 1)


def test_mint_scale_invariance(figure_tree):
    _, h = figure_tree
    rng = np.random.default_rng(3)
    W = random_spd(rng, 9)
    yhat = BaseForecastSet(rng.standard_normal((9, 3)))
    a = reconcile_mint(yhat, h, cov_from(W))
    b = reconcile_mint(yhat, h, cov_from(7.0 * W))
    assert np.max(np.abs(a.ytilde - b.ytilde)) < 1e-10


def test_mint_matches_kkt_oracle():
    rng = np.random.default_rng(8)
    for _ in range(10):
        h, yhat = random_instance(rng, max_nodes=12)
        W = random_spd(rng, h.n)
        res = reconcile_mint(yhat, h, cov_from(W))
        for col in range(yhat.H):
            oracle = kkt_constrained_wls(yhat.yhat[:, col], W, np.asarray(h.U))
            assert np.max(np.abs(res.ytilde[:, col] - oracle)) < 1e-8


def test_mint_singular_inner_matrix_raises(figure_tree):
    _, h = figure_tree
    zero = CovMatrix(W=np.zeros((9, 9)), W_sqrt=np.zeros((9, 9)), W_sqrt_inv=np.zeros((9, 9)))
    with pytest.raises(NumericError):
        mint_gmatrix(h, zero)


# ---------------------------------------------------------------------------
# robust iteration


def test_rome_ls_equals_mint_all_designs():
    rng = np.random.default_rng(17)
    for _ in range(10):
        h, yhat = random_instance(rng, max_nodes=20)
        for kind in DESIGN_KINDS:
            W = realize_design(CovarianceDesign(kind), yhat.residuals, h)
            mint = reconcile_mint(yhat, h, W)
            rome = reconcile_rome(yhat, h, W, LossSpec("ls"))
            assert np.max(np.abs(rome.ytilde - mint.ytilde)) <= 1e-6
            assert np.all(rome.iterations <= 2)
            assert np.all(rome.converged)


def test_rome_returns_coherent_input_unchanged(figure_tree):
    _, h = figure_tree
    rng = np.random.default_rng(4)
    coherent = BaseForecastSet(h.S @ (1.0 + rng.standard_normal((6, 2))))
    res = reconcile_rome(coherent, h, identity_cov(9), LossSpec("huber", k=1.0))
    assert np.max(np.abs(res.ytilde - coherent.yhat)) < 1e-12
    assert np.all(res.iterations <= 2)


def test_rome_coherence_all_losses(figure_tree):
    _, h = figure_tree
    rng = np.random.default_rng(6)
    resid = ResidualPanel(rng.standard_normal((9, 60)))
    yhat = BaseForecastSet(rng.standard_normal((9, 3)) * 2.0, residuals=resid)
    sigma = pooled_sigma(resid.residuals)
    losses = [
        LossSpec("ls"),
        LossSpec("lad", sigma_hat=sigma),
        LossSpec("huber", sigma_hat=sigma),
        LossSpec("lp", p=1.5),
        LossSpec("quantile", q=0.5),
    ]
    for kind in DESIGN_KINDS:
        W = realize_design(CovarianceDesign(kind), resid, h)
        for loss in losses:
            res = reconcile_rome(yhat, h, W, loss)
            for col in range(res.H):
                y = res.ytilde[:, col]
                assert h.coherence_residual(y) <= 1e-6 * (1 + np.max(np.abs(y)))
                assert res.converged[col]


def test_rome_huber_objective_matches_subgradient_oracle(figure_tree):
    _, h = figure_tree
    rng = np.random.default_rng(23)
    resid = ResidualPanel(rng.standard_normal((9, 80)))
    yhat_mat = rng.standard_normal((9, 1))
    yhat_mat[4, 0] += 8.0  # one outlying base forecast
    yhat = BaseForecastSet(yhat_mat, residuals=resid)
    sigma = pooled_sigma(resid.residuals)
    W = realize_design(CovarianceDesign("wlsv"), resid, h)
    loss = LossSpec("huber", sigma_hat=sigma)
    res = reconcile_rome(yhat, h, W, loss)

    k = loss.huber_k
    value = lambda e: float(np.sum(np.where(np.abs(e) <= k, 0.5 * e * e, k * np.abs(e) - 0.5 * k * k)))
    subgrad = lambda e: np.clip(e, -k, k)
    A = np.asarray(h.U) @ W.W_sqrt
    ystar = W.W_sqrt_inv @ yhat_mat[:, 0]
    _, f_oracle = projected_subgradient(ystar, A, value, subgrad, iters=40_000)
    assert res.objective[0] == pytest.approx(f_oracle, abs=1e-4)


def test_rome_monotone_descent_random_instances():
    rng = np.random.default_rng(31)
    for _ in range(15):
        h, yhat = random_instance(rng, max_nodes=16)
        sigma = pooled_sigma(yhat.residuals.residuals)
        for loss in (LossSpec("huber", sigma_hat=sigma), LossSpec("lad", sigma_hat=sigma)):
            for kind in ("ols", "shrink"):
                W = realize_design(CovarianceDesign(kind), yhat.residuals, h)
                res = reconcile_rome(yhat, h, W, loss)
                for trace in res.objective_trace:
                    assert np.all(np.diff(trace) <= 1e-10)


def test_rome_idempotent(figure_tree):
    _, h = figure_tree
    rng = np.random.default_rng(12)
    resid = ResidualPanel(rng.standard_normal((9, 50)))
    yhat = BaseForecastSet(rng.standard_normal((9, 2)), residuals=resid)
    sigma = pooled_sigma(resid.residuals)
    W = realize_design(CovarianceDesign("wlsv"), resid, h)
    loss = LossSpec("huber", sigma_hat=sigma)
    once = reconcile_rome(yhat, h, W, loss)
    again = reconcile_rome(BaseForecastSet(once.ytilde, residuals=resid), h, W, loss)
    assert np.max(np.abs(again.ytilde - once.ytilde)) < 1e-8


def test_rome_omega_max_reported_not_raised(figure_tree):
    _, h = figure_tree
    rng = np.random.default_rng(14)
    resid = ResidualPanel(rng.standard_normal((9, 50)))
    yhat = BaseForecastSet(rng.standard_normal((9, 1)) * 4.0, residuals=resid)
    sigma = pooled_sigma(resid.residuals)
    cfg = ReconcilerConfig(omega_max=1)
    res = reconcile_rome(yhat, h, identity_cov(9), LossSpec("lad", sigma_hat=sigma), cfg)
    assert not res.converged[0]
    assert res.iterations[0] == 1


def test_rome_lad_modes_and_tiny_huber_agree(figure_tree):
    _, h = figure_tree
    rng = np.random.default_rng(19)
    resid = ResidualPanel(rng.standard_normal((9, 70)))
    yhat = BaseForecastSet(rng.standard_normal((9, 2)), residuals=resid)
    sigma = pooled_sigma(resid.residuals)
    W = realize_design(CovarianceDesign("ols"), resid, h)
    lad = LossSpec("lad", sigma_hat=sigma)
    approx = reconcile_rome(yhat, h, W, lad, ReconcilerConfig(lad_mode="huber_approx"))
    tiny = reconcile_rome(yhat, h, W, LossSpec("huber", k=1e-4 * sigma), ReconcilerConfig())
    assert np.max(np.abs(approx.ytilde - tiny.ytilde)) < 1e-6
    pert = reconcile_rome(yhat, h, W, lad, ReconcilerConfig(lad_mode="perturbation"))
    assert np.max(np.abs(approx.ytilde - pert.ytilde)) < 1e-2  # same optimum, looser path


def test_rome_scale_invariance(figure_tree):
    _, h = figure_tree
    rng = np.random.default_rng(25)
    resid = ResidualPanel(rng.standard_normal((9, 60)))
    yhat = BaseForecastSet(rng.standard_normal((9, 2)), residuals=resid)
    sigma = pooled_sigma(resid.residuals)
    W = random_spd(rng, 9)
    a = reconcile_rome(yhat, h, cov_from(W), LossSpec("ls"))
    b = reconcile_rome(yhat, h, cov_from(7.0 * W), LossSpec("ls"))
    # iterates carry O(varsigma) perturbation noise, so looser than mint's 1e-10
    assert np.max(np.abs(a.ytilde - b.ytilde)) < 1e-6


def test_rome_backends_agree(figure_tree):
    _, h = figure_tree
    rng = np.random.default_rng(29)
    resid = ResidualPanel(rng.standard_normal((9, 60)))
    yhat = BaseForecastSet(rng.standard_normal((9, 3)), residuals=resid)
    sigma = pooled_sigma(resid.residuals)
    W = realize_design(CovarianceDesign("shrink"), resid, h)
    for loss in (LossSpec("ls"), LossSpec("huber", sigma_hat=sigma), LossSpec("lad", sigma_hat=sigma)):
        a = reconcile_rome(yhat, h, W, loss, backend="numba")
        b = reconcile_rome(yhat, h, W, loss, backend="numpy")
        assert np.array_equal(a.ytilde, b.ytilde)
        assert np.array_equal(a.iterations, b.iterations)


def test_rome_init_validation(figure_tree):
    _, h = figure_tree
    rng = np.random.default_rng(33)
    yhat = BaseForecastSet(rng.standard_normal((9, 2)))
    bad = ReconcilerConfig(init=np.ones(9))  # not coherent
    with pytest.raises(ValidationError):
        reconcile_rome(yhat, h, identity_cov(9), LossSpec("ls"), bad)
    good_init = h.S @ np.ones(6)
    cfg = ReconcilerConfig(init=good_init)
    res = reconcile_rome(yhat, h, identity_cov(9), LossSpec("ls"), cfg)
    assert np.all(res.converged)


def test_rome_gmatrix_single_horizon(figure_tree):
    _, h = figure_tree
    rng = np.random.default_rng(37)
    resid = ResidualPanel(rng.standard_normal((9, 50)))
    yhat = BaseForecastSet(rng.standard_normal((9, 1)), residuals=resid)
    sigma = pooled_sigma(resid.residuals)
    W = realize_design(CovarianceDesign("wlsv"), resid, h)
    res = reconcile_rome(yhat, h, W, LossSpec("huber", sigma_hat=sigma))
    assert res.gmatrix is not None
    assert np.max(np.abs(res.gmatrix @ h.S - np.eye(6))) < 1e-8
    assert np.max(np.abs(h.S @ (res.gmatrix @ yhat.yhat[:, 0]) - res.ytilde[:, 0])) < 1e-3


# ---------------------------------------------------------------------------
# trace-form update


def test_gstep_ls_reduces_to_closed_form(figure_tree):
    _, h = figure_tree
    rng = np.random.default_rng(41)
    W = cov_from(random_spd(rng, 9))
    X = np.linalg.solve(W.W, h.S)
    G_closed = np.linalg.solve(h.S.T @ X, X.T)
    errors = rng.standard_normal(9)
    for _ in range(3):
        G_prev = rng.standard_normal((6, 9))
        G = rome_gmatrix_step(h, W, LossSpec("ls"), G_prev, errors)
        assert np.max(np.abs(G - G_closed)) < 1e-6


def test_gstep_preserves_unbiasedness(figure_tree):
    _, h = figure_tree
    rng = np.random.default_rng(43)
    W = cov_from(random_spd(rng, 9))
    G = np.asarray(h.J)
    errors = rng.standard_normal(9) * 2.0
    for loss in (LossSpec("huber", k=1.0), LossSpec("lad", sigma_hat=1.0)):
        for _ in range(5):
            G = rome_gmatrix_step(h, W, loss, G, errors)
            assert np.max(np.abs(G @ h.S - np.eye(6))) < 1e-8


def test_gstep_ls_iteration_reaches_projection_fixed_point():
    spec_rng = np.random.default_rng(47)
    spec = random_tree_spec(spec_rng, max_nodes=5)
    h = build_hierarchy(spec)
    rng = np.random.default_rng(48)
    W = cov_from(random_spd(rng, h.n))
    yhat = BaseForecastSet(rng.standard_normal((h.n, 1)))
    errors = rng.standard_normal(h.n)
    G = np.asarray(h.J)
    for _ in range(50):
        G = rome_gmatrix_step(h, W, LossSpec("ls"), G, errors)
    fixed = h.S @ (G @ yhat.yhat[:, 0])
    target = reconcile_rome(yhat, h, W, LossSpec("ls")).ytilde[:, 0]
    assert np.max(np.abs(fixed - target)) < 1e-4


# ---------------------------------------------------------------------------
# combinations


def test_combination_weights_pinned():
    assert combination_weights("oneway", 12)[0] == pytest.approx(0.5)
    assert combination_weights("twoway", 12)[11] == pytest.approx(1.0 / 13.0)
    assert combination_weights("twoway", 12)[0] == pytest.approx(12.0 / 13.0)
    assert np.all(combination_weights("average", 5) == 0.5)
    assert combination_weights("oneway", 12)[11] == pytest.approx(1.0 / 13.0)


def test_combine_identical_inputs_fixed_point(figure_tree):
    _, h = figure_tree
    rng = np.random.default_rng(51)
    yhat = BaseForecastSet(rng.standard_normal((9, 12)))
    res = reconcile_mint(yhat, h, identity_cov(9))
    for pattern in ("average", "oneway", "twoway"):
        combo = combine_forecasts(res, res, pattern)
        assert np.allclose(combo.ytilde, res.ytilde)


def test_combine_outputs_coherent(figure_tree):
    _, h = figure_tree
    rng = np.random.default_rng(53)
    resid = ResidualPanel(rng.standard_normal((9, 60)))
    yhat = BaseForecastSet(rng.standard_normal((9, 12)), residuals=resid)
    sigma = pooled_sigma(resid.residuals)
    W = realize_design(CovarianceDesign("ols"), resid, h)
    ls = reconcile_rome(yhat, h, W, LossSpec("ls"))
    lad = reconcile_rome(yhat, h, W, LossSpec("lad", sigma_hat=sigma))
    for pattern in ("average", "oneway", "twoway"):
        combo = combine_forecasts(ls, lad, pattern)
        for col in range(combo.H):
            y = combo.ytilde[:, col]
            assert h.coherence_residual(y) <= 1e-6 * (1 + np.max(np.abs(y)))


def test_combine_shape_mismatch(figure_tree, two_node):
    _, h9 = figure_tree
    _, h2 = two_node
    a = reconcile_bottom_up(BaseForecastSet(np.ones((9, 2))), h9)
    b = reconcile_bottom_up(BaseForecastSet(np.ones((2, 2))), h2)
    with pytest.raises(ValidationError):
        combine_forecasts(a, b, "average")
