import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jadeode import engine, sparsereg
from jadeode.engine import JadeConfig, JadeModel, JadeState, SavedFit

from conftest import small_dataset


def model_and_state(seed, kind="gaussian", lambda_theta=1.0, n=30):
    _, _, data = small_dataset(seed, kind, n=n, replicates=3 if kind != "gaussian" else 1)
    cfg = JadeConfig(lambda_theta=lambda_theta, lambda_gamma=0.0)
    model = JadeModel(data, cfg)
    rng = np.random.default_rng(seed)
    c = rng.normal(scale=0.5, size=(model.p, model.M))
    state = JadeState(c, rng.normal(size=model.p), rng.normal(size=(model.p, model.p, model.L)))
    return model, state


def brute_objective(model, state, lambda_gamma):
    """Q evaluated from scratch on a fine trapezoid grid of the same nodes."""
    t = model.nodes
    theta = state.c @ model.latent.evaluate(t).T
    dtheta = state.c @ model.latent.derivative(t, 1).T
    nll = 0.0
    for j in range(model.p):
        th = state.c[j] @ model.latent.evaluate(model.dataset.times).T
        y = model.dataset.values[j]
        ok = ~np.isnan(y)
        b = model.family.cumulant(th)[0]
        nll += -np.nansum(y * th[:, None] - b[:, None] * ok) / ok.sum()
    fid = 0.0
    for j in range(model.p):
        pred = state.intercepts[j] + sum(
            model.component.evaluate(theta[k]) @ state.blocks[j, k] for k in range(model.p))
        fid += np.trapezoid((dtheta[j] - pred) ** 2, t)
    pen = 0.0
    for j in range(model.p):
        for k in range(model.p):
            g = state.blocks[j, k]
            if np.any(g):
                w = 1.0 if state.weights is None else state.weights[j, k]
                pen += w * np.linalg.norm(g - g.mean())
    return nll + model.config.lambda_theta * fid + lambda_gamma * pen


@pytest.mark.parametrize("kind", ["gaussian", "poisson", "binomial"])
def test_objective_matches_brute_force(kind):
    model, state = model_and_state(1, kind)
    state.weights = np.random.default_rng(0).uniform(0.5, 2, (2, 2))
    assert model.breakdown(state, 0.3).total == pytest.approx(brute_objective(model, state, 0.3), rel=1e-10)


@pytest.mark.parametrize("kind", ["gaussian", "poisson", "binomial"])
def test_gradient_matches_central_differences(kind):
    model, state = model_and_state(2, kind, lambda_theta=3.0)
    for j in range(model.p):
        g = model.grad_c(state, j)
        fd = np.zeros_like(g)
        h = 1e-6
        for m in range(g.size):
            sp, sm = state.copy(), state.copy()
            sp.c[j, m] += h
            sm.c[j, m] -= h
            fd[m] = (model.smooth_part(sp) - model.smooth_part(sm)) / (2 * h)
        assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(fd)


def test_direction_is_descent_and_clipped():
    model, state = model_and_state(3, "poisson")
    for j in range(model.p):
        d, g, H = model.direction_c(state, j)
        assert np.all(H >= model.config.mu_lo) and np.all(H <= model.config.mu_hi)
        assert g @ d < 0
        np.testing.assert_allclose(d, -g / H)


def test_armijo_accepts_only_sufficient_decrease():
    model, state = model_and_state(4, "gaussian")
    cfg = model.config
    d, g, H = model.direction_c(state, 0)
    alpha, k, row = model.armijo(state, 0, d, g, H)
    assert alpha == pytest.approx(cfg.alpha_init * cfg.eta**k)
    moved = state.copy()
    moved.c[0] += alpha * d
    base = model.smooth_part(state)
    assert model.smooth_part(moved) <= base + cfg.zeta * alpha * g @ d
    if k > 0:
        # the previous trial step failed the test
        prev = state.copy()
        prev.c[0] += alpha / cfg.eta * d
        assert model.smooth_part(prev) > base + cfg.zeta * alpha / cfg.eta * g @ d
    # demanding an unattainable decrease exhausts the backtracking budget
    alpha, k, row = model.armijo(state, 0, d, 1e12 * g, H)
    assert alpha == 0.0 and k == cfg.max_backtracks and row is None


def test_gamma_solve_matches_single_problem_solver():
    model, state = model_and_state(5)
    lam = 0.2 * model.lambda_max(state).max()
    beta, w, kkt, conv = model.solve_gamma(state, lam, np.ones((2, 2)))
    for j in range(model.p):
        sol = sparsereg.solve(model.group_problem(state, j, lam), tol=1e-10)
        np.testing.assert_allclose(beta[:, j], sol.beta, atol=1e-5)
    assert np.all(kkt[conv] < model.config.solver_tol)


def test_lambda_max_empties_every_equation():
    model, state = model_and_state(6)
    lmax = model.lambda_max(state)
    beta, _, _, _ = model.solve_gamma(state, 1.001 * lmax.max(), np.ones((2, 2)))
    assert not np.any(beta[1:])


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 1000), shift=st.floats(-3, 3))
def test_centering_is_invariant(seed, shift):
    model, state = model_and_state(seed % 7)
    state.blocks[0, 1] = 0.0
    state.blocks[1, 0] += shift
    centered = model.center(state)
    np.testing.assert_allclose(model.predicted_derivative(centered), model.predicted_derivative(state), atol=1e-10)
    np.testing.assert_allclose(model.component_means(centered), 0.0, atol=1e-10)
    assert np.all(centered.blocks[0, 1] == 0)
    assert model.breakdown(centered, 0.7).total == pytest.approx(model.breakdown(state, 0.7).total, rel=1e-10)


def test_penalty_with_infinite_weight():
    model, state = model_and_state(0)
    state.weights = np.array([[np.inf, 1.0], [1.0, 1.0]])
    assert np.isinf(model.penalty(state, 1.0))
    state.blocks[0, 0] = 0.0
    assert np.isfinite(model.penalty(state, 1.0))
    assert model.penalty(state, 0.0) == 0.0


@pytest.mark.parametrize("kind", ["gaussian", "poisson"])
def test_fit_descends_and_is_centered(kind):
    _, _, data = small_dataset(8, kind, replicates=1 if kind == "gaussian" else 3)
    cfg = JadeConfig(max_outer=6)
    model = JadeModel(data, cfg)
    c0, _ = engine.initial_latent(model)
    lam = 0.1 * model.lambda_max(model.zero_state(c0)).max()
    res = engine.fit(data, cfg, init=c0, lambda_gamma=lam, model=model)
    totals = np.array([r["total"] for r in res.objective_trace])
    assert np.all(np.diff(totals[1:]) <= 1e-10 * np.abs(totals[1:-1]).clip(1))
    np.testing.assert_allclose(model.component_means(res.state), 0.0, atol=1e-10)
    assert res.objective().total == pytest.approx(totals[-1], rel=1e-12)
    assert res.diagnostics["outer_iterations"] >= 1
    assert np.all(np.isfinite(res.state.weights[res.adjacency]))


def test_two_stage_keeps_the_smoother():
    _, _, data = small_dataset(9)
    cfg = JadeConfig()
    model = JadeModel(data, cfg)
    c0, _ = engine.initial_latent(model)
    res = engine.fit_two_stage(data, cfg, init=c0, lambda_gamma=0.01, model=model)
    np.testing.assert_array_equal(res.state.c, c0)
    assert res.method == "twostage"


def test_zero_lambda_theta_returns_intercepts_only():
    _, _, data = small_dataset(10)
    cfg = JadeConfig(lambda_theta=0.0, max_outer=1)
    res = engine.fit(data, cfg, lambda_gamma=0.1)
    assert not res.adjacency.any()


def test_tuning_score_by_hand_and_tune():
    _, _, data = small_dataset(11, n=40)
    cfg = JadeConfig(max_outer=1)
    model = JadeModel(data, cfg)
    c0, _ = engine.initial_latent(model)
    grid = engine.default_lambda_grid(model, c0, size=5)
    lam, best, table = engine.tune(data, cfg, grid, model, c0, method="twostage")
    assert len(table) == 5 and lam in grid
    resid = model.evaluate(best.state).resid
    ints = np.trapezoid(resid**2, model.nodes, axis=1)
    ref = np.log(ints).sum() + np.count_nonzero(best.state.blocks) * np.log(40) / 40
    assert engine.tuning_score(best) == pytest.approx(ref, rel=1e-9)
    assert min(r["score"] for r in table) == pytest.approx(engine.tuning_score(best))
    lam2, res, _ = engine.select_and_fit(data, cfg, grid, model, c0, method="jade")
    assert lam2 == lam and res.method == "jade"


def test_saved_fit_roundtrip():
    _, _, data = small_dataset(12)
    res = engine.fit(data, JadeConfig(max_outer=1), lambda_gamma=0.01)
    doc = json.loads(json.dumps(res.to_dict()))
    saved = SavedFit(doc)
    t = np.linspace(*res.t_span, 17)
    np.testing.assert_allclose(saved.latent(t), res.latent(t))
    np.testing.assert_allclose(saved.derivative(t), res.derivative(t))
    np.testing.assert_array_equal(saved.adjacency, res.adjacency)
    u = np.linspace(-1, 1, 5)
    np.testing.assert_allclose(saved.component(0, 1, u), res.component(0, 1, u))


def test_config_validation():
    with pytest.raises(ValueError):
        JadeConfig(eta=1.0)
    with pytest.raises(ValueError):
        JadeConfig(lambda_theta=-1)
    with pytest.raises(ValueError):
        JadeConfig(tune_path="x")
    with pytest.raises(ValueError):
        JadeConfig.from_dict({"bogus": 1})
    cfg = JadeConfig(nu=2.0)
    assert JadeConfig.from_dict(cfg.to_dict()) == cfg


def test_two_stage_tuning_scales_with_lambda_theta():
    _, _, data = small_dataset(13, n=40)
    picks, fits = [], []
    for lt in (1.0, 10.0):
        cfg = JadeConfig(lambda_theta=lt)
        model = JadeModel(data, cfg)
        c0, _ = engine.initial_latent(model)
        grid = engine.default_lambda_grid(model, c0, size=6)
        lam, res, _ = engine.tune(data, cfg, grid, model, c0, method="twostage")
        picks.append(lam / lt)
        fits.append(res)
    assert picks[0] == pytest.approx(picks[1], rel=1e-12)
    np.testing.assert_allclose(fits[0].state.blocks, fits[1].state.blocks, atol=1e-6)
