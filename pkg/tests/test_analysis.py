import math

import numpy as np
import pytest

from advmp import analysis as an
from advmp.attacks import PerturbationSpec, as_mixture
from advmp.errors import InvalidInputError, UnsupportedModelError
from advmp.geometry import NormKind
from advmp.models import (
    CROSS_ENTROPY, Activation, Dataset, init_linear_regression, init_logistic, init_mlp,
)
from advmp.training import LrSchedule, StrategyKind, TrainConfig, train
from oracles import closed_form_risk

EPS = {NormKind.L1: 0.6, NormKind.L2: 0.4, NormKind.LINF: 0.3}


def spec(kind, eps, steps=10, restarts=0):
    return PerturbationSpec(NormKind.parse(kind), eps, steps=steps, restarts=restarts)


def regression_instance(seed, n=10):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    return X, X @ rng.standard_normal(2) + 0.5 * rng.standard_normal(n)


# Lipschitz, smoothness and offset estimates ----------------------------------------

def test_lipschitz_examples():
    rng = np.random.default_rng(0)
    box = an.Box([-1.0, -1.0], [1.0, 1.0])
    assert an.estimate_lipschitz(lambda t: 3.0, box, 100, rng) == 0.0
    a = np.array([2.0, -1.0])
    L = an.estimate_lipschitz(lambda t: a @ t, box, 10_000, rng)
    assert 0.95 * np.linalg.norm(a) <= L <= np.linalg.norm(a) * (1 + 1e-12)
    L = an.estimate_lipschitz(lambda t: float(t[0] ** 2), an.Box([-1.0], [1.0]), 10_000, rng)
    assert 1.9 <= L <= 2.0


def test_degenerate_box_and_sample_count():
    with pytest.raises(InvalidInputError):
        an.Box([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(InvalidInputError):
        an.estimate_lipschitz(lambda t: 0.0, an.Box([0.0], [1.0]), 1, np.random.default_rng(0))


def test_estimates_deterministic_per_seed():
    box = an.Box([-1.0], [2.0])
    vals = [an.estimate_lipschitz(lambda t: math.sin(3 * t[0]), box, 200, np.random.default_rng(4)) for _ in range(2)]
    assert vals[0] == vals[1]


def test_grad_lipschitz_examples():
    rng = np.random.default_rng(1)
    box = an.Box([-1.0, -1.0], [1.0, 1.0])
    assert an.estimate_grad_lipschitz(lambda t: np.array([1.0, 2.0]), box, 100, rng) == 0.0
    A = np.diag([1.0, 3.0])
    beta = an.estimate_grad_lipschitz(lambda t: A @ t, box, 10_000, rng)
    assert 0.95 * 3 <= beta <= 3 * (1 + 1e-12)


def test_avg_surrogate_beta_is_mean_of_per_norm_betas():
    X, y = regression_instance(3)
    box = an.Box([0.6, 1.6], [1.0, 2.0])  # away from every axis and diagonal
    betas = []
    for s in ("p1", "p2", "pinf", "avg"):
        _, g = an.surrogate_functions(X, y, s, EPS)
        betas.append(an.estimate_grad_lipschitz(g, box, 4000, np.random.default_rng(5)))
    assert betas[3] == pytest.approx(np.mean(betas[:3]), rel=0.10)


def test_nonsmooth_offset_examples():
    rng = np.random.default_rng(2)
    A = np.diag([1.0, 3.0])
    slope, eta = an.estimate_nonsmooth_offset(lambda t: A @ t, an.Box([-1.0, -1.0], [1.0, 1.0]), 4000, rng)
    assert eta <= 1e-3 * slope
    slope, eta = an.estimate_nonsmooth_offset(lambda t: np.sign(t), an.Box([-1.0], [1.0]), 4000, rng)
    assert eta == pytest.approx(2.0, rel=0.05)


def test_linf_surrogate_offset_positive_across_axis():
    X, y = regression_instance(4)
    _, g = an.surrogate_functions(X, y, "pinf", EPS)
    _, eta = an.estimate_nonsmooth_offset(g, an.Box([-0.5, 0.5], [0.5, 1.5]), 4000, np.random.default_rng(0))
    _, eta_smooth = an.estimate_nonsmooth_offset(g, an.Box([0.5, 0.5], [1.0, 1.0]), 4000, np.random.default_rng(0))
    assert eta > 0.0
    assert eta > 10 * eta_smooth


def test_estimate_smoothness_bundle():
    est = an.estimate_smoothness(lambda t: float(t @ t), lambda t: 2 * t, an.Box.around(np.zeros(2), 1.0), 500,
                                 np.random.default_rng(0))
    assert est.sample_count == 500 and est.grad_lipschitz_beta == pytest.approx(2.0)
    assert min(est.lipschitz_L, est.grad_lipschitz_beta, est.nonsmooth_offset_eta) >= 0


# surrogates and landscapes ------------------------------------------------------------

def test_surrogate_matches_closed_form(rng):
    X, y = regression_instance(5)
    thetas = rng.standard_normal((20, 2))
    for name, kind in (("p1", "l1"), ("p2", "l2"), ("pinf", "linf")):
        vals = an.surrogate_values(thetas, X, y, name, EPS)
        ref = [closed_form_risk(t, X, y, kind, EPS[NormKind.parse(kind)]) for t in thetas]
        np.testing.assert_allclose(vals, ref, rtol=1e-12)


def test_surrogate_gradient_matches_finite_differences(rng):
    X, y = regression_instance(6)
    for s in an.SURROGATES:
        f, g = an.surrogate_functions(X, y, s, EPS)
        for _ in range(10):
            t = rng.uniform(0.3, 1.5, size=2) * rng.choice((-1, 1), size=2)
            if abs(abs(t[0]) - abs(t[1])) < 0.05:
                continue
            h = 1e-6
            fd = np.array([(f(t + h * e) - f(t - h * e)) / (2 * h) for e in np.eye(2)])
            np.testing.assert_allclose(g(t), fd, rtol=1e-5)


def test_landscape_algebra_and_examples():
    X, y = regression_instance(7)
    grids = {s: an.landscape_grid(X, y, s, EPS, 2.0, 41) for s in an.SURROGATES}
    stack = np.stack([grids[s].values for s in ("p1", "p2", "pinf")])
    np.testing.assert_allclose(grids["wst"].values, stack.max(axis=0), rtol=1e-12, atol=0)
    np.testing.assert_allclose(grids["avg"].values, stack.mean(axis=0), rtol=1e-12, atol=0)
    zero = an.landscape_grid(X, y, "p2", 0.0, 2.0, 41)
    t1, t2 = np.meshgrid(zero.theta1_axis, zero.theta2_axis, indexing="ij")
    plain = ((X @ np.stack([t1.ravel(), t2.ravel()]) - y[:, None]) ** 2).sum(axis=0).reshape(41, 41)
    np.testing.assert_allclose(zero.values, plain, rtol=1e-12)
    assert np.all(grids["wst"].values >= 0)


def test_strategy_names_map_to_surrogates():
    X, y = regression_instance(8)
    assert an.landscape_grid(X, y, StrategyKind.ADT, EPS, 1.0, 5).surrogate == "avg"
    assert an.landscape_grid(X, y, StrategyKind.MAX, EPS, 1.0, 5).surrogate == "wst"
    assert an.landscape_grid(X, y, NormKind.L1, EPS, 1.0, 5).surrogate == "p1"


def test_landscape_needs_two_dimensions():
    with pytest.raises(InvalidInputError):
        an.landscape_grid(np.ones((3, 3)), np.ones(3), "p2", EPS)


@pytest.mark.parametrize("surrogate,expected", [
    ("pinf", an.AXES), ("p1", an.DIAGONALS), ("p2", frozenset({an.ORIGIN})),
])
def test_kink_detection_single_norm(surrogate, expected):
    X, y = regression_instance(9)
    grid = an.landscape_grid(X, y, surrogate, EPS, 2.0, 201)
    assert an.detect_gradient_discontinuity(grid) == expected


def test_kink_detection_smooth_surface_is_empty():
    X, y = regression_instance(10)
    assert an.detect_gradient_discontinuity(an.landscape_grid(X, y, "p2", 0.0, 2.0, 201)) == frozenset()


def test_kink_detection_rejects_coarse_or_asymmetric_grids():
    X, y = regression_instance(11)
    with pytest.raises(InvalidInputError):
        an.detect_gradient_discontinuity(an.landscape_grid(X, y, "p1", EPS, 2.0, 101))
    with pytest.raises(InvalidInputError):
        an.detect_gradient_discontinuity(an.landscape_grid(X, y, "p1", EPS, (-1.0, 2.0), 201))


# stability, stepsizes, bias ----------------------------------------------------------

def test_stability_bound_example():
    assert an.stability_bound(1.0, [0.01] * 100, 100) == pytest.approx(0.02)


def logistic_task(n=30, strategy=StrategyKind.AVG):
    centers = np.array([[-1.5, 0.0], [1.5, 0.0]])

    def sampler(m, rng):
        y = rng.integers(2, size=m)
        return Dataset(centers[y] + rng.standard_normal((m, 2)), y, 2)

    mix = as_mixture([spec("l2", 0.3, 5), spec("linf", 0.2, 5)])
    return an.StabilityTask(sampler, n, init_logistic(2, 2), mix, strategy)


def test_stability_zero_step_and_identical_data():
    rep = an.stability_probe(logistic_task(), 20, 0.0, 2, np.random.default_rng(0), probe_size=50)
    for t in rep.traces:
        assert np.all(t.delta_t == 0) and t.final_loss_gap == 0.0 and t.theoretical_bound == 0.0
    rep = an.stability_probe(logistic_task(), 20, 0.5, 2, np.random.default_rng(0), probe_size=50, identical=True)
    assert all(np.all(t.delta_t == 0) and t.final_loss_gap == 0.0 for t in rep.traces)


def test_stability_recursion_and_bound():
    rep = an.stability_probe(logistic_task(), 60, 0.2, 3, np.random.default_rng(3), probe_size=100)
    for t in rep.traces:
        assert t.delta_t[0] == 0.0 and np.all(t.delta_t >= 0)
        step = np.diff(t.delta_t)
        mean_alpha = t.mean_alphas
        # Untouched steps are non-expansive; touched steps grow by at most 2 L alpha.
        assert np.all(step[~t.touched] <= 1e-9)
        assert np.all(step[t.touched] <= 2 * t.lipschitz_L * mean_alpha[t.touched] + 1e-9)
        assert t.final_loss_gap <= t.theoretical_bound


def test_stability_schedule_callable_and_adt():
    task = logistic_task(strategy=StrategyKind.ADT)
    rep = an.stability_probe(task, 30, lambda t: 0.1 / (1 + t), 1, np.random.default_rng(0), probe_size=50)
    assert rep.mean_gap <= rep.mean_bound


def test_stability_refuses_nonconvex():
    task = logistic_task()
    mlp = an.StabilityTask(task.sampler, 10, init_mlp(2, 4, 2), task.mixture)
    with pytest.raises(UnsupportedModelError):
        an.stability_probe(mlp, 5, 0.1, 1, np.random.default_rng(0))
    rep = an.stability_probe(mlp, 5, 0.1, 1, np.random.default_rng(0), probe_size=20, force=True)
    assert len(rep.traces) == 1


def test_stepsize_recommendation_examples():
    r = an.stepsize_recommendation([1, 1, 1], 1, 1, 100, 100)
    assert r["alpha_avg_cap"] == r["alpha_sw_cap"] == 1.0
    r = an.stepsize_recommendation([1, 4], 1, 1, 100, 100)
    assert r["alpha_avg_cap"] == pytest.approx(0.4) and r["alpha_sw_cap"] == pytest.approx(0.625)
    assert r["alpha_star"] == pytest.approx(10 / math.sqrt(30000)) and r["alpha_star"] == pytest.approx(0.0577, abs=1e-4)
    with pytest.raises(InvalidInputError):
        an.stepsize_recommendation([1, 0], 1, 1, 1, 1)


def test_am_hm(rng):
    for _ in range(200):
        b = rng.exponential(size=int(rng.integers(1, 6)))
        r = an.stepsize_recommendation(b, 1, 1, 1, 1)
        assert r["alpha_sw_cap"] >= r["alpha_avg_cap"] * (1 - 1e-12)


def test_optimization_bias_examples():
    assert an.optimization_bias_report([0.1, 0.1, 0.1], 3.0) == pytest.approx(0.0, abs=1e-12)
    assert an.optimization_bias_report([0.1, 0.2], 1.0) == pytest.approx(2 / 3)
    assert an.optimization_bias_report([0.1, 0.7], 0.0) == 0.0
    with pytest.raises(InvalidInputError):
        an.optimization_bias_report([0.0, 0.0], 1.0)


def test_bias_constant_estimate():
    H = np.array([[3.0, 1.0], [1.0, 0.5], [2.0, 0.4]])
    assert an.estimate_bias_constant(H) == pytest.approx(2.0)
    assert an.estimate_bias_constant(H, best_index=0) == pytest.approx(2.0)
    with pytest.raises(InvalidInputError):
        an.estimate_bias_constant(np.zeros((0, 2)))


# risk accounting and gradient traces ---------------------------------------------------

def _classifier(seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((40, 2)) + np.repeat([[2, 0], [-2, 0]], 20, axis=0)
    return Dataset(X, np.repeat([0, 1], 20), 2), init_mlp(2, 5, 2, Activation.SILU, rng)


def test_excess_risk_examples():
    ds, m = _classifier()
    mix = as_mixture([spec("l2", 0.3), spec("linf", 0.1)])
    r = an.excess_risk_report(m, ds, ds, mix, m.params, np.random.default_rng(0))
    assert r.gen_gap == 0.0 and r.opt_gap_vs_best == 0.0
    assert r.gen_gap == r.held_out_risk - r.empirical_risk
    one = an.excess_risk_report(m, ds, ds, [spec("l2", 0.3)], m.params, np.random.default_rng(0))
    assert one.empirical_risk == pytest.approx(an.mixture_risk(m, ds, [spec("l2", 0.3)], CROSS_ENTROPY, 1),
                                               rel=1e-12)


def _trained(log=True, seed=0, epochs=4):
    ds, m = _classifier(seed)
    cfg = TrainConfig(epochs=epochs, batch_size=10, lr=LrSchedule("constant", 0.1), swa_start_epoch=None,
                      probe_examples=40, log_grad_norms=log)
    return train(ds, m, [spec("l1", 0.5), spec("l2", 0.3), spec("linf", 0.1)], StrategyKind.AVG, cfg,
                 np.random.default_rng(seed))


def test_grad_norm_trace_shapes_and_wst_bound():
    tr = an.grad_norm_trace(_trained().trajectory)
    assert set(tr) == {"l1", "l2", "linf", "avg", "wst"} and all(len(v) == 4 for v in tr.values())
    assert np.all(tr["avg"] <= np.max([tr["l1"], tr["l2"], tr["linf"]], axis=0) + 1e-12)


def test_grad_norm_trace_requires_logging():
    with pytest.raises(InvalidInputError):
        an.grad_norm_trace(_trained(log=False).trajectory)


def test_grad_norms_shrink_on_convex_runs():
    first, last = [], []
    for seed in range(10):
        ds, _ = _classifier(seed)
        cfg = TrainConfig(epochs=15, batch_size=40, lr=LrSchedule("constant", 0.5), swa_start_epoch=None,
                          probe_examples=40)
        res = train(ds, init_logistic(2, 2), [spec("l2", 0.2, 5)], StrategyKind.AVG, cfg, np.random.default_rng(seed))
        tr = an.grad_norm_trace(res.trajectory)
        first.append(tr["l2"][0])
        last.append(tr["l2"][-1])
    assert np.mean(last) <= np.mean(first)


def test_grad_norms_zero_at_degenerate_optimum():
    ds = Dataset(np.random.default_rng(0).standard_normal((10, 2)), np.zeros(10))
    cfg = TrainConfig(epochs=2, batch_size=5, lr=LrSchedule("constant", 0.1), swa_start_epoch=None)
    res = train(ds, init_linear_regression(2), [spec("l2", 0.5)], StrategyKind.AVG, cfg, np.random.default_rng(0))
    tr = an.grad_norm_trace(res.trajectory)
    assert all(np.all(v == 0) for v in tr.values())


def test_task_betas_and_update_map():
    task = logistic_task()
    data = task.sampler(30, np.random.default_rng(0))
    box = an.Box.around(np.zeros(6), 1.0)
    betas = an.task_betas(task.model, data, task.mixture, box, 50, np.random.default_rng(1))
    assert len(betas) == 2 and all(b > 0 for b in betas)
    G = an.update_map(task.model, data.X[0], data.y[0], task.mixture, (0.0, 0.0), CROSS_ENTROPY, 0)
    th = np.arange(6.0)
    np.testing.assert_array_equal(G(th), th)
