import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from advmp.errors import InvalidInputError
from advmp.geometry import (
    FEASIBILITY_TOL, Ball, NormKind, dual_norm_kind, norm, project_onto_ball, project_rows,
    random_point_in_ball, steepest_ascent_step,
)
from oracles import brute_force_projection, lp_norm

KINDS = list(NormKind)
finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def vectors(min_d=1, max_d=6):
    return st.integers(min_d, max_d).flatmap(lambda d: arrays(np.float64, d, elements=finite))


@pytest.mark.parametrize("kind,expected", [("l2", 5.0), ("l1", 7.0), ("linf", 4.0)])
def test_norm_examples(kind, expected):
    assert norm([3.0, -4.0], kind) == expected


def test_norm_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        norm([1.0, np.nan], NormKind.L2)
    with pytest.raises(InvalidInputError):
        norm([np.inf], NormKind.L1)


def test_dual_pairs():
    assert dual_norm_kind(NormKind.L1) is NormKind.LINF
    assert dual_norm_kind(NormKind.L2) is NormKind.L2
    assert dual_norm_kind(NormKind.LINF) is NormKind.L1
    for k in KINDS:
        assert k.dual.dual is k


@pytest.mark.parametrize("text,kind", [("l1", NormKind.L1), ("2", NormKind.L2), ("inf", NormKind.LINF),
                                       ("ℓ∞", NormKind.LINF), ("L2", NormKind.L2)])
def test_parse_aliases(text, kind):
    assert NormKind.parse(text) is kind


def test_parse_unknown():
    with pytest.raises(InvalidInputError):
        NormKind.parse("l3")


def test_projection_examples(backend):
    np.testing.assert_array_equal(project_onto_ball(np.array([3.0, 4.0]), Ball(np.zeros(2), "l2", 5.0)), [3, 4])
    np.testing.assert_array_equal(project_onto_ball(np.array([2.0, -3.0]), Ball(np.zeros(2), "linf", 1.0)), [1, -1])
    np.testing.assert_allclose(project_onto_ball(np.array([2.0, 1.0]), Ball(np.zeros(2), "l1", 1.0)), [1, 0],
                               atol=1e-15)


def test_l1_example_matches_grid_oracle():
    w, _ = brute_force_projection([2.0, 1.0], "l1", 1.0)
    np.testing.assert_allclose(w, [1.0, 0.0], atol=1e-5)


def test_projection_respects_centre(backend):
    c = np.array([1.0, -2.0, 0.5])
    ball = Ball(c, NormKind.L1, 0.5)
    w = project_onto_ball(c + np.array([3.0, 0.1, -0.2]), ball)
    assert ball.contains(w)
    np.testing.assert_allclose(w - c, [0.5, 0.0, 0.0], atol=1e-15)


def test_zero_radius_ball(backend):
    for k in KINDS:
        c = np.array([0.3, -0.7])
        np.testing.assert_array_equal(project_onto_ball(np.array([5.0, 5.0]), Ball(c, k, 0.0)), c)


def test_ball_validation():
    with pytest.raises(InvalidInputError):
        Ball(np.zeros(2), NormKind.L2, -1.0)
    with pytest.raises(InvalidInputError):
        project_onto_ball(np.zeros(3), Ball(np.zeros(2), NormKind.L2, 1.0))


@settings(max_examples=200, deadline=None)
@given(v=vectors(), kind=st.sampled_from(KINDS), radius=st.floats(0.0, 10.0))
def test_projection_feasible_and_idempotent(v, kind, radius):
    ball = Ball(np.zeros(v.size), kind, radius)
    w = project_onto_ball(v, ball)
    assert norm(w, kind) <= radius + FEASIBILITY_TOL
    np.testing.assert_allclose(project_onto_ball(w, ball), w, atol=1e-12, rtol=0)
    if norm(v, kind) < radius:  # strict: at radius 0 an underflowing norm is not "inside"
        np.testing.assert_array_equal(w, v)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("d", [1, 2, 3])
def test_projection_optimal_against_grid(kind, d, backend):
    rng = np.random.default_rng(d * 10 + kind.code)
    for _ in range(5):
        v = rng.standard_normal(d) * 2
        radius = rng.uniform(0.2, 1.5)
        w = project_rows(v[None, :], kind, radius)[0]
        _, best = brute_force_projection(v, kind.value, radius)
        assert lp_norm(w, kind.value) <= radius + FEASIBILITY_TOL
        assert abs(np.linalg.norm(w - v) - best) <= 1e-4


def test_projection_never_worse_than_random_feasible_points(rng):
    for kind in KINDS:
        v = rng.standard_normal(4) * 3
        w = project_rows(v[None], kind, 1.0)[0]
        cand = project_rows(rng.standard_normal((5000, 4)), kind, 1.0)
        assert np.linalg.norm(w - v) <= np.linalg.norm(cand - v, axis=1).min() + 1e-12


@pytest.mark.parametrize("kind,k,expected", [
    ("linf", 1, [0.1, -0.1]), ("l1", 1, [0.0, -0.1]),
])
def test_ascent_examples(kind, k, expected, backend):
    np.testing.assert_allclose(steepest_ascent_step(np.array([0.3, -0.5]), kind, 0.1, k), expected, atol=1e-16)


def test_ascent_l2_example(backend):
    np.testing.assert_allclose(steepest_ascent_step(np.array([3.0, 4.0]), "l2", 1.0), [0.6, 0.8])


def test_ascent_zero_gradient_l2(backend):
    np.testing.assert_array_equal(steepest_ascent_step(np.zeros(3), "l2", 0.5), np.zeros(3))


def test_ascent_l1_topk(backend):
    g = np.array([0.1, -3.0, 2.0, 0.5])
    np.testing.assert_allclose(steepest_ascent_step(g, "l1", 1.0, k=2), [0, -0.5, 0.5, 0])


@pytest.mark.parametrize("k", [0, 4])
def test_ascent_bad_k(k):
    with pytest.raises(InvalidInputError):
        steepest_ascent_step(np.ones(3), "l1", 0.1, k)


def test_ascent_bad_step():
    with pytest.raises(InvalidInputError):
        steepest_ascent_step(np.ones(3), "l2", 0.0)


def _unit_directions(rng, n, d, kind):
    D = rng.standard_normal((n, d)) * rng.exponential(size=(n, 1))
    if kind is NormKind.LINF:
        D = rng.uniform(-1, 1, size=(n, d))
        D[np.arange(n), rng.integers(d, size=n)] = rng.choice((-1.0, 1.0), size=n)
        return D
    return D / np.array([lp_norm(r, kind.value) for r in D])[:, None]


@pytest.mark.parametrize("kind", KINDS)
def test_steepest_step_optimality(kind, rng, backend):
    for d in (1, 2, 3, 4):
        g = rng.standard_normal(d)
        s = steepest_ascent_step(g, kind, 1.0, 1)
        dirs = _unit_directions(rng, 10_000, d, kind)
        assert s @ g >= (dirs @ g).max() - 1e-9
        # The optimum equals the dual norm of the gradient.
        assert s @ g == pytest.approx(norm(g, kind.dual), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(u=arrays(np.float64, 5, elements=finite), v=arrays(np.float64, 5, elements=finite),
       kind=st.sampled_from(KINDS))
def test_holder(u, v, kind):
    assert abs(u @ v) <= norm(u, kind) * norm(v, kind.dual) * (1 + 1e-12) + 1e-12


def test_random_point_examples():
    c = np.array([0.5, -1.0])
    for kind in KINDS:
        np.testing.assert_array_equal(random_point_in_ball(Ball(c, kind, 0.0), np.random.default_rng(0)), c)
    b = Ball(c, NormKind.L2, 0.7)
    p1 = random_point_in_ball(b, np.random.default_rng(42))
    p2 = random_point_in_ball(b, np.random.default_rng(42))
    np.testing.assert_array_equal(p1, p2)
    assert b.contains(p1)


@pytest.mark.parametrize("kind", KINDS)
def test_random_points_feasible_and_fill_ball(kind):
    rng = np.random.default_rng(5)
    ball = Ball(np.zeros(3), kind, 2.0)
    pts = np.array([random_point_in_ball(ball, rng) for _ in range(2000)])
    norms = np.array([norm(p, kind) for p in pts])
    assert norms.max() <= 2.0 + FEASIBILITY_TOL
    # Uniform in a 3-D ball: P(||x|| <= r/2) = 1/8.
    assert abs(np.mean(norms <= 1.0) - 0.125) < 0.03
