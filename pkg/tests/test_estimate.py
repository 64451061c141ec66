import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize, minimize_scalar

from smscore.dgp import Dataset, gen_dataset
from smscore.errors import DegenerateDataError, DomainError, IterationLimitError, ShapeError
from smscore.estimate import (
    FitOptions,
    angle_objective,
    angle_of,
    check_identifiable,
    fit,
    fit_angle,
    fit_angle_batch,
    fit_batch,
    objective,
    wrap_angle,
)
from smscore.loss import LossSpec, eval_phi

from oracles import central_diff_grad, central_diff_jac, logit_newton

KINDS = ["logistic", "huber", "probit"]


def random_dataset(n, d=2, seed=0, beta=None):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    beta = np.ones(d) if beta is None else np.asarray(beta)
    y = (x @ beta + rng.logistic(size=n) >= 0).astype(int)
    return Dataset(y, x)


@pytest.mark.parametrize("kind", KINDS)
def test_objective_at_origin_is_phi0(kind):
    s = LossSpec.from_name(kind)
    q, g, h = objective(random_dataset(40, 3), s, np.zeros(3))
    assert q == eval_phi(s, 0.0).value


def test_objective_single_observation():
    s = LossSpec.from_name("probit")
    ds = Dataset(np.array([1]), np.array([[0.4, -1.3]]))
    b = np.array([0.7, 0.2])
    assert objective(ds, s, b)[0] == pytest.approx(eval_phi(s, 0.4 * 0.7 - 1.3 * 0.2).value, rel=1e-15)


@pytest.mark.parametrize("kind", KINDS)
def test_objective_derivatives_fd(kind):
    s = LossSpec.from_name(kind)
    ds = random_dataset(50, 3, seed=4)
    b = np.array([0.3, -0.8, 1.1])
    q, g, h = objective(ds, s, b)
    fd_g = central_diff_grad(lambda bb: objective(ds, s, bb)[0], b)
    np.testing.assert_allclose(g, fd_g, rtol=1e-6, atol=1e-9)
    fd_h = central_diff_jac(lambda bb: objective(ds, s, bb)[1], b)
    np.testing.assert_allclose(h, fd_h, rtol=1e-4, atol=1e-8)
    assert np.all(np.linalg.eigvalsh(h) < 0)


def test_objective_shape_error():
    with pytest.raises(ShapeError):
        objective(random_dataset(10), LossSpec.from_name("logistic"), np.zeros(3))


@pytest.mark.parametrize("seed", range(5))
def test_logistic_fit_equals_logit_mle(seed):
    ds = random_dataset(200, 2, seed=seed)
    res = fit(ds, LossSpec.from_name("logistic"))
    assert not res.on_boundary
    oracle = logit_newton(ds.y, ds.x)
    np.testing.assert_allclose(res.b_hat, oracle, rtol=0, atol=1e-8)


def test_huber_fit_matches_polar_grid():
    ds = random_dataset(30, 2, seed=12)
    s = LossSpec.from_name("huber")
    radius = 100.0
    res = fit(ds, s, FitOptions(radius=radius))
    assert not res.on_boundary
    th = np.linspace(-math.pi, math.pi, 512, endpoint=False)
    rad = np.linspace(radius / 400, radius, 400)
    z = ds.signed_x()
    best = (-np.inf, None)
    for r in rad:
        B = r * np.stack([np.cos(th), np.sin(th)])
        vals = eval_phi(s, z @ B).value.mean(axis=0)
        k = int(np.argmax(vals))
        if vals[k] > best[0]:
            best = (vals[k], (r, th[k]))
    r0, t0 = best[1]
    # local refinement of the brute-force winner
    neg = lambda p: -objective(ds, s, p[0] * np.array([math.cos(p[1]), math.sin(p[1])]))[0]
    ref = minimize(neg, [r0, t0], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 5000})
    assert abs(wrap_angle(res.theta_hat - ref.x[1])) <= 1e-3


@pytest.mark.parametrize("kind", KINDS)
def test_separated_data_hits_boundary(kind):
    rng = np.random.default_rng(5)
    x = rng.normal(size=(60, 2))
    y = (x @ np.array([1.0, 1.0]) >= 0).astype(int)
    res = fit(Dataset(y, x), LossSpec.from_name(kind))
    assert res.on_boundary
    assert res.warnings and "boundary" in res.warnings[0]
    assert np.linalg.norm(res.b_hat) <= 100 + 1e-9
    assert abs(wrap_angle(res.theta_hat - math.pi / 4)) < 0.3


@pytest.mark.parametrize("kind", KINDS)
def test_fit_result_invariants(kind):
    ds = random_dataset(300, 2, seed=8)
    res = fit(ds, LossSpec.from_name(kind))
    assert np.linalg.norm(res.b_hat) <= res.radius + 1e-9
    assert res.grad_norm <= 1e-10
    np.testing.assert_allclose(res.direction, res.b_hat / np.linalg.norm(res.b_hat), rtol=1e-15)
    assert res.theta_hat == math.atan2(res.b_hat[1], res.b_hat[0])
    assert np.all(np.diff(res.trace) >= 0)
    assert res.to_dict()["loss"] == kind


def test_small_radius_boundary_is_sphere_optimum():
    ds = random_dataset(300, 3, seed=2)
    s = LossSpec.from_name("probit")
    res = fit(ds, s, FitOptions(radius=0.5))
    assert res.on_boundary
    assert np.linalg.norm(res.b_hat) == pytest.approx(0.5, rel=1e-9)
    _, g, _ = objective(ds, s, res.b_hat)
    # KKT: gradient is a nonnegative multiple of b_hat
    cos = g @ res.b_hat / (np.linalg.norm(g) * np.linalg.norm(res.b_hat))
    assert cos == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("kind", KINDS)
def test_unique_from_different_inits(kind):
    ds = random_dataset(150, 3, seed=21)
    s = LossSpec.from_name(kind)
    a = fit(ds, s)
    b = fit(ds, s, FitOptions(init=(5.0, -7.0, 3.0)))
    c = fit(ds, s, FitOptions(init=(-80.0, 10.0, 0.0)))
    np.testing.assert_allclose(a.b_hat, b.b_hat, atol=1e-7)
    np.testing.assert_allclose(a.b_hat, c.b_hat, atol=1e-7)


def test_consistency_large_n():
    ds = gen_dataset("normal", 100_000, 5)
    res = fit(ds, LossSpec.from_name("logistic"))
    assert abs(res.theta_hat - math.pi / 4) <= 0.02


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from(KINDS),
    st.lists(st.floats(-3, 3), min_size=4, max_size=4),
    st.floats(0.05, 0.95),
    st.integers(0, 50),
)
def test_sample_objective_concave(kind, coords, lam, seed):
    ds = random_dataset(40, 2, seed=seed)
    s = LossSpec.from_name(kind)
    b1, b2 = np.array(coords[:2]), np.array(coords[2:])
    if np.linalg.norm(b1 - b2) < 1e-2:
        return
    lhs = objective(ds, s, lam * b1 + (1 - lam) * b2)[0]
    rhs = lam * objective(ds, s, b1)[0] + (1 - lam) * objective(ds, s, b2)[0]
    assert lhs > rhs


def test_identifiability_errors():
    x = np.random.default_rng(0).normal(size=(20, 2))
    with pytest.raises(DegenerateDataError, match="one outcome class"):
        fit(Dataset(np.ones(20, dtype=int), x), LossSpec.from_name("logistic"))
    with pytest.raises(DegenerateDataError, match="d \\+ 1"):
        check_identifiable(Dataset(np.array([0, 1]), x[:2]))
    xc = np.column_stack([x[:, 0], 2 * x[:, 0]])
    y = (x[:, 1] > 0).astype(int)
    with pytest.raises(DegenerateDataError, match="collinear"):
        fit(Dataset(y, xc), LossSpec.from_name("logistic"))


def test_iteration_limit_carries_iterate():
    ds = random_dataset(100, 2, seed=1)
    with pytest.raises(IterationLimitError) as info:
        fit(ds, LossSpec.from_name("probit"), FitOptions(max_iter=1))
    assert info.value.last_iterate.shape == (2,)


def test_bad_options():
    with pytest.raises(DomainError):
        FitOptions(radius=0)
    with pytest.raises(DomainError):
        FitOptions(grad_tol=-1)
    with pytest.raises(ShapeError):
        fit(random_dataset(30), LossSpec.from_name("huber"), FitOptions(init=(1.0,)))


def test_angle_of_examples():
    th, _ = angle_of(np.array([1.0, 1.0]) / math.sqrt(2))
    assert th == pytest.approx(math.pi / 4, abs=1e-15)
    for c in (0.01, 1.0, 300.0):
        assert angle_of([c, c])[0] == pytest.approx(math.pi / 4, abs=1e-15)
    assert angle_of([-1.0, 0.0])[0] == math.pi
    with pytest.raises(DomainError):
        angle_of([0.0, 0.0])
    with pytest.raises(ShapeError):
        angle_of([1.0, 2.0, 3.0])


def test_angle_of_gradient_fd():
    rng = np.random.default_rng(9)
    for _ in range(20):
        b = rng.normal(size=2)
        b = b if b[0] > -0.5 else -b  # stay away from the branch cut
        _, g = angle_of(b)
        fd = central_diff_grad(lambda bb: math.atan2(bb[1], bb[0]), b, h=1e-7)
        np.testing.assert_allclose(g, fd, rtol=1e-7, atol=1e-9)


def test_fit_batch_matches_fit():
    ds = random_dataset(200, 2, seed=3)
    s = LossSpec.from_name("huber")
    ref = fit(ds, s)
    rng = np.random.default_rng(0)
    idx = rng.integers(0, ds.n, size=(6, ds.n))
    z = ds.signed_x()
    batch = fit_batch(z[idx], s, ref.b_hat)
    for k in range(6):
        single = fit(ds.take(idx[k]), s)
        np.testing.assert_allclose(batch.b[k], single.b_hat, atol=1e-9)
    assert batch.ok.all()
    same = fit_batch(z[None], s, np.zeros(2))
    np.testing.assert_allclose(same.b[0], ref.b_hat, atol=1e-12)


# --- unit-norm angle estimator -------------------------------------------


@pytest.mark.parametrize("kind", KINDS)
def test_angle_objective_derivatives_fd(kind):
    ds = random_dataset(80, 2, seed=6)
    s = LossSpec.from_name(kind)
    for th in (-2.0, 0.3, 1.2):
        q, dq, d2q = angle_objective(ds, s, th)
        h = 1e-6
        fd1 = (angle_objective(ds, s, th + h)[0] - angle_objective(ds, s, th - h)[0]) / (2 * h)
        fd2 = (angle_objective(ds, s, th + h)[1] - angle_objective(ds, s, th - h)[1]) / (2 * h)
        assert dq == pytest.approx(fd1, rel=1e-6, abs=1e-9)
        assert d2q == pytest.approx(fd2, rel=1e-5, abs=1e-8)
        assert q == pytest.approx(objective(ds, s, [math.cos(th), math.sin(th)])[0], rel=1e-14)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fit_angle_matches_dense_grid(kind, seed):
    ds = random_dataset(120, 2, seed=seed)
    s = LossSpec.from_name(kind)
    res = fit_angle(ds, s)
    grid = np.linspace(-math.pi, math.pi, 20_000, endpoint=False)
    z = ds.signed_x()
    vals = np.array([eval_phi(s, z @ np.array([math.cos(t), math.sin(t)])).value.mean() for t in grid])
    t0 = grid[np.argmax(vals)]
    ref = minimize_scalar(
        lambda t: -angle_objective(ds, s, t)[0], bracket=(t0 - 1e-3, t0, t0 + 1e-3), tol=1e-12
    )
    assert abs(wrap_angle(res.theta_hat - ref.x)) <= 1e-6
    assert abs(res.score) <= 1e-10 and res.curvature < 0
    np.testing.assert_allclose(res.b_hat, [math.cos(res.theta_hat), math.sin(res.theta_hat)])


def test_fit_angle_equals_unit_ball_fit_on_boundary():
    # For the pseudo-Huber loss the ball fit with R = 1 sits on the unit
    # circle, where it solves the same problem as the angle fit.
    ds = random_dataset(400, 2, seed=13)
    s = LossSpec.from_name("huber")
    ball = fit(ds, s, FitOptions(radius=1.0))
    assert ball.on_boundary
    assert fit_angle(ds, s).theta_hat == pytest.approx(ball.theta_hat, abs=1e-8)


def test_fit_angle_separated_data_is_finite():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(60, 2))
    y = (x @ np.array([1.0, 1.0]) >= 0).astype(int)
    res = fit_angle(Dataset(y, x), LossSpec.from_name("logistic"))
    assert abs(res.theta_hat - math.pi / 4) < 0.3
    assert np.all(np.diff(res.trace) >= 0)


def test_fit_angle_needs_two_regressors():
    with pytest.raises(ShapeError):
        fit_angle(random_dataset(50, 3), LossSpec.from_name("logistic"))


def test_fit_angle_init_and_wrap():
    ds = random_dataset(200, 2, seed=1, beta=[-1.0, -0.01])
    s = LossSpec.from_name("probit")
    res = fit_angle(ds, s)
    assert -math.pi < res.theta_hat <= math.pi
    res2 = fit_angle(ds, s, init=res.theta_hat + 2 * math.pi + 0.05)
    assert res2.theta_hat == pytest.approx(res.theta_hat, abs=1e-9)


def test_fit_angle_batch_matches_scalar():
    ds = random_dataset(250, 2, seed=7)
    s = LossSpec.from_name("probit")
    ref = fit_angle(ds, s)
    idx = np.random.default_rng(1).integers(0, ds.n, size=(5, ds.n))
    batch = fit_angle_batch(ds.signed_x()[idx], s, ref.theta_hat)
    assert batch.ok.all()
    for k in range(5):
        single = fit_angle(ds.take(idx[k]), s, init=ref.theta_hat)
        assert batch.theta[k] == pytest.approx(single.theta_hat, abs=1e-10)


@pytest.mark.parametrize("kind", KINDS)
def test_wide_margin_separation_still_reaches_boundary(kind):
    # Margins are large enough for the gradient to fall below tolerance mid-ray.
    x = np.array([[1.0, 0.0], [2.0, 1.0], [-1.0, 0.0], [-2.0, -1.0]])
    res = fit(Dataset(np.array([1, 1, 0, 0]), x), LossSpec.from_name(kind))
    assert res.on_boundary and res.warnings
    assert np.linalg.norm(res.b_hat) == pytest.approx(100.0)
    assert np.all(np.diff(res.trace) >= 0)
