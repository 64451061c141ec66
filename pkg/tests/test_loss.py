import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smscore.errors import ConfigError, ShapeError
from smscore.loss import DEFAULT_SCALE, LossKind, LossSpec, eval_obs_loss, eval_phi, phi_derivs

from oracles import central_diff_grad, central_diff_jac, phi_ref

KINDS = ["logistic", "huber", "probit"]


def spec(kind, a=None):
    return LossSpec.from_name(kind, a)


def test_default_scales():
    assert DEFAULT_SCALE[LossKind.LOGISTIC] == 1.0
    assert DEFAULT_SCALE[LossKind.HUBER] == 2.0
    assert DEFAULT_SCALE[LossKind.PROBIT] == 0.5
    assert spec("huber").a == 2.0


@pytest.mark.parametrize("a", [0.0, -1.0, float("nan"), float("inf")])
def test_nonpositive_scale_rejected(a):
    with pytest.raises(ConfigError):
        LossSpec(LossKind.LOGISTIC, a)


def test_unknown_kind_lists_supported():
    with pytest.raises(ConfigError, match="logistic, huber, probit"):
        LossSpec.from_name("hinge")


def test_logistic_at_zero():
    ev = eval_phi(spec("logistic"), 0.0)
    assert ev.value == pytest.approx(-math.log(2), rel=1e-15)
    assert ev.d1 == pytest.approx(0.5, rel=1e-15)
    assert ev.d2 == pytest.approx(-0.25, rel=1e-15)


def test_huber_at_zero():
    ev = eval_phi(spec("huber"), 0.0)
    assert ev.value == -2.0
    assert ev.d1 == 1.0


def test_probit_at_zero():
    ev = eval_phi(spec("probit"), 0.0)
    assert ev.value == pytest.approx(math.log(0.5), rel=1e-15)
    assert ev.d1 == pytest.approx(0.5 * 0.3989422804014327 / 0.5, rel=1e-14)


def test_logistic_far_left_tail():
    ev = eval_phi(spec("logistic"), -800.0)
    ref = [float(v) for v in phi_ref("logistic", 1.0, -800.0)]
    assert math.isfinite(ev.value)
    assert ev.value == pytest.approx(ref[0], rel=1e-10)
    assert ev.d1 == pytest.approx(1.0, rel=1e-10)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("a", [0.5, 1.0, 2.0, 3.7])
def test_matches_high_precision_oracle(kind, a):
    rng = np.random.default_rng(17)
    us = np.concatenate([np.linspace(-30, 30, 241), rng.uniform(-30, 30, 120), [-5.0 / a, 5.0 / a, 1e-12, -1e-12]])
    s = LossSpec(kind, a)
    got = phi_derivs(s, us)
    worst = 0.0
    for i, u in enumerate(us):
        ref = phi_ref(kind, a, u)
        for g, r in zip(got, ref):
            r = float(r)
            if abs(r) < 2.3e-308:  # subnormal references carry no relative precision
                continue
            worst = max(worst, abs(g[i] - r) / abs(r))
    assert worst <= 1e-12


@pytest.mark.parametrize("kind", KINDS)
def test_finite_over_representable_range(kind):
    u = np.array([-1e308, -1e200, -1e150, -1e20, -800.0, -40.0, 0.0, 40.0, 800.0, 1e20, 1e200, 1e308])
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        value, d1, d2 = phi_derivs(spec(kind), u)
    assert np.all(np.isfinite(d1)) and np.all(np.isfinite(d2))
    mid = np.abs(u) <= 1e150
    assert np.all(np.isfinite(value[mid]))
    assert not np.any(np.isnan(value))


def test_probit_value_minus_inf_only_beyond_double_range():
    # log Phi(-1e200) is about -5e399, below -DBL_MAX.
    assert eval_phi(spec("probit"), -1e300).value == -math.inf
    assert math.isfinite(eval_phi(spec("probit"), -1e150).value)


def test_scalar_in_scalar_out_and_shape_preserved():
    ev = eval_phi(spec("probit"), 1.5)
    assert isinstance(ev.value, float)
    arr = eval_phi(spec("probit"), np.zeros((3, 2)))
    assert arr.value.shape == (3, 2) and arr.d2.shape == (3, 2)


finite_u = st.floats(min_value=-20.0, max_value=20.0, allow_nan=False)
scales = st.sampled_from([0.5, 1.0, 2.0])


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(KINDS), scales, finite_u)
def test_strictly_increasing_and_concave_pointwise(kind, a, u):
    ev = eval_phi(LossSpec(kind, a), u / a)
    assert ev.d1 > 0
    assert ev.d2 < 0


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(KINDS), scales, finite_u, finite_u, st.floats(0.05, 0.95))
def test_concavity_chord(kind, a, u1, u2, lam):
    if abs(u1 - u2) < 0.1:
        return
    s = LossSpec(kind, a)
    u1, u2 = u1 / a, u2 / a
    mid = eval_phi(s, lam * u1 + (1 - lam) * u2).value
    chord = lam * eval_phi(s, u1).value + (1 - lam) * eval_phi(s, u2).value
    assert mid > chord


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(KINDS), scales, finite_u, st.floats(1e-4, 5.0))
def test_monotone(kind, a, u, gap):
    s = LossSpec(kind, a)
    assert eval_phi(s, u / a).value < eval_phi(s, (u + gap) / a).value


def test_growth_envelopes():
    u = np.linspace(-100, 100, 20001)
    absu = np.abs(u)
    lg = phi_derivs(spec("logistic"), u)
    hb = phi_derivs(spec("huber"), u)
    pb = phi_derivs(spec("probit"), u)
    # Constant envelope for logistic as stated on the compact range |u| <= 100.
    assert np.all(np.abs(lg[0]) <= 101.0)
    # Tight envelopes: exponents (p, q, r) = (1, 0, 0), (1, 0, 0), (2, 1, 0).
    assert np.all(np.abs(lg[0]) <= 1.0 * (1 + absu))
    assert np.all(np.abs(lg[1]) <= 1.0) and np.all(np.abs(lg[2]) <= 0.25)
    assert np.all(np.abs(hb[0]) <= 2.0 * (1 + absu))
    assert np.all(np.abs(hb[1]) <= 2.0) and np.all(np.abs(hb[2]) <= 0.5)
    assert np.all(np.abs(pb[0]) <= 1.0 * (1 + u**2))
    assert np.all(np.abs(pb[1]) <= 1.0 * (1 + absu))
    assert np.all(np.abs(pb[2]) <= 0.25)


def test_obs_loss_at_origin():
    loss, score, hess = eval_obs_loss(spec("logistic"), 1, [1.0, 0.0], [0.0, 0.0])
    assert loss == pytest.approx(-math.log(2))
    np.testing.assert_allclose(score, [0.5, 0.0])
    assert hess[0, 0] == pytest.approx(-0.25)
    assert hess[0, 1] == 0 and hess[1, 0] == 0 and hess[1, 1] == 0


@pytest.mark.parametrize("kind", KINDS)
def test_obs_loss_symmetry(kind):
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.normal(size=3)
        b = rng.normal(size=3)
        l0, s0, h0 = eval_obs_loss(spec(kind), 0, x, b)
        l1, s1, h1 = eval_obs_loss(spec(kind), 1, -x, b)
        assert l0 == l1
        np.testing.assert_array_equal(s0, s1)
        np.testing.assert_array_equal(h0, h1)


def test_obs_loss_probit_fd():
    s = spec("probit")
    x = np.array([2.0, -1.0])
    b = np.array([0.3, 0.7])
    _, score, hess = eval_obs_loss(s, 1, x, b)
    fd = central_diff_grad(lambda bb: eval_obs_loss(s, 1, x, bb)[0], b)
    np.testing.assert_allclose(score, fd, rtol=1e-6)
    fdh = central_diff_jac(lambda bb: eval_obs_loss(s, 1, x, bb)[1], b)
    np.testing.assert_allclose(hess, fdh, rtol=1e-5, atol=1e-9)
    assert np.all(np.linalg.eigvalsh(hess) <= 1e-15)


def test_obs_loss_shape_errors():
    with pytest.raises(ShapeError):
        eval_obs_loss(spec("huber"), 1, [1.0, 2.0], [1.0])
    with pytest.raises(ConfigError):
        eval_obs_loss(spec("huber"), 2, [1.0], [1.0])
