import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drbfdd.errors import ShapeError
from drbfdd.rbfdd import (
    HeadForwardContext,
    RbfddParams,
    anomaly_score,
    head_forward,
    head_gradients,
    kernel_activations,
    loss,
)
from oracles import central_difference, rel_error, scalar_activations, scalar_loss

# 1.7159 * tanh(2/3), evaluated with mpmath
Y_AT_Z_ONE = 0.9999972559224791


def random_params(rng, H, D, scale=1.0):
    return RbfddParams(rng.normal(size=(H, D)) * scale, rng.uniform(0.5, 2.0, H) * rng.choice([-1, 1], H), rng.normal(size=H))


def total_loss(X, p, beta, lam):
    return loss(head_forward(X, p), p, beta, lam).total


def test_activation_at_center_is_one(rng):
    p = random_params(rng, 3, 4)
    P = kernel_activations(p.centers[1], p)
    assert P[1] == 1.0


def test_activation_unit_exponent():
    s = 1.3
    p = RbfddParams(np.zeros((1, 2)), [s], [1.0])
    x = np.array([math.sqrt(2) * s, 0.0])
    assert kernel_activations(x, p)[0] == pytest.approx(math.exp(-1), rel=1e-12)


def test_activations_match_scalar_oracle(rng):
    p = random_params(rng, 3, 6)
    x = rng.normal(size=6)
    np.testing.assert_allclose(kernel_activations(x, p), scalar_activations(x, p.centers, p.spreads), rtol=1e-15, atol=0)


def test_dimension_mismatch(rng):
    p = random_params(rng, 2, 3)
    with pytest.raises(ShapeError):
        kernel_activations(np.zeros(4), p)
    with pytest.raises(ShapeError):
        head_forward(np.zeros((2, 4)), p)


def test_forward_examples(rng):
    p = random_params(rng, 3, 2)
    p.weights[:] = 0
    ctx = head_forward(rng.normal(size=(5, 2)), p)
    assert np.all(ctx.z == 0) and np.all(ctx.y == 0)

    one = RbfddParams(np.array([[0.5, -0.5]]), [1.0], [1.0])
    ctx = head_forward(one.centers, one)
    assert ctx.z[0] == 1.0
    assert ctx.y[0] == pytest.approx(Y_AT_Z_ONE, rel=1e-14)

    two = RbfddParams(np.array([[-1.0, 0.0], [1.0, 0.0]]), [0.7, 0.7], [0.3, 0.9])
    ctx = head_forward(np.array([[0.0, 0.0]]), two)
    assert ctx.activations[0, 0] == ctx.activations[0, 1]
    assert ctx.z[0] == pytest.approx(1.2 * ctx.activations[0, 0], rel=1e-15)


def test_loss_examples():
    p = RbfddParams(np.zeros((1, 1)), [2.0], [3.0])
    perfect = HeadForwardContext(np.zeros((3, 1)), np.ones((3, 1)), np.ones(3), np.ones(3))
    assert loss(perfect, p, 0.0, 0.0).total == 0.0
    single = HeadForwardContext(np.zeros((1, 1)), np.ones((1, 1)), np.zeros(1), np.zeros(1))
    assert loss(single, p, 0.0, 0.0).total == 0.5

    ctx = HeadForwardContext(np.zeros((2, 1)), np.ones((2, 1)), np.zeros(2), np.array([0.0, 1.0]))
    terms = loss(ctx, p, 0.1, 0.01)
    assert terms.total == pytest.approx(0.99, rel=1e-14)
    assert terms.total == pytest.approx(terms.fit + terms.spread_reg + terms.weight_reg, rel=1e-15)
    assert terms.spread_reg == pytest.approx(0.4) and terms.weight_reg == pytest.approx(0.09)

    with pytest.raises(ValueError):
        loss(ctx, p, -0.1, 0.0)
    with pytest.raises(ShapeError):
        loss(ctx, p, 0.1, 0.1, N=3)


def test_loss_matches_scalar_oracle(rng):
    p = random_params(rng, 3, 4)
    X = rng.normal(size=(6, 4))
    assert total_loss(X, p, 0.2, 0.05) == pytest.approx(
        scalar_loss(X, p.centers, p.spreads, p.weights, 0.2, 0.05), rel=1e-13
    )


def _optimum_params(D=3):
    # single kernel, w chosen so that y(center) == 1 up to rounding
    w = 1.5 * math.atanh(1 / 1.7159)
    return RbfddParams(np.zeros((1, D)), [1.5], [w])


def test_gradients_vanish_at_fit_optimum():
    p = _optimum_params()
    X = np.zeros((4, 3))
    ctx = head_forward(X, p)
    assert np.allclose(ctx.y, 1.0, atol=1e-15)
    g = head_gradients(ctx, X, p, 0.0, 0.0)
    for arr in (g.weights, g.spreads, g.centers, g.inputs):
        assert np.abs(arr).max() < 1e-13


def test_spread_regularizer_gradient():
    p = _optimum_params()
    X = np.zeros((4, 3))
    g = head_gradients(head_forward(X, p), X, p, 0.3, 0.0)
    assert g.spreads[0] == pytest.approx(4 * 0.3 * 1.5, rel=1e-12)


def test_stale_context_rejected(rng):
    p = random_params(rng, 2, 3)
    X = rng.normal(size=(4, 3))
    ctx = head_forward(X, p)
    with pytest.raises(ValueError, match="stale"):
        head_gradients(ctx, X + 1.0, p, 0.1, 0.1)


def check_head_gradients(rng, N, H, D, beta, lam):
    p = random_params(rng, H, D)
    X = p.centers[rng.integers(H, size=N)] + rng.normal(size=(N, D)) * 0.7
    g = head_gradients(head_forward(X, p), X, p, beta, lam)
    f = lambda: total_loss(X, p, beta, lam)
    return max(
        rel_error(g.weights, central_difference(f, p.weights)),
        rel_error(g.spreads, central_difference(f, p.spreads)),
        rel_error(g.centers, central_difference(f, p.centers)),
        rel_error(g.inputs, central_difference(f, X)),
    )


def test_gradients_small_config(rng):
    assert check_head_gradients(rng, 4, 3, 5, 0.1, 0.05) < 1e-6


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(1, 5), st.integers(1, 10), st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_gradients_random_configs(N, H, D, beta, lam, seed):
    assert check_head_gradients(np.random.default_rng(seed), N, H, D, beta, lam) < 1e-6


def test_loss_invariant_to_kernel_order(rng):
    p = random_params(rng, 4, 3)
    X = rng.normal(size=(5, 3))
    perm = rng.permutation(4)
    q = RbfddParams(p.centers[perm], p.spreads[perm], p.weights[perm])
    assert total_loss(X, q, 0.1, 0.2) == pytest.approx(total_loss(X, p, 0.1, 0.2), rel=1e-14)


def test_spread_sign_symmetry(rng):
    p = random_params(rng, 3, 2)
    X = rng.normal(size=(4, 2))
    q = p.copy()
    q.spreads[1] *= -1
    np.testing.assert_array_equal(head_forward(X, q).y, head_forward(X, p).y)
    assert total_loss(X, q, 0.3, 0.3) == total_loss(X, p, 0.3, 0.3)


def test_gradient_descent_decreases_loss():
    p = RbfddParams(np.zeros((1, 2)), [1.0], [5.0])
    X = np.zeros((1, 2))
    losses = []
    for _ in range(100):
        ctx = head_forward(X, p)
        losses.append(loss(ctx, p, 0.0, 0.0).total)
        g = head_gradients(ctx, X, p, 0.0, 0.0)
        p = RbfddParams(p.centers - 1e-3 * g.centers, p.spreads - 1e-3 * g.spreads, p.weights - 1e-3 * g.weights)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_anomaly_score_examples(rng):
    p = RbfddParams(np.array([[0.0, 0.0], [3.0, 3.0]]), [1.0, 1.0], [1.0, 0.8])
    center = anomaly_score(p.centers[0], p)
    z = head_forward(p.centers[0], p).z[0]
    assert center == pytest.approx(-1.7159 * math.tanh(2 * z / 3), rel=1e-15)
    nearby = [anomaly_score(p.centers[0] + rng.normal(size=2) * 0.1, p) for _ in range(20)]
    assert center <= min(nearby)
    far = anomaly_score(np.array([100.0, -100.0]), p)
    assert far == pytest.approx(0.0, abs=1e-300)
    assert far > max(nearby)
    X = rng.normal(size=(7, 2))
    np.testing.assert_array_equal(anomaly_score(X, p), -head_forward(X, p).y)
