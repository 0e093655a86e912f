"""Core autodiff: hand-checked forwards, analytic CE gradients, and
full-coordinate finite-difference sweeps over every layer kind."""

import numpy as np
import pytest

from awtlab.errors import LabelError, NonFiniteError, ShapeError
from awtlab.gradcheck import fd_gradient
from awtlab.nn import (
    AvgPool2,
    Conv3x3,
    Dense,
    Flatten,
    Relu,
    cross_entropy,
    forward,
    grad_dual,
    init_model,
    input_grad,
    model_hash,
    perturb_params,
    softmax,
)

# logistic sigma(0.5), exact to float64, used by the two-logit CE oracle
SIGMA_HALF = 0.6224593312018546


def with_flat_params(model, *arrays):
    flat = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])
    return model.with_params(model.params.with_vector(flat))


def test_dense_forward_hand_case():
    m = init_model([Dense(2)], (2,), seed=0)
    m = with_flat_params(m, [[1.0, 2.0], [3.0, 4.0]], [0.5, -0.5])
    y = forward(m, np.array([[1.0, 0.5]]))
    np.testing.assert_allclose(y, [[3.0, 3.5]], rtol=0, atol=0)


def test_two_layer_relu_forward_hand_case():
    # first unit's pre-activation is negative, so relu must zero it
    m = init_model([Dense(2), Relu(), Dense(2)], (2,), seed=0)
    m = with_flat_params(
        m,
        [[0.1, 0.2], [0.3, -0.4]],
        [0.0, 0.1],
        [[1.0, 0.0], [0.5, -0.5]],
        [0.01, 0.02],
    )
    y = forward(m, np.array([[1.0, -1.0]]))
    np.testing.assert_allclose(y, [[0.36, -0.33]], atol=1e-15)


def test_two_logit_ce_gradients_hand_case():
    """Logits [3.0, 3.5], label 0: every gradient reduces to sigma(0.5)."""
    m = init_model([Dense(2)], (2,), seed=0)
    m = with_flat_params(m, [[1.0, 2.0], [3.0, 4.0]], [0.5, -0.5])
    x = np.array([[1.0, 0.5]])
    d = grad_dual(m, x, np.array([0]))

    s = SIGMA_HALF
    assert d.loss_value == pytest.approx(np.log(1.0 + np.exp(0.5)), abs=1e-12)
    np.testing.assert_allclose(d.wrt_input, [[s, s]], atol=1e-12)
    got = dict(d.wrt_params)
    np.testing.assert_allclose(got["dense1.b"], [-s, s], atol=1e-12)
    np.testing.assert_allclose(got["dense1.w"], [[-s, s], [-0.5 * s, 0.5 * s]], atol=1e-12)


def test_conv_identity_and_shift_kernels():
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4) / 16.0
    conv = Conv3x3(1)

    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    y, _ = conv.forward(x, {"w": w, "b": np.zeros(1)})
    np.testing.assert_allclose(y, x, atol=1e-15)

    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 0] = 1.0  # picks the pixel one column to the left
    y, _ = conv.forward(x, {"w": w, "b": np.zeros(1)})
    want = np.zeros_like(x)
    want[..., 1:] = x[..., :-1]
    np.testing.assert_allclose(y, want, atol=1e-15)


def test_avgpool_hand_case():
    x = np.array([[[[1.0, 3.0], [5.0, 7.0]]]])  # single 2x2 block
    pool = AvgPool2()
    y, _ = pool.forward(x, {})
    np.testing.assert_allclose(y, [[[[4.0]]]], atol=0)


def test_cross_entropy_matches_direct_formula():
    rng = np.random.default_rng(0)
    logits = rng.normal(0.0, 2.0, (5, 4))
    labels = rng.integers(0, 4, 5)
    want = np.mean(
        [np.log(np.exp(z).sum()) - z[c] for z, c in zip(logits, labels)]
    )
    assert cross_entropy(logits, labels) == pytest.approx(want, rel=1e-12)


def test_cross_entropy_shift_invariant():
    rng = np.random.default_rng(1)
    logits = rng.normal(0.0, 1.0, (6, 4))
    labels = rng.integers(0, 4, 6)
    shifted = logits + rng.normal(0.0, 500.0, (6, 1))
    assert cross_entropy(shifted, labels) == pytest.approx(
        cross_entropy(logits, labels), rel=1e-9
    )


def test_softmax_rows_sum_to_one_at_extreme_scale():
    z = np.array([[1e4, 0.0, -1e4, 5.0], [3.0, 3.0, 3.0, 3.0]])
    p = softmax(z)
    np.testing.assert_allclose(p.sum(axis=1), [1.0, 1.0], atol=1e-12)
    assert (p >= 0).all()


TINY_STACKS = [
    ("dense", [Dense(3)], (4,)),
    ("dense_relu_dense", [Dense(5), Relu(), Dense(3)], (4,)),
    ("conv_pool", [Conv3x3(2), Relu(), AvgPool2(), Flatten(), Dense(3)], (1, 4, 4)),
]


@pytest.mark.parametrize("name,layers,shape", TINY_STACKS, ids=[t[0] for t in TINY_STACKS])
def test_grad_dual_matches_fd_everywhere(name, layers, shape):
    """Central differences over every input and parameter coordinate."""
    m = init_model(layers, shape, seed=7)
    rng = np.random.default_rng(11)
    x = rng.uniform(0.2, 0.8, (3, *shape))
    y = rng.integers(0, 3, 3)
    d = grad_dual(m, x, y)
    fx, fp = fd_gradient(m, x, y)
    np.testing.assert_allclose(d.wrt_input, fx, atol=1e-8)
    np.testing.assert_allclose(d.wrt_params.to_vector(), fp.to_vector(), atol=1e-8)


def test_input_grad_sum_is_mean_times_batch(quick_model, quick_data):
    _, test = quick_data
    x, y = test.images[:8], test.labels[:8]
    g_mean = input_grad(quick_model, x, y, reduction="mean")
    g_sum = input_grad(quick_model, x, y, reduction="sum")
    np.testing.assert_allclose(g_sum, g_mean * 8, rtol=1e-12)


def test_grad_dual_loss_matches_cross_entropy(quick_model, quick_data):
    _, test = quick_data
    x, y = test.images[:8], test.labels[:8]
    d = grad_dual(quick_model, x, y)
    assert d.loss_value == pytest.approx(
        cross_entropy(forward(quick_model, x), y), rel=1e-12
    )


def test_perturb_params_is_additive():
    m = init_model([Dense(3), Relu(), Dense(2)], (4,), seed=2)
    rng = np.random.default_rng(3)
    eta = m.params.with_vector(rng.normal(0.0, 1.0, m.params.total_dim))
    shifted = perturb_params(m, eta, 0.25)
    np.testing.assert_allclose(
        shifted.params.to_vector(),
        m.params.to_vector() + 0.25 * eta.to_vector(),
        rtol=1e-15,
    )
    # scale zero must be the identity, bit for bit
    same = perturb_params(m, eta, 0.0)
    assert np.array_equal(same.params.to_vector(), m.params.to_vector())


def test_bad_input_shape_raises():
    m = init_model([Dense(2)], (3,), seed=0)
    with pytest.raises(ShapeError):
        forward(m, np.zeros((2, 4)))
    with pytest.raises(ShapeError):
        forward(m, np.zeros((3,)))  # missing batch axis


def test_label_out_of_range_raises():
    m = init_model([Dense(2)], (3,), seed=0)
    x = np.zeros((2, 3))
    with pytest.raises(LabelError):
        grad_dual(m, x, np.array([0, 2]))
    with pytest.raises(LabelError):
        grad_dual(m, x, np.array([-1, 0]))


def test_non_finite_input_raises():
    m = init_model([Dense(2)], (3,), seed=0)
    x = np.zeros((1, 3))
    x[0, 0] = np.nan
    with pytest.raises(NonFiniteError):
        forward(m, x)


def test_model_hash_tracks_parameters():
    a = init_model([Dense(2)], (3,), seed=0)
    b = init_model([Dense(2)], (3,), seed=0)
    c = init_model([Dense(2)], (3,), seed=1)
    assert model_hash(a) == model_hash(b)
    assert model_hash(a) != model_hash(c)
    nudged = perturb_params(a, a.params, 1e-9)
    assert model_hash(a) != model_hash(nudged)
