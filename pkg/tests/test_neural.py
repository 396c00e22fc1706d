import numpy as np
import pytest

from hiercast.errors import NumericError
from hiercast.neural import (
    ACTIVATIONS,
    DenseNet,
    ZScore,
    adam_state,
    adam_step,
    positive_transform,
    positive_transform_grad,
)


def flat_params(net):
    return np.concatenate([a.ravel() for pair in zip(net.weights, net.biases) for a in pair])


def test_forward_identity_is_affine(rng):
    net = DenseNet([3, 2], ["identity"], rng)
    net.weights[0][:] = 0.0
    net.biases[0][:] = [1.5, -2.0]
    out, _ = net.forward(np.zeros(3))
    assert np.allclose(out, [1.5, -2.0])
    net.weights[0][:] = [[1, 0], [0, 1], [1, 1]]
    out, _ = net.forward(np.array([1.0, 2.0, 3.0]))
    assert np.allclose(out, [1 + 3 + 1.5, 2 + 3 - 2.0])


def test_softmax_uniform_on_equal_logits(rng):
    net = DenseNet([4, 5], ["softmax"], rng)
    net.weights[0][:] = 0.0
    net.biases[0][:] = 0.7
    out, _ = net.forward(rng.normal(size=4))
    assert np.allclose(out, 0.2)


def test_softmax_rows_sum_to_one_for_large_logits(rng):
    net = DenseNet([2, 6], ["softmax"], rng)
    net.weights[0][:] = rng.uniform(-25.0, 25.0, size=(2, 6))
    x = rng.uniform(-1.0, 1.0, size=(64, 2))
    out, _ = net.forward(x)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(out >= 0.0)


def test_softplus_at_zero(rng):
    net = DenseNet([1, 1], ["softplus"], rng)
    net.weights[0][:] = 0.0
    net.biases[0][:] = 0.0
    out, _ = net.forward(np.zeros(1))
    assert out[0] == pytest.approx(np.log(2.0))


def test_linear_regression_gradient_matches_closed_form(rng):
    """For identity net with squared loss, backward equals 2 X^T (Xw - y) / B."""
    net = DenseNet([4, 1], ["identity"], rng)
    x = rng.normal(size=(12, 4))
    y = rng.normal(size=12)
    out, cache = net.forward(x)
    resid = out[:, 0] - y
    grads, _ = net.backward(cache, (2.0 * resid / 12.0)[:, None])
    expected_dw = 2.0 * x.T @ (x @ net.weights[0][:, 0] + net.biases[0][0] - y) / 12.0
    assert np.allclose(grads[0][0][:, 0], expected_dw, atol=1e-12)
    assert grads[0][1][0] == pytest.approx(2.0 * resid.mean(), abs=1e-12)


def finite_difference_check(net, rng, tol=1e-4):
    """Compare analytic gradients of a random linear readout loss to central differences."""
    x = rng.normal(size=(5, net.dims[0]))
    readout = rng.normal(size=(5, net.dims[-1]))

    def loss():
        out, _ = net.forward(x)
        return float(np.sum(out * readout))

    out, cache = net.forward(x)
    grads, _ = net.backward(cache, readout)
    analytic = np.concatenate([a.ravel() for pair in grads for a in pair])

    step = 1e-5
    numeric = np.empty_like(analytic)
    pos = 0
    for i in range(net.n_layers):
        for arr in (net.weights[i], net.biases[i]):
            flat = arr.ravel()
            for j in range(flat.size):
                keep = flat[j]
                flat[j] = keep + step
                hi = loss()
                flat[j] = keep - step
                lo = loss()
                flat[j] = keep
                numeric[pos] = (hi - lo) / (2.0 * step)
                pos += 1
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    assert np.linalg.norm(analytic - numeric) / denom <= tol


@pytest.mark.parametrize("activation", ACTIVATIONS)
def test_gradients_match_finite_differences(activation, rng):
    """20 random nets per activation pass a central-difference check."""
    for _ in range(20):
        hidden = int(rng.integers(2, 6))
        net = DenseNet([3, hidden, 2], [activation, "identity"], rng)
        finite_difference_check(net, rng)


def test_gradients_through_stacked_mixed_activations(rng):
    for _ in range(5):
        net = DenseNet([4, 6, 5, 3], ["tanh", "relu", "softmax"], rng)
        finite_difference_check(net, rng)


def test_adam_single_step_hand_case(rng):
    """From zero moments the first update is -lr * g / (|g| + eps)."""
    net = DenseNet([1, 1], ["identity"], rng)
    w0 = net.weights[0][0, 0]
    b0 = net.biases[0][0]
    state = adam_state(net, lr=0.1)
    g = 3.0
    adam_step(net, [(np.array([[g]]), np.array([0.0]))], state)
    expected = w0 - 0.1 * g / (abs(g) + state.eps)
    assert net.weights[0][0, 0] == pytest.approx(expected, abs=1e-12)
    assert net.biases[0][0] == b0  # zero gradient leaves the bias untouched


def test_adam_two_step_accumulation(rng):
    """Second step follows the bias-corrected moment formulas exactly."""
    net = DenseNet([1, 1], ["identity"], rng)
    w0 = net.weights[0][0, 0]
    state = adam_state(net, lr=0.01)
    g1, g2 = 2.0, -1.0
    for g in (g1, g2):
        adam_step(net, [(np.array([[g]]), np.array([0.0]))], state)
    m = 0.9 * (0.1 * g1) + 0.1 * g2
    v = 0.999 * (0.001 * g1 * g1) + 0.001 * g2 * g2
    mhat = m / (1.0 - 0.9**2)
    vhat = v / (1.0 - 0.999**2)
    first = w0 - 0.01 * (0.1 * g1 / (1 - 0.9)) / (np.sqrt(0.001 * g1 * g1 / (1 - 0.999)) + state.eps)
    expected = first - 0.01 * mhat / (np.sqrt(vhat) + state.eps)
    assert net.weights[0][0, 0] == pytest.approx(expected, rel=1e-12)


def test_adam_rejects_non_finite_gradients(rng):
    net = DenseNet([1, 1], ["identity"], rng)
    state = adam_state(net, lr=0.01)
    with pytest.raises(NumericError, match="non-finite gradient"):
        adam_step(net, [(np.array([[np.nan]]), np.array([0.0]))], state)


def test_forward_rejects_non_finite_input(rng):
    net = DenseNet([2, 1], ["identity"], rng)
    with pytest.raises(NumericError, match="non-finite input"):
        net.forward(np.array([1.0, np.inf]))


def test_positive_transform_values():
    assert positive_transform(0.0) == pytest.approx(np.log1p(np.exp(1e-5)) + 1e-3)
    assert positive_transform(0.0) == pytest.approx(0.694152, abs=1e-6)
    assert positive_transform(10.0) == pytest.approx(10.001055, abs=1e-5)
    # floor: softplus underflows to 0 for very negative inputs
    assert positive_transform(-1e6) == pytest.approx(1e-3)
    assert np.all(positive_transform(np.linspace(-100, 100, 401)) >= 1e-3)


def test_positive_transform_gradient_matches_fd():
    xs = np.linspace(-4.0, 4.0, 33)
    step = 1e-6
    fd = (positive_transform(xs + step) - positive_transform(xs - step)) / (2 * step)
    assert np.allclose(positive_transform_grad(xs), fd, atol=1e-6)


def test_seeded_init_reproducible():
    a = DenseNet([3, 4, 2], ["tanh", "identity"], np.random.default_rng(99))
    b = DenseNet([3, 4, 2], ["tanh", "identity"], np.random.default_rng(99))
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    bound = 1.0 / np.sqrt(3)
    assert np.all(np.abs(a.weights[0]) <= bound)


def test_parameter_arrays_round_trip(rng, tmp_path):
    net = DenseNet([3, 5, 2], ["relu", "identity"], rng)
    path = tmp_path / "net.npz"
    np.savez(path, **net.parameter_arrays())
    twin = DenseNet([3, 5, 2], ["relu", "identity"], np.random.default_rng(1))
    with np.load(path) as arrays:
        twin.load_parameter_arrays(arrays)
    for wa, wb in zip(net.weights, twin.weights):
        assert np.array_equal(wa, wb)
    for ba, bb in zip(net.biases, twin.biases):
        assert np.array_equal(ba, bb)
    bad = DenseNet([3, 4, 2], ["relu", "identity"], rng)
    with pytest.raises(NumericError, match="shapes"):
        bad.load_parameter_arrays(net.parameter_arrays())


def test_zscore_round_trip(rng):
    x = rng.normal(3.0, 2.5, size=200)
    scaler = ZScore.fit(x)
    z = scaler.transform(x)
    assert z.mean() == pytest.approx(0.0, abs=1e-12)
    assert z.std() == pytest.approx(1.0, rel=1e-9)
    assert np.allclose(scaler.invert(z), x)
    flat = ZScore.fit(np.full(10, 4.0))
    assert flat.std == 1e-8  # degenerate spans floor the divisor
