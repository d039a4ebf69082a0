import numpy as np
import pytest

from mrpnet.nn_core import (
    GradCheckReport,
    LayerParams,
    SgdConfig,
    conv2d_backward,
    conv2d_forward,
    conv_params,
    dropout,
    fc_backward,
    fc_forward,
    fc_params,
    gradient_check,
    maxpool2x2_backward,
    maxpool2x2_forward,
    relu,
    relu_backward,
    sgd_step,
    softmax,
    softmax_xent,
)


def conv_loop_oracle(x, weights, biases):
    """Six nested loops over filters, channels, kernel taps, and pixels."""
    f, c, _, _ = weights.shape
    _, h, w = x.shape
    out = np.zeros((f, h, w))
    for fi in range(f):
        for i in range(h):
            for j in range(w):
                acc = biases[fi]
                for ci in range(c):
                    for di in range(3):
                        for dj in range(3):
                            ii, jj = i + di - 1, j + dj - 1
                            if 0 <= ii < h and 0 <= jj < w:
                                acc += weights[fi, ci, di, dj] * x[ci, ii, jj]
                out[fi, i, j] = acc
    return out


def numeric_grad(f, arr, step=1e-5):
    """Central finite differences of scalar f with respect to arr, in place."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + step
        up = f()
        arr[idx] = orig - step
        down = f()
        arr[idx] = orig
        grad[idx] = (up - down) / (2 * step)
        it.iternext()
    return grad


def max_rel_err(a, b):
    return np.max(np.abs(a - b) / (np.abs(a) + np.abs(b) + 1e-8))


# --- convolution ---------------------------------------------------------


def test_conv_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 6, 6))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    params = LayerParams(weights=w, biases=np.zeros(1))
    assert np.allclose(conv2d_forward(x, params), x, atol=1e-15)


def test_conv_zero_input_gives_bias():
    params = LayerParams(weights=np.ones((3, 2, 3, 3)), biases=np.array([1.0, -2.0, 0.5]))
    out = conv2d_forward(np.zeros((2, 4, 4)), params)
    for fi, b in enumerate([1.0, -2.0, 0.5]):
        assert np.all(out[fi] == b)


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 5, 5))
    params = conv_params(2, 3, rng)
    params.biases[:] = rng.standard_normal(3)
    assert np.allclose(conv2d_forward(x, params), conv_loop_oracle(x, params.weights, params.biases), atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(ValueError):
        conv2d_forward(np.zeros((3, 4, 4)), conv_params(2, 1, np.random.default_rng(0)))


def test_conv_backward_zero_upstream():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 4, 4))
    params = conv_params(2, 2, rng)
    dx, (dw, db) = conv2d_backward(x, params, np.zeros((2, 4, 4)))
    assert not dx.any() and not dw.any() and not db.any()


def test_conv_backward_receptive_field():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 7, 7))
    params = conv_params(1, 1, rng)
    up = np.zeros((1, 7, 7))
    up[0, 3, 3] = 1.0
    dx, _ = conv2d_backward(x, params, up)
    support = np.argwhere(dx[0] != 0)
    assert support.size > 0
    assert support[:, 0].min() >= 2 and support[:, 0].max() <= 4
    assert support[:, 1].min() >= 2 and support[:, 1].max() <= 4


def test_conv_backward_finite_differences():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 5, 5))
    params = conv_params(2, 3, rng)
    up = rng.standard_normal((3, 5, 5))

    def loss():
        return float((conv2d_forward(x, params) * up).sum())

    dx, (dw, db) = conv2d_backward(x, params, up)
    assert max_rel_err(dx, numeric_grad(loss, x)) < 1e-4
    assert max_rel_err(dw, numeric_grad(loss, params.weights)) < 1e-4
    assert max_rel_err(db, numeric_grad(loss, params.biases)) < 1e-4


# --- relu ---------------------------------------------------------------------


def test_relu_values():
    assert relu(np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 0.0, 2.0]


def test_relu_all_negative():
    x = -np.abs(np.random.default_rng(5).standard_normal((3, 4)))
    x[x == 0] = -1.0
    assert not relu(x).any()
    assert not relu_backward(x, np.ones_like(x)).any()


def test_relu_zero_point_gradient_is_zero():
    x = np.array([0.0, 1.0, -1.0])
    assert relu_backward(x, np.ones(3)).tolist() == [0.0, 1.0, 0.0]


def test_relu_finite_differences_away_from_kink():
    rng = np.random.default_rng(6)
    x = rng.standard_normal(50)
    x = x[np.abs(x) > 1e-4]
    up = rng.standard_normal(x.size)

    def loss():
        return float((relu(x) * up).sum())

    assert max_rel_err(relu_backward(x, up), numeric_grad(loss, x)) < 1e-4


# --- max pooling -----------------------------------------------------------------


def test_pool_routes_gradient_to_argmax():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    out, arg = maxpool2x2_forward(x)
    assert out.tolist() == [[[4.0]]]
    dx = maxpool2x2_backward(arg, np.array([[[7.0]]]))
    assert dx.tolist() == [[[0.0, 0.0], [0.0, 7.0]]]


def test_pool_tie_goes_to_earliest():
    x = np.full((1, 2, 2), 5.0)
    out, arg = maxpool2x2_forward(x)
    dx = maxpool2x2_backward(arg, np.array([[[1.0]]]))
    assert dx.tolist() == [[[1.0, 0.0], [0.0, 0.0]]]


def test_pool_matches_block_scan():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((3, 4, 4))
    out, _ = maxpool2x2_forward(x)
    for c in range(3):
        for i in range(2):
            for j in range(2):
                assert out[c, i, j] == x[c, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max()


def test_pool_rejects_odd_dims():
    with pytest.raises(ValueError):
        maxpool2x2_forward(np.zeros((1, 3, 4)))


# --- dropout ----------------------------------------------------------------------


def test_dropout_rate_zero_identity():
    x = np.random.default_rng(8).standard_normal((4, 4))
    y, mask = dropout(x, 0.0, "train", np.random.default_rng(0))
    assert np.array_equal(y, x) and np.all(mask == 1.0)


def test_dropout_eval_identity():
    x = np.random.default_rng(9).standard_normal((4, 4))
    for rate in (0.25, 0.5, 0.9):
        y, _ = dropout(x, rate, "eval")
        assert np.array_equal(y, x)


def test_dropout_kept_fraction_concentrates():
    rng = np.random.default_rng(10)
    _, mask = dropout(np.ones(10**6), 0.25, "train", rng)
    kept = np.count_nonzero(mask) / mask.size
    assert 0.748 <= kept <= 0.752
    assert np.allclose(mask[mask > 0], 1 / 0.75)


def test_dropout_invalid_rate():
    with pytest.raises(ValueError):
        dropout(np.ones(3), 1.0, "train", np.random.default_rng(0))
    with pytest.raises(ValueError):
        dropout(np.ones(3), -0.1, "train", np.random.default_rng(0))


# --- fully connected -----------------------------------------------------------------


def test_fc_identity():
    params = LayerParams(weights=np.eye(4), biases=np.zeros(4))
    x = np.arange(4.0)
    assert np.array_equal(fc_forward(x, params), x)


def test_fc_zero_input_gives_bias():
    params = LayerParams(weights=np.ones((3, 4)), biases=np.array([1.0, 2.0, 3.0]))
    assert fc_forward(np.zeros(4), params).tolist() == [1.0, 2.0, 3.0]


def test_fc_finite_differences():
    rng = np.random.default_rng(11)
    x = rng.standard_normal(6)
    params = fc_params(6, 3, rng)
    up = rng.standard_normal(3)

    def loss():
        return float((fc_forward(x, params) * up).sum())

    dx, (dw, db) = fc_backward(x, params, up)
    assert max_rel_err(dx, numeric_grad(loss, x)) < 1e-4
    assert max_rel_err(dw, numeric_grad(loss, params.weights)) < 1e-4
    assert max_rel_err(db, numeric_grad(loss, params.biases)) < 1e-4


# --- softmax cross-entropy ------------------------------------------------------------


def test_uniform_logits_loss():
    loss, grad = softmax_xent(np.zeros(4), 2)
    assert loss == pytest.approx(np.log(4.0), abs=1e-12)
    assert grad == pytest.approx([0.25, 0.25, -0.75, 0.25], abs=1e-12)


def test_extreme_logits_stable():
    loss, grad = softmax_xent(np.array([1000.0, 0.0]), 0)
    assert np.isfinite(loss) and loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(grad))


def test_softmax_probabilities():
    rng = np.random.default_rng(12)
    p = softmax(rng.standard_normal(9) * 10)
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.all(p > 0)


def test_xent_gradient_matches_finite_differences():
    rng = np.random.default_rng(13)
    logits = rng.standard_normal(5)
    _, grad = softmax_xent(logits, 3)

    def loss():
        return softmax_xent(logits, 3)[0]

    assert max_rel_err(grad, numeric_grad(loss, logits)) < 1e-6


def test_xent_label_out_of_range():
    with pytest.raises(ValueError):
        softmax_xent(np.zeros(3), 3)


# --- sgd -----------------------------------------------------------------------------


def one_param(w=0.0):
    return LayerParams(weights=np.array([[w]]), biases=np.zeros(1))


def test_sgd_zero_gradient_no_motion():
    p = one_param(0.7)
    sgd_step([p], [(np.zeros((1, 1)), np.zeros(1))], SgdConfig(), 0)
    assert p.weights[0, 0] == 0.7


def test_sgd_first_step_with_reference_constants():
    p = one_param(0.0)
    sgd_step([p], [(np.ones((1, 1)), np.zeros(1))], SgdConfig(), 0)
    assert p.weight_velocity[0, 0] == pytest.approx(-0.01, abs=1e-15)
    assert p.weights[0, 0] == pytest.approx(-0.01, abs=1e-15)


def test_sgd_two_steps_match_scalar_recurrence():
    config = SgdConfig()
    p = one_param(0.0)
    for it in range(2):
        sgd_step([p], [(np.ones((1, 1)), np.zeros(1))], config, it)
    # independent scalar evaluation of the same recurrence
    w = v = 0.0
    for it in range(2):
        eta = config.learning_rate / (1.0 + config.decay * it)
        v = config.momentum * v - eta * 1.0
        w = w + v
    assert p.weights[0, 0] == pytest.approx(w, abs=1e-18)
    assert p.weight_velocity[0, 0] == pytest.approx(v, abs=1e-18)


def test_sgd_plain_gradient_descent_limit():
    p = one_param(1.0)
    config = SgdConfig(learning_rate=0.1, decay=0.0, momentum=0.0)
    sgd_step([p], [(np.full((1, 1), 2.0), np.zeros(1))], config, 5)
    assert p.weights[0, 0] == 1.0 - 0.1 * 2.0


def test_sgd_config_validation():
    with pytest.raises(ValueError):
        SgdConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        SgdConfig(momentum=1.0)
    with pytest.raises(ValueError):
        SgdConfig(decay=-1e-3)


# --- gradient checker ------------------------------------------------------------------


def test_gradient_check_linear_layer():
    rng = np.random.default_rng(14)
    x = rng.standard_normal(8)
    params = fc_params(8, 3, rng)

    def loss_and_grads():
        out = fc_forward(x, params)
        loss, dlogits = softmax_xent(out, 1)
        _, grads = fc_backward(x, params, dlogits)
        return loss, [grads]

    report = gradient_check(loss_and_grads, [params], np.random.default_rng(0))
    assert isinstance(report, GradCheckReport)
    assert report.max_rel_error < 1e-7


def chain_loss_and_grads(x, conv, fc):
    def run():
        z = conv2d_forward(x, conv)
        a = relu(z)
        pooled, arg = maxpool2x2_forward(a)
        flat = pooled.reshape(-1)
        logits = fc_forward(flat, fc)
        loss, dlogits = softmax_xent(logits, 0)
        dflat, g_fc = fc_backward(flat, fc, dlogits)
        dpool = dflat.reshape(pooled.shape)
        da = maxpool2x2_backward(arg, dpool)
        dz = relu_backward(z, da)
        _, g_conv = conv2d_backward(x, conv, dz)
        return loss, [g_conv, g_fc]

    return run


def test_gradient_check_conv_chain():
    rng = np.random.default_rng(15)
    x = rng.standard_normal((2, 6, 6))
    conv = conv_params(2, 3, rng)
    fc = fc_params(3 * 3 * 3, 4, rng)
    report = gradient_check(chain_loss_and_grads(x, conv, fc), [conv, fc], np.random.default_rng(1))
    assert report.max_rel_error < 1e-4


def test_gradient_check_detects_corruption():
    rng = np.random.default_rng(16)
    x = rng.standard_normal((2, 6, 6))
    conv = conv_params(2, 3, rng)
    fc = fc_params(27, 4, rng)
    honest = chain_loss_and_grads(x, conv, fc)

    def corrupted():
        loss, grads = honest()
        bad = [(g[0] * 1.5 + 0.01, g[1]) for g in grads]  # broken backward
        return loss, bad

    report = gradient_check(corrupted, [conv, fc], np.random.default_rng(2))
    assert report.max_rel_error > 1e-2
