import math

import numpy as np
import pytest

from src.learn.nn import (
    AdamWState,
    GaussianHead,
    adamw_step,
    backward,
    clip_grad_norm,
    elu,
    forward,
    gaussian_entropy,
    gaussian_kl,
    gaussian_logprob,
    gaussian_logprob_grads,
    gaussian_sample,
    init_mlp,
    params_from_arrays,
)


def _loss(params, x, r):
    return float(np.sum(r * forward(params, x)))


def test_backward_matches_finite_differences(rng):
    params = init_mlp((3, 8, 8, 2), rng, out_gain=1.0)
    x = rng.normal(size=(5, 3))
    r = rng.normal(size=(5, 2))
    grads, grad_in = backward(params, x, r)
    eps = 1e-6
    for layer in range(params.n_layers):
        w = params.weights[layer]
        for idx in [(0, 0), (w.shape[0] - 1, w.shape[1] - 1)]:
            old = w[idx]
            w[idx] = old + eps
            up = _loss(params, x, r)
            w[idx] = old - eps
            down = _loss(params, x, r)
            w[idx] = old
            assert grads.weights[layer][idx] == pytest.approx((up - down) / (2 * eps), rel=1e-5, abs=1e-7)
        b = params.biases[layer]
        old = b[0]
        b[0] = old + eps
        up = _loss(params, x, r)
        b[0] = old - eps
        down = _loss(params, x, r)
        b[0] = old
        assert grads.biases[layer][0] == pytest.approx((up - down) / (2 * eps), rel=1e-5, abs=1e-7)

    x2 = x.copy()
    x2[2, 1] += eps
    up = _loss(params, x2, r)
    x2[2, 1] -= 2 * eps
    down = _loss(params, x2, r)
    assert grad_in[2, 1] == pytest.approx((up - down) / (2 * eps), rel=1e-5, abs=1e-7)


def test_single_vector_backward_matches_batch(rng):
    params = init_mlp((4, 6, 3), rng, out_gain=1.0)
    x = rng.normal(size=4)
    r = rng.normal(size=3)
    g1, gi1 = backward(params, x, r)
    g2, gi2 = backward(params, x[None], r[None])
    np.testing.assert_allclose(gi1, gi2[0])
    for a, b in zip(g1.arrays(), g2.arrays()):
        np.testing.assert_allclose(a, b)


def test_init_is_seeded_and_orthogonal():
    a = init_mlp((6, 6, 1), np.random.default_rng(4))
    b = init_mlp((6, 6, 1), np.random.default_rng(4))
    for x, y in zip(a.arrays(), b.arrays()):
        np.testing.assert_array_equal(x, y)
    w = a.weights[0]
    np.testing.assert_allclose(w.T @ w, 2.0 * np.eye(6), atol=1e-10)
    assert np.all(a.biases[0] == 0.0)


def test_wrong_input_width():
    params = init_mlp((3, 4, 1), np.random.default_rng(0))
    with pytest.raises(ValueError):
        forward(params, np.zeros((2, 5)))


def test_elu():
    np.testing.assert_allclose(elu(np.array([-1.0, 0.0, 2.0])), [math.expm1(-1.0), 0.0, 2.0])


def test_adamw_first_step():
    p = [np.array([1.0, -2.0])]
    g = [np.array([0.5, -0.25])]
    state = AdamWState.for_arrays(p, lr=0.1, weight_decay=0.01)
    new = adamw_step(state, p, g)[0]
    expected = p[0] * (1 - 0.1 * 0.01) - 0.1 * g[0] / (np.abs(g[0]) + 1e-8)
    np.testing.assert_allclose(new, expected, rtol=1e-9)
    assert state.step == 1


def test_adamw_rejects_misaligned_inputs():
    state = AdamWState.for_arrays([np.zeros(2)], lr=0.1)
    with pytest.raises(ValueError):
        adamw_step(state, [np.zeros(2), np.zeros(1)], [np.zeros(2)])


def test_gaussian_logprob_formula():
    head = GaussianHead(np.log(np.array([0.5, 2.0])))
    mean = np.array([0.0, 1.0])
    action = np.array([0.5, 0.0])
    expected = sum(
        -0.5 * ((a - m) / s) ** 2 - math.log(s) - 0.5 * math.log(2 * math.pi)
        for a, m, s in zip(action, mean, [0.5, 2.0])
    )
    assert gaussian_logprob(head, mean, action) == pytest.approx(expected)
    d_mean, d_log_std = gaussian_logprob_grads(head, mean, action)
    np.testing.assert_allclose(d_mean, [2.0, -0.25])
    np.testing.assert_allclose(d_log_std, [0.0, -0.75])


def test_gaussian_kl_and_entropy():
    m = np.array([[0.1, -0.2]])
    ls = np.array([-0.5, 0.3])
    assert gaussian_kl(m, ls, m, ls)[0] == pytest.approx(0.0, abs=1e-12)
    assert gaussian_kl(m + 1.0, ls, m, ls)[0] > 0.0
    assert gaussian_entropy(GaussianHead(np.zeros(2))) == pytest.approx(1.0 + math.log(2 * math.pi))


def test_clip_grad_norm():
    grads = [np.array([3.0]), np.array([4.0])]
    clipped, norm = clip_grad_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose(np.concatenate(clipped), [0.6, 0.8])
    same, _ = clip_grad_norm(grads, 10.0)
    np.testing.assert_array_equal(np.concatenate(same), [3.0, 4.0])


def test_params_from_arrays_round_trip(rng):
    params = init_mlp((2, 5, 1), rng)
    rebuilt = params_from_arrays(params, params.arrays())
    assert rebuilt.sizes == params.sizes
    assert rebuilt.checksum() == params.checksum()


def test_gaussian_sample_statistics():
    head = GaussianHead(np.log(np.array([0.5, 2.0])))
    mean = np.tile([1.0, -1.0], (20000, 1))
    draws = gaussian_sample(head, mean, np.random.default_rng(0))
    np.testing.assert_allclose(draws.mean(axis=0), [1.0, -1.0], atol=0.05)
    np.testing.assert_allclose(draws.std(axis=0), [0.5, 2.0], rtol=0.03)
    again = gaussian_sample(head, mean, np.random.default_rng(0))
    np.testing.assert_array_equal(draws, again)
