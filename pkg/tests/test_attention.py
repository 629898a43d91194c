import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from asymlab.attention import (
    AttentionMatrix,
    CrossAttentionLayer,
    PixelHead,
    aggregate_attention,
    analytic_slot_jacobian,
    cross_attention_forward,
    decoder_backward,
    l_interact,
    l_interact_grad,
    positional_query_inputs,
    random_decoder,
    softmax_rows,
)


def test_softmax_rows_stochastic():
    logits = np.array([[1e4, 1e4 - 3.0], [-800.0, -802.0]])
    A = softmax_rows(logits)
    assert np.allclose(A.sum(axis=-1), 1.0)
    assert np.all(A >= 0)


@given(arrays(float, (4, 3), elements=st.floats(-50, 50)))
def test_softmax_rows_property(logits):
    A = softmax_rows(logits)
    assert np.allclose(A.sum(axis=-1), 1.0, atol=1e-12)


def test_attention_matrix_validation():
    with pytest.raises(ValueError):
        AttentionMatrix(values=np.array([[0.5, 0.6]]), normalized=True)
    with pytest.raises(ValueError):
        AttentionMatrix(values=np.array([[-0.1, 1.1]]), normalized=False)
    with pytest.raises(ValueError):
        AttentionMatrix(values=np.array([[np.nan, 1.0]]), normalized=False)
    ok = AttentionMatrix(values=np.array([[0.25, 0.75]]), normalized=True)
    assert ok.values.shape == (1, 2)


def test_forward_shapes():
    layers, head = random_decoder(0, n_pixels=5, K=3, slot_dim=4)
    z = np.random.default_rng(1).normal(size=(3, 4))
    pixels, attn = cross_attention_forward(layers, head, z)
    assert pixels.shape == (5, 3)
    assert attn[0][0].values.shape == (5, 3)
    batch = np.stack([z, 2 * z])
    bp, battn = cross_attention_forward(layers, head, batch)
    assert bp.shape == (2, 5, 3)
    assert np.allclose(bp[0], pixels, atol=1e-12)


def test_multilayer_multihead_runs():
    layers, head = random_decoder(3, n_pixels=4, K=2, slot_dim=4,
                                  n_heads=2, n_layers=2, d_q=6)
    z = np.random.default_rng(2).normal(size=(2, 4))
    pixels, attn = cross_attention_forward(layers, head, z)
    assert pixels.shape == (4, 3)
    assert len(attn) == 2 and len(attn[0]) == 2
    for per_layer in attn:
        for am in per_layer:
            assert np.allclose(am.values.sum(axis=-1), 1.0, atol=1e-9)


def test_aggregate_attention_sums():
    layers, head = random_decoder(4, n_pixels=3, K=2, slot_dim=3,
                                  n_heads=2, n_layers=2, d_q=4)
    z = np.random.default_rng(3).normal(size=(2, 3))
    _, attn = cross_attention_forward(layers, head, z)
    agg = aggregate_attention(attn)
    manual = sum(am.values for per_layer in attn for am in per_layer)
    assert np.allclose(agg.values, manual, atol=1e-12)
    assert not agg.normalized
    # four row-stochastic matrices summed: rows sum to 4, visibly unnormalized
    assert np.allclose(agg.values.sum(axis=-1), 4.0, atol=1e-9)


def test_l_interact_hand_values():
    assert l_interact(np.array([[0.5, 0.5]])) == pytest.approx(0.25, abs=1e-15)
    thirds = np.full((1, 3), 1 / 3)
    assert l_interact(thirds) == pytest.approx(1 / 3, abs=1e-12)
    # P uniform K=2 rows: P * 0.25 before batch averaging
    assert l_interact(np.full((7, 2), 0.5)) == pytest.approx(7 * 0.25)


@settings(max_examples=200)
@given(arrays(float, (5, 3),
              elements=st.one_of(st.just(0.0), st.floats(1e-3, 2))), st.data())
def test_l_interact_zero_iff_one_hot(A, data):
    # entries are either exactly zero or of representable product scale;
    # cross products below the rounding floor of the row sum are invisible
    # to any fixed-precision implementation
    if data.draw(st.booleans()):
        keep = data.draw(arrays(np.int64, (5,), elements=st.integers(0, 2)))
        mask = np.zeros_like(A)
        mask[np.arange(5), keep] = 1.0
        A = A * mask
    one_hot = bool(np.all((A > 0).sum(axis=1) <= 1))
    assert (l_interact(A) == 0.0) == one_hot


def test_l_interact_rejects_bad_input():
    with pytest.raises(ValueError):
        l_interact(np.array([[0.5, -0.5]]))
    with pytest.raises(ValueError):
        l_interact(np.array([[np.inf, 0.0]]))


def test_l_interact_grad_matches_fd():
    rng = np.random.default_rng(0)
    A = rng.uniform(0.01, 1, size=(4, 3))
    g = l_interact_grad(A)
    h = 1e-7
    for p in range(4):
        for k in range(3):
            Ap, Am = A.copy(), A.copy()
            Ap[p, k] += h
            Am[p, k] -= h
            fd = (l_interact(Ap) - l_interact(Am)) / (2 * h)
            assert abs(fd - g[p, k]) < 1e-6


def test_analytic_jacobian_matches_fd():
    layers, head = random_decoder(7, n_pixels=4, K=3, slot_dim=3, scaling=True)
    z = np.random.default_rng(5).normal(scale=0.6, size=(3, 3))
    analytic = analytic_slot_jacobian(layers[0], head, z)
    h = 1e-6
    for m in range(3):
        for s in range(3):
            zp, zm = z.copy(), z.copy()
            zp[m, s] += h
            zm[m, s] -= h
            fd = (cross_attention_forward(layers, head, zp)[0]
                  - cross_attention_forward(layers, head, zm)[0]) / (2 * h)
            assert np.max(np.abs(analytic[m, :, :, s] - fd)) < 1e-6


def test_analytic_jacobian_rejects_multihead():
    layers, head = random_decoder(8, n_pixels=3, K=2, slot_dim=4,
                                  n_heads=2, d_q=4)
    z = np.zeros((2, 4))
    with pytest.raises(ValueError):
        analytic_slot_jacobian(layers[0], head, z)


def test_decoder_backward_weight_gradients():
    layers, head = random_decoder(9, n_pixels=4, K=2, slot_dim=3,
                                  n_heads=2, n_layers=2, d_q=6)
    rng = np.random.default_rng(11)
    z = rng.normal(scale=0.5, size=(1, 2, 3))
    G = rng.normal(size=(1, 4, 3))

    def objective():
        pixels, _ = cross_attention_forward(layers, head, z)
        return float(np.sum(G * pixels))

    _, _, cache = cross_attention_forward(layers, head, z, with_cache=True)
    g_slots, layer_grads, head_grads = decoder_backward(layers, head, cache, G)
    h = 1e-6
    # spot-check one matrix per parameter family
    for arr, grad in [(layers[0].W_K, layer_grads[0]["W_K"]),
                      (layers[1].W_Q, layer_grads[1]["W_Q"]),
                      (head.W1, head_grads["W1"]),
                      (z, g_slots)]:
        it = np.nditer(arr, flags=["multi_index"])
        for _ in range(min(arr.size, 5)):
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + h
            up = objective()
            arr[idx] = old - h
            dn = objective()
            arr[idx] = old
            fd = (up - dn) / (2 * h)
            assert abs(fd - grad[idx]) < 1e-5 * max(1.0, abs(fd))
            next(it, None)


def test_positional_query_inputs_deterministic():
    a = positional_query_inputs(4, 4, 6, rng_seed=2)
    b = positional_query_inputs(4, 4, 6, rng_seed=2)
    assert np.array_equal(a, b)
    assert a.shape == (16, 6)
    assert not np.allclose(a[0], a[5])  # positions are distinguishable


def test_layer_validation():
    with pytest.raises(ValueError):
        CrossAttentionLayer(W_K=np.eye(3), W_V=np.eye(3), W_Q=np.eye(3),
                            query_inputs=np.zeros((4, 3)), n_heads=2)
    ly = CrossAttentionLayer(W_K=np.eye(4), W_V=np.eye(4), W_Q=np.eye(4),
                             query_inputs=np.zeros((4, 4)), n_heads=2)
    assert ly.head_dim == 2


def test_pixel_head_jacobian():
    rng = np.random.default_rng(4)
    head = PixelHead(W1=rng.normal(size=(5, 3)), b1=rng.normal(size=5),
                     W2=rng.normal(size=(2, 5)), b2=rng.normal(size=2))
    x = rng.normal(size=3)
    J = head.jacobian(x)
    h = 1e-6
    for i in range(3):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fd = (head(xp) - head(xm)) / (2 * h)
        assert np.allclose(J[:, i], fd, atol=1e-7)
