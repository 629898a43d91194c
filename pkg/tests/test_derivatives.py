import numpy as np
import pytest

from asymlab.derivatives import (
    StencilConfig,
    cross_partial,
    derivative_by_multiindex,
    estimate_derivative_tensor,
    jacobian,
    multiindex_to_axes,
)
from asymlab.multiindex import all_multiindices, mi_poly_derivative, mi_power


def poly_fn(terms):
    """terms: list of (coef per output, exponent tuple)."""

    def f(z):
        return np.sum([c * mi_power(z, e) for c, e in terms], axis=0)

    return f


def poly_derivative(terms, z, alpha):
    out = 0.0
    for c, e in terms:
        coef, rest = mi_poly_derivative(alpha, e)
        out = out + c * coef * mi_power(z, rest)
    return np.asarray(out)


def random_poly(rng, d, d_x, n_terms=6, max_order=4):
    terms = []
    for _ in range(n_terms):
        e = tuple(int(v) for v in rng.multinomial(rng.integers(0, max_order + 1),
                                                  np.ones(d) / d))
        terms.append((rng.normal(size=d_x), e))
    return terms


def test_multiindex_to_axes():
    assert multiindex_to_axes((2, 0, 1)) == (0, 0, 2)
    assert multiindex_to_axes((0, 0)) == ()


def test_jacobian_exact_on_linear():
    A = np.array([[1.0, -2.0], [0.5, 3.0], [2.0, 0.0]])
    J = jacobian(lambda z: A @ z, [0.3, -0.7]).values
    assert np.allclose(J, A, atol=1e-12)


def test_polynomial_derivatives_all_orders():
    rng = np.random.default_rng(11)
    cfg = StencilConfig()
    for trial in range(3):
        terms = random_poly(rng, 3, 2)
        f = poly_fn(terms)
        z = rng.uniform(-1, 1, size=3)
        J = jacobian(f, z, cfg).values
        for i in range(3):
            e = tuple(int(i == j) for j in range(3))
            assert np.allclose(J[:, i], poly_derivative(terms, z, e), atol=1e-8)
        for alpha in all_multiindices(3, 2) + all_multiindices(3, 3):
            got = derivative_by_multiindex(f, z, alpha, cfg)
            want = poly_derivative(terms, z, alpha)
            assert np.allclose(got, want, atol=1e-5), (alpha, got, want)


def test_trig_third_derivative():
    w = np.array([0.7, -1.1])

    def f(z):
        return np.array([np.sin(w @ z)])

    z = np.array([0.2, 0.4])
    # D_001 sin(w.z) = -w0^2 w1 cos(w.z)
    got = cross_partial(f, z, (0, 0, 1))
    want = -(w[0] ** 2) * w[1] * np.cos(w @ z)
    assert abs(got[0] - want) < 1e-5


def test_cross_partial_symmetry():
    rng = np.random.default_rng(5)
    terms = random_poly(rng, 3, 1)
    f = poly_fn(terms)
    z = rng.uniform(-0.5, 0.5, size=3)
    a = cross_partial(f, z, (0, 2))
    b = cross_partial(f, z, (2, 0))
    assert np.allclose(a, b, atol=1e-8)


def test_estimate_tensor_shape_and_symmetry():
    rng = np.random.default_rng(7)
    f = poly_fn(random_poly(rng, 2, 3))
    z = rng.uniform(-0.5, 0.5, size=2)
    H = estimate_derivative_tensor(f, z, 2)
    assert H.values.shape == (3, 2, 2)
    assert np.allclose(H.values, np.swapaxes(H.values, 1, 2), atol=1e-9)
    T = estimate_derivative_tensor(f, z, 3)
    assert T.values.shape == (3, 2, 2, 2)
    assert np.allclose(T.values, np.transpose(T.values, (0, 2, 1, 3)), atol=1e-9)


def test_bad_inputs():
    f = lambda z: np.array([z[0] ** 2])
    with pytest.raises(ValueError):
        cross_partial(f, [0.0], (0, 0, 0, 0))
    with pytest.raises(ValueError):
        cross_partial(f, [0.0], (1, 0))
    with pytest.raises(ValueError):
        estimate_derivative_tensor(f, [0.0], 4)
    with pytest.raises(ValueError):
        derivative_by_multiindex(f, [0.0], (4,))


def test_nonfinite_rejected():
    def f(z):
        return np.array([np.inf if z[0] > 0 else z[0]])

    with pytest.raises((ValueError, FloatingPointError)):
        jacobian(f, [0.0])


def test_order_zero_is_evaluation():
    f = lambda z: np.array([z[0] + 2 * z[1]])
    out = derivative_by_multiindex(f, [1.0, 2.0], (0, 0))
    assert np.allclose(out, [5.0])
