import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spherepeft.tproduct import (
    TransformSet,
    dft_matrix,
    t_identity,
    tprod3,
    tprodN,
    transform_forward,
    transform_inverse,
    transform_tprod,
)


def cyclic_conv_oracle(A, B):
    """C[..., k] = sum_j A[..., (k - j) mod n] @ B[..., j], over every trailing mode."""
    trailing = A.shape[2:]
    C = np.zeros((A.shape[0], B.shape[1]) + trailing)
    for k in np.ndindex(*trailing):
        for j in np.ndindex(*trailing):
            src = tuple((ki - ji) % n for ki, ji, n in zip(k, j, trailing))
            C[(slice(None), slice(None)) + k] += A[(slice(None), slice(None)) + src] @ B[(slice(None), slice(None)) + j]
    return C


def recursive_expansion(A, B):
    """Last-mode expansion in terms of lower-order products, bottoming out at tprod3."""
    if A.ndim == 3:
        return tprod3(A, B)
    n = A.shape[-1]
    out = []
    for i in range(n):
        out.append(sum(recursive_expansion(A[..., (i - j) % n], B[..., j]) for j in range(n)))
    return np.stack(out, axis=-1)


def well_conditioned(rng, n, max_cond=1e3):
    while True:
        S = rng.standard_normal((n, n)) + n * np.eye(n)
        if np.linalg.cond(S) <= max_cond:
            return S


class TestTprod3:
    def test_identity_left(self):
        B = np.random.default_rng(0).standard_normal((3, 2, 4))
        np.testing.assert_array_equal(tprod3(t_identity(3, (4,)), B), B)

    def test_identity_right(self):
        A = np.random.default_rng(1).standard_normal((3, 2, 4))
        np.testing.assert_array_equal(tprod3(A, t_identity(2, (4,))), A)

    @pytest.mark.parametrize("shape", [(1, 1, 1), (2, 3, 2), (4, 4, 5), (3, 1, 4)])
    def test_matches_convolution_oracle(self, shape):
        rng = np.random.default_rng(sum(shape))
        n1, n2, n3 = shape
        A = rng.standard_normal((n1, n2, n3))
        B = rng.standard_normal((n2, 3, n3))
        np.testing.assert_allclose(tprod3(A, B), cyclic_conv_oracle(A, B), atol=1e-12, rtol=0)

    def test_associative(self):
        rng = np.random.default_rng(2)
        A = rng.standard_normal((2, 3, 4))
        B = rng.standard_normal((3, 2, 4))
        C = rng.standard_normal((2, 3, 4))
        np.testing.assert_allclose(tprod3(tprod3(A, B), C), tprod3(A, tprod3(B, C)), atol=1e-10, rtol=0)

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            tprod3(np.zeros((2, 3, 4)), np.zeros((2, 2, 4)))
        with pytest.raises(ValueError):
            tprod3(np.zeros((2, 3, 4)), np.zeros((3, 2, 5)))
        with pytest.raises(ValueError):
            tprod3(np.zeros((2, 3, 2, 2)), np.zeros((3, 2, 2, 2)))


class TestTprodN:
    @pytest.mark.parametrize("shape", [(2, 2, 2, 2), (3, 2, 2, 2), (2, 3, 2, 3, 2)])
    def test_matches_recursive_expansion(self, shape):
        rng = np.random.default_rng(len(shape))
        A = rng.standard_normal(shape)
        B = rng.standard_normal((shape[1], 2) + shape[2:])
        np.testing.assert_allclose(tprodN(A, B), recursive_expansion(A, B), atol=1e-11, rtol=0)

    def test_matches_convolution_oracle(self):
        rng = np.random.default_rng(3)
        A = rng.standard_normal((2, 3, 3, 2))
        B = rng.standard_normal((3, 2, 3, 2))
        np.testing.assert_allclose(tprodN(A, B), cyclic_conv_oracle(A, B), atol=1e-11, rtol=0)

    def test_identity(self):
        A = np.random.default_rng(4).standard_normal((2, 3, 2, 3))
        np.testing.assert_array_equal(tprodN(A, t_identity(3, (2, 3))), A)

    def test_trailing_ones_is_matmul(self):
        rng = np.random.default_rng(5)
        A = rng.standard_normal((3, 4, 1, 1))
        B = rng.standard_normal((4, 2, 1, 1))
        np.testing.assert_allclose(tprodN(A, B)[:, :, 0, 0], A[:, :, 0, 0] @ B[:, :, 0, 0], atol=1e-12, rtol=0)

    def test_three_order_agrees_with_tprod3(self):
        rng = np.random.default_rng(6)
        A = rng.standard_normal((2, 3, 4))
        B = rng.standard_normal((3, 2, 4))
        np.testing.assert_array_equal(tprodN(A, B), tprod3(A, B))


class TestTransforms:
    def test_dft_matrix_is_unnormalized(self):
        F = dft_matrix(4)
        np.testing.assert_allclose(F @ F.conj().T, 4 * np.eye(4), atol=1e-12)
        x = np.random.default_rng(7).standard_normal(4)
        np.testing.assert_allclose(F @ x, np.fft.fft(x), atol=1e-12)

    def test_identity_transforms(self):
        A = np.random.default_rng(8).standard_normal((2, 2, 3, 2))
        S = TransformSet.identity((3, 2))
        np.testing.assert_array_equal(transform_forward(A, S), A)
        np.testing.assert_array_equal(transform_inverse(A, S), A)

    def test_roundtrip_four_order(self):
        rng = np.random.default_rng(9)
        A = rng.standard_normal((3, 2, 4, 3))
        S = TransformSet([well_conditioned(rng, 4), well_conditioned(rng, 3)])
        np.testing.assert_allclose(transform_inverse(transform_forward(A, S), S), A, atol=1e-10, rtol=0)

    def test_forward_matches_fft(self):
        A = np.random.default_rng(10).standard_normal((2, 2, 5))
        np.testing.assert_allclose(transform_forward(A, TransformSet.dft((5,))), np.fft.fft(A, axis=2), atol=1e-12)

    def test_singular_rejected(self):
        with pytest.raises(ValueError):
            TransformSet([np.ones((2, 2))])
        with pytest.raises(ValueError):
            TransformSet([np.ones((2, 3))])

    def test_extent_mismatch(self):
        with pytest.raises(ValueError):
            transform_forward(np.zeros((2, 2, 3)), TransformSet.identity((4,)))

    def test_identity_transform_product_is_facewise(self):
        rng = np.random.default_rng(11)
        A = rng.standard_normal((2, 3, 3))
        B = rng.standard_normal((3, 2, 3))
        expected = np.einsum("ijk,jlk->ilk", A, B)
        np.testing.assert_allclose(transform_tprod(A, B, TransformSet.identity((3,))), expected, atol=1e-12)

    @pytest.mark.parametrize("shape", [(2, 2, 2), (3, 4, 5), (4, 4, 5)])
    def test_dft_path_equals_tprod3(self, shape):
        rng = np.random.default_rng(shape[2])
        A = rng.standard_normal(shape)
        B = rng.standard_normal((shape[1], 3, shape[2]))
        out = transform_tprod(A, B, TransformSet.dft((shape[2],)))
        assert out.dtype == np.float64
        np.testing.assert_allclose(out, tprod3(A, B), atol=1e-9, rtol=0)

    def test_dft_path_equals_tprodN(self):
        rng = np.random.default_rng(12)
        A = rng.standard_normal((2, 3, 3, 2))
        B = rng.standard_normal((3, 2, 3, 2))
        np.testing.assert_allclose(transform_tprod(A, B, TransformSet.dft((3, 2))), tprodN(A, B), atol=1e-9, rtol=0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_dft_equivalence_property(self, n1, n2, n3, seed):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((n1, n2, n3))
        B = rng.standard_normal((n2, 2, n3))
        np.testing.assert_allclose(transform_tprod(A, B, TransformSet.dft((n3,))), tprod3(A, B), atol=1e-9, rtol=0)
