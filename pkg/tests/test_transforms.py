"""Orthonormal transforms against naive DFT/DCT/WHT oracles."""

import numpy as np
import pytest

from d2gp import tensor as T
from d2gp import transforms as tr
from d2gp.errors import ShapeError

from conftest import rel_err


def naive_dft2(z):
    n0, n1 = z.shape
    F0 = np.exp(-2j * np.pi * np.outer(np.arange(n0), np.arange(n0)) / n0) / np.sqrt(n0)
    F1 = np.exp(-2j * np.pi * np.outer(np.arange(n1), np.arange(n1)) / n1) / np.sqrt(n1)
    return F0 @ z @ F1.T


def naive_wht(n):
    H = np.array([[1.0]])
    while H.shape[0] < n:
        H = np.block([[H, H], [H, -H]])
    return H


class TestNumpyKernels:
    def test_dct2_inverse_pair(self, rng):
        x = rng.standard_normal((8, 8))
        assert rel_err(tr.idct2_np(tr.dct2_np(x)), x) < 1e-12

    def test_dct2_parseval(self, rng):
        x = rng.standard_normal((8, 8))
        assert abs(np.linalg.norm(tr.dct2_np(x)) - np.linalg.norm(x)) < 1e-10

    def test_fft2_matches_naive_dft(self, rng):
        x = rng.standard_normal((2, 8, 8))  # real/imag channel pair
        got = tr.fft2_pair_np(x)
        ref = naive_dft2(x[0] + 1j * x[1])
        assert rel_err(got[0], ref.real) < 1e-12
        assert rel_err(got[1], ref.imag) < 1e-12

    def test_fft2_unitary(self, rng):
        x = rng.standard_normal((2, 8, 8))
        assert abs(np.linalg.norm(tr.fft2_pair_np(x)) - np.linalg.norm(x)) < 1e-10
        assert rel_err(tr.ifft2_pair_np(tr.fft2_pair_np(x)), x) < 1e-12

    def test_fwht_matches_dense_sylvester(self, rng):
        n = 16
        x = rng.standard_normal((3, n))
        assert rel_err(tr.fwht_np(x), x @ naive_wht(n).T) < 1e-12

    def test_fwht_non_power_of_two(self):
        with pytest.raises(ShapeError):
            tr.fwht_np(np.zeros(6))


class TestSequencyOrdering:
    def test_sequency_equals_sign_change_count(self):
        # row with sequency index s must have exactly s sign changes
        for n in (8, 16, 64):
            H = naive_wht(n)
            perm = tr.sequency_permutation(n)
            for s in range(n):
                row = H[perm[s]]
                changes = int(np.sum(row[1:] != row[:-1]))
                assert changes == s

    def test_permutation_is_bijection(self):
        perm = tr.sequency_permutation(32)
        assert sorted(perm) == list(range(32))

    def test_hadamard_rows_entries_and_orthogonality(self):
        n, m = 64, 16
        R = tr.hadamard_rows(n, m)
        assert set(np.unique(R)) == {-1.0, 1.0}
        assert rel_err(R @ R.T, n * np.eye(m)) < 1e-12


class TestTapeOps:
    def test_inverse_pairs_on_tape(self, rng):
        x = rng.standard_normal((8, 8))
        assert rel_err(tr.idct2(tr.dct2(T.Tensor(x))).data, x) < 1e-12
        z = rng.standard_normal((2, 8, 8))
        assert rel_err(tr.ifft2(tr.fft2(T.Tensor(z))).data, z) < 1e-12

    def test_adjoints_via_inner_products(self, rng):
        # <A x, y> == <x, A^T y> validates each tape op's backward rule
        for fwd, shape in ((tr.dct2, (8, 8)), (tr.idct2, (8, 8)),
                           (tr.fft2, (2, 8, 8)), (tr.ifft2, (2, 8, 8)),
                           (tr.fwht, (16,))):
            x = T.Tensor(rng.standard_normal(shape), requires_grad=True)
            y = rng.standard_normal(shape)
            T.backward(T.inner(fwd(x), T.Tensor(y)))
            # grad of <A x, y> wrt x is A^T y; compare against numpy adjoint
            if fwd is tr.dct2:
                ref = tr.idct2_np(y)
            elif fwd is tr.idct2:
                ref = tr.dct2_np(y)
            elif fwd is tr.fft2:
                ref = tr.ifft2_pair_np(y)
            elif fwd is tr.ifft2:
                ref = tr.fft2_pair_np(y)
            else:
                ref = tr.fwht_np(y)
            assert rel_err(x.grad, ref) < 1e-12

    def test_fft2_shape_guard(self):
        with pytest.raises(ShapeError):
            tr.fft2(T.Tensor(np.zeros((3, 8, 8))))
        with pytest.raises(ShapeError):
            tr.fft2(T.Tensor(np.zeros((2, 6, 8))))
