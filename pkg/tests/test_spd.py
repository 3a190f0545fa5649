import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lbw.errors import DegenerateMatrix, DimensionMismatch, NotPositiveSemidefinite
from lbw.spd import SpdMatrix, SpdTolerances, random_spd, spd_inv_sqrt, spd_sqrt, sym_eig


def rel_fro(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestSpdMatrix:
    def test_entries_read_only(self):
        m = SpdMatrix([[2.0, 1.0], [1.0, 2.0]])
        with pytest.raises(ValueError):
            m.entries[0, 0] = 5.0

    def test_rejects_asymmetric(self):
        with pytest.raises(NotPositiveSemidefinite):
            SpdMatrix([[1.0, 0.5], [0.0, 1.0]])

    def test_rejects_indefinite(self):
        with pytest.raises(NotPositiveSemidefinite):
            SpdMatrix([[1.0, 2.0], [2.0, 1.0]])

    def test_accepts_roundoff_negative(self):
        m = SpdMatrix(np.diag([1.0, -1e-12]))
        assert m.eig[0][0] < 0

    def test_custom_tolerance(self):
        with pytest.raises(NotPositiveSemidefinite):
            SpdMatrix(np.diag([1.0, -1e-12]), SpdTolerances(psd_rel=1e-14))

    def test_rejects_non_square(self):
        with pytest.raises(DimensionMismatch):
            SpdMatrix(np.ones((2, 3)))

    def test_rejects_nan(self):
        with pytest.raises(NotPositiveSemidefinite):
            SpdMatrix([[np.nan, 0.0], [0.0, 1.0]])

    def test_scalar_becomes_1x1(self):
        assert SpdMatrix(4.0).entries.shape == (1, 1)


class TestSymEig:
    def test_identity(self):
        w, v = sym_eig(np.eye(2))
        np.testing.assert_allclose(w, [1, 1])
        np.testing.assert_allclose(v.T @ v, np.eye(2), atol=1e-15)

    def test_diagonal(self):
        w, v = sym_eig(np.diag([4.0, 9.0]))
        np.testing.assert_allclose(w, [4, 9])
        np.testing.assert_allclose(np.abs(v), np.eye(2))

    def test_two_by_two(self):
        # lambda^2 - 4 lambda + 3 = 0
        w, _ = sym_eig([[2.0, 1.0], [1.0, 2.0]])
        np.testing.assert_allclose(w, [1.0, 3.0], rtol=1e-14)


class TestSqrt:
    def test_identity(self):
        np.testing.assert_array_equal(spd_sqrt(np.eye(3)).entries, np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(spd_sqrt(np.diag([4.0, 9.0])).entries, np.diag([2.0, 3.0]), atol=1e-15)

    def test_two_by_two(self):
        a = np.array([[2.0, 1.0], [1.0, 2.0]])
        r = spd_sqrt(a)
        np.testing.assert_allclose(r.eig[0], [1.0, np.sqrt(3.0)], rtol=1e-14)
        np.testing.assert_allclose(r.entries @ r.entries, a, rtol=1e-14)

    def test_clamps_roundoff_negative(self):
        r = spd_sqrt(np.diag([4.0, -1e-14]))
        np.testing.assert_allclose(r.entries, np.diag([2.0, 0.0]))

    @given(p=st.integers(1, 10), seed=st.integers(0, 2**32 - 1))
    def test_square_recovers_input(self, p, seed):
        a = random_spd(p, np.random.default_rng(seed))
        r = spd_sqrt(a).entries
        assert rel_fro(r @ r, a) < 1e-7

    @given(p=st.integers(1, 10), seed=st.integers(0, 2**32 - 1))
    def test_commutes_with_input(self, p, seed):
        a = random_spd(p, np.random.default_rng(seed))
        r = spd_sqrt(a).entries
        ri = spd_inv_sqrt(a).entries
        scale = np.linalg.norm(a) * np.linalg.norm(r)
        assert np.linalg.norm(r @ a - a @ r) <= 1e-8 * scale
        assert np.linalg.norm(ri @ a - a @ ri) <= 1e-8 * np.linalg.norm(a) * np.linalg.norm(ri)

    @given(p=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
    def test_outputs_exactly_symmetric(self, p, seed):
        a = random_spd(p, np.random.default_rng(seed))
        for out in (spd_sqrt(a), spd_inv_sqrt(a)):
            np.testing.assert_array_equal(out.entries, out.entries.T)


class TestInvSqrt:
    def test_identity(self):
        np.testing.assert_allclose(spd_inv_sqrt(np.eye(4), 1e-12).entries, np.eye(4))

    def test_diagonal(self):
        np.testing.assert_allclose(spd_inv_sqrt(np.diag([4.0, 9.0]), 1e-12).entries, np.diag([0.5, 1 / 3]), rtol=1e-14)

    def test_floor(self):
        # 1e-20 is raised to the floor 1e-12, whose inverse root is 1e6
        out = spd_inv_sqrt(np.diag([1e-20, 4.0]), 1e-12).entries
        np.testing.assert_allclose(out, np.diag([1e6, 0.5]), rtol=1e-12)

    def test_inverse_of_sqrt(self, rng):
        a = random_spd(5, rng)
        np.testing.assert_allclose(spd_inv_sqrt(a).entries @ spd_sqrt(a).entries, np.eye(5), atol=1e-10)

    def test_all_below_floor(self):
        with pytest.raises(DegenerateMatrix):
            spd_inv_sqrt(np.diag([1e-14, 1e-15]), 1e-12)

    def test_bad_floor(self):
        with pytest.raises(ValueError):
            spd_inv_sqrt(np.eye(2), 0.0)
