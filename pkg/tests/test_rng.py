import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srfkit import _accel
from srfkit.rng import (
    RngState,
    StructuredRandomMatrix,
    build_srm,
    draw,
    next_pow2,
    sample_matrix,
    seed_rng,
    sylvester_hadamard,
)


class TestRngState:
    def test_same_state_same_numbers(self):
        a = sample_matrix(RngState(7), 3, 4)
        b = sample_matrix(RngState(7), 3, 4)
        assert np.array_equal(a, b)

    def test_children_differ(self):
        r = seed_rng(3)
        assert r.child(0) != r.child(1)
        assert r.child("a") != r.child("b")
        assert not np.array_equal(sample_matrix(r.child(0), 2, 2), sample_matrix(r.child(1), 2, 2))

    def test_child_is_deterministic(self):
        assert RngState(5).child("x").child(2) == RngState(5).child("x").child(2)

    def test_seeds_differ(self):
        assert not np.array_equal(sample_matrix(RngState(1), 2, 2), sample_matrix(RngState(2), 2, 2))

    def test_spawn(self):
        r = RngState(1)
        assert r.spawn(3) == [r.child(0), r.child(1), r.child(2)]

    @pytest.mark.parametrize("bad", [-1, 2**64, 1.5])
    def test_rejects_non_u64(self, bad):
        with pytest.raises(ValueError):
            RngState(bad)

    def test_max_seed_accepted(self):
        sample_matrix(RngState(2**64 - 1), 1, 1)

    def test_round_trip_dict(self):
        r = RngState(9).child("q")
        assert RngState(**r.to_dict()) == r


class TestSampling:
    @pytest.mark.parametrize("rows,cols", [(0, 3), (3, 0), (-1, 2)])
    def test_bad_dims(self, rows, cols):
        with pytest.raises(ValueError):
            sample_matrix(RngState(0), rows, cols)

    def test_unknown_dist(self):
        with pytest.raises(ValueError):
            sample_matrix(RngState(0), 2, 2, "poisson")

    def test_gaussian_moments(self):
        x = sample_matrix(RngState(0), 200_000, 1)
        assert abs(x.mean()) < 4 / np.sqrt(x.size)
        assert abs(x.var() - 1) < 0.02

    def test_cauchy_quartiles(self):
        x = sample_matrix(RngState(1), 200_000, 1, "cauchy").ravel()
        q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
        assert abs(med) < 0.01
        assert abs(q1 + 1) < 0.02 and abs(q3 - 1) < 0.02

    def test_uniform_range(self):
        x = sample_matrix(RngState(2), 1000, 100, "uniform_0_2pi")
        assert x.min() >= 0 and x.max() < 2 * np.pi
        assert abs(x.mean() - np.pi) < 0.02

    def test_uniform_clamps_top(self):
        class One:
            def random(self, shape):
                return np.ones(shape)

        assert draw(One(), (3,), "uniform_0_2pi").max() < 2 * np.pi


class TestHadamard:
    @pytest.mark.parametrize("n", [1, 2, 4, 8, 16])
    def test_orthogonal(self, n):
        h = sylvester_hadamard(n)
        assert np.array_equal(h @ h.T, n * np.eye(n))

    def test_rejects_non_power(self):
        with pytest.raises(ValueError):
            sylvester_hadamard(6)

    @pytest.mark.parametrize("n", [1, 2, 8, 64])
    def test_fwht_matches_dense(self, n):
        a = RngState(n).generator().standard_normal((n, 3))
        dense = sylvester_hadamard(n) @ a
        assert np.allclose(_accel.fwht_numpy(a), dense, atol=1e-12)
        assert np.allclose(_accel.fwht_numba(a), dense, atol=1e-12)

    @given(st.integers(0, 7), st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_fwht_involution(self, log_n, seed):
        n = 2**log_n
        a = RngState(seed).generator().standard_normal((n, 2))
        assert np.allclose(_accel.fwht(_accel.fwht(a)) / n, a, atol=1e-10)

    def test_fwht_leaves_input(self):
        a = np.arange(8.0)[:, None]
        before = a.copy()
        _accel.fwht(a)
        assert np.array_equal(a, before)

    def test_next_pow2(self):
        assert [next_pow2(n) for n in (1, 2, 3, 5, 64, 65)] == [1, 2, 4, 8, 64, 128]


class TestStructuredRandomMatrix:
    @pytest.mark.parametrize("n", [1, 3, 8, 13, 32, 33, 64])
    @pytest.mark.parametrize("first", ["rademacher", "gaussian"])
    def test_fast_matches_dense(self, n, first):
        m = build_srm(RngState(n), n, 3, first)
        v = RngState(100 + n).generator().standard_normal((n, 4))
        assert np.max(np.abs(m.apply(v) - m.dense() @ v)) <= 1e-10
        assert np.max(np.abs(m.apply(v[:, 0]) - m.dense() @ v[:, 0])) <= 1e-10

    def test_power_of_two_signs_orthogonal(self):
        m = build_srm(RngState(0), 16, 3).dense()
        assert np.allclose(m @ m.T, np.eye(16), atol=1e-12)

    def test_norm_preserved_in_expectation(self):
        v = np.linspace(-1, 1, 24)
        norms = [np.sum(build_srm(RngState(0).child(t), 24, 3, "gaussian").apply(v) ** 2) for t in range(3000)]
        assert abs(np.mean(norms) / np.sum(v**2) - 1) < 0.05

    def test_numpy_and_numba_transforms_agree(self):
        m = build_srm(RngState(4), 50, 3, "gaussian")
        v = RngState(5).generator().standard_normal((50, 3))
        assert np.allclose(m.apply(v, fwht=_accel.fwht_numpy), m.apply(v, fwht=_accel.fwht_numba), atol=1e-12)

    def test_shape_mismatch(self):
        m = build_srm(RngState(0), 8)
        with pytest.raises(ValueError):
            m.apply(np.ones(7))

    def test_bad_args(self):
        with pytest.raises(ValueError):
            build_srm(RngState(0), 0)
        with pytest.raises(ValueError):
            build_srm(RngState(0), 4, 2, "uniform")

    def test_properties(self):
        m = build_srm(RngState(0), 5, 2)
        assert isinstance(m, StructuredRandomMatrix)
        assert (m.n, m.padded, m.blocks) == (5, 8, 2)
        assert m.scale == pytest.approx(np.sqrt(8 / 5))


class TestAccel:
    def test_backend_flag(self):
        assert _accel.BACKEND in ("numba", "numpy")

    def test_aggregate_backends_agree(self):
        indptr = np.array([0, 2, 3, 3, 4])
        indices = np.array([1, 3, 0, 0])
        x = np.arange(8.0).reshape(4, 2)
        expect = x.copy()
        expect[0] += x[1] + x[3]
        expect[1] += x[0]
        expect[3] += x[0]
        assert np.array_equal(_accel.aggregate_numpy(indptr, indices, x), expect)
        assert np.array_equal(_accel.aggregate_numba(indptr, indices, x), expect)

    def test_edge_sqdiff_backends_agree(self):
        edges = np.array([[0, 1], [1, 2]])
        h = np.array([[0.0], [1.0], [3.0]])
        assert _accel.edge_sqdiff_numpy(edges, h) == 5.0
        assert _accel.edge_sqdiff_numba(edges, h) == 5.0

    def test_empty_edges(self):
        assert _accel.edge_sqdiff_numpy(np.zeros((0, 2), dtype=np.int64), np.ones((3, 2))) == 0.0
        assert _accel.edge_sqdiff_numba(np.zeros((0, 2), dtype=np.int64), np.ones((3, 2))) == 0.0


class TestMonteCarloOracles:
    def test_seed42_mean(self):
        x = sample_matrix(RngState(42), 1_000_000, 1)
        assert abs(x.mean()) < 0.01

    def test_variance_within_one_percent(self):
        x = sample_matrix(RngState(3), 1000, 1000)
        assert abs(x.var() - 1) < 0.01

    def test_uniform_million(self):
        x = sample_matrix(RngState(4), 1000, 1000, "uniform_0_2pi")
        assert x.min() >= 0 and x.max() < 2 * np.pi
        assert abs(x.mean() - np.pi) < 0.01

    def test_shape(self):
        assert sample_matrix(RngState(0), 2, 3).shape == (2, 3)

    def test_first_100_draws(self):
        a = sample_matrix(RngState(0), 100, 1)
        assert np.array_equal(a, sample_matrix(RngState(0), 100, 1))
        assert not np.array_equal(a, sample_matrix(RngState(1), 100, 1))


class TestSrmOracles:
    def test_unit_vector_norm_exact(self):
        m = build_srm(RngState(0), 4, 3)
        e1 = np.array([1.0, 0.0, 0.0, 0.0])
        assert np.linalg.norm(m.apply(e1)) == pytest.approx(1.0, abs=1e-15)

    def test_padding_truncates(self):
        m = build_srm(RngState(0), 5)
        assert m.padded == 8 and m.apply(np.ones(5)).shape == (5,)

    def test_n8_dense(self):
        m = build_srm(RngState(8), 8, 3, "gaussian")
        v = RngState(9).generator().standard_normal(8)
        assert np.max(np.abs(m.apply(v) - m.dense() @ v)) <= 1e-12
