import numpy as np
import pytest

from srfkit.graph import Graph
from srfkit.kernels import FeatureMap, KernelKind
from srfkit.metrics import min_row_distance
from srfkit.rng import RngState, build_srm
from srfkit.sketch import (
    KernelConfig,
    SketchOperator,
    SrfEmbedding,
    apply_ag,
    apply_identity,
    apply_korder,
    apply_srm_ag,
    load_embeddings,
    prepare_features,
    save_embeddings,
    sketch,
    srf,
    srf_dataset,
)


def _phi(n=8, d=4, seed=0):
    return RngState(seed).generator().standard_normal((n, d))


class TestApplyAg:
    def test_zero_G_is_identity(self):
        phi = _phi()
        assert np.array_equal(apply_ag(phi, RngState(0), G=np.zeros((8, 8))), phi)

    def test_explicit_G_formula(self):
        phi = _phi()
        G = _phi(8, 8, 1)
        assert np.allclose(apply_ag(phi, RngState(0), G=G), (np.eye(8) + G / np.sqrt(8)) @ phi)

    def test_scalar_case(self):
        out = apply_ag(np.array([[2.0]]), RngState(3))
        g = RngState(3).generator().standard_normal((1, 1))[0, 0]
        assert out[0, 0] == pytest.approx(2.0 * (1 + g))

    def test_input_not_modified(self):
        phi = _phi()
        before = phi.copy()
        apply_ag(phi, RngState(0))
        assert np.array_equal(phi, before)

    def test_chunking_is_invisible(self):
        phi = _phi(50, 3)
        a = apply_ag(phi, RngState(2), chunk_entries=50 * 7)
        b = apply_ag(phi, RngState(2), chunk_entries=10**6)
        assert np.allclose(a, b, atol=1e-13)

    def test_streamed_matches_materialized(self):
        phi = _phi(10, 3)
        G = RngState(4).generator().standard_normal((10, 10))
        assert np.allclose(apply_ag(phi, RngState(4)), apply_ag(phi, RngState(0), G=G), atol=1e-13)

    def test_bad_G_shape(self):
        with pytest.raises(ValueError):
            apply_ag(_phi(), RngState(0), G=np.zeros((3, 3)))

    def test_cross_terms_unbiased_given_phi(self):
        phi = _phi(8, 4, 5)
        i, j = 1, 6
        vals = np.array([(lambda z: z[i] @ z[j])(apply_ag(phi, RngState(9).child(t))) for t in range(20_000)])
        se = vals.std(ddof=1) / np.sqrt(vals.size)
        assert abs(vals.mean() - phi[i] @ phi[j]) <= 4 * se


class TestKOrder:
    def test_k1_equals_single_block(self):
        phi = _phi()
        r = RngState(3)
        assert np.array_equal(apply_korder(phi, 1, r), apply_ag(phi, r.child(0)))

    def test_block_recoverable(self):
        phi = _phi()
        r = RngState(3)
        out = apply_korder(phi, 3, r)
        assert out.shape == (8, 12)
        assert np.array_equal(out[:, 8:12], apply_ag(phi, r.child(2)))

    def test_rejects_k0(self):
        with pytest.raises(ValueError):
            apply_korder(_phi(), 0, RngState(0))

    def test_identity_kind(self):
        assert np.array_equal(apply_korder(_phi(), 1, RngState(0), kind="identity"), _phi())
        with pytest.raises(ValueError):
            apply_korder(_phi(), 2, RngState(0), kind="identity")

    def test_per_block_unbiased(self):
        phi = _phi(8, 4, 6)
        vals = []
        for t in range(4000):
            z = apply_korder(phi, 8, RngState(1).child(t))
            vals.append([z[0, 4 * m : 4 * m + 4] @ z[3, 4 * m : 4 * m + 4] for m in range(8)])
        vals = np.asarray(vals)
        se = vals.std(axis=0, ddof=1) / np.sqrt(len(vals))
        assert np.all(np.abs(vals.mean(axis=0) - phi[0] @ phi[3]) <= 4 * se)


class TestSrmSketch:
    def test_matches_dense(self):
        phi = _phi()
        r = RngState(2)
        srm = build_srm(r, 8, 3, first_diagonal="gaussian")
        expect = (np.eye(8) + srm.dense()) @ phi
        assert np.max(np.abs(apply_srm_ag(phi, r) - expect)) <= 1e-10

    def test_zero_matrix_hook(self):
        phi = _phi()
        srm = build_srm(RngState(0), 8, 3)
        zero = type(srm)(8, 8, np.zeros_like(srm.diagonals))
        assert np.array_equal(apply_srm_ag(phi, RngState(0), srm=zero), phi)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            apply_srm_ag(_phi(), RngState(0), srm=build_srm(RngState(0), 5))

    def test_korder_srm(self):
        out = apply_korder(_phi(), 2, RngState(0), kind="srm_ag")
        assert out.shape == (8, 8)


class TestOperator:
    def test_validation(self):
        with pytest.raises(ValueError):
            SketchOperator("fft")
        with pytest.raises(ValueError):
            SketchOperator("dense_ag", 0)
        with pytest.raises(ValueError):
            SketchOperator("identity", 2)

    def test_out_width(self):
        assert SketchOperator("dense_ag", 4).out_width(16) == 64

    def test_sketch_default_stream(self):
        op = SketchOperator("dense_ag", 2, seed=11)
        assert np.array_equal(sketch(_phi(), op), apply_korder(_phi(), 2, RngState(11)))


class TestPrepareFeatures:
    def test_featureless(self):
        X, sub = prepare_features(np.zeros((4, 0)))
        assert sub and np.array_equal(X, np.ones((4, 1)))

    def test_identical_rows(self):
        X, sub = prepare_features(np.full((3, 2), 7.0))
        assert sub and np.array_equal(X, np.ones((3, 2)))

    def test_distinct_rows_untouched(self):
        X0 = _phi(3, 2)
        X, sub = prepare_features(X0)
        assert not sub and np.array_equal(X, X0)


class TestSrf:
    def test_identity_pipeline_returns_X(self):
        X = _phi(6, 3)
        emb = srf(X, KernelConfig("linear", 3), SketchOperator("identity", 1), feature_map=FeatureMap.identity(3))
        assert np.array_equal(emb.Z, X)

    def test_shape_contract(self):
        emb = srf(_phi(6, 3), KernelConfig("rbf", 8), SketchOperator("dense_ag", 2))
        assert emb.Z.shape == (6, 16)
        assert emb.n == 6 and emb.width == 16
        assert len(emb.block_rngs) == 2

    def test_deterministic(self):
        args = (_phi(6, 3), KernelConfig("laplacian", 8, seed=4), SketchOperator("dense_ag", 2, seed=5))
        assert np.array_equal(srf(*args).Z, srf(*args).Z)

    @pytest.mark.parametrize("kind", ["dense_ag", "srm_ag"])
    def test_constant_features_unique_rows(self, kind):
        X = np.ones((20, 3))
        kc = KernelConfig("rbf", 8, 1.0)
        for t in range(100):
            emb = srf(X, kc, SketchOperator(kind, 1, seed=t))
            assert emb.substituted
            assert min_row_distance(emb.Z) > 1e-12

    def test_featureless_graph(self):
        emb = srf(np.zeros((5, 0)), KernelConfig("rbf", 4, 1.0), SketchOperator("dense_ag", 1))
        assert emb.Z.shape == (5, 4)

    def test_dataset_shares_map_and_splits_streams(self):
        gs = [Graph(4, [[0, 1]], _phi(4, 2, s), id=f"g{s}") for s in range(3)]
        fmap, embs = srf_dataset(gs, KernelConfig("rbf", 4), SketchOperator("dense_ag", 1, seed=2))
        assert [e.graph_id for e in embs] == ["g0", "g1", "g2"]
        again = srf(gs[1].x, KernelConfig("rbf", 4), SketchOperator("dense_ag", 1, seed=2),
                    feature_map=fmap, rng=RngState(2).child("graph").child(1))
        assert np.array_equal(again.Z, embs[1].Z)

    def test_dataset_width_mismatch(self):
        gs = [Graph(2, [], np.ones((2, 2)) * [[1], [2]]), Graph(2, [], np.ones((2, 3)) * [[1], [2]])]
        with pytest.raises(ValueError):
            srf_dataset(gs, KernelConfig("rbf", 4), SketchOperator("dense_ag", 1))

    def test_embedding_round_trip(self, tmp_path):
        emb = srf(_phi(6, 3), KernelConfig("rbf", 8), SketchOperator("dense_ag", 2))
        path = tmp_path / "z.json"
        save_embeddings(path, [emb], dataset="d")
        back, doc = load_embeddings(path)
        assert doc["dataset"] == "d"
        assert np.array_equal(back[0].Z, emb.Z)
        assert back[0].block_rngs == emb.block_rngs

    def test_from_dict_empty_width(self):
        e = SrfEmbedding.from_dict({"Z": [[], []]})
        assert e.Z.shape == (2, 0)

    def test_apply_identity_copies(self):
        phi = _phi()
        out = apply_identity(phi)
        out[0, 0] = 99
        assert phi[0, 0] != 99

    def test_kernel_config_resolution(self):
        X = np.array([[0.0], [1.0], [3.0]])
        assert KernelConfig("rbf", 4).resolve(X) == KernelKind("rbf", 2.0)
        assert KernelConfig("laplacian", 4, 0.5).resolve(X) == KernelKind("laplacian", 0.5)
        assert KernelConfig("linear", 4).resolve(X) == KernelKind("linear")


def test_srm_scaling_beats_dense():
    import timeit

    def best(n):
        phi = RngState(n).generator().standard_normal((n, 32))
        apply_srm_ag(phi, RngState(0))
        return min(timeit.repeat(lambda: apply_srm_ag(phi, RngState(0)), number=3, repeat=5))

    assert best(4096) / best(1024) <= 8


def test_small_rbf_korder_shape():
    emb = srf(_phi(6, 3), KernelConfig("rbf", 8), SketchOperator("dense_ag", 2))
    assert emb.Z.shape == (6, 16)
