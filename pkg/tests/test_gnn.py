import numpy as np
import pytest

from srfkit.graph import Dataset, Graph, gen_csl, gen_random_graph, permute
from srfkit.gnn import (
    Adam,
    GnnConfig,
    GnnModel,
    collate,
    dirichlet_energy,
    evaluate,
    forward,
    grad,
    init_model,
    loss_and_grad,
    predict,
    train,
    write_history_csv,
)
from srfkit.rng import RngState


def path3(x=(1.0, 2.0, 3.0), label=0):
    return Graph(3, [[0, 1], [1, 2]], np.asarray(x)[:, None], graph_label=label)


def scalar_model(aggregation="sum"):
    cfg = GnnConfig(layers=1, hidden=1, aggregation=aggregation)
    params = {
        "layer0.W1": np.array([[1.0]]),
        "layer0.b1": np.zeros(1),
        "layer0.W2": np.array([[2.0]]),
        "layer0.b2": np.zeros(1),
        "out.W": np.array([[1.0, -1.0]]),
        "out.b": np.zeros(2),
    }
    return GnnModel(cfg, 1, 2, params)


def zero_model(cfg, F, C):
    m = init_model(cfg, F, C)
    for v in m.params.values():
        v[...] = 0.0
    return m


class TestForward:
    def test_hand_computed_sum(self):
        # u = [1+2, 2+1+3, 3+2] = [3, 6, 5]; h = 2u; pooled = 28
        hidden, logits = forward(scalar_model(), path3())
        assert hidden[1].ravel().tolist() == [6.0, 12.0, 10.0]
        assert logits.tolist() == [[28.0, -28.0]]

    def test_hand_computed_mean(self):
        # u = [3/2, 6/3, 5/2]; h = 2u = [3, 4, 5]
        hidden, logits = forward(scalar_model("mean"), path3())
        assert np.allclose(hidden[1].ravel(), [3.0, 4.0, 5.0])
        assert np.allclose(logits, [[12.0, -12.0]])

    def test_relu_clips(self):
        _, logits = forward(scalar_model(), path3((-1.0, -2.0, -3.0)))
        assert logits.tolist() == [[0.0, 0.0]]

    def test_zero_weights_give_zero_logits(self):
        cfg = GnnConfig(layers=2, hidden=4, srf_width=3)
        m = zero_model(cfg, 1, 5)
        z = np.ones((3, 3))
        _, logits = forward(m, path3(), z)
        assert logits.shape == (1, 5) and np.all(logits == 0)

    def test_srf_concatenated_each_layer(self):
        m = init_model(GnnConfig(layers=3, hidden=4, srf_width=6), 2, 3)
        assert [m.layer_in_width(layer) for layer in range(3)] == [8, 10, 10]

    def test_width_mismatch(self):
        m = init_model(GnnConfig(srf_width=4), 1, 2)
        with pytest.raises(ValueError):
            forward(m, path3(), np.ones((3, 5)))
        with pytest.raises(ValueError):
            forward(m, path3())

    def test_srf_row_mismatch(self):
        m = init_model(GnnConfig(srf_width=4), 1, 2)
        with pytest.raises(ValueError):
            forward(m, path3(), np.ones((2, 4)))

    @pytest.mark.parametrize("aggregation", ["sum", "mean"])
    def test_permutation_invariance(self, aggregation):
        g = gen_random_graph(12, 0.3, rng=RngState(0))
        z = RngState(1).generator().standard_normal((12, 5))
        m = init_model(GnnConfig(layers=3, hidden=8, srf_width=5, aggregation=aggregation), g.num_features, 3)
        pi = RngState(2).generator().permutation(12)
        zp = np.empty_like(z)
        zp[pi] = z
        _, a = forward(m, g, z)
        _, b = forward(m, permute(g, pi), zp)
        assert np.allclose(a, b, atol=1e-10)

    def test_root_readout(self):
        g = Graph(2, [[0, 1]], [[1.0], [0.0]], node_labels=[1, -1])
        m = init_model(GnnConfig(layers=1, hidden=3, readout="root_node"), 1, 2)
        hidden, logits = forward(m, g)
        assert np.allclose(logits[0], hidden[-1][0] @ m.params["out.W"] + m.params["out.b"])

    def test_batched_equals_single(self):
        gs = [gen_random_graph(6 + i, 0.4, rng=RngState(i)) for i in range(3)]
        m = init_model(GnnConfig(layers=2, hidden=5), gs[0].num_features, 2)
        _, joint = forward(m, collate(gs, None, "sum_pool_graph"))
        single = np.vstack([forward(m, g)[1] for g in gs])
        assert np.allclose(joint, single, atol=1e-12)


def _numeric_grad(model, batch, key, idx, h=1e-6):
    from srfkit.gnn import batch_loss

    p = model.params[key]
    old = p[idx]
    p[idx] = old + h
    up = batch_loss(model, batch)
    p[idx] = old - h
    down = batch_loss(model, batch)
    p[idx] = old
    return (up - down) / (2 * h)


class TestGradient:
    def test_readout_bias_two_classes(self):
        m = zero_model(GnnConfig(layers=1, hidden=2), 1, 2)
        g = grad(m, [(path3(), None, 0)])
        assert np.allclose(g["out.b"], [-0.5, 0.5])

    def test_duplicate_batch_same_gradient(self):
        m = init_model(GnnConfig(layers=2, hidden=4), 1, 2)
        item = (path3(), None, 1)
        a, b = grad(m, [item]), grad(m, [item, item])
        assert all(np.allclose(a[k], b[k]) for k in a)

    def test_mixed_srf_rejected(self):
        m = init_model(GnnConfig(srf_width=2), 1, 2)
        with pytest.raises(ValueError):
            grad(m, [(path3(), np.ones((3, 2)), 0), (path3(), None, 0)])

    @pytest.mark.parametrize("aggregation", ["sum", "mean"])
    @pytest.mark.parametrize("readout", ["sum_pool_graph", "root_node"])
    @pytest.mark.parametrize("kD", [0, 4])
    def test_finite_differences(self, aggregation, readout, kD):
        gen = RngState(7).generator()
        g = Graph(5, [[0, 1], [1, 2], [2, 3], [1, 4]], gen.standard_normal((5, 2)),
                  graph_label=1, node_labels=[2, -1, -1, -1, -1])
        cfg = GnnConfig(layers=2, hidden=6, srf_width=kD, readout=readout, aggregation=aggregation)
        m = init_model(cfg, 2, 3)
        for v in m.params.values():
            v += 0.1 * gen.standard_normal(v.shape)
        zs = [gen.standard_normal((5, kD))] if kD else None
        batch = collate([g], zs, readout)
        _, grads, _ = loss_and_grad(m, batch)
        worst = 0.0
        for key, G in grads.items():
            for idx in np.ndindex(G.shape):
                f = _numeric_grad(m, batch, key, idx)
                worst = max(worst, abs(G[idx] - f) / max(abs(G[idx]) + abs(f), 1e-6))
        assert worst < 1e-4

    def test_unlabeled_batch(self):
        g = Graph(2, [[0, 1]], [[1.0], [0.0]], node_labels=[-1, -1])
        m = init_model(GnnConfig(layers=1, hidden=2, readout="root_node"), 1, 2)
        with pytest.raises(ValueError):
            loss_and_grad(m, collate([g], None, "root_node"))


class TestOptimizer:
    def test_lr_zero_keeps_params(self):
        m = init_model(GnnConfig(layers=1, hidden=3), 1, 2)
        before = {k: v.copy() for k, v in m.params.items()}
        Adam(0.0).step(m.params, grad(m, [(path3(), None, 1)]))
        assert all(np.array_equal(before[k], m.params[k]) for k in before)

    def test_first_step_size(self):
        # bias-corrected first Adam step moves each coordinate by lr * sign(g)
        p = {"w": np.array([1.0, 1.0])}
        Adam(0.1).step(p, {"w": np.array([3.0, -0.5])})
        assert np.allclose(p["w"], [0.9, 1.1])

    def test_predict_ties_go_low(self):
        assert predict(np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 2.0]])).tolist() == [0, 1]


def toy_dataset():
    tri = Graph(3, [[0, 1], [1, 2], [0, 2]], np.ones((3, 1)), graph_label=1)
    graphs = []
    for i in range(20):
        graphs.append(path3((1.0, 1.0, 1.0), 0) if i % 2 == 0 else tri)
    return Dataset(graphs, num_classes=2, splits={"train": list(range(16)), "test": list(range(16, 20))})


class TestTrain:
    def test_toy_separable(self):
        cfg = GnnConfig(layers=2, hidden=8, epochs=150, batch_size=4, lr=1e-2)
        res = train(cfg, init_model(cfg, 1, 2), toy_dataset())
        assert res.best["test"] == 1.0
        assert res.history[-1]["split"] == "test"

    def test_deterministic(self):
        cfg = GnnConfig(layers=2, hidden=4, epochs=5, batch_size=3, lr=1e-2, seed=3)
        a = train(cfg, init_model(cfg, 1, 2), toy_dataset())
        b = train(cfg, init_model(cfg, 1, 2), toy_dataset())
        assert all(np.array_equal(a.model.params[k], b.model.params[k]) for k in a.model.params)
        assert a.history == b.history

    def test_input_model_untouched(self):
        cfg = GnnConfig(layers=1, hidden=4, epochs=2, lr=1e-2)
        m = init_model(cfg, 1, 2)
        before = {k: v.copy() for k, v in m.params.items()}
        train(cfg, m, toy_dataset())
        assert all(np.array_equal(before[k], m.params[k]) for k in before)

    def test_no_train_split(self):
        cfg = GnnConfig()
        with pytest.raises(ValueError):
            train(cfg, init_model(cfg, 1, 2), Dataset([path3()]))

    def test_nan_raises(self):
        cfg = GnnConfig(layers=1, hidden=2, epochs=1)
        m = init_model(cfg, 1, 2)
        m.params["out.b"][:] = np.nan
        with pytest.raises(FloatingPointError):
            train(cfg, m, toy_dataset())

    def test_history_csv(self, tmp_path):
        cfg = GnnConfig(layers=1, hidden=2, epochs=2)
        res = train(cfg, init_model(cfg, 1, 2), toy_dataset())
        write_history_csv(res.history, tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "epoch,split,loss,metric" and len(lines) == 5

    def test_csl_zero_model_is_chance(self):
        ds = gen_csl()
        cfg = GnnConfig(layers=2, hidden=4)
        m = zero_model(cfg, 1, 10)
        _, acc = evaluate(m, collate(ds.subset("test"), None, cfg.readout))
        assert acc == pytest.approx(0.1)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = GnnConfig(layers=2, hidden=5, srf_width=3)
        m = init_model(cfg, 2, 4)
        m.save(tmp_path / "m.json")
        back = GnnModel.load(tmp_path / "m.json")
        assert back.cfg == cfg and back.in_dim == 2 and back.num_classes == 4
        assert all(np.array_equal(m.params[k], back.params[k]) for k in m.params)

    def test_bad_format(self):
        with pytest.raises(ValueError):
            GnnModel.from_dict({"format": "other"})

    def test_init_deterministic_and_seeded(self):
        a = init_model(GnnConfig(seed=1), 3, 2)
        b = init_model(GnnConfig(seed=1), 3, 2)
        c = init_model(GnnConfig(seed=2), 3, 2)
        assert np.array_equal(a.params["layer0.W1"], b.params["layer0.W1"])
        assert not np.array_equal(a.params["layer0.W1"], c.params["layer0.W1"])
        assert np.all(a.params["layer0.b1"] == 0)

    @pytest.mark.parametrize("kwargs", [{"layers": 0}, {"readout": "max"}, {"aggregation": "max"}, {"srf_width": -1}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            GnnConfig(**kwargs)


class TestDirichlet:
    def test_path_oracle(self):
        # edges contribute 1 and 4; each counted twice over 3 nodes
        g = path3()
        assert dirichlet_energy([0.0, 1.0, 3.0], g) == pytest.approx(10 / 3)

    def test_constant_is_zero(self):
        g = gen_random_graph(10, 0.3, rng=RngState(0))
        assert dirichlet_energy(np.ones((10, 4)), g) == 0.0

    def test_matches_laplacian_form(self):
        g = gen_random_graph(15, 0.3, rng=RngState(1))
        H = RngState(2).generator().standard_normal((15, 3))
        A = np.zeros((15, 15))
        A[g.edges[:, 0], g.edges[:, 1]] = A[g.edges[:, 1], g.edges[:, 0]] = 1
        L = np.diag(A.sum(1)) - A
        assert dirichlet_energy(H, g) == pytest.approx(2 * np.trace(H.T @ L @ H) / 15)

    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            dirichlet_energy(np.ones((2, 1)), path3())


class TestSpecOracles:
    def test_first_layer_widths(self):
        assert init_model(GnnConfig(srf_width=0), 4, 2).layer_in_width(0) == 4
        assert init_model(GnnConfig(srf_width=16), 4, 2).layer_in_width(0) == 20

    def test_single_node_zero_weights(self):
        g = Graph(1, [], [[3.0]], graph_label=0)
        _, logits = forward(zero_model(GnnConfig(layers=2, hidden=3), 1, 4), g)
        assert np.all(logits == 0)

    def test_hand_computed_width_two(self):
        # u = [3, 6, 5]; a1 = [u, -u]; r = [u, 0]; h = r @ W2 = [u, 2u]; pooled = [14, 28]
        cfg = GnnConfig(layers=1, hidden=2)
        params = {
            "layer0.W1": np.array([[1.0, -1.0]]),
            "layer0.b1": np.zeros(2),
            "layer0.W2": np.array([[1.0, 2.0], [5.0, 5.0]]),
            "layer0.b2": np.zeros(2),
            "out.W": np.array([[1.0, 0.0], [0.0, -1.0]]),
            "out.b": np.array([0.5, 0.0]),
        }
        _, logits = forward(GnnModel(cfg, 1, 2, params), path3())
        assert logits.tolist() == [[14.5, -28.0]]

    def test_balanced_batch_bias_gradient(self):
        m = zero_model(GnnConfig(layers=1, hidden=2), 1, 2)
        per = [grad(m, [(path3(), None, c)])["out.b"] for c in (0, 1)]
        assert np.allclose(per[0], [-0.5, 0.5]) and np.allclose(per[1], [0.5, -0.5])
        both = grad(m, [(path3(), None, 0), (path3(), None, 1)])["out.b"]
        assert np.allclose(both, 0.0)

    def test_ten_graph_toy_reaches_full_train_accuracy(self):
        ds = toy_dataset()
        ds = Dataset(ds.graphs[:10], num_classes=2, splits={"train": list(range(10))})
        cfg = GnnConfig(layers=2, hidden=8, epochs=200, batch_size=5, lr=1e-2)
        res = train(cfg, init_model(cfg, 1, 2), ds)
        assert max(h["metric"] for h in res.history if h["split"] == "train") == 1.0

    def test_lr_zero_many_epochs(self):
        cfg = GnnConfig(layers=1, hidden=3, epochs=5, lr=0.0)
        m = init_model(cfg, 1, 2)
        res = train(cfg, m, toy_dataset())
        assert all(np.array_equal(m.params[k], res.model.params[k]) for k in m.params)

    def test_two_node_energy(self):
        g = Graph(2, [[0, 1]], np.zeros((2, 1)))
        assert dirichlet_energy([0.0, 1.0], g) == 1.0

    def test_relabeled_graph_same_logits(self):
        g = gen_random_graph(9, 0.4, rng=RngState(3))
        m = init_model(GnnConfig(layers=2, hidden=6), g.num_features, 3)
        pi = RngState(4).generator().permutation(9)
        assert np.allclose(forward(m, g)[1], forward(m, permute(g, pi))[1], atol=1e-12)
