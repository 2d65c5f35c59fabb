import numpy as np
import pytest

from gradcheck import check
from kinn.autodiff import Graph, ParamStore, evaluate
from kinn.kinloss import LossSpec
from kinn.models import (
    ARCHITECTURES,
    ModelConfig,
    build_model,
    expected_param_count,
    fit_linear_closed_form,
    load_model,
    predict,
    save_model,
    solve_least_squares,
    train,
)
from kinn.models.gmdh import GMDHLayer, build_gmdh
from kinn.models.nets import attention_block, build_kgate, build_rbf

T = 3          # small windows keep finite differences cheap: m = n = 5 with velocities
GRAPH_ARCHS = [a for a in ARCHITECTURES if a != "linear_closed_form"]


def small_model(arch, kinematic, seed):
    cfg = ModelConfig.for_window(arch, T, T, kinematic, seed=seed)
    if arch == "gmdh":
        m = cfg.input_dim
        rng = np.random.default_rng(seed)
        l1 = GMDHLayer(np.array([[0, 1], [1, m - 2], [0, m - 1]]), rng.uniform(-1, 1, (3, 3)))
        l2 = GMDHLayer(np.array([[0, 1], [0, 2]]), rng.uniform(-1, 1, (2, 3)))
        return build_gmdh(cfg, [l1, l2], rng.uniform(-1, 1, (m + 2 + 1, cfg.output_dim)))
    if arch == "attention":
        cfg.arch_params["width"] = 3
    return build_model(cfg)


def spec_for(kinematic):
    return LossSpec("kinematic", T) if kinematic else LossSpec("mse", T)


@pytest.mark.parametrize("arch", GRAPH_ARCHS + ["linear_closed_form"])
@pytest.mark.parametrize("kinematic", [False, True], ids=["mse", "kinematic"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_check(arch, kinematic, seed):
    model = small_model(arch, kinematic, seed)
    rng = np.random.default_rng(100 + seed)
    if arch == "rbf":
        # keep inputs near the centers so the bumps are not flat
        x = model.params["rbf.c"][rng.integers(0, model.config.h2, 4)]
        x = x + rng.normal(0, 0.2, x.shape)
    else:
        x = rng.uniform(0, 1, (4, model.config.input_dim))
    y = rng.uniform(0, 1, (4, model.config.output_dim))
    loss_id, target = model.loss_node(spec_for(kinematic))
    err = check(model.graph, {"x": x, target: y}, model.params, loss_id)
    assert err < 1e-4


class TestParamCounts:
    @pytest.mark.parametrize("arch", ["linear_closed_form", "linear_sgd", "mlp_relu", "rbf",
                                      "kgate", "attention"])
    def test_counts_match(self, arch):
        cfg = ModelConfig.for_window(arch, 30, 30, True)
        assert build_model(cfg).params.count() == expected_param_count(cfg)

    def test_frozen_counts(self):
        m = n = 59
        assert expected_param_count(ModelConfig("mlp_relu", m, n)) == 17760
        assert expected_param_count(ModelConfig("kgate", m, n)) == 49800
        assert expected_param_count(ModelConfig("linear_closed_form", m, n)) == 3540
        assert expected_param_count(ModelConfig("rbf", m, n)) == 119 * 59 + 119 + 119 * 59

    def test_hidden_widths(self):
        cfg = ModelConfig.for_window("mlp_tanh", 30, 30, True)
        assert (cfg.h1, cfg.h2) == (59, 119)
        model = build_model(cfg)
        assert model.params["l1.W"].shape == (59, 59)
        assert model.params["l2.W"].shape == (59, 119)
        assert model.params["out.W"].shape == (119, 59)

    def test_raw_widths(self):
        cfg = ModelConfig.for_window("mlp_relu", 30, 30, False)
        assert (cfg.input_dim, cfg.h1, cfg.h2, cfg.output_dim) == (30, 30, 61, 30)

    def test_unknown_arch(self):
        with pytest.raises(ValueError, match="unknown architecture"):
            ModelConfig("lstm", 5, 5)


class TestClosedForm:
    def test_recovers_exact_linear_map(self, rng):
        X = rng.normal(size=(40, 5))
        W = rng.normal(size=(5, 3))
        b = rng.normal(size=3)
        model = fit_linear_closed_form(X, X @ W + b)
        np.testing.assert_allclose(model.params["out.W"], W, atol=1e-10)
        np.testing.assert_allclose(model.params["out.b"], b, atol=1e-10)

    def test_rank_deficient(self, rng):
        col = rng.normal(size=(20, 1))
        X = np.hstack([col, col, rng.normal(size=(20, 1))])
        Y = X @ np.array([[1.0], [1.0], [2.0]]) + 0.5
        W = solve_least_squares(X, Y)
        assert np.all(np.isfinite(W))
        pred = np.hstack([X, np.ones((20, 1))]) @ W
        assert np.max(np.abs(pred - Y)) < 1e-6

    def test_underdetermined(self, rng):
        # 30 windows, 59 features: the session shape for velocity inputs
        X, Y = rng.normal(size=(30, 59)), rng.normal(size=(30, 59))
        model = fit_linear_closed_form(X, Y)
        assert np.max(np.abs(predict(model, X) - Y)) < 1e-6

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            fit_linear_closed_form(np.zeros((0, 3)), np.zeros((0, 3)))


class TestRBF:
    def test_center_hit_is_one(self):
        cfg = ModelConfig("rbf", 3, 1, arch_params={"centers": 1})
        model = build_rbf(cfg)
        model.params.set("rbf.a", [[1.0]])
        c = model.params["rbf.c"][0]
        assert predict(model, c)[0] == 1.0

    def test_decays_with_distance(self):
        cfg = ModelConfig("rbf", 3, 1, arch_params={"centers": 1})
        model = build_rbf(cfg)
        model.params.set("rbf.a", [[1.0]])
        c = model.params["rbf.c"][0]
        outs = [predict(model, c + r)[0] for r in (0.0, 0.5, 2.0, 20.0)]
        assert outs == sorted(outs, reverse=True)
        assert outs[-1] < 1e-12

    def test_centers_from_training_rows(self, rng):
        X = rng.normal(size=(10, 4))
        model = build_rbf(ModelConfig("rbf", 4, 2, arch_params={"centers": 6}), X)
        for c in model.params["rbf.c"]:
            assert np.any(np.all(X == c, axis=1))


class TestKGate:
    def _model(self):
        model = build_kgate(ModelConfig("kgate", 4, 2, seed=3))
        return model

    def test_closed_sigmoid_gate_gives_bias(self):
        model = self._model()
        for i in (1, 2):
            model.params.set(f"k{i}.sig.W", np.zeros_like(model.params[f"k{i}.sig.W"]))
            model.params.set(f"k{i}.sig.b", np.full_like(model.params[f"k{i}.sig.b"], -800.0))
        out = predict(model, np.array([0.1, 0.4, 0.2, 0.9]))
        np.testing.assert_allclose(out, model.params["out.b"], atol=1e-12)

    def test_open_gates_reduce_to_linear(self, rng):
        model = self._model()
        p = model.params
        for i in (1, 2):
            for gate in ("tanh", "shift"):
                p.set(f"k{i}.{gate}.W", np.zeros_like(p[f"k{i}.{gate}.W"]))
                p.set(f"k{i}.{gate}.b", np.zeros_like(p[f"k{i}.{gate}.b"]))
            p.set(f"k{i}.sig.W", np.zeros_like(p[f"k{i}.sig.W"]))
            p.set(f"k{i}.sig.b", np.full_like(p[f"k{i}.sig.b"], 60.0))
        x = rng.uniform(size=4)
        h = x @ p["k1.trunk.W"] + p["k1.trunk.b"]
        h = h @ p["k2.trunk.W"] + p["k2.trunk.b"]
        np.testing.assert_allclose(predict(model, x), h @ p["out.W"] + p["out.b"], rtol=1e-12)

    def test_gates_read_network_input(self):
        model = self._model()
        assert model.params["k2.sig.W"].shape == (4, 9)
        assert model.params["k2.trunk.W"].shape == (4, 9)


def _block_graph(d, rng, identity_values=False):
    g = Graph()
    tokens = g.input("t")
    g.set_output(attention_block(g, tokens, "a"))
    p = ParamStore()
    for name in ("k", "q", "v"):
        p.add(f"a.{name}.W", rng.normal(size=(d, d)))
        p.add(f"a.{name}.b", rng.normal(size=d))
    if identity_values:
        p.set("a.v.W", np.eye(d))
        p.set("a.v.b", np.zeros(d))
    return g, p


class TestAttention:
    def test_single_token_passes_values(self, rng):
        g, p = _block_graph(4, rng)
        t = rng.normal(size=(2, 1, 4))
        out = evaluate(g, {"t": t}, p)
        np.testing.assert_allclose(out, t @ p["a.v.W"] + p["a.v.b"], rtol=1e-13)

    def test_columns_sum_to_one(self, rng):
        d = 5
        g, p = _block_graph(d, rng, identity_values=True)
        A = evaluate(g, {"t": np.eye(d)[None]}, p)[0]   # Z = A when V = I
        np.testing.assert_allclose(A.sum(axis=0), 1.0, atol=1e-12)
        assert np.all(A > 0)

    def test_permutation_equivariant(self, rng):
        g, p = _block_graph(4, rng)
        t = rng.normal(size=(1, 6, 4))
        perm = rng.permutation(6)
        out = evaluate(g, {"t": t}, p)
        out_perm = evaluate(g, {"t": t[:, perm]}, p)
        np.testing.assert_allclose(out_perm, out[:, perm], rtol=1e-12, atol=1e-14)

    def test_positional_bias_breaks_symmetry(self, rng):
        cfg = ModelConfig("attention", 4, 2, seed=1, arch_params={"width": 3})
        model = build_model(cfg)
        x = np.array([0.2, 0.5, 0.7, 0.1])
        base = predict(model, x)
        for i in (1, 2):
            model.params.set(f"att{i}.pos", np.zeros_like(model.params[f"att{i}.pos"]))
        assert not np.allclose(base, predict(model, x))

    def test_output_shape(self):
        model = build_model(ModelConfig.for_window("attention", 30, 30, True))
        assert predict(model, np.linspace(0, 1, 59)).shape == (59,)


class TestTraining:
    def test_loss_decreases(self, rng):
        model = build_model(ModelConfig("mlp_tanh", 4, 3, seed=0))
        X = rng.uniform(size=(30, 4))
        Y = X[:, :3] * 0.5 + 0.1
        res = train(model, X, Y, LossSpec("mse", 3), epochs=200)
        assert res.losses[-1] < 0.1 * res.losses[0]

    @pytest.mark.parametrize("rows,steps", [(30, 1), (32, 1), (70, 3)])
    def test_batching(self, rows, steps, rng):
        model = build_model(ModelConfig("linear_sgd", 2, 2))
        res = train(model, rng.normal(size=(rows, 2)), rng.normal(size=(rows, 2)),
                    LossSpec("mse", 2), epochs=2)
        assert res.steps == 2 * steps
        assert model.params.t == 2 * steps

    def test_deterministic(self, rng):
        X, Y = rng.normal(size=(50, 5)), rng.normal(size=(50, 5))
        outs = []
        for _ in range(2):
            model = build_model(ModelConfig.for_window("kgate", T, T, True, seed=4))
            train(model, X, Y, LossSpec("kinematic", T), epochs=5, rng=np.random.default_rng(1))
            outs.append(model.params.flat().tobytes())
        assert outs[0] == outs[1]

    def test_width_checks(self, rng):
        model = build_model(ModelConfig("linear_sgd", 5, 5))
        with pytest.raises(ValueError):
            train(model, np.zeros((3, 5)), np.zeros((3, 4)), LossSpec("mse", 4))
        with pytest.raises(ValueError):
            train(model, np.zeros((3, 5)), np.zeros((3, 5)), LossSpec("kinematic", 2))


@pytest.mark.parametrize("arch", GRAPH_ARCHS)
def test_save_load_round_trip(arch, tmp_path, rng):
    model = small_model(arch, True, 7)
    x = rng.uniform(size=(3, 5))
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.config.arch == arch
    np.testing.assert_array_equal(predict(back, x), predict(model, x))


def test_predict_shapes():
    model = build_model(ModelConfig("mlp_relu", 4, 2))
    assert predict(model, np.zeros(4)).shape == (2,)
    assert predict(model, np.zeros((3, 4))).shape == (3, 2)
    with pytest.raises(ValueError):
        predict(model, np.zeros(5))


@pytest.mark.parametrize("arch", ["mlp_relu", "mlp_tanh", "mlp_sigmoid"])
def test_zero_weights(arch, rng):
    model = build_model(ModelConfig(arch, 4, 3))
    for name in model.params:
        model.params.set(name, np.zeros_like(model.params[name]))
    model.params.set("out.W", rng.normal(size=(9, 3)))
    model.params.set("out.b", rng.normal(size=3))
    out = predict(model, rng.uniform(size=4))
    hidden = 0.5 if arch == "mlp_sigmoid" else 0.0
    np.testing.assert_allclose(out, np.full(9, hidden) @ model.params["out.W"] + model.params["out.b"])
