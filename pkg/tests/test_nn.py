import json

import numpy as np
import pytest

from sleepgraph.nn import (
    AdamOptimizer,
    ConvParticipants,
    Dense,
    Dropout,
    EarlyStopper,
    GatLayer,
    GcnLayer,
    Lstm,
    NumericalError,
    Parameter,
    TrainConfig,
    adam_step,
    bce_loss,
    l2_prob_loss,
    normalize_adjacency,
    params_from_json,
    params_to_json,
    sigmoid,
)

from conftest import layer_grad_check, random_symmetric_graph


class TestDense:
    def test_identity_map(self):
        d = Dense(3, 3, "identity", rng=np.random.default_rng(0))
        d.params["W"].value[...] = np.eye(3)
        d.params["b"].value[...] = 0.0
        x = np.random.default_rng(1).normal(size=(4, 3))
        assert np.array_equal(d.forward(x), x)

    def test_hand_product(self):
        d = Dense(2, 1, "identity", rng=np.random.default_rng(0))
        d.params["W"].value[...] = [[1.0], [1.0]]
        d.params["b"].value[...] = [0.5]
        out = d.forward(np.array([[1.0, 2.0]]))
        assert out[0, 0] == pytest.approx(3.5)

    def test_shape_mismatch(self):
        d = Dense(2, 1, rng=np.random.default_rng(0))
        with pytest.raises(ValueError):
            d.forward(np.zeros((3, 5)))

    def test_nonfinite_trips(self):
        d = Dense(2, 1, "identity", rng=np.random.default_rng(0))
        with pytest.raises(NumericalError):
            d.forward(np.array([[np.inf, 1.0]]))

    @pytest.mark.parametrize("act", ["identity", "tanh", "sigmoid"])
    def test_gradients(self, act):
        for seed in range(4):
            rng = np.random.default_rng(seed)
            d = Dense(4, 3, act, rng=rng)
            x = rng.normal(size=(5, 4))
            assert layer_grad_check(d, lambda: d.forward(x)) < 1e-6

    def test_relu_gradient_away_from_kink(self):
        rng = np.random.default_rng(7)
        d = Dense(4, 3, "relu", rng=rng)
        x = rng.normal(size=(5, 4))
        while np.min(np.abs(x @ d.params["W"].value + d.params["b"].value)) < 1e-3:
            x = rng.normal(size=(5, 4))
        assert layer_grad_check(d, lambda: d.forward(x)) < 1e-6


class TestNormalizeAdjacency:
    def test_single_node(self):
        assert np.array_equal(normalize_adjacency(np.zeros((1, 1))), np.eye(1))

    def test_two_nodes_unit_edge(self):
        a = np.array([[0.0, 1.0], [1.0, 0.0]])
        want = np.full((2, 2), 0.5)
        assert np.allclose(normalize_adjacency(a), want)

    def test_all_zero_gives_identity(self):
        assert np.array_equal(normalize_adjacency(np.zeros((4, 4))), np.eye(4))

    def test_batched_matches_single(self):
        rng = np.random.default_rng(0)
        a = np.stack([random_symmetric_graph(5, rng) for _ in range(3)])
        batched = normalize_adjacency(a)
        for i in range(3):
            assert np.array_equal(batched[i], normalize_adjacency(a[i]))


class TestGcn:
    def test_identity_adjacency_reduces_to_dense(self):
        rng = np.random.default_rng(0)
        gcn = GcnLayer(4, 3, "tanh", rng=np.random.default_rng(1))
        x = rng.normal(size=(5, 4))
        out = gcn.forward(x, np.eye(5))
        want = np.tanh(x @ gcn.params["W"].value)
        assert np.allclose(out, want)

    def test_cross_component_isolation(self):
        # two components; changing features in one never touches the other
        adj = np.zeros((6, 6))
        for a, b in [(0, 1), (1, 2), (3, 4), (4, 5)]:
            adj[a, b] = adj[b, a] = 1.0
        a_hat = normalize_adjacency(adj)
        gcn1 = GcnLayer(4, 4, "tanh", rng=np.random.default_rng(2))
        gcn2 = GcnLayer(4, 4, "tanh", rng=np.random.default_rng(3))
        rng = np.random.default_rng(4)
        x = rng.normal(size=(6, 4))
        base = gcn2.forward(gcn1.forward(x, a_hat), a_hat)
        x2 = x.copy()
        x2[4] += rng.normal(size=4)  # node in the second component
        twin = gcn2.forward(gcn1.forward(x2, a_hat), a_hat)
        assert np.array_equal(base[:3], twin[:3])
        assert not np.array_equal(base[3:], twin[3:])

    def test_one_layer_star_locality(self):
        adj = np.zeros((4, 4))
        adj[0, 1:] = adj[1:, 0] = 1.0
        a_hat = normalize_adjacency(adj)
        gcn = GcnLayer(3, 2, "tanh", rng=np.random.default_rng(5))
        rng = np.random.default_rng(6)
        x = rng.normal(size=(4, 3))
        base = gcn.forward(x, a_hat)
        x2 = x.copy()
        x2[2] += 1.0  # another leaf
        twin = gcn.forward(x2, a_hat)
        assert np.array_equal(base[1], twin[1])   # leaf 1 unaffected by leaf 2
        assert not np.array_equal(base[0], twin[0])  # hub sees it

    def test_gradients(self):
        rng = np.random.default_rng(8)
        for seed in range(4):
            r = np.random.default_rng(seed)
            gcn = GcnLayer(4, 3, "tanh", rng=r)
            a_hat = normalize_adjacency(random_symmetric_graph(5, rng))
            x = rng.normal(size=(5, 4))
            assert layer_grad_check(gcn, lambda: gcn.forward(x, a_hat)) < 1e-6


class TestGat:
    def test_two_identical_nodes_split_attention(self):
        adj = np.array([[0.0, 1.0], [1.0, 0.0]])
        gat = GatLayer(3, 2, "tanh", rng=np.random.default_rng(0))
        x = np.tile(np.random.default_rng(1).normal(size=3), (2, 1))
        gat.forward(x, adj)
        assert np.allclose(gat.last_attention, 0.5)

    def test_isolated_node_attends_to_itself(self):
        adj = np.zeros((3, 3))
        adj[0, 1] = adj[1, 0] = 1.0
        gat = GatLayer(3, 2, "tanh", rng=np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(3, 3))
        gat.forward(x, adj)
        assert gat.last_attention[2, 2] == 1.0
        assert gat.last_attention[2, :2].sum() == 0.0

    def test_rows_sum_to_one_zero_off_neighborhood(self):
        rng = np.random.default_rng(2)
        for trial in range(50):
            n = int(rng.integers(2, 10))
            adj = random_symmetric_graph(n, rng, density=0.4)
            gat = GatLayer(4, 3, "tanh", rng=np.random.default_rng(trial))
            x = rng.normal(size=(n, 4))
            gat.forward(x, adj)
            alpha = gat.last_attention
            assert np.max(np.abs(alpha.sum(axis=1) - 1.0)) <= 1e-12
            off = ~((adj > 0) | np.eye(n, dtype=bool))
            assert not alpha[off].any()

    def test_gradients(self):
        rng = np.random.default_rng(3)
        for seed in range(4):
            gat = GatLayer(4, 3, "tanh", rng=np.random.default_rng(seed))
            adj = random_symmetric_graph(5, rng, density=0.5)
            x = rng.normal(size=(5, 4))
            assert layer_grad_check(gat, lambda: gat.forward(x, adj)) < 1e-6


class TestLstm:
    def test_zero_parameters_zero_state(self):
        lstm = Lstm(3, 4, rng=np.random.default_rng(0))
        for p in lstm.params.values():
            p.value[...] = 0.0
        s = np.random.default_rng(1).normal(size=(5, 6, 3))
        assert not lstm.forward(s).any()

    def test_single_step_matches_hand_computation(self):
        lstm = Lstm(1, 1, rng=np.random.default_rng(0))
        wx = np.array([[0.3, -0.2, 0.5, 0.7]])
        lstm.params["Wx"].value[...] = wx
        lstm.params["Wh"].value[...] = 1.0  # unused at t=1 (h0 = 0)
        lstm.params["b"].value[...] = [0.1, 0.0, -0.1, 0.2]
        x = 0.8
        out = lstm.forward(np.array([[[x]]]))

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        gi = sig(0.3 * x + 0.1)
        gf = sig(-0.2 * x + 0.0)
        go = sig(0.5 * x - 0.1)
        gc = np.tanh(0.7 * x + 0.2)
        c1 = gf * 0.0 + gi * gc
        h1 = go * np.tanh(c1)
        assert out[0, 0] == pytest.approx(h1, rel=1e-12)

    def test_gradients(self):
        for seed in range(4):
            rng = np.random.default_rng(seed)
            lstm = Lstm(3, 4, rng=np.random.default_rng(100 + seed))
            s = rng.normal(size=(5, 5, 3))
            assert layer_grad_check(lstm, lambda: lstm.forward(s), h=1e-6) < 1e-4

    def test_nonfinite_state_trips(self):
        lstm = Lstm(2, 2, rng=np.random.default_rng(0))
        with pytest.raises(NumericalError):
            lstm.forward(np.full((1, 2, 2), np.nan))


class TestConvParticipants:
    def test_identity_tap(self):
        conv = ConvParticipants(3, 3, "identity", rng=np.random.default_rng(0))
        conv.params["K"].value[...] = 0.0
        conv.params["K"].value[1] = np.eye(3)  # center tap only
        conv.params["b"].value[...] = 0.0
        x = np.random.default_rng(1).normal(size=(5, 3))
        assert np.allclose(conv.forward(x), x)

    def test_constant_rows_constant_output_interior(self):
        conv = ConvParticipants(3, 2, "tanh", rng=np.random.default_rng(2))
        x = np.tile(np.array([1.0, -0.5, 2.0]), (6, 1))
        out = conv.forward(x)
        # interior rows all see the same window; boundaries see padding
        interior = out[1:-1]
        assert np.allclose(interior, interior[0])

    def test_gradients(self):
        for seed in range(4):
            rng = np.random.default_rng(seed)
            conv = ConvParticipants(3, 2, "tanh", rng=np.random.default_rng(200 + seed))
            x = rng.normal(size=(6, 3))
            assert layer_grad_check(conv, lambda: conv.forward(x)) < 1e-6


class TestDropout:
    def test_eval_is_identity(self):
        d = Dropout(0.5)
        x = np.random.default_rng(0).normal(size=(10, 10))
        assert np.array_equal(d.forward(x, train=False), x)

    def test_rate_zero_is_identity(self):
        d = Dropout(0.0)
        x = np.random.default_rng(0).normal(size=(10, 10))
        assert np.array_equal(d.forward(x, train=True,
                                        rng=np.random.default_rng(1)), x)

    def test_survivor_fraction(self):
        d = Dropout(0.5)
        x = np.ones(100_000)
        out = d.forward(x, train=True, rng=np.random.default_rng(2))
        survivors = (out != 0).mean()
        assert abs(survivors - 0.5) < 0.01
        assert np.allclose(out[out != 0], 2.0)  # inverted scaling

    def test_backward_uses_same_mask(self):
        d = Dropout(0.3)
        x = np.ones((50, 50))
        out = d.forward(x, train=True, rng=np.random.default_rng(3))
        grad = d.backward(np.ones_like(x))
        assert np.array_equal(grad != 0, out != 0)

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            Dropout(1.0)


class TestLosses:
    def test_bce_perfect_prediction(self):
        y = np.array([1.0, 0.0, 1.0])
        loss, _ = bce_loss(y.copy(), y)
        assert loss == pytest.approx(0.0, abs=1e-10)

    def test_bce_half_everywhere(self):
        p = np.full(8, 0.5)
        y = np.array([0.0, 1.0] * 4)
        loss, _ = bce_loss(p, y)
        assert loss == pytest.approx(np.log(2.0))

    def test_bce_gradient_matches_fd(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(0.05, 0.95, size=10)
        y = (rng.random(10) > 0.5).astype(float)
        _, dp = bce_loss(p, y)
        h = 1e-7
        for i in range(10):
            orig = p[i]
            p[i] = orig + h
            lp, _ = bce_loss(p, y)
            p[i] = orig - h
            lm, _ = bce_loss(p, y)
            p[i] = orig
            assert dp[i] == pytest.approx((lp - lm) / (2 * h), rel=1e-6, abs=1e-8)

    def test_sigmoid_bce_chain_equals_p_minus_y(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=6)
        y = (rng.random(6) > 0.5).astype(float)
        p = sigmoid(logits)
        _, dp = bce_loss(p, y)
        dlogits = dp * p * (1.0 - p)
        assert np.allclose(dlogits, (p - y) / 6, atol=1e-9)

    def test_l2_prob_loss(self):
        p = np.array([0.6, 0.2])
        y = np.array([1.0, 0.0])
        loss, dp = l2_prob_loss(p, y)
        assert loss == pytest.approx((0.16 + 0.04) / 2)
        assert np.allclose(dp, [2 * -0.4 / 2, 2 * 0.2 / 2])

    def test_masked_bce_ignores_unscored(self):
        p = np.array([0.9, 0.1])
        y = np.array([1.0, 1.0])
        mask = np.array([True, False])
        loss, dp = bce_loss(p, y, mask)
        assert loss == pytest.approx(-np.log(0.9))
        assert dp[1] == 0.0


class TestAdam:
    def test_first_step_magnitude(self):
        p = Parameter(np.zeros(4))
        p.grad[...] = 1.0
        adam_step([p], t=1, lr=0.001)
        assert np.allclose(np.abs(p.value), 0.001 / (1 + 1e-8))

    def test_zero_gradient_no_change(self):
        p = Parameter(np.full(3, 7.0))
        adam_step([p], t=1)
        assert np.array_equal(p.value, np.full(3, 7.0))

    def test_determinism_over_steps(self):
        def run():
            rng = np.random.default_rng(5)
            p = Parameter(rng.normal(size=6))
            opt = AdamOptimizer([p], lr=0.01)
            for _ in range(100):
                p.grad[...] = rng.normal(size=6)
                opt.step()
                p.zero_grad()
            return p.value.copy()

        assert np.array_equal(run(), run())

    def test_step_index_starts_at_one(self):
        with pytest.raises(ValueError):
            adam_step([Parameter(np.zeros(1))], t=0)


class TestEarlyStopper:
    def test_steadily_improving_never_stops(self):
        stopper = EarlyStopper(patience=30, min_delta=0.01)
        losses = [1.0 - 0.02 * i for i in range(200)]
        assert not any(stopper.update(l)[1] for l in losses)

    def test_constant_loss_stops_at_31(self):
        stopper = EarlyStopper(patience=30, min_delta=0.01)
        epoch = 0
        for epoch in range(1, 100):
            _, stop = stopper.update(1.0)
            if stop:
                break
        assert epoch == 31
        assert stopper.best_epoch == 1

    def test_drop_then_flat_stops_at_32(self):
        stopper = EarlyStopper(patience=30, min_delta=0.01)
        losses = [1.0] + [0.5] * 98
        stopped_at = None
        for i, loss in enumerate(losses, start=1):
            _, stop = stopper.update(loss)
            if stop:
                stopped_at = i
                break
        assert stopped_at == 32
        assert stopper.best_epoch == 2

    def test_sub_delta_improvement_counts_as_stale(self):
        stopper = EarlyStopper(patience=2, min_delta=0.01)
        assert stopper.update(1.0) == (True, False)
        assert stopper.update(0.995) == (False, False)
        assert stopper.update(0.991) == (False, True)

    def test_patience_validation(self):
        with pytest.raises(ValueError):
            EarlyStopper(patience=0)


class TestTrainConfig:
    def test_defaults_match_training_protocol(self):
        cfg = TrainConfig()
        assert cfg.lr == 0.001
        assert cfg.patience == 30
        assert cfg.min_delta == 0.01

    @pytest.mark.parametrize("kwargs", [
        {"lr": 0.0}, {"patience": 0}, {"dropout_rate": 1.0}, {"loss": "hinge"},
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestSerialization:
    def test_bit_exact_round_trip(self):
        rng = np.random.default_rng(0)
        params = {
            "lstm.Wx": Parameter(rng.normal(size=(3, 16)) * 1e-7),
            "head.b": Parameter(rng.normal(size=5) * 1e8),
        }
        text = params_to_json(params)
        back = params_from_json(text)
        for name in params:
            assert np.array_equal(back[name].value, params[name].value)
        assert json.dumps(json.loads(text), sort_keys=True) == text
