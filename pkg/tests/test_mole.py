import math

import numpy as np
import pytest
import torch

import copl
from copl.jsonio import dumps
from copl.mole import (
    MoleConfig,
    MoleLayer,
    MoleRewardModel,
    RewardTrainConfig,
    adapted_matrix,
    expert_allocation,
    gate_weights,
    mole_from_dict,
    mole_to_dict,
    reward,
    train_reward,
)
from conftest import manual_dataset
from oracles import central_differences, max_relative_error, naive_adapted_matrix


def make_layer(d_in=4, d_out=4, embed_dim=3, num_experts=2, rank=2, tau=1.0, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return MoleLayer(d_in, d_out, embed_dim, num_experts, rank, 8, tau, gen)


def pin_logits(layer: MoleLayer, logits) -> None:
    """Force the gate to output fixed logits for every embedding."""
    with torch.no_grad():
        layer.gate_w1.zero_()
        layer.gate_b1.zero_()
        layer.gate_w2.zero_()
        layer.gate_b2.copy_(torch.tensor(logits, dtype=torch.float64))


class TestGateWeights:
    def test_tied_logits_go_to_lowest_index(self):
        layer = make_layer(num_experts=2)
        pin_logits(layer, [1.0, 1.0])
        w = gate_weights(layer, np.zeros(3))
        assert w[0] == pytest.approx(0.5, abs=1e-15)
        assert w[1] == 0.0

    def test_saturated_logits(self):
        layer = make_layer(num_experts=2)
        pin_logits(layer, [10.0, -10.0])
        w = gate_weights(layer, np.zeros(3))
        assert w[0] == pytest.approx(1.0 / (1.0 + math.exp(-20.0)), rel=1e-12)
        assert w[1] == 0.0

    def test_single_expert_weight_is_one(self):
        layer = make_layer(num_experts=1)
        for seed in range(5):
            e = np.random.default_rng(seed).normal(size=3)
            w = gate_weights(layer, e)
            assert w.shape == (1,)
            assert w[0] == 1.0

    def test_exactly_one_route(self):
        layer = make_layer(num_experts=6)
        rng = np.random.default_rng(1)
        for _ in range(200):
            w = gate_weights(layer, rng.normal(size=3))
            nz = np.nonzero(w)[0]
            assert len(nz) == 1
            assert 0.0 < w[nz[0]] <= 1.0

    def test_temperature_monotonicity(self):
        layer = make_layer(num_experts=4)
        pin_logits(layer, [2.0, 0.5, -1.0, 0.0])
        previous = None
        for tau in (0.05, 0.25, 1.0, 4.0, 16.0):
            layer.tau = tau
            w = gate_weights(layer, np.zeros(3)).max()
            if previous is not None:
                assert w <= previous + 1e-15
            previous = w


class TestAdaptedMatrix:
    def test_zero_factors_recover_base(self):
        layer = make_layer()
        with torch.no_grad():
            layer.a_shared.zero_()
            layer.b_shared.zero_()
            layer.a_experts.zero_()
            layer.b_experts.zero_()
        out = adapted_matrix(layer, np.zeros(3))
        np.testing.assert_array_equal(out, layer.w0.detach().numpy())

    def test_rank_one_ones_expert(self):
        layer = make_layer(num_experts=1, rank=1)
        with torch.no_grad():
            layer.a_experts.fill_(1.0)
            layer.b_experts.fill_(1.0)
        expected = (
            layer.w0.detach().numpy()
            + layer.a_shared.detach().numpy() @ layer.b_shared.detach().numpy()
            + np.ones((4, 4))
        )
        np.testing.assert_allclose(adapted_matrix(layer, np.zeros(3)), expected, atol=1e-15)

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(9)
        for seed in range(10):
            layer = make_layer(d_in=5, d_out=3, num_experts=4, rank=2, tau=0.7, seed=seed)
            e = rng.normal(size=3)
            with torch.no_grad():
                logits = layer.gate_logits(torch.from_numpy(e).reshape(1, -1))[0].numpy()
            expected = naive_adapted_matrix(
                layer.w0.detach().numpy(),
                layer.a_shared.detach().numpy(),
                layer.b_shared.detach().numpy(),
                layer.a_experts.detach().numpy(),
                layer.b_experts.detach().numpy(),
                logits,
                layer.tau,
            )
            np.testing.assert_allclose(adapted_matrix(layer, e), expected, atol=1e-12)

    def test_delta_rank_bounded(self):
        layer = make_layer(d_in=8, d_out=8, num_experts=3, rank=2, seed=5)
        with torch.no_grad():
            layer.a_shared.normal_(generator=torch.Generator().manual_seed(1))
            layer.a_experts.normal_(generator=torch.Generator().manual_seed(2))
        delta = adapted_matrix(layer, np.ones(3)) - layer.w0.detach().numpy()
        rank = np.linalg.matrix_rank(delta, tol=1e-10)
        assert rank <= 2 * 2


class TestReward:
    def _model(self, seed=0, **overrides):
        cfg = MoleConfig(
            input_dim=3, embed_dim=3, num_layers=2, width=6, num_experts=3,
            rank=2, gate_hidden=8, tau=1.0, **overrides,
        )
        return MoleRewardModel(cfg, rng_seed=seed)

    def test_zero_features_zero_reward(self):
        model = self._model()
        assert reward(model, np.ones(3), np.zeros(3)) == 0.0

    def test_finite_for_bounded_inputs(self):
        model = self._model()
        rng = np.random.default_rng(2)
        for _ in range(20):
            r = reward(model, rng.normal(size=3), rng.normal(size=3))
            assert np.isfinite(r)

    def test_feature_dim_validated(self):
        model = self._model()
        with pytest.raises(ValueError):
            reward(model, np.ones(3), np.zeros(5))

    def test_constant_gate_makes_user_irrelevant(self):
        # gate ignores its input => any two users get identical rewards
        model = self._model()
        for layer in model.layers:
            pin_logits(layer, [0.3, -0.1, 0.8])
        rng = np.random.default_rng(4)
        feats = rng.normal(size=3)
        r1 = reward(model, rng.normal(size=3), feats)
        r2 = reward(model, rng.normal(size=3), feats)
        assert r1 == r2

    def test_user_pathway_isolation(self):
        # with routes and gate weights pinned, the embedding cannot matter
        model = self._model()
        rng = np.random.default_rng(6)
        feats = torch.from_numpy(rng.normal(size=(4, 3)))
        routes = [torch.tensor([1, 0, 2, 1]), torch.tensor([0, 0, 1, 2])]
        weights = [
            torch.from_numpy(rng.uniform(0.1, 1.0, size=4)),
            torch.from_numpy(rng.uniform(0.1, 1.0, size=4)),
        ]
        e1 = torch.from_numpy(rng.normal(size=(4, 3)))
        e2 = torch.from_numpy(rng.normal(size=(4, 3)))
        with torch.no_grad():
            s1, _ = model(feats, e1, routes=routes, gate_weights=weights)
            s2, _ = model(feats, e2, routes=routes, gate_weights=weights)
        assert torch.equal(s1, s2)


class TestTrainReward:
    def _setup(self):
        ds = manual_dataset(
            [((1.0, 0.0), (0.0, 1.0)), ((0.5, -0.2), (-0.3, 0.9)), ((2.0, 1.0), (1.5, 1.8)),
             ((0.1, 0.6), (0.7, 0.2))],
            [(0, 0, "A"), (0, 1, "A"), (1, 0, "B"), (1, 2, "B"), (0, 3, "B"), (1, 3, "A")],
            num_users=2,
        )
        embeds = np.array([[1.0, 0.2, -0.5], [-0.8, 0.1, 0.9]])
        cfg = MoleConfig(input_dim=2, embed_dim=3, num_layers=2, width=6,
                         num_experts=2, rank=2, gate_hidden=8)
        return ds, embeds, cfg

    def test_w0_frozen_bit_identical(self):
        ds, embeds, cfg = self._setup()
        model = MoleRewardModel(cfg, rng_seed=1)
        before = [layer.w0.detach().clone() for layer in model.layers]
        train_reward(model, embeds, ds, RewardTrainConfig(lr=1e-2, epochs=5, batch_size=4, rng_seed=2))
        for b, layer in zip(before, model.layers):
            assert torch.equal(b, layer.w0)

    def test_loss_decreases_and_deterministic(self):
        ds, embeds, cfg = self._setup()
        model1 = MoleRewardModel(cfg, rng_seed=1)
        trace1 = train_reward(model1, embeds, ds, RewardTrainConfig(lr=1e-2, epochs=20, batch_size=4, rng_seed=2))
        model2 = MoleRewardModel(cfg, rng_seed=1)
        trace2 = train_reward(model2, embeds, ds, RewardTrainConfig(lr=1e-2, epochs=20, batch_size=4, rng_seed=2))
        assert trace1 == trace2
        assert trace1[-1] < trace1[0]

    def test_missing_embedding_rejected(self):
        ds, _, cfg = self._setup()
        model = MoleRewardModel(cfg, rng_seed=1)
        with pytest.raises(ValueError, match="embedding"):
            train_reward(model, np.zeros((1, 3)), ds, RewardTrainConfig(epochs=1))

    def test_gradients_match_central_differences_at_fixed_routing(self):
        ds, embeds, cfg = self._setup()
        model = MoleRewardModel(cfg, rng_seed=3)
        from copl.prefdata import annotations_to_pairs
        from copl.mole import response_feature_matrix

        pairs = np.asarray(annotations_to_pairs(ds.annotations, ds.items_by_id()), dtype=np.int64)
        feats = torch.from_numpy(response_feature_matrix(ds))
        emb = torch.from_numpy(embeds[pairs[:, 0]])
        with torch.no_grad():
            _, routes = model(feats[pairs[:, 1]], emb)

        trainable = [p for p in model.parameters() if p.requires_grad]
        flat = torch.nn.utils.parameters_to_vector(trainable).detach().numpy()

        def loss_at(vec):
            with torch.no_grad():
                torch.nn.utils.vector_to_parameters(torch.from_numpy(vec), trainable)
            sa, _ = model(feats[pairs[:, 1]], emb, routes=routes)
            sb, _ = model(feats[pairs[:, 2]], emb, routes=routes)
            return float(torch.nn.functional.softplus(-(sa - sb)).sum().detach())

        torch.nn.utils.vector_to_parameters(torch.from_numpy(flat), trainable)
        model.zero_grad()
        sa, _ = model(feats[pairs[:, 1]], emb, routes=routes)
        sb, _ = model(feats[pairs[:, 2]], emb, routes=routes)
        torch.nn.functional.softplus(-(sa - sb)).sum().backward()
        analytic = torch.cat([p.grad.reshape(-1) for p in trainable]).numpy()
        torch.nn.utils.vector_to_parameters(torch.from_numpy(flat), trainable)

        numeric = central_differences(loss_at, flat.copy())
        assert max_relative_error(analytic, numeric) < 1e-4


class TestAllocation:
    def test_single_expert_maps_everyone_to_zero(self):
        cfg = MoleConfig(input_dim=2, embed_dim=3, num_layers=3, width=4, num_experts=1, rank=1, gate_hidden=4)
        model = MoleRewardModel(cfg, rng_seed=0)
        users = [copl.UserProfile(i, np.array([1.0, 0.0]), group_id=0) for i in range(5)]
        embeds = np.random.default_rng(0).normal(size=(5, 3))
        alloc = expert_allocation(model, embeds, users)
        for layer in alloc.values():
            assert set(layer.values()) == {0}

    def test_identical_embeddings_identical_allocation(self):
        cfg = MoleConfig(input_dim=2, embed_dim=3, num_layers=2, width=4, num_experts=4, rank=1, gate_hidden=4)
        model = MoleRewardModel(cfg, rng_seed=0)
        users = [copl.UserProfile(i, np.array([1.0, 0.0]), group_id=0) for i in range(2)]
        e = np.random.default_rng(1).normal(size=3)
        alloc = expert_allocation(model, np.stack([e, e]), users)
        for layer in alloc.values():
            assert layer[0] == layer[1]


class TestMoleSerialization:
    def test_roundtrip_bitwise(self):
        cfg = MoleConfig(input_dim=3, embed_dim=4, num_layers=2, width=5, num_experts=3, rank=2, gate_hidden=6)
        model = MoleRewardModel(cfg, rng_seed=7)
        blob = mole_to_dict(model)
        model2 = mole_from_dict(blob)
        rng = np.random.default_rng(0)
        feats, emb = rng.normal(size=(6, 3)), rng.normal(size=(6, 4))
        np.testing.assert_array_equal(model.score_batch(feats, emb), model2.score_batch(feats, emb))
        assert dumps(blob) == dumps(mole_to_dict(model2))
