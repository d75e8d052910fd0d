import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgdenoise import autodiff as ad
from kgdenoise import augment_reverse
from kgdenoise.graph import AdjacencyIndex
from kgdenoise.masker import (
    GumbelConfig,
    gumbel_discretize,
    init_masker,
    mask_graph,
    sample_gumbel,
    score_mask,
)
from kgdenoise.rgcn import RGCNConfig, encode, init_type_features

from conftest import make_kg


@pytest.fixture
def five_triple_kg():
    return make_kg(
        [
            ("a", "r0", "b"),
            ("b", "r0", "c"),
            ("c", "r1", "a"),
            ("a", "r1", "c"),
            ("b", "r1", "a"),
        ],
        {"a": "X", "b": "Y", "c": "X"},
    )


def masker_for(kg, d=8, seed=0):
    config = RGCNConfig(layers=2, hidden_dim=d, num_blocks=2, dropout=0.0)
    return init_masker(config, kg.num_types, kg.num_relations, np.random.default_rng(seed))


class TestScoreMask:
    def test_zero_mlp_weights_give_half_everywhere(self, five_triple_kg):
        kg = five_triple_kg
        params = masker_for(kg)
        for p in (params.mlp_w1, params.mlp_b1, params.mlp_w2, params.mlp_b2):
            p.values[...] = 0.0
        scores = score_mask(kg, AdjacencyIndex(kg), params)
        assert np.allclose(scores.sigmoids.values, 0.5)

    def test_sigmoids_strictly_inside_unit_interval(self, five_triple_kg):
        kg = five_triple_kg
        scores = score_mask(kg, AdjacencyIndex(kg), masker_for(kg))
        assert np.all(scores.sigmoids.values > 0.0)
        assert np.all(scores.sigmoids.values < 1.0)

    def test_matches_straight_line_recomputation(self, five_triple_kg):
        # independent oracle: plain numpy forward pass over the same weights
        kg = five_triple_kg
        params = masker_for(kg)
        adjacency = AdjacencyIndex(kg)
        got = score_mask(kg, adjacency, params).logits.values

        embeddings = encode(adjacency, params.stack).values
        expected = np.zeros(kg.num_triples)
        for i, t in enumerate(kg.triples):
            x = np.concatenate(
                [
                    embeddings[t.head],
                    params.relation_embeddings.values[t.relation],
                    embeddings[t.tail],
                ]
            )
            hidden = np.maximum(x @ params.mlp_w1.values + params.mlp_b1.values, 0.0)
            expected[i] = float((hidden @ params.mlp_w2.values + params.mlp_b2.values)[0])
        assert np.allclose(got, expected)

        # and the encoder itself against the layer rule, one entity at a time
        feats = init_type_features(kg)
        layer0 = params.stack.layers[0]
        h1 = np.zeros((kg.num_entities, 8))
        for e in range(kg.num_entities):
            acc = feats[e] @ layer0.self_weight.values
            for r in range(kg.num_relations):
                neigh = adjacency.neighbors(e, r)
                for j in neigh:
                    w = layer0.relation_weights[r][0].values
                    acc = acc + (feats[j] @ w) / len(neigh)
            h1[e] = np.maximum(acc, 0.0)
        layer1 = params.stack.layers[1]
        h2 = np.zeros_like(h1)
        for e in range(kg.num_entities):
            acc = h1[e] @ layer1.self_weight.values
            for r in range(kg.num_relations):
                neigh = adjacency.neighbors(e, r)
                for j in neigh:
                    blocks = [b.values for b in layer1.relation_weights[r]]
                    w = np.zeros((8, 8))
                    w[:4, :4] = blocks[0]
                    w[4:, 4:] = blocks[1]
                    acc = acc + (h1[j] @ w) / len(neigh)
            h2[e] = acc
        assert np.allclose(embeddings, h2)


class TestSampleGumbel:
    def test_mean_matches_euler_mascheroni(self):
        draws = sample_gumbel((100_000,), seed=123)
        assert abs(draws.mean() - 0.5772) < 0.02

    def test_deterministic_given_seed(self):
        assert np.array_equal(sample_gumbel((50,), seed=9), sample_gumbel((50,), seed=9))

    def test_all_finite(self):
        assert np.all(np.isfinite(sample_gumbel((100_000,), seed=4)))


class TestGumbelDiscretize:
    def test_hand_value_at_zero_logit(self):
        config = GumbelConfig(temperature=1.0, deterministic=True)
        q = ad.constant(np.array([0.0]))
        out = gumbel_discretize(q, config)
        assert out.values[0] == pytest.approx(0.40616, abs=1e-5)

    def test_low_temperature_saturates(self):
        config = GumbelConfig(temperature=0.1, deterministic=True)
        out = gumbel_discretize(ad.constant(np.array([-4.0, 4.0])), config).values
        assert out[0] < 1e-3
        assert out[1] > 1 - 1e-3

    def test_clamp_guards_negative_log_argument(self):
        config = GumbelConfig(temperature=1.0)
        q = ad.constant(np.array([-3.0]))
        noise = (np.array([-5.0]), np.array([0.5]))  # sigmoid(q) + p < 0
        out = gumbel_discretize(q, config, noise=noise)
        assert np.isfinite(out.values[0])
        assert 0.0 < out.values[0] < 1.0

    def test_monotone_in_logit_with_frozen_noise(self):
        config = GumbelConfig(temperature=1.0, deterministic=True)
        q = ad.constant(np.linspace(-8, 8, 201))
        out = gumbel_discretize(q, config).values
        assert np.all(np.diff(out) > 0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from(["ratio", "standard"]))
    def test_output_strictly_in_unit_interval(self, seed, variant):
        rng = np.random.default_rng(seed)
        config = GumbelConfig(temperature=float(rng.uniform(0.1, 5.0)), variant=variant)
        q = ad.constant(rng.uniform(-10, 10, size=64))
        noise = (sample_gumbel((64,), rng), sample_gumbel((64,), rng))
        out = gumbel_discretize(q, config, noise=noise).values
        assert np.all(out > 0.0)
        assert np.all(out < 1.0)

    def test_entropy_shrinks_as_temperature_drops(self):
        rng = np.random.default_rng(5)
        logits = ad.constant(rng.uniform(-3, 3, size=100))
        noise = (sample_gumbel((100, 100), rng), sample_gumbel((100, 100), rng))

        def mean_entropy(tau):
            config = GumbelConfig(temperature=tau)
            vals = []
            for p, pp in zip(*noise):
                b = gumbel_discretize(logits, config, noise=(p, pp)).values
                b = np.clip(b, 1e-15, 1 - 1e-15)
                vals.append(-(b * np.log(b) + (1 - b) * np.log1p(-b)).mean())
            return float(np.mean(vals))

        entropies = [mean_entropy(tau) for tau in (5.0, 1.0, 0.5, 0.1)]
        assert entropies == sorted(entropies, reverse=True)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        q = ad.Parameter(rng.uniform(-2, 2, 6), "q")
        config = GumbelConfig(temperature=0.7, deterministic=True)

        def fn():
            return ad.reduce_sum(ad.mul(gumbel_discretize(q, config), ad.constant(np.linspace(1, 2, 6))))

        report = ad.grad_check(fn, [q])
        assert report["q"] < 1e-4


class TestMaskGraph:
    def test_deterministic_config_freezes_noise(self, five_triple_kg):
        kg = five_triple_kg
        params = masker_for(kg)
        adjacency = AdjacencyIndex(kg)
        config = GumbelConfig(temperature=1.0, deterministic=True)
        a = mask_graph(kg, adjacency, params, config).discretized.values
        b = mask_graph(kg, adjacency, params, config).discretized.values
        assert np.array_equal(a, b)

    def test_mask_covers_exactly_observed_triples(self, five_triple_kg):
        kg = augment_reverse(five_triple_kg)
        params = masker_for(kg)
        scores = mask_graph(
            kg, AdjacencyIndex(kg), params, GumbelConfig(deterministic=True)
        )
        assert scores.discretized.shape == (kg.num_triples,)

    def test_dump_csv(self, tmp_path, five_triple_kg):
        from kgdenoise.masker import dump_mask_csv

        kg = five_triple_kg
        scores = mask_graph(
            kg, AdjacencyIndex(kg), masker_for(kg), GumbelConfig(deterministic=True)
        )
        path = tmp_path / "mask.csv"
        dump_mask_csv(path, kg, scores)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "head,relation,tail,logit,sigmoid,discretized"
        assert len(lines) == kg.num_triples + 1
