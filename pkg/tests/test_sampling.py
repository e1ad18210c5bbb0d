import numpy as np
import pytest
from scipy import stats

from simkgcl.graph import InteractionGraph, KnowledgeGraph
from simkgcl.sampling import (
    SamplingError,
    augment_edges,
    sample_bpr_batch,
    split_counts,
    split_interactions,
)


def random_graph(rng, nu=40, ni=60, n=400):
    return InteractionGraph(nu, ni, rng.integers(0, nu, n), rng.integers(0, ni, n))


class TestSplit:
    def test_ten_edges(self):
        assert split_counts(10, (0.8, 0.1, 0.1)) == (8, 1, 1)

    def test_small_user(self):
        assert split_counts(1, (0.8, 0.1, 0.1)) == (1, 0, 0)
        assert split_counts(2, (0.8, 0.1, 0.1)) == (2, 0, 0)

    def test_three_edges_get_one_each(self):
        assert split_counts(3, (0.8, 0.1, 0.1)) == (1, 1, 1)

    def test_deterministic_and_disjoint(self):
        rng = np.random.default_rng(0)
        nu, ni = 40, 60
        users = np.concatenate([np.arange(nu), rng.integers(0, nu, 400)])
        items = np.concatenate([np.arange(nu) % ni, rng.integers(0, ni, 400)])
        g = InteractionGraph(nu, ni, users, items)
        a = split_interactions(g, seed=5)
        b = split_interactions(g, seed=5)
        for name in ("train", "valid", "test"):
            assert a.split(name) == b.split(name)
        a.validate()
        union = a.train.edge_set() | a.valid.edge_set() | a.test.edge_set()
        assert union == g.edge_set()
        c = split_interactions(g, seed=6)
        assert c.test != a.test

    def test_bad_ratios(self):
        g = InteractionGraph(1, 3, [0, 0, 0], [0, 1, 2])
        with pytest.raises(ValueError):
            split_interactions(g, (0.5, 0.5, 0.5))


class TestBprSampling:
    def test_batch_shape(self):
        g = random_graph(np.random.default_rng(1))
        batch = sample_bpr_batch(g, 2048, np.random.default_rng(0))
        assert len(batch) == 2048 and len(batch.triples) == 2048

    def test_forced_negative(self):
        g = InteractionGraph(1, 5, [0, 0, 0, 0], [0, 1, 2, 4])
        batch = sample_bpr_batch(g, 200, np.random.default_rng(0))
        assert set(batch.neg.tolist()) == {3}

    def test_exhaustive_no_collisions(self):
        rng = np.random.default_rng(2)
        g = random_graph(rng, 10, 12, 80)
        edges = g.edge_set()
        batch = sample_bpr_batch(g, 5000, rng)
        for u, i, j in batch.triples:
            assert (u, i) in edges
            assert (u, j) not in edges

    def test_full_user_is_skipped(self):
        # user 0 has every item, user 1 has one
        g = InteractionGraph(2, 3, [0, 0, 0, 1], [0, 1, 2, 0])
        batch = sample_bpr_batch(g, 100, np.random.default_rng(0))
        assert set(batch.users.tolist()) == {1}

    def test_everyone_full_raises(self):
        g = InteractionGraph(1, 2, [0, 0], [0, 1])
        with pytest.raises(SamplingError):
            sample_bpr_batch(g, 4, np.random.default_rng(0))

    def test_positive_frequencies_follow_degree(self):
        g = random_graph(np.random.default_rng(3), 30, 50, 300)
        n = 1_000_000
        batch = sample_bpr_batch(g, n, np.random.default_rng(4))
        observed = np.bincount(batch.pos, minlength=g.num_items)
        expected = g.item_degree / g.num_edges * n
        mask = expected > 0
        assert observed[~mask].sum() == 0
        _, p = stats.chisquare(observed[mask], expected[mask])
        assert p > 1e-3
        sigma = np.sqrt(expected[mask] * (1 - g.item_degree[mask] / g.num_edges))
        assert np.all(np.abs(observed[mask] - expected[mask]) <= 5 * sigma)


class TestAugment:
    def test_keep_all_is_identity(self):
        g = random_graph(np.random.default_rng(5))
        assert augment_edges(g, 1.0, np.random.default_rng(0)) == g
        kg = KnowledgeGraph(6, 2, [(0, 0, 1), (1, 1, 2), (3, 0, 4)], [0, 1])
        assert augment_edges(kg, 1.0, np.random.default_rng(0)) == kg

    def test_half_binomial_bound(self):
        n = 10_000
        g = InteractionGraph(100, 100, np.arange(n) // 100, np.arange(n) % 100)
        kept = augment_edges(g, 0.5, np.random.default_rng(6)).num_edges
        # the binomial(1e4, 0.5) tail beyond +-300 has probability ~1.5e-9
        assert 4700 <= kept <= 5300
        assert stats.binom.cdf(4699, n, 0.5) + stats.binom.sf(5300, n, 0.5) < 1e-3

    def test_subgraph_and_rebuilt_norm(self):
        rng = np.random.default_rng(7)
        g = random_graph(rng)
        a = augment_edges(g, 0.6, rng)
        assert a.edge_set() <= g.edge_set()
        assert (a.num_users, a.num_items) == (g.num_users, g.num_items)
        for u, i in list(a.edge_set())[:50]:
            assert a.edge_norm(u, i) == 1.0 / np.sqrt(a.user_degree[u] * a.item_degree[i])

    def test_degree_recomputed_after_drop(self):
        g = InteractionGraph(1, 2, [0, 0], [0, 1])
        a = g.subgraph(np.array([True, False]))
        assert a.edge_norm(0, 0) == 1.0 / np.sqrt(1 * 1)

    def test_kg_drop_removes_inverse(self):
        kg = KnowledgeGraph(3, 1, [(0, 0, 1), (1, 0, 2)], [0])
        a = kg.subgraph(np.array([False, True]))
        assert a.entity_adj == [[], [(0, 2)], [(0, 1)]]

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            augment_edges(InteractionGraph(1, 1, [0], [0]), 0.0, np.random.default_rng(0))
