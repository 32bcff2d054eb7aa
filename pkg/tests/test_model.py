import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from hlcr.errors import InvalidParameter, InvalidShape
from hlcr.model import (
    Agent,
    Entity,
    HierDataset,
    Hyperparams,
    LabelAssignment,
    compute_cluster_stats,
    generate_synthetic,
    recount,
    sample_dirichlet,
    split_heldout,
)


def one_event_dataset(x, y):
    return HierDataset(len(x), [Agent("a", [Entity("e", np.array([x], dtype=float), np.array([y], dtype=float))])])


@pytest.mark.parametrize(
    "kwargs",
    [
        {"alpha": 0.0},
        {"beta": -1.0},
        {"delta": float("nan")},
        {"sigma": 0.0},
        {"K": 0},
        {"K": 2.5},
        {"gamma": 1.5},
        {"T": 0},
        {"seed": -1},
    ],
)
def test_hyperparams_validation(kwargs):
    with pytest.raises(InvalidParameter):
        Hyperparams(**kwargs)


class TestGenerator:
    def test_single_cluster_noise_level(self):
        hp = Hyperparams(K=1, sigma=0.3, seed=4)
        data, truth = generate_synthetic(hp, N=500, mean_entities=5, mean_events=5, F=3)
        assert data.n_events >= 10_000
        assert all((zi == 0).all() for zi in truth.z)
        resid = np.concatenate([e.y - e.X @ truth.w[0] for _, _, e in data.entities()])
        assert abs(resid.var() / hp.sigma**2 - 1.0) <= 0.15

    @pytest.mark.parametrize("seed", range(5))
    def test_simplexes(self, seed):
        _, truth = generate_synthetic(Hyperparams(K=6, alpha=0.5, beta=0.3, seed=seed), 40, 3, 3, 2)
        assert abs(truth.psi.sum() - 1.0) <= 1e-12
        np.testing.assert_allclose(truth.theta.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        assert (truth.theta >= 0).all() and (truth.psi >= 0).all()

    def test_deterministic(self):
        hp = Hyperparams(K=3, seed=17)
        (d1, t1), (d2, t2) = (generate_synthetic(hp, 20, 3, 4, 2) for _ in range(2))
        assert [a.id for a in d1.agents] == [a.id for a in d2.agents]
        for (_, _, e1), (_, _, e2) in zip(d1.entities(), d2.entities(), strict=True):
            assert e1.X.tobytes() == e2.X.tobytes() and e1.y.tobytes() == e2.y.tobytes()
        assert t1.w.tobytes() == t2.w.tobytes() and t1.theta.tobytes() == t2.theta.tobytes()

    def test_seed_changes_output(self):
        a, _ = generate_synthetic(Hyperparams(seed=1), 5, 2, 2, 2)
        b, _ = generate_synthetic(Hyperparams(seed=2), 5, 2, 2, 2)
        assert a.agents[0].entities[0].y.tobytes() != b.agents[0].entities[0].y.tobytes()

    def test_counts_positive_and_bias(self):
        data, _ = generate_synthetic(Hyperparams(seed=0), 30, 1, 1, 4, bias=True)
        assert data.feature_dim == 5
        for _, _, e in data.entities():
            assert e.n_events >= 1
            np.testing.assert_array_equal(e.X[:, -1], 1.0)

    @pytest.mark.parametrize("args", [(0, 2, 2, 2), (3, 2, 2, 0), (3, 0.5, 2, 2)])
    def test_invalid_shapes(self, args):
        with pytest.raises(InvalidShape):
            generate_synthetic(Hyperparams(), *args)

    def test_large_beta_labels_follow_psi(self):
        hp = Hyperparams(K=2, alpha=10.0, beta=1e6, seed=8)
        _, truth = generate_synthetic(hp, N=100, mean_entities=100, mean_events=1, F=1)
        z = np.concatenate(truth.z)
        assert z.size >= 9_000
        observed = np.bincount(z, minlength=2)
        assert chisquare(observed, z.size * truth.psi).pvalue > 1e-3

    def test_dirichlet_tiny_concentrations(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            p = sample_dirichlet(rng, [1e-4, 1e-3, 0.0, 2.0])
            assert np.isfinite(p).all() and abs(p.sum() - 1) <= 1e-12 and p[2] == 0.0


class TestClusterStats:
    def test_empty_cluster_is_prior(self):
        hp = Hyperparams(K=2, delta=2.0, sigma=1.0)
        data = one_event_dataset([1.0, 2.0], 3.0)
        stats = compute_cluster_stats(data, LabelAssignment([[0]], 2), hp)
        np.testing.assert_allclose(stats.H[1], 4.0 * np.eye(2))
        np.testing.assert_allclose(stats.D[1], 0.25 * np.eye(2))
        np.testing.assert_array_equal(stats.c[1], 0.0)

    def test_single_event_by_hand(self):
        hp = Hyperparams(K=1, delta=1.0, sigma=1.0)
        stats = compute_cluster_stats(one_event_dataset([1.0], 2.0), LabelAssignment([[0]], 1), hp)
        np.testing.assert_allclose(stats.D[0], [[2.0]])
        np.testing.assert_allclose(stats.c[0], [2.0])
        np.testing.assert_allclose(stats.H[0], [[0.5]])

    def test_permutation_invariance(self):
        hp = Hyperparams(K=3, seed=2)
        data, truth = generate_synthetic(hp, 15, 3, 6, 4)
        labels = LabelAssignment(truth.z, 3)
        rng = np.random.default_rng(0)
        shuffled = HierDataset(data.feature_dim, [
            Agent(a.id, [Entity(e.id, e.X[p], e.y[p]) for e in a.entities for p in [rng.permutation(e.n_events)]])
            for a in data.agents
        ])
        s1, s2 = compute_cluster_stats(data, labels, hp), compute_cluster_stats(shuffled, labels, hp)
        for k in range(3):
            np.testing.assert_allclose(s1.D[k], s2.D[k], rtol=1e-10, atol=1e-10)
            np.testing.assert_allclose(s1.c[k], s2.c[k], rtol=1e-10, atol=1e-10)
            np.testing.assert_allclose(s1.H[k], s2.H[k], rtol=1e-10, atol=1e-10)

    def test_stats_invariants(self):
        hp = Hyperparams(K=3, seed=5)
        data, truth = generate_synthetic(hp, 20, 3, 4, 3)
        stats = compute_cluster_stats(data, LabelAssignment(truth.z, 3), hp)
        for k in range(3):
            assert np.linalg.eigvalsh(stats.D[k] - hp.prior_precision * np.eye(3)).min() >= -1e-9
            assert np.abs(stats.D[k] @ stats.H[k] - np.eye(3)).max() <= 1e-7

    def test_rejects_out_of_range_label(self):
        with pytest.raises(InvalidShape):
            compute_cluster_stats(one_event_dataset([1.0], 1.0), LabelAssignment([[3]], 2), Hyperparams(K=2))


class TestLabels:
    def test_empty(self):
        labels = recount(LabelAssignment([], 3))
        assert labels.global_counts.tolist() == [0, 0, 0]

    def test_single(self):
        labels = recount(LabelAssignment([[2]], 3))
        assert labels.global_counts.tolist() == [0, 0, 1]
        assert labels.agent_counts.tolist() == [[0, 0, 1]]

    @settings(max_examples=50, deadline=None)
    @given(sizes=st.lists(st.integers(1, 6), min_size=1, max_size=6), K=st.integers(1, 5),
           seed=st.integers(0, 2**31))
    def test_incremental_matches_recount(self, sizes, K, seed):
        rng = np.random.default_rng(seed)
        labels = LabelAssignment([rng.integers(0, K, n) for n in sizes], K)
        for _ in range(50):
            i = int(rng.integers(len(sizes)))
            j = int(rng.integers(sizes[i]))
            labels.unassign(i, j)
            labels.assign(i, j, int(rng.integers(K)))
        fresh = recount(labels)
        np.testing.assert_array_equal(fresh.agent_counts, labels.agent_counts)
        np.testing.assert_array_equal(fresh.global_counts, labels.global_counts)
        assert labels.agent_counts.sum(axis=1).tolist() == sizes
        assert labels.global_counts.sum() == sum(sizes)


def test_split_heldout():
    ents = [Entity(f"e{n}", np.ones((n, 1)), np.arange(n, dtype=float)) for n in (1, 4, 5, 11)]
    train, held = split_heldout(HierDataset(1, [Agent("a", ents)]), 0.2)
    assert [e.n_events for e in train.agents[0].entities] == [1, 4, 4, 9]
    assert sorted(held) == [(0, 2), (0, 3)]
    np.testing.assert_array_equal(held[(0, 3)][1], [9.0, 10.0])


def test_dataset_rejects_mixed_dims():
    with pytest.raises(InvalidShape):
        HierDataset(2, [Agent("a", [Entity("e", np.ones((1, 3)), np.ones(1))])])
    with pytest.raises(InvalidShape):
        Entity("e", np.array([[np.inf]]), np.ones(1))
