import numpy as np
import pytest

from lbw.assignment import MatchMatrix, hungarian, mean_cost_matrix
from lbw.bures import BarycenterConfig, GaussianParams, bw_barycenter, monge_map
from lbw.core import (
    LbwModel,
    SimplexWeights,
    barycenter,
    barycenter_weights,
    learn,
    transport,
    transport_to_barycenter,
)
from lbw.errors import DimensionMismatch, ProvenanceMismatch, UnknownGroup
from lbw.gmm import GaussianComponent, GmmConfig, GmmModel
from lbw.spd import random_spd

TIGHT = BarycenterConfig(tol=1e-12, max_iter=500)


def gmm(means, covs, weights):
    comps = tuple(
        GaussianComponent(float(w), GaussianParams(np.atleast_1d(np.asarray(m, float)), np.atleast_2d(c)))
        for m, c, w in zip(means, covs, weights)
    )
    return GmmModel(comps)


def hand_model(groups, gmms):
    """Assemble an LbwModel from hand-set mixtures, matching as ``learn`` does."""
    ref = gmms[0].means
    matchings = [MatchMatrix.identity(gmms[0].k)] + [hungarian(mean_cost_matrix(ref, g.means)) for g in gmms[1:]]
    return LbwModel(tuple(groups), tuple(gmms), tuple(matchings))


@pytest.fixture
def scalar_pair():
    a = gmm([[0.0], [10.0]], [1.0, 4.0], [0.5, 0.5])
    b = gmm([[1.0], [20.0]], [4.0, 1.0], [0.5, 0.5])
    return hand_model(["a", "b"], [a, b])


def random_group(rng, k, p, shift=0.0):
    means = rng.normal(0, 6, (k, p)) + shift
    return gmm(means, [random_spd(p, rng) for _ in range(k)], rng.dirichlet(np.ones(k) * 5))


def clustered(rng, centers, n=200):
    return np.vstack([c + rng.normal(size=(n, len(c))) for c in centers])


class TestLearn:
    def test_k1_single_pair(self, rng):
        m = learn([("a", rng.normal(size=(50, 2))), ("b", rng.normal(size=(50, 2)))], 1)
        assert m.matchings[1].pairs == ((0, 0),)

    def test_shifted_clusters_matched(self, rng):
        centers = np.array([[0.0, 0.0], [0.0, 30.0]])
        a = clustered(rng, centers)
        b = clustered(rng, centers + [100.0, 0.0])
        m = learn([("a", a), ("b", b)], 2)
        for i, j in m.matchings[1].pairs:
            np.testing.assert_allclose(m.gmms[1].means[j] - m.gmms[0].means[i], [100.0, 0.0], atol=0.5)

    def test_identical_datasets(self, rng):
        x = clustered(rng, [[0.0, 0.0], [8.0, 2.0], [-5.0, 6.0]])
        m = learn([("a", x), ("b", x.copy())], 3)
        assert m.matchings[1].total_cost < 1e-2

    def test_mapping_input_and_reference(self, rng):
        data = {"u": rng.normal(size=(40, 2)), "v": rng.normal(size=(40, 2)) + 3, "w": rng.normal(size=(40, 2)) - 3}
        m = learn(data, 1, reference="v")
        assert m.groups == ("v", "u", "w")
        assert m.matchings[0].pairs == ((0, 0),)

    def test_threads_do_not_change_result(self, rng):
        data = [(str(g), clustered(rng, [[0, 0], [6, 6]], 80) + g) for g in range(3)]
        a, b = learn(data, 2), learn(data, 2, n_jobs=3)
        assert a.digest == b.digest

    def test_errors(self, rng):
        with pytest.raises(ValueError):
            learn([("a", rng.normal(size=(10, 2)))], 1)
        with pytest.raises(DimensionMismatch):
            learn([("a", rng.normal(size=(10, 2))), ("b", rng.normal(size=(10, 3)))], 1)
        with pytest.raises(UnknownGroup):
            learn([("a", rng.normal(size=(10, 2))), ("b", rng.normal(size=(10, 2)))], 1, reference="c")

    def test_model_validation(self, scalar_pair):
        bad = MatchMatrix(2, ((0, 1), (1, 0)), 0.0)
        with pytest.raises(ValueError):
            LbwModel(("a", "b"), scalar_pair.gmms, (bad, bad))
        with pytest.raises(ValueError):
            LbwModel(("a", "a"), scalar_pair.gmms, scalar_pair.matchings)


class TestTransport:
    def test_k1_is_gaussian_map(self, rng):
        a, b = random_group(rng, 1, 3), random_group(rng, 1, 3)
        m = hand_model(["a", "b"], [a, b])
        x = rng.normal(size=(20, 3))
        expected = monge_map(a.components[0].params, b.components[0].params)(x)
        np.testing.assert_allclose(transport(m, "a", "b", x), expected, rtol=0, atol=1e-12)

    def test_component_mean_to_partner_mean(self, rng):
        a, b = random_group(rng, 3, 2), random_group(rng, 3, 2, shift=1.0)
        m = hand_model(["a", "b"], [a, b])
        for i in range(3):
            x = a.means[i]
            i_star = a.hard_assign(x)
            j = m.partner(0, 1, i_star)
            if i_star == i:
                np.testing.assert_allclose(transport(m, "a", "b", x), b.means[j], atol=1e-10)

    def test_hand_set_scalar(self, scalar_pair):
        # x=0.5 sits in N(0,1), matched to N(1,4): 1 + (2/1)(0.5 - 0)
        assert transport(scalar_pair, "a", "b", [0.5])[0] == pytest.approx(2.0, rel=1e-14)

    def test_self_transport_is_identity(self, rng):
        m = hand_model(["a", "b"], [random_group(rng, 3, 2), random_group(rng, 3, 2)])
        x = rng.normal(0, 5, (30, 2))
        np.testing.assert_allclose(transport(m, "b", "b", x), x, atol=1e-9)

    def test_only_assigned_pair_matters(self, rng):
        a, b = random_group(rng, 3, 2), random_group(rng, 3, 2)
        m = hand_model(["a", "b"], [a, b])
        x = a.means[0] + 0.1
        i = a.hard_assign(x)
        j = m.partner(0, 1, i)
        comps = list(b.components)
        for q in range(3):
            if q != j:
                c = comps[q]
                comps[q] = GaussianComponent(c.weight, GaussianParams(c.mean + 5.0, 3.0 * c.cov.entries))
        m2 = LbwModel(m.groups, (a, GmmModel(tuple(comps))), m.matchings)
        np.testing.assert_array_equal(transport(m, "a", "b", x), transport(m2, "a", "b", x))

    def test_permutation_equivariance(self, rng):
        a, b = random_group(rng, 4, 2), random_group(rng, 4, 2)
        m = hand_model(["a", "b"], [a, b])
        perm = np.array([2, 0, 3, 1])
        inv = np.argsort(perm)
        b2 = GmmModel(tuple(b.components[q] for q in perm))
        match = MatchMatrix(4, tuple((i, int(inv[j])) for i, j in m.matchings[1].pairs), m.matchings[1].total_cost)
        m2 = LbwModel(m.groups, (a, b2), (m.matchings[0], match))
        x = rng.normal(0, 6, (200, 2))
        np.testing.assert_array_equal(transport(m, "a", "b", x), transport(m2, "a", "b", x))
        np.testing.assert_array_equal(transport(m, "b", "a", x), transport(m2, "b", "a", x))

    def test_round_trip(self, rng):
        a, b = random_group(rng, 3, 2), random_group(rng, 3, 2)
        m = hand_model(["a", "b"], [a, b])
        x = np.vstack([rng.multivariate_normal(c.mean, c.cov.entries, 50) for c in a.components])
        y = transport(m, "a", "b", x)
        back = transport(m, "b", "a", y)
        same_pair = np.array([m.partner(0, 1, i) for i in a.hard_assign(x)]) == b.hard_assign(y)
        assert same_pair.any()
        np.testing.assert_allclose(back[same_pair], x[same_pair], atol=1e-6)

    def test_composition_through_reference(self, rng):
        gs = [random_group(rng, 3, 2, shift=s) for s in (0.0, 1.0, -1.0)]
        m = hand_model(["r", "b", "c"], gs)
        for i in range(3):
            ref = m.matchings[1].backward[i]
            assert m.partner(1, 2, i) == m.matchings[2].forward[ref]
        x = gs[1].means[0]
        i = gs[1].hard_assign(x)
        expected = monge_map(gs[1].components[i].params, gs[2].components[m.partner(1, 2, i)].params)(x)
        np.testing.assert_allclose(transport(m, "b", "c", x), expected, atol=1e-12)

    def test_flags(self, scalar_pair):
        # hand-set mixtures carry no training density floor
        assert scalar_pair.gmms[0].density_floor is None
        _, flags = transport(scalar_pair, "a", "b", np.array([[0.0], [1e6]]), return_flags=True)
        assert not flags.any()

    def test_flags_fitted(self, rng):
        m = learn([("a", rng.normal(size=(300, 2))), ("b", rng.normal(size=(300, 2)) + 4)], 1)
        _, flags = transport(m, "a", "b", np.array([[0.0, 0.0], [50.0, 50.0]]), return_flags=True)
        np.testing.assert_array_equal(flags, [False, True])

    def test_errors(self, scalar_pair):
        with pytest.raises(UnknownGroup):
            transport(scalar_pair, "a", "zz", [0.0])
        with pytest.raises(DimensionMismatch):
            transport(scalar_pair, "a", "b", [0.0, 1.0])


class TestBarycenter:
    def test_one_hot_recovers_group(self, rng):
        a, b = random_group(rng, 3, 2), random_group(rng, 3, 2)
        m = hand_model(["a", "b"], [a, b])
        bary = barycenter(m, [1.0, 0.0], TIGHT)
        np.testing.assert_array_equal(bary.means, a.means)
        np.testing.assert_allclose(bary.covariances, a.covariances, rtol=1e-9, atol=1e-10)
        np.testing.assert_allclose(bary.mixture_weights, a.weights, rtol=1e-14)

    def test_scalar(self):
        m = hand_model(["a", "b"], [gmm([[0.0]], [1.0], [1.0]), gmm([[2.0]], [4.0], [1.0])])
        bary = barycenter(m, [0.5, 0.5])
        assert bary.means[0, 0] == pytest.approx(1.0)
        assert bary.covariances[0, 0, 0] == pytest.approx(2.25, rel=1e-12)

    def test_three_diagonal(self):
        gs = [gmm([[g, 0.0]], [np.diag(d)], [1.0]) for g, d in enumerate([[1.0, 4.0], [4.0, 1.0], [9.0, 9.0]])]
        lam = np.array([0.2, 0.3, 0.5])
        bary = barycenter(hand_model(["a", "b", "c"], gs), lam, TIGHT)
        sig = np.sqrt(np.array([[1.0, 4.0], [4.0, 1.0], [9.0, 9.0]]))
        np.testing.assert_allclose(np.diag(bary.covariances[0]), (lam @ sig) ** 2, rtol=1e-10)
        np.testing.assert_allclose(bary.means[0], [lam @ [0.0, 1.0, 2.0], 0.0], atol=1e-15)

    def test_matches_direct_solve(self, rng):
        gs = [random_group(rng, 2, 3) for _ in range(3)]
        m = hand_model(["a", "b", "c"], gs)
        lam = [0.5, 0.25, 0.25]
        bary = barycenter(m, lam)
        for h, t in enumerate(m.tuples()):
            direct, _ = bw_barycenter([gs[g].components[c].params for g, c in enumerate(t)], lam)
            np.testing.assert_array_equal(bary.covariances[h], direct.cov.entries)

    def test_mean_identity(self, rng):
        gs = [random_group(rng, 3, 2) for _ in range(3)]
        m = hand_model(["a", "b", "c"], gs)
        lam = np.array([0.1, 0.6, 0.3])
        bary = barycenter(m, lam)
        for h, prov in enumerate(bary.provenance):
            expected = sum(lam[g] * gs[g].means[c] for g, (_, c) in enumerate(prov))
            np.testing.assert_allclose(bary.means[h], expected, rtol=0, atol=1e-12)

    def test_weights_rule(self, rng):
        a, b = random_group(rng, 3, 1), random_group(rng, 3, 1)
        m = hand_model(["a", "b"], [a, b])
        np.testing.assert_allclose(barycenter_weights(m, [1.0, 0.0]), a.weights)
        lam = [0.3, 0.7]
        by_hand = np.array([0.3 * a.weights[i] + 0.7 * b.weights[j] for i, j in m.matchings[1].pairs])
        np.testing.assert_allclose(barycenter_weights(m, lam), by_hand / by_hand.sum(), rtol=1e-14)

    def test_symmetric_groups_uniform_weights(self, scalar_pair):
        np.testing.assert_allclose(barycenter_weights(scalar_pair, [0.5, 0.5]), [0.5, 0.5])

    def test_bad_weights(self, scalar_pair):
        with pytest.raises(ValueError):
            barycenter(scalar_pair, [0.6, 0.6])
        with pytest.raises(DimensionMismatch):
            barycenter(scalar_pair, [1.0])

    def test_simplex_weights(self):
        assert SimplexWeights([0.0, 1.0, 0.0]).one_hot_index() == 1
        assert SimplexWeights([0.5, 0.5]).one_hot_index() is None
        with pytest.raises(ValueError):
            SimplexWeights([-0.5, 1.5])


class TestToBarycenter:
    def test_own_group_one_hot(self, rng):
        a, b = random_group(rng, 3, 2), random_group(rng, 3, 2)
        m = hand_model(["a", "b"], [a, b])
        bary = barycenter(m, [1.0, 0.0], TIGHT)
        x = rng.normal(0, 6, (100, 2))
        assert np.abs(transport_to_barycenter(m, bary, "a", x) - x).mean() < 1e-6

    def test_scalar_mean(self):
        m = hand_model(["a", "b"], [gmm([[0.0]], [1.0], [1.0]), gmm([[2.0]], [4.0], [1.0])])
        bary = barycenter(m, [0.5, 0.5])
        assert transport_to_barycenter(m, bary, "a", [0.0])[0] == pytest.approx(1.0)

    def test_pushforward_mean(self):
        rng = np.random.default_rng(11)
        a = gmm([[0.0, 0.0], [8.0, 3.0]], [np.eye(2), np.diag([2.0, 0.5])], [0.4, 0.6])
        b = gmm([[1.0, 5.0], [9.0, -2.0]], [np.diag([0.5, 1.0]), np.eye(2)], [0.4, 0.6])
        m = hand_model(["a", "b"], [a, b])
        bary = barycenter(m, [0.5, 0.5])
        lab = rng.choice(2, 10_000, p=a.weights)
        x = np.vstack([rng.multivariate_normal(a.means[j], a.covariances[j], np.sum(lab == j)) for j in range(2)])
        moved = transport_to_barycenter(m, bary, "a", x)
        target = bary.mixture_weights @ bary.means
        assert np.all(np.abs(moved.mean(0) - target) <= 0.03 * np.abs(target))

    def test_provenance_checked(self, rng):
        m1 = hand_model(["a", "b"], [random_group(rng, 2, 2), random_group(rng, 2, 2)])
        m2 = hand_model(["a", "b"], [random_group(rng, 2, 2), random_group(rng, 2, 2)])
        bary = barycenter(m1, [0.5, 0.5])
        with pytest.raises(ProvenanceMismatch):
            transport_to_barycenter(m2, bary, "a", [0.0, 0.0])
