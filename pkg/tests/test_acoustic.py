import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from semdiar import acoustic
from semdiar.acoustic import AffinityMatrix, ClusteringResult
from semdiar.core import ConfigurationError, ValidationError
from semdiar.ingest import AcousticTurnProbs

from conftest import make_session


def same_partition(a, b):
    a, b = list(a), list(b)
    return all((a[i] == a[j]) == (b[i] == b[j]) for i in range(len(a)) for j in range(len(a)))


def laplacian_eigenvalues_by_loops(a):
    """Normalized Laplacian spelled out entry by entry, then a dense solver."""
    n = len(a)
    deg = [sum(a[i]) for i in range(n)]
    lap = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            lap[i, j] = (i == j) - a[i][j] / math.sqrt(deg[i] * deg[j])
    return sorted(np.linalg.eigvals(lap).real)


class TestAffinity:
    def test_identical(self):
        a = acoustic.build_affinity(make_session([(1, 2, 3)] * 3), 0.0)
        assert np.array_equal(a.values, np.ones((3, 3)))

    def test_orthogonal(self):
        a = acoustic.build_affinity(make_session([(1, 0), (0, 1)]), 0.0)
        assert a.values[0, 1] == pytest.approx(0.5, abs=1e-15)

    def test_diagonal(self):
        a = acoustic.build_affinity(make_session([(1, 0), (1, 1)]), 0.0)
        assert a.values[0, 1] == pytest.approx((1 + math.sqrt(2) / 2) / 2, abs=1e-12)
        assert a.values[0, 1] == pytest.approx(0.85355, abs=1e-5)

    def test_short_segments_excluded(self):
        session = make_session([(1, 0), (0, 1), (1, 1)], durations=[1.0, 0.1, 1.0])
        assert acoustic.build_affinity(session, 0.3).segment_ids == (1, 3)
        with pytest.raises(ValidationError, match="nothing to cluster"):
            acoustic.build_affinity(session, 5.0)


class TestRefine:
    def test_all_ones(self):
        for p in (0.1, 0.5, 0.9):
            out = acoustic.refine_affinity(AffinityMatrix(np.ones((4, 4)), (1, 2, 3, 4)), p)
            assert np.array_equal(out.values, np.ones((4, 4)))

    def test_damping_below_median(self):
        m = np.array([[1.0, 0.9, 0.1], [0.9, 1.0, 0.1], [0.1, 0.1, 1.0]])
        out = acoustic.refine_affinity(AffinityMatrix(m, (1, 2, 3)), 0.5).values
        # every row damps its 0.1, so the symmetrized entry is still 0.001
        assert out[0, 2] == pytest.approx(0.001, abs=1e-15)
        assert out[0, 1] == 0.9

    def test_invalid_percentile(self):
        with pytest.raises(ConfigurationError):
            acoustic.refine_affinity(AffinityMatrix(np.ones((2, 2)), (1, 2)), 1.0)

    @settings(max_examples=200, deadline=None)
    @given(
        st.integers(1, 12).flatmap(lambda n: arrays(np.float64, (n, n), elements=st.floats(0, 1))),
        st.floats(0.05, 0.95),
    )
    def test_symmetric_unit_diagonal(self, m, p):
        out = acoustic.refine_affinity(AffinityMatrix(m, tuple(range(1, len(m) + 1))), p).values
        for i in range(len(m)):
            assert out[i, i] == 1.0
            for j in range(len(m)):
                assert out[i, j] == out[j, i]

    def test_random_matrices_symmetric(self, rng):
        for _ in range(1000):
            n = int(rng.integers(1, 13))
            m = rng.random((n, n))
            out = acoustic.refine_affinity(AffinityMatrix(m, tuple(range(n))), float(rng.uniform(0.05, 0.95))).values
            assert np.array_equal(out, out.T)
            assert np.all(np.diag(out) == 1.0)


class TestSpeakerCount:
    def test_three_blocks(self):
        eye = np.eye(3)
        session = make_session([eye[g] for g in (0, 0, 0, 1, 1, 1, 2, 2, 2)])
        aff = acoustic.refine_affinity(acoustic.build_affinity(session, 0.0), 0.8)
        eig = laplacian_eigenvalues_by_loops(aff.values.tolist())
        gaps = np.diff(eig[:9])
        assert int(np.argmax(gaps)) + 1 == 3
        assert acoustic.estimate_speaker_count(aff) == 3

    def test_single(self):
        assert acoustic.estimate_speaker_count(AffinityMatrix(np.ones((1, 1)), (1,))) == 1

    def test_all_ones(self):
        assert acoustic.estimate_speaker_count(AffinityMatrix(np.ones((6, 6)), tuple(range(6)))) == 1

    def test_k_max_reachable(self):
        eye = np.eye(4)
        session = make_session([eye[g] for g in (0, 0, 1, 1, 2, 2, 3, 3)])
        aff = acoustic.refine_affinity(acoustic.build_affinity(session, 0.0), 0.8)
        assert acoustic.estimate_speaker_count(aff, k_max=4) == 4
        assert acoustic.estimate_speaker_count(aff, k_max=2) <= 2


def best_partition_by_enumeration(x, k):
    """Labeling into exactly k groups minimizing summed cosine distance to group means."""
    best, best_cost = None, math.inf
    for lab in itertools.product(range(k), repeat=len(x)):
        if lab[0] != 0 or len(set(lab)) != k:
            continue
        lab = np.array(lab)
        cost = 0.0
        for c in range(k):
            m = x[lab == c].sum(axis=0)
            m = m / np.linalg.norm(m)
            cost += float((1 - x[lab == c] @ m).sum())
        if cost < best_cost - 1e-12:
            best, best_cost = lab, cost
    return best


class TestSpectralCluster:
    def test_three_groups(self, three_groups):
        result = acoustic.spectral_cluster(three_groups)
        assert result.k == 3
        assert result.labels == (1,) * 5 + (2,) * 5 + (3,) * 5

    def test_matches_enumeration_noiseless(self):
        x = np.eye(3)[[0, 1, 2, 0, 1, 2, 0, 1, 2]]
        result = acoustic.spectral_cluster(make_session(x))
        assert same_partition(result.labels, best_partition_by_enumeration(x, 3))

    def test_matches_enumeration_noisy(self, rng):
        # nine points leave too few entries per row at the default percentile
        x = np.eye(3)[[0, 1, 2, 0, 1, 2, 0, 1, 2]] + 0.1 * rng.standard_normal((9, 3))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        result = acoustic.spectral_cluster(make_session(x), p_percentile=0.5)
        assert same_partition(result.labels, best_partition_by_enumeration(x, 3))

    def test_identical(self):
        result = acoustic.spectral_cluster(make_session([(1, 2)] * 6))
        assert result.k == 1 and set(result.labels) == {1}

    def test_k_fixed(self, three_groups):
        result = acoustic.spectral_cluster(three_groups, k_fixed=2)
        assert len(set(result.labels)) == 2
        with pytest.raises(ConfigurationError):
            acoustic.spectral_cluster(three_groups, k_fixed=16)

    def test_outliers_assigned(self):
        eye = np.eye(2)
        session = make_session([eye[0], eye[0], eye[1] + 0.01, eye[1], eye[1]], durations=[1, 1, 0.1, 1, 1])
        result = acoustic.spectral_cluster(session)
        assert result.excluded == (3,)
        assert result.labels == (1, 1, 2, 2, 2)

    def test_permutation_invariant(self, rng):
        protos = np.linalg.qr(rng.standard_normal((8, 3)))[0].T
        truth = rng.integers(0, 3, 30)
        x = protos[truth] + 0.25 * rng.standard_normal((30, 8))
        base = acoustic.spectral_cluster(make_session(x)).labels
        for _ in range(5):
            perm = rng.permutation(30)
            labels = acoustic.spectral_cluster(make_session(x[perm])).labels
            back = np.empty(30, dtype=int)
            back[perm] = labels
            assert same_partition(back, base)

    def test_deterministic(self, rng):
        x = rng.standard_normal((25, 6))
        a = acoustic.spectral_cluster(make_session(x), seed=3)
        b = acoustic.spectral_cluster(make_session(x), seed=3)
        assert a.labels == b.labels
        assert np.array_equal(a.centroids, b.centroids)


class TestKmeans:
    def test_separated(self):
        x = np.array([[0, 0], [0, 0.1], [5, 5], [5, 5.1]], dtype=float)
        lab = acoustic.kmeans(x, 2, seed=1)
        assert lab[0] == lab[1] != lab[2] == lab[3]

    def test_bad_k(self):
        with pytest.raises(ConfigurationError):
            acoustic.kmeans(np.zeros((2, 2)), 3)


class TestOutliersAndDispersion:
    def _result(self, labels, cents, excluded=()):
        return ClusteringResult(tuple(labels), len(cents), np.array(cents, dtype=float), excluded)

    def test_outlier_equal_to_centroid(self):
        session = make_session([(1, 0), (0, 1), (0, 1)])
        out = acoustic.assign_outliers(self._result([1, 0, 2], [(1, 0), (0, 1)], (2,)), session)
        assert out.labels == (1, 2, 2)

    def test_outlier_tie(self):
        session = make_session([(1, 0), (1, 1), (0, 1)])
        out = acoustic.assign_outliers(self._result([1, 0, 2], [(1, 0), (0, 1)], (2,)), session)
        assert out.labels[1] == 1

    def test_no_outliers(self):
        result = self._result([1, 2], [(1, 0), (0, 1)])
        assert acoustic.assign_outliers(result, make_session([(1, 0), (0, 1)])) is result

    def test_one_cluster(self):
        session = make_session([(1, 0), (1, 0.2), (1, -0.2)])
        d_p, _ = acoustic.dispersion_stats(self._result([1, 1, 1], [(1, 0)]), session, (1, 3))
        assert d_p == 0.0

    def test_identical_pair(self):
        session = make_session([(1, 0), (1, 0)])
        _, d_q = acoustic.dispersion_stats(self._result([1, 1], [(1, 0)]), session, (1, 2))
        assert d_q == 0.0

    def test_orthogonal_centroids(self):
        session = make_session([(1, 0), (1, 0), (0, 1)])
        d_p, d_q = acoustic.dispersion_stats(self._result([1, 1, 2], [(1, 0), (0, 1)]), session, (1, 3))
        assert d_p == pytest.approx(1.0, abs=1e-15)
        # pairwise distances 0, 1, 1
        assert d_q == pytest.approx(np.std([0.0, 1.0, 1.0]), abs=1e-12)

    @pytest.mark.parametrize("labels, expected", [([1, 1, 1], 0), ([1, 2, 1], 1), ([2], 0)])
    def test_dialogue_flag(self, labels, expected):
        result = self._result(labels, [(1, 0), (0, 1)])
        assert acoustic.acoustic_dialogue_flag(result, (1, len(labels))) == expected


class TestTurnProb:
    def test_label_change(self):
        session = make_session([(1, 0), (1, 0)])
        result = ClusteringResult((1, 2), 2, np.eye(2))
        assert acoustic.acoustic_turn_prob(result, session, 1) == 1.0

    def test_same_label_identical(self):
        session = make_session([(1, 0), (1, 0)])
        result = ClusteringResult((1, 1), 1, np.eye(2)[:1])
        assert acoustic.acoustic_turn_prob(result, session, 1) == 0.0

    def test_same_label_orthogonal(self):
        session = make_session([(1, 0), (0, 1)])
        result = ClusteringResult((1, 1), 1, np.eye(2)[:1])
        assert acoustic.acoustic_turn_prob(result, session, 1) == pytest.approx(0.5)

    def test_external_max_in_window(self):
        session = make_session([(1, 0), (1, 0)])
        t = session.boundary_time(1)
        ext = AcousticTurnProbs("s", (t - 0.1, t + 0.2, t + 3.0), (0.3, 0.7, 0.9))
        result = ClusteringResult((1, 1), 1, np.eye(2)[:1])
        assert acoustic.acoustic_turn_prob(result, session, 1, window_s=0.5, external=ext) == 0.7

    def test_bad_boundary(self):
        session = make_session([(1, 0), (1, 0)])
        with pytest.raises(ValidationError):
            acoustic.acoustic_turn_prob(ClusteringResult((1, 1), 1, np.eye(2)[:1]), session, 2)
