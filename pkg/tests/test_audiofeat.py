import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rtnlab import audiofeat as af
from rtnlab.errors import ConfigError, DataError, DimensionError, ParseError


def scalar_ivector(frames, T, var, mean):
    """Closed-form posterior mean for C = D = R = 1 with unit posteriors."""
    N = len(frames)
    F = sum(x - mean for x in frames)
    L = 1.0 + N * T * T / var
    return (T * F / var) / L


def random_posteriors(rng, T, S):
    P = rng.random((T, S)) + 1e-3
    return P / P.sum(axis=1, keepdims=True)


class TestMonophonePosteriors:
    def test_worked_example(self):
        P = [[0.2, 0.3, 0.5], [0.1, 0.1, 0.8]]
        Q = af.monophone_posteriors(P, af.StateMap([0, 0, 1], 2))
        np.testing.assert_allclose(Q, [[0.5, 0.5], [0.2, 0.8]], atol=1e-15)

    def test_identity_map(self, rng):
        P = random_posteriors(rng, 5, 4)
        assert np.array_equal(af.monophone_posteriors(P, af.StateMap(range(4), 4)), P)

    def test_single_phone(self, rng):
        P = random_posteriors(rng, 6, 5)
        Q = af.monophone_posteriors(P, af.StateMap([0] * 5, 1))
        np.testing.assert_allclose(Q, np.ones((6, 1)), atol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            af.monophone_posteriors(np.ones((2, 3)) / 3, af.StateMap([0, 1], 2))

    def test_invalid_map(self):
        with pytest.raises(DataError):
            af.StateMap([0, 3], 2)

    @given(st.integers(1, 20), st.integers(1, 12), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_mass_conserved(self, T, S, M, seed):
        rng = np.random.default_rng(seed)
        P = random_posteriors(rng, T, S)
        smap = af.StateMap(rng.integers(0, M, size=S), M)
        Q = af.monophone_posteriors(P, smap)
        assert np.max(np.abs(Q.sum(axis=1) - P.sum(axis=1))) < 1e-12


class TestPhonemeStats:
    def test_worked_example(self):
        out = af.phoneme_stats([[0.5, 0.5], [0.2, 0.8]])
        np.testing.assert_allclose(out, [0.35, 0.65, 0.15, 0.15], atol=1e-15)

    def test_constant_rows(self):
        out = af.phoneme_stats([[0.3, 0.7]] * 4)
        assert out[2:].tolist() == [0.0, 0.0]

    def test_single_frame(self):
        assert af.phoneme_stats([[0.1, 0.9]]).tolist() == [0.1, 0.9, 0.0, 0.0]

    def test_no_frames(self):
        with pytest.raises(DataError):
            af.phoneme_stats(np.zeros((0, 3)))

    def test_length_is_twice_phone_count(self, rng):
        smap = af.StateMap(rng.integers(0, 58, size=300), 58)
        assert af.phoneme_features(random_posteriors(rng, 10, 300), smap).shape == (116,)

    @given(st.integers(1, 15), st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_means_form_a_distribution(self, T, M, seed):
        Q = random_posteriors(np.random.default_rng(seed), T, M)
        means = af.phoneme_stats(Q)[:M]
        assert np.all((means >= 0) & (means <= 1)) and abs(means.sum() - 1) < 1e-9


def _ubm(means, variances, weights=None):
    means = np.asarray(means, float)
    w = np.full(len(means), 1.0 / len(means)) if weights is None else np.asarray(weights, float)
    return af.Ubm(w, means, np.asarray(variances, float))


class TestGmm:
    def test_symmetric_midpoint(self):
        ubm = _ubm([[-1.0], [1.0]], [[1.0], [1.0]])
        np.testing.assert_allclose(af.gmm_posteriors(ubm, [[0.0]]), [[0.5, 0.5]], atol=1e-15)

    def test_single_component(self, rng):
        ubm = _ubm([[0.0, 0.0]], [[1.0, 2.0]])
        assert np.array_equal(af.gmm_posteriors(ubm, rng.normal(size=(5, 2))), np.ones((5, 1)))

    def test_rows_normalized_far_from_means(self, rng):
        ubm = _ubm(rng.normal(size=(4, 3)), np.full((4, 3), 1e-4))
        P = af.gmm_posteriors(ubm, 50 * rng.normal(size=(20, 3)))
        assert np.all(np.isfinite(P)) and np.max(np.abs(P.sum(axis=1) - 1)) < 1e-12

    def test_weight_rescaling_invariance(self, rng):
        means, var = rng.normal(size=(3, 2)), rng.uniform(0.5, 2, size=(3, 2))
        w = np.array([0.2, 0.3, 0.5])
        X = rng.normal(size=(10, 2))
        a = af.gmm_posteriors(af.Ubm(w, means, var), X)
        b = af.gmm_posteriors(af.Ubm(w * 7.0, means, var), X)
        np.testing.assert_allclose(a, b, atol=1e-14)
        assert np.array_equal(a.argmax(axis=1), b.argmax(axis=1))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            af.gmm_posteriors(_ubm([[0.0]], [[1.0]]), np.zeros((3, 2)))


class TestUbmFit:
    def test_one_component_closed_form(self, rng):
        X = rng.normal(size=(200, 3)) * [1.0, 2.0, 0.5] + [1.0, -1.0, 3.0]
        fit = af.ubm_fit(X, 1, iters=3)
        np.testing.assert_allclose(fit.ubm.means[0], X.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(fit.ubm.variances[0], X.var(axis=0), atol=1e-12)

    def test_two_separated_clusters(self, rng):
        centers = np.array([[-5.0, 0.0], [5.0, 2.0]])
        X = np.vstack([c + 0.3 * rng.normal(size=(300, 2)) for c in centers])
        fit = af.ubm_fit(X, 2, iters=20, seed=3)
        got = fit.ubm.means[np.argsort(fit.ubm.means[:, 0])]
        assert np.max(np.abs(got - centers)) < 0.1

    @pytest.mark.parametrize("seed", range(5))
    def test_loglik_monotone(self, seed):
        rng = np.random.default_rng(seed)
        X = np.vstack([rng.normal(size=(80, 2)) + rng.normal(scale=3, size=2) for _ in range(3)])
        trace = af.ubm_fit(X, 4, iters=15, seed=seed).loglik
        assert all(b >= a - 1e-8 for a, b in zip(trace, trace[1:]))

    def test_variance_floor(self):
        X = np.array([[0.0], [0.0], [0.0], [1.0]])
        ubm = af.ubm_fit(X, 2, iters=5).ubm
        assert np.all(ubm.variances >= af.VARIANCE_FLOOR)

    def test_too_few_frames(self):
        with pytest.raises(DataError):
            af.ubm_fit(np.zeros((2, 1)), 3)

    def test_weights_on_simplex(self, rng):
        ubm = af.ubm_fit(rng.normal(size=(100, 2)), 3, iters=5).ubm
        assert np.all(ubm.weights > 0) and abs(ubm.weights.sum() - 1) < 1e-12


class TestBwStats:
    def test_hand_example(self):
        st_ = af.bw_stats(np.ones((2, 1)), [[2.0], [4.0]], _ubm([[0.0]], [[1.0]]))
        assert st_.N.tolist() == [2.0] and st_.F.tolist() == [[6.0]]

    def test_single_frame(self):
        P = np.array([[0.25, 0.75]])
        st_ = af.bw_stats(P, [[1.0]], _ubm([[0.0], [1.0]], [[1.0], [1.0]]))
        assert st_.N.tolist() == [0.25, 0.75]

    def test_frames_at_means_center_to_zero(self, rng):
        means = rng.normal(size=(3, 2))
        ubm = _ubm(means, np.ones((3, 2)))
        st_ = af.bw_stats(np.eye(3), means, ubm)
        np.testing.assert_allclose(st_.F, 0.0, atol=1e-15)

    def test_occupancy_bounded_by_frames(self, rng):
        ubm = _ubm(rng.normal(size=(4, 2)), np.ones((4, 2)))
        X = rng.normal(size=(30, 2))
        st_ = af.bw_stats(af.gmm_posteriors(ubm, X), X, ubm)
        assert np.all(st_.N >= 0) and st_.N.sum() <= 30 + 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            af.bw_stats(np.ones((3, 2)), np.zeros((3, 1)), _ubm([[0.0]], [[1.0]]))


class TestIvector:
    def test_worked_scalar_case(self):
        ubm = _ubm([[0.0]], [[1.0]])
        st_ = af.bw_stats(np.ones((2, 1)), [[2.0], [4.0]], ubm)
        L, _ = af._posterior_precision(st_, af.TMatrixModel(np.array([[1.0]])), ubm)
        assert L.tolist() == [[3.0]]
        assert af.extract_ivector(st_, af.TMatrixModel(np.array([[1.0]])), ubm).tolist() == [2.0]

    def test_zero_T(self, rng):
        ubm = _ubm(rng.normal(size=(2, 3)), np.ones((2, 3)))
        st_ = af.BwStats(np.array([3.0, 1.0]), rng.normal(size=(2, 3)))
        assert not af.extract_ivector(st_, af.TMatrixModel(np.zeros((6, 4))), ubm).any()

    def test_no_evidence(self, rng):
        ubm = _ubm(rng.normal(size=(2, 3)), np.ones((2, 3)))
        st_ = af.BwStats(np.zeros(2), np.zeros((2, 3)))
        assert not af.extract_ivector(st_, af.TMatrixModel(rng.normal(size=(6, 2))), ubm).any()

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_scalar_closed_form(self, seed):
        rng = np.random.default_rng(seed)
        frames = rng.normal(size=rng.integers(1, 20)) * 3
        T, var, mean = rng.normal(), rng.uniform(0.1, 4.0), rng.normal()
        ubm = _ubm([[mean]], [[var]])
        st_ = af.bw_stats(np.ones((len(frames), 1)), frames.reshape(-1, 1), ubm)
        w = af.extract_ivector(st_, af.TMatrixModel(np.array([[T]])), ubm)
        assert abs(w[0] - scalar_ivector(frames, T, var, mean)) < 1e-10

    def test_rank_must_fit(self, rng):
        ubm = _ubm(rng.normal(size=(2, 2)), np.ones((2, 2)))
        stats = [af.BwStats(np.ones(2), rng.normal(size=(2, 2))) for _ in range(3)]
        with pytest.raises(ConfigError):
            af.tv_train(stats, ubm, rank=5)

    def test_zero_iterations_returns_init(self, rng):
        ubm = _ubm(rng.normal(size=(2, 2)), np.ones((2, 2)))
        stats = [af.BwStats(np.ones(2), rng.normal(size=(2, 2))) for _ in range(3)]
        fit = af.tv_train(stats, ubm, rank=2, iters=0, seed=4)
        assert np.array_equal(fit.model.T, af.tv_init(ubm, 2, seed=4).T)

    def test_recovers_planted_direction(self):
        rng = np.random.default_rng(7)
        true_T = np.array([[2.0], [-1.0]])
        ubm = _ubm([[0.0, 0.0]], [[0.25, 0.25]])
        stats = []
        for _ in range(60):
            w = rng.normal()
            X = (true_T[:, 0] * w) + 0.5 * rng.normal(size=(40, 2))
            stats.append(af.bw_stats(np.ones((40, 1)), X, ubm))
        T = af.tv_train(stats, ubm, rank=1, iters=20).model.T[:, 0]
        cos = abs(T @ true_T[:, 0]) / (np.linalg.norm(T) * np.linalg.norm(true_T))
        assert cos > 0.95

    @pytest.mark.parametrize("seed", range(5))
    def test_objective_monotone(self, seed):
        rng = np.random.default_rng(seed)
        ubm = _ubm(rng.normal(size=(3, 2)), rng.uniform(0.5, 2, size=(3, 2)))
        stats = []
        for _ in range(8):
            X = rng.normal(size=(25, 2)) + rng.normal(size=2)
            stats.append(af.bw_stats(af.gmm_posteriors(ubm, X), X, ubm))
        trace = af.tv_train(stats, ubm, rank=3, iters=10, seed=seed).objective
        assert all(b >= a - 1e-6 for a, b in zip(trace, trace[1:]))


class TestFiles:
    def test_posterior_ingest_renormalizes(self, tmp_path):
        p = tmp_path / "post.jsonl"
        p.write_text(json.dumps({"utt": "a", "posteriors": [[0.2, 0.2], [1, 0]]}) + "\n")
        assert af.dnn_posterior_ingest(p)["a"].tolist() == [[0.5, 0.5], [1.0, 0.0]]

    def test_posterior_ingest_rejects_negative(self, tmp_path):
        p = tmp_path / "post.jsonl"
        p.write_text(json.dumps({"utt": "a", "posteriors": [[0.5, 0.5]]}) + "\n"
                     + json.dumps({"utt": "b", "posteriors": [[-0.1, 1.1]]}) + "\n")
        with pytest.raises(ParseError, match="line 2"):
            af.dnn_posterior_ingest(p)

    def test_malformed_line(self, tmp_path):
        p = tmp_path / "frames.jsonl"
        p.write_text('{"utt": "a", "frames": [[1.0], [2.0, 3.0]]}\n')
        with pytest.raises(ParseError, match="line 1"):
            af.read_frames(p)

    def test_state_map(self, tmp_path):
        p = tmp_path / "map.txt"
        p.write_text("0\n0\n2\n")
        smap = af.read_state_map(p)
        assert smap.n_phones == 3 and smap.state_to_phone.tolist() == [0, 0, 2]

    def test_model_round_trip(self, tmp_path, rng):
        ubm = _ubm(rng.normal(size=(2, 3)), rng.uniform(0.5, 1, size=(2, 3)))
        tv = af.TMatrixModel(rng.normal(size=(6, 2)))
        af.save_json(ubm, tmp_path / "ubm.json")
        af.save_json(tv, tmp_path / "tv.json")
        assert np.array_equal(af.load_ubm(tmp_path / "ubm.json").means, ubm.means)
        assert np.array_equal(af.load_tv(tmp_path / "tv.json").T, tv.T)
