import numpy as np
import pytest

from ergoswarm.network import (
    CoefficientMessage,
    adjacency_from_edges,
    complete_uniform,
    consensus_round,
    decode_message,
    encode_message,
    message_from_json,
    message_to_json,
    metropolis_weights,
    ring_adjacency,
    rounds_to_tolerance,
    second_singular_value,
    validate,
)


def spread(vectors):
    mean = vectors.mean(axis=0)
    return np.linalg.norm(vectors - mean)


class TestValidate:
    def test_identity_is_disconnected(self):
        problems = validate(np.eye(3))
        assert len(problems) == 1
        assert "not connected" in problems[0]

    def test_complete_uniform_ok(self):
        assert validate(complete_uniform(3)) == []

    def test_column_violation_reported(self):
        P = np.array([[0.5, 0.5, 0.0], [0.3, 0.4, 0.3], [0.2, 0.3, 0.5]])
        problems = validate(P)
        assert any("column" in p for p in problems)
        assert all("row" not in p for p in problems)

    def test_negative_entries_reported(self):
        P = np.array([[1.5, -0.5], [-0.5, 1.5]])
        assert any("negative" in p for p in problems) if (problems := validate(P)) else False

    def test_non_square_rejected(self):
        assert "square" in validate(np.ones((2, 3)))[0]


class TestMetropolis:
    @pytest.mark.parametrize("n", [3, 5, 8])
    def test_doubly_stochastic_on_ring(self, n):
        P = metropolis_weights(ring_adjacency(n))
        assert validate(P) == []

    def test_edges_graph(self):
        P = metropolis_weights(adjacency_from_edges(4, [(0, 1), (1, 2), (2, 3)]))
        assert validate(P) == []

    def test_asymmetric_adjacency_rejected(self):
        adj = np.zeros((3, 3))
        adj[0, 1] = 1
        with pytest.raises(ValueError):
            metropolis_weights(adj)


class TestConsensusRound:
    def test_complete_graph_reaches_mean_in_one_round(self):
        rng = np.random.default_rng(0)
        locals_ = rng.normal(size=(4, 6))
        out = consensus_round(locals_, complete_uniform(4))
        mean = locals_.mean(axis=0)
        assert np.max(np.abs(out - mean)) < 1e-12

    def test_equal_locals_are_fixed_point(self):
        vec = np.linspace(0, 1, 5)
        locals_ = np.tile(vec, (6, 1))
        out = consensus_round(locals_, metropolis_weights(ring_adjacency(6)))
        assert np.allclose(out, locals_, atol=1e-15)

    def test_ring_contraction_bounded_by_second_singular_value(self):
        P = metropolis_weights(ring_adjacency(6))
        sigma2 = second_singular_value(P)
        # independent power-iteration estimate of the contraction factor,
        # restricted to the disagreement subspace
        deviation = np.random.default_rng(1).normal(size=(6, 1))
        for _ in range(200):
            deviation -= deviation.mean(axis=0)
            deviation = P @ deviation
            deviation /= np.linalg.norm(deviation)
        deviation -= deviation.mean(axis=0)
        deviation /= np.linalg.norm(deviation)
        rate = np.linalg.norm(P @ deviation)
        assert rate == pytest.approx(sigma2, abs=1e-9)

        rng = np.random.default_rng(2)
        locals_ = rng.normal(size=(6, 4))
        s0 = spread(locals_)
        for r in range(1, 25):
            locals_ = consensus_round(locals_, P)
            assert spread(locals_) <= sigma2**r * s0 + 1e-12

    def test_mean_conserved_each_round(self):
        rng = np.random.default_rng(3)
        P = metropolis_weights(ring_adjacency(5))
        locals_ = rng.normal(size=(5, 7))
        mean0 = locals_.mean(axis=0)
        for _ in range(30):
            locals_ = consensus_round(locals_, P)
            assert np.max(np.abs(locals_.mean(axis=0) - mean0)) < 1e-12

    def test_pairwise_disagreement_non_increasing(self):
        rng = np.random.default_rng(4)
        P = metropolis_weights(ring_adjacency(6))
        locals_ = rng.normal(size=(6, 3))

        def worst(vecs):
            return max(
                np.max(np.abs(vecs[a] - vecs[b]))
                for a in range(len(vecs))
                for b in range(a + 1, len(vecs))
            )

        previous = worst(locals_)
        for _ in range(40):
            locals_ = consensus_round(locals_, P)
            current = worst(locals_)
            assert current <= previous + 1e-12
            previous = current

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            consensus_round(np.ones((2, 3)), complete_uniform(3))


class TestRoundsToTolerance:
    def test_complete_graph_needs_one_round(self):
        assert rounds_to_tolerance(complete_uniform(4), 1.0, 1e-12) == 1

    def test_zero_rounds_when_within_tolerance(self):
        P = metropolis_weights(ring_adjacency(6))
        assert rounds_to_tolerance(P, 0.5, 0.5) == 0

    def test_prediction_never_underestimates_on_random_vectors(self):
        # sigma2^r bounds the contraction, so the predicted round count is
        # always sufficient; generic vectors may converge slightly sooner
        P = metropolis_weights(ring_adjacency(6))
        rng = np.random.default_rng(5)
        for _ in range(5):
            locals_ = rng.normal(size=(6, 4))
            s0 = spread(locals_)
            predicted = rounds_to_tolerance(P, s0, 1e-9)
            vecs = locals_.copy()
            empirical = 0
            while spread(vecs) > 1e-9:
                vecs = consensus_round(vecs, P)
                empirical += 1
            assert empirical <= predicted
            assert predicted - empirical <= 2

    def test_ring_prediction_tight_on_dominant_subspace(self):
        # random vectors drawn in the slowest disagreement subspace contract
        # by exactly sigma2 per round, so the prediction is tight within 1
        P = metropolis_weights(ring_adjacency(6))
        sigma2 = second_singular_value(P)
        eigvals, eigvecs = np.linalg.eigh(P)
        slow = eigvecs[:, np.isclose(np.abs(eigvals), sigma2)]
        rng = np.random.default_rng(6)
        for _ in range(5):
            locals_ = slow @ rng.normal(size=(slow.shape[1], 4))
            s0 = spread(locals_)
            predicted = rounds_to_tolerance(P, s0, 1e-9)
            vecs = locals_.copy()
            empirical = 0
            while spread(vecs) > 1e-9:
                vecs = consensus_round(vecs, P)
                empirical += 1
            assert abs(predicted - empirical) <= 1

    def test_disconnected_reported(self):
        with pytest.raises(ValueError):
            rounds_to_tolerance(np.eye(3), 1.0, 1e-9)

    def test_convergence_to_true_mean(self):
        P = metropolis_weights(ring_adjacency(6))
        rng = np.random.default_rng(6)
        locals_ = rng.normal(size=(6, 5))
        mean = locals_.mean(axis=0)
        for _ in range(rounds_to_tolerance(P, spread(locals_), 1e-9)):
            locals_ = consensus_round(locals_, P)
        assert np.max(np.abs(locals_ - mean)) < 1e-9


class Test0Codec:
    def test_binary_round_trip(self):
        msg = CoefficientMessage(
            sender=3, round_counter=17, ck=np.linspace(-1, 1, 36),
            phik=np.arange(4.0),
        )
        out = decode_message(encode_message(msg))
        assert out.sender == 3 and out.round_counter == 17
        assert np.array_equal(out.ck, msg.ck)
        assert np.array_equal(out.phik, msg.phik)

    def test_binary_without_target_payload(self):
        msg = CoefficientMessage(sender=0, round_counter=1, ck=np.ones(5))
        out = decode_message(encode_message(msg))
        assert out.phik is None
        # fixed layout: 16-byte head + 5 doubles + 4-byte empty-target count
        assert len(encode_message(msg)) == 16 + 40 + 4

    def test_json_round_trip(self):
        msg = CoefficientMessage(sender=2, round_counter=5, ck=np.array([1.5, -2.25]))
        out = message_from_json(message_to_json(msg))
        assert out.sender == 2 and out.round_counter == 5
        assert np.array_equal(out.ck, msg.ck)

    def test_version_checked(self):
        data = bytearray(encode_message(CoefficientMessage(0, 0, np.zeros(1))))
        data[0] = 99
        with pytest.raises(ValueError):
            decode_message(bytes(data))
