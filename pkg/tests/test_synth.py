import numpy as np
import pytest

from semdiar import ingest, synth
from semdiar.core import ConfigurationError
from semdiar.synth import SynthConfig, generate_session

GOLDEN = SynthConfig(
    n_speakers=4, n_segments=200, embedding_dim=16, acoustic_noise=0.6,
    semantic_turn_accuracy=0.95, seed=7,
)


class TestGenerate:
    def test_deterministic(self):
        a = generate_session(SynthConfig(n_segments=50, seed=3))
        b = generate_session(SynthConfig(n_segments=50, seed=3))
        assert a.session == b.session
        assert a.scores == b.scores
        assert a.reference == b.reference

    def test_seed_matters(self):
        a = generate_session(SynthConfig(n_segments=50, seed=3))
        b = generate_session(SynthConfig(n_segments=50, seed=4))
        assert a.session != b.session

    def test_single_speaker(self):
        data = generate_session(SynthConfig(n_speakers=1, n_segments=100, dialogue_accuracy=1.0, seed=1))
        assert data.reference.speakers == ["S1"]
        assert set(data.true_labels) == {1}
        assert all(w.z_semantic == 0 for w in data.scores.dialogue_windows)

    def test_dimension_check(self):
        with pytest.raises(ConfigurationError):
            SynthConfig(embedding_dim=1)

    def test_turn_accuracy(self):
        correct = total = 0
        for seed in range(60):
            data = generate_session(SynthConfig(n_segments=200, semantic_turn_accuracy=0.8, seed=seed))
            for t, truth in zip(data.scores.turn_probabilities, data.true_turns):
                correct += int(t.p > 0.5) == truth
                total += 1
        assert total >= 10_000
        assert abs(correct / total - 0.8) <= 0.02

    def test_dialogue_windows_cover(self):
        assert synth.dialogue_windows(100) == [(1, 64), (17, 80), (33, 96), (49, 100)]
        assert synth.dialogue_windows(10) == [(1, 10)]

    def test_noiseless_embeddings(self):
        data = generate_session(SynthConfig(acoustic_noise=0.0, n_segments=30, seed=2))
        x = data.session.embedding_matrix
        for a in range(30):
            for b in range(30):
                same = data.true_labels[a] == data.true_labels[b]
                assert (abs(x[a] @ x[b] - 1.0) < 1e-12) == same

    def test_substitutions_never_match(self):
        data = generate_session(SynthConfig(substitution_rate=0.3, n_segments=40, seed=5))
        hyp = [w.token for s in data.session.segments for w in s.words]
        ref = [w.token for w in data.reference.words]
        assert len(hyp) == len(ref)
        for h, r in zip(hyp, ref):
            assert h == r or h not in set(ref)


class TestGolden:
    def test_files_match(self, tmp_path, data_dir):
        data = generate_session(GOLDEN)
        ingest.dump_session(data.session, tmp_path / "session.json")
        ingest.dump_semantic_scores(data.scores, tmp_path / "scores.json")
        ingest.dump_reference(data.reference, tmp_path / "reference.json")
        golden = data_dir / "golden"
        assert (tmp_path / "session.json").read_bytes() == (golden / "synth-7.session.json").read_bytes()
        assert (tmp_path / "scores.json").read_bytes() == (golden / "synth-7.scores.json").read_bytes()
        assert (tmp_path / "reference.json").read_bytes() == (golden / "synth-7.reference.json").read_bytes()

    def test_golden_round_trip(self, data_dir):
        golden = data_dir / "golden"
        session = ingest.load_session(golden / "synth-7.session.json")
        assert session == generate_session(GOLDEN).session
        scores = ingest.load_semantic_scores(golden / "synth-7.scores.json", session)
        assert len(scores.turn_probabilities) == 199


class TestSweep:
    def test_three_modes(self):
        res = synth.sweep([SynthConfig(n_segments=40, seed=1)], with_speaker_wer=False)
        assert [r["mode"] for r in res.rows] == ["acoustic", "semantic", "multimodal"]
        table = res.to_table().splitlines()
        assert len(table) == 4
        assert "e_cp_matched_std" in table[0]

    def test_std_populated(self):
        res = synth.sweep([SynthConfig(n_segments=40, acoustic_noise=0.5)], modes=["acoustic"], seeds=range(10))
        row = res.rows[0]
        assert row["n_runs"] == 10
        assert row["e_cp_matched_std"] > 0.0
        assert np.isfinite(row["e_speaker_wer_std"])

    def test_noiseless_ties_at_zero(self):
        cfg = SynthConfig(n_segments=60, acoustic_noise=0.0, semantic_turn_accuracy=1.0, dialogue_accuracy=1.0, seed=4)
        res = synth.sweep([cfg])
        for row in res.rows:
            assert row["e_cp_matched_mean"] == row["e_cp_all_mean"] == row["e_speaker_wer_mean"] == 0.0

    def test_empty(self):
        with pytest.raises(ConfigurationError):
            synth.sweep([])
