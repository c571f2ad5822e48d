import json
import time

import pytest

from semdiar.cli import main
from semdiar.defaults import DEFAULTS


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def fixture_files(tmp_path, capsys):
    code, out, _ = run(capsys, "--seed", 3, "--output-dir", tmp_path, "synth", "--n-segments", 60)
    assert code == 0
    doc = json.loads(out)
    return {k: doc[k] for k in ("session", "scores", "reference")}


class TestHelp:
    def test_defaults_listed(self, capsys):
        with pytest.raises(SystemExit):
            main(["diarize", "--help"])
        text = capsys.readouterr().out
        assert f"(default: {DEFAULTS['tau_merge']})" in text
        assert f"(default: {DEFAULTS['p_percentile']})" in text


class TestCluster:
    def test_writes_hypothesis(self, tmp_path, capsys, fixture_files):
        code, out, _ = run(capsys, "--output-dir", tmp_path / "out", "cluster", fixture_files["session"])
        assert code == 0
        assert (tmp_path / "out" / "synth-3.json").exists()
        assert (tmp_path / "out" / "synth-3.rttm").exists()

    def test_missing_file(self, tmp_path, capsys):
        assert run(capsys, "cluster", tmp_path / "nope.json")[0] == 2

    def test_k_fixed(self, tmp_path, capsys, fixture_files):
        code, out, _ = run(capsys, "--output-dir", tmp_path, "cluster", fixture_files["session"], "--k-fixed", 3)
        assert code == 0
        assert json.loads(out)["sessions"][0]["n_speakers"] == 3
        labels = json.loads((tmp_path / "synth-3.json").read_text())["segment_labels"]
        assert len(set(labels)) == 3


class TestDiarize:
    def test_deterministic(self, tmp_path, capsys, fixture_files):
        outputs = []
        for k in range(2):
            out_dir = tmp_path / f"run{k}"
            code, _, _ = run(
                capsys, "--seed", 5, "--output-dir", out_dir, "diarize",
                fixture_files["session"], "--scores", fixture_files["scores"],
            )
            assert code == 0
            outputs.append(((out_dir / "synth-3.json").read_bytes(), (out_dir / "synth-3.rttm").read_bytes()))
        assert outputs[0] == outputs[1]

    def test_semantic_without_scores(self, tmp_path, capsys, fixture_files):
        code, _, err = run(capsys, "--mode", "semantic", "--output-dir", tmp_path, "diarize", fixture_files["session"])
        assert code == 3
        assert "acoustic" in err

    def test_params_file_and_flag_precedence(self, tmp_path, capsys, fixture_files):
        params = tmp_path / "params.json"
        params.write_text(json.dumps({"tau_merge": 0.55, "beta1": 0.9, "dev_turn_f1": 1.0}))
        code, out, _ = run(
            capsys, "--params", params, "--output-dir", tmp_path, "diarize",
            fixture_files["session"], "--scores", fixture_files["scores"], "--beta1", 0.8,
        )
        assert code == 0
        report = json.loads(out)["params"]
        assert report["tau_merge"] == 0.55
        assert report["beta1"] == 0.8
        assert report["beta2"] == DEFAULTS["beta2"]

    def test_bad_param_value(self, tmp_path, capsys, fixture_files):
        code, _, _ = run(
            capsys, "--output-dir", tmp_path, "diarize", fixture_files["session"],
            "--scores", fixture_files["scores"], "--turn-threshold", 1.5,
        )
        assert code == 3


class TestEval:
    def test_identical(self, tmp_path, capsys, fixture_files):
        ref = fixture_files["reference"]
        code, out, _ = run(capsys, "eval", "--reference", ref, "--hypothesis", ref)
        assert code == 0
        rep = json.loads(out)["sessions"][0]
        assert rep["e_cp_matched"] == rep["e_cp_all"] == rep["e_speaker_wer"] == rep["e_wer"] == 0.0

    def test_aggregate_and_dominance(self, tmp_path, capsys):
        refs, hyps = [], []
        for seed in (1, 2):
            d = tmp_path / str(seed)
            run(capsys, "--seed", seed, "--output-dir", d, "synth", "--n-segments", 40, "--acoustic-noise", 0.7)
            run(capsys, "--output-dir", d, "cluster", d / f"synth-{seed}.session.json")
            refs.append(d / f"synth-{seed}.reference.json")
            hyps.append(d / f"synth-{seed}.json")
        code, out, _ = run(capsys, "eval", "--reference", *refs, "--hypothesis", *hyps, "--aggregate", "--variant", "all")
        assert code == 0
        doc = json.loads(out)
        assert doc["corpus"]["session_id"] == "corpus"
        for rep in doc["sessions"] + [doc["corpus"]]:
            assert rep["e_cp_all"] >= rep["e_cp_matched"]

    def test_mismatched_counts(self, tmp_path, capsys, fixture_files):
        ref = fixture_files["reference"]
        assert run(capsys, "eval", "--reference", ref, ref, "--hypothesis", ref)[0] == 2


class TestSynth:
    def test_byte_identical(self, tmp_path, capsys):
        for d in ("a", "b"):
            assert run(capsys, "--seed", 11, "--output-dir", tmp_path / d, "synth", "--n-segments", 30)[0] == 0
        for name in ("session", "scores", "reference"):
            f = f"synth-11.{name}.json"
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_zero_speakers(self, tmp_path, capsys):
        assert run(capsys, "--output-dir", tmp_path, "synth", "--n-speakers", 0)[0] == 2

    def test_default_files_diarize(self, tmp_path, capsys):
        code, out, _ = run(capsys, "--output-dir", tmp_path, "synth")
        assert code == 0
        doc = json.loads(out)
        code, _, _ = run(capsys, "--output-dir", tmp_path, "diarize", doc["session"], "--scores", doc["scores"])
        assert code == 0


class TestFit:
    def _manifest(self, tmp_path, capsys, seeds, **flags):
        entries = []
        for seed in seeds:
            argv = ["--seed", seed, "--output-dir", tmp_path, "synth"]
            for k, v in flags.items():
                argv += ["--" + k.replace("_", "-"), v]
            run(capsys, *argv)
            entries.append({
                "session": f"synth-{seed}.session.json",
                "scores": f"synth-{seed}.scores.json",
                "reference": f"synth-{seed}.reference.json",
            })
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(entries))
        return path

    def test_noiseless_dev_set(self, tmp_path, capsys):
        manifest = self._manifest(
            tmp_path, capsys, [1, 2], acoustic_noise=0.0, semantic_turn_accuracy=1.0, dialogue_accuracy=1.0,
        )
        code, out, _ = run(capsys, "--output-dir", tmp_path / "fit", "fit", manifest)
        assert code == 0
        params = json.loads((tmp_path / "fit" / "params.json").read_text())
        assert params["dev_turn_f1"] == 1.0
        assert 0.0 < params["turn_threshold"] < 1.0

    def test_single_session_fast(self, tmp_path, capsys):
        manifest = self._manifest(tmp_path, capsys, [4])
        start = time.perf_counter()
        assert run(capsys, "--output-dir", tmp_path, "fit", manifest)[0] == 0
        assert time.perf_counter() - start < 60

    def test_missing_file(self, tmp_path, capsys):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps([{"session": "a.json", "scores": "b.json", "reference": "c.json"}]))
        assert run(capsys, "fit", path)[0] == 2

    def test_fitted_params_feed_diarize(self, tmp_path, capsys):
        manifest = self._manifest(tmp_path, capsys, [6], n_segments=60)
        run(capsys, "--output-dir", tmp_path, "fit", manifest)
        code, _, _ = run(
            capsys, "--params", tmp_path / "params.json", "--output-dir", tmp_path / "d", "diarize",
            tmp_path / "synth-6.session.json", "--scores", tmp_path / "synth-6.scores.json",
        )
        assert code == 0


class TestSweep:
    def test_table(self, tmp_path, capsys):
        code, out, _ = run(
            capsys, "--output-dir", tmp_path, "sweep", "--n-segments", 30, "--seeds", 2, "--no-speaker-wer",
        )
        assert code == 0
        lines = out.splitlines()
        assert len(lines) == 4
        assert (tmp_path / "sweep.tsv").read_text() == out
        assert len(json.loads((tmp_path / "sweep.json").read_text())["runs"]) == 6
