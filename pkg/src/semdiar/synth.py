"""Synthetic meetings with ground truth, and the sweep harness.

A session is a Markov chain over speakers. Each segment gets the speaker's
prototype embedding plus Gaussian noise, a handful of words from the
speaker's own vocabulary, and simulated semantic scores whose accuracy at
the 0.5 cutoff is controlled directly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import metrics
from .core import ConfigurationError, Segment, Session, Word
from .ingest import DialogueWindow, RefWord, ReferenceTranscript, SemanticScores, TurnProbability
from .refine import PipelineConfig, run_pipeline

WINDOW_LENGTH = 64
WINDOW_SHIFT = 16


@dataclass(frozen=True)
class SynthConfig:
    n_speakers: int = 4
    n_segments: int = 200
    embedding_dim: int = 16
    acoustic_noise: float = 0.3
    semantic_turn_accuracy: float = 0.9
    dialogue_accuracy: float = 0.9
    turn_rate: float = 0.2
    words_per_segment: tuple[int, int] = (2, 12)
    vocab_per_speaker: int = 50
    token_overlap: float = 0.0
    substitution_rate: float = 0.0
    window_length: int = WINDOW_LENGTH
    window_shift: int = WINDOW_SHIFT
    seed: int = 0

    def __post_init__(self):
        if self.n_speakers < 1:
            raise ConfigurationError("n_speakers must be >= 1")
        if self.n_segments < 1:
            raise ConfigurationError("n_segments must be >= 1")
        if self.embedding_dim < 2:
            raise ConfigurationError("embedding_dim must be >= 2")
        if self.acoustic_noise < 0:
            raise ConfigurationError("acoustic_noise must be >= 0")
        for name in ("semantic_turn_accuracy", "dialogue_accuracy"):
            if not 0.5 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0.5, 1]")
        for name in ("turn_rate", "token_overlap", "substitution_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        lo, hi = self.words_per_segment
        if not 1 <= lo <= hi:
            raise ConfigurationError("words_per_segment must be a range with 1 <= lo <= hi")
        if self.window_length < 1 or self.window_shift < 1:
            raise ConfigurationError("window length and shift must be positive")

    @classmethod
    def from_dict(cls, values: dict) -> "SynthConfig":
        values = dict(values)
        if "words_per_segment" in values:
            values["words_per_segment"] = tuple(values["words_per_segment"])
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc


@dataclass(frozen=True, eq=False)
class SyntheticSession:
    session: Session
    scores: SemanticScores
    reference: ReferenceTranscript
    true_labels: tuple[int, ...]
    config: SynthConfig = field(default_factory=SynthConfig)

    @property
    def true_turns(self) -> tuple[int, ...]:
        t = self.true_labels
        return tuple(int(t[k] != t[k + 1]) for k in range(len(t) - 1))


def dialogue_windows(n: int, length: int = WINDOW_LENGTH, shift: int = WINDOW_SHIFT) -> list[tuple[int, int]]:
    """Sliding windows over segment ids ``1..n``, truncated at the end."""
    out = []
    start = 1
    while True:
        last = min(start + length - 1, n)
        out.append((start, last))
        if last == n:
            return out
        start += shift


def _calibrated(rng: np.random.Generator, truth: int, accuracy: float) -> float:
    """A probability on the correct side of 0.5 with chance ``accuracy``."""
    correct = rng.random() < accuracy
    predicted = truth if correct else 1 - truth
    confidence = max(float(rng.beta(3.0, 2.0)), 1e-9)
    return 0.5 + 0.5 * confidence if predicted else 0.5 - 0.5 * confidence


def speaker_prototypes(rng: np.random.Generator, n_speakers: int, dim: int) -> np.ndarray:
    g = rng.standard_normal((n_speakers, dim))
    if dim >= n_speakers:
        q, _ = np.linalg.qr(g.T)
        return q.T[:n_speakers]
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def generate_session(config: SynthConfig = SynthConfig()) -> SyntheticSession:
    """Draw one synthetic meeting; bit-reproducible for a given config."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    protos = speaker_prototypes(rng, cfg.n_speakers, cfg.embedding_dim)

    speakers = [int(rng.integers(cfg.n_speakers))]
    for _ in range(cfg.n_segments - 1):
        cur = speakers[-1]
        if cfg.n_speakers > 1 and rng.random() < cfg.turn_rate:
            nxt = int(rng.integers(cfg.n_speakers - 1))
            cur = nxt if nxt < cur else nxt + 1
        speakers.append(cur)

    segments = []
    ref_words = []
    t = 0.0
    lo, hi = cfg.words_per_segment
    for k, spk in enumerate(speakers, start=1):
        t += float(rng.uniform(0.1, 0.5))
        n_words = int(rng.integers(lo, hi + 1))
        words = []
        for _ in range(n_words):
            dur = float(rng.uniform(0.2, 0.5))
            if rng.random() < cfg.token_overlap:
                token = f"cw{int(rng.integers(cfg.vocab_per_speaker))}"
            else:
                token = f"s{spk + 1}w{int(rng.integers(cfg.vocab_per_speaker))}"
            ref_words.append(RefWord(token, f"S{spk + 1}", t, t + dur))
            if rng.random() < cfg.substitution_rate:
                token = f"err{int(rng.integers(1_000_000))}"
            words.append(Word(token, t, t + dur))
            t += dur
        noise = rng.standard_normal(cfg.embedding_dim)
        emb = protos[spk] + cfg.acoustic_noise * noise
        emb = emb / np.linalg.norm(emb)
        segments.append(
            Segment(k, words[0].start_s, words[-1].end_s, tuple(float(v) for v in emb), tuple(words))
        )
    session = Session(f"synth-{cfg.seed}", tuple(segments), cfg.embedding_dim)

    turns = []
    for n in range(1, cfg.n_segments):
        truth = int(speakers[n - 1] != speakers[n])
        turns.append(TurnProbability(n, _calibrated(rng, truth, cfg.semantic_turn_accuracy)))
    windows = []
    for first, last in dialogue_windows(cfg.n_segments, cfg.window_length, cfg.window_shift):
        truth = int(len(set(speakers[first - 1:last])) > 1)
        p_s = _calibrated(rng, truth, cfg.dialogue_accuracy)
        windows.append(DialogueWindow(first, last, p_s, int(p_s > 0.5)))
    scores = SemanticScores(session.session_id, tuple(windows), tuple(turns))
    reference = ReferenceTranscript(session.session_id, tuple(ref_words))
    return SyntheticSession(session, scores, reference, tuple(s + 1 for s in speakers), cfg)


def hypothesis_words(hypothesis, session: Session) -> list[tuple[str, str]]:
    return [(w.token, f"spk{lab}") for w, lab in hypothesis.word_labels(session)]


@dataclass
class SweepRun:
    config_index: int
    seed: int
    mode: str
    e_cp_matched: float
    e_cp_all: float
    e_speaker_wer: float


@dataclass
class SweepResult:
    runs: list[SweepRun]
    rows: list[dict]

    def to_table(self, delimiter: str = "\t") -> str:
        buf = io.StringIO()
        if not self.rows:
            return ""
        writer = csv.DictWriter(buf, fieldnames=list(self.rows[0]), delimiter=delimiter, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


def run_one(cfg: SynthConfig, mode: str, base: PipelineConfig, with_speaker_wer: bool = True) -> tuple[float, float, float]:
    data = generate_session(cfg)
    pipe = replace(base, mode=mode, seed=cfg.seed)
    hyp = run_pipeline(data.session, data.scores, pipe)
    words = hypothesis_words(hyp, data.session)
    both = metrics.cpwer_variants(data.reference, words)
    matched, every = both["matched"].error_rate, both["all"].error_rate
    spk = metrics.speaker_wer(data.reference, words).e_speaker_wer if with_speaker_wer else float("nan")
    return matched, every, spk


def _run_task(task):
    ci, cfg, mode, base, with_speaker_wer = task
    return SweepRun(ci, cfg.seed, mode, *run_one(cfg, mode, base, with_speaker_wer))


def sweep(
    configs: Sequence[SynthConfig],
    modes: Sequence[str] = ("acoustic", "semantic", "multimodal"),
    seeds: Optional[Sequence[int]] = None,
    base: PipelineConfig = PipelineConfig(),
    jobs: int = 1,
    with_speaker_wer: bool = True,
) -> SweepResult:
    """Run every (config, seed, mode) and summarize per (config, mode).

    With ``seeds`` each config is re-drawn once per seed; otherwise its own
    seed is used.
    """
    if not configs:
        raise ConfigurationError("sweep needs at least one config")
    tasks = []
    for ci, cfg in enumerate(configs):
        for seed in (seeds if seeds is not None else [cfg.seed]):
            for mode in modes:
                tasks.append((ci, replace(cfg, seed=int(seed)), mode, base, with_speaker_wer))
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_task, tasks))
    else:
        runs = [_run_task(t) for t in tasks]

    rows = []
    for ci, cfg in enumerate(configs):
        for mode in modes:
            sel = [r for r in runs if r.config_index == ci and r.mode == mode]
            row = {"config": ci, "mode": mode, "n_runs": len(sel)}
            for key in ("n_speakers", "n_segments", "acoustic_noise", "semantic_turn_accuracy"):
                row[key] = asdict(cfg)[key]
            for metric in ("e_cp_matched", "e_cp_all", "e_speaker_wer"):
                vals = np.array([getattr(r, metric) for r in sel], dtype=float)
                row[f"{metric}_mean"] = float(vals.mean())
                row[f"{metric}_std"] = float(vals.std())
            rows.append(row)
    return SweepResult(runs, rows)
