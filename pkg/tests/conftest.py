from pathlib import Path

import numpy as np
import pytest

from semdiar.core import Segment, Session, Word
from semdiar.ingest import DialogueWindow, SemanticScores, TurnProbability

DATA = Path(__file__).parent / "data"


def unit(v):
    v = np.asarray(v, dtype=float)
    return tuple(float(x) for x in v / np.linalg.norm(v))


def make_session(embeddings, durations=None, gap=0.0, session_id="s", words_per_segment=0):
    """Back-to-back segments; segment k gets words ``w<k>_<i>`` when asked."""
    embeddings = [unit(e) for e in embeddings]
    durations = durations or [1.0] * len(embeddings)
    segments = []
    t = 0.0
    for k, (e, d) in enumerate(zip(embeddings, durations), start=1):
        words = []
        if words_per_segment:
            step = d / words_per_segment
            words = [
                Word(f"w{k}_{i}", t + i * step, t + (i + 1) * step)
                for i in range(words_per_segment)
            ]
        segments.append(Segment(k, t, t + d, e, tuple(words)))
        t += d + gap
    return Session(session_id, tuple(segments), len(embeddings[0]))


def make_scores(session, turn_probs, windows=None):
    """Scores with one turn probability per boundary and the given windows.

    ``windows`` holds ``(first, last, p_s)``; by default one window spans
    the whole session with ``p_s = 0.9``.
    """
    n = len(session)
    if windows is None:
        windows = [(1, n, 0.9)]
    return SemanticScores(
        session.session_id,
        tuple(DialogueWindow(a, b, p, int(p > 0.5)) for a, b, p in windows),
        tuple(TurnProbability(k, float(p)) for k, p in enumerate(turn_probs, start=1)),
    )


def random_transcript(rng, n_speakers, n_words, vocab=6, prefix="S"):
    """Random ``(token, speaker)`` list; every speaker index below ``n_speakers`` may appear."""
    return [
        (f"t{int(rng.integers(vocab))}", f"{prefix}{int(rng.integers(n_speakers))}")
        for _ in range(n_words)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def three_groups():
    """Three orthogonal groups of five segments, no noise."""
    eye = np.eye(3)
    return make_session([eye[g] for g in (0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2)])


@pytest.fixture
def data_dir():
    return DATA



# -- acceptance summary --------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    """Store one acceptance verdict; printed once at the end of the run."""
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'} ({detail})")
