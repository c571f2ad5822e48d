"""Readers and writers for the JSON and RTTM interchange files.

Segments file::

    {"version": 1, "session_id": ..., "embedding_dim": d,
     "segments": [{"id", "start_s", "end_s", "embedding": [...],
                   "words": [{"token", "start_s", "end_s"}]}]}

Semantic scores file::

    {"version": 1, "session_id": ...,
     "dialogue_windows": [{"first_segment", "last_segment", "p_s", "z_semantic"}],
     "turn_probabilities": [{"after_segment", "p"}]}

Reference / hypothesis file::

    {"version": 1, "session_id": ..., "words": [{"token", "speaker", "start_s"?, "end_s"?}]}

A reference may also be an RTTM file paired with a timed word list.
Floats are written with ``repr`` so every file round-trips exactly.
"""

from __future__ import annotations

import json
import math
import os
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .core import DiarizationHypothesis, Segment, Session, ValidationError, Word

SCHEMA_VERSION = 1


class SchemaError(ValidationError):
    """A file does not match its documented schema."""


@dataclass(frozen=True)
class DialogueWindow:
    first_segment: int
    last_segment: int
    p_s: float
    z_semantic: int

    @property
    def ids(self) -> range:
        return range(self.first_segment, self.last_segment + 1)


@dataclass(frozen=True)
class TurnProbability:
    after_segment: int
    p: float


@dataclass(frozen=True)
class SemanticScores:
    session_id: str
    dialogue_windows: tuple[DialogueWindow, ...] = ()
    turn_probabilities: tuple[TurnProbability, ...] = ()

    @property
    def empty(self) -> bool:
        return not self.dialogue_windows and not self.turn_probabilities

    def turn_prob_by_boundary(self) -> dict[int, float]:
        return {t.after_segment: t.p for t in self.turn_probabilities}


@dataclass(frozen=True)
class RefWord:
    token: str
    speaker: str
    start_s: Optional[float] = None
    end_s: Optional[float] = None


@dataclass(frozen=True)
class ReferenceTranscript:
    session_id: str
    words: tuple[RefWord, ...]

    def __len__(self):
        return len(self.words)

    @property
    def speakers(self) -> list[str]:
        return list(dict.fromkeys(w.speaker for w in self.words))


@dataclass(frozen=True)
class AcousticTurnProbs:
    """Externally supplied acoustic change probabilities over time."""

    session_id: str
    times: tuple[float, ...]
    probs: tuple[float, ...]


@dataclass(frozen=True)
class RttmTurn:
    session_id: str
    start_s: float
    duration_s: float
    speaker: str

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s


# -- helpers -----------------------------------------------------------------


def _read_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read ({exc})") from exc
    if not text.strip():
        raise SchemaError(f"{path}: file is empty")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top level must be an object")
    version = doc.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{path}: unsupported schema version {version!r}")
    return doc


def _field(record: dict, name: str, where: str) -> Any:
    if not isinstance(record, dict):
        raise SchemaError(f"{where}: expected an object")
    if name not in record:
        raise SchemaError(f"{where}: missing field '{name}'")
    return record[name]


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where}: expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise SchemaError(f"{where}: non-finite value")
    return value


def _integer(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{where}: expected an integer, got {value!r}")
    return value


def _probability(value, where: str) -> float:
    p = _number(value, where)
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"{where}: probability {p!r} outside [0, 1]")
    return p


def _write_json(doc: dict, path) -> None:
    path = Path(path)
    text = json.dumps(doc, indent=1, allow_nan=False) + "\n"
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"{path}: cannot write ({exc})") from exc


def _unit(vec: list[float], where: str) -> tuple[float, ...]:
    arr = np.array(vec, dtype=float)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ValidationError(f"{where}: zero-norm embedding")
    # leave already-unit vectors untouched so files round-trip bit-exactly
    if abs(norm - 1.0) > 1e-12:
        arr = arr / norm
    return tuple(float(x) for x in arr)


# -- sessions ----------------------------------------------------------------


def session_from_dict(doc: dict, source: str = "<session>") -> Session:
    session_id = str(_field(doc, "session_id", source))
    dim = _integer(_field(doc, "embedding_dim", source), f"{source}.embedding_dim")
    records = _field(doc, "segments", source)
    if not isinstance(records, list) or not records:
        raise SchemaError(f"{source}.segments: expected a non-empty list")
    segments = []
    prev_end = None
    for k, rec in enumerate(records):
        where = f"{source}.segments[{k}]"
        sid = _integer(_field(rec, "id", where), f"{where}.id")
        start = _number(_field(rec, "start_s", where), f"{where}.start_s")
        end = _number(_field(rec, "end_s", where), f"{where}.end_s")
        emb = _field(rec, "embedding", where)
        if not isinstance(emb, list):
            raise SchemaError(f"{where}.embedding: expected a list")
        emb = [_number(x, f"{where}.embedding[{i}]") for i, x in enumerate(emb)]
        if len(emb) != dim:
            raise ValidationError(
                f"{where}: embedding dimension {len(emb)} != embedding_dim {dim}"
            )
        if start < 0 or end < start:
            raise ValidationError(f"{where}: invalid times [{start}, {end}]")
        if prev_end is not None and start < prev_end:
            raise ValidationError(f"{where}: starts at {start} before previous segment ends at {prev_end}")
        prev_end = end
        words = []
        for i, w in enumerate(rec.get("words", [])):
            ww = f"{where}.words[{i}]"
            token = _field(w, "token", ww)
            if not isinstance(token, str) or not token:
                raise SchemaError(f"{ww}.token: expected a non-empty string")
            ws = _number(_field(w, "start_s", ww), f"{ww}.start_s")
            we = _number(_field(w, "end_s", ww), f"{ww}.end_s")
            try:
                words.append(Word(token, ws, we))
            except ValidationError as exc:
                raise ValidationError(f"{ww}: {exc}") from exc
        try:
            segments.append(Segment(sid, start, end, _unit(emb, where), tuple(words)))
        except ValidationError as exc:
            raise ValidationError(f"{where}: {exc}") from exc
    try:
        return Session(session_id, tuple(segments), dim)
    except ValidationError as exc:
        raise ValidationError(f"{source}: {exc}") from exc


def session_to_dict(session: Session) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "session_id": session.session_id,
        "embedding_dim": session.embedding_dim,
        "segments": [
            {
                "id": seg.id,
                "start_s": seg.start_s,
                "end_s": seg.end_s,
                "embedding": list(seg.embedding),
                "words": [
                    {"token": w.token, "start_s": w.start_s, "end_s": w.end_s}
                    for w in seg.words
                ],
            }
            for seg in session.segments
        ],
    }


def load_session(path) -> Session:
    return session_from_dict(_read_json(path), str(path))


def dump_session(session: Session, path) -> None:
    _write_json(session_to_dict(session), path)


# -- semantic scores -----------------------------------------------------------


def scores_from_dict(doc: dict, session: Session, source: str = "<scores>") -> SemanticScores:
    n = len(session)
    session_id = str(doc.get("session_id", session.session_id))
    if session_id != session.session_id:
        raise ValidationError(
            f"{source}: session_id {session_id!r} does not match {session.session_id!r}"
        )
    windows = []
    for k, rec in enumerate(doc.get("dialogue_windows", [])):
        where = f"{source}.dialogue_windows[{k}]"
        first = _integer(_field(rec, "first_segment", where), f"{where}.first_segment")
        last = _integer(_field(rec, "last_segment", where), f"{where}.last_segment")
        if not 1 <= first <= last <= n:
            raise ValidationError(f"{where}: segment range [{first}, {last}] not within 1..{n}")
        p_s = _probability(_field(rec, "p_s", where), f"{where}.p_s")
        z = _integer(_field(rec, "z_semantic", where), f"{where}.z_semantic")
        if z not in (0, 1):
            raise ValidationError(f"{where}.z_semantic: must be 0 or 1")
        windows.append(DialogueWindow(first, last, p_s, z))
    if windows:
        covered = set()
        for w in windows:
            covered.update(w.ids)
        missing = sorted(set(range(1, n + 1)) - covered)
        if missing:
            raise ValidationError(f"{source}: dialogue windows do not cover segment {missing[0]}")

    turns = []
    seen = set()
    for k, rec in enumerate(doc.get("turn_probabilities", [])):
        where = f"{source}.turn_probabilities[{k}]"
        after = _integer(_field(rec, "after_segment", where), f"{where}.after_segment")
        if not 1 <= after < n:
            raise ValidationError(f"{where}: no boundary after segment {after} (N={n})")
        if after in seen:
            raise ValidationError(f"{where}: duplicate boundary after segment {after}")
        seen.add(after)
        turns.append(TurnProbability(after, _probability(_field(rec, "p", where), f"{where}.p")))
    if turns and len(seen) != n - 1:
        gap = min(set(range(1, n)) - seen)
        raise ValidationError(f"{source}: no turn probability for boundary after segment {gap}")
    turns.sort(key=lambda t: t.after_segment)
    return SemanticScores(session.session_id, tuple(windows), tuple(turns))


def scores_to_dict(scores: SemanticScores) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "session_id": scores.session_id,
        "dialogue_windows": [
            {
                "first_segment": w.first_segment,
                "last_segment": w.last_segment,
                "p_s": w.p_s,
                "z_semantic": w.z_semantic,
            }
            for w in scores.dialogue_windows
        ],
        "turn_probabilities": [
            {"after_segment": t.after_segment, "p": t.p} for t in scores.turn_probabilities
        ],
    }


def load_semantic_scores(path, session: Session) -> SemanticScores:
    return scores_from_dict(_read_json(path), session, str(path))


def dump_semantic_scores(scores: SemanticScores, path) -> None:
    _write_json(scores_to_dict(scores), path)


# -- references ----------------------------------------------------------------


def reference_from_dict(doc: dict, source: str = "<reference>") -> ReferenceTranscript:
    records = _field(doc, "words", source)
    if not isinstance(records, list) or not records:
        raise SchemaError(f"{source}.words: expected a non-empty list")
    words = []
    for k, rec in enumerate(records):
        where = f"{source}.words[{k}]"
        token = _field(rec, "token", where)
        speaker = _field(rec, "speaker", where)
        if not isinstance(token, str) or not token:
            raise SchemaError(f"{where}.token: expected a non-empty string")
        if isinstance(speaker, bool) or not isinstance(speaker, (str, int)) or speaker == "":
            raise SchemaError(f"{where}.speaker: expected a non-empty label")
        start = rec.get("start_s")
        end = rec.get("end_s")
        start = None if start is None else _number(start, f"{where}.start_s")
        end = None if end is None else _number(end, f"{where}.end_s")
        words.append(RefWord(token, str(speaker), start, end))
    return ReferenceTranscript(str(doc.get("session_id", "")), tuple(words))


def reference_to_dict(ref: ReferenceTranscript) -> dict:
    out = []
    for w in ref.words:
        rec = {"token": w.token, "speaker": w.speaker}
        if w.start_s is not None:
            rec["start_s"] = w.start_s
        if w.end_s is not None:
            rec["end_s"] = w.end_s
        out.append(rec)
    return {"version": SCHEMA_VERSION, "session_id": ref.session_id, "words": out}


_RTTM_TYPES = {
    "SEGMENT", "NOSCORE", "NO_RT_METADATA", "LEXEME", "NON-LEX", "NON-SPEECH",
    "FILLER", "EDIT", "IP", "END-OF-SENTENCE", "SU", "CB", "A/P", "SPEAKER", "SPKR-INFO",
}


def read_rttm(path) -> list[RttmTurn]:
    """Parse ``SPEAKER`` lines; other record types are skipped."""
    turns = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
    if not any(line.strip() for line in lines):
        raise SchemaError(f"{path}: file is empty")
    for lineno, line in enumerate(lines, start=1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        if fields[0] != "SPEAKER":
            if fields[0] not in _RTTM_TYPES:
                raise SchemaError(f"{path}:{lineno}: unrecognized record type {fields[0]!r}")
            continue
        if len(fields) < 8:
            raise SchemaError(f"{path}:{lineno}: expected at least 8 fields")
        try:
            start, dur = float(fields[3]), float(fields[4])
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: bad onset/duration") from exc
        if not (math.isfinite(start) and math.isfinite(dur)) or dur < 0 or start < 0:
            raise SchemaError(f"{path}:{lineno}: invalid onset/duration")
        turns.append(RttmTurn(fields[1], start, dur, fields[7]))
    if not turns:
        raise SchemaError(f"{path}: no SPEAKER lines")
    return turns


def _read_timed_words(path) -> list[tuple[str, float, float]]:
    path = Path(path)
    if path.suffix == ".json":
        doc = _read_json(path)
        recs = _field(doc, "words", str(path))
        out = []
        for k, rec in enumerate(recs):
            where = f"{path}.words[{k}]"
            out.append(
                (
                    str(_field(rec, "token", where)),
                    _number(_field(rec, "start_s", where), f"{where}.start_s"),
                    _number(_field(rec, "end_s", where), f"{where}.end_s"),
                )
            )
        if not out:
            raise SchemaError(f"{path}: no words")
        return out
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 3:
                raise SchemaError(f"{path}:{lineno}: expected 'token start end'")
            try:
                out.append((fields[0], float(fields[1]), float(fields[2])))
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: bad time value") from exc
    if not out:
        raise SchemaError(f"{path}: file is empty")
    return out


def label_words_by_turns(words, turns: list[RttmTurn]) -> list[RefWord]:
    """Give each timed word the speaker of the turn that encloses it.

    The turn with the largest overlap wins (earliest turn on ties); a word
    overlapping no turn takes the nearest turn.
    """
    out = []
    for token, start, end in words:
        best, best_key = None, None
        for k, t in enumerate(turns):
            overlap = min(end, t.end_s) - max(start, t.start_s)
            contains_mid = t.start_s <= 0.5 * (start + end) <= t.end_s
            if overlap > 0 or contains_mid:
                key = (-max(overlap, 0.0), t.start_s, k)
            else:
                gap = max(t.start_s - end, start - t.end_s)
                key = (math.inf, gap, k)
            if best_key is None or key < best_key:
                best, best_key = t, key
        out.append(RefWord(token, best.speaker, start, end))
    return out


def load_reference(path, words_path=None) -> ReferenceTranscript:
    """Load a JSON reference, or an RTTM file plus its timed word list."""
    path = Path(path)
    if path.suffix.lower() == ".rttm":
        if words_path is None:
            raise ValidationError(f"{path}: an RTTM reference needs a timed word list")
        turns = read_rttm(path)
        words = label_words_by_turns(_read_timed_words(words_path), turns)
        return ReferenceTranscript(turns[0].session_id, tuple(words))
    return reference_from_dict(_read_json(path), str(path))


def dump_reference(ref: ReferenceTranscript, path) -> None:
    _write_json(reference_to_dict(ref), path)


# -- hypotheses ----------------------------------------------------------------


def speaker_name(label: int) -> str:
    return f"spk{label}"


def hypothesis_turns(hypothesis: DiarizationHypothesis, session: Session) -> list[RttmTurn]:
    """Speaker turns formed by merging adjacent same-label segments."""
    turns = []
    run_start = 0
    labels = hypothesis.labels
    for k in range(1, len(labels) + 1):
        if k == len(labels) or labels[k] != labels[run_start]:
            a, b = session.segments[run_start], session.segments[k - 1]
            turns.append(
                RttmTurn(session.session_id, a.start_s, b.end_s - a.start_s, speaker_name(labels[run_start]))
            )
            run_start = k
    return turns


def rttm_lines(turns: list[RttmTurn]) -> list[str]:
    return [
        f"SPEAKER {t.session_id} 1 {t.start_s!r} {t.duration_s!r} <NA> <NA> {t.speaker} <NA> <NA>"
        for t in turns
    ]


def hypothesis_to_dict(hypothesis: DiarizationHypothesis, session: Session) -> dict:
    if len(hypothesis.labels) != len(session):
        raise ValidationError("hypothesis labels do not cover every segment")
    doc = {"version": SCHEMA_VERSION, "session_id": session.session_id}
    if hypothesis.meta:
        doc["meta"] = hypothesis.meta
    doc["segment_labels"] = list(hypothesis.labels)
    doc["words"] = [
        {"token": w.token, "speaker": speaker_name(lab), "start_s": w.start_s, "end_s": w.end_s}
        for w, lab in hypothesis.word_labels(session)
    ]
    return doc


def write_hypothesis(hypothesis: DiarizationHypothesis, session: Session, path) -> tuple[Path, Path]:
    """Write the speaker-attributed word list and a sibling ``.rttm`` file."""
    path = Path(path)
    rttm_path = path.with_suffix(".rttm")
    _write_json(hypothesis_to_dict(hypothesis, session), path)
    text = "\n".join(rttm_lines(hypothesis_turns(hypothesis, session))) + "\n"
    try:
        rttm_path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"{rttm_path}: cannot write ({exc})") from exc
    return path, rttm_path


def load_hypothesis_labels(path) -> DiarizationHypothesis:
    doc = _read_json(path)
    labels = _field(doc, "segment_labels", str(path))
    return DiarizationHypothesis(str(doc.get("session_id", "")), tuple(int(x) for x in labels), doc.get("meta", {}))


# -- acoustic turn probabilities / params -------------------------------------


def load_acoustic_probs(path) -> AcousticTurnProbs:
    doc = _read_json(path)
    recs = _field(doc, "probs", str(path))
    times, probs = [], []
    for k, rec in enumerate(recs):
        where = f"{path}.probs[{k}]"
        times.append(_number(_field(rec, "time_s", where), f"{where}.time_s"))
        probs.append(_probability(_field(rec, "p", where), f"{where}.p"))
    return AcousticTurnProbs(str(doc.get("session_id", "")), tuple(times), tuple(probs))


def load_params(path) -> dict:
    doc = _read_json(path)
    doc.pop("version", None)
    return doc


def dump_params(params: dict, path) -> None:
    _write_json({"version": SCHEMA_VERSION, **params}, path)


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path


# -- segment truth from a reference ------------------------------------------


def segment_speakers(session: Session, reference: ReferenceTranscript) -> tuple[str, ...]:
    """Reference speaker of every segment.

    When the reference has exactly as many words as the session, words are
    matched by position. Otherwise each reference word with times goes to
    the segment containing its midpoint (nearest segment if none does).
    A segment takes its most frequent speaker, earliest word on ties;
    segments that receive no word inherit the previous segment's speaker.
    """
    n_words = sum(len(s.words) for s in session.segments)
    votes: list[list[str]] = [[] for _ in session.segments]
    if n_words == len(reference.words):
        k = 0
        for idx, seg in enumerate(session.segments):
            for _ in seg.words:
                votes[idx].append(reference.words[k].speaker)
                k += 1
    else:
        starts = [s.start_s for s in session.segments]
        ends = [s.end_s for s in session.segments]
        for w in reference.words:
            if w.start_s is None or w.end_s is None:
                raise ValidationError(
                    "reference words need times when their count differs from the session's"
                )
            mid = 0.5 * (w.start_s + w.end_s)
            gaps = [0.0 if a <= mid <= b else min(abs(mid - a), abs(mid - b)) for a, b in zip(starts, ends)]
            votes[min(range(len(gaps)), key=gaps.__getitem__)].append(w.speaker)
    out: list[str] = []
    for v in votes:
        if v:
            counts = Counter(v)
            top = max(counts.values())
            out.append(next(s for s in v if counts[s] == top))
        elif out:
            out.append(out[-1])
        else:
            out.append("")
    first = next((s for s in out if s), "")
    return tuple(s or first for s in out)
