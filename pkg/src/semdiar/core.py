"""Domain types shared across the diarization backend.

Everything here is immutable. Embeddings are kept as tuples of floats so
that sessions compare by value; ``Session.embedding_matrix`` gives a
read-only numpy view for the numerical code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .defaults import DEFAULTS

UNIT_NORM_TOL = 1e-6


class DiarizationError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(DiarizationError, ValueError):
    """Input data violates a documented invariant."""


class ConfigurationError(DiarizationError):
    """Parameters or modes are inconsistent with the supplied inputs."""


@dataclass(frozen=True)
class Word:
    token: str
    start_s: float
    end_s: float

    def __post_init__(self):
        if not self.token:
            raise ValidationError("word token must be non-empty")
        if self.start_s < 0 or self.end_s < self.start_s:
            raise ValidationError(
                f"word {self.token!r}: bad times [{self.start_s}, {self.end_s}]"
            )


@dataclass(frozen=True)
class Segment:
    """One aligned sentence with its mean speaker embedding."""

    id: int
    start_s: float
    end_s: float
    embedding: tuple[float, ...]
    words: tuple[Word, ...] = ()

    def __post_init__(self):
        if self.end_s < self.start_s:
            raise ValidationError(f"segment {self.id}: end_s < start_s")
        norm = math.sqrt(math.fsum(x * x for x in self.embedding))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise ValidationError(
                f"segment {self.id}: embedding norm {norm!r} is not 1"
            )
        prev = self.start_s
        for k, w in enumerate(self.words):
            if w.start_s < prev - 1e-9 or w.end_s > self.end_s + 1e-9:
                raise ValidationError(
                    f"segment {self.id}: word {k} outside segment or out of order"
                )
            prev = w.start_s

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class Session:
    session_id: str
    segments: tuple[Segment, ...]
    embedding_dim: int

    def __post_init__(self):
        if not self.segments:
            raise ValidationError("session has no segments")
        for k, seg in enumerate(self.segments, start=1):
            if seg.id != k:
                raise ValidationError(
                    f"segment ids must be 1..N contiguous; record {k - 1} has id {seg.id}"
                )
            if len(seg.embedding) != self.embedding_dim:
                raise ValidationError(
                    f"segment {seg.id}: embedding dimension {len(seg.embedding)} "
                    f"!= {self.embedding_dim}"
                )
            if k > 1 and seg.start_s < self.segments[k - 2].end_s:
                raise ValidationError(
                    f"segment {seg.id} starts before segment {seg.id - 1} ends"
                )

    def __len__(self) -> int:
        return len(self.segments)

    @cached_property
    def embedding_matrix(self) -> np.ndarray:
        m = np.array([s.embedding for s in self.segments], dtype=float)
        m.setflags(write=False)
        return m

    @cached_property
    def durations(self) -> np.ndarray:
        return np.array([s.duration for s in self.segments])

    def boundary_time(self, n: int) -> float:
        """Time of the boundary after segment ``n`` (1-based)."""
        a, b = self.segments[n - 1], self.segments[n]
        return 0.5 * (a.end_s + b.start_s)


@dataclass(frozen=True)
class FusionParams:
    alpha1: float = DEFAULTS["alpha1"]
    alpha2: float = DEFAULTS["alpha2"]
    beta1: float = DEFAULTS["beta1"]
    beta2: float = DEFAULTS["beta2"]
    theta: float = DEFAULTS["theta"]

    def __post_init__(self):
        if not self.beta1 + self.beta2 > 0:
            raise ConfigurationError("beta1 + beta2 must be positive")
        if not math.isfinite(self.theta):
            raise ConfigurationError("theta must be finite")


@dataclass(frozen=True)
class RefineParams:
    tau_split: float = DEFAULTS["tau_split"]
    tau_merge: float = DEFAULTS["tau_merge"]
    turn_threshold: float = DEFAULTS["turn_threshold"]
    min_segment_s: float = DEFAULTS["min_segment_s"]
    max_shift_s: float = DEFAULTS["max_shift_s"]
    split_level: str = DEFAULTS["split_level"]

    def __post_init__(self):
        if not 0.0 <= self.tau_split <= 2.0:
            raise ConfigurationError("tau_split must lie in [0, 2]")
        if not 0.0 < self.turn_threshold < 1.0:
            raise ConfigurationError("turn_threshold must lie in (0, 1)")
        if self.min_segment_s < 0:
            raise ConfigurationError("min_segment_s must be >= 0")
        if self.split_level not in ("span", "segment"):
            raise ConfigurationError("split_level must be 'span' or 'segment'")


@dataclass(frozen=True)
class DialogueEvidence:
    """Dialogue-detection signals for one window, semantic and acoustic."""

    window: tuple[int, int]
    z_semantic: int
    z_acoustic: int
    p_s: float
    d_p: float
    d_q: float
    s_hat: float
    z_fused: int


@dataclass(frozen=True)
class TurnEvidence:
    boundary_after_segment: int
    p_semantic: float
    q_acoustic: float
    p_fused: float


@dataclass(frozen=True)
class DiarizationHypothesis:
    session_id: str
    labels: tuple[int, ...]
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if any(int(x) != x or x < 1 for x in self.labels):
            raise ValidationError("speaker labels must be positive integers")

    def word_labels(self, session: Session) -> list[tuple[Word, int]]:
        """Speaker-attributed words, each inheriting its segment label."""
        if len(self.labels) != len(session):
            raise ValidationError("hypothesis does not cover every segment")
        return [
            (w, lab) for seg, lab in zip(session.segments, self.labels) for w in seg.words
        ]


def canonical_labels(labels: Sequence[int]) -> tuple[int, ...]:
    """Renumber to 1..K in order of first appearance."""
    mapping: dict[int, int] = {}
    out = []
    for lab in labels:
        if lab not in mapping:
            mapping[lab] = len(mapping) + 1
        out.append(mapping[lab])
    return tuple(out)


def canonicalize_labels(hypothesis: DiarizationHypothesis) -> DiarizationHypothesis:
    return DiarizationHypothesis(
        hypothesis.session_id, canonical_labels(hypothesis.labels), dict(hypothesis.meta)
    )


def cosine_distance(a, b) -> float:
    """``1 - cos(a, b)``; raises on a zero-norm input."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValidationError("degenerate (zero-norm) embedding")
    d = 1.0 - float(a @ b) / (na * nb)
    return min(max(d, 0.0), 2.0)


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise ValidationError("cannot normalize a zero or non-finite vector")
    return v / n


def pairwise_cosine_distance(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    xn = x / np.linalg.norm(x, axis=1, keepdims=True)
    d = 1.0 - xn @ xn.T
    np.clip(d, 0.0, 2.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d
