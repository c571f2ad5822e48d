"""Semantic re-clustering: split at turn points, merge redundant speakers.

The pipeline in :func:`run_pipeline` runs, for the semantic and multimodal
modes::

    spectral clustering -> dialogue evidence -> window re-adjustment
    -> turn evidence -> turn points -> split -> merge -> boundary correction

``acoustic`` mode stops after spectral clustering.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

from . import acoustic, fusion
from .core import (
    ConfigurationError,
    DiarizationHypothesis,
    FusionParams,
    RefineParams,
    Session,
    TurnEvidence,
    canonical_labels,
)
from .defaults import DEFAULTS


@dataclass(frozen=True, eq=False)
class SpanSequence:
    """Runs of segments between consecutive turn points.

    ``sums`` holds the summed embeddings of each span's clusterable
    segments; ``embeddings`` the renormalized means.
    """

    spans: tuple[tuple[int, ...], ...]
    sums: np.ndarray
    embeddings: np.ndarray

    def __len__(self):
        return len(self.spans)


@dataclass(frozen=True, eq=False)
class MergeCosts:
    speakers: tuple[int, ...]
    cost_sim: np.ndarray
    cost_dd: np.ndarray

    @property
    def cost_all(self) -> np.ndarray:
        return self.cost_sim + self.cost_dd


@dataclass(frozen=True)
class MergeStep:
    keep: int
    absorbed: int
    cost: float
    costs: MergeCosts = field(compare=False, repr=False)


def build_spans(session: Session, p_stp: Sequence[int], min_segment_s: float = 0.0) -> SpanSequence:
    """Split the session at every boundary with ``p = 1``.

    Segments shorter than ``min_segment_s`` do not contribute to a span's
    mean unless the whole span is short.
    """
    n = len(session)
    if len(p_stp) != n - 1:
        raise ValueError(f"expected {n - 1} turn points, got {len(p_stp)}")
    spans = []
    current = [1]
    for b, p in enumerate(p_stp, start=1):
        if p:
            spans.append(tuple(current))
            current = []
        current.append(b + 1)
    spans.append(tuple(current))

    x = session.embedding_matrix
    dur = session.durations
    sums = np.zeros((len(spans), session.embedding_dim))
    for k, span in enumerate(spans):
        idx = np.array(span) - 1
        keep = idx[dur[idx] >= min_segment_s]
        sums[k] = x[keep if len(keep) else idx].sum(axis=0)
    emb = sums / np.linalg.norm(sums, axis=1, keepdims=True)
    return SpanSequence(tuple(spans), sums, emb)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def semantic_split(
    spans: SpanSequence,
    params: RefineParams = RefineParams(),
    turns: Optional[Sequence[int]] = None,
) -> tuple[int, ...]:
    """Assign speakers to spans left to right.

    At a turn point the span joins the nearest existing speaker if that
    cosine distance is below ``tau_split`` and opens a new speaker
    otherwise; without a turn point it inherits the previous label. Each
    speaker keeps a running mean over the segments assigned so far.

    ``turns`` gives one flag per span boundary and defaults to all ones,
    which is the case when spans were cut at the turn points themselves.
    """
    m = len(spans)
    if m == 0:
        raise ValueError("no spans")
    if turns is None:
        turns = (1,) * (m - 1)
    if len(turns) != m - 1:
        raise ValueError(f"expected {m - 1} turn flags, got {len(turns)}")
    labels = [1]
    sums = [spans.sums[0].copy()]
    for i in range(1, m):
        if turns[i - 1]:
            means = np.array([_unit(s) for s in sums])
            dist = 1.0 - means @ spans.embeddings[i]
            best = int(np.argmin(dist))
            s = best + 1 if dist[best] < params.tau_split else len(sums) + 1
        else:
            s = labels[-1]
        if s > len(sums):
            sums.append(np.zeros_like(spans.sums[0]))
        sums[s - 1] = sums[s - 1] + spans.sums[i]
        labels.append(s)
    return tuple(labels)


def span_boundary_probs(spans: SpanSequence, turn_evidence: Sequence[TurnEvidence]) -> tuple[float, ...]:
    """Fused turn probability at the end of every span but the last."""
    by_boundary = {t.boundary_after_segment: t.p_fused for t in turn_evidence}
    return tuple(by_boundary[span[-1]] for span in spans.spans[:-1])


def merge_score_semantic(i: int, j: int, labels: Sequence[int], boundary_probs: Sequence[float]) -> float:
    """Mean of ``p - 0.5`` over span boundaries between speakers ``i`` and ``j``.

    Positive when confident turns separate the two speakers, negative when
    the boundaries between them look like continuations, 0 when they are
    never adjacent.
    """
    pair = {i, j}
    vals = [
        boundary_probs[a] - 0.5
        for a in range(len(labels) - 1)
        if {labels[a], labels[a + 1]} == pair
    ]
    return float(np.mean(vals)) if vals else 0.0


def merge_costs(spans: SpanSequence, labels: Sequence[int], boundary_probs: Sequence[float]) -> MergeCosts:
    speakers = tuple(sorted(set(labels)))
    lab = np.asarray(labels)
    means = np.array([_unit(spans.sums[lab == s].sum(axis=0)) for s in speakers])
    sim = np.clip(1.0 - means @ means.T, 0.0, 2.0)
    np.fill_diagonal(sim, 0.0)
    dd = np.zeros_like(sim)
    for a in range(len(speakers)):
        for b in range(a + 1, len(speakers)):
            dd[a, b] = dd[b, a] = merge_score_semantic(speakers[a], speakers[b], labels, boundary_probs)
    return MergeCosts(speakers, sim, dd)


def semantic_merge(
    spans: SpanSequence,
    labels: Sequence[int],
    boundary_probs: Sequence[float],
    params: RefineParams = RefineParams(),
    history: Optional[list] = None,
) -> tuple[int, ...]:
    """Repeatedly merge the cheapest speaker pair while its cost is below ``tau_merge``.

    The cost of a pair is the cosine distance of the speakers' mean
    embeddings plus :func:`merge_score_semantic`. Ties go to the
    lexicographically smallest ``(i, j)``; ``j`` is folded into ``i``.
    Every merge is appended to ``history`` when given.
    """
    labels = list(labels)
    while len(set(labels)) > 1:
        costs = merge_costs(spans, labels, boundary_probs)
        total = costs.cost_all
        best = None
        for a in range(len(costs.speakers)):
            for b in range(a + 1, len(costs.speakers)):
                if best is None or total[a, b] < total[best]:
                    best = (a, b)
        cost = float(total[best])
        if not cost < params.tau_merge:
            break
        keep, absorbed = costs.speakers[best[0]], costs.speakers[best[1]]
        labels = [keep if l == absorbed else l for l in labels]
        if history is not None:
            history.append(MergeStep(keep, absorbed, cost, costs))
    return tuple(labels)


def correct_boundaries(
    hypothesis: DiarizationHypothesis,
    session: Session,
    turn_evidence: Sequence[TurnEvidence],
    max_shift_s: float = DEFAULTS["max_shift_s"],
) -> DiarizationHypothesis:
    """Slide each speaker change to a nearby boundary with a higher turn probability.

    Candidates lie within ``max_shift_s`` of the change and strictly between
    its neighbouring changes, so no speaker run disappears. Ties go to the
    candidate closest to the original change, then the earlier one.
    """
    labels = list(hypothesis.labels)
    n = len(labels)
    prob = {t.boundary_after_segment: t.p_fused for t in turn_evidence}
    b = 1
    while b < n:
        if labels[b - 1] == labels[b]:
            b += 1
            continue
        prev_change = max((c for c in range(1, b) if labels[c - 1] != labels[c]), default=0)
        next_change = min((c for c in range(b + 1, n) if labels[c - 1] != labels[c]), default=n)
        t_b = session.boundary_time(b)
        best = None
        for c in range(prev_change + 1, next_change):
            if c == b or abs(session.boundary_time(c) - t_b) > max_shift_s:
                continue
            key = (-prob.get(c, 0.0), abs(c - b), c)
            if best is None or key < best[0]:
                best = (key, c)
        if best is not None and prob.get(best[1], 0.0) > prob.get(b, 0.0):
            c = best[1]
            if c < b:
                labels[c:b] = [labels[b]] * (b - c)
            else:
                labels[b:c] = [labels[b - 1]] * (c - b)
            b = c + 1 if c > b else b + 1
        else:
            b += 1
    return DiarizationHypothesis(hypothesis.session_id, tuple(labels), dict(hypothesis.meta))


# -- pipeline --------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "multimodal"
    fusion: FusionParams = FusionParams()
    refine: RefineParams = RefineParams()
    p_percentile: float = DEFAULTS["p_percentile"]
    k_max: int = DEFAULTS["k_max"]
    k_fixed: Optional[int] = None
    seed: int = DEFAULTS["seed"]
    kmeans_restarts: int = DEFAULTS["kmeans_restarts"]
    acoustic_window_s: float = DEFAULTS["acoustic_window_s"]

    @classmethod
    def from_dict(cls, values: dict, mode: Optional[str] = None) -> "PipelineConfig":
        """Build from flat key/value pairs; unknown keys are a configuration error."""
        fk = {f.name for f in fields(FusionParams)}
        rk = {f.name for f in fields(RefineParams)}
        ok = {f.name for f in fields(cls)} - {"fusion", "refine"}
        extra = set(values) - fk - rk - ok - {"dev_dialogue_f1", "dev_turn_f1", "kmeans_max_iter", "kmeans_tol"}
        if extra:
            raise ConfigurationError(f"unknown parameter(s): {', '.join(sorted(extra))}")
        try:
            cfg = cls(
                fusion=FusionParams(**{k: float(v) for k, v in values.items() if k in fk}),
                refine=RefineParams(**{k: values[k] for k in values if k in rk}),
                **{k: values[k] for k in values if k in ok},
            )
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(str(exc)) from exc
        if mode is not None:
            cfg = replace(cfg, mode=mode)
        if cfg.mode not in fusion.MODES:
            raise ConfigurationError(f"unknown mode {cfg.mode!r}")
        return cfg

    def to_dict(self) -> dict:
        out = {"mode": self.mode, **asdict(self.fusion), **asdict(self.refine)}
        for k in ("p_percentile", "k_max", "k_fixed", "seed", "kmeans_restarts", "acoustic_window_s"):
            out[k] = getattr(self, k)
        return out


@dataclass(frozen=True, eq=False)
class PipelineTrace:
    """Intermediate results of one pipeline run, for inspection and tests."""

    clustering: acoustic.ClusteringResult
    fused: Optional[fusion.FusedSession] = None
    spans: Optional[SpanSequence] = None
    split_labels: tuple[int, ...] = ()
    merge_history: tuple = ()


def run_pipeline(
    session: Session,
    scores=None,
    config: PipelineConfig = PipelineConfig(),
    external=None,
    trace: Optional[dict] = None,
) -> DiarizationHypothesis:
    """Diarize one session in the configured mode.

    When ``trace`` is a dict, the intermediate :class:`PipelineTrace` is
    stored under ``trace["trace"]``.
    """
    mode = config.mode
    if mode not in fusion.MODES:
        raise ConfigurationError(f"unknown mode {mode!r}")
    rp = config.refine
    result = acoustic.spectral_cluster(
        session,
        p_percentile=config.p_percentile,
        k_max=config.k_max,
        k_fixed=config.k_fixed,
        min_segment_s=rp.min_segment_s,
        seed=config.seed,
        restarts=config.kmeans_restarts,
    )
    meta = {"mode": mode, "params": config.to_dict()}
    if mode == "acoustic":
        if trace is not None:
            trace["trace"] = PipelineTrace(result)
        return DiarizationHypothesis(session.session_id, canonical_labels(result.labels), meta)

    if scores is None or scores.empty:
        raise ConfigurationError(
            f"mode {mode!r} needs semantic scores; use mode 'acoustic' without them"
        )
    if len(session) > 1 and not scores.turn_probabilities:
        raise ConfigurationError(f"mode {mode!r} needs turn probabilities for every boundary")

    dialogue = fusion.dialogue_evidence(result, session, scores, config.fusion, mode)
    adjusted = fusion.readjust_windows(result, dialogue, session)
    turns = fusion.turn_evidence(
        adjusted, session, scores, config.fusion, mode, config.acoustic_window_s, external
    )
    p_stp = fusion.suppress_turns_in_monologues(fusion.binarize_turns(turns, rp), dialogue)
    fused = fusion.FusedSession(dialogue, turns, p_stp)

    if rp.split_level == "segment":
        spans = build_spans(session, (1,) * (len(session) - 1), rp.min_segment_s)
        split = semantic_split(spans, rp, turns=p_stp)
    else:
        spans = build_spans(session, p_stp, rp.min_segment_s)
        split = semantic_split(spans, rp)
    probs = span_boundary_probs(spans, turns)
    history: list = []
    merged = semantic_merge(spans, split, probs, rp, history)

    seg_labels = [0] * len(session)
    for span, lab in zip(spans.spans, merged):
        for sid in span:
            seg_labels[sid - 1] = lab
    hyp = DiarizationHypothesis(session.session_id, tuple(seg_labels), meta)
    hyp = correct_boundaries(hyp, session, turns, rp.max_shift_s)
    if trace is not None:
        trace["trace"] = PipelineTrace(adjusted, fused, spans, split, tuple(history))
    return DiarizationHypothesis(session.session_id, canonical_labels(hyp.labels), meta)
