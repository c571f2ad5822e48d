"""Semantic-acoustic fusion of dialogue and speaker-turn evidence.

Dialogue score for a window::

    s_hat = z_a * z_s + z_a * (p_s + alpha1 * d_p) + z_s * (p_s + alpha2 * d_q)

and the window is called a dialogue when ``s_hat > theta``. The fused turn
probability at a boundary is ``beta1 * p_n + beta2 * q_n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .acoustic import (
    ClusteringResult,
    _centroids,
    _canonical,
    acoustic_dialogue_flag,
    acoustic_turn_prob,
    dispersion_stats,
)
from .core import (
    ConfigurationError,
    DialogueEvidence,
    FusionParams,
    RefineParams,
    Session,
    TurnEvidence,
)
from .defaults import DEFAULTS

MODES = ("acoustic", "semantic", "multimodal")
GRID = np.round(np.arange(0, 21) * 0.05, 2)


@dataclass(frozen=True)
class FusedSession:
    dialogue_evidence: tuple[DialogueEvidence, ...]
    turn_evidence: tuple[TurnEvidence, ...]
    p_stp: tuple[int, ...]


def fuse_dialogue(z_semantic, z_acoustic, p_s, d_p, d_q, params: FusionParams = FusionParams()):
    """Return ``(s_hat, z_fused)`` for one window."""
    s_hat = (
        z_acoustic * z_semantic
        + z_acoustic * (p_s + params.alpha1 * d_p)
        + z_semantic * (p_s + params.alpha2 * d_q)
    )
    return s_hat, int(s_hat > params.theta)


def fuse_turn(p_semantic: float, q_acoustic: float, params: FusionParams = FusionParams()) -> float:
    return params.beta1 * p_semantic + params.beta2 * q_acoustic


def binarize_turns(turn_evidence: Sequence[TurnEvidence], params=RefineParams()) -> tuple[int, ...]:
    """Turn points per internal boundary: 1 where the fused probability exceeds the cutoff."""
    threshold = getattr(params, "turn_threshold", params)
    return tuple(int(t.p_fused > threshold) for t in turn_evidence)


def suppress_turns_in_monologues(p_stp: Sequence[int], evidence: Iterable[DialogueEvidence]) -> tuple[int, ...]:
    """Clear turn points that every covering window judges single-speaker.

    Boundary ``n`` lies inside window ``(first, last)`` when
    ``first <= n < last``. A boundary no window covers keeps its turn point,
    and so does one covered by at least one window with ``z_fused == 1``;
    with overlapping windows a single wrong monologue verdict then cannot
    wipe out a whole window of turns.
    """
    out = list(p_stp)
    covered = [False] * len(out)
    dialogue = [False] * len(out)
    for ev in evidence:
        first, last = ev.window
        for n in range(first, min(last, len(out) + 1)):
            covered[n - 1] = True
            dialogue[n - 1] = dialogue[n - 1] or ev.z_fused == 1
    return tuple(0 if c and not d else p for p, c, d in zip(out, covered, dialogue))


def readjust_windows(
    result: ClusteringResult, evidence: Sequence[DialogueEvidence], session: Session
) -> ClusteringResult:
    """Make windows that fusion calls single-speaker acoustically homogeneous.

    Windows are visited in ascending first-segment order and see earlier
    relabelings. A heterogeneous window with ``z_fused == 0`` is relabeled
    to its majority label; ties go to the label met first in the window.
    """
    labels = list(result.labels)
    changed = False
    for ev in sorted(evidence, key=lambda e: e.window[0]):
        if ev.z_fused != 0:
            continue
        first, last = ev.window
        window = labels[first - 1:last]
        if len(set(window)) < 2:
            continue
        counts: dict[int, int] = {}
        for lab in window:
            counts[lab] = counts.get(lab, 0) + 1
        top = max(counts.values())
        majority = next(lab for lab in window if counts[lab] == top)
        labels[first - 1:last] = [majority] * len(window)
        changed = True
    if not changed:
        return result
    x = session.embedding_matrix
    used = sorted(set(labels))
    remap = {old: i + 1 for i, old in enumerate(used)}
    lab = np.array([remap[l] for l in labels])
    cents = _centroids(x, lab - 1, len(used))
    return _canonical(ClusteringResult(tuple(lab.tolist()), len(used), cents, result.excluded))


def dialogue_evidence(
    result: ClusteringResult,
    session: Session,
    scores,
    params: FusionParams = FusionParams(),
    mode: str = "multimodal",
) -> tuple[DialogueEvidence, ...]:
    """Evidence for every dialogue window of the semantic scores."""
    _check_mode(mode)
    out = []
    for w in scores.dialogue_windows:
        window = (w.first_segment, w.last_segment)
        z_a = acoustic_dialogue_flag(result, window)
        d_p, d_q = dispersion_stats(result, session, window)
        if mode == "multimodal":
            s_hat, z = fuse_dialogue(w.z_semantic, z_a, w.p_s, d_p, d_q, params)
        elif mode == "semantic":
            s_hat, z = w.p_s, w.z_semantic
        else:
            s_hat, z = float(z_a), z_a
        out.append(DialogueEvidence(window, w.z_semantic, z_a, w.p_s, d_p, d_q, float(s_hat), z))
    return tuple(out)


def turn_evidence(
    result: ClusteringResult,
    session: Session,
    scores,
    params: FusionParams = FusionParams(),
    mode: str = "multimodal",
    window_s: float = DEFAULTS["acoustic_window_s"],
    external=None,
) -> tuple[TurnEvidence, ...]:
    """Evidence for every internal boundary, fused according to ``mode``."""
    _check_mode(mode)
    semantic = scores.turn_prob_by_boundary() if scores is not None else {}
    out = []
    for n in range(1, len(session)):
        q = acoustic_turn_prob(result, session, n, window_s, external)
        if mode == "acoustic":
            p = semantic.get(n, 0.0)
            fused = q
        else:
            if n not in semantic:
                raise ConfigurationError(f"no semantic turn probability for boundary after segment {n}")
            p = semantic[n]
            fused = p if mode == "semantic" else fuse_turn(p, q, params)
        out.append(TurnEvidence(n, p, q, fused))
    return tuple(out)


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")


# -- parameter fitting ---------------------------------------------------------


def _f1(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """F1 along the last axis; 1.0 when there is nothing to find and nothing found."""
    tp = (pred & truth).sum(-1)
    fp = (pred & ~truth).sum(-1)
    fn = (~pred & truth).sum(-1)
    denom = 2 * tp + fp + fn
    return np.where(denom == 0, 1.0, 2 * tp / np.maximum(denom, 1))


def fit_dialogue_params(z_s, z_a, p_s, d_p, d_q, truth, grid=GRID):
    """Grid search of ``(alpha1, alpha2, theta)`` maximizing window F1.

    Returns ``(alpha1, alpha2, theta, f1)``; the first grid point wins ties.
    """
    z_s, z_a, p_s, d_p, d_q = (np.asarray(v, dtype=float) for v in (z_s, z_a, p_s, d_p, d_q))
    truth = np.asarray(truth, dtype=bool)
    a1 = grid[:, None, None]
    a2 = grid[None, :, None]
    s_hat = z_a * z_s + z_a * (p_s + a1 * d_p) + z_s * (p_s + a2 * d_q)
    pred = s_hat[:, :, None, :] > grid[None, None, :, None]
    f1 = _f1(pred, truth)
    i, j, k = np.unravel_index(int(np.argmax(f1)), f1.shape)
    return float(grid[i]), float(grid[j]), float(grid[k]), float(f1[i, j, k])


def fit_turn_params(p, q, truth, grid=GRID):
    """Grid search of ``(beta1, beta2, turn_threshold)`` maximizing boundary F1."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    thresholds = grid[(grid > 0) & (grid < 1)]
    fused = grid[:, None, None] * p + grid[None, :, None] * q
    pred = fused[:, :, None, :] > thresholds[None, None, :, None]
    f1 = _f1(pred, truth)
    valid = (grid[:, None] + grid[None, :]) > 0
    f1 = np.where(valid[:, :, None], f1, -1.0)
    i, j, k = np.unravel_index(int(np.argmax(f1)), f1.shape)
    return float(grid[i]), float(grid[j]), float(thresholds[k]), float(f1[i, j, k])


def fit_fusion_params(dev: Sequence[dict]) -> dict:
    """Fit all fusion parameters on pooled dev-set evidence.

    Each item of ``dev`` holds arrays ``z_s, z_a, p_s, d_p, d_q,
    dialogue_truth`` (one entry per window) and ``p, q, turn_truth`` (one
    entry per boundary).
    """
    if not dev:
        raise ConfigurationError("empty dev set")

    def pool(key):
        return np.concatenate([np.asarray(d[key], dtype=float) for d in dev])

    a1, a2, theta, dd_f1 = fit_dialogue_params(
        pool("z_s"), pool("z_a"), pool("p_s"), pool("d_p"), pool("d_q"), pool("dialogue_truth") > 0
    )
    b1, b2, thr, turn_f1 = fit_turn_params(pool("p"), pool("q"), pool("turn_truth") > 0)
    return {
        "alpha1": a1,
        "alpha2": a2,
        "theta": theta,
        "beta1": b1,
        "beta2": b2,
        "turn_threshold": thr,
        "dev_dialogue_f1": dd_f1,
        "dev_turn_f1": turn_f1,
    }


def dev_evidence(result: ClusteringResult, session: Session, scores, truth: Sequence) -> dict:
    """Evidence arrays of one session for :func:`fit_fusion_params`.

    ``truth`` gives the reference speaker of every segment. Acoustic terms
    come from ``result`` as clustered, before any window re-adjustment,
    since re-adjustment itself depends on the parameters being fitted.
    """
    if len(truth) != len(session):
        raise ConfigurationError("truth must give one speaker per segment")
    out = {k: [] for k in ("z_s", "z_a", "p_s", "d_p", "d_q", "dialogue_truth", "p", "q", "turn_truth")}
    for w in scores.dialogue_windows:
        window = (w.first_segment, w.last_segment)
        d_p, d_q = dispersion_stats(result, session, window)
        out["z_s"].append(w.z_semantic)
        out["z_a"].append(acoustic_dialogue_flag(result, window))
        out["p_s"].append(w.p_s)
        out["d_p"].append(d_p)
        out["d_q"].append(d_q)
        out["dialogue_truth"].append(int(len(set(truth[w.first_segment - 1:w.last_segment])) > 1))
    semantic = scores.turn_prob_by_boundary()
    for n in range(1, len(session)):
        if n not in semantic:
            raise ConfigurationError(f"no semantic turn probability for boundary after segment {n}")
        out["p"].append(semantic[n])
        out["q"].append(acoustic_turn_prob(result, session, n))
        out["turn_truth"].append(int(truth[n - 1] != truth[n]))
    return out
