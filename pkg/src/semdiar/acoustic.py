"""Acoustic-only diarization and the acoustic evidence used for fusion.

Spectral clustering on a row-percentile-refined cosine affinity:

1. ``A[i, j] = (1 + cos(e_i, e_j)) / 2`` over segments long enough to cluster.
2. Per row, entries below the row's p-percentile are damped by 0.01, then the
   matrix is symmetrized and its diagonal reset to 1.
3. The speaker count is the largest eigen-gap of the symmetric normalized
   Laplacian (capped by ``k_max``).
4. Rows of the first k eigenvectors, row-normalized, are grouped by seeded
   k-means++ (best of ``restarts``).

Short segments are left out of steps 1-4 and then given the label of the
closest centroid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ConfigurationError, Session, ValidationError, canonical_labels
from .defaults import DEFAULTS

DAMPING = 0.01


@dataclass(frozen=True, eq=False)
class AffinityMatrix:
    values: np.ndarray
    segment_ids: tuple[int, ...]

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] != len(self.segment_ids):
            raise ValidationError("affinity must be square and match its segment ids")

    @property
    def n(self) -> int:
        return len(self.segment_ids)


@dataclass(frozen=True, eq=False)
class ClusteringResult:
    """Labels for every segment of a session (0 = excluded, not yet assigned)."""

    labels: tuple[int, ...]
    k: int
    centroids: np.ndarray
    excluded: tuple[int, ...] = ()

    def label_of(self, segment_id: int) -> int:
        return self.labels[segment_id - 1]

    def window_labels(self, window: tuple[int, int]) -> tuple[int, ...]:
        first, last = window
        if not 1 <= first <= last <= len(self.labels):
            raise ValidationError(f"window {window} outside the session")
        return self.labels[first - 1:last]


def clusterable_ids(session: Session, min_segment_s: float) -> tuple[int, ...]:
    return tuple(s.id for s in session.segments if s.duration >= min_segment_s)


def cosine_affinity(x: np.ndarray) -> np.ndarray:
    xn = x / np.linalg.norm(x, axis=1, keepdims=True)
    a = (1.0 + xn @ xn.T) / 2.0
    np.clip(a, 0.0, 1.0, out=a)
    a = (a + a.T) / 2.0
    np.fill_diagonal(a, 1.0)
    return a


def build_affinity(session: Session, min_segment_s: float = DEFAULTS["min_segment_s"]) -> AffinityMatrix:
    ids = clusterable_ids(session, min_segment_s)
    if not ids:
        raise ValidationError(
            f"no segment is at least {min_segment_s} s long; nothing to cluster"
        )
    x = session.embedding_matrix[np.array(ids) - 1]
    return AffinityMatrix(cosine_affinity(x), ids)


def _distinct_percentile(m: np.ndarray, p: float) -> np.ndarray:
    """Per-row percentile over the row's distinct values.

    Repeated values would otherwise let a plateau of equal entries swallow
    the cut, so nothing below it gets damped (identical embeddings).
    """
    s = np.sort(m, axis=1)
    repeat = np.zeros_like(s, dtype=bool)
    repeat[:, 1:] = s[:, 1:] == s[:, :-1]
    distinct = np.take_along_axis(s, np.argsort(repeat, axis=1, kind="stable"), axis=1)
    count = (~repeat).sum(axis=1)
    pos = p * (count - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, count - 1)
    rows = np.arange(len(s))
    v_lo, v_hi = distinct[rows, lo], distinct[rows, hi]
    return v_lo + (pos - lo) * (v_hi - v_lo)


def refine_affinity(a: AffinityMatrix, p_percentile: float = DEFAULTS["p_percentile"]) -> AffinityMatrix:
    if not 0.0 < p_percentile < 1.0:
        raise ConfigurationError("p_percentile must lie in (0, 1)")
    m = np.array(a.values, dtype=float)
    cut = _distinct_percentile(m, p_percentile)
    m = np.where(m < cut[:, None], m * DAMPING, m)
    m = (m + m.T) / 2.0
    np.fill_diagonal(m, 1.0)
    return AffinityMatrix(m, a.segment_ids)


def normalized_laplacian(a: np.ndarray) -> np.ndarray:
    deg = a.sum(axis=1)
    inv = 1.0 / np.sqrt(deg)
    lap = np.eye(len(a)) - inv[:, None] * a * inv[None, :]
    return (lap + lap.T) / 2.0


def _eigengap_count(eigvals: np.ndarray, k_max: int) -> int:
    n = len(eigvals)
    if n == 1:
        return 1
    upper = min(k_max, n - 1)
    gaps = np.diff(eigvals[: upper + 1])
    return int(np.argmax(gaps)) + 1


def estimate_speaker_count(a: AffinityMatrix, k_max: int = DEFAULTS["k_max"]) -> int:
    """Position of the largest gap between ascending Laplacian eigenvalues."""
    if k_max < 1:
        raise ConfigurationError("k_max must be >= 1")
    if a.n == 1:
        return 1
    eigvals = np.linalg.eigvalsh(normalized_laplacian(a.values))
    return _eigengap_count(eigvals, k_max)


def kmeans(
    x: np.ndarray,
    k: int,
    seed: int = 0,
    restarts: int = DEFAULTS["kmeans_restarts"],
    max_iter: int = DEFAULTS["kmeans_max_iter"],
    tol: float = DEFAULTS["kmeans_tol"],
) -> np.ndarray:
    """Seeded k-means++ with all restarts run as one batched computation.

    Returns labels in ``0..k-1`` for the restart with the lowest inertia
    (first one on ties).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if not 1 <= k <= n:
        raise ConfigurationError(f"cannot form {k} clusters from {n} points")
    if k == 1:
        return np.zeros(n, dtype=int)
    rng = np.random.default_rng(seed)
    r = restarts

    centers = np.empty((r, k, x.shape[1]))
    first = rng.integers(n, size=r)
    centers[:, 0] = x[first]
    d2 = ((x[None, :, :] - centers[:, 0][:, None, :]) ** 2).sum(-1)
    for c in range(1, k):
        total = d2.sum(axis=1, keepdims=True)
        probs = np.where(total > 0, d2 / np.where(total > 0, total, 1.0), 1.0 / n)
        cdf = np.cumsum(probs, axis=1)
        u = rng.random(r)[:, None] * cdf[:, -1:]
        pick = np.minimum((cdf < u).sum(axis=1), n - 1)
        centers[:, c] = x[pick]
        d2 = np.minimum(d2, ((x[None, :, :] - centers[:, c][:, None, :]) ** 2).sum(-1))

    active = np.ones(r, dtype=bool)
    prev = np.full(r, np.inf)
    labels = np.zeros((r, n), dtype=int)
    inertia = np.zeros(r)
    for _ in range(max_iter):
        dist = ((x[None, :, None, :] - centers[:, None, :, :]) ** 2).sum(-1)
        new_labels = dist.argmin(axis=2)
        labels[active] = new_labels[active]
        inertia[active] = np.take_along_axis(dist, new_labels[:, :, None], 2)[:, :, 0].sum(1)[active]
        onehot = np.eye(k)[labels]
        counts = onehot.sum(axis=1)
        sums = np.einsum("rnk,nd->rkd", onehot, x)
        upd = np.where(counts[:, :, None] > 0, sums / np.maximum(counts, 1)[:, :, None], centers)
        centers[active] = upd[active]
        done = np.isfinite(prev) & (np.abs(prev - inertia) <= tol * np.maximum(prev, 1e-300))
        prev = inertia.copy()
        active &= ~done
        if not active.any():
            break
    best = int(np.argmin(inertia))
    return labels[best]


def _centroids(x: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    cents = np.zeros((k, x.shape[1]))
    for c in range(k):
        m = x[labels == c].sum(axis=0)
        cents[c] = m / np.linalg.norm(m)
    return cents


def spectral_cluster(
    session: Session,
    p_percentile: float = DEFAULTS["p_percentile"],
    k_max: int = DEFAULTS["k_max"],
    k_fixed: Optional[int] = None,
    min_segment_s: float = DEFAULTS["min_segment_s"],
    seed: int = DEFAULTS["seed"],
    restarts: int = DEFAULTS["kmeans_restarts"],
) -> ClusteringResult:
    """Acoustic-only diarization of a session.

    The clusterable embeddings are put in a canonical (lexicographic) order
    before any seeded step, so the partition does not depend on the order
    in which segments were supplied.
    """
    aff = build_affinity(session, min_segment_s)
    ids = np.array(aff.segment_ids)
    x = session.embedding_matrix[ids - 1]
    order = np.lexsort(x.T[::-1])
    xc = x[order]
    refined = refine_affinity(AffinityMatrix(cosine_affinity(xc), tuple(ids[order])), p_percentile)
    n = len(xc)

    if k_fixed is not None:
        if not 1 <= k_fixed <= n:
            raise ConfigurationError(f"k_fixed={k_fixed} but only {n} clusterable segments")
        k = int(k_fixed)
    else:
        k = estimate_speaker_count(refined, min(k_max, n))
    if k == 1:
        lab_c = np.zeros(n, dtype=int)
    else:
        vals, vecs = np.linalg.eigh(normalized_laplacian(refined.values))
        emb = vecs[:, :k]
        emb = emb / np.maximum(np.linalg.norm(emb, axis=1, keepdims=True), 1e-12)
        lab_c = kmeans(emb, k, seed=seed, restarts=restarts)
    lab = np.empty(n, dtype=int)
    lab[order] = lab_c
    used = sorted(set(lab.tolist()), key=lambda c: int(np.argmax(lab == c)))
    remap = {c: i + 1 for i, c in enumerate(used)}
    lab = np.array([remap[c] for c in lab])
    k = len(used)
    cents = _centroids(x, lab - 1, k)

    full = [0] * len(session)
    for sid, l in zip(ids.tolist(), lab.tolist()):
        full[sid - 1] = l
    excluded = tuple(sorted(set(range(1, len(session) + 1)) - set(ids.tolist())))
    result = assign_outliers(ClusteringResult(tuple(full), k, cents, excluded), session)
    return _canonical(result)


def _canonical(result: ClusteringResult) -> ClusteringResult:
    new = canonical_labels(result.labels)
    order = {}
    for old, nw in zip(result.labels, new):
        order.setdefault(nw, old)
    cents = np.array([result.centroids[order[c] - 1] for c in range(1, len(order) + 1)])
    cents.setflags(write=False)
    return ClusteringResult(new, result.k, cents, result.excluded)


def assign_outliers(result: ClusteringResult, session: Session) -> ClusteringResult:
    """Give each excluded segment the label of its nearest centroid.

    Centroids are not updated; ties go to the lowest label.
    """
    if len(result.centroids) == 0:
        raise ValidationError("no centroids to assign outliers to")
    if not result.excluded:
        return result
    labels = list(result.labels)
    cents = result.centroids / np.linalg.norm(result.centroids, axis=1, keepdims=True)
    for sid in result.excluded:
        e = session.embedding_matrix[sid - 1]
        dist = 1.0 - cents @ (e / np.linalg.norm(e))
        labels[sid - 1] = int(np.argmin(dist)) + 1
    return ClusteringResult(tuple(labels), result.k, result.centroids, result.excluded)


def dispersion_stats(result: ClusteringResult, session: Session, window: tuple[int, int]) -> tuple[float, float]:
    """Cluster spread ``d_p`` and embedding spread ``d_q`` inside a window.

    ``d_p`` is the largest cosine distance from the centroid of the most
    populated cluster in the window (lowest label on ties) to the centroid of
    any cluster present. ``d_q`` is the population standard deviation of all
    pairwise cosine distances between the window's segment embeddings.
    """
    labels = [l for l in result.window_labels(window) if l > 0]
    d_p = 0.0
    if labels:
        counts: dict[int, int] = {}
        for l in labels:
            counts[l] = counts.get(l, 0) + 1
        largest = min(counts, key=lambda l: (-counts[l], l))
        cents = result.centroids / np.linalg.norm(result.centroids, axis=1, keepdims=True)
        ref = cents[largest - 1]
        d_p = max(float(np.clip(1.0 - ref @ cents[l - 1], 0.0, 2.0)) for l in counts)
    first, last = window
    x = session.embedding_matrix[first - 1:last]
    if len(x) < 2:
        return d_p, 0.0
    xn = x / np.linalg.norm(x, axis=1, keepdims=True)
    iu = np.triu_indices(len(x), k=1)
    dists = np.clip(1.0 - (xn @ xn.T)[iu], 0.0, 2.0)
    return d_p, float(np.std(dists))


def acoustic_dialogue_flag(result: ClusteringResult, window: tuple[int, int]) -> int:
    return int(len(set(result.window_labels(window))) > 1)


def acoustic_turn_prob(
    result: ClusteringResult,
    session: Session,
    boundary_after_segment: int,
    window_s: float = DEFAULTS["acoustic_window_s"],
    external=None,
) -> float:
    """Acoustic speaker-change score at the boundary after a segment.

    With ``external`` (an :class:`~semdiar.ingest.AcousticTurnProbs`), the
    maximum supplied probability within ``window_s`` of the boundary time,
    or 0 when none falls inside. Otherwise 1 when the cluster labels differ
    across the boundary, else one minus the affinity of the two segments.
    """
    n = boundary_after_segment
    if not 1 <= n < len(session):
        raise ValidationError(f"no boundary after segment {n}")
    if external is not None:
        t = session.boundary_time(n)
        times = np.asarray(external.times)
        probs = np.asarray(external.probs)
        inside = np.abs(times - t) <= window_s
        return float(probs[inside].max()) if inside.any() else 0.0
    if result.labels[n - 1] != result.labels[n]:
        return 1.0
    e = session.embedding_matrix
    cos = float(e[n - 1] @ e[n]) / float(np.linalg.norm(e[n - 1]) * np.linalg.norm(e[n]))
    return float(np.clip(1.0 - (1.0 + cos) / 2.0, 0.0, 1.0))
