"""Speaker-attributed word error rates.

* ``wer``: plain Levenshtein WER with insertion/substitution/deletion counts.
* ``cpwer``: per-speaker concatenation, minimized over speaker mappings.
  ``matched`` ignores the words of speakers left without a partner,
  ``all`` counts them as deletions (reference side) or insertions
  (hypothesis side).
* ``speaker_wer``: counts only speaker-ID modifications on top of an
  optimal text alignment, so ASR token errors contribute nothing.

Transcripts are sequences of ``(token, speaker)`` pairs in spoken order.
``ReferenceTranscript`` objects from :mod:`semdiar.ingest` work as well.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import ValidationError

EXACT_SPEAKER_LIMIT = 8
ORACLE_MAX_SPEAKERS = 5
ORACLE_MAX_WORDS = 30


@dataclass
class AlignmentCounts:
    n_ins: int = 0
    n_subs: int = 0
    n_del: int = 0
    n_total: int = 0
    n_spk_cost: int = 0

    @property
    def errors(self) -> int:
        return self.n_ins + self.n_subs + self.n_del

    def __add__(self, other: "AlignmentCounts") -> "AlignmentCounts":
        return AlignmentCounts(
            self.n_ins + other.n_ins,
            self.n_subs + other.n_subs,
            self.n_del + other.n_del,
            self.n_total + other.n_total,
            self.n_spk_cost + other.n_spk_cost,
        )


@dataclass
class WerResult:
    e_wer: float
    counts: AlignmentCounts


@dataclass
class CpwerResult:
    variant: str
    error_rate: float
    best_permutation: dict
    counts: AlignmentCounts
    approximate: bool = False


@dataclass
class SpeakerWerResult:
    e_speaker_wer: float
    n_spk_cost: int
    n_total: int
    best_permutation: dict
    approximate: bool = False


@dataclass
class MetricsReport:
    session_id: str
    e_wer: float
    e_cp_matched: float
    e_cp_all: float
    e_speaker_wer: float
    best_permutation: dict
    counts: dict = field(default_factory=dict)
    approximate: bool = False
    variant: str = "matched"
    matched_denominator: str = "full"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["counts"] = {k: asdict(v) for k, v in self.counts.items()}
        return d


def _pairs(transcript) -> list[tuple[str, str]]:
    words = getattr(transcript, "words", transcript)
    out = []
    for w in words:
        if isinstance(w, tuple):
            out.append((str(w[0]), str(w[1])))
        else:
            out.append((w.token, str(w.speaker)))
    return out


def _encode(*seqs: Sequence[str]) -> list[np.ndarray]:
    vocab: dict[str, int] = {}
    return [
        np.array([vocab.setdefault(t, len(vocab)) for t in s], dtype=np.int64)
        for s in seqs
    ]


def _levenshtein_table(ref: np.ndarray, hyp: np.ndarray) -> np.ndarray:
    """Full DP table, one vectorized row at a time."""
    n, m = len(ref), len(hyp)
    ramp = np.arange(m + 1)
    table = np.empty((n + 1, m + 1), dtype=np.int64)
    table[0] = ramp
    for i in range(1, n + 1):
        prev = table[i - 1]
        t = prev + 1
        np.minimum(t[1:], prev[:-1] + (hyp != ref[i - 1]), out=t[1:])
        t[0] = i
        table[i] = np.minimum.accumulate(t - ramp) + ramp
    return table


def _edit_distances(ref: np.ndarray, hyps: Sequence[np.ndarray]) -> np.ndarray:
    """Edit distance of ``ref`` against every stream in ``hyps`` at once.

    Streams are right-padded with ``-1`` (never a token code); a DP cell only
    depends on cells to its left and above, so reading each row at the
    stream's own length is exact.
    """
    lens = np.array([len(h) for h in hyps], dtype=np.int64)
    if len(hyps) == 0:
        return lens
    if len(ref) == 0:
        return lens
    width = int(lens.max())
    pad = np.full((len(hyps), width), -1, dtype=np.int64)
    for k, h in enumerate(hyps):
        pad[k, : len(h)] = h
    ramp = np.arange(width + 1)
    row = np.tile(ramp, (len(hyps), 1))
    for i in range(1, len(ref) + 1):
        t = row + 1
        np.minimum(t[:, 1:], row[:, :-1] + (pad != ref[i - 1]), out=t[:, 1:])
        t[:, 0] = i
        row = np.minimum.accumulate(t - ramp, axis=1) + ramp
    return row[np.arange(len(hyps)), lens]


def _traceback(table: np.ndarray, ref: np.ndarray, hyp: np.ndarray):
    """Walk back one optimal path; returns counts and matched (i, j) pairs.

    Ties prefer a match, then deletion, then insertion, then substitution.
    """
    i, j = len(ref), len(hyp)
    ins = subs = dels = 0
    matches = []
    while i > 0 or j > 0:
        cur = table[i, j]
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and cur == table[i - 1, j - 1]:
            matches.append((i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and cur == table[i - 1, j] + 1:
            dels += 1
            i -= 1
        elif j > 0 and cur == table[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            subs += 1
            i, j = i - 1, j - 1
    matches.reverse()
    return ins, subs, dels, matches


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> WerResult:
    """Word error rate ``(ins + subs + del) / len(reference)``."""
    if len(reference) == 0:
        raise ValidationError("reference is empty; WER is undefined")
    ref, hyp = _encode(list(reference), list(hypothesis))
    table = _levenshtein_table(ref, hyp)
    ins, subs, dels, _ = _traceback(table, ref, hyp)
    counts = AlignmentCounts(ins, subs, dels, len(ref))
    return WerResult(counts.errors / counts.n_total, counts)


def _by_speaker(pairs: list[tuple[str, str]]) -> dict[str, list[str]]:
    streams: dict[str, list[str]] = {}
    for tok, spk in pairs:
        streams.setdefault(spk, []).append(tok)
    return streams


def _candidate_mappings(n_ref: int, n_hyp: int):
    """All maximum-cardinality injective speaker mappings as (r, h) pairs."""
    if n_ref <= n_hyp:
        for perm in itertools.permutations(range(n_hyp), n_ref):
            yield tuple(zip(range(n_ref), perm))
    else:
        for perm in itertools.permutations(range(n_ref), n_hyp):
            yield tuple(sorted(zip(perm, range(n_hyp))))


def _score_mapping(pairs_rh, cost, ref_len, hyp_len, variant, matched_denominator):
    n_total = int(ref_len.sum())
    errors = sum(int(cost[r, h]) for r, h in pairs_rh)
    matched_ref = sum(int(ref_len[r]) for r, _ in pairs_rh)
    if variant == "all":
        used_h = {h for _, h in pairs_rh}
        unmatched_ref = n_total - matched_ref
        unmatched_hyp = sum(int(hyp_len[h]) for h in range(len(hyp_len)) if h not in used_h)
        return errors + unmatched_ref + unmatched_hyp, n_total
    if matched_denominator == "matched" and matched_ref > 0:
        return errors, matched_ref
    return errors, n_total


def _check_variant(variant, matched_denominator):
    if variant not in ("matched", "all"):
        raise ValueError(f"unknown cpWER variant {variant!r}")
    if matched_denominator not in ("full", "matched"):
        raise ValueError(f"unknown matched_denominator {matched_denominator!r}")


@dataclass(frozen=True, eq=False)
class _Prepared:
    """Per-speaker streams and their pairwise edit distances."""

    ref_spk: list
    hyp_spk: list
    ref_enc: list
    hyp_enc: list
    ref_len: np.ndarray
    hyp_len: np.ndarray
    cost: np.ndarray


def _prepare(reference, hypothesis) -> _Prepared:
    ref_pairs, hyp_pairs = _pairs(reference), _pairs(hypothesis)
    if not ref_pairs:
        raise ValidationError("reference is empty; cpWER is undefined")
    ref_streams, hyp_streams = _by_speaker(ref_pairs), _by_speaker(hyp_pairs)
    encoded = _encode(*ref_streams.values(), *hyp_streams.values())
    ref_enc, hyp_enc = encoded[: len(ref_streams)], encoded[len(ref_streams):]
    cost = np.array(
        [_edit_distances(r, hyp_enc) for r in ref_enc], dtype=np.int64
    ).reshape(len(ref_enc), len(hyp_enc))
    return _Prepared(
        list(ref_streams),
        list(hyp_streams),
        ref_enc,
        hyp_enc,
        np.array([len(x) for x in ref_enc], dtype=np.int64),
        np.array([len(x) for x in hyp_enc], dtype=np.int64),
        cost,
    )


def cpwer_variants(reference, hypothesis, matched_denominator: str = "full") -> dict[str, "CpwerResult"]:
    """Both cpWER variants from one pairwise distance computation."""
    _check_variant("matched", matched_denominator)
    prep = _prepare(reference, hypothesis)
    return {
        "matched": _cpwer_from(prep, "matched", matched_denominator),
        "all": _cpwer_from(prep, "all", "full"),
    }


def cpwer(
    reference,
    hypothesis,
    variant: str = "matched",
    matched_denominator: str = "full",
) -> CpwerResult:
    """Concatenated minimum-permutation WER.

    Parameters
    ----------
    reference, hypothesis
        ``(token, speaker)`` sequences.
    variant
        ``"matched"`` or ``"all"``.
    matched_denominator
        For ``matched`` only: ``"full"`` divides by every reference word,
        ``"matched"`` only by the words of reference speakers that received
        a hypothesis partner.

    Mappings are searched exhaustively up to ``EXACT_SPEAKER_LIMIT``
    speakers per side; beyond that a linear assignment on the pairwise
    error matrix is used and ``approximate`` is set.
    """
    _check_variant(variant, matched_denominator)
    return _cpwer_from(_prepare(reference, hypothesis), variant, matched_denominator)


def _cpwer_from(prep: _Prepared, variant: str, matched_denominator: str) -> CpwerResult:
    ref_spk, hyp_spk = prep.ref_spk, prep.hyp_spk
    ref_enc, hyp_enc = prep.ref_enc, prep.hyp_enc
    ref_len, hyp_len, cost = prep.ref_len, prep.hyp_len, prep.cost

    approximate = max(len(ref_spk), len(hyp_spk)) > EXACT_SPEAKER_LIMIT
    if approximate:
        best = _assignment_mapping(cost, ref_len, hyp_len, variant)
        err, denom = _score_mapping(best, cost, ref_len, hyp_len, variant, matched_denominator)
    else:
        best, err, denom = (), None, None
        best_rate = None
        for mapping in _candidate_mappings(len(ref_spk), len(hyp_spk)):
            e, d = _score_mapping(mapping, cost, ref_len, hyp_len, variant, matched_denominator)
            rate = e / d
            if best_rate is None or rate < best_rate:
                best, err, denom, best_rate = mapping, e, d, rate

    counts = AlignmentCounts(n_total=denom)
    for r, h in best:
        table = _levenshtein_table(ref_enc[r], hyp_enc[h])
        ins, subs, dels, _ = _traceback(table, ref_enc[r], hyp_enc[h])
        counts.n_ins += ins
        counts.n_subs += subs
        counts.n_del += dels
    if variant == "all":
        used_r = {r for r, _ in best}
        used_h = {h for _, h in best}
        counts.n_del += int(sum(ref_len[r] for r in range(len(ref_len)) if r not in used_r))
        counts.n_ins += int(sum(hyp_len[h] for h in range(len(hyp_len)) if h not in used_h))
    assert counts.errors == err
    mapping = {hyp_spk[h]: ref_spk[r] for r, h in best}
    return CpwerResult(variant, err / denom, mapping, counts, approximate)


def _assignment_mapping(cost, ref_len, hyp_len, variant):
    n_ref, n_hyp = cost.shape
    if variant == "all":
        # square problem: a dummy partner costs the words left unmatched
        k = n_ref + n_hyp
        big = np.zeros((k, k), dtype=np.int64)
        big[:n_ref, :n_hyp] = cost
        big[:n_ref, n_hyp:] = ref_len[:, None]
        big[n_ref:, :n_hyp] = hyp_len[None, :]
        rows, cols = linear_sum_assignment(big)
        return tuple((r, c) for r, c in zip(rows, cols) if r < n_ref and c < n_hyp)
    rows, cols = linear_sum_assignment(cost)
    return tuple(zip(rows.tolist(), cols.tolist()))


def speaker_wer(reference, hypothesis) -> SpeakerWerResult:
    """Rate of speaker-ID modifications after an optimal text alignment.

    For every speaker mapping, the (token, speaker) sequences are aligned
    with a lexicographic cost: token edits first, speaker modifications
    (token matches whose mapped speaker differs) second. The text
    alignment is therefore always a minimum-WER alignment.
    """
    ref_pairs, hyp_pairs = _pairs(reference), _pairs(hypothesis)
    if not ref_pairs:
        raise ValidationError("reference is empty; speaker-WER is undefined")
    n = len(ref_pairs)
    ref_spk = list(dict.fromkeys(s for _, s in ref_pairs))
    hyp_spk = list(dict.fromkeys(s for _, s in hyp_pairs))
    if not hyp_pairs:
        return SpeakerWerResult(0.0, 0, n, {}, False)
    ref_tok, hyp_tok = _encode([t for t, _ in ref_pairs], [t for t, _ in hyp_pairs])
    r_index = {s: k for k, s in enumerate(ref_spk)}
    h_index = {s: k for k, s in enumerate(hyp_spk)}
    ref_sid = np.array([r_index[s] for _, s in ref_pairs])
    hyp_sid = np.array([h_index[s] for _, s in hyp_pairs])

    if max(len(ref_spk), len(hyp_spk)) > EXACT_SPEAKER_LIMIT:
        return _speaker_wer_assignment(ref_tok, hyp_tok, ref_sid, hyp_sid, ref_spk, hyp_spk)

    maps = _hyp_to_ref_maps(len(ref_spk), len(hyp_spk))
    cells = _optimal_cells(ref_tok, hyp_tok)
    big = n + len(hyp_tok) + 1
    chunk_size = 512 if cells is None else max(1, 2**22 // len(cells[0]))
    best_cost, best_map = None, None
    for start in range(0, len(maps), chunk_size):
        chunk = maps[start:start + chunk_size]
        if cells is None:
            final = _lexicographic_dp(ref_tok, hyp_tok, ref_sid, chunk[:, hyp_sid], big) % big
        else:
            final = _speaker_mods_on_cells(cells, ref_tok, hyp_tok, ref_sid, chunk[:, hyp_sid])
        k = int(np.argmin(final))
        if best_cost is None or final[k] < best_cost:
            best_cost, best_map = int(final[k]), chunk[k]
    spk_cost = best_cost
    mapping = {hyp_spk[h]: ref_spk[r] for h, r in enumerate(best_map) if r >= 0}
    return SpeakerWerResult(spk_cost / n, spk_cost, n, mapping, False)


def _hyp_to_ref_maps(n_ref: int, n_hyp: int) -> np.ndarray:
    """Rows map each hypothesis speaker to a reference speaker or -1."""
    rows = []
    if n_hyp <= n_ref:
        for perm in itertools.permutations(range(n_ref), n_hyp):
            rows.append(perm)
    else:
        for perm in itertools.permutations(range(n_hyp), n_ref):
            row = [-1] * n_hyp
            for r, h in enumerate(perm):
                row[h] = r
            rows.append(row)
    return np.array(rows, dtype=np.int64).reshape(len(rows), n_hyp)


SPARSE_CELL_LIMIT = 50_000


def _optimal_cells(ref_tok, hyp_tok):
    """DP cells lying on at least one minimum-edit alignment, in row-major order.

    Returns ``(i, j)`` index arrays, or ``None`` when there are more than
    ``SPARSE_CELL_LIMIT`` of them and the dense DP is cheaper.
    """
    fwd = _levenshtein_table(ref_tok, hyp_tok)
    bwd = _levenshtein_table(ref_tok[::-1], hyp_tok[::-1])[::-1, ::-1]
    on_path = fwd + bwd == fwd[-1, -1]
    if int(on_path.sum()) > SPARSE_CELL_LIMIT:
        return None
    i, j = np.nonzero(on_path)
    return i, j, fwd


def _speaker_mods_on_cells(cells, ref_tok, hyp_tok, ref_sid, hyp_mapped):
    """Fewest speaker modifications over minimum-edit alignments, per mapping.

    Walks the cells of :func:`_optimal_cells` in row-major order, which is a
    topological order of the alignment graph, and only follows steps that
    keep the token-edit count optimal.
    """
    ii, jj, fwd = cells
    slot = {(int(a), int(b)): k for k, (a, b) in enumerate(zip(ii, jj))}
    best = np.empty((len(ii), hyp_mapped.shape[0]), dtype=np.int64)
    for k, (i, j) in enumerate(zip(ii.tolist(), jj.tolist())):
        if i == 0 and j == 0:
            best[k] = 0
            continue
        here = fwd[i, j]
        cand = None
        if i > 0 and j > 0:
            p = slot.get((i - 1, j - 1))
            same = ref_tok[i - 1] == hyp_tok[j - 1]
            if p is not None and fwd[i - 1, j - 1] + (0 if same else 1) == here:
                cand = best[p] + (hyp_mapped[:, j - 1] != ref_sid[i - 1]) if same else best[p]
        for p_cell in ((i - 1, j), (i, j - 1)):
            p = slot.get(p_cell)
            if p is not None and fwd[p_cell] + 1 == here:
                cand = best[p] if cand is None else np.minimum(cand, best[p])
        best[k] = cand
    return best[-1]


def _lexicographic_dp(ref_tok, hyp_tok, ref_sid, hyp_mapped, big):
    """Edit DP with cost ``big * token_edits + speaker_mods``, batched over mappings.

    ``hyp_mapped[p, j]`` is the reference speaker that mapping ``p`` assigns
    to hypothesis word ``j``. Returns the final cost per mapping.
    """
    p, m = hyp_mapped.shape
    ramp = big * np.arange(m + 1)
    row = np.broadcast_to(ramp, (p, m + 1)).copy()
    for i in range(len(ref_tok)):
        same_tok = hyp_tok == ref_tok[i]
        step = np.where(same_tok, (hyp_mapped != ref_sid[i]).astype(np.int64), big)
        t = row + big
        np.minimum(t[:, 1:], row[:, :-1] + step, out=t[:, 1:])
        row = np.minimum.accumulate(t - ramp, axis=1) + ramp
    return row[:, m]


def _speaker_wer_assignment(ref_tok, hyp_tok, ref_sid, hyp_sid, ref_spk, hyp_spk):
    table = _levenshtein_table(ref_tok, hyp_tok)
    _, _, _, matches = _traceback(table, ref_tok, hyp_tok)
    agree = np.zeros((len(hyp_spk), len(ref_spk)), dtype=np.int64)
    for i, j in matches:
        agree[hyp_sid[j], ref_sid[i]] += 1
    rows, cols = linear_sum_assignment(-agree)
    spk_cost = len(matches) - int(agree[rows, cols].sum())
    mapping = {hyp_spk[h]: ref_spk[r] for h, r in zip(rows, cols)}
    n = len(ref_tok)
    return SpeakerWerResult(spk_cost / n, spk_cost, n, mapping, True)


def evaluate(
    reference,
    hypothesis,
    session_id: str = "",
    variant: str = "matched",
    matched_denominator: str = "full",
) -> MetricsReport:
    """All metrics for one session."""
    ref_pairs, hyp_pairs = _pairs(reference), _pairs(hypothesis)
    plain = wer([t for t, _ in ref_pairs], [t for t, _ in hyp_pairs])
    both = cpwer_variants(ref_pairs, hyp_pairs, matched_denominator)
    matched, every = both["matched"], both["all"]
    spk = speaker_wer(ref_pairs, hyp_pairs)
    chosen = matched if variant == "matched" else every
    spk_counts = AlignmentCounts(n_total=spk.n_total, n_spk_cost=spk.n_spk_cost)
    return MetricsReport(
        session_id=session_id,
        e_wer=plain.e_wer,
        e_cp_matched=matched.error_rate,
        e_cp_all=every.error_rate,
        e_speaker_wer=spk.e_speaker_wer,
        best_permutation=chosen.best_permutation,
        counts={
            "wer": plain.counts,
            "cp_matched": matched.counts,
            "cp_all": every.counts,
            "speaker_wer": spk_counts,
        },
        approximate=matched.approximate or every.approximate or spk.approximate,
        variant=variant,
        matched_denominator=matched_denominator,
    )


def aggregate(reports: Iterable[MetricsReport], session_id: str = "corpus") -> MetricsReport:
    """Corpus-level ratios: summed error counts over summed denominators."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to aggregate")
    totals = {}
    for key in ("wer", "cp_matched", "cp_all", "speaker_wer"):
        acc = AlignmentCounts()
        for rep in reports:
            acc = acc + rep.counts[key]
        totals[key] = acc

    def rate(c):
        return c.errors / c.n_total

    return MetricsReport(
        session_id=session_id,
        e_wer=rate(totals["wer"]),
        e_cp_matched=rate(totals["cp_matched"]),
        e_cp_all=rate(totals["cp_all"]),
        e_speaker_wer=totals["speaker_wer"].n_spk_cost / totals["speaker_wer"].n_total,
        best_permutation={},
        counts=totals,
        approximate=any(r.approximate for r in reports),
        variant=reports[0].variant,
        matched_denominator=reports[0].matched_denominator,
    )


def brute_force_cpwer_oracle(
    reference, hypothesis, variant: str = "matched", matched_denominator: str = "full"
) -> float:
    """Reference implementation of cpWER for small inputs.

    Both speaker lists are padded with empty streams to equal length and
    every permutation of the padded hypothesis list is scored, so each
    unmatched speaker is paired with an explicit empty partner. The edit
    distance is a memoized recursion, independent of the vectorized DP.
    """
    _check_variant(variant, matched_denominator)
    ref_pairs, hyp_pairs = _pairs(reference), _pairs(hypothesis)
    if not ref_pairs:
        raise ValidationError("reference is empty")
    ref_streams = [tuple(v) for v in _by_speaker(ref_pairs).values()]
    hyp_streams = [tuple(v) for v in _by_speaker(hyp_pairs).values()]
    if max(len(ref_streams), len(hyp_streams)) > ORACLE_MAX_SPEAKERS:
        raise ValueError("oracle limited to 5 speakers per side")
    if max(len(ref_pairs), len(hyp_pairs)) > ORACLE_MAX_WORDS:
        raise ValueError("oracle limited to 30 words per side")
    k = max(len(ref_streams), len(hyp_streams))
    refs = ref_streams + [None] * (k - len(ref_streams))
    hyps = hyp_streams + [None] * (k - len(hyp_streams))
    n_total = len(ref_pairs)

    best = None
    for perm in itertools.permutations(range(k)):
        errors = 0
        denom = 0
        for r, h in zip(refs, (hyps[p] for p in perm)):
            if r is not None and h is not None:
                errors += _recursive_distance(r, h)
                denom += len(r)
            elif variant == "all":
                errors += len(r or ()) + len(h or ())
        if variant == "all" or matched_denominator == "full" or denom == 0:
            denom = n_total
        rate = errors / denom
        if best is None or rate < best:
            best = rate
    return best


@lru_cache(maxsize=None)
def _recursive_distance(a: tuple, b: tuple) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    if a[0] == b[0]:
        return _recursive_distance(a[1:], b[1:])
    return 1 + min(
        _recursive_distance(a[1:], b),
        _recursive_distance(a, b[1:]),
        _recursive_distance(a[1:], b[1:]),
    )
