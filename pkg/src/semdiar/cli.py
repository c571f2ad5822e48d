"""Command-line interface.

Commands: ``cluster``, ``diarize``, ``eval``, ``synth``, ``fit`` and
``sweep``. Parameter precedence is command-line flag, then ``--params``
file, then the built-in defaults table.

Exit codes: 0 success, 2 input or validation error, 3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional, Sequence

from . import fusion, ingest, metrics, synth
from .acoustic import spectral_cluster
from .core import ConfigurationError, DiarizationError, ValidationError
from .defaults import DEFAULTS
from .refine import PipelineConfig, run_pipeline

log = logging.getLogger("semdiar")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3

# (DEFAULTS key, type, help) per pipeline flag
PIPELINE_FLAGS = (
    ("alpha1", float, "weight of the acoustic dispersion term in the dialogue score"),
    ("alpha2", float, "weight of the embedding-spread term in the dialogue score"),
    ("theta", float, "dialogue score threshold (strict)"),
    ("beta1", float, "weight of the semantic turn probability"),
    ("beta2", float, "weight of the acoustic turn probability"),
    ("turn_threshold", float, "fused turn probability cutoff (strict)"),
    ("tau_split", float, "cosine distance below which a span joins an existing speaker"),
    ("tau_merge", float, "merge cost below which two speakers are merged"),
    ("min_segment_s", float, "segments shorter than this are left out of clustering"),
    ("max_shift_s", float, "boundary correction search radius in seconds"),
    ("split_level", str, "split iteration unit: span or segment"),
    ("p_percentile", float, "row percentile for affinity refinement, in (0, 1)"),
    ("k_max", int, "largest speaker count the eigen-gap may return"),
    ("kmeans_restarts", int, "k-means restarts"),
    ("acoustic_window_s", float, "search radius for external acoustic turn probabilities"),
)


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    """Shows the defaults-table value for flags whose parser default is ``None``."""

    def _get_help_string(self, action):
        text = action.help or ""
        if action.default is None and action.dest in DEFAULTS:
            return f"{text} (default: {DEFAULTS[action.dest]})"
        if action.default is None or "%(default)" in text:
            return text
        return super()._get_help_string(action)


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline parameters (override --params)")
    for name, typ, text in PIPELINE_FLAGS:
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None, help=text)
    g.add_argument("--k-fixed", dest="k_fixed", type=int, default=None, help="force this many speakers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semdiar",
        description="Speaker diarization that fuses acoustic clustering with semantic turn and dialogue cues.",
        formatter_class=_Formatter,
    )
    parser.add_argument("--seed", type=int, default=None, help="random seed")
    parser.add_argument("--params", type=Path, default=None, help="JSON parameter file (overrides defaults)")
    parser.add_argument(
        "--mode", choices=fusion.MODES, default=None, help="pipeline mode (default: params file, else multimodal)"
    )
    parser.add_argument("--jobs", type=int, default=1, help="worker processes, across sessions")
    parser.add_argument("--output-dir", type=Path, default=Path("."), help="directory for written files")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("cluster", help="acoustic-only diarization", formatter_class=_Formatter)
    p.add_argument("sessions", nargs="+", type=Path, help="session JSON files")
    _add_pipeline_flags(p)

    p = sub.add_parser("diarize", help="full pipeline in the selected mode", formatter_class=_Formatter)
    p.add_argument("sessions", nargs="+", type=Path, help="session JSON files")
    p.add_argument("--scores", nargs="+", type=Path, default=None, help="semantic score files, one per session")
    p.add_argument(
        "--acoustic-probs", nargs="+", type=Path, default=None, help="external acoustic turn probabilities, one per session"
    )
    _add_pipeline_flags(p)

    p = sub.add_parser("eval", help="score hypotheses against references", formatter_class=_Formatter)
    p.add_argument("--reference", nargs="+", type=Path, required=True, help="reference files (JSON or RTTM)")
    p.add_argument("--hypothesis", nargs="+", type=Path, required=True, help="hypothesis files, paired by position")
    p.add_argument("--reference-words", nargs="+", type=Path, default=None, help="timed word lists for RTTM references")
    p.add_argument("--hypothesis-words", nargs="+", type=Path, default=None, help="timed word lists for RTTM hypotheses")
    p.add_argument("--variant", choices=("matched", "all"), default="matched", help="cpWER variant for best_permutation")
    p.add_argument(
        "--matched-denominator", choices=("full", "matched"), default="full", help="word count dividing cp-matched errors"
    )
    p.add_argument("--aggregate", action="store_true", help="add a corpus row from summed counts")

    p = sub.add_parser("synth", help="write a synthetic session, scores and reference", formatter_class=_Formatter)
    p.add_argument("--config", type=Path, default=None, help="JSON synthetic config")
    _add_synth_flags(p)

    p = sub.add_parser("fit", help="fit fusion parameters on a dev set", formatter_class=_Formatter)
    p.add_argument("manifest", type=Path, help="JSON list of {session, scores, reference[, reference_words]}")
    _add_pipeline_flags(p)

    p = sub.add_parser("sweep", help="synthetic benchmark over modes and seeds", formatter_class=_Formatter)
    p.add_argument("--config", type=Path, default=None, help="JSON config or list of configs")
    p.add_argument("--seeds", type=int, default=10, help="number of seeds, starting at --seed")
    p.add_argument("--modes", nargs="+", choices=fusion.MODES, default=list(fusion.MODES), help="modes to compare")
    p.add_argument("--no-speaker-wer", action="store_true", help="skip speaker-WER (faster)")
    _add_synth_flags(p)
    _add_pipeline_flags(p)
    return parser


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("synthetic data (override --config)")
    base = synth.SynthConfig()
    for name in (
        "n_speakers", "n_segments", "embedding_dim", "acoustic_noise", "semantic_turn_accuracy",
        "dialogue_accuracy", "turn_rate", "vocab_per_speaker", "token_overlap", "substitution_rate",
    ):
        default = getattr(base, name)
        g.add_argument(
            "--" + name.replace("_", "-"),
            dest="synth_" + name,
            type=type(default),
            default=None,
            help=f"{name.replace('_', ' ')} (default: {default})",
        )


# -- configuration -------------------------------------------------------------


def pipeline_config(args) -> PipelineConfig:
    """Defaults, then the ``--params`` file, then explicit flags."""
    values = ingest.load_params(args.params) if args.params else {}
    for name, _, _ in PIPELINE_FLAGS:
        if getattr(args, name, None) is not None:
            values[name] = getattr(args, name)
    if getattr(args, "k_fixed", None) is not None:
        values["k_fixed"] = args.k_fixed
    if args.seed is not None:
        values["seed"] = args.seed
    return PipelineConfig.from_dict(values, mode=args.mode)


def synth_config(args) -> synth.SynthConfig:
    values = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise ValidationError(f"{args.config}: expected one JSON object")
        values.update(doc)
    for key, val in vars(args).items():
        if key.startswith("synth_") and val is not None:
            values[key[len("synth_"):]] = val
    values["seed"] = _seed(args)
    try:
        return synth.SynthConfig.from_dict(values)
    except ConfigurationError as exc:
        raise ValidationError(f"bad synthetic config: {exc}") from exc


def _seed(args) -> int:
    return DEFAULTS["seed"] if args.seed is None else args.seed


def _paired(items: Optional[Sequence], n: int, what: str) -> list:
    if items is None:
        return [None] * n
    if len(items) != n:
        raise ValidationError(f"expected {n} {what} file(s), got {len(items)}")
    return list(items)


# -- commands ------------------------------------------------------------------


def _diarize_one(task) -> dict:
    session_path, scores_path, probs_path, cfg, out_dir = task
    session = ingest.load_session(session_path)
    scores = ingest.load_semantic_scores(scores_path, session) if scores_path else None
    external = ingest.load_acoustic_probs(probs_path) if probs_path else None
    log.info("diarizing %s (%d segments, mode %s)", session.session_id, len(session), cfg.mode)
    hyp = run_pipeline(session, scores, cfg, external)
    json_path, rttm_path = ingest.write_hypothesis(hyp, session, Path(out_dir) / f"{session.session_id}.json")
    return {
        "session_id": session.session_id,
        "mode": cfg.mode,
        "n_speakers": len(set(hyp.labels)),
        "hypothesis": str(json_path),
        "rttm": str(rttm_path),
    }


def _map(fn, tasks, jobs: int) -> list:
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def cmd_cluster(args) -> int:
    cfg = replace(pipeline_config(args), mode="acoustic")
    out = ingest.ensure_dir(args.output_dir)
    tasks = [(s, None, None, cfg, out) for s in args.sessions]
    _emit({"params": cfg.to_dict(), "sessions": _map(_diarize_one, tasks, args.jobs)})
    return EXIT_OK


def cmd_diarize(args) -> int:
    cfg = pipeline_config(args)
    n = len(args.sessions)
    scores = _paired(args.scores, n, "--scores")
    probs = _paired(args.acoustic_probs, n, "--acoustic-probs")
    if cfg.mode != "acoustic" and args.scores is None:
        raise ConfigurationError(f"mode {cfg.mode!r} needs --scores; use --mode acoustic without semantic scores")
    out = ingest.ensure_dir(args.output_dir)
    tasks = [(s, sc, pr, cfg, out) for s, sc, pr in zip(args.sessions, scores, probs)]
    _emit({"params": cfg.to_dict(), "sessions": _map(_diarize_one, tasks, args.jobs)})
    return EXIT_OK


def _eval_one(task) -> metrics.MetricsReport:
    ref_path, ref_words, hyp_path, hyp_words, variant, denom = task
    ref = ingest.load_reference(ref_path, ref_words)
    hyp = ingest.load_reference(hyp_path, hyp_words)
    return metrics.evaluate(ref, hyp, ref.session_id, variant, denom)


def cmd_eval(args) -> int:
    n = len(args.reference)
    if len(args.hypothesis) != n:
        raise ValidationError(f"{n} reference(s) but {len(args.hypothesis)} hypothesis file(s)")
    ref_words = _paired(args.reference_words, n, "--reference-words")
    hyp_words = _paired(args.hypothesis_words, n, "--hypothesis-words")
    tasks = [
        (r, rw, h, hw, args.variant, args.matched_denominator)
        for r, rw, h, hw in zip(args.reference, ref_words, args.hypothesis, hyp_words)
    ]
    reports = _map(_eval_one, tasks, args.jobs)
    doc = {"sessions": [r.to_dict() for r in reports]}
    if args.aggregate:
        doc["corpus"] = metrics.aggregate(reports).to_dict()
    _emit(doc)
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = synth_config(args)
    data = synth.generate_session(cfg)
    out = ingest.ensure_dir(args.output_dir)
    stem = data.session.session_id
    paths = {
        "session": out / f"{stem}.session.json",
        "scores": out / f"{stem}.scores.json",
        "reference": out / f"{stem}.reference.json",
    }
    ingest.dump_session(data.session, paths["session"])
    ingest.dump_semantic_scores(data.scores, paths["scores"])
    ingest.dump_reference(data.reference, paths["reference"])
    _emit({"config": asdict(cfg), **{k: str(v) for k, v in paths.items()}})
    return EXIT_OK


def _read_manifest(path: Path) -> list[dict]:
    if not Path(path).is_file():
        raise ValidationError(f"{path}: no such manifest")
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    entries = doc.get("sessions") if isinstance(doc, dict) else doc
    if not isinstance(entries, list) or not entries:
        raise ValidationError(f"{path}: the manifest lists no sessions")
    base = Path(path).parent
    out = []
    for k, e in enumerate(entries):
        if not isinstance(e, dict):
            raise ValidationError(f"{path}[{k}]: expected an object")
        item = {}
        for key in ("session", "scores", "reference", "reference_words"):
            if key in e:
                p = Path(e[key])
                item[key] = p if p.is_absolute() else base / p
            elif key != "reference_words":
                raise ValidationError(f"{path}[{k}]: missing {key!r}")
        out.append(item)
    return out


def _fit_one(task) -> dict:
    item, cfg = task
    session = ingest.load_session(item["session"])
    scores = ingest.load_semantic_scores(item["scores"], session)
    reference = ingest.load_reference(item["reference"], item.get("reference_words"))
    truth = ingest.segment_speakers(session, reference)
    result = spectral_cluster(
        session,
        p_percentile=cfg.p_percentile,
        k_max=cfg.k_max,
        k_fixed=cfg.k_fixed,
        min_segment_s=cfg.refine.min_segment_s,
        seed=cfg.seed,
        restarts=cfg.kmeans_restarts,
    )
    return fusion.dev_evidence(result, session, scores, truth)


def cmd_fit(args) -> int:
    cfg = pipeline_config(args)
    entries = _read_manifest(args.manifest)
    dev = _map(_fit_one, [(e, cfg) for e in entries], args.jobs)
    fitted = fusion.fit_fusion_params(dev)
    out = ingest.ensure_dir(args.output_dir) / "params.json"
    ingest.dump_params(fitted, out)
    _emit({"params": fitted, "n_sessions": len(dev), "output": str(out)})
    return EXIT_OK


def cmd_sweep(args) -> int:
    configs = []
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        items = doc if isinstance(doc, list) else [doc]
        for item in items:
            values = {**item, **{k[len("synth_"):]: v for k, v in vars(args).items() if k.startswith("synth_") and v is not None}}
            values["seed"] = _seed(args)
            try:
                configs.append(synth.SynthConfig.from_dict(values))
            except ConfigurationError as exc:
                raise ValidationError(f"bad synthetic config: {exc}") from exc
    else:
        configs.append(synth_config(args))
    if args.seeds < 1:
        raise ValidationError("--seeds must be >= 1")
    base = pipeline_config(args)
    seeds = range(_seed(args), _seed(args) + args.seeds)
    result = synth.sweep(configs, args.modes, seeds, base, args.jobs, not args.no_speaker_wer)
    out = ingest.ensure_dir(args.output_dir)
    table = result.to_table()
    (out / "sweep.tsv").write_text(table, encoding="utf-8")
    doc = {"rows": result.rows, "runs": [asdict(r) for r in result.runs]}
    (out / "sweep.json").write_text(json.dumps(doc, indent=1, allow_nan=True) + "\n", encoding="utf-8")
    sys.stdout.write(table)
    return EXIT_OK


COMMANDS = {
    "cluster": cmd_cluster,
    "diarize": cmd_diarize,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "fit": cmd_fit,
    "sweep": cmd_sweep,
}


def _emit(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, indent=1, sort_keys=False, default=str) + "\n")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"semdiar: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DiarizationError, ValueError, OSError) as exc:
        print(f"semdiar: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
