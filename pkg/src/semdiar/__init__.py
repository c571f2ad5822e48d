"""Speaker diarization that fuses acoustic clustering with semantic cues.

Segment embeddings are clustered spectrally; dialogue-detection and
speaker-turn probabilities from text then re-split and re-merge the
clusters. Scoring uses cpWER (matched and all variants) and speaker-WER.
"""

from .core import (
    ConfigurationError,
    DiarizationError,
    DiarizationHypothesis,
    FusionParams,
    RefineParams,
    Segment,
    Session,
    ValidationError,
    Word,
)
from .defaults import DEFAULTS
from .metrics import cpwer, evaluate, speaker_wer, wer
from .refine import PipelineConfig, run_pipeline
from .synth import SynthConfig, generate_session

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DEFAULTS",
    "DiarizationError",
    "DiarizationHypothesis",
    "FusionParams",
    "PipelineConfig",
    "RefineParams",
    "Segment",
    "Session",
    "SynthConfig",
    "ValidationError",
    "Word",
    "cpwer",
    "evaluate",
    "generate_session",
    "run_pipeline",
    "speaker_wer",
    "wer",
]
