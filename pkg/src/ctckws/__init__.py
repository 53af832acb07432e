"""Streaming CTC keyword spotting and voice activity detection."""

from .core import (
    BLANK,
    Alphabet,
    ExpandedLabel,
    PosteriorMatrix,
    expand_label,
    read_posteriors,
    validate_posteriors,
    write_posteriors,
)
from .detector import DetectionEvent, DetectorConfig, StreamDetector, classify_utterance, new_detector
from .scoring import Score, ctc_label_score, score_keyword, vad_score

__version__ = "0.1.0"

__all__ = [
    "BLANK",
    "Alphabet",
    "DetectionEvent",
    "DetectorConfig",
    "ExpandedLabel",
    "PosteriorMatrix",
    "Score",
    "StreamDetector",
    "classify_utterance",
    "ctc_label_score",
    "expand_label",
    "new_detector",
    "read_posteriors",
    "score_keyword",
    "vad_score",
    "validate_posteriors",
    "write_posteriors",
]
