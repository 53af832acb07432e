"""Sliding-window keyword and speech detection over a posterior stream."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import PosteriorMatrix, normalize_text
from .scoring import score_keyword, vad_score

logger = logging.getLogger(__name__)

KEYWORD = "keyword"
SPEECH_ONSET = "speech-onset"
SPEECH_OFFSET = "speech-offset"


class DetectorConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    """Windowing and thresholds.

    ``kws_log_threshold`` is a natural-log probability; ``vad_speech_threshold``
    is a linear probability. Setting either to ``None`` disables that task.
    """

    window_ms: float = 800.0
    hop_ms: float = 100.0
    keyword: str | None = None
    kws_log_threshold: float | None = None
    vad_speech_threshold: float | None = None
    refractory_ms: float = 1000.0

    def __post_init__(self):
        if not self.window_ms >= self.hop_ms > 0:
            raise DetectorConfigError("need window_ms >= hop_ms > 0")
        if self.keyword is not None:
            object.__setattr__(self, "keyword", normalize_text(self.keyword))
            if not self.keyword:
                raise DetectorConfigError("keyword must be non-empty")
        for name in ("kws_log_threshold", "vad_speech_threshold"):
            value = getattr(self, name)
            if value is not None and not math.isfinite(value):
                raise DetectorConfigError(f"{name} must be finite")
        if self.refractory_ms < 0:
            raise DetectorConfigError("refractory_ms must be >= 0")

    @property
    def kws_enabled(self) -> bool:
        return self.keyword is not None

    @property
    def vad_enabled(self) -> bool:
        return self.vad_speech_threshold is not None


@dataclass(frozen=True)
class DetectionEvent:
    kind: str
    time: float
    score: float

    def format(self) -> str:
        return f"{self.kind}\t{self.time:.3f}\t{self.score:.6g}"


def ms_to_frames(ms: float, frame_duration: float) -> int:
    return int(round(ms / (frame_duration * 1000.0)))


def window_starts(n_frames: int, window: int, hop: int) -> list[int]:
    """Hop-aligned window starts; the last window may run past the tail and is truncated."""
    starts = list(range(0, max(n_frames - window, 0) + 1, hop))
    if starts[-1] + window < n_frames:
        starts.append(starts[-1] + hop)
    return starts


class StreamDetector:
    """Per-stream detector state. Not safe for concurrent mutation."""

    def __init__(self, config: DetectorConfig, frame_duration: float):
        if frame_duration <= 0:
            raise DetectorConfigError("frame_duration must be positive")
        if not (config.kws_enabled or config.vad_enabled):
            raise DetectorConfigError("enable keyword spotting, VAD, or both")
        if config.kws_enabled and config.kws_log_threshold is None:
            raise DetectorConfigError("keyword spotting needs kws_log_threshold")
        self.config = config
        self.frame_duration = frame_duration
        self.window_frames = ms_to_frames(config.window_ms, frame_duration)
        self.hop_frames = ms_to_frames(config.hop_ms, frame_duration)
        if self.window_frames < 1 or self.hop_frames < 1:
            raise DetectorConfigError(
                f"window {config.window_ms} ms / hop {config.hop_ms} ms round to zero frames "
                f"at {frame_duration * 1000:g} ms per frame"
            )
        logger.debug(
            "window %d frames (%.1f ms), hop %d frames (%.1f ms)",
            self.window_frames, self.window_frames * frame_duration * 1000,
            self.hop_frames, self.hop_frames * frame_duration * 1000,
        )
        self.buffer: deque[np.ndarray] = deque(maxlen=self.window_frames)
        self.frames_consumed = 0
        self.last_keyword_frame: int | None = None
        self.in_speech = False
        self.alphabet = None

    def _keyword_ready(self, frame: int) -> bool:
        if self.last_keyword_frame is None:
            return True
        elapsed_ms = (frame - self.last_keyword_frame) * self.frame_duration * 1000.0
        return elapsed_ms >= self.config.refractory_ms - 1e-9

    def _evaluate(self, window: PosteriorMatrix) -> list[DetectionEvent]:
        events = []
        now = self.frames_consumed * self.frame_duration
        c = self.config
        if c.kws_enabled:
            score = score_keyword(c.keyword, window).log_probability
            if score >= c.kws_log_threshold and self._keyword_ready(self.frames_consumed):
                events.append(DetectionEvent(KEYWORD, now, score))
                self.last_keyword_frame = self.frames_consumed
        if c.vad_enabled:
            speech = vad_score(window, 0, window.num_frames).linear()
            if not self.in_speech and speech >= c.vad_speech_threshold:
                self.in_speech = True
                events.append(DetectionEvent(SPEECH_ONSET, now, speech))
            elif self.in_speech and speech < c.vad_speech_threshold:
                self.in_speech = False
                events.append(DetectionEvent(SPEECH_OFFSET, now, speech))
        return events

    def push_frames(self, rows: PosteriorMatrix) -> list[DetectionEvent]:
        if self.alphabet is None:
            self.alphabet = rows.alphabet
        elif rows.alphabet != self.alphabet:
            raise ValueError("posterior rows use a different alphabet than earlier input")
        events = []
        for row in rows.probs:
            self.buffer.append(row)
            self.frames_consumed += 1
            past = self.frames_consumed - self.window_frames
            if past >= 0 and past % self.hop_frames == 0:
                window = PosteriorMatrix(np.array(self.buffer), self.alphabet, self.frame_duration)
                events.extend(self._evaluate(window))
        return events


def new_detector(config: DetectorConfig, frame_duration: float) -> StreamDetector:
    return StreamDetector(config, frame_duration)


def windowed_scores(p: PosteriorMatrix, config: DetectorConfig, task: str = "kws") -> list[float]:
    """Score every hop-aligned window of an utterance.

    Keyword scores are log probabilities; VAD scores are speech probabilities.
    """
    window = max(ms_to_frames(config.window_ms, p.frame_duration), 1)
    hop = max(ms_to_frames(config.hop_ms, p.frame_duration), 1)
    scores = []
    for start in window_starts(p.num_frames, window, hop):
        w = p.window(start, window)
        if task == "kws":
            scores.append(score_keyword(config.keyword, w).log_probability)
        elif task == "vad":
            scores.append(vad_score(w, 0, w.num_frames).linear())
        else:
            raise ValueError(f"unknown task {task!r}")
    return scores


def classify_utterance(p: PosteriorMatrix, config: DetectorConfig) -> tuple[float, bool]:
    """Max windowed keyword log score, and whether it reaches the threshold."""
    if p.num_frames < 1:
        raise ValueError("utterance has no frames")
    if config.keyword is None or config.kws_log_threshold is None:
        raise DetectorConfigError("classify_utterance needs a keyword and kws_log_threshold")
    best = max(windowed_scores(p, config, "kws"))
    return best, best >= config.kws_log_threshold
