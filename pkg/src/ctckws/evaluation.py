"""Manifests, ROC curves, TPR at fixed FPR, and synthetic posterior fixtures."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Alphabet, CtcKwsError, PosteriorMatrix, normalize_text, read_posteriors
from .detector import DetectorConfig, windowed_scores

logger = logging.getLogger(__name__)


class ManifestError(CtcKwsError):
    pass


class SingleClassError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    transcript: str | None = None


def _parse_entry(line: str, lineno: int) -> ManifestEntry:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"line {lineno}: not valid JSON ({exc.msg})") from exc
    if not isinstance(rec, dict):
        raise ManifestError(f"line {lineno}: record must be an object")
    path = rec.get("path")
    label = rec.get("label")
    transcript = rec.get("transcript")
    if not isinstance(path, str) or not path:
        raise ManifestError(f"line {lineno}: 'path' must be a non-empty string")
    if isinstance(label, bool) or label not in (0, 1):
        raise ManifestError(f"line {lineno}: 'label' must be 0 or 1, got {label!r}")
    if transcript is not None and not isinstance(transcript, str):
        raise ManifestError(f"line {lineno}: 'transcript' must be a string")
    return ManifestEntry(path, int(label), transcript)


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Read a JSON-lines manifest: ``{"path": ..., "label": 0|1, "transcript": ...}``.

    Blank lines are ignored. Relative paths are kept as written; see
    ``resolve_entry_path``.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    return [
        _parse_entry(line, i)
        for i, line in enumerate(text.splitlines(), start=1)
        if line.strip()
    ]


def write_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            rec = {"path": e.path, "label": e.label}
            if e.transcript is not None:
                rec["transcript"] = e.transcript
            fh.write(json.dumps(rec) + "\n")


def resolve_entry_path(entry: ManifestEntry, manifest_path: str | Path) -> Path:
    p = Path(entry.path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float
    threshold: float


@dataclass(frozen=True)
class RocCurve:
    points: tuple[RocPoint, ...]
    positives: int
    negatives: int

    def auc(self) -> float:
        area = 0.0
        for a, b in zip(self.points, self.points[1:]):
            area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0
        return area


def roc_curve(scores, labels) -> RocCurve:
    """Threshold sweep over the distinct scores, highest first.

    A sample counts as positive at threshold ``th`` when ``score >= th``; tied
    scores enter together. The first point (threshold +inf) is (0, 0).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("ROC needs at least one positive and one negative example")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    # last index of every run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    points = [RocPoint(0.0, 0.0, math.inf)]
    points += [RocPoint(fp[i] / n_neg, tp[i] / n_pos, float(s[i])) for i in ends]
    return RocCurve(tuple(points), n_pos, n_neg)


def tpr_at_fpr(curve: RocCurve, fpr: float) -> float:
    """Best TPR among curve points whose FPR does not exceed ``fpr`` (no interpolation)."""
    if not 0.0 < fpr < 1.0:
        raise ValueError("fpr must lie in (0, 1)")
    return max(p.tpr for p in curve.points if p.fpr <= fpr)


def pairwise_auc(scores, labels) -> float:
    """Fraction of positive/negative pairs ordered correctly, ties counting one half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


@dataclass
class EvalReport:
    task: str
    curve: RocCurve
    auc: float
    tpr_at: dict[float, float]
    positives: int
    negatives: int
    skipped: list[tuple[str, str]] = field(default_factory=list)
    scores: list[tuple[str, int, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "auc": round(self.auc, 6),
            "positives": self.positives,
            "negatives": self.negatives,
            "tpr_at": [{"fpr": f, "tpr": round(t, 6)} for f, t in sorted(self.tpr_at.items())],
            "curve": [
                {
                    "fpr": round(p.fpr, 6),
                    "tpr": round(p.tpr, 6),
                    "threshold": None if math.isinf(p.threshold) else round(p.threshold, 6),
                }
                for p in self.curve.points
            ],
            "skipped": [{"path": path, "error": err} for path, err in self.skipped],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    def curve_tsv(self) -> str:
        return "".join(f"{p.fpr:.6f}\t{p.tpr:.6f}\n" for p in self.curve.points)


def utterance_score(p: PosteriorMatrix, task: str, config: DetectorConfig) -> float:
    return max(windowed_scores(p, config, task))


def evaluate(
    task: str,
    entries: list[ManifestEntry],
    config: DetectorConfig,
    load,
    fprs=(0.05,),
) -> EvalReport:
    """Score every manifest entry and build the ROC report.

    ``load`` maps an entry to its ``PosteriorMatrix`` (reading a posterior
    file, or running features and the model on audio). Entries that fail to
    load or score are recorded in ``skipped``.
    """
    if task not in ("kws", "vad"):
        raise ValueError(f"unknown task {task!r}")
    if task == "kws" and config.keyword is None:
        raise ValueError("kws evaluation needs a keyword")
    scored = []
    skipped = []
    for entry in entries:
        try:
            score = utterance_score(load(entry), task, config)
        except (CtcKwsError, OSError, ValueError) as exc:
            logger.warning("skipping %s: %s", entry.path, exc)
            skipped.append((entry.path, str(exc)))
            continue
        scored.append((entry.path, entry.label, score))
    curve = roc_curve([s for _, _, s in scored], [y for _, y, _ in scored])
    return EvalReport(
        task=task,
        curve=curve,
        auc=curve.auc(),
        tpr_at={f: tpr_at_fpr(curve, f) for f in fprs},
        positives=curve.positives,
        negatives=curve.negatives,
        skipped=skipped,
        scores=scored,
    )


def posterior_file_loader(manifest_path: str | Path):
    def load(entry: ManifestEntry) -> PosteriorMatrix:
        return read_posteriors(resolve_entry_path(entry, manifest_path))

    return load


# --- synthetic fixtures ---------------------------------------------------


def min_alignment_frames(keyword: str) -> int:
    """Frames needed to embed ``keyword`` holding each character at least 2 frames."""
    repeats = sum(a == b for a, b in zip(keyword, keyword[1:]))
    return 2 * len(keyword) + repeats


def _noisy_rows(targets: np.ndarray, size: int, noise_level: float, rng) -> np.ndarray:
    # noise mass split over the non-target symbols by a flat Dirichlet draw
    n = len(targets)
    spread = rng.dirichlet(np.ones(size - 1), size=n) * noise_level
    others = np.ones((n, size), dtype=bool)
    others[np.arange(n), targets] = False
    rows = np.empty((n, size))
    rows[others] = spread.ravel()
    rows[np.arange(n), targets] = 1.0 - noise_level
    return rows / rows.sum(axis=1, keepdims=True)


def synth_posteriors(
    keyword: str,
    n_frames: int,
    noise_level: float,
    seed: int,
    positive: bool = True,
    alphabet: Alphabet | None = None,
    frame_duration: float = 0.03,
) -> tuple[PosteriorMatrix, int]:
    """Deterministic synthetic posteriorgram with a known label.

    Positives embed one CTC alignment of ``keyword`` (each character held 2-4
    frames, a blank between repeated characters, blanks elsewhere) at a random
    offset. Negatives target the blank on every frame. Each frame puts
    ``1 - noise_level`` on its target and spreads ``noise_level`` over the
    other symbols in proportions drawn uniformly from the simplex.
    """
    if not 0.0 <= noise_level <= 1.0:
        raise ValueError("noise_level must lie in [0, 1]")
    alphabet = alphabet or Alphabet.default()
    keyword = normalize_text(keyword)
    chars = alphabet.encode(keyword)
    if not chars:
        raise ValueError("keyword must be non-empty")
    need = min_alignment_frames(keyword)
    if n_frames < need:
        raise ValueError(f"{n_frames} frames cannot hold '{keyword}' (need {need})")
    rng = np.random.default_rng(seed)
    blank = alphabet.blank_index
    targets = np.full(n_frames, blank)
    if positive:
        holds = rng.integers(2, 5, size=len(chars))
        # shrink holds until the alignment fits
        while holds.sum() + need - 2 * len(chars) > n_frames:
            holds[np.argmax(holds)] -= 1
        seq = []
        for i, (ch, hold) in enumerate(zip(chars, holds)):
            if i and chars[i - 1] == ch:
                seq.append(blank)
            seq.extend([ch] * int(hold))
        offset = int(rng.integers(0, n_frames - len(seq) + 1))
        targets[offset:offset + len(seq)] = seq
    probs = _noisy_rows(targets, len(alphabet), noise_level, rng)
    return PosteriorMatrix(probs, alphabet, frame_duration), int(positive)
