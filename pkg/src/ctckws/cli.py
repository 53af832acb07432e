"""Command-line entry point.

Results go to stdout, diagnostics to stderr. Exit codes: 0 success, 1 usage
error, 2 data or model error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .core import CtcKwsError, PosteriorMatrix, read_posteriors, validate_posteriors, write_posteriors
from .detector import DetectorConfig, StreamDetector, ms_to_frames, window_starts
from .evaluation import (
    ManifestEntry,
    evaluate,
    load_manifest,
    resolve_entry_path,
    synth_posteriors,
    write_manifest,
)
from .features import AudioFormatError, FeatureConfig, SpectrogramStream, compute_spectrogram, read_wav
from .model import Model, ModelConfig, RecurrentState, forward_full, forward_step, load_model, param_count, save_model
from .scoring import score_keyword, vad_score

logger = logging.getLogger("ctckws")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

PCM_CHUNK_BYTES = 1600  # 100 ms of 8 kHz PCM16


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fmt(x: float, places: int = 6) -> str:
    if math.isinf(x):
        return "-inf" if x < 0 else "inf"
    return f"{x:.{places}f}"


def _add_input_flags(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--audio", type=Path, help="8 kHz mono PCM16 WAV file")
    src.add_argument("--posteriors", type=Path, help="precomputed posterior file (.ctcp)")
    p.add_argument("--model", type=Path, help="model file (.kwsm); required with --audio")


def _load_checked_posteriors(path: Path) -> PosteriorMatrix:
    p = read_posteriors(path)
    report = validate_posteriors(p)
    if not report.ok:
        first = report.problems[0]
        raise CtcKwsError(
            f"{path}: {len(report.problems)} invalid rows, first is row {first.row} "
            f"(sum {first.row_sum:.6f}: {first.reason})"
        )
    return p


def _posteriors_from_audio(audio_path: Path, model: Model) -> PosteriorMatrix:
    spec = compute_spectrogram(read_wav(audio_path), FeatureConfig())
    return forward_full(spec, model)


def _load_input(args) -> PosteriorMatrix:
    if args.posteriors is not None:
        if args.model is not None:
            logger.info("--model ignored with --posteriors")
        return _load_checked_posteriors(args.posteriors)
    if args.model is None:
        raise UsageError("--audio requires --model")
    return _posteriors_from_audio(args.audio, load_model(args.model))


def cmd_score(args, out) -> int:
    p = _load_input(args)
    out.write(_fmt(score_keyword(args.keyword, p).log_probability) + "\n")
    return EXIT_OK


def cmd_vad(args, out) -> int:
    p = _load_input(args)
    window = ms_to_frames(args.window_ms, p.frame_duration)
    hop = ms_to_frames(args.hop_ms, p.frame_duration)
    if window < 1 or hop < 1:
        raise UsageError("window and hop must each cover at least one posterior frame")
    if p.num_frames == 0:
        return EXIT_OK
    for start in window_starts(p.num_frames, window, hop):
        length = min(window, p.num_frames - start)
        speech = vad_score(p, start, length).linear()
        t0 = start * p.frame_duration
        t1 = (start + length) * p.frame_duration
        out.write(f"{t0:.3f}\t{t1:.3f}\t{_fmt(speech)}\n")
    return EXIT_OK


def _detector_config(args) -> DetectorConfig:
    if args.keyword is None and args.vad_threshold is None:
        raise UsageError("stream needs --keyword, --vad-threshold, or both")
    if args.keyword is not None and args.kws_threshold is None:
        raise UsageError("--keyword requires --kws-threshold")
    return DetectorConfig(
        window_ms=args.window_ms,
        hop_ms=args.hop_ms,
        keyword=args.keyword,
        kws_log_threshold=args.kws_threshold,
        vad_speech_threshold=args.vad_threshold,
        refractory_ms=args.refractory_ms,
    )


def _emit(events, out) -> None:
    for e in events:
        out.write(e.format() + "\n")
    if events:
        out.flush()


def cmd_stream(args, out) -> int:
    config = _detector_config(args)
    if args.posteriors is not None:
        p = _load_checked_posteriors(args.posteriors)
        detector = StreamDetector(config, p.frame_duration)
        _emit(detector.push_frames(p), out)
        return EXIT_OK
    if args.model is None:
        raise UsageError("stream on raw PCM needs --model (or use --posteriors)")
    model = load_model(args.model)
    mc = model.config
    features = SpectrogramStream(FeatureConfig())
    frame_duration = features.config.hop_ms / 1000.0 * mc.conv_stride_time
    detector = StreamDetector(config, frame_duration)
    state = RecurrentState.fresh(mc)
    stdin = args.stdin if args.stdin is not None else sys.stdin.buffer
    leftover = b""
    while True:
        chunk = stdin.read(PCM_CHUNK_BYTES)
        if not chunk:
            break
        chunk = leftover + chunk
        usable = len(chunk) - len(chunk) % 2
        leftover = chunk[usable:]
        samples = np.frombuffer(chunk[:usable], dtype="<i2").astype(np.float64) / 32768.0
        rows, state = forward_step(features.push(samples), state, model)
        if len(rows):
            _emit(detector.push_frames(PosteriorMatrix(rows, mc.alphabet, frame_duration)), out)
    return EXIT_OK


def _entry_loader(manifest_path: Path, model_path: Path | None):
    model = None

    def load(entry: ManifestEntry) -> PosteriorMatrix:
        nonlocal model
        path = resolve_entry_path(entry, manifest_path)
        if path.suffix.lower() == ".wav":
            if model_path is None:
                raise CtcKwsError(f"{path}: audio entry needs --model")
            if model is None:
                model = load_model(model_path)
            return _posteriors_from_audio(path, model)
        return _load_checked_posteriors(path)

    return load


def cmd_eval(args, out) -> int:
    if args.task == "kws" and args.keyword is None:
        raise UsageError("--task kws requires --keyword")
    fprs = tuple(args.fpr or [0.05])
    for f in fprs:
        if not 0.0 < f < 1.0:
            raise UsageError("--fpr values must lie in (0, 1)")
    # threshold only matters for classification, not for the ROC sweep
    config = DetectorConfig(
        window_ms=args.window_ms,
        hop_ms=args.hop_ms,
        keyword=args.keyword if args.task == "kws" else None,
        kws_log_threshold=0.0 if args.task == "kws" else None,
        vad_speech_threshold=0.5 if args.task == "vad" else None,
    )
    entries = load_manifest(args.manifest)
    report = evaluate(args.task, entries, config, _entry_loader(args.manifest, args.model), fprs)
    for path, err in report.skipped:
        print(f"skipped {path}: {err}", file=sys.stderr)
    if args.out is not None:
        args.out.write_text(report.to_json(), encoding="utf-8")
        args.out.with_suffix(".curve.tsv").write_text(report.curve_tsv(), encoding="utf-8")
        print(f"wrote {args.out}", file=sys.stderr)
    else:
        out.write(report.to_json())
    return EXIT_OK


def cmd_info(args, out) -> int:
    model = load_model(args.model)
    info = {"config": model.config.to_dict(), "param_count": param_count(model.config)}
    out.write(json.dumps(info, indent=2) + "\n")
    return EXIT_OK


def cmd_init_model(args, out) -> int:
    config = ModelConfig(num_recurrent_layers=args.layers, hidden_size=args.hidden_size)
    save_model(Model.random(config, args.seed), args.out)
    out.write(f"{param_count(config)}\n")
    return EXIT_OK


def cmd_synth(args, out) -> int:
    if args.count < 2:
        raise UsageError("--count must be at least 2 (one positive, one negative)")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(args.count):
        positive = i % 2 == 0
        p, label = synth_posteriors(args.keyword, args.frames, args.noise, args.seed + i, positive)
        name = f"{'pos' if positive else 'neg'}_{i:05d}.ctcp"
        write_posteriors(p, args.out_dir / name)
        entries.append(ManifestEntry(name, label, args.keyword if positive else ""))
    manifest = args.out_dir / "manifest.jsonl"
    write_manifest(entries, manifest)
    out.write(f"{manifest}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ctckws", description="CTC keyword spotting and voice activity detection")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("score", help="keyword score of one input")
    p.add_argument("--keyword", required=True)
    _add_input_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("vad", help="speech probability per window")
    _add_input_flags(p)
    p.add_argument("--window-ms", type=float, default=800.0)
    p.add_argument("--hop-ms", type=float, default=100.0)
    p.set_defaults(func=cmd_vad)

    p = sub.add_parser("stream", help="detect events in raw PCM16 read from stdin")
    p.add_argument("--keyword")
    p.add_argument("--model", type=Path)
    p.add_argument("--posteriors", type=Path, help="replay a posterior file instead of stdin audio")
    p.add_argument("--kws-threshold", type=float, help="natural-log keyword score threshold")
    p.add_argument("--vad-threshold", type=float, help="speech probability threshold")
    p.add_argument("--window-ms", type=float, default=800.0)
    p.add_argument("--hop-ms", type=float, default=100.0)
    p.add_argument("--refractory-ms", type=float, default=1000.0)
    p.set_defaults(func=cmd_stream, stdin=None)

    p = sub.add_parser("eval", help="ROC evaluation over a manifest")
    p.add_argument("--task", choices=("kws", "vad"), required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--model", type=Path)
    p.add_argument("--keyword")
    p.add_argument("--fpr", type=float, action="append", help="repeatable; default 0.05")
    p.add_argument("--window-ms", type=float, default=800.0)
    p.add_argument("--hop-ms", type=float, default=100.0)
    p.add_argument("--out", type=Path, help="report path; a .curve.tsv dump is written next to it")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("info", help="print model config and parameter count")
    p.add_argument("--model", type=Path, required=True)
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("init-model", help="write a randomly initialised model (test fixture)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--hidden-size", type=int, default=256)
    p.set_defaults(func=cmd_init_model)

    p = sub.add_parser("synth", help="write synthetic posterior files and a manifest")
    p.add_argument("--keyword", required=True)
    p.add_argument("--count", type=int, default=100, help="total files, alternating positive/negative")
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def run(argv=None, stdout=None, stdin=None) -> int:
    out = stdout if stdout is not None else sys.stdout
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if stdin is not None:
        args.stdin = stdin
    try:
        return args.func(args, out)
    except UsageError as exc:
        print(f"ctckws {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CtcKwsError, AudioFormatError, OSError, ValueError) as exc:
        print(f"ctckws {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())
