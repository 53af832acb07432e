"""8 kHz PCM audio to log-magnitude spectrogram."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MODEL_SAMPLE_RATE = 8000


class AudioFormatError(ValueError):
    pass


class NotAWavError(AudioFormatError):
    pass


class UnsupportedEncodingError(AudioFormatError):
    pass


class UnsupportedChannelsError(AudioFormatError):
    pass


class WrongSampleRateError(AudioFormatError):
    pass


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = MODEL_SAMPLE_RATE

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class FeatureConfig:
    frame_length_ms: float = 20.0
    hop_ms: float = 10.0
    fft_size: int = 256
    window_function: str = "hann"
    log_floor: float = 1e-7
    sample_rate: int = MODEL_SAMPLE_RATE

    def __post_init__(self):
        if self.hop_ms <= 0 or self.hop_ms > self.frame_length_ms:
            raise ValueError("hop must be positive and no longer than the frame")
        if self.fft_size < self.frame_samples:
            raise ValueError(
                f"fft_size {self.fft_size} is shorter than a frame ({self.frame_samples} samples)"
            )
        if self.window_function not in _WINDOWS:
            raise ValueError(f"unknown window function {self.window_function!r}")

    @property
    def frame_samples(self) -> int:
        return int(round(self.frame_length_ms * self.sample_rate / 1000))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000))

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class Spectrogram:
    frames: np.ndarray
    frame_hop: float
    frame_length: float

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_bins(self) -> int:
        return self.frames.shape[1]


def _hann(n: int) -> np.ndarray:
    # periodic Hann, the usual STFT choice
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


_WINDOWS = {
    "hann": _hann,
    "rectangular": np.ones,
}


def pcm16_to_audio(raw: bytes, sample_rate: int = MODEL_SAMPLE_RATE) -> AudioBuffer:
    ints = np.frombuffer(raw[: len(raw) - len(raw) % 2], dtype="<i2")
    return AudioBuffer(ints.astype(np.float64) / 32768.0, sample_rate)


def read_wav(path: str | Path) -> AudioBuffer:
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        if "unknown format" in str(exc):
            raise UnsupportedEncodingError(f"{path}: {exc}") from exc
        raise NotAWavError(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise NotAWavError(f"{path}: truncated or empty file") from exc
    if width != 2:
        raise UnsupportedEncodingError(f"{path}: expected 16-bit PCM, got {8 * width}-bit samples")
    if channels != 1:
        raise UnsupportedChannelsError(f"{path}: expected mono audio, got {channels} channels")
    if rate != MODEL_SAMPLE_RATE:
        raise WrongSampleRateError(
            f"{path}: sample rate is {rate} Hz but the model needs {MODEL_SAMPLE_RATE} Hz; "
            "resample the file first (e.g. `sox in.wav -r 8000 out.wav`)"
        )
    return pcm16_to_audio(raw, rate)


def write_wav(audio: AudioBuffer, path: str | Path) -> None:
    ints = np.clip(np.round(np.asarray(audio.samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(audio.sample_rate)
        wf.writeframes(ints.tobytes())


def num_frames(n_samples: int, config: FeatureConfig) -> int:
    if n_samples < config.frame_samples:
        return 0
    return (n_samples - config.frame_samples) // config.hop_samples + 1


def _frames_to_logmag(frames: np.ndarray, config: FeatureConfig) -> np.ndarray:
    window = _WINDOWS[config.window_function](config.frame_samples)
    mag = np.abs(np.fft.rfft(frames * window, n=config.fft_size, axis=-1))
    return np.log(np.maximum(mag, config.log_floor))


def compute_spectrogram(audio: AudioBuffer, config: FeatureConfig = FeatureConfig()) -> Spectrogram:
    if audio.sample_rate != config.sample_rate:
        raise WrongSampleRateError(
            f"audio is {audio.sample_rate} Hz, features expect {config.sample_rate} Hz"
        )
    x = np.asarray(audio.samples, dtype=np.float64)
    n = num_frames(len(x), config)
    if n == 0:
        frames = np.zeros((0, config.num_bins))
    else:
        idx = np.arange(config.frame_samples)[None, :] + config.hop_samples * np.arange(n)[:, None]
        frames = _frames_to_logmag(x[idx], config)
    return Spectrogram(
        frames, config.hop_ms / 1000.0, config.frame_length_ms / 1000.0
    )


class SpectrogramStream:
    """Incremental spectrogram; output over any chunking equals ``compute_spectrogram``."""

    def __init__(self, config: FeatureConfig = FeatureConfig()):
        self.config = config
        self._pending = np.zeros(0)

    def push(self, samples: np.ndarray) -> np.ndarray:
        buf = np.concatenate([self._pending, np.asarray(samples, dtype=np.float64)])
        spec = compute_spectrogram(AudioBuffer(buf, self.config.sample_rate), self.config)
        self._pending = buf[spec.num_frames * self.config.hop_samples:]
        return spec.frames
