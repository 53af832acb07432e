import math
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctckws.features import (
    AudioBuffer,
    FeatureConfig,
    NotAWavError,
    SpectrogramStream,
    UnsupportedChannelsError,
    UnsupportedEncodingError,
    WrongSampleRateError,
    compute_spectrogram,
    num_frames,
    read_wav,
    write_wav,
)


def _write_raw_wav(path, channels=1, width=2, rate=8000, n=8000):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(width)
        wf.setframerate(rate)
        wf.writeframes(b"\x00" * (n * channels * width))


class TestReadWav:
    def test_one_second(self, tmp_path):
        _write_raw_wav(tmp_path / "a.wav")
        audio = read_wav(tmp_path / "a.wav")
        assert len(audio) == 8000
        assert audio.sample_rate == 8000

    def test_normalisation(self, tmp_path):
        samples = np.array([0, 16384, -32768, 32767]) / 32768.0
        write_wav(AudioBuffer(samples), tmp_path / "b.wav")
        assert np.array_equal(read_wav(tmp_path / "b.wav").samples, samples)

    def test_stereo(self, tmp_path):
        _write_raw_wav(tmp_path / "s.wav", channels=2)
        with pytest.raises(UnsupportedChannelsError):
            read_wav(tmp_path / "s.wav")

    def test_wrong_rate_suggests_resampling(self, tmp_path):
        _write_raw_wav(tmp_path / "r.wav", rate=16000)
        with pytest.raises(WrongSampleRateError, match="resample"):
            read_wav(tmp_path / "r.wav")

    def test_8bit(self, tmp_path):
        _write_raw_wav(tmp_path / "e.wav", width=1)
        with pytest.raises(UnsupportedEncodingError):
            read_wav(tmp_path / "e.wav")

    def test_not_a_wav(self, tmp_path):
        (tmp_path / "x.wav").write_bytes(b"hello world, not audio")
        with pytest.raises(NotAWavError):
            read_wav(tmp_path / "x.wav")


class TestSpectrogram:
    def test_silence_hits_floor(self):
        spec = compute_spectrogram(AudioBuffer(np.zeros(800)))
        assert spec.num_bins == 129
        assert np.all(spec.frames == math.log(1e-7))

    def test_sine_peak_bin(self):
        t = np.arange(8000) / 8000.0
        spec = compute_spectrogram(AudioBuffer(0.5 * np.sin(2 * np.pi * 1000 * t)))
        # 1000 Hz / (8000 Hz / 256) = bin 32
        assert np.all(spec.frames.argmax(axis=1) == 32)

    def test_two_frames(self):
        assert compute_spectrogram(AudioBuffer(np.zeros(240))).num_frames == 2

    def test_shorter_than_frame(self):
        spec = compute_spectrogram(AudioBuffer(np.zeros(159)))
        assert spec.frames.shape == (0, 129)

    def test_timing_fields(self):
        spec = compute_spectrogram(AudioBuffer(np.zeros(400)))
        assert spec.frame_hop == 0.01
        assert spec.frame_length == 0.02

    def test_rejects_other_rates(self):
        with pytest.raises(WrongSampleRateError):
            compute_spectrogram(AudioBuffer(np.zeros(400), sample_rate=16000))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FeatureConfig(fft_size=128)
        with pytest.raises(ValueError):
            FeatureConfig(hop_ms=30.0)

    @given(st.integers(0, 5000))
    def test_shape_law(self, n):
        spec = compute_spectrogram(AudioBuffer(np.zeros(n)))
        expected = (n - 160) // 80 + 1 if n >= 160 else 0
        assert spec.num_frames == expected == num_frames(n, FeatureConfig())

    @settings(deadline=None, max_examples=30)
    @given(st.floats(0.01, 100.0), st.integers(0, 2**31 - 1))
    def test_scaling_shifts_log_magnitude(self, c, seed):
        x = np.random.default_rng(seed).uniform(-0.5, 0.5, 1200)
        base = compute_spectrogram(AudioBuffer(x)).frames
        scaled = compute_spectrogram(AudioBuffer(c * x)).frames
        floor = math.log(1e-7)
        mask = (base > floor + 1.0) & (scaled > floor + 1.0)
        np.testing.assert_allclose(scaled[mask] - base[mask], math.log(c), atol=1e-9)

    def test_deterministic(self, rng):
        x = rng.uniform(-1, 1, 4000)
        a = compute_spectrogram(AudioBuffer(x)).frames
        b = compute_spectrogram(AudioBuffer(x.copy())).frames
        assert a.tobytes() == b.tobytes()


def test_stream_matches_batch(rng):
    x = rng.uniform(-1, 1, 3000)
    whole = compute_spectrogram(AudioBuffer(x)).frames
    stream = SpectrogramStream()
    cuts = np.sort(rng.integers(0, len(x), size=12))
    parts = [stream.push(chunk) for chunk in np.split(x, cuts)]
    np.testing.assert_allclose(np.concatenate(parts), whole, rtol=0, atol=1e-12)
