import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mitfusion.dsp import (
    LOG_FLOOR,
    AudioBuffer,
    LogMelExtractor,
    dft_magnitude,
    hann_window,
    hz_to_mel,
    logmel,
    mel_filterbank,
    mel_to_hz,
    power_spectrogram,
    read_logmel,
    read_wav,
    segment,
    write_logmel,
    write_wav,
)
from mitfusion.exceptions import FormatError
from oracles import dft_magnitude_direct, slaney_centers


class TestDFT:
    def test_impulse_is_flat(self):
        frame = np.zeros(8)
        frame[0] = 1.0
        np.testing.assert_allclose(dft_magnitude(frame), np.ones(5), atol=1e-15)

    def test_single_bin_cosine(self):
        n = np.arange(16)
        mag = dft_magnitude(np.cos(2 * np.pi * 2 * n / 16))
        assert mag[2] == pytest.approx(8.0, abs=1e-12)
        assert np.all(np.delete(mag, 2) < 1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_direct_dft(self, seed):
        frame = np.random.default_rng(seed).normal(size=64)
        np.testing.assert_allclose(dft_magnitude(frame), dft_magnitude_direct(frame), atol=1e-8)

    @pytest.mark.parametrize("bad", [np.zeros(7), np.zeros(0), np.array([1.0, np.nan])])
    def test_rejects_bad_frames(self, bad):
        with pytest.raises(ValueError):
            dft_magnitude(bad)

    @pytest.mark.parametrize("seed", range(5))
    def test_parseval_one_sided(self, seed):
        # sum_k |X_k|^2 over the full spectrum equals W * sum_t x_t^2; the
        # one-sided spectrum counts every bin except DC and Nyquist twice
        w = 1024
        frame = np.random.default_rng(seed).normal(size=w) * hann_window(w)
        power = dft_magnitude(frame) ** 2
        full = power[0] + power[-1] + 2 * power[1:-1].sum()
        assert full == pytest.approx(w * np.sum(frame**2), rel=1e-6)


class TestMelScale:
    def test_round_trip(self):
        f = np.array([0.0, 200.0, 999.0, 1000.0, 4000.0, 22050.0])
        np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, rtol=1e-12, atol=1e-9)

    def test_breakpoint(self):
        assert hz_to_mel(1000.0) == pytest.approx(15.0)

    def test_filterbank_shape_and_no_empty_filters(self):
        fb = mel_filterbank()
        assert fb.shape == (128, 513)
        assert np.all(fb >= 0)
        assert np.all(fb.sum(axis=1) > 0)

    def test_filter_peaks_follow_oracle_centres(self):
        fb = mel_filterbank(n_fft=8192)
        freqs = np.linspace(0, 22050, 4097)
        centres = slaney_centers(128, 44100)
        peaks = freqs[fb.argmax(axis=1)]
        bin_width = freqs[1]
        assert np.all(np.abs(peaks - centres) <= bin_width)


class TestLogMel:
    def test_frame_count_three_seconds(self):
        audio = AudioBuffer(np.zeros(132300), 44100)
        assert logmel(audio).shape == (259, 128)

    @pytest.mark.parametrize("n", [1, 511, 512, 513, 5000])
    def test_frame_count_formula(self, n):
        audio = AudioBuffer(np.random.default_rng(n).normal(size=n), 44100)
        assert logmel(audio).shape[0] == n // 512 + 1

    def test_silence_hits_floor(self):
        mel = logmel(AudioBuffer(np.zeros(44100), 44100))
        assert np.all(mel == math.log(LOG_FLOOR))

    @pytest.mark.parametrize("freq", [250.0, 1000.0, 5000.0])
    def test_pure_tone_peak_bin(self, freq):
        t = np.arange(44100) / 44100
        mel = logmel(AudioBuffer(np.sin(2 * np.pi * freq * t), 44100))
        centres = np.array(slaney_centers(128, 44100))
        assert mel.mean(axis=0).argmax() == np.abs(centres - freq).argmin()

    def test_wrong_rate_rejected(self):
        with pytest.raises(ValueError, match="sample rate"):
            logmel(AudioBuffer(np.zeros(100), 16000))
        assert logmel(AudioBuffer(np.zeros(1000), 16000), allow_any_rate=True).shape == (2, 128)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            logmel(AudioBuffer(np.zeros(0), 44100))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1.01, 100.0))
    def test_scale_monotone(self, seed, c):
        x = np.random.default_rng(seed).normal(size=3000)
        a = logmel(AudioBuffer(x, 44100))
        b = logmel(AudioBuffer(c * x, 44100))
        assert np.all(b >= a - 1e-9)

    def test_deterministic(self):
        x = np.random.default_rng(0).normal(size=4000)
        np.testing.assert_array_equal(logmel(AudioBuffer(x)), logmel(AudioBuffer(x)))

    def test_power_spectrogram_matches_manual_frame(self):
        x = np.random.default_rng(1).normal(size=300)
        power = power_spectrogram(x, hop=16, window=32)
        assert power.shape == (300 // 16 + 1, 17)
        padded = np.concatenate([x[16:0:-1], x, x[-2:-18:-1]])
        frame = padded[32:64] * hann_window(32)
        np.testing.assert_allclose(power[2], dft_magnitude_direct(frame) ** 2, atol=1e-9)

    def test_extractor_transformer(self):
        ext = LogMelExtractor()
        out = ext.fit_transform([np.zeros(1024), AudioBuffer(np.zeros(2048))])
        assert [m.shape for m in out] == [(3, 128), (5, 128)]
        assert ext.get_params()["n_mels"] == 128


class TestSegment:
    def test_exact_multiple(self):
        mel = np.random.default_rng(0).normal(size=(256, 128))
        segs = segment(mel)
        assert segs.shape == (2, 1, 128, 128)
        np.testing.assert_array_equal(segs[1, 0], mel[128:])

    def test_partial_last_segment_mean_padded(self):
        mel = np.random.default_rng(1).normal(size=(259, 128))
        segs = segment(mel)
        assert segs.shape == (3, 1, 128, 128)
        tail = mel[256:]
        # 3 real frames, then 125 copies of their mean
        np.testing.assert_array_equal(segs[2, 0, :3], tail)
        np.testing.assert_allclose(segs[2, 0, 3:], np.tile(tail.mean(axis=0), (125, 1)))

    def test_zero_padding_flag(self):
        segs = segment(np.ones((130, 4)), seg_len=128, pad="zero")
        assert np.all(segs[1, 0, 2:] == 0)

    def test_single_frame(self):
        mel = np.arange(128.0)[None, :]
        segs = segment(mel)
        assert segs.shape == (1, 1, 128, 128)
        assert np.all(segs[0, 0] == mel)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 600), st.integers(1, 9), st.sampled_from([16, 128]))
    def test_count_and_reconstruction(self, frames, n_mels, seg_len):
        mel = np.random.default_rng(frames).normal(size=(frames, n_mels))
        segs = segment(mel, seg_len=seg_len)
        assert len(segs) == math.ceil(frames / seg_len)
        np.testing.assert_array_equal(segs[:, 0].reshape(-1, n_mels)[:frames], mel)


class TestFiles:
    def test_logmel_round_trip(self, tmp_path):
        mel = np.random.default_rng(0).normal(size=(7, 128)).astype(np.float32)
        write_logmel(tmp_path / "a.mflm", mel)
        back = read_logmel(tmp_path / "a.mflm")
        np.testing.assert_array_equal(back, mel)
        raw = (tmp_path / "a.mflm").read_bytes()
        assert raw[:5] == b"MFLM1" and len(raw) == 13 + 4 * 7 * 128

    def test_logmel_truncated(self, tmp_path):
        (tmp_path / "b.mflm").write_bytes(b"MFLM1" + (3).to_bytes(4, "little") + (2).to_bytes(4, "little") + b"\0" * 8)
        with pytest.raises(FormatError):
            read_logmel(tmp_path / "b.mflm")

    def test_wav_mono(self, tmp_path):
        x = np.sin(np.linspace(0, 20, 500)) * 0.5
        write_wav(tmp_path / "m.wav", x)
        buf = read_wav(tmp_path / "m.wav")
        assert buf.sample_rate == 44100
        np.testing.assert_allclose(buf.samples, x, atol=1 / 32768)

    def test_wav_stereo_downmix(self, tmp_path):
        left = np.full(100, 0.5)
        right = np.full(100, -0.25)
        write_wav(tmp_path / "s.wav", np.column_stack([left, right]).ravel(), channels=2)
        buf = read_wav(tmp_path / "s.wav")
        np.testing.assert_allclose(buf.samples, 0.125, atol=1 / 32768)

    def test_wav_rejects_8bit(self, tmp_path):
        import wave

        with wave.open(str(tmp_path / "e.wav"), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(1)
            wf.setframerate(44100)
            wf.writeframes(b"\x80" * 10)
        with pytest.raises(FormatError):
            read_wav(tmp_path / "e.wav")
