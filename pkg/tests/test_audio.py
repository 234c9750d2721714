import numpy as np
import pytest

from emotts.audio import (
    analysis_window,
    compute_mel,
    griffin_lim,
    mel_filterbank,
    phone_average,
    read_wav,
    stft,
    write_wav,
)
from emotts.config import MelConfig
from emotts.errors import AlignmentError, ConfigError, InvalidInputError

CFG = MelConfig()


def tone(seconds=1.0, f=220.0, sr=24000):
    t = np.arange(int(seconds * sr)) / sr
    return 0.5 * np.sin(2 * np.pi * f * t) + 0.2 * np.sin(2 * np.pi * 3.1 * f * t)


def test_defaults_match_published_setup():
    assert (CFG.sample_rate_hz, CFG.n_mels, CFG.frame_shift_ms, CFG.frame_length_ms) == (24000, 80, 12.5, 50)
    assert CFG.hop_samples == 300
    assert CFG.win_samples == 1200


def test_non_integer_hop_rejected():
    with pytest.raises(ConfigError):
        MelConfig(sample_rate_hz=22050, frame_shift_ms=12.5).hop_samples


def test_one_second_gives_81_frames():
    mel = compute_mel(tone())
    assert mel.frames.shape == (81, 80)


def test_stft_matches_direct_dft():
    x = np.random.default_rng(0).normal(size=3000)
    spec = stft(x, CFG)
    pad = CFG.n_fft // 2
    xp = np.pad(x, pad, mode="reflect")
    win = analysis_window(CFG)
    n = np.arange(CFG.n_fft)
    for t in (0, 4, spec.shape[0] - 1):
        frame = xp[t * CFG.hop_samples : t * CFG.hop_samples + CFG.n_fft] * win
        for k in (0, 17, 300):
            ref = np.sum(frame * np.exp(-2j * np.pi * k * n / CFG.n_fft))
            assert abs(spec[t, k] - ref) < 1e-8 * max(1.0, abs(ref))


def test_zero_waveform_hits_floor():
    mel = compute_mel(np.zeros(2400))
    assert np.all(mel.frames == np.float32(np.log(CFG.log_floor)))


def test_empty_waveform_rejected():
    with pytest.raises(InvalidInputError):
        compute_mel(np.zeros(0))


def test_length_covariance():
    x = tone(0.5)
    a, b = compute_mel(x), compute_mel(np.concatenate([x, x]))
    assert b.n_frames - a.n_frames == len(x) // CFG.hop_samples


def test_filterbank_shape_and_nonnegative():
    fb = mel_filterbank(CFG)
    assert fb.shape == (80, CFG.n_fft // 2 + 1)
    assert np.all(fb >= 0) and np.all(fb.sum(1) > 0)


@pytest.mark.parametrize(
    "values,durs,expected",
    [([1, 1, 4, 4, 4], [2, 3], [1.0, 4.0]), ([2] * 5, [0, 5], [0.0, 2.0])],
)
def test_phone_average_examples(values, durs, expected):
    np.testing.assert_allclose(phone_average(values, durs), expected)


def test_phone_average_identity_and_idempotence():
    rng = np.random.default_rng(2)
    v = rng.normal(size=12)
    np.testing.assert_allclose(phone_average(v, [1] * 12), v)
    durs = np.array([3, 1, 0, 4, 4])
    avg = phone_average(v, durs)
    np.testing.assert_allclose(phone_average(np.repeat(avg, durs), durs), avg)


def test_phone_average_alignment_error():
    with pytest.raises(AlignmentError):
        phone_average([1.0, 2.0], [1, 2])


def test_griffin_lim_length_and_silence():
    mel = compute_mel(tone(0.3))
    y = griffin_lim(mel, n_iters=5)
    assert abs(len(y) - (mel.n_frames - 1) * CFG.hop_samples) <= CFG.hop_samples
    silent = griffin_lim(np.full((10, 80), np.log(CFG.log_floor)), CFG, n_iters=3)
    assert np.max(np.abs(silent)) < 1e-3


def test_griffin_lim_roundtrip_cosine():
    mel = compute_mel(tone(0.5)).frames.astype(np.float64)
    again = compute_mel(griffin_lim(mel, CFG, n_iters=60)).frames.astype(np.float64)
    t = min(len(mel), len(again))
    a, b = mel[:t], again[:t]
    cos = np.sum(a * b, 1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    assert cos.mean() >= 0.9


def test_griffin_lim_is_deterministic():
    mel = compute_mel(tone(0.2))
    assert np.array_equal(griffin_lim(mel, n_iters=4), griffin_lim(mel, n_iters=4))


def test_wav_roundtrip(tmp_path):
    x = np.linspace(-1, 1, 101)
    write_wav(tmp_path / "a.wav", x, 24000)
    y, sr = read_wav(tmp_path / "a.wav")
    assert sr == 24000
    np.testing.assert_allclose(y, x, atol=1 / 32767)
