import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ggan.exceptions import ConfigError, DataError, LengthError, RangeError
from ggan.spectro import (
    FULL_SCALE,
    TOY_SCALE,
    Spectrogram,
    SpectroConfig,
    SpectrogramTransformer,
    Waveform,
    denormalize,
    fit_length,
    invert_spectrogram,
    normalize,
    pearson,
    stft_log_magnitude,
)


def tone(freq, cfg, seconds=None, amp=0.5):
    n = cfg.n_samples if seconds is None else int(seconds * cfg.sample_rate)
    t = np.arange(n) / cfg.sample_rate
    return Waveform(amp * np.sin(2 * np.pi * freq * t), cfg.sample_rate)


def test_config_validation():
    with pytest.raises(ConfigError):
        SpectroConfig(n_freq=256, n_frames=100)
    with pytest.raises(ConfigError):
        SpectroConfig(n_freq=128, n_frames=128)
    with pytest.raises(ConfigError):
        SpectroConfig(min_db=0, max_db=0)
    assert FULL_SCALE.fft_size == 512
    assert SpectroConfig.from_dict(TOY_SCALE.to_dict()) == TOY_SCALE


def test_silence_is_floor():
    spec = stft_log_magnitude(Waveform(np.zeros(FULL_SCALE.n_samples), 16000), FULL_SCALE)
    assert spec.values.shape == (256, 128, 1)
    assert np.all(spec.values == -1.0)


def test_one_second_at_hop_64_gives_full_shape():
    cfg = SpectroConfig(hop_length=64)
    # (16000 - 512) // 64 + 1 = 243 frames available, centre 128 kept
    assert (16000 - 512) // 64 + 1 >= 128
    spec = stft_log_magnitude(tone(440, cfg, seconds=1.0), cfg)
    assert spec.values.shape == (256, 128, 1)


def test_default_config_accepts_one_second_clip():
    assert FULL_SCALE.n_samples <= 16000
    spec = stft_log_magnitude(tone(440, FULL_SCALE, seconds=1.0), FULL_SCALE)
    assert spec.values.shape == (256, 128, 1)


def test_too_short_and_non_finite():
    with pytest.raises(LengthError):
        stft_log_magnitude(Waveform(np.zeros(100), 16000), FULL_SCALE)
    with pytest.raises(DataError):
        Waveform(np.array([0.0, np.nan]), 16000)
    with pytest.raises(DataError):
        Waveform(np.zeros(4), 0)


def test_fit_length_centre_crop_and_pad():
    x = np.arange(10.0)
    assert list(fit_length(x, 4)) == [3.0, 4.0, 5.0, 6.0]
    assert list(fit_length(x[:2], 4, pad=True)) == [0.0, 0.0, 1.0, 0.0]


def test_unit_sine_reads_zero_db():
    cfg = TOY_SCALE
    # put the tone exactly on a bin centre
    freq = 8 * cfg.sample_rate / cfg.fft_size
    spec = stft_log_magnitude(tone(freq, cfg, amp=1.0), cfg)
    db = denormalize(spec)
    assert db[8].mean() == pytest.approx(0.0, abs=1e-4)  # float32 storage


def test_denormalize_endpoints_and_errors():
    assert denormalize(np.array([-1.0]), FULL_SCALE)[0] == FULL_SCALE.min_db
    assert denormalize(np.array([1.0]), FULL_SCALE)[0] == FULL_SCALE.max_db
    with pytest.raises(RangeError):
        denormalize(np.array([1.5]), FULL_SCALE)


@given(arrays(np.float64, 16, elements=st.floats(-1, 1)))
def test_normalize_denormalize_identity(v):
    np.testing.assert_allclose(normalize(denormalize(v, FULL_SCALE), FULL_SCALE), v, atol=1e-6)


@given(st.integers(0, 2**32 - 1), st.floats(1e-4, 10.0))
def test_outputs_in_range_for_random_waveforms(seed, scale):
    x = np.random.default_rng(seed).standard_normal(TOY_SCALE.n_samples) * scale
    v = stft_log_magnitude(Waveform(x, TOY_SCALE.sample_rate), TOY_SCALE).values
    assert v.shape == TOY_SCALE.shape
    assert v.min() >= -1.0 and v.max() <= 1.0


def test_invert_silence_is_quiet():
    spec = Spectrogram(-np.ones(TOY_SCALE.shape), TOY_SCALE)
    wave = invert_spectrogram(spec, iters=5)
    assert np.sqrt(np.mean(wave.samples**2)) < 1e-3


def test_inversion_history_non_increasing(rng):
    v = rng.uniform(-1, 1, TOY_SCALE.shape)
    _, hist = invert_spectrogram(Spectrogram(v, TOY_SCALE), iters=30, return_history=True)
    assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(hist, hist[1:]))


def test_tone_round_trip_correlation():
    spec = stft_log_magnitude(tone(440, FULL_SCALE), FULL_SCALE)
    back = stft_log_magnitude(invert_spectrogram(spec, iters=60), FULL_SCALE)
    assert pearson(spec.values, back.values) >= 0.9


def test_spectrogram_shape_check():
    with pytest.raises(DataError):
        Spectrogram(np.zeros((10, 10, 1)), TOY_SCALE)


def test_transformer_api():
    tr = SpectrogramTransformer(**{k: v for k, v in TOY_SCALE.to_dict().items() if k != "fft_size"})
    waves = [tone(300, TOY_SCALE).samples, tone(600, TOY_SCALE).samples[:500]]
    out = tr.fit_transform(waves)
    assert out.shape == (2,) + TOY_SCALE.shape
    assert tr.get_params()["hop_length"] == TOY_SCALE.hop_length
    back = tr.inverse_transform(out, iters=3)
    assert back.shape == (2, TOY_SCALE.n_samples)
