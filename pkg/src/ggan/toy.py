"""Synthetic structured-spectrogram corpus for desk-scale experiments.

Each class is a harmonic stack with its own fundamental and a band of
noise in its own frequency region; per-sample jitter in pitch, level,
onset and duration keeps the classes from being single points.
"""
import numpy as np

from .spectro import TOY_SCALE, Waveform, stft_log_magnitude

# fundamentals and noise bands as fractions of the Nyquist frequency
_F0 = (0.06, 0.10, 0.15, 0.21, 0.08, 0.12, 0.18, 0.24, 0.05, 0.27)
_BANDS = ((0.55, 0.65), (0.70, 0.80), (0.40, 0.50), (0.82, 0.92), (0.60, 0.70),
          (0.45, 0.55), (0.75, 0.85), (0.35, 0.45), (0.85, 0.95), (0.50, 0.60))


def _band_noise(rng, n, lo, hi):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.linspace(0.0, 1.0, len(spec))
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    noise = np.fft.irfft(spec, n)
    return noise / (np.abs(noise).max() + 1e-12)


def toy_waveform(label, rng, cfg=TOY_SCALE, style=None):
    """One waveform of class ``label`` (or of a fixed spectral ``style``)."""
    n = cfg.n_samples
    nyq = cfg.sample_rate / 2.0
    key = label if style is None else style
    f0 = _F0[key % len(_F0)] * nyq * rng.uniform(0.95, 1.05)
    t = np.arange(n) / cfg.sample_rate
    x = np.zeros(n)
    n_harm = int(nyq // f0)
    for h in range(1, n_harm + 1):
        x += np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / h
    x /= np.abs(x).max() + 1e-12
    lo, hi = _BANDS[key % len(_BANDS)]
    x = 0.7 * x + 0.3 * _band_noise(rng, n, lo, hi)
    # random onset / duration envelope
    start = int(rng.uniform(0.0, 0.25) * n)
    stop = start + int(rng.uniform(0.55, 0.75) * n)
    env = np.zeros(n)
    env[start:stop] = np.hanning(stop - start)
    return Waveform(x * env * rng.uniform(0.3, 0.9), cfg.sample_rate)


def make_toy_dataset(n_per_class=250, n_classes=4, cfg=TOY_SCALE, seed=0, class_offset=0):
    """Return (X, y) with X of shape (n, n_freq, n_frames, 1), classes interleaved."""
    rng = np.random.default_rng(seed)
    X, y = [], []
    for i in range(n_per_class):
        for k in range(n_classes):
            wave = toy_waveform(k + class_offset, rng, cfg)
            X.append(stft_log_magnitude(wave, cfg).values)
            y.append(k)
    X = np.stack(X)
    y = np.asarray(y)
    perm = rng.permutation(len(y))
    return X[perm], y[perm]


def make_style_dataset(n_per_style=100, styles=(0, 3), cfg=TOY_SCALE, seed=0):
    """Two-class "foreign" corpus distinguished only by spectral style.

    Style ``s`` reuses the pitch/noise recipe of toy class ``s``; the
    returned labels are 0..len(styles)-1.
    """
    rng = np.random.default_rng(seed)
    X, y = [], []
    for _ in range(n_per_style):
        for j, s in enumerate(styles):
            X.append(stft_log_magnitude(toy_waveform(s, rng, cfg, style=s), cfg).values)
            y.append(j)
    return np.stack(X), np.asarray(y)


def spectral_centroid(values):
    """Mean frequency-bin index weighted by linear magnitude, per sample."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 4:
        v = v[..., 0]
    # linear magnitude up to a constant factor under the default dB range
    w = 10.0 ** (3.0 * (v + 1.0))
    bins = np.arange(v.shape[1])[None, :, None]
    return (w * bins).sum(axis=(1, 2)) / w.sum(axis=(1, 2))
