"""Waveform <-> normalized log-magnitude spectrogram conversion.

Axis convention: spectrogram arrays are ``(freq, time, channel)``. The
frequency axis holds ``fft_size // 2`` bins (the Nyquist bin is dropped),
so ``fft_size == 2 * n_freq``.
"""
from dataclasses import dataclass, asdict, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigError, DataError, LengthError, RangeError


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SpectroConfig:
    n_freq: int = 256
    n_frames: int = 128
    sample_rate: int = 16000
    hop_length: int = 121
    min_db: float = -100.0
    max_db: float = 20.0

    def __post_init__(self):
        if not (_is_pow2(self.n_freq) and _is_pow2(self.n_frames)):
            raise ConfigError("n_freq and n_frames must be powers of two")
        if self.n_freq != 2 * self.n_frames:
            raise ConfigError("spectrogram height must be twice its width")
        if self.sample_rate <= 0 or self.hop_length <= 0:
            raise ConfigError("sample_rate and hop_length must be positive")
        if not self.max_db > self.min_db:
            raise ConfigError("max_db must exceed min_db")

    @property
    def fft_size(self):
        return 2 * self.n_freq

    @property
    def shape(self):
        return (self.n_freq, self.n_frames, 1)

    @property
    def n_samples(self):
        """Waveform length consumed by exactly ``n_frames`` frames."""
        return self.fft_size + (self.n_frames - 1) * self.hop_length

    def to_dict(self):
        d = asdict(self)
        d["fft_size"] = self.fft_size
        return d

    @classmethod
    def from_dict(cls, d):
        keys = ("n_freq", "n_frames", "sample_rate", "hop_length", "min_db", "max_db")
        cfg = cls(**{k: d[k] for k in keys if k in d})
        if "fft_size" in d and int(d["fft_size"]) != cfg.fft_size:
            raise ConfigError("fft_size must equal 2 * n_freq")
        return cfg


FULL_SCALE = SpectroConfig()
TOY_SCALE = SpectroConfig(n_freq=64, n_frames=32, sample_rate=4000, hop_length=32)


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise DataError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("waveform contains non-finite samples")


@dataclass
class Spectrogram:
    values: np.ndarray
    config: SpectroConfig = field(default_factory=SpectroConfig)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.shape != self.config.shape:
            raise DataError(f"expected shape {self.config.shape}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("spectrogram contains non-finite values")
        self.values = v


def _window(fft_size):
    # periodic Hann
    n = np.arange(fft_size)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / fft_size)


def _amplitude_scale(fft_size):
    # a unit-amplitude sinusoid peaks at 0 dB
    return 2.0 / _window(fft_size).sum()


def _frames(x, cfg):
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.fft_size)[:: cfg.hop_length]
    return frames[: cfg.n_frames]


def _stft(x, cfg):
    """Complex STFT, shape (fft_size // 2 + 1, n_frames)."""
    return np.fft.rfft(_frames(x, cfg) * _window(cfg.fft_size), axis=-1).T


def _istft(spectrum, cfg):
    """Least-squares inverse of ``_stft``.

    This is the orthogonal projection of an arbitrary (Hermitian) STFT onto
    the set of consistent STFTs, which is what makes the alternating
    projection in ``griffin_lim`` monotone.
    """
    win = _window(cfg.fft_size)
    frames = np.fft.irfft(spectrum.T, n=cfg.fft_size, axis=-1) * win
    n = cfg.n_samples
    out = np.zeros(n)
    norm = np.zeros(n)
    for t in range(cfg.n_frames):
        s = t * cfg.hop_length
        out[s : s + cfg.fft_size] += frames[t]
        norm[s : s + cfg.fft_size] += win**2
    covered = norm > 1e-12
    out[covered] /= norm[covered]
    out[~covered] = 0.0
    return out


def fit_length(samples, target, pad=False):
    """Center-crop (or, with ``pad=True``, zero-pad) to a target length.

    ``target`` is a sample count or a :class:`SpectroConfig`.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    need = target.n_samples if isinstance(target, SpectroConfig) else int(target)
    if len(samples) < need:
        if not pad:
            raise LengthError(f"waveform has {len(samples)} samples, {need} needed")
        left = (need - len(samples)) // 2
        return np.pad(samples, (left, need - len(samples) - left))
    start = (len(samples) - need) // 2
    return samples[start : start + need]


def amplitude_to_db(mag, cfg):
    floor = 10.0 ** (cfg.min_db / 20.0)
    return 20.0 * np.log10(np.maximum(mag, floor))


def db_to_amplitude(db):
    return 10.0 ** (np.asarray(db, dtype=np.float64) / 20.0)


def normalize(db, cfg):
    db = np.clip(np.asarray(db, dtype=np.float64), cfg.min_db, cfg.max_db)
    return 2.0 * (db - cfg.min_db) / (cfg.max_db - cfg.min_db) - 1.0


def denormalize(spec, cfg=None):
    """Map normalized values back to dB.

    Accepts a :class:`Spectrogram` or a raw array together with ``cfg``.
    """
    if isinstance(spec, Spectrogram):
        values, cfg = spec.values, spec.config
    else:
        values = np.asarray(spec)
        cfg = cfg or FULL_SCALE
    values = np.asarray(values, dtype=np.float64)
    if values.size and (values.min() < -1.0 - 1e-6 or values.max() > 1.0 + 1e-6):
        raise RangeError("normalized values must lie in [-1, 1]")
    values = np.clip(values, -1.0, 1.0)
    return (values + 1.0) * 0.5 * (cfg.max_db - cfg.min_db) + cfg.min_db


def stft_log_magnitude(waveform, cfg=FULL_SCALE):
    if not isinstance(waveform, Waveform):
        waveform = Waveform(np.asarray(waveform), cfg.sample_rate)
    x = fit_length(waveform.samples, cfg)
    mag = np.abs(_stft(x, cfg))[: cfg.n_freq] * _amplitude_scale(cfg.fft_size)
    values = normalize(amplitude_to_db(mag, cfg), cfg)
    return Spectrogram(values[:, :, None].astype(np.float32), cfg)


def griffin_lim(target_mag, cfg, iters, phase=None):
    """Alternating projection phase reconstruction.

    ``target_mag`` has shape (n_freq, n_frames) in STFT units. Returns the
    time signal and the inconsistency after each iteration: the two-sided
    Frobenius distance between the target magnitude and the magnitude of
    the current signal's STFT.
    """
    if iters < 1:
        raise ConfigError("iters must be >= 1")
    target = np.asarray(target_mag, dtype=np.float64)
    n_bins = cfg.fft_size // 2 + 1
    # DC counted once, interior bins twice (conjugate mirror); Nyquist free
    weight = np.full((cfg.n_freq, 1), 2.0)
    weight[0] = 1.0
    if phase is None:
        phase = np.zeros_like(target)

    spectrum = np.zeros((n_bins, cfg.n_frames), dtype=np.complex128)
    spectrum[: cfg.n_freq] = target * np.exp(1j * phase)
    history = []
    x = None
    for _ in range(iters):
        x = _istft(spectrum, cfg)
        rebuilt = _stft(x, cfg)
        mag = np.abs(rebuilt[: cfg.n_freq])
        history.append(float(np.sqrt(np.sum(weight * (mag - target) ** 2))))
        unit = np.ones_like(rebuilt[: cfg.n_freq])
        nz = mag > 0
        unit[nz] = rebuilt[: cfg.n_freq][nz] / mag[nz]
        spectrum = rebuilt.copy()
        spectrum[: cfg.n_freq] = target * unit
    return x, history


def invert_spectrogram(spec, iters=60, return_history=False):
    """Reconstruct a waveform from a normalized log-magnitude spectrogram."""
    if not isinstance(spec, Spectrogram):
        raise DataError("invert_spectrogram expects a Spectrogram")
    cfg = spec.config
    db = denormalize(spec.values[:, :, 0], cfg)
    mag = db_to_amplitude(db) / _amplitude_scale(cfg.fft_size)
    # the dB floor stands for silence
    mag[spec.values[:, :, 0] <= -1.0] = 0.0
    x, history = griffin_lim(mag, cfg, iters)
    wave = Waveform(np.clip(x, -1.0, 1.0), cfg.sample_rate)
    if return_history:
        return wave, history
    return wave


def pearson(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / den) if den > 0 else 0.0


def round_trip(values, cfg, iters=60):
    """Spectrogram array -> waveform -> spectrogram array, batched."""
    values = np.asarray(values)
    out = np.empty(values.shape, dtype=np.float32)
    for i, v in enumerate(values):
        wave = invert_spectrogram(Spectrogram(np.clip(v, -1, 1), cfg), iters)
        out[i] = stft_log_magnitude(wave, cfg).values
    return out


class SpectrogramTransformer(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping raw waveforms to spectrogram arrays.

    ``X`` is a sequence of 1-d sample arrays (lengths may differ); output has
    shape ``(n, n_freq, n_frames, 1)``.
    """

    def __init__(self, n_freq=256, n_frames=128, sample_rate=16000, hop_length=121,
                 min_db=-100.0, max_db=20.0, pad=True):
        self.n_freq = n_freq
        self.n_frames = n_frames
        self.sample_rate = sample_rate
        self.hop_length = hop_length
        self.min_db = min_db
        self.max_db = max_db
        self.pad = pad

    @property
    def config_(self):
        return SpectroConfig(self.n_freq, self.n_frames, self.sample_rate,
                             self.hop_length, self.min_db, self.max_db)

    def fit(self, X, y=None):
        self.n_features_out_ = self.n_freq * self.n_frames
        return self

    def transform(self, X):
        cfg = self.config_
        out = np.empty((len(X),) + cfg.shape, dtype=np.float32)
        for i, samples in enumerate(X):
            x = fit_length(samples, cfg, pad=self.pad)
            out[i] = stft_log_magnitude(Waveform(x, cfg.sample_rate), cfg).values
        return out

    def inverse_transform(self, X, iters=60):
        cfg = self.config_
        return np.stack([invert_spectrogram(Spectrogram(v, cfg), iters).samples for v in X])
