"""Dataset splits, guidance sampling and on-disk formats."""
import json
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataError, FormatError
from .spectro import FULL_SCALE, Spectrogram, SpectroConfig, Waveform, fit_length, stft_log_magnitude

MAGIC = b"GGSP"
VERSION = 1
_HEADER = struct.Struct("<4sHIII")
_LEN = struct.Struct("<I")


@dataclass
class DatasetSplit:
    unlabelled: np.ndarray
    labelled: np.ndarray
    labels: np.ndarray
    test: np.ndarray
    test_labels: np.ndarray
    seed: int
    fraction: float
    labelled_index: np.ndarray
    test_index: np.ndarray

    @property
    def n_classes(self):
        ys = [self.labels, self.test_labels]
        return int(max(int(y.max()) for y in ys if len(y)) + 1)


def guidance_size(n_pool, fraction):
    if not 0.0 < fraction <= 1.0:
        raise ConfigError("fraction must be in (0, 1]")
    n = int(round(fraction * n_pool))
    if n == 0:
        raise ConfigError(f"fraction {fraction} of {n_pool} samples yields no labelled data")
    return n


def sample_guidance_indices(y, fraction, seed, stratified=False):
    """Indices of the labelled guidance subset, deterministic in ``seed``."""
    y = np.asarray(y)
    n = guidance_size(len(y), fraction)
    rng = np.random.default_rng(seed)
    if not stratified:
        return np.sort(rng.choice(len(y), size=n, replace=False))
    classes = np.unique(y)
    per = np.full(len(classes), n // len(classes))
    per[: n % len(classes)] += 1
    picks = []
    for cls, k in zip(classes, per):
        members = np.flatnonzero(y == cls)
        picks.append(rng.choice(members, size=min(k, len(members)), replace=False))
    return np.sort(np.concatenate(picks))


def make_guidance_split(X, y, fraction, seed, X_test=None, y_test=None,
                        test_fraction=0.0, stratified=False):
    """Split a labelled pool into labelled guidance, unlabelled remainder and test.

    When no explicit test set is given, ``test_fraction`` of the pool is held
    out first (under the same seed) and the guidance fraction applies to the
    rest.
    """
    X = np.asarray(X)
    y = np.asarray(y)
    if len(X) == 0 or len(X) != len(y):
        raise DataError("pool must be non-empty with one label per sample")
    rng = np.random.default_rng([seed, 1])
    pool_idx = np.arange(len(X))
    test_idx = np.array([], dtype=int)
    if X_test is None:
        if test_fraction > 0:
            n_test = int(round(test_fraction * len(X)))
            test_idx = np.sort(rng.choice(len(X), size=n_test, replace=False))
            pool_idx = np.setdiff1d(pool_idx, test_idx)
        X_test = X[test_idx]
        y_test = y[test_idx]
    else:
        X_test = np.asarray(X_test)
        y_test = np.asarray(y_test)

    local = sample_guidance_indices(y[pool_idx], fraction, seed, stratified)
    lab_idx = pool_idx[local]
    rest = np.setdiff1d(pool_idx, lab_idx)
    return DatasetSplit(
        unlabelled=X[rest], labelled=X[lab_idx], labels=y[lab_idx],
        test=X_test, test_labels=y_test, seed=seed, fraction=fraction,
        labelled_index=lab_idx, test_index=test_idx,
    )


def write_spectrogram(path, spec):
    values = np.ascontiguousarray(spec.values, dtype="<f4")
    h, w, c = values.shape
    meta = json.dumps(spec.config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, h, w, c))
        fh.write(values.tobytes(order="C"))
        fh.write(_LEN.pack(len(meta)))
        fh.write(meta)
    return Path(path)


def read_spectrogram(path):
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, h, w, c = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    n_bytes = h * w * c * 4
    off = _HEADER.size
    if len(blob) < off + n_bytes + _LEN.size:
        raise FormatError("truncated payload")
    values = np.frombuffer(blob, dtype="<f4", count=h * w * c, offset=off).reshape(h, w, c)
    off += n_bytes
    (n_meta,) = _LEN.unpack_from(blob, off)
    off += _LEN.size
    if len(blob) != off + n_meta:
        raise FormatError("metadata length does not match file size")
    try:
        meta = json.loads(blob[off:].decode("utf-8"))
        cfg = SpectroConfig.from_dict(meta)
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad metadata: {exc}") from exc
    return Spectrogram(values.astype(np.float32), cfg)


def read_wav(path):
    with wave.open(str(path), "rb") as wf:
        if wf.getsampwidth() != 2:
            raise FormatError("only 16-bit PCM WAV is supported")
        n_ch = wf.getnchannels()
        sr = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_ch > 1:
        data = data.reshape(-1, n_ch).mean(axis=1)
    return Waveform(data, sr)


def write_wav(path, waveform):
    pcm = np.clip(np.round(waveform.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(waveform.sample_rate))
        wf.writeframes(pcm.tobytes())


def load_digit_directory(root, cfg=FULL_SCALE, clip_seconds=1.0):
    """Ingest a spoken-digit corpus laid out as WAV files named ``<digit>_*.wav``.

    Clips are center-cropped or zero-padded to ``clip_seconds`` and then to
    the frame budget of ``cfg``.
    """
    names = {"zero": 0, "one": 1, "two": 2, "three": 3, "four": 4,
             "five": 5, "six": 6, "seven": 7, "eight": 8, "nine": 9}
    X, y = [], []
    for path in sorted(Path(root).rglob("*.wav")):
        head = path.stem.split("_")[0].lower()
        label = names.get(head, int(head) if head.isdigit() else None)
        if label is None:
            continue
        wav = read_wav(path)
        if wav.sample_rate != cfg.sample_rate:
            raise FormatError(f"{path}: sample rate {wav.sample_rate} != {cfg.sample_rate}")
        clip = fit_length(wav.samples, int(clip_seconds * cfg.sample_rate), pad=True)
        clip = fit_length(clip, cfg, pad=True)
        X.append(stft_log_magnitude(Waveform(clip, cfg.sample_rate), cfg).values)
        y.append(label)
    if not X:
        raise DataError(f"no labelled WAV files under {root}")
    return np.stack(X), np.asarray(y)

