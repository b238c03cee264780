import itertools
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ggan.data import (
    guidance_size,
    load_digit_directory,
    make_guidance_split,
    read_spectrogram,
    read_wav,
    sample_guidance_indices,
    write_spectrogram,
    write_wav,
)
from ggan.exceptions import ConfigError, FormatError
from ggan.spectro import FULL_SCALE, TOY_SCALE, Spectrogram, Waveform


def test_guidance_size_arithmetic():
    assert guidance_size(1000, 0.05) == 50
    with pytest.raises(ConfigError):
        guidance_size(10, 0.01)
    with pytest.raises(ConfigError):
        guidance_size(10, 0.0)


def test_split_is_deterministic_and_disjoint():
    X = np.arange(1000)[:, None]
    y = np.arange(1000) % 10
    a = make_guidance_split(X, y, 0.05, seed=7, test_fraction=0.2)
    b = make_guidance_split(X, y, 0.05, seed=7, test_fraction=0.2)
    assert len(a.labels) == 40  # 5% of the 800 left after the test hold-out
    np.testing.assert_array_equal(a.labelled_index, b.labelled_index)
    lab, test = set(a.labelled_index), set(a.test_index)
    assert not lab & test
    assert len(a.unlabelled) + len(a.labelled) + len(a.test) == 1000
    assert not set(a.unlabelled[:, 0]) & lab


def test_pool_of_1000_at_five_percent():
    y = np.arange(1000) % 10
    assert len(sample_guidance_indices(y, 0.05, seed=7)) == 50


def test_pairwise_overlap_matches_hypergeometric_expectation():
    # E|A ∩ B| = k * k / N = 10 * 10 / 1000 = 0.1 for two random 10-subsets
    y = np.zeros(1000)
    subsets = [set(sample_guidance_indices(y, 0.01, seed=s)) for s in range(1, 6)]
    assert len({frozenset(s) for s in subsets}) == 5
    overlaps = [len(set(sample_guidance_indices(y, 0.01, seed=a)) &
                    set(sample_guidance_indices(y, 0.01, seed=a + 1000)))
                for a in range(2000)]
    assert np.mean(overlaps) == pytest.approx(0.1, abs=0.03)


def test_stratified_option_balances_classes():
    y = np.repeat(np.arange(4), 100)
    idx = sample_guidance_indices(y, 0.1, seed=0, stratified=True)
    assert np.bincount(y[idx]).tolist() == [10, 10, 10, 10]


@given(st.integers(0, 10_000), st.floats(0.05, 1.0))
def test_split_is_pure_function_of_inputs(seed, fraction):
    y = np.arange(200) % 4
    X = np.arange(200)
    a = make_guidance_split(X, y, fraction, seed)
    b = make_guidance_split(X, y, fraction, seed)
    np.testing.assert_array_equal(a.labelled_index, b.labelled_index)
    assert len(a.labels) == round(fraction * 200)


def test_spectrogram_file_round_trip(tmp_path, rng):
    spec = Spectrogram(rng.uniform(-1, 1, TOY_SCALE.shape), TOY_SCALE)
    path = write_spectrogram(tmp_path / "a.ggsp", spec)
    back = read_spectrogram(path)
    np.testing.assert_array_equal(back.values, spec.values)
    assert back.config == spec.config


def test_full_scale_payload_size(tmp_path):
    path = tmp_path / "b.ggsp"
    write_spectrogram(path, Spectrogram(np.zeros(FULL_SCALE.shape), FULL_SCALE))
    raw = path.read_bytes()
    header = struct.calcsize("<4sHIII")
    assert raw[:4] == b"GGSP"
    (meta_len,) = struct.unpack_from("<I", raw, header + 256 * 128 * 4)
    assert len(raw) == header + 131072 + 4 + meta_len


def test_truncated_and_bad_magic(tmp_path, rng):
    path = tmp_path / "c.ggsp"
    write_spectrogram(path, Spectrogram(rng.uniform(-1, 1, TOY_SCALE.shape), TOY_SCALE))
    raw = path.read_bytes()
    for cut in (3, 20, len(raw) // 2, len(raw) - 1):
        (tmp_path / "t.ggsp").write_bytes(raw[:cut])
        with pytest.raises(FormatError):
            read_spectrogram(tmp_path / "t.ggsp")
    (tmp_path / "m.ggsp").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        read_spectrogram(tmp_path / "m.ggsp")
    (tmp_path / "v.ggsp").write_bytes(raw[:4] + struct.pack("<H", 9) + raw[6:])
    with pytest.raises(FormatError):
        read_spectrogram(tmp_path / "v.ggsp")


def test_wav_round_trip_and_digit_loader(tmp_path):
    t = np.arange(16000) / 16000
    for label, name in itertools.product((3, 7), ("a", "b")):
        write_wav(tmp_path / f"{label}_{name}.wav",
                  Waveform(0.3 * np.sin(2 * np.pi * 200 * (label + 1) * t), 16000))
    write_wav(tmp_path / "five_x.wav", Waveform(np.zeros(8000), 16000))
    wav = read_wav(tmp_path / "3_a.wav")
    assert wav.sample_rate == 16000
    assert np.max(np.abs(wav.samples - 0.3 * np.sin(2 * np.pi * 800 * t))) < 1e-4
    X, y = load_digit_directory(tmp_path, FULL_SCALE)
    assert X.shape == (5, 256, 128, 1)
    assert sorted(y.tolist()) == [3, 3, 5, 7, 7]
