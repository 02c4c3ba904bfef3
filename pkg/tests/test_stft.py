import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import crandn
from rtfcbw.errors import DimensionMismatch, EmptyRange, InvalidSchedule, SignalTooShort
from rtfcbw.stft import (
    SegmentSchedule,
    StftConfig,
    analyze,
    frames_within,
    read_wav,
    sample_covariance,
    schedule_from_samples,
    synthesize,
    write_wav,
)

CFG = StftConfig()
SMALL = StftConfig(frame_length=64, frame_shift=16, sample_rate=8000)


def test_defaults():
    assert (CFG.frame_length, CFG.frame_shift, CFG.sample_rate) == (3200, 800, 16000)
    assert CFG.window == "sqrt-hann"
    assert CFG.n_bins == 1601


def test_sqrt_hann_overlap_add_constant():
    w = CFG.analysis_window() * CFG.synthesis_window()
    S = CFG.frame_shift
    acc = sum(np.roll(w, k * S) for k in range(CFG.frame_length // S))
    np.testing.assert_allclose(acc, acc[0], rtol=1e-12)


def test_analyze_zero():
    spec = analyze(np.zeros((4000, 2)), CFG)
    assert spec.shape == (CFG.n_frames(4000), CFG.n_bins, 2)
    assert not spec.any()


def test_analyze_too_short():
    with pytest.raises(SignalTooShort):
        analyze(np.zeros(100), CFG)


def test_sinusoid_energy_in_its_bin():
    k = 160  # 800 Hz at 5 Hz resolution
    n = np.arange(16000)
    x = np.cos(2 * np.pi * k * n / CFG.frame_length)
    spec = analyze(x, CFG)
    t = 8  # a fully interior frame
    p = np.abs(spec[t]) ** 2
    # The sqrt-Hann window is a half-period sine whose transform is not
    # confined to one bin, so the 99% energy check is applied to the tone bin
    # plus its two neighbours. The rectangular-window test below checks the
    # single-bin version.
    assert np.argmax(p) == k
    assert p[k - 1 : k + 2].sum() >= 0.99 * p.sum()


def test_sinusoid_energy_rectangular_window_single_bin():
    cfg = StftConfig(window="rect", frame_length=3200, frame_shift=800)
    k = 160
    x = np.cos(2 * np.pi * k * np.arange(16000) / 3200)
    p = np.abs(analyze(x, cfg)[8]) ** 2
    assert p[k] >= 0.99 * p.sum()


def test_frame_alignment():
    # frame t covers samples [t*S - L, t*S) of the original signal
    x = np.zeros(8000)
    x[1000] = 1.0
    spec = analyze(x, CFG)
    L, S = CFG.frame_length, CFG.frame_shift
    hit = [t for t in range(spec.shape[0]) if np.abs(spec[t]).max() > 0]
    expected = [t for t in range(spec.shape[0]) if t * S - L <= 1000 < t * S]
    assert hit == expected


def test_roundtrip_white_noise(rng):
    x = rng.standard_normal((20000, 3))
    y = synthesize(analyze(x, CFG), CFG, len(x))
    L = CFG.frame_length
    sl = slice(L, len(x) - L)
    assert np.linalg.norm(y[sl] - x[sl]) <= 1e-6 * np.linalg.norm(x[sl])


def test_roundtrip_is_exact_everywhere_with_padding(rng):
    x = rng.standard_normal(9000)
    y = synthesize(analyze(x, CFG), CFG, len(x))
    np.testing.assert_allclose(y, x, atol=1e-10)


@given(st.integers(64, 600), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_roundtrip_property(n, M, seed):
    x = np.random.default_rng(seed).standard_normal((n, M))
    y = synthesize(analyze(x, SMALL), SMALL, n)
    np.testing.assert_allclose(y, x, atol=1e-10 * max(1.0, np.abs(x).max()))


def test_synthesize_zero():
    y = synthesize(np.zeros((10, CFG.n_bins, 2), complex), CFG)
    assert y.shape[1] == 2 and not y.any()


def test_synthesize_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        synthesize(np.zeros((10, 100, 2), complex), CFG)


def test_single_grain_placement():
    cfg = SMALL
    T = 9
    spec = np.zeros((T, cfg.n_bins), complex)
    t0 = 4
    spec[t0, 3] = 1.0
    L, S = cfg.frame_length, cfg.frame_shift
    total = (T - 1) * S + L
    y = synthesize(spec, cfg, total - 2 * L)
    # direct overlap-add oracle
    grain = np.fft.irfft(spec[t0], n=L) * cfg.synthesis_window()
    norm = np.zeros(total)
    for t in range(T):
        norm[t * S : t * S + L] += cfg.analysis_window() * cfg.synthesis_window()
    ref = np.zeros(total)
    ref[t0 * S : t0 * S + L] = grain
    ref = (ref / np.where(norm > 1e-10, norm, 1.0))[L : total - L]
    np.testing.assert_allclose(y, ref, atol=1e-14)


# --- schedules and covariances -------------------------------------------------


def test_schedule_validation():
    with pytest.raises(InvalidSchedule):
        SegmentSchedule(range(0, 5), range(3, 8), range(9, 12))
    with pytest.raises(InvalidSchedule):
        SegmentSchedule(range(0, 5), range(5, 5), range(9, 12))
    s = SegmentSchedule(range(0, 5), range(5, 8), range(9, 12))
    assert s.segment(2) == range(5, 8)


def test_frames_within_excludes_straddling():
    cfg = CFG
    fr = frames_within(cfg, 16000, 64000, 200)
    L, S = cfg.frame_length, cfg.frame_shift
    for t in fr:
        assert t * S - L >= 16000 and t * S <= 64000
    assert (fr.start - 1) * S - L < 16000
    assert (fr.stop) * S > 64000


def test_schedule_from_samples_default_layout():
    T = CFG.n_frames(7 * 16000)
    s = schedule_from_samples((0, 16000, 64000, 112000), CFG, T)
    assert s.noise_only.start == 4 and s.noise_only.stop == 21
    assert len(s.single_speaker) == 57 and len(s.dual_speaker) == 57
    assert s.segment_samples(3) == range(64000, 112000)


def test_sample_covariance_single_frame(rng):
    spec = crandn(rng, 5, 3, 4)
    R = sample_covariance(spec, range(2, 3), bin=1)
    y = spec[2, 1]
    np.testing.assert_allclose(R, np.outer(y, y.conj()))


def test_sample_covariance_white_frames(rng):
    spec = crandn(rng, 10000, 1, 4)
    R = sample_covariance(spec, range(10000), bin=0)
    assert np.linalg.norm(R - np.eye(4)) <= 0.1


def test_sample_covariance_empty_and_out_of_range(rng):
    spec = crandn(rng, 5, 3, 2)
    with pytest.raises(EmptyRange):
        sample_covariance(spec, range(2, 2))
    with pytest.raises(EmptyRange):
        sample_covariance(spec, range(3, 9))


def test_sample_covariance_all_bins_matches_single_bin(rng):
    spec = crandn(rng, 20, 6, 3)
    R = sample_covariance(spec, range(4, 17))
    for f in range(6):
        np.testing.assert_allclose(R[f], sample_covariance(spec, range(4, 17), bin=f), atol=1e-15)


@given(st.integers(1, 30), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_sample_covariance_hermitian_psd_and_order_invariant(T, M, seed):
    rng = np.random.default_rng(seed)
    spec = crandn(rng, T, 1, M) * 10.0 ** rng.uniform(-3, 3)
    R = sample_covariance(spec, range(T), bin=0)
    scale = max(np.abs(R).max(), 1e-300)
    assert np.abs(R - R.conj().T).max() <= 1e-14 * scale
    assert np.linalg.eigvalsh(R).min() >= -1e-12 * scale
    perm = rng.permutation(T)
    R2 = sample_covariance(spec[perm], range(T), bin=0)
    np.testing.assert_allclose(R2, R, atol=1e-12 * scale)


def test_wav_roundtrip(tmp_path, rng):
    x = 0.5 * rng.uniform(-1, 1, (1000, 2))
    write_wav(tmp_path / "a.wav", x, 16000, "float32")
    y, rate = read_wav(tmp_path / "a.wav")
    assert rate == 16000
    np.testing.assert_allclose(y, x, atol=1e-7)
    write_wav(tmp_path / "b.wav", x, 16000, "int16")
    y, _ = read_wav(tmp_path / "b.wav")
    np.testing.assert_allclose(y, x, atol=1.0 / 16000)
