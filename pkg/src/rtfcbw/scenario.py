"""Synthetic successive-speaker scenes with known ground truth.

A scene has constantly active diffuse noise, an interfering speaker that
starts at the second boundary and a target speaker that starts at the third.
Speaker images are built in the STFT domain by multiplying the reference-mic
STFT of each source with its RTF; the noise is generated per bin by shaping
white frames with a square-root factor of the sinc coherence.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSchedule, SourceOnMicrophone
from .numerics import hermitian, hermitian_sqrt_factor
from .stft import StftConfig, analyze, read_wav, schedule_from_samples, synthesize

__all__ = [
    "ArrayGeometry",
    "ScenarioConfig",
    "GroundTruth",
    "synth_rtf",
    "diffuse_coherence",
    "floor_eigenvalues",
    "speech_like_source",
    "render_scenario",
    "oracle_covariances",
    "position_grid",
]

COHERENCE_FLOOR = 1e-6


@dataclass(frozen=True)
class ArrayGeometry:
    mic_positions: tuple
    reference_index: int = 0
    speed_of_sound: float = 343.0

    def __post_init__(self):
        pos = np.asarray(self.mic_positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 2:
            raise ValueError("need at least 2 microphones with 3-D coordinates")
        if not 0 <= self.reference_index < pos.shape[0]:
            raise ValueError(f"reference_index {self.reference_index} out of range")
        object.__setattr__(self, "mic_positions", tuple(map(tuple, pos.tolist())))

    @classmethod
    def linear(cls, n_mics=4, spacing=0.02, center=(3.5, 3.0, 1.3), reference_index=0):
        offsets = (np.arange(n_mics) - (n_mics - 1) / 2) * spacing
        pos = np.asarray(center, dtype=float)[None, :] + np.outer(offsets, [1.0, 0.0, 0.0])
        return cls(tuple(map(tuple, pos)), reference_index)

    @property
    def positions(self):
        return np.asarray(self.mic_positions)

    @property
    def n_mics(self):
        return len(self.mic_positions)

    @property
    def center(self):
        return self.positions.mean(axis=0)

    def distances(self):
        p = self.positions
        return np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)


def position_grid(geometry, distances=(1.0, 1.5, 2.0), angles_deg=(30.0, 90.0, 150.0)):
    """Source positions on a polar grid around the array center (horizontal plane)."""
    c = geometry.center
    out = []
    for d in distances:
        for a in angles_deg:
            rad = np.deg2rad(a)
            out.append(tuple((c + d * np.array([np.cos(rad), np.sin(rad), 0.0])).tolist()))
    return out


@dataclass(frozen=True)
class ScenarioConfig:
    geometry: ArrayGeometry = field(default_factory=ArrayGeometry.linear)
    target_position: tuple = (3.5, 4.5, 1.3)
    interferer_position: tuple = (4.8, 3.75, 1.3)
    snr_db: float = 0.0
    sir_db: float = 0.0
    # noise start, interferer start, target start, end
    schedule_seconds: tuple = (0.0, 1.0, 4.0, 7.0)
    reflections: int = 8
    decay: float = 0.072
    reflection_gain: float = 0.25
    max_reflection_delay: float = 0.03
    modulation_db: float = 6.0
    modulation_block: float = 0.25
    target_wav: str = None
    interferer_wav: str = None
    seed: int = 0

    def __post_init__(self):
        if np.allclose(self.target_position, self.interferer_position):
            raise ValueError("target and interferer must not be collocated")
        if not (np.isfinite(self.snr_db) and np.isfinite(self.sir_db)):
            raise ValueError("snr_db and sir_db must be finite")
        t = self.schedule_seconds
        if len(t) != 4 or any(a >= b for a, b in zip(t, t[1:])):
            raise InvalidSchedule(f"schedule_seconds must be 4 increasing times, got {t}")


@dataclass
class GroundTruth:
    h: np.ndarray  # (F, M) target RTF
    g: np.ndarray  # (F, M) interferer RTF
    phi_x: np.ndarray  # (3, F) per-segment target PSD at the reference
    phi_u: np.ndarray  # (3, F)
    noise_cov: np.ndarray  # (F, M, M) model noise covariance
    x: np.ndarray  # (T, F, M) target image
    u: np.ndarray  # (T, F, M) interferer image
    n: np.ndarray  # (T, F, M) noise
    reference_index: int
    stft: StftConfig
    n_samples: int


def synth_rtf(geometry, source, freqs, reflections=8, decay=0.072, rng=None,
              reflection_gain=0.25, max_delay=0.03):
    """Per-bin RTF of a point source: direct path plus random early reflections.

    Returns an ``(F, M)`` array whose reference column is exactly one.
    """
    rng = np.random.default_rng(rng)
    pos = geometry.positions
    c = geometry.speed_of_sound
    r = geometry.reference_index
    d = np.linalg.norm(pos - np.asarray(source, dtype=float)[None, :], axis=1)
    if np.any(d < 1e-6):
        raise SourceOnMicrophone(f"source {source} coincides with a microphone")
    f = np.asarray(freqs, dtype=float)[:, None]
    H = np.exp(-2j * np.pi * f * d[None, :] / c) / d[None, :]
    if reflections > 0:
        tau = rng.uniform(0.0, max_delay, reflections)
        dirs = rng.standard_normal((reflections, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        amp = (rng.standard_normal(reflections) + 1j * rng.standard_normal(reflections)) / np.sqrt(2)
        amp *= reflection_gain * np.sqrt(np.exp(-tau / decay)) / d[r]
        rel = pos - pos[r]
        # (K, M) arrival times of each reflection at each mic
        delays = d[r] / c + tau[:, None] - (dirs @ rel.T) / c
        H = H + np.einsum("k,fkm->fm", amp, np.exp(-2j * np.pi * f[:, :, None] * delays[None]))
    rtf = H / H[:, r : r + 1]
    rtf[:, r] = 1.0
    return rtf


def diffuse_coherence(geometry, f):
    """Spherically isotropic coherence ``sin(2 pi f d / c) / (2 pi f d / c)``.

    ``f`` may be a scalar (returns ``(M, M)``) or an array (``(F, M, M)``).
    """
    d = geometry.distances()
    f = np.asarray(f, dtype=float)
    return np.sinc(2.0 * f[..., None, None] * d / geometry.speed_of_sound)


def floor_eigenvalues(gamma, floor=COHERENCE_FLOOR):
    """Raise eigenvalues of a (stack of) symmetric matrix to at least ``floor``."""
    lam, V = np.linalg.eigh(gamma)
    lam = np.maximum(lam, floor)
    return (V * lam[..., None, :]) @ hermitian(V)


def _tilt(freqs, corner=500.0):
    f = np.maximum(np.asarray(freqs, dtype=float), 1.0)
    return np.where(f > corner, corner / f, 1.0)


def speech_like_source(n_samples, rate, rng, corner=500.0, modulation_db=6.0, block=0.25):
    """Gaussian noise with a -6 dB/octave tilt above ``corner`` and slow level changes.

    The level follows independent per-block gains (std ``modulation_db``)
    interpolated linearly, so the PSD differs between segments as it does
    for real speech.
    """
    white = rng.standard_normal(n_samples)
    spec = np.fft.rfft(white) * _tilt(np.fft.rfftfreq(n_samples, 1.0 / rate), corner)
    sig = np.fft.irfft(spec, n=n_samples)
    if modulation_db > 0:
        nb = int(np.ceil(n_samples / (block * rate))) + 2
        gains_db = rng.normal(0.0, modulation_db, nb)
        t_blocks = np.arange(nb) * block * rate
        env = 10 ** (np.interp(np.arange(n_samples), t_blocks, gains_db) / 20)
        sig = sig * env
    return sig


def _load_source(path, n_samples):
    data, _ = read_wav(path)
    sig = data[:, 0]
    if len(sig) < n_samples:
        sig = np.resize(sig, n_samples)
    return sig[:n_samples]


def render_scenario(cfg, stft=StftConfig()):
    """Render a scene; returns ``(mix, truth, schedule)``.

    The interferer and noise are scaled so that the broadband SIR and SNR at
    the reference channel, measured over each component's active samples,
    equal ``cfg.sir_db`` and ``cfg.snr_db``.
    """
    geo = cfg.geometry
    r = geo.reference_index
    fs = stft.sample_rate
    bounds = [int(round(t * fs)) for t in cfg.schedule_seconds]
    if bounds[0] != 0:
        raise InvalidSchedule("schedule must start at 0 s")
    n_samples = bounds[3]
    if bounds[2] - bounds[1] < stft.frame_length or bounds[3] - bounds[2] < stft.frame_length:
        raise InvalidSchedule("speech segments must be at least one frame long")

    seeds = np.random.SeedSequence(cfg.seed).spawn(5)
    rng_h, rng_g, rng_x, rng_u, rng_n = (np.random.default_rng(s) for s in seeds)
    freqs = stft.freqs
    h = synth_rtf(geo, cfg.target_position, freqs, cfg.reflections, cfg.decay, rng_h,
                  cfg.reflection_gain, cfg.max_reflection_delay)
    g = synth_rtf(geo, cfg.interferer_position, freqs, cfg.reflections, cfg.decay, rng_g,
                  cfg.reflection_gain, cfg.max_reflection_delay)

    def source(path, rng):
        if path:
            return _load_source(path, n_samples)
        return speech_like_source(n_samples, fs, rng, modulation_db=cfg.modulation_db,
                                  block=cfg.modulation_block)

    s_x = source(cfg.target_wav, rng_x)
    s_u = source(cfg.interferer_wav, rng_u)
    s_x[: bounds[2]] = 0.0
    s_u[: bounds[1]] = 0.0
    X_ref = analyze(s_x, stft)
    U_ref = analyze(s_u, stft)
    X = X_ref[..., None] * h[None]
    U = U_ref[..., None] * g[None]

    gamma = floor_eigenvalues(diffuse_coherence(geo, freqs))
    factor = hermitian_sqrt_factor(gamma)  # F^H F = gamma
    T, F = X_ref.shape
    M = geo.n_mics
    W = (rng_n.standard_normal((T, F, M)) + 1j * rng_n.standard_normal((T, F, M))) / np.sqrt(2)
    noise_amp = _tilt(freqs)
    N = np.einsum("fji,tfj->tfi", factor.conj(), W) * noise_amp[None, :, None]
    noise_cov = gamma * (noise_amp**2)[:, None, None]

    x_r = synthesize(X[..., r], stft, n_samples)
    u_r = synthesize(U[..., r], stft, n_samples)
    n_r = synthesize(N[..., r], stft, n_samples)
    p_x = np.mean(x_r[bounds[2] :] ** 2)
    p_u = np.mean(u_r[bounds[1] :] ** 2)
    p_n = np.mean(n_r**2)
    cu = np.sqrt(p_x / (p_u * 10 ** (cfg.sir_db / 10)))
    cn = np.sqrt(p_x / (p_n * 10 ** (cfg.snr_db / 10)))
    U = U * cu
    N = N * cn
    noise_cov = noise_cov * cn**2
    mix = X + U + N

    schedule = schedule_from_samples(bounds, stft, T)
    phi_x = np.zeros((3, F))
    phi_u = np.zeros((3, F))
    U_r = U[..., r]
    for s in (1, 2, 3):
        fr = schedule.segment(s)
        phi_x[s - 1] = np.mean(np.abs(X_ref[fr.start : fr.stop]) ** 2, axis=0)
        phi_u[s - 1] = np.mean(np.abs(U_r[fr.start : fr.stop]) ** 2, axis=0)
    truth = GroundTruth(h=h, g=g, phi_x=phi_x, phi_u=phi_u, noise_cov=noise_cov,
                        x=X, u=U, n=N, reference_index=r, stft=stft, n_samples=n_samples)
    return mix, truth, schedule


def oracle_covariances(truth, bin=None, segment=3):
    """Model covariances ``R_y = h phi_x h^H + g phi_u g^H + R_n`` for one segment.

    ``bin=None`` returns ``(F, M, M)`` stacks. Keys: ``R_y, R_n, R_v, R_x, R_u``.
    """
    if segment not in (1, 2, 3):
        raise ValueError(f"segment must be 1, 2 or 3, got {segment}")
    sel = slice(None) if bin is None else bin
    h = truth.h[sel]
    g = truth.g[sel]
    px = truth.phi_x[segment - 1][sel]
    pu = truth.phi_u[segment - 1][sel]
    R_n = truth.noise_cov[sel]
    R_x = np.asarray(px)[..., None, None] * (h[..., :, None] * h[..., None, :].conj())
    R_u = np.asarray(pu)[..., None, None] * (g[..., :, None] * g[..., None, :].conj())
    R_v = R_u + R_n
    return {"R_y": R_x + R_v, "R_n": R_n, "R_v": R_v, "R_x": R_x, "R_u": R_u}
