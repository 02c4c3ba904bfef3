"""Closed-form LCMV beamformer and its application to spectrograms."""

from dataclasses import dataclass

import numpy as np

from .errors import CollinearConstraints, DimensionMismatch, SingularNoiseCovariance, first_index
from .numerics import hermitian

__all__ = ["BeamformerWeights", "db_to_linear", "lcmv_weights", "apply_beamformer"]

SINGULAR_TOL = 1e-12


def db_to_linear(delta_db):
    """Amplitude scaling for a gain given in dB (``-40 dB -> 0.01``)."""
    return 10.0 ** (delta_db / 20.0)


@dataclass
class BeamformerWeights:
    w: np.ndarray  # (..., M)
    delta: float
    reference_index: int = 0


def lcmv_weights(h, g, R_n, delta, reference_index=0):
    """``w = R_n^{-1} C (C^H R_n^{-1} C)^{-1} [1, delta]^T`` with ``C = [h, g]``.

    Minimizes ``w^H R_n w`` subject to ``w^H h = 1`` and ``w^H g = delta``.
    ``delta`` is a real linear gain.
    """
    h = np.asarray(h, dtype=complex)
    g = np.asarray(g, dtype=complex)
    R_n = np.asarray(R_n, dtype=complex)
    if np.iscomplexobj(delta) and np.imag(delta) != 0:
        raise ValueError("delta must be real")
    delta = float(np.real(delta))
    lam = np.linalg.eigvalsh(0.5 * (R_n + hermitian(R_n)))
    bad = lam[..., 0] <= SINGULAR_TOL * np.abs(lam).max(axis=-1)
    if bad.any():
        raise SingularNoiseCovariance("noise covariance is singular", first_index(bad))
    C = np.stack([h, g], axis=-1)
    X = np.linalg.solve(R_n, C)  # R_n^{-1} C
    G = hermitian(C) @ X
    G = 0.5 * (G + hermitian(G))
    mu = np.linalg.eigvalsh(G)
    bad = mu[..., 0] <= SINGULAR_TOL * mu[..., -1]
    if bad.any():
        raise CollinearConstraints("target and interferer RTFs are collinear", first_index(bad))
    rhs = np.broadcast_to(np.array([1.0, delta], dtype=complex), G.shape[:-1])
    y = np.linalg.solve(G, rhs[..., None])[..., 0]
    w = np.einsum("...ij,...j->...i", X, y)
    return BeamformerWeights(w=w, delta=delta, reference_index=reference_index)


def apply_beamformer(w, spec):
    """``z_t = w^H y_t`` for every frame and bin.

    ``w`` is ``(F, M)`` (or BeamformerWeights), ``spec`` is ``(T, F, M)``;
    returns ``(T, F)``.
    """
    if isinstance(w, BeamformerWeights):
        w = w.w
    w = np.asarray(w)
    spec = np.asarray(spec)
    if spec.ndim != 3 or w.shape != spec.shape[1:]:
        raise DimensionMismatch(f"weights {w.shape} do not match spectrogram {spec.shape}")
    return np.einsum("fm,tfm->tf", w.conj(), spec)
