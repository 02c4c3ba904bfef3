"""RTF estimators for the successive two-speaker scene.

All estimators consume covariance matrices only and accept stacks with
leading batch dimensions (typically one matrix per frequency bin):

* :func:`cw_estimate` - covariance whitening, used for the first speaker.
* :func:`cwu_estimate` - covariance whitening with the undesired covariance.
* :func:`bop_estimate` - blind oblique projection.
* :func:`cbw_estimate` - covariance blocking and whitening.

Returned RTF vectors have their reference entry set to exactly ``1``.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    CollinearWithInterferer,
    InsufficientChannels,
    NotConverged,
    RankDeficientBlocking,
    SingularNoiseCovariance,
    ZeroReferenceEntry,
    first_index,
)
from .numerics import (
    REL_TOL,
    hermitian,
    hermitian_sqrt_factor,
    oblique_projection,
    principal_eigvec,
    principal_singular_pair,
    pseudo_inverse,
    residual_maker,
)

__all__ = [
    "BopOptions",
    "BopSolution",
    "CbwSolution",
    "normalize_rtf",
    "cw_estimate",
    "cwu_estimate",
    "bop_objective",
    "bop_gradient",
    "bop_estimate",
    "cbw_estimate",
]

SINGULAR_TOL = 1e-12
BLOCKING_COND_LIMIT = 1e8


def normalize_rtf(v, r, tol=REL_TOL):
    """Divide by the reference entry; the result has ``v[..., r] == 1`` exactly."""
    v = np.asarray(v, dtype=complex)
    ref = v[..., r]
    bad = np.abs(ref) <= tol * np.linalg.norm(v, axis=-1)
    if bad.any():
        raise ZeroReferenceEntry(f"reference entry {r} is (numerically) zero", first_index(bad))
    out = v / ref[..., None]
    out[..., r] = 1.0
    return out


def _check_invertible(R, name):
    lam = np.linalg.eigvalsh(0.5 * (R + hermitian(R)))
    bad = lam[..., 0] <= SINGULAR_TOL * np.abs(lam).max(axis=-1)
    if bad.any():
        raise SingularNoiseCovariance(f"{name} is singular", first_index(bad))


def cw_estimate(R_y, R_n, r):
    """Normalized de-whitened principal eigenvector of ``R_n^{-H/2} R_y R_n^{-1/2}``."""
    R_y = np.asarray(R_y, dtype=complex)
    R_n = np.asarray(R_n, dtype=complex)
    if R_y.shape != R_n.shape:
        raise ValueError(f"shape mismatch {R_y.shape} vs {R_n.shape}")
    _check_invertible(R_n, "whitening covariance")
    F = hermitian_sqrt_factor(R_n)
    Fh = hermitian(F)
    left = np.linalg.solve(Fh, R_y)  # F^{-H} R_y
    whitened = hermitian(np.linalg.solve(Fh, hermitian(left)))  # F^{-H} R_y F^{-1}
    p = principal_eigvec(whitened)
    return normalize_rtf(np.einsum("...ij,...j->...i", Fh, p), r)


def cwu_estimate(R_y3, R_v2, r):
    """CW applied to the dual-speaker covariance, whitened with ``R_v2``."""
    return cw_estimate(R_y3, R_v2, r)


# --- blind oblique projection -------------------------------------------------


@dataclass(frozen=True)
class BopOptions:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    restarts: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.gradient_tolerance <= 0:
            raise ValueError("gradient_tolerance must be positive")


@dataclass
class BopSolution:
    estimate: np.ndarray
    theta: np.ndarray
    objective: np.ndarray
    gradient_norm: np.ndarray
    converged: np.ndarray
    iterations: int


def bop_objective(theta, R_y3, g):
    """``Tr{P R_y3 P^H}`` with ``P`` the oblique projector keeping ``g`` and blocking ``theta``."""
    P = oblique_projection(g, theta)
    val = np.einsum("...ij,...jk,...ik->...", P, np.asarray(R_y3), P.conj())
    return np.maximum(val.real, 0.0)


def bop_gradient(theta, R_y3, g):
    """Gradient of :func:`bop_objective` w.r.t. the real and imaginary parts of ``theta``.

    Returned as a complex array ``d/dRe + 1j d/dIm``. Derived with Wirtinger
    calculus from the form ``|g|^2 a^H R a / |a|^4`` where ``a = P_theta g``.
    """
    theta = np.asarray(theta, dtype=complex)
    g = np.asarray(g, dtype=complex)
    R = np.asarray(R_y3, dtype=complex)
    n = np.sum(np.abs(theta) ** 2, axis=-1)[..., None]
    s = np.einsum("...i,...i->...", theta.conj(), g)[..., None]
    a = g - theta * s / n
    D = np.sum(np.abs(a) ** 2, axis=-1)[..., None]
    Ra = np.einsum("...ij,...j->...i", R, a)
    N = np.einsum("...i,...i->...", a.conj(), Ra).real[..., None]
    gg = np.sum(np.abs(g) ** 2, axis=-1)[..., None]
    c = gg * (Ra / D**2 - 2.0 * N * a / D**3)
    ct = np.einsum("...i,...i->...", c.conj(), theta)[..., None]
    k = ct * s / n**2
    z = -np.conj(s / n) * c - (ct / n) * g + 2.0 * k.real * theta
    return 2.0 * z


def _orthonormal_complement(g):
    """``(..., M, M-1)`` orthonormal basis of the complement of ``g``."""
    P = residual_maker(g)
    _, V = np.linalg.eigh(P)
    return V[..., :, 1:]


def bop_estimate(R_y3, g, r, opts=BopOptions(), init=None):
    """Minimize the BOP objective over the direction of ``theta``.

    The search runs in the blocked coordinates ``b = P_theta g`` with
    ``g^H b = 1``. There the objective equals ``|g|^2 b^H R_y3 b``, a
    quadratic on an affine set, so Newton's method converges in very few
    steps and does not crawl along the curved valley that the objective
    has in ``theta`` itself. ``theta`` is recovered as ``P_b g``.

    Starts: ``init`` (if given) plus ``opts.restarts`` random directions; the
    lowest objective wins. Convergence is judged on the analytic gradient in
    ``theta``; unconverged bins are flagged and a NotConverged warning is
    issued, but the best point is still returned.
    """
    R = np.asarray(R_y3, dtype=complex)
    R = 0.5 * (R + hermitian(R))
    g = np.asarray(g, dtype=complex)
    M = g.shape[-1]
    if M < 2:
        raise InsufficientChannels("BOP needs at least 2 microphones")
    batch = g.shape[:-1]
    rng = np.random.default_rng(opts.seed)
    starts = []
    if init is not None:
        starts.append(np.broadcast_to(np.asarray(init, dtype=complex), g.shape))
    for _ in range(opts.restarts):
        starts.append((rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)) / np.sqrt(2))
    if not starts:
        raise ValueError("no start points: pass init or use restarts >= 1")

    gg = np.sum(np.abs(g) ** 2, axis=-1)
    Nb = _orthonormal_complement(g)  # (..., M, M-1)
    b0 = g / gg[..., None]
    H = gg[..., None, None] * (hermitian(Nb) @ R @ Nb)
    H_pinv = pseudo_inverse(H)

    def objective_b(c):
        b = b0 + np.einsum("...ij,...j->...i", Nb, c)
        return gg * np.einsum("...i,...ij,...j->...", b.conj(), R, b).real, b

    best_f = np.full(batch, np.inf)
    best_theta = np.zeros(g.shape, dtype=complex)
    iterations = 0
    for theta0 in starts:
        a0 = g - theta0 * (np.einsum("...i,...i->...", theta0.conj(), g)
                           / np.sum(np.abs(theta0) ** 2, axis=-1))[..., None]
        ga = np.einsum("...i,...i->...", g.conj(), a0)
        ga = np.where(np.abs(ga) > 0, ga, 1.0)
        c = np.einsum("...ji,...j->...i", Nb.conj(), a0 / ga[..., None])
        f, b = objective_b(c)
        for it in range(opts.max_iterations):
            grad = gg[..., None] * np.einsum("...ji,...jk,...k->...i", Nb.conj(), R, b)
            gnorm = np.linalg.norm(grad, axis=-1)
            if np.all(gnorm <= opts.gradient_tolerance * np.maximum(f, np.finfo(float).tiny)):
                break
            step = -np.einsum("...ij,...j->...i", H_pinv, grad)
            t = np.ones(batch)
            for _ in range(30):
                f_new, b_new = objective_b(c + t[..., None] * step)
                ok = f_new <= f + 1e-12 * np.abs(f)
                if ok.all():
                    break
                t = np.where(ok, t, 0.5 * t)
            c = c + t[..., None] * step
            f, b = objective_b(c)
        iterations = max(iterations, it + 1)
        # theta = P_b g, the part of g orthogonal to b
        bb = np.sum(np.abs(b) ** 2, axis=-1)
        theta = g - b * (np.einsum("...i,...i->...", b.conj(), g) / bb)[..., None]
        better = f < best_f
        best_f = np.where(better, f, best_f)
        best_theta = np.where(better[..., None], theta, best_theta)

    tnorm = np.linalg.norm(best_theta, axis=-1)
    bad = tnorm <= REL_TOL * np.sqrt(gg)
    if bad.any():
        raise CollinearWithInterferer(
            "every start collapsed onto the interferer RTF", first_index(bad)
        )
    theta = best_theta / tnorm[..., None]
    obj = bop_objective(theta, R, g)
    gnorm = np.linalg.norm(bop_gradient(theta, R, g), axis=-1)
    converged = gnorm <= opts.gradient_tolerance * np.maximum(obj, np.finfo(float).tiny)
    if not converged.all():
        warnings.warn(
            f"BOP did not reach gradient tolerance in {int((~converged).sum())} case(s)",
            NotConverged,
            stacklevel=2,
        )
    return BopSolution(
        estimate=normalize_rtf(theta, r),
        theta=theta,
        objective=obj,
        gradient_norm=gnorm,
        converged=converged,
        iterations=iterations,
    )


# --- covariance blocking and whitening -----------------------------------------


@dataclass
class CbwSolution:
    q_left: np.ndarray  # (..., M-1)
    q_right: np.ndarray  # (..., M-1)
    alpha: np.ndarray  # (...)
    h_tilde: np.ndarray  # (..., M)
    estimate: np.ndarray  # (..., M)
    sigma_ratio: np.ndarray  # (...) second/first singular value of the whitened matrix
    dropped_column: np.ndarray  # (...) column of P_g removed by the reduction
    B: np.ndarray  # (..., 2(M-1), M)


def _reduced_blocking(P, drop):
    M = P.shape[-1]
    cols = np.arange(M)
    keep = np.sort(np.where(cols == drop[..., None], M, cols), axis=-1)[..., : M - 1]
    idx = np.broadcast_to(keep[..., None, :], P.shape[:-1] + (M - 1,))
    return np.take_along_axis(P, idx, axis=-1)


def _cond(A):
    s = np.linalg.svd(A, compute_uv=False)
    with np.errstate(divide="ignore"):
        return np.where(s[..., -1] > 0, s[..., 0] / s[..., -1], np.inf)


def cbw_estimate(R_y3, R_n, g, r):
    """Estimate the second speaker's RTF by blocking ``g`` and whitening the noise.

    Pipeline per batch element:

    1. ``P = I - g g^H / g^H g`` and its reduction ``Pr`` to ``M-1`` columns
       (the last column is dropped; if that loses rank, the column with the
       smallest norm is dropped instead).
    2. ``Rw = (R_n Pr)^+ R_y3 Pr - I`` which is rank one under the model.
    3. ``q_L, q_R`` from one joint SVD of ``Rw``.
    4. ``B = [(R_n Pr)^+; Pr^H]``, ``alpha = -(P_B^R q_R)^+ P_B^L q_L`` with
       ``P_B = I - B B^+`` split column-wise.
    5. ``h_tilde = B^+ [q_L; alpha q_R]``, normalized at ``r``.
    """
    R_y3 = np.asarray(R_y3, dtype=complex)
    R_n = np.asarray(R_n, dtype=complex)
    g = np.asarray(g, dtype=complex)
    M = g.shape[-1]
    if M < 3:
        raise InsufficientChannels(
            f"CBW needs M ≥ 3 microphones (2(M-1) ≥ M+1), got M = {M}"
        )
    batch = g.shape[:-1]
    P = residual_maker(g)
    drop = np.full(batch, M - 1)
    Pr = _reduced_blocking(P, drop)
    bad = _cond(Pr) > BLOCKING_COND_LIMIT
    if bad.any():
        col_norms = np.linalg.norm(P, axis=-2)
        drop = np.where(bad, np.argmin(col_norms, axis=-1), drop)
        Pr = _reduced_blocking(P, drop)
        bad = _cond(Pr) > BLOCKING_COND_LIMIT
        if bad.any():
            raise RankDeficientBlocking("reduced residual maker is rank deficient", first_index(bad))

    A = R_n @ Pr
    bad = _cond(A) > 1.0 / SINGULAR_TOL
    if bad.any():
        raise RankDeficientBlocking("blocked noise covariance is rank deficient", first_index(bad))
    A_pinv = pseudo_inverse(A)
    Rw = A_pinv @ R_y3 @ Pr - np.eye(M - 1)
    sv = np.linalg.svd(Rw, compute_uv=False)
    sigma_ratio = sv[..., 1] / np.where(sv[..., 0] > 0, sv[..., 0], 1.0)
    q_left, _, q_right = principal_singular_pair(Rw)

    B = np.concatenate([A_pinv, hermitian(Pr)], axis=-2)
    bad = _cond(B) > 1.0 / SINGULAR_TOL
    if bad.any():
        raise RankDeficientBlocking("stacked system B is rank deficient", first_index(bad))
    B_pinv = pseudo_inverse(B)
    P_B = np.eye(2 * (M - 1)) - B @ B_pinv
    x = np.einsum("...ij,...j->...i", P_B[..., :, M - 1 :], q_right)
    y = np.einsum("...ij,...j->...i", P_B[..., :, : M - 1], q_left)
    xx = np.sum(np.abs(x) ** 2, axis=-1)
    bad = xx <= (REL_TOL * np.linalg.norm(q_right, axis=-1)) ** 2
    if bad.any():
        raise RankDeficientBlocking("weighting factor is not identifiable", first_index(bad))
    alpha = -np.einsum("...i,...i->...", x.conj(), y) / xx
    stacked = np.concatenate([q_left, q_right * alpha[..., None]], axis=-1)
    h_tilde = np.einsum("...ij,...j->...i", B_pinv, stacked)
    return CbwSolution(
        q_left=q_left,
        q_right=q_right,
        alpha=alpha,
        h_tilde=h_tilde,
        estimate=normalize_rtf(h_tilde, r),
        sigma_ratio=sigma_ratio,
        dropped_column=drop,
        B=B,
    )
