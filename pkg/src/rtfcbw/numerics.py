"""Dense complex linear-algebra kernels.

Every function accepts stacks of matrices/vectors with arbitrary leading batch
dimensions, e.g. covariance matrices of shape ``(F, M, M)`` and vectors of
shape ``(F, M)``. A failure in any batch element raises, and the exception's
``index`` attribute names the first offending element.
"""

import numpy as np

from .errors import (
    CollinearVectors,
    DegenerateSpectrum,
    NotHermitian,
    NotPositiveSemiDefinite,
    ZeroMatrix,
    ZeroVector,
    first_index,
)

__all__ = [
    "REL_TOL",
    "hermitian",
    "hermitian_sqrt_factor",
    "principal_eigvec",
    "principal_singular_pair",
    "pseudo_inverse",
    "residual_maker",
    "oblique_projection",
    "projection_complement",
    "fix_phase",
]

REL_TOL = 1e-10


def hermitian(a):
    """Conjugate transpose of the last two axes."""
    return np.swapaxes(a, -1, -2).conj()


def _symmetrize(a):
    return 0.5 * (a + hermitian(a))


def _spectral_norm_bound(a):
    # Frobenius norm per batch element, an upper bound on the spectral norm
    return np.linalg.norm(a, axis=(-2, -1))


def fix_phase(v, *others):
    """Rotate ``v`` so its largest-magnitude entry is real-positive.

    The same unit-modulus factor is applied to every array in ``others``,
    which keeps pairs like (u, v) of a singular triplet consistent.
    """
    v = np.asarray(v)
    k = np.argmax(np.abs(v), axis=-1)[..., None]
    pivot = np.take_along_axis(v, k, axis=-1)
    mag = np.abs(pivot)
    rot = np.where(mag > 0, pivot.conj() / np.where(mag > 0, mag, 1.0), 1.0)
    if not others:
        return v * rot
    return (v * rot,) + tuple(np.asarray(o) * rot for o in others)


def hermitian_sqrt_factor(R, tol=REL_TOL):
    """Return ``F`` with ``F^H F = R`` for Hermitian PSD ``R``.

    Cholesky is used when it succeeds (``F`` is then upper triangular);
    otherwise the eigendecomposition gives ``F = diag(sqrt(lam)) V^H`` with
    eigenvalues in ``[-tol*|R|, 0)`` clipped to zero.
    """
    R = np.asarray(R, dtype=complex)
    scale = _spectral_norm_bound(R)
    asym = np.linalg.norm(R - hermitian(R), axis=(-2, -1))
    bad = asym > tol * np.maximum(scale, np.finfo(float).tiny)
    if bad.any():
        raise NotHermitian("matrix is not Hermitian", first_index(bad))
    R = _symmetrize(R)
    lam, V = np.linalg.eigh(R)
    bad = lam[..., 0] < -tol * scale
    if bad.any():
        raise NotPositiveSemiDefinite(
            "matrix has a negative eigenvalue", first_index(bad)
        )
    try:
        L = np.linalg.cholesky(R)
        return hermitian(L)
    except np.linalg.LinAlgError:
        lam = np.clip(lam, 0.0, None)
        return np.sqrt(lam)[..., :, None] * hermitian(V)


def principal_eigvec(A, tol=REL_TOL):
    """Unit-norm eigenvector of the largest eigenvalue of Hermitian ``A``.

    Raises DegenerateSpectrum when the two largest eigenvalues are closer
    than ``tol * |A|``: there is no dominant direction to return.
    """
    A = _symmetrize(np.asarray(A, dtype=complex))
    lam, V = np.linalg.eigh(A)
    v = V[..., :, -1]
    if A.shape[-1] > 1:
        scale = np.max(np.abs(lam), axis=-1)
        gap = lam[..., -1] - lam[..., -2]
        bad = gap <= tol * scale
        if bad.any():
            raise DegenerateSpectrum(
                "no dominant eigenvalue", first_index(bad)
            )
    return fix_phase(v)


def principal_singular_pair(A):
    """Largest singular triplet ``(u, sigma, v)`` with ``A v = sigma u``.

    Both vectors come from one SVD so their relative phase is consistent.
    The common phase is fixed by making the largest entry of ``v`` real-positive.
    """
    A = np.asarray(A, dtype=complex)
    U, s, Vh = np.linalg.svd(A)
    bad = s[..., 0] <= np.finfo(float).tiny
    if bad.any():
        raise ZeroMatrix("matrix is zero", first_index(bad))
    u = U[..., :, 0]
    v = Vh[..., 0, :].conj()
    v, u = fix_phase(v, u)
    return u, s[..., 0], v


def pseudo_inverse(A, tol=0.0):
    """Moore-Penrose pseudo-inverse via SVD.

    Singular values at or below ``tol * sigma_max`` are treated as zero;
    ``tol = 0`` selects ``max(rows, cols) * eps``.
    """
    A = np.asarray(A, dtype=complex)
    rows, cols = A.shape[-2:]
    if tol <= 0:
        tol = max(rows, cols) * np.finfo(float).eps
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    cutoff = tol * s[..., :1]
    keep = (s > cutoff) & (s > 0)
    s_inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return hermitian(Vh) @ (s_inv[..., :, None] * hermitian(U))


def residual_maker(theta, tol=REL_TOL):
    """Orthogonal projector ``I - theta theta^H / (theta^H theta)``."""
    theta = np.asarray(theta, dtype=complex)
    nrm2 = np.sum(np.abs(theta) ** 2, axis=-1)
    bad = nrm2 <= np.finfo(float).tiny
    if bad.any():
        raise ZeroVector("cannot project out a zero vector", first_index(bad))
    M = theta.shape[-1]
    outer = theta[..., :, None] * theta[..., None, :].conj()
    return np.eye(M) - outer / nrm2[..., None, None]


def oblique_projection(g, theta, tol=REL_TOL):
    """Oblique projector with range ``g`` and null space containing ``theta``.

    ``P = g (g^H Pt g)^{-1} g^H Pt`` where ``Pt`` is the residual maker of
    ``theta``; ``P g = g`` and ``P theta = 0``.
    """
    g = np.asarray(g, dtype=complex)
    a = np.einsum("...ij,...j->...i", residual_maker(theta, tol), g)
    c = np.einsum("...i,...i->...", g.conj(), a).real
    g2 = np.sum(np.abs(g) ** 2, axis=-1)
    bad = c <= tol * g2
    if bad.any():
        raise CollinearVectors(
            "g is collinear with theta; oblique projection undefined",
            first_index(bad),
        )
    return g[..., :, None] * a[..., None, :].conj() / c[..., None, None]


def projection_complement(B, tol=0.0):
    """Projector ``I - B B^+`` onto the orthogonal complement of range(B)."""
    B = np.asarray(B, dtype=complex)
    return np.eye(B.shape[-2]) - B @ pseudo_inverse(B, tol)
