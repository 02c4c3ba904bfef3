import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_rtf(rng, M, r=0):
    v = crandn(rng, M)
    return v / v[r]


def random_psd(rng, M, scale=1.0, floor=0.1):
    A = crandn(rng, M, M)
    return scale * (A @ A.conj().T / M + floor * np.eye(M))


def oracle_instance(rng, M, phi_x=1.0, phi_u3=1.0, phi_u2=1.0, noise_scale=1.0, r=0):
    """Model covariances of the successive-speaker scene for one bin."""
    h = random_rtf(rng, M, r)
    g = random_rtf(rng, M, r)
    R_n = random_psd(rng, M, noise_scale)
    gg = np.outer(g, g.conj())
    return dict(
        h=h,
        g=g,
        R_n=R_n,
        R_v2=phi_u2 * gg + R_n,
        R_y3=phi_x * np.outer(h, h.conj()) + phi_u3 * gg + R_n,
    )


def rel_err(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(np.asarray(b))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
