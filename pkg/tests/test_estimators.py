import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import crandn, oracle_instance, random_psd, random_rtf, rel_err
from rtfcbw.errors import (
    CollinearVectors,
    DegenerateSpectrum,
    InsufficientChannels,
    NotConverged,
    SingularNoiseCovariance,
    ZeroReferenceEntry,
)
from rtfcbw.estimators import (
    BopOptions,
    bop_estimate,
    bop_gradient,
    bop_objective,
    cbw_estimate,
    cw_estimate,
    cwu_estimate,
    normalize_rtf,
)
from rtfcbw.numerics import residual_maker


def angle(a, b):
    """Angle between the complex lines spanned by ``a`` and ``b`` (stable near 0)."""
    b = b / np.linalg.norm(b)
    a = a / np.linalg.norm(a)
    perp = a - b * np.vdot(b, a)
    return float(np.arctan2(np.linalg.norm(perp), abs(np.vdot(b, a))))


# --- normalization and CW ------------------------------------------------------


def test_normalize_rtf():
    v = normalize_rtf(np.array([2.0, 1j, 4.0]), 1)
    assert v[1] == 1.0 + 0.0j
    np.testing.assert_allclose(v, [-2j, 1.0, -4j])
    with pytest.raises(ZeroReferenceEntry):
        normalize_rtf(np.array([1.0, 0.0, 2.0]), 1)


def test_cw_rank_one_plus_identity():
    g = np.array([1.0, 0.5j, -1.0])
    R_y2 = 2.0 * np.outer(g, g.conj()) + np.eye(3)
    np.testing.assert_allclose(cw_estimate(R_y2, np.eye(3), 0), g, atol=1e-8)


def test_cw_reference_one_index():
    g = np.array([2.0, 1.0, 0.5j])
    R = 3.0 * np.outer(g, g.conj()) + np.eye(3)
    est = cw_estimate(R, np.eye(3), 1)
    np.testing.assert_allclose(est, g / g[1], atol=1e-10)
    assert est[1] == 1.0 + 0.0j


def test_cw_noise_only_is_degenerate(rng):
    R_n = random_psd(rng, 4)
    with pytest.raises(DegenerateSpectrum):
        cw_estimate(R_n, R_n, 0)


def test_cw_singular_noise(rng):
    v = crandn(rng, 3)
    with pytest.raises(SingularNoiseCovariance):
        cw_estimate(np.eye(3), np.outer(v, v.conj()), 0)


@given(st.integers(2, 6), st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
def test_cw_scale_invariance_and_exactness(M, c, seed):
    rng = np.random.default_rng(seed)
    g = random_rtf(rng, M)
    R_n = random_psd(rng, M)
    R_y = rng.uniform(0.1, 10) * np.outer(g, g.conj()) + R_n
    e1 = cw_estimate(R_y, R_n, 0)
    e2 = cw_estimate(c * R_y, R_n, 0)
    assert rel_err(e1, g) <= 1e-8
    assert rel_err(e2, e1) <= 1e-8


def test_cwu_exact_when_interferer_psd_is_stationary(rng):
    inst = oracle_instance(rng, 4, phi_x=2.0, phi_u3=1.5, phi_u2=1.5)
    assert rel_err(cwu_estimate(inst["R_y3"], inst["R_v2"], 0), inst["h"]) <= 1e-8


def test_cwu_biased_when_interferer_psd_changes(rng):
    inst = oracle_instance(rng, 3, phi_x=1.0, phi_u3=4.0, phi_u2=1.0)
    est = cwu_estimate(inst["R_y3"], inst["R_v2"], 0)
    assert angle(est, inst["h"]) > 1e-3


def test_cwu_scale_invariance(rng):
    inst = oracle_instance(rng, 4)
    e1 = cwu_estimate(inst["R_y3"], inst["R_v2"], 0)
    e2 = cwu_estimate(7.5 * inst["R_y3"], inst["R_v2"], 0)
    assert rel_err(e2, e1) <= 1e-10


def test_cw_batched_error_reports_bin(rng):
    R_n = np.stack([random_psd(rng, 3) for _ in range(4)])
    g = random_rtf(rng, 3)
    R_y = R_n + 2.0 * np.outer(g, g.conj())
    R_y[2] = R_n[2]
    with pytest.raises(DegenerateSpectrum) as exc:
        cw_estimate(R_y, R_n, 0)
    assert exc.value.index == 2


# --- BOP -----------------------------------------------------------------------


def test_bop_objective_basic_example():
    val = bop_objective(np.array([0.0, 1.0]), np.eye(2), np.array([1.0, 0.0]))
    assert abs(val - 1.0) <= 1e-14


def test_bop_objective_noiseless_value_at_target(rng):
    M = 4
    h, g = random_rtf(rng, M), random_rtf(rng, M)
    phi_x, phi_u = 2.0, 3.0
    R = phi_x * np.outer(h, h.conj()) + phi_u * np.outer(g, g.conj())
    val = bop_objective(h, R, g)
    np.testing.assert_allclose(val, phi_u * np.vdot(g, g).real, rtol=1e-10)


def test_bop_objective_scale_invariant(rng):
    inst = oracle_instance(rng, 4)
    theta = crandn(rng, 4)
    f1 = bop_objective(theta, inst["R_y3"], inst["g"])
    f2 = bop_objective((2.5 - 1j) * theta, inst["R_y3"], inst["g"])
    np.testing.assert_allclose(f1, f2, rtol=1e-12)


def test_bop_objective_collinear(rng):
    g = random_rtf(rng, 3)
    with pytest.raises(CollinearVectors):
        bop_objective(3j * g, np.eye(3), g)


def finite_difference_gradient(theta, R, g, eps=1e-6):
    grad = np.zeros(theta.shape, dtype=complex)
    for i in range(len(theta)):
        for unit in (1.0, 1j):
            d = np.zeros(len(theta), dtype=complex)
            d[i] = unit * eps
            diff = (bop_objective(theta + d, R, g) - bop_objective(theta - d, R, g)) / (2 * eps)
            grad[i] += diff if unit == 1.0 else 1j * diff
    return grad


@pytest.mark.parametrize("M", [2, 3, 4, 6])
def test_bop_gradient_matches_finite_differences(M):
    rng = np.random.default_rng(M)
    inst = oracle_instance(rng, M)
    for _ in range(20):
        theta = crandn(rng, M)
        an = bop_gradient(theta, inst["R_y3"], inst["g"])
        fd = finite_difference_gradient(theta, inst["R_y3"], inst["g"])
        assert np.linalg.norm(an - fd) <= 1e-4 * np.linalg.norm(fd)


def test_bop_gradient_orthogonal_to_scaling_directions(rng):
    # the objective is invariant to theta -> c theta, so the gradient is
    # orthogonal (in the real inner product) to theta and to 1j*theta
    inst = oracle_instance(rng, 4)
    theta = crandn(rng, 4)
    grad = bop_gradient(theta, inst["R_y3"], inst["g"])
    assert abs(np.real(np.vdot(grad, theta))) <= 1e-10 * np.linalg.norm(grad)
    assert abs(np.real(np.vdot(grad, 1j * theta))) <= 1e-10 * np.linalg.norm(grad)


def closed_form_bop_minimizer(R, g):
    """Global minimizer of the BOP objective for positive definite ``R``.

    In ``b = P_theta g`` the objective is ``|g|^2 b^H R b / |g^H b|^2``, a
    generalized Rayleigh quotient minimized by ``b = R^{-1} g``; ``theta`` is
    then the part of ``g`` orthogonal to ``b``.
    """
    b = np.linalg.solve(R, g)
    return residual_maker(b) @ g


@pytest.mark.parametrize("M", [2, 3, 5])
def test_bop_matches_closed_form_minimizer(M):
    rng = np.random.default_rng(100 + M)
    for _ in range(10):
        inst = oracle_instance(rng, M, phi_x=rng.uniform(0.1, 10), phi_u3=rng.uniform(0.1, 10))
        R, g = inst["R_y3"], inst["g"]
        theta_ref = closed_form_bop_minimizer(R, g)
        sol = bop_estimate(R, g, 0, BopOptions(restarts=2, seed=1))
        assert sol.converged
        np.testing.assert_allclose(sol.objective, bop_objective(theta_ref, R, g), rtol=1e-9)
        assert rel_err(sol.estimate, theta_ref / theta_ref[0]) <= 1e-6


@pytest.mark.parametrize("M", [3, 4])
def test_bop_high_snr_recovery(M):
    rng = np.random.default_rng(M)
    inst = oracle_instance(rng, M, phi_x=1.0, phi_u3=1.0, noise_scale=1.0)
    R = np.outer(inst["h"], inst["h"].conj()) + np.outer(inst["g"], inst["g"].conj()) + 1e-6 * np.eye(M)
    sol = bop_estimate(R, inst["g"], 0)
    assert rel_err(sol.estimate, inst["h"]) <= 1e-3
    assert sol.estimate[0] == 1.0 + 0.0j


def test_bop_warm_start_and_batch(rng):
    M, F = 4, 6
    insts = [oracle_instance(rng, M) for _ in range(F)]
    R = np.stack([i["R_y3"] for i in insts])
    g = np.stack([i["g"] for i in insts])
    init = np.stack([i["h"] for i in insts])
    sol = bop_estimate(R, g, 0, BopOptions(restarts=0), init=init)
    assert sol.estimate.shape == (F, M)
    for f in range(F):
        single = bop_estimate(R[f], g[f], 0, BopOptions(restarts=0), init=init[f])
        np.testing.assert_allclose(sol.estimate[f], single.estimate, atol=1e-8)


def test_bop_not_converged_warns_but_returns(rng):
    inst = oracle_instance(rng, 4)
    with pytest.warns(NotConverged):
        sol = bop_estimate(inst["R_y3"], inst["g"], 0, BopOptions(max_iterations=1, restarts=1,
                                                                  gradient_tolerance=1e-300))
    assert not sol.converged
    assert sol.estimate[0] == 1.0 + 0.0j


def test_bop_options_validation():
    with pytest.raises(ValueError):
        BopOptions(max_iterations=0)
    with pytest.raises(ValueError):
        BopOptions(gradient_tolerance=0.0)


# --- CBW -----------------------------------------------------------------------


@pytest.mark.parametrize("M", [3, 4, 6])
def test_cbw_exact_on_oracle_covariances(M):
    rng = np.random.default_rng(M)
    for _ in range(10):
        inst = oracle_instance(rng, M, phi_x=rng.uniform(0.1, 10), phi_u3=rng.uniform(0.1, 10),
                               noise_scale=10.0 ** rng.uniform(-3, 1))
        sol = cbw_estimate(inst["R_y3"], inst["R_n"], inst["g"], 0)
        assert rel_err(sol.estimate, inst["h"]) <= 1e-8
        assert sol.sigma_ratio <= 1e-8
        assert sol.estimate[0] == 1.0 + 0.0j


def test_cbw_requires_three_microphones(rng):
    inst = oracle_instance(rng, 2)
    with pytest.raises(InsufficientChannels, match="M ≥ 3"):
        cbw_estimate(inst["R_y3"], inst["R_n"], inst["g"], 0)


def test_cbw_invariant_to_interferer_psd(rng):
    M = 4
    h, g = random_rtf(rng, M), random_rtf(rng, M)
    R_n = random_psd(rng, M)
    ests = []
    for phi_u in (0.1, 1.0, 10.0):
        R = 2.0 * np.outer(h, h.conj()) + phi_u * np.outer(g, g.conj()) + R_n
        ests.append(cbw_estimate(R, R_n, g, 0).estimate)
    assert max(np.linalg.norm(e - ests[0]) for e in ests) <= 1e-10


def test_cbw_alpha_minimizes_stacked_residual(rng):
    inst = oracle_instance(rng, 5)
    R_n = inst["R_n"]
    # perturb so the residual is not zero and the minimization is non-trivial
    R = inst["R_y3"] + 0.05 * random_psd(rng, 5)
    sol = cbw_estimate(R, R_n, inst["g"], 0)
    B = sol.B
    P_B = np.eye(B.shape[0]) - B @ np.linalg.pinv(B)

    def resid(a):
        return np.linalg.norm(P_B @ np.concatenate([sol.q_left, a * sol.q_right]))

    r0 = resid(sol.alpha)
    for d in (1e-3, -1e-3, 1e-3j, -1e-3j):
        assert resid(sol.alpha + d) >= r0 - 1e-12


def test_cbw_reference_column_fallback():
    # when g is the basis vector e_r, column r of P_g vanishes; for r < M-1
    # the default reduction (drop the last column) keeps that zero column
    # and loses rank, so the fallback must drop column r instead
    M = 4
    rng = np.random.default_rng(5)
    h = random_rtf(rng, M, r=0)
    g = np.zeros(M, complex)
    g[0] = 1.0
    R_n = random_psd(rng, M)
    R = 2.0 * np.outer(h, h.conj()) + np.outer(g, g.conj()) + R_n
    sol = cbw_estimate(R, R_n, g, 0)
    assert sol.dropped_column == 0
    assert rel_err(sol.estimate, h) <= 1e-8


def test_cbw_batched_matches_loop(rng):
    insts = [oracle_instance(rng, 4) for _ in range(5)]
    R = np.stack([i["R_y3"] for i in insts])
    R_n = np.stack([i["R_n"] for i in insts])
    g = np.stack([i["g"] for i in insts])
    sol = cbw_estimate(R, R_n, g, 0)
    for k, inst in enumerate(insts):
        np.testing.assert_allclose(sol.estimate[k], cbw_estimate(R[k], R_n[k], g[k], 0).estimate,
                                   atol=1e-12)
        assert rel_err(sol.estimate[k], inst["h"]) <= 1e-8


@given(st.sampled_from([3, 4, 5, 6]), st.integers(0, 2**32 - 1),
       st.floats(0.1, 10), st.floats(0.1, 10), st.floats(-3, 1))
def test_cbw_exactness_property(M, seed, phi_x, phi_u, log_noise):
    rng = np.random.default_rng(seed)
    inst = oracle_instance(rng, M, phi_x=phi_x, phi_u3=phi_u, noise_scale=10.0**log_noise)
    r = int(rng.integers(M))
    h = inst["h"] / inst["h"][r]
    g = inst["g"] / inst["g"][r]
    sol = cbw_estimate(inst["R_y3"], inst["R_n"], g, r)
    assert rel_err(sol.estimate, h) <= 1e-8
    assert sol.estimate[r] == 1.0 + 0.0j


def test_cwu_biased_where_cbw_exact(rng):
    for _ in range(10):
        inst = oracle_instance(rng, 4, phi_x=1.0, phi_u3=3.0, phi_u2=1.0)
        cbw = cbw_estimate(inst["R_y3"], inst["R_n"], inst["g"], 0).estimate
        cwu = cwu_estimate(inst["R_y3"], inst["R_v2"], 0)
        assert angle(cbw, inst["h"]) <= 1e-8
        assert angle(cwu, inst["h"]) > 0.0


def test_no_warnings_on_regular_inputs(rng):
    inst = oracle_instance(rng, 4)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        bop_estimate(inst["R_y3"], inst["g"], 0)
