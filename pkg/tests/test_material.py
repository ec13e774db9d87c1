import math

import numpy as np
import pytest

import viscoplast as vp
from viscoplast.material import (FIG7_MODIFIED, TABLE2, InternalState,
                                 MaterialParams)

from conftest import (random_loaded_state, random_model_state,
                      random_rotation, random_unimodular_spd, sym_sqrtm)

SQ23 = math.sqrt(2.0 / 3.0)


# ---------------------------------------------------------------- parameters

def test_reference_parameter_set():
    p = TABLE2
    assert (p.k, p.mu, p.c, p.gamma) == (73500.0, 28200.0, 3500.0, 460.0)
    assert (p.K, p.m, p.eta, p.k0) == (270.0, 3.6, 2e6, 1.0)
    assert (p.kappa, p.beta) == (0.028, 5.0)


def test_modified_parameter_set():
    p = FIG7_MODIFIED
    assert (p.kappa, p.c, p.beta, p.gamma) == (0.0035, 1500.0, 10.0, 1800.0)
    assert (p.k, p.mu, p.K, p.m, p.eta, p.k0) == \
        (73500.0, 28200.0, 270.0, 3.6, 2e6, 1.0)


def test_parameter_validation():
    with pytest.raises(ValueError, match="K"):
        TABLE2.replace(K=-1.0)
    with pytest.raises(ValueError, match="m"):
        TABLE2.replace(m=0.5)
    with pytest.raises(ValueError):
        TABLE2.replace(k=0.0)


def test_state_validation():
    InternalState.reference().validate()
    bad = InternalState(C_i=np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(ValueError):
        bad.validate()
    with pytest.raises(ValueError):
        InternalState(s=-0.1).validate()


# --------------------------------------------------------- second PK stress

def test_pk_stress_vanishes_at_reference():
    out = vp.second_pk_stress(np.eye(3), np.eye(3), TABLE2)
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_pk_stress_isotropic_closed_form():
    th = 1.2
    out = vp.second_pk_stress(th ** 2 * np.eye(3), np.eye(3), TABLE2)
    expect = 3.0 * TABLE2.k * math.log(th) / th ** 2
    np.testing.assert_allclose(out, expect * np.eye(3), rtol=1e-12)


def test_pk_stress_small_strain_hooke():
    # unimodular stretch: purely deviatoric response with modulus 2 mu
    eps = 1e-5
    C = np.diag([(1 + eps) ** 2, 1.0, 1.0])
    C = np.linalg.det(C) ** (-1.0 / 3.0) * C
    T = vp.second_pk_stress(C, np.eye(3), TABLE2)
    e = 0.5 * (C - np.eye(3))
    expect = 2.0 * TABLE2.mu * (e - np.trace(e) / 3.0 * np.eye(3))
    assert np.linalg.norm(T - expect) <= 0.01 * np.linalg.norm(expect)


def test_pk_stress_exactly_symmetric():
    rng = np.random.default_rng(0)
    for _ in range(20):
        C = random_unimodular_spd(rng, 0.4) * rng.uniform(0.8, 1.3)
        Ci = random_unimodular_spd(rng, 0.3)
        T = vp.second_pk_stress(C, Ci, TABLE2)
        np.testing.assert_array_equal(T, T.T)


def test_pk_stress_rejects_non_spd():
    with pytest.raises(ValueError):
        vp.second_pk_stress(np.diag([1.0, 1.0, -1.0]), np.eye(3), TABLE2)


# ----------------------------------------------------------------- backstress

def test_backstress_zero_when_relaxed():
    rng = np.random.default_rng(1)
    Ci = random_unimodular_spd(rng, 0.3)
    out = vp.backstress(Ci, Ci.copy(), TABLE2)
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_backstress_zero_for_zero_modulus():
    rng = np.random.default_rng(2)
    Ci = random_unimodular_spd(rng, 0.3)
    Cii = random_unimodular_spd(rng, 0.3)
    out = vp.backstress(Ci, Cii, TABLE2.replace(c=0.0))
    np.testing.assert_array_equal(out, np.zeros((3, 3)))


def test_backstress_trace_identity():
    rng = np.random.default_rng(3)
    for _ in range(10):
        Ci = random_unimodular_spd(rng, 0.4)
        Cii = random_unimodular_spd(rng, 0.4)
        X = vp.backstress(Ci, Cii, TABLE2)
        M = Ci @ X
        assert abs(np.trace(M)) <= 1e-12 * max(np.linalg.norm(M), 1e-12)


def test_backstress_exactly_symmetric():
    rng = np.random.default_rng(4)
    Ci = random_unimodular_spd(rng, 0.4)
    Cii = random_unimodular_spd(rng, 0.4)
    X = vp.backstress(Ci, Cii, TABLE2)
    np.testing.assert_array_equal(X, X.T)


# --------------------------------------------------------------- Cauchy stress

def test_cauchy_identity_configuration():
    rng = np.random.default_rng(5)
    T_tilde = rng.normal(size=(3, 3))
    T_tilde = 0.5 * (T_tilde + T_tilde.T)
    np.testing.assert_allclose(vp.cauchy_stress(np.eye(3), T_tilde), T_tilde,
                               atol=1e-15)


def test_cauchy_zero_stress_rotation():
    rng = np.random.default_rng(6)
    Q = random_rotation(rng)
    np.testing.assert_array_equal(vp.cauchy_stress(Q, np.zeros((3, 3))),
                                  np.zeros((3, 3)))


def test_cauchy_matches_matrix_product_oracle():
    rng = np.random.default_rng(7)
    F = np.diag([2.0, 1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0)])
    T_tilde = rng.normal(size=(3, 3))
    T_tilde = 0.5 * (T_tilde + T_tilde.T)
    expect = F @ T_tilde @ F.T  # det F = 1
    np.testing.assert_allclose(vp.cauchy_stress(F, T_tilde), expect,
                               rtol=1e-12)


def test_cauchy_rejects_negative_det():
    with pytest.raises(ValueError):
        vp.cauchy_stress(np.diag([-1.0, 1.0, 1.0]), np.eye(3))


# --------------------------------------------------------- driving-force norm

def test_fnorm_zero_stress():
    assert vp.driving_force_norm(np.eye(3), np.zeros((3, 3)), np.eye(3),
                                 np.zeros((3, 3))) == 0.0


def test_fnorm_coincident_configurations():
    rng = np.random.default_rng(8)
    T = rng.normal(size=(3, 3))
    T = 0.5 * (T + T.T)
    T -= np.trace(T) / 3.0 * np.eye(3)
    out = vp.driving_force_norm(np.eye(3), T, np.eye(3), np.zeros((3, 3)))
    assert np.isclose(out, np.linalg.norm(T), rtol=1e-12)


def test_fnorm_deviator_identity():
    # (C T - Ci X)^D == mu (unimodular(C) Ci^-1)^D - c/2 (Ci Cii^-1)^D
    rng = np.random.default_rng(9)
    p = TABLE2
    for _ in range(10):
        Ci = random_unimodular_spd(rng, 0.4)
        Cii = random_unimodular_spd(rng, 0.4)
        C = random_unimodular_spd(rng, 0.5) * rng.uniform(0.9, 1.2)
        T = vp.second_pk_stress(C, Ci, p)
        X = vp.backstress(Ci, Cii, p)
        M = C @ T - Ci @ X
        Md = M - np.trace(M) / 3.0 * np.eye(3)
        Cbar = np.linalg.det(C) ** (-1.0 / 3.0) * C
        A = p.mu * Cbar @ np.linalg.inv(Ci) - 0.5 * p.c * Ci @ np.linalg.inv(Cii)
        Ad = A - np.trace(A) / 3.0 * np.eye(3)
        np.testing.assert_allclose(Md, Ad, rtol=1e-10, atol=1e-8)


def test_fnorm_matches_intermediate_configuration_oracle():
    # ||Sigma^D|| computed from an explicit factorization F_i of C_i
    rng = np.random.default_rng(10)
    p = TABLE2
    worst = 0.0
    for _ in range(20):
        Ci = random_unimodular_spd(rng, 0.4)
        Cii = random_unimodular_spd(rng, 0.4)
        C = random_unimodular_spd(rng, 0.5) * rng.uniform(0.9, 1.2)
        T = vp.second_pk_stress(C, Ci, p)
        X = vp.backstress(Ci, Cii, p)
        fn = vp.driving_force_norm(C, T, Ci, X)
        Fi = sym_sqrtm(Ci)
        Fi_inv = np.linalg.inv(Fi)
        Ce = Fi_inv.T @ C @ Fi_inv
        S_hat = Fi @ T @ Fi.T
        X_hat = Fi @ X @ Fi.T
        Sigma = Ce @ S_hat - X_hat
        Sigma_dev = Sigma - np.trace(Sigma) / 3.0 * np.eye(3)
        oracle = np.linalg.norm(Sigma_dev)
        worst = max(worst, abs(fn - oracle) / max(oracle, 1e-12))
    assert worst <= 1e-9


def test_fnorm_rotation_invariance():
    rng = np.random.default_rng(11)
    p = TABLE2
    Ci = random_unimodular_spd(rng, 0.4)
    Cii = random_unimodular_spd(rng, 0.4)
    C = random_unimodular_spd(rng, 0.5)
    T = vp.second_pk_stress(C, Ci, p)
    X = vp.backstress(Ci, Cii, p)
    fn = vp.driving_force_norm(C, T, Ci, X)
    for _ in range(10):
        Q = random_rotation(rng)
        Cq = Q.T @ C @ Q
        Ciq = Q.T @ Ci @ Q
        Ciiq = Q.T @ Cii @ Q
        Tq = vp.second_pk_stress(Cq, Ciq, p)
        Xq = vp.backstress(Ciq, Ciiq, p)
        fnq = vp.driving_force_norm(Cq, Tq, Ciq, Xq)
        assert abs(fnq - fn) <= 1e-10 * max(fn, 1.0)


def test_stress_rotation_equivariance():
    rng = np.random.default_rng(12)
    p = TABLE2
    Ci = random_unimodular_spd(rng, 0.4)
    C = random_unimodular_spd(rng, 0.5) * 1.1
    T = vp.second_pk_stress(C, Ci, p)
    for _ in range(5):
        Q = random_rotation(rng)
        Tq = vp.second_pk_stress(Q.T @ C @ Q, Q.T @ Ci @ Q, p)
        np.testing.assert_allclose(Tq, Q.T @ T @ Q, rtol=1e-10, atol=1e-8)


# ------------------------------------------------------------------- Perzyna

def test_perzyna_stress_free_state():
    f, lam = vp.perzyna(0.0, 0.0, TABLE2)
    assert np.isclose(f, -math.sqrt(2.0 / 3.0) * 270.0)
    assert np.isclose(f, -220.45407685048602)
    assert lam == 0.0


def test_perzyna_unit_bracket():
    p = TABLE2
    F_norm = SQ23 * (p.K + 10.0) + p.k0
    f, lam = vp.perzyna(F_norm, 10.0, p)
    assert np.isclose(f, p.k0)
    assert np.isclose(lam, 1.0 / p.eta)


def test_perzyna_linear_hand_value():
    p = TABLE2.replace(m=1.0)
    F_norm = SQ23 * p.K + 2.0 * p.k0
    f, lam = vp.perzyna(F_norm, 0.0, p)
    assert np.isclose(f, 2.0 * p.k0)
    assert np.isclose(lam, 1e-6)


def test_perzyna_rejects_rate_independent_flow():
    p = TABLE2.replace(eta=0.0)
    with pytest.raises(ValueError):
        vp.perzyna(SQ23 * p.K + 5.0, 0.0, p)
    f, lam = vp.perzyna(0.0, 0.0, p)  # f <= 0 is fine
    assert lam == 0.0


def test_perzyna_monotone_in_overstress():
    p = TABLE2
    lams = [vp.perzyna(SQ23 * p.K + df, 0.0, p)[1] for df in (1.0, 2.0, 5.0)]
    assert lams[0] < lams[1] < lams[2]


# --------------------------------------------------------------- free energy

def test_free_energy_reference_state():
    assert vp.free_energy(np.eye(3), np.eye(3), np.eye(3), 0.0, TABLE2) == 0.0


def test_free_energy_isotropic_hardening_hand_value():
    rng = np.random.default_rng(13)
    C = random_unimodular_spd(rng, 0.3)
    out = vp.free_energy(C, C.copy(), C.copy(), 0.1, TABLE2)
    assert np.isclose(out, 2.3)  # gamma/2 * 0.1^2 with gamma = 460


def test_free_energy_nonnegative():
    rng = np.random.default_rng(14)
    for _ in range(20):
        C = random_unimodular_spd(rng, 0.5) * rng.uniform(0.8, 1.3)
        Ci = random_unimodular_spd(rng, 0.4)
        Cii = random_unimodular_spd(rng, 0.4)
        assert vp.free_energy(C, Ci, Cii, rng.uniform(0, 0.3), TABLE2) >= 0.0


def _fd_gradient_wrt_sym(fun, A, h=1e-6):
    """Central difference d fun / d A for symmetric A (both entries moved)."""
    grad = np.zeros((3, 3))
    for i in range(3):
        for j in range(i, 3):
            E = np.zeros((3, 3))
            E[i, j] = 1.0
            E[j, i] = 1.0
            hh = h * (1.0 + abs(A[i, j]))
            fp = fun(A + hh * E)
            fm = fun(A - hh * E)
            g = (fp - fm) / (2.0 * hh)
            # moving the pair counts the off-diagonal twice
            grad[i, j] = g if i == j else 0.5 * g
            grad[j, i] = grad[i, j]
    return grad


def test_potential_relation_for_pk_stress():
    rng = np.random.default_rng(15)
    p = TABLE2
    Ci = random_unimodular_spd(rng, 0.3)
    Cii = random_unimodular_spd(rng, 0.3)
    C = random_unimodular_spd(rng, 0.4) * 1.05
    T = vp.second_pk_stress(C, Ci, p)
    grad = _fd_gradient_wrt_sym(
        lambda A: vp.free_energy(A, Ci, Cii, 0.0, p), C)
    np.testing.assert_allclose(2.0 * grad, T, rtol=1e-6,
                               atol=1e-6 * np.linalg.norm(T))


def test_potential_relation_for_backstress():
    rng = np.random.default_rng(16)
    p = TABLE2
    Ci = random_unimodular_spd(rng, 0.3)
    Cii = random_unimodular_spd(rng, 0.3)
    C = random_unimodular_spd(rng, 0.4)
    X = vp.backstress(Ci, Cii, p)
    grad = _fd_gradient_wrt_sym(
        lambda A: vp.free_energy(C, A, Cii, 0.0, p), Ci)
    # psi_el depends on Ci too; subtract its own gradient contribution
    grad_el = _fd_gradient_wrt_sym(
        lambda A: vp.free_energy(C, A, Cii, 0.0, p.replace(c=1e-30)), Ci)
    np.testing.assert_allclose(2.0 * (grad - grad_el), X, rtol=1e-5,
                               atol=1e-5 * max(np.linalg.norm(X), 1.0))


def test_free_energy_rotation_invariance():
    rng = np.random.default_rng(17)
    p = TABLE2
    C = random_unimodular_spd(rng, 0.4) * 1.1
    Ci = random_unimodular_spd(rng, 0.3)
    Cii = random_unimodular_spd(rng, 0.3)
    val = vp.free_energy(C, Ci, Cii, 0.05, p)
    for _ in range(5):
        Q = random_rotation(rng)
        got = vp.free_energy(Q.T @ C @ Q, Q.T @ Ci @ Q, Q.T @ Cii @ Q,
                             0.05, p)
        assert abs(got - val) <= 1e-10 * max(abs(val), 1.0)


# ---------------------------------------------------------------- dissipation

def test_dissipation_elastic_step_is_zero():
    state = InternalState.reference()
    assert vp.dissipation_increment(np.eye(3), state, 0.0, TABLE2) == 0.0


def test_dissipation_positive_beyond_yield():
    rng = np.random.default_rng(18)
    p = TABLE2
    state, C = random_loaded_state(rng, p, (5.0, 40.0))
    res = vp.step(state, sym_sqrtm(C), 0.1, vp.Method.EM, p)
    assert res.xi > 0.0
    floor = res.xi * SQ23 * p.K
    assert res.dissipation_increment >= floor - 1e-12


def test_dissipation_reduced_model_formula():
    # beta = 0, c = 0: increment is exactly xi (F_norm - sqrt(2/3) R)
    p = TABLE2.replace(beta=0.0, c=0.0, kappa=0.0)
    state = InternalState.reference()
    F = np.diag([1.007, 0.9977, 0.9977])
    res = vp.step(state, F, 0.1, vp.Method.EM, p)
    assert res.xi > 0.0
    expect = res.xi * (res.F_norm - SQ23 * res.R_next)
    assert np.isclose(res.dissipation_increment, expect, rtol=1e-12)


def test_stress_state_assembles_consistently():
    rng = np.random.default_rng(19)
    state = random_model_state(rng)
    F = np.diag([1.004, 0.9985, 0.9985])
    ss = vp.stress_state(F, state, TABLE2)
    C = F.T @ F
    np.testing.assert_array_equal(ss.T_tilde,
                                  vp.second_pk_stress(C, state.C_i, TABLE2))
    assert ss.R == TABLE2.gamma * (state.s - state.s_d)
    assert ss.f == ss.F_norm - SQ23 * (TABLE2.K + ss.R)
