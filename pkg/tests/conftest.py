import time

import numpy as np
import pytest
from hypothesis import settings

import viscoplast as vp
from viscoplast.material import InternalState

settings.register_profile("ci", deadline=None, max_examples=50)
settings.load_profile("ci")

SQ23 = np.sqrt(2.0 / 3.0)


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Trigger JIT compilation before any timed assertion runs."""
    state = InternalState.reference()
    F = np.diag([1.006, 0.998, 0.998])
    for method in (vp.Method.EBM, vp.Method.MEBM, vp.Method.EM):
        vp.step(state, F, 0.1, method, vp.TABLE2)
    return True


def sym_sqrtm(a):
    """Symmetric square root via the eigendecomposition (test oracle)."""
    w, v = np.linalg.eigh(a)
    return (v * np.sqrt(w)) @ v.T


def sym_expm(a):
    w, v = np.linalg.eigh(a)
    return (v * np.exp(w)) @ v.T


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_unimodular_spd(rng, scale=0.2):
    """exp of a random traceless symmetric tensor: SPD with det = 1.

    Output is bit-exactly symmetric (the eigendecomposition leaves
    last-ulp asymmetry otherwise).
    """
    e = rng.normal(size=(3, 3))
    e = 0.5 * (e + e.T)
    e -= np.trace(e) / 3.0 * np.eye(3)
    n = np.linalg.norm(e)
    if n > 0:
        e *= scale * rng.uniform(0.2, 1.0) / n
    a = sym_expm(e)
    a = 0.5 * (a + a.T)
    return a / np.linalg.det(a) ** (1.0 / 3.0)


def random_model_state(rng, internal_scale=0.15):
    """A random admissible internal state (unimodular SPD tensors)."""
    C_i = random_unimodular_spd(rng, internal_scale)
    C_ii = random_unimodular_spd(rng, 0.5 * internal_scale)
    s_e = rng.uniform(0.0, 0.15)
    s_d = rng.uniform(0.0, 0.4)
    return InternalState(C_i=C_i, C_ii=C_ii, s=s_e + s_d, s_d=s_d)


def random_loaded_state(rng, p, f_window, max_tries=80):
    """(state, C) with a trial overstress inside the given window.

    Superposes a random elastic distortion on C_i and scales it until the
    trial overstress f lands in f_window (deterministic given rng).
    """
    for _ in range(max_tries):
        state = random_model_state(rng)
        root = sym_sqrtm(state.C_i)
        e = rng.normal(size=(3, 3))
        e = 0.5 * (e + e.T)
        e -= np.trace(e) / 3.0 * np.eye(3)
        e /= np.linalg.norm(e)
        e += rng.uniform(-0.3, 0.3) * np.eye(3) / np.sqrt(3.0)
        lo, hi = 1e-5, 2e-2
        for _ in range(60):
            mag = 0.5 * (lo + hi)
            C = root @ sym_expm(2.0 * mag * e) @ root
            C = 0.5 * (C + C.T)
            T = vp.second_pk_stress(C, state.C_i, p)
            X = vp.backstress(state.C_i, state.C_ii, p)
            fn = vp.driving_force_norm(C, T, state.C_i, X)
            R = p.gamma * (state.s - state.s_d)
            f = fn - SQ23 * (p.K + R)
            if f < f_window[0]:
                lo = mag
            elif f > f_window[1]:
                hi = mag
            else:
                return state, C
    raise RuntimeError("could not generate a state in the overstress window")


class TimedHistory:
    def __init__(self, records, elapsed):
        self.records = records
        self.elapsed = elapsed


def _timed_run(program, method, p):
    t0 = time.perf_counter()
    records = vp.run_scenario(program, method, p)
    return TimedHistory(records, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def reference_unimodular(warm_kernels):
    """The fine-step exponential-map reference for the accuracy program."""
    return _timed_run(vp.accuracy_program("unimodular", dt=0.01),
                      vp.Method.EM, vp.TABLE2)


@pytest.fixture(scope="session")
def fine_mebm_unimodular(warm_kernels):
    return _timed_run(vp.accuracy_program("unimodular", dt=0.01),
                      vp.Method.MEBM, vp.TABLE2)


@pytest.fixture(scope="session")
def reference_raw(warm_kernels):
    return _timed_run(vp.accuracy_program("raw", dt=0.01),
                      vp.Method.EM, vp.TABLE2)


@pytest.fixture(scope="session")
def fine_mebm_raw(warm_kernels):
    return _timed_run(vp.accuracy_program("raw", dt=0.01),
                      vp.Method.MEBM, vp.TABLE2)
