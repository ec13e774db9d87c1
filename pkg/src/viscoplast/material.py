"""Constitutive relations of the finite-strain viscoplastic model.

The model couples a compressible neo-Hookean elastic response with two
incompressible inelastic flows: the macroscopic one (internal variable
C_i) and a microstructural one (C_ii) that produces saturating
Armstrong-Frederick kinematic hardening.  Isotropic hardening is carried
by the scalar pair (s, s_d) through R = gamma * (s - s_d).  Viscosity
enters through a Perzyna power law in the overstress.

All energies are stored premultiplied by the reference density, in MPa;
the density never appears on its own.

Unit note: the viscosity parameter eta multiplies time, so its natural
unit is seconds (times a dimensionless stress ratio raised to m); the
reference parameter set uses eta = 2e6 s even though one also finds it
quoted as a rate.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import _core
from .errors import SolverError

SQ23 = _core.SQ23


@dataclass(frozen=True)
class MaterialParams:
    """The ten constitutive constants.

    k, mu      bulk / shear modulus (MPa)
    c          bulk modulus of the microstructure (MPa)
    gamma      isotropic hardening modulus (MPa)
    K          initial yield stress (MPa)
    m          Perzyna exponent (>= 1)
    eta        viscosity (s); eta = 0 gives rate-independent plasticity
    k0         normalizing stress in the Perzyna bracket (MPa)
    kappa      kinematic-hardening saturation parameter (1/MPa)
    beta       isotropic-hardening saturation parameter (dimensionless)
    """

    k: float
    mu: float
    c: float
    gamma: float
    K: float
    m: float
    eta: float
    k0: float
    kappa: float
    beta: float

    def __post_init__(self):
        checks = [
            ("k", self.k > 0.0), ("mu", self.mu > 0.0), ("c", self.c >= 0.0),
            ("gamma", self.gamma >= 0.0), ("K", self.K > 0.0),
            ("m", self.m >= 1.0), ("eta", self.eta >= 0.0),
            ("k0", self.k0 > 0.0), ("kappa", self.kappa >= 0.0),
            ("beta", self.beta >= 0.0),
        ]
        bad = [name for name, ok in checks if not ok]
        if bad:
            raise ValueError(f"invalid material parameters: {', '.join(bad)}")

    def as_array(self):
        """Kernel parameter layout [k, mu, c, gamma, K, m, eta, k0, kappa, beta]."""
        return np.array([self.k, self.mu, self.c, self.gamma, self.K,
                         self.m, self.eta, self.k0, self.kappa, self.beta])

    def replace(self, **kw):
        return replace(self, **kw)


#: Reference parameter set used throughout the accuracy tests.
TABLE2 = MaterialParams(k=73500.0, mu=28200.0, c=3500.0, gamma=460.0,
                        K=270.0, m=3.6, eta=2e6, k0=1.0, kappa=0.028,
                        beta=5.0)

#: Modified hardening parameters for the cyclic-inversion torsion study.
FIG7_MODIFIED = TABLE2.replace(kappa=0.0035, c=1500.0, beta=10.0,
                               gamma=1800.0)

PRESETS = {"table2": TABLE2, "fig7_modified": FIG7_MODIFIED}


def _sym33(a, name):
    a = np.ascontiguousarray(a, dtype=float)
    if a.shape != (3, 3):
        raise ValueError(f"{name} must be a 3x3 tensor, got shape {a.shape}")
    return a


def _require_spd(a, name):
    a = _sym33(a, name)
    if not np.isfinite(a).all():
        raise ValueError(f"{name} has non-finite entries")
    if np.abs(a - a.T).max() > 1e-9 * max(1.0, np.abs(a).max()):
        raise ValueError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(0.5 * (a + a.T))
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} is not positive definite") from None
    return a


@dataclass
class InternalState:
    """Strain-like internal variables (C_i, C_ii, s, s_d).

    Both tensors live on the unimodular symmetric manifold (det = 1) when
    produced by the determinant-preserving integrators; s is the inelastic
    arc length and s_d its dissipative part.
    """

    C_i: np.ndarray = field(default_factory=lambda: np.eye(3))
    C_ii: np.ndarray = field(default_factory=lambda: np.eye(3))
    s: float = 0.0
    s_d: float = 0.0

    @classmethod
    def reference(cls):
        """Virgin state: C_i = C_ii = 1, s = s_d = 0."""
        return cls()

    def copy(self):
        return InternalState(self.C_i.copy(), self.C_ii.copy(),
                             self.s, self.s_d)

    def validate(self):
        _require_spd(self.C_i, "C_i")
        _require_spd(self.C_ii, "C_ii")
        if not (np.isfinite(self.s) and np.isfinite(self.s_d)):
            raise ValueError("s, s_d must be finite")
        if self.s < 0.0:
            raise ValueError("inelastic arc length s must be >= 0")
        return self


@dataclass
class StressState:
    """Stress quantities evaluated at one (C or F, state) pair."""

    T_tilde: np.ndarray
    X_tilde: np.ndarray
    T: np.ndarray
    F_norm: float
    f: float
    R: float


def second_pk_stress(C, C_i, p):
    """Second Piola-Kirchhoff stress on the reference configuration.

    T = k ln(sqrt(det C)) C^-1 + mu C^-1 (unimodular(C) C_i^-1)^D, built in
    a manifestly symmetric arrangement.
    """
    C = _require_spd(C, "C")
    C_i = _require_spd(C_i, "C_i")
    T, status = _core._stress_pk(C, C_i, p.k, p.mu)
    if status != _core.OK:
        raise ValueError("stress evaluation failed: non-positive determinant")
    return T


def backstress(C_i, C_ii, p):
    """Backstress X = (c/2) C_i^-1 (C_i C_ii^-1)^D on the reference frame."""
    C_i = _require_spd(C_i, "C_i")
    C_ii = _require_spd(C_ii, "C_ii")
    X, status = _core._stress_back(C_i, C_ii, p.c)
    if status != _core.OK:
        raise ValueError("backstress evaluation failed: non-positive determinant")
    return X


def cauchy_stress(F, T_tilde):
    """Push the second Piola-Kirchhoff stress forward: T = F T F^T / det F."""
    F = _sym33(F, "F")
    T_tilde = _sym33(T_tilde, "T_tilde")
    d = _core._det3(F)
    if d <= 0.0:
        raise ValueError(f"deformation gradient must have det > 0, got {d}")
    T = F @ T_tilde @ F.T / d
    return 0.5 * (T + T.T)


def driving_force_norm(C, T_tilde, C_i, X_tilde):
    """Norm of the driving force, sqrt(tr[((C T - C_i X)^D)^2]).

    Equals the Frobenius norm of the deviatoric Mandel-type driving force
    on the stress-free intermediate configuration.  Tiny negative radicands
    from roundoff near the stress-free state are clamped to zero.
    """
    C = _sym33(C, "C")
    T_tilde = _sym33(T_tilde, "T_tilde")
    C_i = _sym33(C_i, "C_i")
    X_tilde = _sym33(X_tilde, "X_tilde")
    fn, status = _core._fnorm(C, T_tilde, C_i, X_tilde)
    if status == _core.ERR_RADICAND:
        raise SolverError(
            "driving-force radicand below the roundoff floor; "
            "inconsistent state tensors")
    return float(fn)


def perzyna(F_norm, R, p):
    """Overstress and inelastic multiplier (f, lambda_i).

    f = F_norm - sqrt(2/3) (K + R); lambda_i = <f/k0>^m / eta.  With
    eta = 0 the multiplier is defined by the consistency condition, not by
    this formula, so a positive overstress is rejected in that case.
    """
    if F_norm < 0.0:
        raise ValueError("F_norm must be >= 0")
    f = F_norm - SQ23 * (p.K + R)
    if f <= 0.0:
        return f, 0.0
    if p.eta == 0.0:
        raise ValueError(
            "rate-independent mode (eta = 0): the multiplier follows from "
            "the consistency solve, not from the overstress power law")
    return f, (f / p.k0) ** p.m / p.eta


def free_energy(C, C_i, C_ii, s_e, p):
    """Stored energy (times reference density, MPa).

    rho psi = k/2 (ln sqrt(det(C C_i^-1)))^2
            + mu/2 (tr unimodular(C C_i^-1) - 3)
            + c/4  (tr unimodular(C_i C_ii^-1) - 3)
            + gamma/2 s_e^2
    """
    C = _require_spd(C, "C")
    C_i = _require_spd(C_i, "C_i")
    C_ii = _require_spd(C_ii, "C_ii")
    A = C @ np.linalg.inv(C_i)
    B = C_i @ np.linalg.inv(C_ii)
    dA = np.linalg.det(A)
    dB = np.linalg.det(B)
    if dA <= 0.0 or dB <= 0.0:
        raise ValueError("free energy requires positive determinants")
    psi_el = 0.5 * p.k * (0.5 * np.log(dA)) ** 2 \
        + 0.5 * p.mu * (np.trace(A) * dA ** (-1.0 / 3.0) - 3.0)
    psi_kin = 0.25 * p.c * (np.trace(B) * dB ** (-1.0 / 3.0) - 3.0)
    psi_iso = 0.5 * p.gamma * s_e ** 2
    return float(psi_el + psi_kin + psi_iso)


def dissipation_increment(C, state, xi, p):
    """Per-step internal dissipation increment (MPa), evaluated implicitly.

    With the flow rules inserted, the Clausius-Duhem rate reduces to
        xi (F_norm - sqrt(2/3) R) + xi kappa ||(C_i X)^D||^2
        + sqrt(2/3) (beta/gamma) xi R^2,
    all quantities taken at the end of the step.  Nonnegative for every
    admissible step; an elastic step (xi = 0) dissipates nothing.
    """
    if xi == 0.0:
        return 0.0
    C = _sym33(C, "C")
    T = second_pk_stress(C, state.C_i, p)
    X = backstress(state.C_i, state.C_ii, p)
    fn = driving_force_norm(C, T, state.C_i, X)
    R = p.gamma * (state.s - state.s_d)
    M = state.C_i @ X
    Md = M - np.trace(M) / 3.0 * np.eye(3)
    q = float(np.sum(Md * Md.T))
    bog = p.beta / p.gamma if p.gamma > 0.0 else 0.0
    return float(xi * (fn - SQ23 * R) + xi * p.kappa * q
                 + SQ23 * bog * xi * R * R)


def stress_state(F, state, p):
    """Evaluate all stress quantities for a deformation gradient and state."""
    F = _sym33(F, "F")
    C = F.T @ F
    T_tilde = second_pk_stress(C, state.C_i, p)
    X_tilde = backstress(state.C_i, state.C_ii, p)
    F_norm = driving_force_norm(C, T_tilde, state.C_i, X_tilde)
    R = p.gamma * (state.s - state.s_d)
    f = F_norm - SQ23 * (p.K + R)
    return StressState(T_tilde=T_tilde, X_tilde=X_tilde,
                       T=cauchy_stress(F, T_tilde), F_norm=F_norm, f=f, R=R)
