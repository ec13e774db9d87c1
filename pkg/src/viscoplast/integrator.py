"""Implicit local stress algorithm.

One step advances the internal variables (C_i, C_ii, s, s_d) from t_n to
t_{n+1} for a prescribed deformation gradient at t_{n+1}:

1. Evaluate the trial overstress with frozen internal variables.  If it is
   nonpositive the step is elastic and the state is returned unchanged.
2. Otherwise solve the incremental consistency condition for the inelastic
   increment xi = dt * lambda_i.  Each candidate xi requires solving a
   12-unknown Newton subproblem for (C_i, C_ii); the consistency root-find
   is a hybrid: one Newton iteration on the power form H from xi = 0
   (where the root form is not differentiable), Newton on the root form D
   afterwards, and a Pegasus bracketing fallback on divergence.
3. Recover stresses, hardening, and the dissipation increment at the
   solution.

Three update maps are supported: the classical Euler-Backward resolvent
(EBM, which lets det C_i drift and exists for diagnostics), the same
resolvent followed by the unimodular projection (MEBM), and the tensor
exponential (EM), which preserves the determinant by construction.

Tangent convention: 6x6 matrices act on the packed symmetric ordering
(11, 22, 33, 12, 13, 23); a column for an off-diagonal component is the
derivative when both mirrored entries are perturbed together (chain-rule
factor of 2 carried by the finite-difference routines).
"""

import enum
from dataclasses import dataclass, replace

import numpy as np

from . import _core
from .errors import (DegenerateFlowError, SolverError, StepSizeError)
from .material import InternalState, MaterialParams, SQ23

#: Finite-difference half-step used by the consistent-tangent assembly.
TANGENT_FD = 1e-6


class Method(enum.Enum):
    """Time integration scheme for the internal-variable evolution."""

    EBM = "ebm"
    MEBM = "mebm"
    EM = "em"

    @property
    def code(self):
        return {"ebm": _core.EBM, "mebm": _core.MEBM, "em": _core.EM}[self.value]


@dataclass(frozen=True)
class SolverSettings:
    """Tolerances and limits of the local solves.

    newton_tol is the residual norm (dimensionless) of the subproblem
    Newton iteration; xi_tol bounds the consistency residual D.  Note the
    floor on achievable |D|: D inherits noise of order
    (mu + c) * newton_tol / k0 from the inner solve, so xi_tol cannot be
    driven meaningfully below ~1e-8 with the default newton_tol.
    xi_cap bounds the inelastic increment so the flow-operator norm stays
    within the validity bound of the truncated series (~2 xi).
    """

    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    xi_tol: float = 1e-8
    xi_max_iter: int = 100
    fd_epsilon: float = 1e-7
    xi_cap: float = 0.2

    def __post_init__(self):
        for name in ("newton_tol", "xi_tol", "fd_epsilon", "xi_cap"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.newton_max_iter <= 0 or self.xi_max_iter <= 0:
            raise ValueError("iteration limits must be positive")

    def replace(self, **kw):
        return replace(self, **kw)


DEFAULT_SETTINGS = SolverSettings()


@dataclass
class StepResult:
    """Converged state of one local step plus diagnostics."""

    state_next: InternalState
    T_tilde_next: np.ndarray
    X_tilde_next: np.ndarray
    xi: float
    f_next: float
    R_next: float
    F_norm: float
    newton_iters: int
    xi_iters: int
    dissipation_increment: float
    skew_i: float
    skew_ii: float
    det_Ci: float
    det_Cii: float


_STATUS_MESSAGES = {
    _core.ERR_NEWTON: "subproblem Newton iteration did not converge",
    _core.ERR_SINGULAR: "singular update operator; reduce dt",
    _core.ERR_SERIES: "flow-operator norm exceeds the series bound; reduce dt",
    _core.ERR_XI_CAP: "inelastic increment exceeds the cap; reduce dt",
    _core.ERR_DEGENERATE: "vanishing driving-force norm with positive increment",
    _core.ERR_RADICAND: "driving-force radicand below the roundoff floor",
    _core.ERR_STATE: "state tensor has non-positive determinant",
    _core.ERR_XI_STALL: "consistency iteration for xi stalled",
}


def _raise_status(status, residual=None):
    msg = _STATUS_MESSAGES.get(status, f"kernel status {status}")
    if status in (_core.ERR_SINGULAR, _core.ERR_SERIES, _core.ERR_XI_CAP):
        raise StepSizeError(msg, last_residual=residual)
    if status == _core.ERR_DEGENERATE:
        raise DegenerateFlowError(msg, last_residual=residual)
    raise SolverError(msg, last_residual=residual)


def _c33(a, name="tensor"):
    a = np.ascontiguousarray(a, dtype=float)
    if a.shape != (3, 3):
        raise ValueError(f"{name} must be 3x3, got {a.shape}")
    return a


def flow_operators(C_next, C_i, C_ii, xi, p):
    """Flow operators (B_i, B_ii) of the discrete evolution system.

    B_i = 2 (xi / F_norm) (C T - C_i X)^D,  B_ii = 2 xi kappa (C_i X)^D,
    evaluated at the given configuration.  Both are trace-free; their norm
    is about 2 xi.
    """
    if xi < 0.0:
        raise ValueError("xi must be >= 0")
    C_next = _c33(C_next, "C_next")
    C_i = _c33(C_i, "C_i")
    C_ii = _c33(C_ii, "C_ii")
    T, st = _core._stress_pk(C_next, C_i, p.k, p.mu)
    if st != _core.OK:
        _raise_status(st)
    X, st = _core._stress_back(C_i, C_ii, p.c)
    if st != _core.OK:
        _raise_status(st)
    fn, st = _core._fnorm(C_next, T, C_i, X)
    if st != _core.OK:
        _raise_status(st)
    Bi, Bii, st = _core._flow_ops(C_next, T, X, C_i, fn, xi, p.kappa)
    if st != _core.OK:
        _raise_status(st)
    return Bi, Bii


def k_operator(B, C_prev, method):
    """Update operator applied to the previous state.

    EBM/MEBM: (1 - B)^-1 C_prev (requires spectral norm of B below one for
    the series argument; the resolvent itself only needs 1 - B regular).
    EM: exp(B) C_prev.  The discrete update then symmetrizes and, for
    MEBM, projects onto unit determinant.
    """
    B = _c33(B, "B")
    C_prev = _c33(C_prev, "C_prev")
    if method is not Method.EM and np.linalg.norm(B, 2) >= 1.0:
        raise StepSizeError(
            "flow operator spectral norm >= 1; the resolvent series "
            "diverges, reduce dt")
    K, st = _core._apply_k(B, C_prev, method.code)
    if st != _core.OK:
        _raise_status(st)
    return K


def hardening_closed_form(xi, prev, p):
    """Isotropic hardening after eliminating (s, s_d).

    R(xi) = (tR + sqrt(2/3) gamma xi) / (1 + sqrt(2/3) beta xi) with the
    trial value tR = gamma (s - s_d); saturates at gamma/beta.
    Returns (R_next, tR).
    """
    if xi < 0.0:
        raise ValueError("xi must be >= 0")
    tR = p.gamma * (prev.s - prev.s_d)
    return float(_core._R_of_xi(tR, xi, p.gamma, p.beta)), float(tR)


def solve_subproblem(C_next, xi, prev, method, p, settings=DEFAULT_SETTINGS):
    """Solve the coupled update maps for (C_i, C_ii) at a given xi.

    Newton on the 12 packed components with a finite-difference Jacobian,
    started from the previous state.  The returned tensors are the update
    map applied to the converged iterate, so symmetry and (for MEBM/EM)
    unit determinant hold to machine precision.
    """
    if xi < 0.0:
        raise ValueError("xi must be >= 0")
    C_next = _c33(C_next, "C_next")
    y0 = np.empty(12)
    _pack_state(prev, y0)
    y, fn, iters, res, st = _core._solve_sub(
        C_next, float(xi), y0, prev.C_i, prev.C_ii, method.code,
        p.k, p.mu, p.c, p.kappa,
        settings.newton_tol, settings.newton_max_iter, settings.fd_epsilon)
    if st != _core.OK:
        _raise_status(st, residual=res)
    return _core._unpack6(y, 0), _core._unpack6(y, 6)


def _pack_state(state, out):
    _core._pack6(np.ascontiguousarray(state.C_i, dtype=float), out, 0)
    _core._pack6(np.ascontiguousarray(state.C_ii, dtype=float), out, 6)


def consistency_residuals(C_next, xi, prev, method, p, dt,
                          settings=DEFAULT_SETTINGS):
    """Both forms of the incremental consistency condition at xi.

    H = eta xi / dt - <g>^m (power form; bracket only entered when the
    overstress ratio g is positive) and D = (eta xi / dt)^(1/m) - g with
    g = (F_norm(xi) - sqrt(2/3)(K + R(xi))) / k0.  Returns (H, D, F_norm).
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    C_next = _c33(C_next, "C_next")
    Ci, Cii = solve_subproblem(C_next, xi, prev, method, p, settings)
    T, st = _core._stress_pk(C_next, Ci, p.k, p.mu)
    if st != _core.OK:
        _raise_status(st)
    X, st = _core._stress_back(Ci, Cii, p.c)
    if st != _core.OK:
        _raise_status(st)
    fn, st = _core._fnorm(C_next, T, Ci, X)
    if st != _core.OK:
        _raise_status(st)
    R, _ = hardening_closed_form(xi, prev, p)
    g = (fn - SQ23 * (p.K + R)) / p.k0
    H = p.eta * xi / dt - (max(g, 0.0) ** p.m)
    D = _core._visc_term(xi, dt, p.eta, p.m) - g
    return float(H), float(D), float(fn)


def solve_xi(C_next, prev, method, p, dt, settings=DEFAULT_SETTINGS):
    """Consistency solve for the inelastic increment of a plastic step.

    Requires a plastic trial state (positive trial overstress); elastic
    steps short-circuit to xi = 0 in `step` and never reach this solve.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    C_next = _c33(C_next, "C_next")
    T0, st = _core._stress_pk(C_next, prev.C_i, p.k, p.mu)
    if st != _core.OK:
        _raise_status(st)
    X0, st = _core._stress_back(prev.C_i, prev.C_ii, p.c)
    if st != _core.OK:
        _raise_status(st)
    F0, st = _core._fnorm(C_next, T0, prev.C_i, X0)
    if st != _core.OK:
        _raise_status(st)
    tR = p.gamma * (prev.s - prev.s_d)
    if F0 - SQ23 * (p.K + tR) <= 0.0:
        raise ValueError("elastic trial state: xi = 0, nothing to solve")
    st, xi, _, _, _, _ = _core._solve_xi(
        C_next, prev.C_i, prev.C_ii, tR, dt, method.code,
        p.k, p.mu, p.c, p.gamma, p.K, p.m, p.eta, p.k0, p.kappa, p.beta,
        settings.newton_tol, settings.newton_max_iter,
        settings.xi_tol, settings.xi_max_iter,
        settings.fd_epsilon, settings.xi_cap, F0)
    if st != _core.OK:
        _raise_status(st)
    return float(xi)


def step(prev, F_next, dt, method, p, settings=DEFAULT_SETTINGS):
    """Advance one material point over one implicit time step."""
    F_next = _c33(F_next, "F_next")
    if not np.isfinite(F_next).all():
        raise ValueError("F_next has non-finite entries")
    if _core._det3(F_next) <= 0.0:
        raise ValueError("F_next must have positive determinant")
    C = np.ascontiguousarray(F_next.T @ F_next)
    return step_from_C(prev, C, dt, method, p, settings)


def step_from_C(prev, C_next, dt, method, p, settings=DEFAULT_SETTINGS):
    """Advance one step driven directly by the right Cauchy-Green tensor.

    This is the map differentiated by the consistent tangent; `step` wraps
    it with C = F^T F.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if not isinstance(p, MaterialParams):
        raise TypeError("p must be a MaterialParams instance")
    C_next = _c33(C_next, "C_next")
    out = _core._step_kernel(
        C_next,
        np.ascontiguousarray(prev.C_i, dtype=float),
        np.ascontiguousarray(prev.C_ii, dtype=float),
        float(prev.s), float(prev.s_d), float(dt), method.code,
        p.as_array(),
        settings.newton_tol, settings.newton_max_iter,
        settings.xi_tol, settings.xi_max_iter,
        settings.fd_epsilon, settings.xi_cap)
    (status, Ci, Cii, s, sd, T, X, xi, f, R, fn, diss,
     newton_iters, xi_iters, skew_i, skew_ii, det_ci, det_cii) = out
    if status != _core.OK:
        _raise_status(status)
    return StepResult(
        state_next=InternalState(Ci, Cii, float(s), float(sd)),
        T_tilde_next=T, X_tilde_next=X, xi=float(xi), f_next=float(f),
        R_next=float(R), F_norm=float(fn),
        newton_iters=int(newton_iters), xi_iters=int(xi_iters),
        dissipation_increment=float(diss),
        skew_i=float(skew_i), skew_ii=float(skew_ii),
        det_Ci=float(det_ci), det_Cii=float(det_cii))


# ------------------------------------------------------- consistent tangent

def _voigt_columns(C):
    """Perturbation tensors for the six packed components of C."""
    cols = []
    for i, j in ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)):
        E = np.zeros((3, 3))
        E[i, j] = 1.0
        E[j, i] = 1.0
        cols.append(E)
    return cols


def _pk_voigt(C, Ci, p):
    T, st = _core._stress_pk(np.ascontiguousarray(C),
                             np.ascontiguousarray(Ci), p.k, p.mu)
    if st != _core.OK:
        _raise_status(st)
    return np.array([T[0, 0], T[1, 1], T[2, 2], T[0, 1], T[0, 2], T[1, 2]])


def consistent_tangent(prev, F_next, dt, method, p,
                       settings=DEFAULT_SETTINGS):
    """Derivative of the converged stress update, d T_tilde / d C, as 6x6.

    Assembled by the chain rule through the solved subproblem: partial
    stress derivatives are central differences of the constitutive law,
    the sensitivities of (C_i, xi) come from central differences of the
    subproblem solution and of the consistency residual D.  Matches a
    central difference of the full step map to ~1e-5 relative.
    """
    F_next = _c33(F_next, "F_next")
    C = np.ascontiguousarray(F_next.T @ F_next)
    base = step_from_C(prev, C, dt, method, p, settings)
    cols = _voigt_columns(C)
    Ci_sol = np.ascontiguousarray(base.state_next.C_i)
    A = np.zeros((6, 6))

    # d T / d C at frozen internal variables (pure stress evaluation).
    for jcol, E in enumerate(cols):
        h = TANGENT_FD * (1.0 + abs(C[np.nonzero(E)][0]))
        tp = _pk_voigt(C + h * E, Ci_sol, p)
        tm = _pk_voigt(C - h * E, Ci_sol, p)
        A[:, jcol] = (tp - tm) / (2.0 * h)

    if base.xi == 0.0:
        return A

    # Plastic step: add dT/dCi * dCi/dC with dCi/dC from the solved
    # subproblem and the consistency condition.
    dT_dCi = np.zeros((6, 6))
    for jcol, E in enumerate(cols):
        h = TANGENT_FD * (1.0 + abs(Ci_sol[np.nonzero(E)][0]))
        tp = _pk_voigt(C, Ci_sol + h * E, p)
        tm = _pk_voigt(C, Ci_sol - h * E, p)
        dT_dCi[:, jcol] = (tp - tm) / (2.0 * h)

    xi = base.xi
    tR = p.gamma * (prev.s - prev.s_d)

    def sub_solution(Cp, xival):
        Ci, Cii = solve_subproblem(np.ascontiguousarray(Cp), xival, prev,
                                   method, p, settings)
        T, st = _core._stress_pk(np.ascontiguousarray(Cp),
                                 np.ascontiguousarray(Ci), p.k, p.mu)
        if st != _core.OK:
            _raise_status(st)
        X, st = _core._stress_back(np.ascontiguousarray(Ci),
                                   np.ascontiguousarray(Cii), p.c)
        if st != _core.OK:
            _raise_status(st)
        fn, st = _core._fnorm(np.ascontiguousarray(Cp), T, Ci, X)
        if st != _core.OK:
            _raise_status(st)
        R = float(_core._R_of_xi(tR, xival, p.gamma, p.beta))
        g = (fn - SQ23 * (p.K + R)) / p.k0
        D = _core._visc_term(xival, dt, p.eta, p.m) - g
        civ = np.array([Ci[0, 0], Ci[1, 1], Ci[2, 2],
                        Ci[0, 1], Ci[0, 2], Ci[1, 2]])
        return civ, float(D)

    # Sensitivities with respect to C at fixed xi.
    dCi_dC = np.zeros((6, 6))
    dD_dC = np.zeros(6)
    for jcol, E in enumerate(cols):
        h = TANGENT_FD * (1.0 + abs(C[np.nonzero(E)][0]))
        cp, Dp = sub_solution(C + h * E, xi)
        cm, Dm = sub_solution(C - h * E, xi)
        dCi_dC[:, jcol] = (cp - cm) / (2.0 * h)
        dD_dC[jcol] = (Dp - Dm) / (2.0 * h)

    # Sensitivities with respect to xi at fixed C.
    dxi = max(1e-8, 1e-6 * xi)
    if xi - dxi > 0.0:
        cp, Dp = sub_solution(C, xi + dxi)
        cm, Dm = sub_solution(C, xi - dxi)
        dCi_dxi = (cp - cm) / (2.0 * dxi)
        dD_dxi = (Dp - Dm) / (2.0 * dxi)
    else:
        cp, Dp = sub_solution(C, xi + dxi)
        c0, D0 = sub_solution(C, xi)
        dCi_dxi = (cp - c0) / dxi
        dD_dxi = (Dp - D0) / dxi

    # Implicit function theorem on D(C, xi(C)) = 0.
    dxi_dC = -dD_dC / dD_dxi
    dCi_total = dCi_dC + np.outer(dCi_dxi, dxi_dC)
    return A + dT_dCi @ dCi_total
