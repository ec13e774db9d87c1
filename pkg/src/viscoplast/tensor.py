"""Fixed-dimension second-rank tensor algebra.

Tensors are plain (3, 3) float64 numpy arrays.  Symmetric tensors travel
either as symmetric (3, 3) arrays or packed 6-vectors in the fixed
component ordering

    (11, 22, 33, 12, 13, 23)

with off-diagonal components stored unscaled (no engineering factor of 2).
Tangent matrices are (6, 6) arrays whose columns are derivatives with
respect to these components, where perturbing an off-diagonal component
means perturbing both mirrored entries of the symmetric tensor (the
chain-rule factor of 2 is borne by the finite-difference routines, not by
the storage).

General products and transposes use numpy (`a @ b`, `a.T`) directly; only
the operations with domain semantics get named functions here.
"""

import numpy as np

from . import _core
from .errors import StepSizeError

VOIGT_ORDER = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def _as33(a):
    a = np.asarray(a, dtype=float)
    if a.shape != (3, 3):
        raise ValueError(f"expected a 3x3 tensor, got shape {a.shape}")
    return a


def deviator(a):
    """Trace-free part a - (tr a / 3) 1."""
    a = _as33(a)
    return a - (np.trace(a) / 3.0) * np.eye(3)


def symmetrize(a):
    """Split into (symmetric, skew) parts; their sum reconstructs a."""
    a = _as33(a)
    sym = 0.5 * (a + a.T)
    return sym, a - sym


def unimodular(a):
    """Rescale to unit determinant, (det a)^(-1/3) a.

    Requires det a > 0.
    """
    a = _as33(a)
    d = _core._det3(a)
    if d <= 0.0:
        raise ValueError(f"unimodular part requires det > 0, got det = {d}")
    return d ** (-1.0 / 3.0) * a


def invariants(a):
    """Principal trace invariants (tr A, tr A^2 / 2, tr A^3 / 3)."""
    a = _as33(a)
    a2 = a @ a
    return float(np.trace(a)), float(np.trace(a2)) / 2.0, \
        float(np.trace(a2 @ a)) / 3.0


def norms(a):
    """(Frobenius norm, spectral norm)."""
    a = _as33(a)
    return float(np.linalg.norm(a)), float(np.linalg.norm(a, 2))


def trace(a):
    return float(np.trace(_as33(a)))


def det(a):
    """Determinant by the closed cofactor expansion."""
    return float(_core._det3(_as33(a)))


def inv(a):
    """Cofactor inverse; raises for (near-)singular input."""
    a = _as33(a)
    out, d = _core._inv3(a)
    n = float(np.linalg.norm(a))
    if abs(d) <= 1e-14 * n ** 3:
        raise ValueError(f"matrix is singular to working precision (det = {d})")
    return out


def ddot(a, b):
    """Scalar product A : B = tr(A B^T)."""
    return float(np.sum(_as33(a) * _as33(b)))


def texp(b, tol=1e-16, max_terms=40):
    """Tensor exponential by truncated Taylor series.

    Only arguments with ||B|| <= 1 are accepted; the local integrators
    guarantee ||B|| of about 0.4, where a few series terms are exact to
    machine precision.  Larger arguments signal that the increment is too
    large for the stepping scheme.
    """
    b = _as33(b)
    out, status = _core._texp(b, tol, max_terms)
    if status != _core.OK:
        raise StepSizeError(
            f"tensor exponential argument too large (||B|| = {np.linalg.norm(b):.3g} > 1); "
            "reduce the time step")
    return out


def texp_derivative(b, tol=1e-16, max_terms=40):
    """Directional derivative of the tensor exponential at b.

    Returns a map H -> d/de exp(b + e H) built from the power series
    sum_n 1/n! sum_k B^(n-1-k) H B^k, truncated like `texp`.
    """
    b = _as33(b)
    nb = np.linalg.norm(b)
    if nb > 1.0:
        raise StepSizeError(
            f"tensor exponential argument too large (||B|| = {nb:.3g} > 1); "
            "reduce the time step")
    powers = [np.eye(3)]
    # Term n of the derivative series is bounded by ||B||^(n-1)/(n-1)!.
    bound = 1.0
    n = 1
    while n < max_terms and bound > tol:
        powers.append(powers[-1] @ b)
        bound *= max(nb, 1e-30) / n
        n += 1
    nterms = len(powers)
    fact = 1.0
    coeffs = []
    for i in range(1, nterms + 1):
        fact *= i
        coeffs.append(1.0 / fact)

    def apply(h):
        h = _as33(h)
        out = np.zeros((3, 3))
        for nn in range(1, nterms + 1):
            acc = np.zeros((3, 3))
            for kk in range(nn):
                acc += powers[nn - 1 - kk] @ h @ powers[kk]
            out += coeffs[nn - 1] * acc
        return out

    return apply


def to_voigt(a):
    """Pack a symmetric tensor into the fixed 6-component ordering."""
    a = _as33(a)
    return np.array([a[i, j] for i, j in VOIGT_ORDER])


def from_voigt(v):
    """Unpack a 6-vector into the symmetric 3x3 tensor it represents."""
    v = np.asarray(v, dtype=float)
    if v.shape != (6,):
        raise ValueError(f"expected 6 components, got shape {v.shape}")
    a = np.empty((3, 3))
    for comp, (i, j) in zip(v, VOIGT_ORDER):
        a[i, j] = comp
        a[j, i] = comp
    return a
