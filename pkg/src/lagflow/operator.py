"""The special Lagrangian operator family F_tau acting on Hessian spectra.

For ``tau`` in ``[0, pi/2]`` with ``a = cot(tau)`` and ``b = sqrt(|cot(tau)**2 - 1|)``
the operator is a sum ``F(lambda) = sum_i g(lambda_i)`` of one scalar branch
function applied to each eigenvalue:

=============  ==========================  =======================================
branch         range of tau                g(t)
=============  ==========================  =======================================
LOG            tau == 0                    ln t
TAU_LOG        0 < tau < pi/4              ln((t + a - b) / (t + a + b))
HARMONIC       tau == pi/4                 -1 / (1 + t)
TAU_ARCTAN     pi/4 < tau < pi/2           arctan((t + a - b) / (t + a + b))
ARCTAN         tau == pi/2                 arctan t
=============  ==========================  =======================================

Branch selection compares ``tau`` exactly against ``0``, ``math.pi / 4`` and
``math.pi / 2``; there is no blending between branches.

All spectral functions work on numpy arrays whose last axis holds the
eigenvalues, so stacks of spectra are evaluated in one call.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConeViolationError, DomainError, RangeError

__all__ = [
    "Branch",
    "OperatorTau",
    "EnvelopeBounds",
    "CONE_FLOOR",
    "make_operator",
    "spectrum",
    "sym_matrix",
    "eigvals_sym2",
    "matrix_eigvals",
    "eval_spectrum",
    "eval_matrix",
    "grad_spectrum",
    "hess_spectrum_diag",
    "dual_eval",
    "dual_grad_spectrum",
    "dual_hess_spectrum_diag",
    "dF_dA",
    "envelope_bounds",
    "eval_envelope",
    "invert_envelope",
]

CONE_FLOOR = 1e-12
QUARTER_PI = math.pi / 4
HALF_PI = math.pi / 2


class Branch(enum.Enum):
    LOG = "log"
    TAU_LOG = "tau_log"
    HARMONIC = "harmonic"
    TAU_ARCTAN = "tau_arctan"
    ARCTAN = "arctan"


def _check_cone(lams):
    lams = np.asarray(lams, dtype=float)
    if lams.size == 0:
        raise ValueError("empty spectrum")
    lo = np.min(lams)
    if not lo > CONE_FLOOR:  # also catches NaN
        raise ConeViolationError(lo)
    return lams


@dataclass(frozen=True)
class OperatorTau:
    """Branch-tagged member of the F_tau family.

    Construct with :func:`make_operator`. ``a`` is NaN on the LOG branch and
    ``b`` is only meaningful on TAU_LOG / TAU_ARCTAN.
    """

    tau: float
    branch: Branch
    a: float = field(default=math.nan)
    b: float = field(default=math.nan)

    # -- scalar branch function and its derivatives (elementwise, no checks) --

    def g(self, t):
        t = np.asarray(t, dtype=float)
        a, b = self.a, self.b
        br = self.branch
        if br is Branch.LOG:
            return np.log(t)
        if br is Branch.TAU_LOG:
            # log1p keeps accuracy when b is small (tau near pi/4)
            return np.log1p(-2.0 * b / (t + a + b))
        if br is Branch.HARMONIC:
            return -1.0 / (1.0 + t)
        if br is Branch.TAU_ARCTAN:
            return np.arctan((t + a - b) / (t + a + b))
        return np.arctan(t)

    def dg(self, t):
        t = np.asarray(t, dtype=float)
        a, b = self.a, self.b
        br = self.branch
        if br is Branch.LOG:
            return 1.0 / t
        if br is Branch.TAU_LOG:
            return 2.0 * b / ((t + a - b) * (t + a + b))
        if br is Branch.HARMONIC:
            return 1.0 / (1.0 + t) ** 2
        if br is Branch.TAU_ARCTAN:
            return 2.0 * b / ((t + a - b) ** 2 + (t + a + b) ** 2)
        return 1.0 / (1.0 + t * t)

    def d2g(self, t):
        t = np.asarray(t, dtype=float)
        a, b = self.a, self.b
        br = self.branch
        if br is Branch.LOG:
            return -1.0 / (t * t)
        if br is Branch.TAU_LOG:
            # 1/(t+a+b)^2 - 1/(t+a-b)^2 without the cancellation
            return -4.0 * b * (t + a) / ((t + a - b) ** 2 * (t + a + b) ** 2)
        if br is Branch.HARMONIC:
            return -2.0 / (1.0 + t) ** 3
        if br is Branch.TAU_ARCTAN:
            s = (t + a - b) ** 2 + (t + a + b) ** 2
            return -8.0 * (t + a) * b / (s * s)
        return -2.0 * t / (1.0 + t * t) ** 2

    # -- spectral functions; last axis is the eigenvalue axis --

    def value(self, lams):
        lams = _check_cone(lams)
        return np.sum(self.g(lams), axis=-1)

    def grad(self, lams):
        lams = _check_cone(lams)
        return self.dg(lams)

    def hess_diag(self, lams):
        lams = _check_cone(lams)
        return self.d2g(lams)

    def dual_value(self, lams):
        lams = _check_cone(lams)
        return -np.sum(self.g(1.0 / lams), axis=-1)

    def dual_grad(self, lams):
        lams = _check_cone(lams)
        return self.dg(1.0 / lams) / lams**2

    def dual_hess_diag(self, lams):
        lams = _check_cone(lams)
        inv = 1.0 / lams
        return -self.d2g(inv) * inv**4 - 2.0 * self.dg(inv) * inv**3

    def describe(self):
        """JSON-friendly descriptor."""
        return {
            "tau": self.tau,
            "branch": self.branch.value,
            "a": None if math.isnan(self.a) else self.a,
            "b": None if math.isnan(self.b) else self.b,
        }


def make_operator(tau):
    """Build the operator for angle ``tau`` in ``[0, pi/2]``.

    >>> make_operator(math.pi / 2).branch
    <Branch.ARCTAN: 'arctan'>
    """
    tau = float(tau)
    if not (0.0 <= tau <= HALF_PI):
        raise DomainError(f"tau={tau!r} outside [0, pi/2]")
    if tau == 0.0:
        return OperatorTau(tau, Branch.LOG)
    if tau == QUARTER_PI:
        return OperatorTau(tau, Branch.HARMONIC, a=1.0, b=0.0)
    if tau == HALF_PI:
        return OperatorTau(tau, Branch.ARCTAN, a=0.0, b=1.0)
    a = 1.0 / math.tan(tau)
    b = math.sqrt(abs(a * a - 1.0))
    branch = Branch.TAU_LOG if tau < QUARTER_PI else Branch.TAU_ARCTAN
    return OperatorTau(tau, branch, a=a, b=b)


def spectrum(values):
    """Validate and sort a spectrum ascending (last axis)."""
    return np.sort(_check_cone(values), axis=-1)


def sym_matrix(entries, atol=0.0):
    """Return ``entries`` as a float array after checking exact symmetry."""
    A = np.array(entries, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.allclose(A, A.T, rtol=0.0, atol=atol):
        raise ValueError("matrix is not symmetric")
    return 0.5 * (A + A.T)


def eigvals_sym2(a11, a12, a22):
    """Ascending eigenvalues of the symmetric 2x2 matrices [[a11, a12], [a12, a22]].

    Works elementwise on arrays. The discriminant is clamped at zero.
    """
    a11 = np.asarray(a11, dtype=float)
    a22 = np.asarray(a22, dtype=float)
    half_tr = 0.5 * (a11 + a22)
    # (tr/2)^2 - det written as a sum of squares; the clamp only absorbs round-off
    half_diff = 0.5 * (a11 - a22)
    root = np.sqrt(np.maximum(half_diff * half_diff + a12 * a12, 0.0))
    return half_tr - root, half_tr + root


def matrix_eigvals(A):
    A = np.asarray(A, dtype=float)
    if A.shape == (2, 2):
        lo, hi = eigvals_sym2(A[0, 0], 0.5 * (A[0, 1] + A[1, 0]), A[1, 1])
        return np.array([lo, hi])
    return np.linalg.eigvalsh(A)


def eval_spectrum(op, s):
    return op.value(s)


def eval_matrix(op, A):
    """F applied to the eigenvalues of the symmetric positive definite ``A``."""
    return op.value(matrix_eigvals(sym_matrix(A, atol=1e-12)))


def grad_spectrum(op, s):
    return op.grad(s)


def hess_spectrum_diag(op, s):
    return op.hess_diag(s)


def dual_eval(op, s):
    """F*(s) = -F(1/s); the reciprocal ordering does not matter for a symmetric sum."""
    return op.dual_value(s)


def dual_grad_spectrum(op, s):
    return op.dual_grad(s)


def dual_hess_spectrum_diag(op, s):
    return op.dual_hess_diag(s)


def dF_dA(op, A):
    """Matrix derivative Q diag(F'(lambda_i)) Q^T of the spectral function at ``A``."""
    A = sym_matrix(A, atol=1e-12)
    lams, Q = np.linalg.eigh(A)
    d = op.grad(lams)
    out = (Q * d) @ Q.T
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class EnvelopeBounds:
    """Lower/upper envelopes with ``f1(lambda_1) <= F <= f2(lambda_n)``.

    For the F_tau family both envelopes equal ``n * g``.
    """

    op: OperatorTau
    n: int
    domain: tuple = (0.0, math.inf)

    def f1(self, t):
        return self.n * self.op.g(t)

    def f2(self, t):
        return self.n * self.op.g(t)


def envelope_bounds(op, n):
    return EnvelopeBounds(op, int(n))


def eval_envelope(op, t, n=1):
    """``n * g(t)``; with the default ``n=1`` this is the per-eigenvalue function."""
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0.0)):
        raise DomainError("envelope is defined for t > 0 only")
    out = n * op.g(t)
    return float(out) if out.ndim == 0 else out


def invert_envelope(op, v, lo, hi, n=1, tol=1e-12, max_iter=200):
    """Unique ``t`` in ``[lo, hi]`` with ``eval_envelope(op, t, n) == v``, by bisection.

    Broadcasts over array arguments. Values outside ``[f(lo), f(hi)]`` beyond a
    rounding slack raise :class:`RangeError`; values within the slack are
    clamped to the bracket end.
    """
    v, lo, hi = np.broadcast_arrays(
        np.asarray(v, dtype=float), np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    )
    if np.any(~(lo > 0.0)) or np.any(hi < lo):
        raise DomainError("need 0 < lo <= hi")
    f_lo = n * op.g(lo)
    f_hi = n * op.g(hi)
    slack = 1e-12 * (1.0 + np.abs(v))
    bad = (v < f_lo - slack) | (v > f_hi + slack)
    if np.any(bad):
        k = np.flatnonzero(bad.ravel())[0]
        raise RangeError(
            f"value {v.ravel()[k]!r} outside envelope range "
            f"[{f_lo.ravel()[k]!r}, {f_hi.ravel()[k]!r}]"
        )
    a = lo.astype(float).copy()
    b = hi.astype(float).copy()
    vtol = 1e-13 * (1.0 + np.abs(v))
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        stuck = (mid <= a) | (mid >= b)
        fm = n * op.g(mid)
        done = stuck | ((b - a <= tol) & (np.abs(fm - v) <= vtol))
        if np.all(done):
            break
        below = fm < v
        a = np.where(below & ~done, mid, a)
        b = np.where(~below & ~done, mid, b)
    t = 0.5 * (a + b)
    return float(t) if t.ndim == 0 else t
