"""Explicit flow ``u_t = F_tau(D^2 u)`` with the second boundary condition ``Du(Omega) = Omega~``.

Discretization on a masked Cartesian grid over Omega:

* interior nodes (full 9-point neighbourhood active) are advanced by explicit
  Euler, ``u += dt * F(D^2 u)``, with the Hessian from central differences
  (3-point ``u_xx``, ``u_yy``; 4-corner ``u_xy``);
* boundary nodes (active, but some neighbour outside) carry the boundary
  condition ``h~(Du) = 0`` where ``h~`` is the signed distance of Omega~.

At a boundary node ``x0`` the gradient is taken one-sided along each axis
toward an active neighbour ``x0 - d_k h e_k`` (``d_k`` the sign of the
outward normal component when that neighbour exists)::

    G_k = d_k * ((u0 - u_nbr) / h + (h / 2) * H_kk)

and extrapolated to the projection ``xb`` of ``x0`` on the boundary of Omega,
``P = G + H (xb - x0)``. ``H`` is the lagged Hessian of the nearest interior
node whose own stencil is fully interior. Both corrections are exact for quadratics, so quadratic
solutions are fixed shapes of the discrete flow.

Boundary nodes are coupled when an axis neighbour is itself a boundary node,
so the conditions ``h~(P) = 0`` at all boundary nodes form one sparse
nonlinear system. It is solved by Newton with a sparse direct solve per
iteration until every residual is below ``tol_bc``. Along each node's own
unknown ``h~(P)`` is convex (a signed distance to a convex set composed with
an affine map); nodes sitting left of its minimum are pushed right, which
selects the larger root, the one on the convex branch.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import spsolve

from .errors import BoundaryNewtonError, ConfigError, ConvexityLossError
from .geometry import domain_from_dict, hausdorff, moment_ellipse, sample_boundary
from .operator import eigvals_sym2, make_operator

log = logging.getLogger(__name__)

__all__ = [
    "GridSpec",
    "InitialData",
    "FlowConfig",
    "FlowState",
    "FlowReport",
    "auto_quadratic",
    "init_state",
    "hessian_at",
    "interior_hessians",
    "stability_dt",
    "step",
    "run_flow",
    "boundary_gradients",
    "write_fields",
]

PAD = 2


# -- grid --


@dataclass(eq=False)
class GridSpec:
    """Padded node lattice over ``box`` with spacing ``h``; arrays are indexed ``[iy, ix]``."""

    h: float
    box: tuple
    x: np.ndarray
    y: np.ndarray
    active: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray

    @property
    def shape(self):
        return self.active.shape

    @property
    def points(self):
        X, Y = np.meshgrid(self.x, self.y)
        return np.stack([X, Y], axis=-1)

    @classmethod
    def build(cls, omega, h=None, n=None, box=None):
        if box is None:
            box = omega.bounding_box()
        box = tuple(float(v) for v in box)
        x0, x1, y0, y1 = box
        if not (x1 > x0 and y1 > y0):
            raise ConfigError(f"degenerate grid box {box}")
        if h is None:
            if n is None or n < 5:
                raise ConfigError("grid needs either h or n >= 5")
            h = max(x1 - x0, y1 - y0) / (n - 1)
        h = float(h)
        if not h > 0:
            raise ConfigError("grid spacing must be positive")
        nx = int(math.floor((x1 - x0) / h + 1e-9)) + 1
        ny = int(math.floor((y1 - y0) / h + 1e-9)) + 1
        x = x0 + h * np.arange(-PAD, nx + PAD)
        y = y0 + h * np.arange(-PAD, ny + PAD)
        X, Y = np.meshgrid(x, y)
        active = omega.value(np.stack([X, Y], axis=-1)) < 0.0
        active[:PAD, :] = active[-PAD:, :] = False
        active[:, :PAD] = active[:, -PAD:] = False
        grid = cls(h, box, x, y, active, None, None)
        grid._classify(omega)
        return grid

    def _classify(self, omega):
        act = self.active.copy()
        while True:
            nb = np.ones_like(act)
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    nb &= np.roll(np.roll(act, dy, axis=0), dx, axis=1)
            interior = act & nb
            boundary = act & ~interior
            # each boundary node needs an active neighbour along both axes
            has_x = np.roll(act, 1, axis=1) | np.roll(act, -1, axis=1)
            has_y = np.roll(act, 1, axis=0) | np.roll(act, -1, axis=0)
            drop = boundary & ~(has_x & has_y)
            if not drop.any():
                break
            act &= ~drop
        if not interior.any():
            raise ConfigError("grid too coarse: no interior nodes")
        self.active, self.interior, self.boundary = act, interior, boundary


def _flat(grid, mask):
    return np.flatnonzero(mask.ravel())


@dataclass(eq=False)
class _Stencils:
    """Precomputed gather indices for the interior Hessian and the boundary condition."""

    nx: int
    inner: np.ndarray
    bnd: np.ndarray
    bxy: np.ndarray
    ext: np.ndarray
    d: np.ndarray
    nbr: np.ndarray
    near: np.ndarray
    nbr_b: np.ndarray  # position of each axis neighbour among boundary nodes, -1 if interior
    jac_pattern: tuple  # CSR (indptr, indices, order) of the boundary Jacobian

    @classmethod
    def build(cls, grid, omega):
        ny, nx = grid.shape
        inner = _flat(grid, grid.interior)
        bnd = _flat(grid, grid.boundary)
        pts = grid.points.reshape(-1, 2)
        bxy = pts[bnd]
        xb = omega.project(bxy)
        nrm = omega.outward_normal(xb)
        act = grid.active.ravel()
        d = np.where(nrm >= 0, 1, -1).astype(int)
        nbr = np.empty((len(bnd), 2), dtype=int)
        for k, stride in ((0, 1), (1, nx)):
            cand = bnd - d[:, k] * stride
            flip = ~act[cand]
            d[flip, k] *= -1
            nbr[:, k] = bnd - d[:, k] * stride
        if not act[nbr].all():
            raise ConfigError("boundary node without an active axis neighbour")
        # Hessian source: nearest interior node whose stencil avoids boundary nodes,
        # otherwise the boundary update feeds back into its own Hessian
        deep = grid.interior.copy()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                deep &= np.roll(np.roll(grid.interior, dy, axis=0), dx, axis=1)
        cand = np.flatnonzero(deep.ravel()[inner])
        if cand.size == 0:
            cand = np.arange(len(inner))
        ipts = pts[inner[cand]]
        dist = np.linalg.norm(bxy[:, None, :] - ipts[None, :, :], axis=-1)
        near = cand[np.argmin(dist, axis=1)]  # position within `inner`
        pos = np.full(act.size, -1)
        pos[bnd] = np.arange(len(bnd))
        nbr_b = pos[nbr]
        # Jacobian entries come as [diagonal, coupled off-diagonals]; `order` sorts them row-major
        m = len(bnd)
        coupled = nbr_b >= 0
        rows = np.concatenate([np.arange(m), np.repeat(np.arange(m)[:, None], 2, axis=1)[coupled]])
        cols = np.concatenate([np.arange(m), nbr_b[coupled]])
        order = np.lexsort((cols, rows))
        indptr = np.searchsorted(rows[order], np.arange(m + 1))
        pattern = (indptr, cols[order], order)
        return cls(nx, inner, bnd, bxy, xb - bxy, d.astype(float), nbr, near, nbr_b, pattern)


# -- configuration --


@dataclass
class InitialData:
    """Initial datum: ``"auto"``, ``"quadratic"`` (``M``, ``b``) or ``"function"`` (``func``).

    ``perturb`` adds ``perturb * q(x)**2 * (1 + 0.5 (x - c_x) / R)`` where
    ``q`` is the smooth defining function of Omega. The bump has zero
    gradient on the boundary, so the image condition of the quadratic part is
    kept.
    """

    mode: str = "auto"
    M: object = None
    b: object = None
    perturb: float = 0.0
    func: object = None

    @classmethod
    def from_dict(cls, spec):
        spec = dict(spec or {})
        mode = spec.get("mode", "auto")
        if mode not in ("auto", "quadratic"):
            raise ConfigError(f"u0.mode must be 'auto' or 'quadratic', got {mode!r}")
        M = spec.get("M")
        b = spec.get("b")
        if mode == "quadratic" and M is None:
            raise ConfigError("u0.mode 'quadratic' requires M")
        return cls(mode, M, b, float(spec.get("perturb", 0.0)))

    def to_dict(self):
        out = {"mode": self.mode, "perturb": self.perturb}
        if self.M is not None:
            out["M"] = np.asarray(self.M, dtype=float).tolist()
        if self.b is not None:
            out["b"] = np.asarray(self.b, dtype=float).tolist()
        return out


@dataclass
class FlowConfig:
    tau: float
    domain: object
    domain_tilde: object
    h: float | None = None
    n: int | None = 64
    box: tuple | None = None
    u0: InitialData = field(default_factory=InitialData)
    tol_osc: float = 1e-6
    tol_bc: float = 1e-12
    cfl: float = 0.5
    max_steps: int = 200_000
    max_newton: int = 50
    fields: bool = False
    every: int = 0
    f_shift: float = 0.0
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.cfl <= 1:
            raise ConfigError("cfl must be in (0, 1]")
        if not self.tol_osc > 0 or not self.tol_bc > 0:
            raise ConfigError("tolerances must be positive")
        if self.max_steps < 1 or self.max_newton < 1:
            raise ConfigError("max_steps and max_newton must be >= 1")

    @classmethod
    def from_dict(cls, cfg):
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        try:
            grid = cfg.get("grid", {}) or {}
            out = cfg.get("output", {}) or {}
            return cls(
                tau=_parse_tau(cfg["tau"]),
                domain=domain_from_dict(cfg["domain"]),
                domain_tilde=domain_from_dict(cfg["domain_tilde"]),
                h=grid.get("h"),
                n=grid.get("n", None if "h" in grid else 64),
                box=tuple(grid["box"]) if grid.get("box") is not None else None,
                u0=InitialData.from_dict(cfg.get("u0")),
                tol_osc=float(cfg.get("tol_osc", 1e-6)),
                tol_bc=float(cfg.get("tol_bc", 1e-12)),
                cfl=float(cfg.get("cfl", 0.5)),
                max_steps=int(cfg.get("max_steps", 200_000)),
                max_newton=int(cfg.get("max_newton", 50)),
                fields=bool(out.get("fields", False)),
                every=int(out.get("every", 0)),
                f_shift=float(cfg.get("f_shift", 0.0)),
                threads=int(cfg.get("threads", 1)),
            )
        except KeyError as exc:
            raise ConfigError(f"missing config key {exc}") from exc
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad config value: {exc}") from exc

    def to_dict(self):
        return {
            "tau": self.tau,
            "domain": self.domain.describe(),
            "domain_tilde": self.domain_tilde.describe(),
            "grid": {"h": self.h, "n": self.n, "box": list(self.box) if self.box else None},
            "u0": self.u0.to_dict(),
            "tol_osc": self.tol_osc,
            "tol_bc": self.tol_bc,
            "cfl": self.cfl,
            "max_steps": self.max_steps,
            "max_newton": self.max_newton,
            "output": {"fields": self.fields, "every": self.every},
            "f_shift": self.f_shift,
        }


def _parse_tau(value):
    """Float, or an expression such as ``"pi/4"``, ``"3pi/8"``, ``"3*pi/8"``."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip().lower().replace(" ", "").replace("*", "")
    if "pi" not in text:
        return float(text)
    num, _, den = text.partition("/")
    coef = num.replace("pi", "")
    coef = float(coef) if coef else 1.0
    den = float(den) if den else 1.0
    if coef == 1.0 and den == 4.0:
        return math.pi / 4
    if coef == 1.0 and den == 2.0:
        return math.pi / 2
    return coef * math.pi / den


# -- state --


@dataclass(eq=False)
class FlowState:
    grid: GridSpec
    u: np.ndarray
    t: float
    dt_last: float
    op: object
    omega: object
    omega_tilde: object
    steps: int = 0
    ut: np.ndarray | None = None
    f_shift: float = 0.0
    cfl: float = 0.5
    tol_bc: float = 1e-12
    max_newton: int = 50
    threads: int = 1
    init_mismatch: float = math.nan
    st: _Stencils = None

    @property
    def h(self):
        return self.grid.h


@dataclass
class FlowReport:
    C_inf: float
    osc_ut: float
    steps: int
    wall_time: float
    residual_sup: float
    image_hausdorff: float
    jacobian_min: float
    converged: bool
    t_final: float
    dt: float
    h: float
    init_mismatch: float

    def to_dict(self, timing=False):
        out = {k: v for k, v in self.__dict__.items() if timing or k != "wall_time"}
        return out


def auto_quadratic(omega, omega_tilde):
    """``(M, b)`` with ``x -> M x + b`` mapping the moment ellipse of Omega onto Omega~'s.

    ``M`` is the unique SPD solution of ``M S M = S~``:
    ``M = S^{-1/2} (S^{1/2} S~ S^{1/2})^{1/2} S^{-1/2}``.
    """
    c, S = moment_ellipse(omega)
    ct, St = moment_ellipse(omega_tilde)
    w, V = np.linalg.eigh(S)
    Sh = (V * np.sqrt(w)) @ V.T
    Shi = (V / np.sqrt(w)) @ V.T
    w2, V2 = np.linalg.eigh(Sh @ St @ Sh)
    mid = (V2 * np.sqrt(np.maximum(w2, 0.0))) @ V2.T
    M = Shi @ mid @ Shi
    M = 0.5 * (M + M.T)
    return M, ct - M @ c


def _initial_values(u0, omega, omega_tilde, pts):
    if u0.mode == "function":
        return np.asarray(u0.func(pts), dtype=float), None
    if u0.mode == "auto":
        M, b = auto_quadratic(omega, omega_tilde)
    elif u0.mode == "quadratic":
        M = np.asarray(u0.M, dtype=float)
        b = np.zeros(2) if u0.b is None else np.asarray(u0.b, dtype=float)
        if M.shape != (2, 2) or not np.allclose(M, M.T):
            raise ConfigError("u0.M must be a symmetric 2x2 matrix")
        if np.linalg.eigvalsh(M)[0] <= 0:
            raise ConfigError("u0.M is not positive definite")
    else:
        raise ConfigError(f"unknown u0 mode {u0.mode!r}")
    vals = 0.5 * np.einsum("...i,ij,...j->...", pts, M, pts) + pts @ b
    if u0.perturb:
        c = np.asarray(omega.centroid())
        R = 0.5 * omega.diameter()
        q = omega.smooth_defining(pts)
        vals = vals + u0.perturb * q * q * (1.0 + 0.5 * (pts[..., 0] - c[0]) / R)
    return vals, (M, b)


def init_state(grid, omega, omega_tilde, op, u0=None, *, f_shift=0.0, cfl=0.5, tol_bc=1e-12,
               max_newton=50, threads=1, mismatch_samples=256):
    """Discretize ``u0`` on ``grid``, verify discrete convexity and solve the boundary condition once.

    Raises :class:`ConfigError` when the initial gradient image misses Omega~
    by more than its diameter, :class:`ConvexityLossError` when an interior
    Hessian is not positive definite.
    """
    u0 = u0 or InitialData()
    pts = grid.points
    vals, quad = _initial_values(u0, omega, omega_tilde, pts)
    u = np.where(grid.active, vals, np.nan)

    # image mismatch of Du0 on the boundary of Omega
    bpts, _ = sample_boundary(omega, mismatch_samples)
    if quad is not None:
        M, b = quad
        img = bpts @ M.T + b  # the bump has zero gradient on the boundary
    else:
        e = 1e-6 * grid.h
        f = u0.func
        img = np.stack(
            [(f(bpts + [e, 0]) - f(bpts - [e, 0])) / (2 * e),
             (f(bpts + [0, e]) - f(bpts - [0, e])) / (2 * e)], axis=-1)
    tpts, _ = sample_boundary(omega_tilde, mismatch_samples)
    mismatch = hausdorff(img, tpts)
    if mismatch > omega_tilde.diameter():
        raise ConfigError(
            f"initial gradient image misses the target by {mismatch:.3g} "
            f"(> target diameter {omega_tilde.diameter():.3g})"
        )
    if mismatch > 3 * grid.h:
        log.warning("initial image mismatch %.3g exceeds 3h", mismatch)

    state = FlowState(
        grid, u, 0.0, 0.0, op, omega, omega_tilde,
        f_shift=f_shift, cfl=cfl, tol_bc=tol_bc, max_newton=max_newton, threads=threads,
        init_mismatch=float(mismatch), st=_Stencils.build(grid, omega),
    )
    hxx, hxy, hyy = interior_hessians(state)
    lo, _ = eigvals_sym2(hxx, hxy, hyy)
    _check_convex(state, lo, step=0)
    # make the boundary values satisfy the discrete boundary condition, so the
    # first step does not carry a one-off correction of the initial data
    uf = state.u.ravel().copy()
    _solve_boundary(state, uf, (hxx, hxy, hyy))
    state.u = uf.reshape(state.u.shape)
    state.ut = np.full(grid.shape, np.nan)
    return state


# -- discrete operators --


def interior_hessians(state, u=None):
    """``(u_xx, u_xy, u_yy)`` at every interior node (flat order of ``grid.interior``)."""
    st = state.st
    h2 = state.grid.h ** 2
    uf = (state.u if u is None else u).ravel()
    i = st.inner
    nx = st.nx
    c = uf[i]
    hxx = (uf[i + 1] - 2.0 * c + uf[i - 1]) / h2
    hyy = (uf[i + nx] - 2.0 * c + uf[i - nx]) / h2
    hxy = (uf[i + nx + 1] - uf[i + nx - 1] - uf[i - nx + 1] + uf[i - nx - 1]) / (4.0 * h2)
    return hxx, hxy, hyy


def hessian_at(state, node):
    """Discrete Hessian at the interior node ``(iy, ix)`` as a 2x2 array."""
    iy, ix = node
    if not state.grid.interior[iy, ix]:
        raise ValueError(f"node {node} is not an interior node")
    u = state.u
    h2 = state.grid.h ** 2
    uxx = (u[iy, ix + 1] - 2 * u[iy, ix] + u[iy, ix - 1]) / h2
    uyy = (u[iy + 1, ix] - 2 * u[iy, ix] + u[iy - 1, ix]) / h2
    uxy = (u[iy + 1, ix + 1] - u[iy + 1, ix - 1] - u[iy - 1, ix + 1] + u[iy - 1, ix - 1]) / (4 * h2)
    return np.array([[uxx, uxy], [uxy, uyy]])


def _eps_cone(state):
    umax = np.nanmax(np.abs(state.u))
    return 1e-10 * (1.0 + umax / state.grid.h ** 2)


def _check_convex(state, lo, step):
    eps = _eps_cone(state)
    k = int(np.argmin(lo))
    if not lo[k] > eps:
        flat = state.st.inner[k]
        node = tuple(int(v) for v in np.unravel_index(flat, state.grid.shape))
        raise ConvexityLossError(node, lo[k], step)


def _operator_terms(state, hxx, hxy, hyy):
    """F(D^2 u), trace of dF/dA and the smallest eigenvalue, optionally threaded by blocks."""
    op = state.op

    def block(sl):
        lo, hi = eigvals_sym2(hxx[sl], hxy[sl], hyy[sl])
        lam = np.stack([lo, hi], axis=-1)
        safe = np.maximum(lam, 1e-300)
        return op.g(safe).sum(axis=-1), op.dg(safe).sum(axis=-1), lo

    m = len(hxx)
    if state.threads > 1 and m >= 2 * state.threads:
        edges = np.linspace(0, m, state.threads + 1).astype(int)
        slices = [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]
        with ThreadPoolExecutor(max_workers=state.threads) as pool:
            parts = list(pool.map(block, slices))
        return tuple(np.concatenate(p) for p in zip(*parts))
    return block(slice(None))


def stability_dt(state, trace=None):
    """``cfl * h^2 / (4 * max trace dF/dA)`` over interior nodes."""
    if trace is None:
        hxx, hxy, hyy = interior_hessians(state)
        _, trace, _ = _operator_terms(state, hxx, hxy, hyy)
    return state.cfl * state.grid.h ** 2 / (4.0 * float(np.max(trace)))


def _bc_parts(state, H):
    """Constant pieces of ``P(u0) = base(u_nbr) + c * u0`` at boundary nodes."""
    st = state.st
    h = state.grid.h
    hxx, hxy, hyy = (comp[st.near] for comp in H)
    c = st.d / h
    corr = np.column_stack([st.d[:, 0] * 0.5 * h * hxx, st.d[:, 1] * 0.5 * h * hyy])
    ex, ey = st.ext[:, 0], st.ext[:, 1]
    extra = np.column_stack([hxx * ex + hxy * ey, hxy * ex + hyy * ey])
    return c, corr + extra


def _solve_boundary(state, uf, H):
    """Newton on the coupled system ``h~(P_k) = 0`` over all boundary nodes; updates ``uf``.

    Returns the final max residual.
    """
    st = state.st
    target = state.omega_tilde
    tol = state.tol_bc
    h = state.grid.h
    c, fixed = _bc_parts(state, H)
    m = len(st.bnd)
    indptr, indices, order = st.jac_pattern
    coupled = st.nbr_b >= 0
    jump_scale = h * (1.0 + target.diameter())
    for _ in range(state.max_newton + 1):
        u0 = uf[st.bnd]
        P = fixed + c * (u0[:, None] - uf[st.nbr])
        phi, grad = target.value_and_gradient(P)
        resid = float(np.max(np.abs(phi)))
        if resid <= tol:
            return resid
        gc = grad * c
        diag = gc.sum(axis=1)
        # left of the minimum along the node's own line (or flat): jump past the far side
        jump = diag <= 1e-12 / h
        if jump.any():
            uf[st.bnd[jump]] = u0[jump] + np.abs(phi[jump]) * h + jump_scale
            continue
        data = np.concatenate([diag, -gc[coupled]])[order]
        J = csr_matrix((data, indices, indptr), shape=(m, m))
        uf[st.bnd] = u0 - spsolve(J, phi)
    raise BoundaryNewtonError(
        f"boundary Newton did not converge in {state.max_newton} iterations (max residual {resid:.3e})"
    )


def boundary_gradients(state, at=None):
    """One-sided gradients ``G`` at boundary nodes, or extrapolated to points ``at``.

    With ``at`` given, each point uses its nearest boundary node ``x0`` and
    returns ``G + H (at - x0)``.
    """
    st = state.st
    uf = state.u.ravel()
    H = interior_hessians(state)
    c, _ = _bc_parts(state, H)
    h = state.grid.h
    hxx, hxy, hyy = (comp[st.near] for comp in H)
    corr = np.column_stack([st.d[:, 0] * 0.5 * h * hxx, st.d[:, 1] * 0.5 * h * hyy])
    G = c * (uf[st.bnd][:, None] - uf[st.nbr]) + corr
    if at is None:
        return G
    at = np.asarray(at, dtype=float)
    k = np.argmin(np.linalg.norm(at[:, None, :] - st.bxy[None, :, :], axis=-1), axis=1)
    e = at - st.bxy[k]
    return G[k] + np.column_stack(
        [hxx[k] * e[:, 0] + hxy[k] * e[:, 1], hxy[k] * e[:, 0] + hyy[k] * e[:, 1]]
    )


def step(state):
    """One explicit step; returns the new state (the input is not modified)."""
    st = state.st
    hxx, hxy, hyy = interior_hessians(state)
    F, trace, lo = _operator_terms(state, hxx, hxy, hyy)
    _check_convex(state, lo, state.steps)
    F = F + state.f_shift
    dt = stability_dt(state, trace)
    uf = state.u.ravel().copy()
    uf[st.inner] += dt * F
    uf[st.bnd] += dt * F[st.near]  # predictor
    _solve_boundary(state, uf, (hxx, hxy, hyy))
    u_new = uf.reshape(state.u.shape)
    ut = (u_new - state.u) / dt
    return replace(state, u=u_new, t=state.t + dt, dt_last=dt, steps=state.steps + 1, ut=ut)


def _interior_ut(state):
    return state.ut.ravel()[state.st.inner]


# -- driver --


def write_fields(state, path):
    """CSV ``x,y,u,ut,du_x,du_y,f_value`` per active node (17 significant digits).

    ``f_value`` is only defined at interior nodes and is NaN on the boundary.
    """
    from .analysis import gradient_field, operator_values

    grid = state.grid
    idx = _flat(grid, grid.active)
    uf = state.u.ravel()
    utf = state.ut.ravel() if state.ut is not None else np.full_like(uf, np.nan)
    fval = np.full(uf.size, np.nan)
    fval[state.st.inner] = operator_values(state)
    pts, du = gradient_field(state)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "u", "ut", "du_x", "du_y", "f_value"])
        for j, k in enumerate(idx):
            row = (pts[j, 0], pts[j, 1], uf[k], utf[k], du[j, 0], du[j, 1], fval[k])
            w.writerow([f"{v:.17g}" for v in row])


def run_flow(config, out_dir=None, callback=None):
    """Run the flow until ``osc(u_t) <= tol_osc`` or ``max_steps``; returns ``(state, report)``.

    ``config`` is a :class:`FlowConfig` or its JSON dict. ``callback(state, osc)``
    is called after every step.
    """
    from . import analysis  # analysis depends on this module

    if isinstance(config, dict):
        config = FlowConfig.from_dict(config)
    t0 = time.perf_counter()
    op = make_operator(config.tau)
    grid = GridSpec.build(config.domain, h=config.h, n=None if config.h else config.n, box=config.box)
    state = init_state(
        grid, config.domain, config.domain_tilde, op, config.u0,
        f_shift=config.f_shift, cfl=config.cfl, tol_bc=config.tol_bc,
        max_newton=config.max_newton, threads=config.threads,
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    osc = math.inf
    converged = False
    while state.steps < config.max_steps:
        state = step(state)
        ut = _interior_ut(state)
        osc = float(ut.max() - ut.min())
        if callback is not None:
            callback(state, osc)
        if config.fields and config.every and out_dir and state.steps % config.every == 0:
            write_fields(state, os.path.join(out_dir, f"fields_{state.steps:08d}.csv"))
        if osc <= config.tol_osc:
            converged = True
            break
    ut = _interior_ut(state)
    C = float(np.median(ut))
    if config.fields and out_dir:
        write_fields(state, os.path.join(out_dir, "fields_final.csv"))
    report = FlowReport(
        C_inf=C,
        osc_ut=osc,
        steps=state.steps,
        wall_time=time.perf_counter() - t0,
        residual_sup=analysis.residual_sup(state, C, shift=config.f_shift),
        image_hausdorff=analysis.image_check(state),
        jacobian_min=analysis.jacobian_min(state),
        converged=converged,
        t_final=state.t,
        dt=state.dt_last,
        h=grid.h,
        init_mismatch=state.init_mismatch,
    )
    return state, report
