"""Post-hoc checks on a flow state: constancy of F(D^2 u), the gradient image, Jacobians."""

from __future__ import annotations

import csv

import numpy as np

from .geometry import hausdorff, sample_boundary
from .operator import eigvals_sym2
from .solver import FlowState, boundary_gradients, interior_hessians

__all__ = [
    "operator_values",
    "residual_sup",
    "image_check",
    "jacobian_min",
    "gradient_field",
    "graph_export",
    "load_graph",
    "compare_mod_constant",
]


def operator_values(state):
    """F(D^2 u) at the interior nodes (no test-hook shift)."""
    hxx, hxy, hyy = interior_hessians(state)
    lo, hi = eigvals_sym2(hxx, hxy, hyy)
    return state.op.value(np.stack([lo, hi], axis=-1))


def residual_sup(state, C, shift=0.0):
    """``sup |F(D^2 u) + shift - C|`` over interior nodes."""
    return float(np.max(np.abs(operator_values(state) + shift - C)))


def image_check(state, m=1024, target=None):
    """Hausdorff distance between ``Du`` on ``m`` samples of the boundary of Omega and ``m`` samples of the target.

    The gradient at a boundary sample is the solver's one-sided gradient at the
    nearest boundary node, extrapolated to the sample with the lagged Hessian.
    ``target`` defaults to ``state.omega_tilde``.
    """
    target = state.omega_tilde if target is None else target
    pts, _ = sample_boundary(state.omega, m)
    img = boundary_gradients(state, at=pts)
    tpts, _ = sample_boundary(target, m)
    return hausdorff(img, tpts)


def jacobian_min(state):
    """Smallest ``det D^2 u`` over interior nodes; ``<= 0`` flags a failed diffeomorphism."""
    hxx, hxy, hyy = interior_hessians(state)
    return float(np.min(hxx * hyy - hxy * hxy))


def gradient_field(state):
    """``(points, Du)`` at every active node: central differences inside, one-sided at the boundary."""
    grid = state.grid
    st = state.st
    uf = state.u.ravel()
    h = grid.h
    du = np.full((uf.size, 2), np.nan)
    i = st.inner
    du[i, 0] = (uf[i + 1] - uf[i - 1]) / (2 * h)
    du[i, 1] = (uf[i + st.nx] - uf[i - st.nx]) / (2 * h)
    du[st.bnd] = boundary_gradients(state)
    idx = np.flatnonzero(grid.active.ravel())
    return grid.points.reshape(-1, 2)[idx], du[idx]


def graph_export(state, path):
    """Write the graph ``{(x, Du(x))}`` as CSV rows ``x,y,Du_x,Du_y``."""
    pts, du = gradient_field(state)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "Du_x", "Du_y"])
        for p, g in zip(pts, du):
            w.writerow([f"{p[0]:.17g}", f"{p[1]:.17g}", f"{g[0]:.17g}", f"{g[1]:.17g}"])
    return path


def load_graph(path):
    """Inverse of :func:`graph_export`: array of shape ``(k, 4)``."""
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _field(u):
    if isinstance(u, FlowState):
        return u.u
    return np.asarray(u, dtype=float)


def compare_mod_constant(u1, u2):
    """``sup |(u1 - u2) - mean(u1 - u2)|`` over nodes where both fields are defined."""
    a, b = _field(u1), _field(u2)
    if a.shape != b.shape:
        raise ValueError(f"grid mismatch: {a.shape} vs {b.shape}")
    ok_a, ok_b = np.isfinite(a), np.isfinite(b)
    if not np.array_equal(ok_a, ok_b):
        raise ValueError("grid mismatch: active node sets differ")
    diff = (a - b)[ok_a]
    return float(np.max(np.abs(diff - diff.mean())))
