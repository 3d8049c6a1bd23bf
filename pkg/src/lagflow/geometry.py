"""Uniformly convex planar domains described by signed-distance defining functions.

Every domain exposes the same small surface, working on arrays of points with
the coordinate on the last axis:

``value(x)``        defining function h (negative inside, zero on the boundary)
``gradient(x)``     gradient of h (unit length for Disk and Ellipse)
``project(x)``      closest boundary point
``sample(m)``       m boundary points, quasi-uniform in arc length, with normals

Disk and Ellipse use the exact signed distance and are defined on the whole
plane. LevelSet wraps a user callback on a bounding box and extends it outside
the box by the distance to the box, so evaluation never leaves the box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = [
    "Disk",
    "Ellipse",
    "LevelSet",
    "domain_from_dict",
    "defining_value",
    "gradient",
    "outward_normal",
    "project_to_boundary",
    "contains",
    "sample_boundary",
    "moment_ellipse",
    "check_uniform_convexity",
    "check_unit_gradient",
    "hausdorff",
]


def _pts(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ValueError(f"points must have a trailing axis of length 2, got {x.shape}")
    return x


def _unit(v):
    nrm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(nrm > 0, nrm, 1.0)


def _arclength_resample(curve, m):
    """Resample a closed polyline (k, 2) at m arc-length-equispaced points."""
    closed = np.vstack([curve, curve[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    target = np.arange(m) * (s[-1] / m)
    return np.column_stack([np.interp(target, s, closed[:, 0]), np.interp(target, s, closed[:, 1])])


class _Domain:
    def contains(self, x):
        return self.value(x) < 0.0

    def value_and_gradient(self, x):
        return self.value(x), self.gradient(x)

    def outward_normal(self, xb):
        return _unit(self.gradient(xb))

    def diameter(self):
        pts, _ = self.sample(256)
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        return float(d.max())


@dataclass(frozen=True)
class Disk(_Domain):
    center: tuple = (0.0, 0.0)
    radius: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def value(self, x):
        x = _pts(x)
        return np.linalg.norm(x - np.asarray(self.center), axis=-1) - self.radius

    def gradient(self, x):
        x = _pts(x)
        v = x - np.asarray(self.center)
        nrm = np.linalg.norm(v, axis=-1, keepdims=True)
        safe = np.where(nrm > 0, nrm, 1.0)
        return np.where(nrm > 0, v / safe, np.array([1.0, 0.0]))

    def project(self, x):
        return np.asarray(self.center) + self.radius * self.gradient(x)

    def sample(self, m, phase=0.0):
        th = phase + 2.0 * math.pi * np.arange(m) / m
        nrm = np.column_stack([np.cos(th), np.sin(th)])
        return np.asarray(self.center) + self.radius * nrm, nrm

    def smooth_defining(self, x):
        x = _pts(x)
        r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1)
        return (r2 - self.radius**2) / (2.0 * self.radius)

    def bounding_box(self):
        cx, cy = self.center
        r = self.radius
        return (cx - r, cx + r, cy - r, cy + r)

    def diameter(self):
        return 2.0 * self.radius

    @property
    def convexity_modulus(self):
        return 1.0 / self.radius

    def curvature(self, xb):
        return np.full(np.shape(xb)[:-1], 1.0 / self.radius)

    def area(self):
        return math.pi * self.radius**2

    def centroid(self):
        return np.asarray(self.center)

    def covariance(self):
        return np.eye(2) * self.radius**2 / 4.0

    def describe(self):
        return {"kind": "disk", "center": list(self.center), "radius": self.radius}


def _ellipse_closest_first_quadrant(e0, e1, y0, y1, max_iter=100):
    """Closest point on x0^2/e0^2 + x1^2/e1^2 = 1 for y0, y1 >= 0 and e0 >= e1.

    Root of G(t) = (e0 y0/(t+e0^2))^2 + (e1 y1/(t+e1^2))^2 - 1 on t > -e1^2 by
    Newton started at t0 = -e1^2 + e1 y1 where G(t0) >= 0 (in the shifted
    variable s = t + e1^2). G is convex and
    decreasing there, so the iterates increase monotonically to the root.
    Points on the major axis (y1 == 0) are handled in closed form.
    """
    a0 = e0 * y0
    a1 = e1 * y1
    d = e0 * e0 - e1 * e1
    tiny = 1e-13 * e0
    gen = (y1 > tiny) & (y0 > tiny)
    # iterate on s = t + e1^2 so points near the major axis keep full precision;
    # off the generic set s is a dummy kept away from the poles
    sv = np.where(gen, a1, 1.0)
    for _ in range(max_iter):
        r0 = a0 / (sv + d)
        r1 = a1 / sv
        G = r0 * r0 + r1 * r1 - 1.0
        dG = -2.0 * (r0 * r0 / (sv + d) + r1 * r1 / sv)
        step = np.where(gen & (dG < 0), -G / np.where(dG < 0, dG, -1.0), 0.0)
        step = np.maximum(step, 0.0)
        sv = sv + step
        if np.all(step <= 1e-16 * sv):
            break
    x0 = np.where(gen, e0 * e0 * y0 / (sv + d), 0.0)
    x1 = np.where(gen, e1 * e1 * y1 / sv, 0.0)
    # y0 == 0, y1 > 0: top of the minor axis
    top = (y0 <= tiny) & (y1 > tiny)
    x0 = np.where(top, 0.0, x0)
    x1 = np.where(top, e1, x1)
    # y1 == 0: on the major axis
    axis = y1 <= tiny
    thresh = (e0 * e0 - e1 * e1) / e0
    inner = axis & (y0 < thresh)
    with np.errstate(invalid="ignore", divide="ignore"):
        xi = e0 * e0 * y0 / (e0 * e0 - e1 * e1)
        zi = e1 * np.sqrt(np.maximum(1.0 - (xi / e0) ** 2, 0.0))
    x0 = np.where(inner, xi, np.where(axis, e0, x0))
    x1 = np.where(inner, zi, np.where(axis, 0.0, x1))
    return x0, x1


@dataclass(frozen=True)
class Ellipse(_Domain):
    """Ellipse with semi-axes ``(p, q)`` along the local axes, rotated by ``rotation``."""

    center: tuple = (0.0, 0.0)
    semi_axes: tuple = (1.0, 1.0)
    rotation: float = 0.0

    def __post_init__(self):
        p, q = (float(v) for v in self.semi_axes)
        if not (p > 0 and q > 0):
            raise ValueError("semi-axes must be positive")
        object.__setattr__(self, "semi_axes", (p, q))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def _R(self):
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return np.array([[c, -s], [s, c]])

    def _local(self, x):
        return (_pts(x) - np.asarray(self.center)) @ self._R

    def _global(self, z):
        return z @ self._R.T + np.asarray(self.center)

    def _closest_local(self, z):
        p, q = self.semi_axes
        swap = q > p
        e0, e1 = (q, p) if swap else (p, q)
        u0 = z[..., 1] if swap else z[..., 0]
        u1 = z[..., 0] if swap else z[..., 1]
        x0, x1 = _ellipse_closest_first_quadrant(e0, e1, np.abs(u0), np.abs(u1))
        x0 = np.copysign(x0, u0)
        x1 = np.copysign(x1, u1)
        n0, n1 = x0 / (e0 * e0), x1 / (e1 * e1)
        if swap:
            x0, x1, n0, n1 = x1, x0, n1, n0
        c = np.stack([x0, x1], axis=-1)
        return c, _unit(np.stack([n0, n1], axis=-1))

    def value(self, x):
        z = self._local(x)
        c, _ = self._closest_local(z)
        p, q = self.semi_axes
        Q = (z[..., 0] / p) ** 2 + (z[..., 1] / q) ** 2
        return np.where(Q < 1.0, -1.0, 1.0) * np.linalg.norm(z - c, axis=-1)

    def gradient(self, x):
        z = self._local(x)
        _, n = self._closest_local(z)
        return n @ self._R.T

    def value_and_gradient(self, x):
        """Both at the cost of one closest-point search."""
        z = self._local(x)
        c, n = self._closest_local(z)
        p, q = self.semi_axes
        Q = (z[..., 0] / p) ** 2 + (z[..., 1] / q) ** 2
        val = np.where(Q < 1.0, -1.0, 1.0) * np.linalg.norm(z - c, axis=-1)
        return val, n @ self._R.T

    def project(self, x):
        c, _ = self._closest_local(self._local(x))
        return self._global(c)

    def sample(self, m, dense=16384):
        p, q = self.semi_axes
        th = 2.0 * math.pi * np.arange(dense) / dense
        curve = np.column_stack([p * np.cos(th), q * np.sin(th)])
        loc = _arclength_resample(curve, m)
        # snap back onto the ellipse along the parameter angle
        ang = np.arctan2(loc[:, 1] / q, loc[:, 0] / p)
        loc = np.column_stack([p * np.cos(ang), q * np.sin(ang)])
        nrm = _unit(np.column_stack([loc[:, 0] / p**2, loc[:, 1] / q**2]))
        return self._global(loc), nrm @ self._R.T

    def smooth_defining(self, x):
        z = self._local(x)
        p, q = self.semi_axes
        return 0.5 * min(p, q) * ((z[..., 0] / p) ** 2 + (z[..., 1] / q) ** 2 - 1.0)

    def bounding_box(self):
        p, q = self.semi_axes
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        wx = math.hypot(p * c, q * s)
        wy = math.hypot(p * s, q * c)
        cx, cy = self.center
        return (cx - wx, cx + wx, cy - wy, cy + wy)

    def diameter(self):
        return 2.0 * max(self.semi_axes)

    @property
    def convexity_modulus(self):
        p, q = self.semi_axes
        return min(p, q) / max(p, q) ** 2

    def curvature(self, xb):
        z = self._local(xb)
        p, q = self.semi_axes
        # kappa = p q / (p^2 sin^2 t + q^2 cos^2 t)^{3/2} with z = (p cos t, q sin t)
        ct, st = z[..., 0] / p, z[..., 1] / q
        return p * q / (p * p * st * st + q * q * ct * ct) ** 1.5

    def area(self):
        p, q = self.semi_axes
        return math.pi * p * q

    def centroid(self):
        return np.asarray(self.center)

    def covariance(self):
        p, q = self.semi_axes
        R = self._R
        return R @ np.diag([p * p, q * q]) @ R.T / 4.0

    def describe(self):
        return {
            "kind": "ellipse",
            "center": list(self.center),
            "semi_axes": list(self.semi_axes),
            "rotation": self.rotation,
        }


@dataclass(frozen=True, eq=False)
class LevelSet(_Domain):
    """Domain ``{func < 0}`` inside ``bounding_box = (xmin, xmax, ymin, ymax)``.

    ``func`` must be pure, vectorized over a trailing coordinate axis, and
    behave like a signed distance near the boundary. ``convexity_modulus`` is
    the user's lower bound on boundary curvature.
    """

    func: object
    bounding_box_: tuple
    convexity_modulus: float
    grad: object = None
    center: tuple = field(default=None)
    fd_step: float = 1e-6

    def __post_init__(self):
        if not self.convexity_modulus > 0:
            raise ValueError("convexity_modulus must be positive")
        if self.center is None:
            x0, x1, y0, y1 = self.bounding_box_
            object.__setattr__(self, "center", (0.5 * (x0 + x1), 0.5 * (y0 + y1)))

    def bounding_box(self):
        return tuple(self.bounding_box_)

    def _clamp(self, x):
        x0, x1, y0, y1 = self.bounding_box_
        lo = np.array([x0, y0])
        hi = np.array([x1, y1])
        xc = np.clip(x, lo, hi)
        return xc, np.linalg.norm(x - xc, axis=-1)

    def value(self, x):
        x = _pts(x)
        xc, out = self._clamp(x)
        return np.asarray(self.func(xc), dtype=float) + out

    def gradient(self, x):
        x = _pts(x)
        if self.grad is not None:
            xc, _ = self._clamp(x)
            return np.asarray(self.grad(xc), dtype=float)
        e = self.fd_step
        gx = (self.value(x + [e, 0.0]) - self.value(x - [e, 0.0])) / (2 * e)
        gy = (self.value(x + [0.0, e]) - self.value(x - [0.0, e])) / (2 * e)
        return np.stack([gx, gy], axis=-1)

    def project(self, x, tol=1e-13, max_iter=60):
        x = _pts(x).astype(float).copy()
        for _ in range(max_iter):
            h = self.value(x)
            if np.all(np.abs(h) <= tol):
                break
            g = self.gradient(x)
            g2 = np.sum(g * g, axis=-1, keepdims=True)
            x = x - h[..., None] * g / np.where(g2 > 0, g2, 1.0)
        return x

    def _ray_radius(self, th):
        c = np.asarray(self.center)
        d = np.column_stack([np.cos(th), np.sin(th)])
        x0, x1, y0, y1 = self.bounding_box_
        lo = np.zeros(len(th))
        hi = np.full(len(th), math.hypot(x1 - x0, y1 - y0))
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            inside = self.value(c + mid[:, None] * d) < 0
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        return c + (0.5 * (lo + hi))[:, None] * d

    def sample(self, m, dense=4096):
        th = 2.0 * math.pi * np.arange(dense) / dense
        curve = self._ray_radius(th)
        pts = self.project(_arclength_resample(curve, m))
        return pts, self.outward_normal(pts)

    def smooth_defining(self, x):
        return self.value(x)

    def curvature(self, xb):
        """Discrete curvature of the boundary through ``xb`` (circumscribed circles)."""
        pts = np.asarray(xb, dtype=float)
        a = np.roll(pts, 1, axis=0)
        c = np.roll(pts, -1, axis=0)
        ab = np.linalg.norm(pts - a, axis=1)
        bc = np.linalg.norm(c - pts, axis=1)
        ca = np.linalg.norm(a - c, axis=1)
        cross = (pts[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (pts[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        return 2.0 * np.abs(cross) / (ab * bc * ca)

    def _quadrature(self, k=400):
        x0, x1, y0, y1 = self.bounding_box_
        xs = x0 + (np.arange(k) + 0.5) * (x1 - x0) / k
        ys = y0 + (np.arange(k) + 0.5) * (y1 - y0) / k
        X, Y = np.meshgrid(xs, ys)
        P = np.stack([X, Y], axis=-1)
        w = (x1 - x0) * (y1 - y0) / k**2
        return P[self.value(P) < 0], w

    def area(self):
        P, w = self._quadrature()
        return len(P) * w

    def centroid(self):
        P, _ = self._quadrature()
        return P.mean(axis=0)

    def covariance(self):
        P, _ = self._quadrature()
        return np.cov(P.T, bias=True)

    def describe(self):
        return {
            "kind": "levelset",
            "bounding_box": list(self.bounding_box_),
            "convexity_modulus": self.convexity_modulus,
        }


def domain_from_dict(spec):
    """Disk or Ellipse from its JSON description.

    >>> domain_from_dict({"kind": "disk", "center": [0, 0], "radius": 1.0})
    Disk(center=(0.0, 0.0), radius=1.0)
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"domain must be an object with a 'kind' field, got {spec!r}")
    kind = spec["kind"]
    try:
        if kind == "disk":
            return Disk(tuple(spec.get("center", (0.0, 0.0))), float(spec["radius"]))
        if kind == "ellipse":
            return Ellipse(
                tuple(spec.get("center", (0.0, 0.0))),
                tuple(spec["semi_axes"]),
                float(spec.get("rotation", 0.0)),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad {kind} domain {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown domain kind {kind!r} (expected 'disk' or 'ellipse')")


def defining_value(d, x):
    return d.value(x)


def gradient(d, x):
    return d.gradient(x)


def outward_normal(d, xb):
    return d.outward_normal(xb)


def project_to_boundary(d, x):
    return d.project(x)


def contains(d, x):
    return d.contains(x)


def sample_boundary(d, m):
    """``m`` boundary points (quasi-uniform in arc length) and their outward normals."""
    if m < 4:
        raise ValueError(f"need at least 4 boundary samples, got {m}")
    return d.sample(int(m))


def moment_ellipse(d):
    """``(centroid, S)`` of the ellipse ``{x: (x-c)^T S^{-1} (x-c) <= 1}``.

    Its second moments match those of ``d`` and it is rescaled to the same
    area. For a Disk or Ellipse this is the domain itself.
    """
    c = np.asarray(d.centroid(), dtype=float)
    S = 4.0 * np.asarray(d.covariance(), dtype=float)
    area_S = math.pi * math.sqrt(np.linalg.det(S))
    S *= d.area() / area_S
    return c, S


def check_uniform_convexity(d, m=512, modulus=None):
    """``(passed, min_curvature)`` over ``m`` sampled boundary points."""
    pts, _ = sample_boundary(d, m)
    k = float(np.min(d.curvature(pts)))
    target = d.convexity_modulus if modulus is None else modulus
    return k >= target * (1.0 - 1e-9), k


def check_unit_gradient(d, m=2000, seed=0, lo=0.9, hi=1.1):
    """``(passed, min |grad h|, max |grad h|)`` in a collar of width 0.2 diameter."""
    rng = np.random.default_rng(seed)
    pts, nrm = sample_boundary(d, m)
    off = rng.uniform(-0.1, 0.1, size=m) * d.diameter()
    x = pts + off[:, None] * nrm
    g = np.linalg.norm(d.gradient(x), axis=-1)
    return bool(np.all((g >= lo) & (g <= hi))), float(g.min()), float(g.max())


def hausdorff(a, b):
    """Symmetric Hausdorff distance between two point sets (brute force)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))
