"""Sampled verification of the structural hypotheses on the operator family.

Each check draws spectra from a cone region

    {0 < lambda_1 <= ... <= lambda_n,  lambda_1 <= mu1,  lambda_n >= mu2}

and tests one hypothesis pointwise: permutation symmetry, monotonicity, the
two-sided trace bounds on ``sum dF/dlambda_i`` and ``sum dF/dlambda_i * lambda_i**2``,
concavity of F and of F*(s) = -F(1/s), and the envelope sandwich with its
mean-value inversion.

Sampling is split into fixed-size chunks. Chunk ``k`` of stream ``j`` gets its
own PCG64 generator seeded with ``SeedSequence(seed, spawn_key=(j, k))``, so
results depend only on ``(op, region, samples, seed)`` and never on the
number of worker threads.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import RangeError, RegionError
from .operator import Branch, invert_envelope

__all__ = [
    "ConeRegion",
    "CheckResult",
    "BoundsReport",
    "NegatedOperator",
    "PermutationBrokenOperator",
    "make_rng",
    "theoretical_bounds",
    "check_symmetry",
    "check_monotonicity",
    "check_trace_bounds",
    "check_concavity",
    "check_envelope_and_inversion",
    "verify_all",
    "report_json",
]

CHUNK = 1000
MAX_WITNESSES = 10

# stream ids keep the checks' random numbers independent of each other
_STREAM = {"symmetry": 1, "monotonicity": 2, "trace_bounds": 3, "concavity": 4, "envelope": 5}


def make_rng(seed, *key):
    """PCG64 generator for ``seed`` and a spawn key; the documented sampling source."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


@dataclass(frozen=True)
class ConeRegion:
    mu1: float
    mu2: float
    n: int
    lambda_cap: float = 100.0
    floor: float = 1e-3

    def __post_init__(self):
        if not (self.mu1 > 0 and self.mu2 > 0):
            raise RegionError("mu1 and mu2 must be positive")
        if self.n < 2:
            raise RegionError("n must be at least 2")
        if not self.lambda_cap >= self.mu2:
            raise RegionError("lambda_cap must be >= mu2")
        if not 0 < self.floor <= self.mu1:
            raise RegionError("need 0 < floor <= mu1")

    def sample(self, rng, m):
        """``m`` sorted spectra, shape ``(m, n)``."""
        lo = rng.uniform(self.floor, self.mu1, size=m)
        hi = rng.uniform(self.mu2, self.lambda_cap, size=m)
        a = np.minimum(lo, hi)
        b = np.maximum(lo, hi)
        mid = rng.uniform(size=(m, self.n - 2)) * (b - a)[:, None] + a[:, None]
        out = np.concatenate([lo[:, None], mid, hi[:, None]], axis=1)
        return np.sort(out, axis=1)

    def contains(self, spectra):
        s = np.atleast_2d(np.asarray(spectra, dtype=float))
        ordered = np.all(np.diff(s, axis=1) >= 0, axis=1)
        return (
            (s.shape[1] == self.n)
            & ordered
            & (s[:, 0] > 0)
            & (s[:, 0] <= self.mu1)
            & (s[:, -1] >= self.mu2)
        )

    def validate(self, spectra):
        s = np.atleast_2d(np.asarray(spectra, dtype=float))
        if s.shape[1] != self.n:
            raise RegionError(f"spectra have dimension {s.shape[1]}, region has n={self.n}")
        inside = self.contains(s)
        if not np.all(inside):
            k = int(np.flatnonzero(~inside)[0])
            raise RegionError(f"spectrum {s[k].tolist()} is outside the cone region {self.describe()}")
        return s

    def describe(self):
        return {"mu1": self.mu1, "mu2": self.mu2, "n": self.n, "lambda_cap": self.lambda_cap}


class NegatedOperator:
    """Negative control: -F. Fails monotonicity and concavity."""

    def __init__(self, op):
        self.base = op
        self.branch = op.branch

    def g(self, t):
        return -self.base.g(t)

    def dg(self, t):
        return -self.base.dg(t)

    def value(self, lams):
        return -self.base.value(lams)

    def grad(self, lams):
        return -self.base.grad(lams)

    def dual_value(self, lams):
        return -self.base.dual_value(lams)

    def describe(self):
        return {**self.base.describe(), "negated": True}


class PermutationBrokenOperator:
    """Negative control: adds 0.1 * (first entry as given) before summing."""

    def __init__(self, op):
        self.base = op
        self.branch = op.branch

    def g(self, t):
        return self.base.g(t)

    def dg(self, t):
        return self.base.dg(t)

    def value(self, lams):
        lams = np.asarray(lams, dtype=float)
        return self.base.value(lams) + 0.1 * lams[..., 0]

    def grad(self, lams):
        return self.base.grad(lams)

    def dual_value(self, lams):
        return self.base.dual_value(lams)

    def describe(self):
        return {**self.base.describe(), "broken_symmetry": True}


@dataclass
class CheckResult:
    name: str
    passed: bool
    samples: int
    worst: float = 0.0
    witnesses: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


@dataclass
class BoundsReport:
    empirical_min_sumF: float
    empirical_max_sumF: float
    empirical_min_sumFl2: float
    empirical_max_sumFl2: float
    sumF_lower: float | None
    sumF_upper: float | None
    sumFl2_lower: float | None
    sumFl2_upper: float | None
    theoretical_lambda: float | None
    theoretical_Lambda: float | None
    samples: int
    violations: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations

    def to_dict(self):
        return {**asdict(self), "passed": self.passed}


def theoretical_bounds(op, mu1, mu2, n):
    """Closed-form ``(sumF_lower, sumF_upper, sumFl2_lower, sumFl2_upper)``.

    On TAU_LOG / TAU_ARCTAN these are the explicit constants of the bound
    chains; HARMONIC and ARCTAN use ``g' < 1`` and ``t**2 g' < 1``; LOG has no
    uniform upper bounds (``None``). The lower bounds ``g'(mu1)`` and
    ``mu2**2 g'(mu2)`` hold on every branch since ``g'`` decreases and
    ``t**2 g'`` increases. Negative controls are judged against the bounds of
    the operator they wrap.
    """
    op = getattr(op, "base", op)
    a, b = op.a, op.b
    lower1 = float(op.dg(mu1))
    lower2 = float(mu2**2 * op.dg(mu2))
    if op.branch is Branch.TAU_LOG:
        upper1 = 2 * n * b / ((a - b) * (a + b))
        upper2 = 2 * n * b
        lower1 = 2 * b / ((mu1 + a - b) * (mu1 + a + b))
        lower2 = 2 * b * mu2**2 / ((mu2 + a - b) * (mu2 + a + b))
    elif op.branch is Branch.TAU_ARCTAN:
        upper1 = 2 * n * b / ((a - b) ** 2 + (a + b) ** 2)
        upper2 = n * b
        lower1 = 2 * b / ((mu1 + a - b) ** 2 + (mu1 + a + b) ** 2)
        lower2 = 2 * b * mu2**2 / ((mu2 + a - b) ** 2 + (mu2 + a + b) ** 2)
    elif op.branch in (Branch.HARMONIC, Branch.ARCTAN):
        upper1 = upper2 = float(n)
    else:
        upper1 = upper2 = None
    return lower1, upper1, lower2, upper2


# -- chunked driver --


def _chunks(samples):
    k = 0
    start = 0
    while start < samples:
        m = min(CHUNK, samples - start)
        yield k, start, m
        k += 1
        start += m


def _run_chunks(fn, region, samples, seed, stream, threads, spectra=None):
    """Apply ``fn(spectra, rng, offset)`` per chunk; results in chunk order."""
    if spectra is not None:
        s = region.validate(spectra)
        return [fn(s, make_rng(seed, _STREAM[stream], 0), 0)]
    if samples < 1:
        raise ValueError("samples must be >= 1")

    def work(item):
        k, start, m = item
        rng = make_rng(seed, _STREAM[stream], k)
        s = region.sample(rng, m)
        return fn(s, rng, start)

    items = list(_chunks(samples))
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(work, items))
    return [work(it) for it in items]


def _witness(idx, s, **info):
    w = {"index": int(idx), "spectrum": [float(x) for x in s]}
    w.update({k: float(v) for k, v in info.items()})
    return w


def _merge(parts):
    worst = max((p["worst"] for p in parts), default=0.0)
    wit = [w for p in parts for w in p["witnesses"]]
    return worst, wit[:MAX_WITNESSES], len(wit)


# -- checks --


def check_symmetry(op, region, samples=1000, seed=0, threads=1, spectra=None, tol=1e-12):
    """F(s) against F(permuted s) and F(reversed s) for every sample."""

    def fn(s, rng, off):
        perm = rng.permuted(s, axis=1)
        f0 = op.value(s)
        disc = np.maximum(np.abs(op.value(perm) - f0), np.abs(op.value(s[:, ::-1]) - f0))
        scale = np.maximum(1.0, np.abs(f0))
        bad = np.flatnonzero(disc > tol * scale)
        return {
            "worst": float(np.max(disc)) if disc.size else 0.0,
            "witnesses": [_witness(off + i, s[i], discrepancy=disc[i]) for i in bad[:MAX_WITNESSES]],
        }

    parts = _run_chunks(fn, region, samples, seed, "symmetry", threads, spectra)
    worst, wit, nbad = _merge(parts)
    n = len(spectra) if spectra is not None else samples
    return CheckResult("symmetry", nbad == 0, n, worst, wit, {"violations": nbad})


def check_monotonicity(op, region, samples=1000, seed=0, threads=1, spectra=None):
    """Every component of dF/dlambda is strictly positive."""

    def fn(s, rng, off):
        gr = op.grad(s)
        mins = np.min(gr, axis=1)
        bad = np.flatnonzero(~(mins > 0))
        return {
            "worst": float(-np.min(mins)),
            "witnesses": [_witness(off + i, s[i], min_grad=mins[i]) for i in bad[:MAX_WITNESSES]],
            "min": float(np.min(mins)),
        }

    parts = _run_chunks(fn, region, samples, seed, "monotonicity", threads, spectra)
    _, wit, nbad = _merge(parts)
    n = len(spectra) if spectra is not None else samples
    mn = min(p["min"] for p in parts)
    return CheckResult("monotonicity", nbad == 0, n, mn, wit, {"violations": nbad})


def check_trace_bounds(op, region, samples=1000, seed=0, threads=1, spectra=None, rtol=1e-12):
    """Trace bound chains on every sample; returns a :class:`BoundsReport`.

    Checked per spectrum (``D = g'``)::

        upper1 >= sum D(l_i)        >= D(l_1)         >= D(mu1)        (= lower1)
        upper2 >= sum D(l_i) l_i^2  >= D(l_n) l_n^2   >= D(mu2) mu2^2  (= lower2)

    Missing closed-form upper bounds are skipped.
    """
    n = region.n
    lower1, upper1, lower2, upper2 = theoretical_bounds(op, region.mu1, region.mu2, n)
    d_mu1 = float(op.dg(region.mu1))
    d_mu2 = float(op.dg(region.mu2) * region.mu2**2)

    def leq(x, y):
        return x <= y + rtol * np.maximum(1.0, np.abs(y))

    def fn(s, rng, off):
        d = op.grad(s)
        sum1 = d.sum(axis=1)
        sum2 = (d * s * s).sum(axis=1)
        first = d[:, 0]
        last = d[:, -1] * s[:, -1] ** 2
        ok = leq(first, sum1) & leq(d_mu1, first) & leq(lower1, d_mu1)
        ok &= leq(last, sum2) & leq(d_mu2, last) & leq(lower2, d_mu2)
        if upper1 is not None:
            ok &= leq(sum1, upper1)
        if upper2 is not None:
            ok &= leq(sum2, upper2)
        bad = np.flatnonzero(~ok)
        return {
            "worst": 0.0,
            "witnesses": [
                _witness(off + i, s[i], sumF=sum1[i], sumFl2=sum2[i]) for i in bad[:MAX_WITNESSES]
            ],
            "range": (sum1.min(), sum1.max(), sum2.min(), sum2.max()),
        }

    parts = _run_chunks(fn, region, samples, seed, "trace_bounds", threads, spectra)
    _, wit, _ = _merge(parts)
    r = np.array([p["range"] for p in parts])
    lowers = [x for x in (lower1, lower2) if x is not None]
    uppers = [x for x in (upper1, upper2) if x is not None]
    return BoundsReport(
        empirical_min_sumF=float(r[:, 0].min()),
        empirical_max_sumF=float(r[:, 1].max()),
        empirical_min_sumFl2=float(r[:, 2].min()),
        empirical_max_sumFl2=float(r[:, 3].max()),
        sumF_lower=lower1,
        sumF_upper=upper1,
        sumFl2_lower=lower2,
        sumFl2_upper=upper2,
        theoretical_lambda=min(lowers) if lowers else None,
        theoretical_Lambda=max(uppers) if len(uppers) == 2 else None,
        samples=len(spectra) if spectra is not None else samples,
        violations=wit,
    )


def _concavity_steps(s, xi):
    """Step ``h = 1e-3 (1 + |s|_inf)`` halved until ``s -+ h xi`` stays well inside the cone."""
    h = 1e-3 * (1.0 + np.max(s, axis=-1, keepdims=True))
    h = np.broadcast_to(h, xi.shape[:-1] + (1,)).copy()
    floor = 0.5 * np.min(s, axis=-1, keepdims=True)
    for _ in range(80):
        lo = np.min(s - h * np.abs(xi), axis=-1, keepdims=True)
        bad = lo < floor
        if not np.any(bad):
            break
        h = np.where(bad, 0.5 * h, h)
    return h


def check_concavity(op, region, samples=1000, directions_per_sample=8, seed=0, threads=1,
                    spectra=None, tol=1e-10):
    """Second central differences of F and F* along random directions are <= tol (1 + |F|)."""
    k = int(directions_per_sample)

    def fn(s, rng, off):
        xi = rng.standard_normal((s.shape[0], k, s.shape[1]))
        xi /= np.linalg.norm(xi, axis=-1, keepdims=True)
        base = np.broadcast_to(s[:, None, :], xi.shape)
        h = _concavity_steps(base, xi)
        out = {"worst": -math.inf, "witnesses": []}
        for label, f in (("F", op.value), ("F*", op.dual_value)):
            f0 = f(s)[:, None]
            d2 = f(base + h * xi) + f(base - h * xi) - 2.0 * f0
            excess = d2 - tol * (1.0 + np.abs(f0))
            out["worst"] = max(out["worst"], float(np.max(d2 / (1.0 + np.abs(f0)))))
            bad_rows = np.flatnonzero(np.any(excess > 0, axis=1))
            for i in bad_rows[:MAX_WITNESSES]:
                j = int(np.argmax(excess[i]))
                w = _witness(off + i, s[i], second_difference=d2[i, j], step=h[i, j, 0])
                w["function"] = label
                w["direction"] = [float(x) for x in xi[i, j]]
                out["witnesses"].append(w)
        return out

    parts = _run_chunks(fn, region, samples, seed, "concavity", threads, spectra)
    worst, wit, nbad = _merge(parts)
    n = len(spectra) if spectra is not None else samples
    return CheckResult("concavity", nbad == 0, n, worst, wit,
                       {"violations": nbad, "directions_per_sample": k})


def check_envelope_and_inversion(op, region, samples=1000, seed=0, threads=1, spectra=None,
                                 probes=8):
    """Envelope sandwich, mean-value point, and the implications f(t) <= F => t <= t1.

    With ``f = n g`` the sandwich reads ``n g(l_1) <= F(s) <= n g(l_n)``; the
    mean-value point ``t1 = invert_envelope(F(s), l_1, l_n)`` must lie in
    ``[l_1, l_n]`` and solve ``n g(t1) = F(s)`` to 1e-10. Probe values ``t``
    around ``t1`` test both implications (here ``t2 == t1``).
    """
    n = region.n

    def fn(s, rng, off):
        F = op.value(s)
        slack = 1e-12 * (1.0 + np.abs(F))
        lo, hi = s[:, 0], s[:, -1]
        sandwich = (n * op.g(lo) <= F + slack) & (F <= n * op.g(hi) + slack)
        witnesses = []
        try:
            t1 = invert_envelope(op, F, lo, hi, n=n)
        except RangeError as exc:
            idx = np.flatnonzero(~sandwich)
            i = int(idx[0]) if idx.size else 0
            w = _witness(off + i, s[i], value=F[i])
            w["error"] = str(exc)
            return {"worst": math.inf, "witnesses": [w]}
        resid = np.abs(n * op.g(t1) - F)
        inside = (t1 >= lo) & (t1 <= hi)
        t = t1[:, None] * np.exp(rng.uniform(-0.7, 0.7, size=(s.shape[0], probes)))
        ft = n * op.g(t)
        tt = 1e-9 * (1.0 + t1[:, None])
        below_ok = np.where(ft < F[:, None] - slack[:, None], t <= t1[:, None] + tt, True)
        above_ok = np.where(ft > F[:, None] + slack[:, None], t >= t1[:, None] - tt, True)
        implication = np.all(below_ok & above_ok, axis=1)
        ok = sandwich & inside & (resid <= 1e-10) & implication
        for i in np.flatnonzero(~ok)[:MAX_WITNESSES]:
            witnesses.append(_witness(off + i, s[i], value=F[i], t1=t1[i], residual=resid[i]))
        return {"worst": float(np.max(resid)), "witnesses": witnesses}

    parts = _run_chunks(fn, region, samples, seed, "envelope", threads, spectra)
    worst, wit, nbad = _merge(parts)
    cnt = len(spectra) if spectra is not None else samples
    return CheckResult("envelope_inversion", nbad == 0, cnt, worst, wit, {"violations": nbad})


def verify_all(op, region, samples=10_000, seed=42, threads=1, directions_per_sample=8):
    """Run every check; returns a JSON-ready dict with an overall ``passed`` flag."""
    sym = check_symmetry(op, region, samples, seed, threads)
    mono = check_monotonicity(op, region, samples, seed, threads)
    bounds = check_trace_bounds(op, region, samples, seed, threads)
    conc = check_concavity(op, region, samples, directions_per_sample, seed, threads)
    env = check_envelope_and_inversion(op, region, samples, seed, threads)
    checks = {
        "symmetry": sym.to_dict(),
        "monotonicity": mono.to_dict(),
        "trace_bounds": bounds.to_dict(),
        "concavity": conc.to_dict(),
        "envelope_inversion": env.to_dict(),
    }
    return {
        "operator": op.describe(),
        "region": region.describe(),
        "samples": samples,
        "seed": seed,
        "checks": checks,
        "passed": all(c["passed"] for c in checks.values()),
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def report_json(report):
    """Canonical serialization: sorted keys, repr floats, non-finite as strings."""
    return json.dumps(_jsonable(report), sort_keys=True, indent=2)
