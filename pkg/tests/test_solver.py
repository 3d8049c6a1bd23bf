import dataclasses
import json
import math

import numpy as np
import pytest

from lagflow.analysis import compare_mod_constant, residual_sup
from lagflow.errors import BoundaryNewtonError, ConfigError, ConvexityLossError
from lagflow.geometry import Disk, Ellipse
from lagflow.operator import eval_matrix, make_operator
from lagflow.solver import (
    FlowConfig,
    GridSpec,
    InitialData,
    auto_quadratic,
    hessian_at,
    init_state,
    interior_hessians,
    run_flow,
    stability_dt,
    step,
)

HALF_PI = math.pi / 2


def make_state(omega=Disk(), omega_tilde=Disk(), tau=HALF_PI, n=32, h=None, u0=None, **kw):
    grid = GridSpec.build(omega, h=h, n=None if h else n)
    return init_state(grid, omega, omega_tilde, make_operator(tau), u0 or InitialData(), **kw)


def with_field(state, f):
    u = np.where(state.grid.active, f(state.grid.points), np.nan)
    return dataclasses.replace(state, u=u)


# -- grid --


@pytest.mark.parametrize("omega", [Disk(), Ellipse((0.3, 0.1), (1.0, 2.0), 0.7)])
def test_grid_classification(omega):
    grid = GridSpec.build(omega, n=40)
    act, inn, bnd = grid.active, grid.interior, grid.boundary
    assert not np.any(inn & bnd)
    np.testing.assert_array_equal(act, inn | bnd)
    assert np.all(omega.value(grid.points[act]) < 0)
    iy, ix = np.nonzero(inn)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            assert np.all(act[iy + dy, ix + dx])
    by, bx = np.nonzero(bnd)
    assert np.all(act[by, bx - 1] | act[by, bx + 1])
    assert np.all(act[by - 1, bx] | act[by + 1, bx])


def test_grid_spacing_from_n():
    grid = GridSpec.build(Disk(), n=64)
    assert grid.h == pytest.approx(2.0 / 63, rel=1e-15)
    with pytest.raises(ConfigError):
        GridSpec.build(Disk(), n=3)
    with pytest.raises(ConfigError):
        GridSpec.build(Disk(), h=1.5)


# -- initial data --


def test_auto_quadratic_examples():
    M, b = auto_quadratic(Disk(), Disk())
    np.testing.assert_allclose(M, np.eye(2), atol=1e-14)
    np.testing.assert_allclose(b, 0, atol=1e-14)
    M, _ = auto_quadratic(Disk(), Disk(radius=2.0))
    np.testing.assert_allclose(M, 2 * np.eye(2), atol=1e-14)
    M, b = auto_quadratic(Ellipse((0, 0), (1, 2), 0), Ellipse((0, 0), (3, 1), 0))
    np.testing.assert_allclose(M, np.diag([3.0, 0.5]), atol=1e-13)
    np.testing.assert_allclose(b, 0, atol=1e-13)


def test_auto_quadratic_maps_boundary_onto_target():
    om, ot = Ellipse((1, -1), (1, 2), 0.3), Ellipse((0.5, 2), (3, 1), -0.4)
    M, b = auto_quadratic(om, ot)
    np.testing.assert_allclose(M, M.T, atol=1e-14)
    assert np.linalg.eigvalsh(M)[0] > 0
    pts, _ = om.sample(500)
    assert np.max(np.abs(ot.value(pts @ M.T + b))) <= 1e-9


def test_init_state_rejects_bad_initial_data():
    with pytest.raises(ConfigError):
        make_state(u0=InitialData("quadratic", M=[[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(ConfigError):
        make_state(u0=InitialData("quadratic", M=[[10.0, 0.0], [0.0, 10.0]]))  # image misses by 9 > 2
    saddle = InitialData("function", func=lambda x: 0.5 * x[..., 0] ** 2 - 0.05 * x[..., 1] ** 2)
    with pytest.raises(ConvexityLossError):
        make_state(u0=saddle)


def test_init_state_reports_mismatch():
    s = make_state(u0=InitialData("quadratic", M=[[1.2, 0.0], [0.0, 1.2]]))
    assert s.init_mismatch == pytest.approx(0.2, abs=1e-9)
    assert make_state().init_mismatch <= 1e-12


# -- Hessian --


def test_hessian_at_quadratics():
    s = make_state(n=17)
    node = tuple(np.argwhere(s.grid.interior)[10])
    np.testing.assert_allclose(hessian_at(s, node), np.eye(2), atol=1e-10)
    q = with_field(s, lambda p: 0.5 * (3 * p[..., 0] ** 2 + 2 * p[..., 0] * p[..., 1] + 5 * p[..., 1] ** 2))
    for node in np.argwhere(s.grid.interior)[::7]:
        np.testing.assert_allclose(hessian_at(q, tuple(node)), [[3, 1], [1, 5]], atol=1e-10)


def test_hessian_at_quartic_exact_difference():
    omega = Disk((1.0, 0.0), 1.0)
    h = 0.125
    s = make_state(omega, omega, h=h)
    s = with_field(s, lambda p: p[..., 0] ** 4)
    iy = int(np.argmin(np.abs(s.grid.y)))
    ix = int(np.argmin(np.abs(s.grid.x - 1.0)))
    assert s.grid.x[ix] == pytest.approx(1.0, abs=1e-14) and s.grid.interior[iy, ix]
    assert hessian_at(s, (iy, ix))[0, 0] == pytest.approx(12 + 2 * h * h, rel=1e-12)


def test_hessian_at_rejects_boundary_node():
    s = make_state(n=17)
    with pytest.raises(ValueError):
        hessian_at(s, tuple(np.argwhere(s.grid.boundary)[0]))


# -- time step --


def test_stability_dt_examples():
    s = make_state(h=0.1)
    assert stability_dt(s) == pytest.approx(0.5 * 0.01 / 4, rel=1e-12)
    s2 = make_state(h=0.2)
    assert stability_dt(s2) == pytest.approx(4 * stability_dt(s), rel=1e-12)
    # smaller Hessian -> larger dF/dlambda on the arctan branch -> smaller dt
    flat = with_field(s, lambda p: 0.05 * np.sum(p * p, axis=-1))
    assert stability_dt(flat) < stability_dt(s)


def test_stability_dt_tracks_cfl():
    assert stability_dt(make_state(h=0.1, cfl=0.25)) == pytest.approx(0.25 * 0.01 / 4, rel=1e-12)


# -- stepping --


@pytest.mark.parametrize("tau", [0.0, math.pi / 6, math.pi / 4, 3 * math.pi / 8, HALF_PI])
def test_step_identity_disk_translates(tau):
    s = make_state(tau=tau)
    F = eval_matrix(make_operator(tau), np.eye(2))
    s1 = step(s)
    dt = s1.dt_last
    inner = s.grid.interior
    np.testing.assert_allclose((s1.u - s.u)[inner], dt * F, atol=1e-12)
    np.testing.assert_allclose((s1.u - s.u)[s.grid.active], dt * F, atol=1e-12)
    assert s1.steps == 1 and s1.t == dt
    assert s.steps == 0  # the input state is untouched


def test_step_matched_ellipses_translates():
    om, ot = Ellipse((0, 0), (1, 2), 0), Ellipse((0, 0), (3, 1), 0)
    s = make_state(om, ot, tau=1.0, n=40)
    C = eval_matrix(s.op, np.diag([3.0, 0.5]))
    for _ in range(5):
        s1 = step(s)
        diff = (s1.u - s.u)[s.grid.active] / s1.dt_last
        assert np.max(np.abs(diff - C)) <= 1e-8
        s = s1


def test_quadratic_exactness_all_steps():
    om, ot = Ellipse((0, 0), (1, 2), 0), Ellipse((0, 0), (3, 1), 0)
    C = eval_matrix(make_operator(0.4), np.diag([3.0, 0.5]))
    cfg = FlowConfig(tau=0.4, domain=om, domain_tilde=ot, n=40, max_steps=30, tol_osc=1e-300)
    worst = []
    run_flow(cfg, callback=lambda st, osc: worst.append(residual_sup(st, C)))
    assert len(worst) == 30 and max(worst) <= 1e-8


def test_threads_give_identical_fields():
    cfg = dict(tau=HALF_PI, domain=Disk(), domain_tilde=Disk(), n=40, u0=InitialData(perturb=0.1), max_steps=40)
    s1, r1 = run_flow(FlowConfig(**cfg, threads=1))
    s4, r4 = run_flow(FlowConfig(**cfg, threads=4))
    np.testing.assert_array_equal(s1.u, s4.u)
    assert json.dumps(r1.to_dict()) == json.dumps(r4.to_dict())


def test_boundary_newton_failure_is_reported():
    with pytest.raises(BoundaryNewtonError):
        s = make_state(n=24, u0=InitialData(perturb=0.1), max_newton=1, tol_bc=1e-15)
        for _ in range(3):
            s = step(s)


# -- flow --


@pytest.fixture(scope="module")
def perturbed_runs():
    """Coarse perturbed runs with and without a constant shift of F."""
    base = dict(tau=math.pi / 3, domain=Disk(), domain_tilde=Disk(), n=20, u0=InitialData(perturb=0.1))
    oscs = []
    s0, r0 = run_flow(FlowConfig(**base), callback=lambda st, osc: oscs.append(osc))
    s1, r1 = run_flow(FlowConfig(**base, f_shift=0.37))
    return s0, r0, s1, r1, oscs


def test_flow_converges_and_osc_decreases(perturbed_runs):
    s0, r0, _, _, oscs = perturbed_runs
    assert r0.converged and r0.osc_ut <= 1e-6
    assert np.all(np.diff(oscs[:100]) < 0)
    assert r0.C_inf == pytest.approx(eval_matrix(make_operator(math.pi / 3), np.eye(2)), abs=2e-2)
    assert r0.jacobian_min > 0


def test_constant_shift_covariance(perturbed_runs):
    s0, r0, s1, r1, _ = perturbed_runs
    assert abs(r1.C_inf - r0.C_inf - 0.37) <= 1e-8
    assert compare_mod_constant(s0, s1) <= 1e-8


def test_translation_detection(perturbed_runs):
    s0, r0, _, _, _ = perturbed_runs
    s1 = step(s0)
    diff = (s1.u - s0.u)[s0.grid.interior]
    assert diff.max() - diff.min() <= 1e-6
    assert np.median(diff) / s1.dt_last == pytest.approx(r0.C_inf, abs=1e-6)


def test_max_steps_reports_not_converged():
    cfg = FlowConfig(tau=HALF_PI, domain=Disk(), domain_tilde=Disk(), n=24, u0=InitialData(perturb=0.1),
                     max_steps=1)
    _, rep = run_flow(cfg)
    assert rep.steps == 1 and not rep.converged and rep.osc_ut > 1e-6


def test_run_flow_writes_fields(tmp_path):
    cfg = FlowConfig(tau=HALF_PI, domain=Disk(), domain_tilde=Disk(), n=16, u0=InitialData(perturb=0.05),
                     max_steps=4, fields=True, every=2)
    state, _ = run_flow(cfg, out_dir=tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["fields_00000002.csv", "fields_00000004.csv", "fields_final.csv"]
    data = np.genfromtxt(tmp_path / "fields_final.csv", delimiter=",", names=True)
    assert data.dtype.names == ("x", "y", "u", "ut", "du_x", "du_y", "f_value")
    assert len(data) == state.grid.active.sum()
    assert np.isfinite(data["du_x"]).all() and np.isfinite(data["u"]).all()


# -- config --


def test_config_round_trip_and_errors():
    raw = {"tau": "3pi/8", "domain": {"kind": "disk", "radius": 1.0},
           "domain_tilde": {"kind": "ellipse", "semi_axes": [2, 1]}, "grid": {"n": 33},
           "u0": {"mode": "quadratic", "M": [[2, 0], [0, 1]]}, "max_steps": 7,
           "output": {"fields": True, "every": 3}}
    cfg = FlowConfig.from_dict(raw)
    assert cfg.tau == 3 * math.pi / 8 and cfg.n == 33 and cfg.max_steps == 7 and cfg.every == 3
    again = FlowConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    assert FlowConfig.from_dict({**raw, "tau": "pi/4"}).tau == math.pi / 4
    assert FlowConfig.from_dict({**raw, "tau": "pi/2"}).tau == HALF_PI
    for bad in [{**raw, "u0": {"mode": "magic"}}, {k: v for k, v in raw.items() if k != "tau"},
                {**raw, "cfl": 2.0}, {**raw, "max_steps": "many"}, [1, 2]]:
        with pytest.raises(ConfigError):
            FlowConfig.from_dict(bad)


def test_run_flow_accepts_dict():
    raw = {"tau": HALF_PI, "domain": {"kind": "disk", "radius": 1.0},
           "domain_tilde": {"kind": "disk", "radius": 2.0}, "grid": {"n": 24}}
    _, rep = run_flow(raw)
    assert rep.converged
    assert rep.C_inf == pytest.approx(2 * math.atan(2.0), abs=1e-10)
