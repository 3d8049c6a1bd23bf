import json
import math

import numpy as np
import pytest

from lagflow.conditions import (
    ConeRegion,
    NegatedOperator,
    PermutationBrokenOperator,
    check_concavity,
    check_envelope_and_inversion,
    check_monotonicity,
    check_symmetry,
    check_trace_bounds,
    make_rng,
    report_json,
    theoretical_bounds,
    verify_all,
)
from lagflow.errors import RegionError
from lagflow.operator import eval_envelope, eval_spectrum, invert_envelope, make_operator

SQ2, SQ3 = math.sqrt(2), math.sqrt(3)


def test_region_sampling_respects_constraints():
    region = ConeRegion(1.0, 2.0, 5, lambda_cap=50)
    s = region.sample(make_rng(0, 0), 5000)
    assert s.shape == (5000, 5)
    assert np.all(np.diff(s, axis=1) >= 0)
    assert np.all(s[:, 0] >= 1e-3) and np.all(s[:, 0] <= 1.0)
    assert np.all(s[:, -1] >= 2.0) and np.all(s[:, -1] <= 50)
    assert np.all(region.contains(s))


def test_region_overlapping_bounds_still_sorted():
    # mu1 > mu2 lets lambda_1 and lambda_n swap roles; samples must stay in the region
    region = ConeRegion(3.0, 1.0, 3, lambda_cap=4.0)
    s = region.sample(make_rng(5), 2000)
    assert np.all(region.contains(s))


def test_region_rejects_outside_spectrum():
    region = ConeRegion(1.0, 2.0, 2)
    with pytest.raises(RegionError):
        region.validate([[0.5, 1.5]])  # lambda_n < mu2
    with pytest.raises(RegionError):
        region.validate([[0.5, 1.5, 3.0]])
    with pytest.raises(RegionError):
        check_trace_bounds(make_operator(math.pi / 6), region, spectra=[[0.5, 1.5]])


@pytest.mark.parametrize("kw", [dict(mu1=0.0, mu2=1.0, n=2), dict(mu1=1.0, mu2=2.0, n=1),
                                dict(mu1=1.0, mu2=200.0, n=2)])
def test_region_invalid_parameters(kw):
    with pytest.raises(RegionError):
        ConeRegion(**kw)


def test_rng_streams_are_reproducible_and_distinct():
    a = make_rng(42, 3, 0).uniform(size=5)
    np.testing.assert_array_equal(a, make_rng(42, 3, 0).uniform(size=5))
    assert not np.array_equal(a, make_rng(42, 3, 1).uniform(size=5))


def test_symmetry_examples():
    res = check_symmetry(make_operator(math.pi / 6), ConeRegion(1, 2, 2), 1000, seed=1)
    assert res.passed and res.worst <= 1e-12
    assert check_symmetry(make_operator(math.pi / 3), ConeRegion(1, 2, 5), 1000, seed=1).passed
    broken = check_symmetry(PermutationBrokenOperator(make_operator(math.pi / 6)), ConeRegion(1, 2, 3), 200)
    assert not broken.passed and broken.witnesses


def test_trace_bounds_pi_over_six_closed_forms():
    op = make_operator(math.pi / 6)
    lo1, up1, lo2, up2 = theoretical_bounds(op, 1.0, 2.0, 2)
    # a = sqrt3, b = sqrt2, (a - b)(a + b) = 1
    assert up1 == pytest.approx(4 * SQ2, rel=1e-14)
    assert lo1 == pytest.approx(2 * SQ2 / (2 + 2 * SQ3), rel=1e-14)
    assert up2 == pytest.approx(2 * 2 * SQ2, rel=1e-14)
    assert lo2 == pytest.approx(2 * SQ2 * 4 / ((2 + SQ3) ** 2 - 2), rel=1e-14)
    rep = check_trace_bounds(op, ConeRegion(1, 2, 2, lambda_cap=50), 10_000, seed=42)
    assert rep.passed
    assert rep.empirical_max_sumF <= 4 * SQ2
    assert lo1 <= rep.empirical_min_sumF <= rep.empirical_max_sumF <= up1
    assert lo2 <= rep.empirical_min_sumFl2 <= rep.empirical_max_sumFl2 <= up2
    assert rep.theoretical_lambda == min(lo1, lo2)
    assert rep.theoretical_Lambda == max(up1, up2)


def test_trace_bounds_three_pi_over_eight_closed_forms():
    op = make_operator(3 * math.pi / 8)
    a = SQ2 - 1  # cot(3 pi / 8)
    b = math.sqrt(2 * SQ2 - 2)  # sqrt(1 - a^2)
    lo1, up1, lo2, up2 = theoretical_bounds(op, 1.0, 1.0, 3)
    assert up1 == pytest.approx(6 * b / ((a - b) ** 2 + (a + b) ** 2), rel=1e-13)
    assert up2 == pytest.approx(3 * b, rel=1e-13)
    assert lo1 == pytest.approx(2 * b / ((1 + a - b) ** 2 + (1 + a + b) ** 2), rel=1e-13)
    assert lo2 == pytest.approx(2 * b / ((1 + a - b) ** 2 + (1 + a + b) ** 2), rel=1e-13)
    assert check_trace_bounds(op, ConeRegion(1, 1, 3), 10_000, seed=42).passed


def test_trace_bounds_log_branch_reports_no_upper_bound():
    rep = check_trace_bounds(make_operator(0.0), ConeRegion(1, 2, 3), 2000, seed=0)
    assert rep.passed
    assert rep.sumF_upper is None and rep.sumFl2_upper is None and rep.theoretical_Lambda is None


def test_trace_bounds_negative_control_fails():
    rep = check_trace_bounds(NegatedOperator(make_operator(1.0)), ConeRegion(1, 2, 2), 100)
    assert not rep.passed and rep.violations


def test_monotonicity_and_negative_control():
    assert check_monotonicity(make_operator(0.3), ConeRegion(1, 2, 3), 1000).passed
    assert not check_monotonicity(NegatedOperator(make_operator(0.3)), ConeRegion(1, 2, 3), 100).passed


@pytest.mark.parametrize("tau", [math.pi / 6, 3 * math.pi / 8])
def test_concavity_property_runs(tau):
    res = check_concavity(make_operator(tau), ConeRegion(1, 2, 3), 1000, directions_per_sample=8, seed=3)
    assert res.passed
    assert res.samples == 1000 and res.extra["directions_per_sample"] == 8


def test_concavity_negative_control_fails():
    res = check_concavity(NegatedOperator(make_operator(math.pi / 6)), ConeRegion(1, 2, 2), 100, 4)
    assert not res.passed and res.witnesses


def test_envelope_constant_spectrum_gives_exact_point():
    region = ConeRegion(3.0, 3.0, 3)
    for tau in (0.0, math.pi / 6, math.pi / 4, 1.2, math.pi / 2):
        op = make_operator(tau)
        c = 3.0
        v = eval_spectrum(op, [c, c, c])
        assert invert_envelope(op, v, c, c, n=3) == c
        res = check_envelope_and_inversion(op, region, spectra=[[c, c, c]])
        assert res.passed


def test_envelope_mean_value_point_pi_over_six():
    op = make_operator(math.pi / 6)
    v = eval_spectrum(op, [1.0, 4.0])
    t1 = invert_envelope(op, v, 1.0, 4.0, n=2)
    assert 1.0 <= t1 <= 4.0
    assert abs(eval_envelope(op, t1, 2) - v) <= 1e-10
    assert check_envelope_and_inversion(op, ConeRegion(1, 4, 2), spectra=[[1.0, 4.0]]).passed


def test_envelope_property_run():
    assert check_envelope_and_inversion(make_operator(3 * math.pi / 8), ConeRegion(1, 2, 3), 1000).passed


def test_verify_all_report_schema_and_reproducibility():
    op = make_operator(0.9)
    region = ConeRegion(1, 2, 3)
    r1 = verify_all(op, region, samples=2000, seed=7)
    r2 = verify_all(op, region, samples=2000, seed=7, threads=3)
    assert r1["passed"]
    assert set(r1) == {"operator", "region", "samples", "seed", "checks", "passed"}
    assert set(r1["checks"]) == {"symmetry", "monotonicity", "trace_bounds", "concavity", "envelope_inversion"}
    assert report_json(r1) == report_json(r2)
    assert report_json(verify_all(op, region, samples=2000, seed=8)) != report_json(r1)
    json.loads(report_json(r1))


def test_report_json_handles_non_finite():
    text = report_json({"x": math.inf, "y": np.float64(np.nan), "z": None})
    assert json.loads(text) == {"x": "inf", "y": "nan", "z": None}


def test_negated_operator_fails_verify_all():
    r = verify_all(NegatedOperator(make_operator(math.pi / 6)), ConeRegion(1, 2, 2), samples=500)
    assert not r["passed"]
    assert not r["checks"]["monotonicity"]["passed"]
    assert not r["checks"]["concavity"]["passed"]


@pytest.mark.parametrize("tau", [0.0, 0.1, 0.3, 0.5, 0.7, math.pi / 4 - 0.05, math.pi / 4,
                                 math.pi / 4 + 0.05, 0.9, 1.1, 1.3, 1.5, math.pi / 2])
def test_sweep_grid_all_pass(tau):
    for n in (2, 3, 5):
        r = verify_all(make_operator(tau), ConeRegion(1, 2, n, lambda_cap=100), samples=1000, seed=42)
        assert r["passed"], (tau, n, {k: v["passed"] for k, v in r["checks"].items()})
