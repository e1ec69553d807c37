import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advdiff import (
    AmplitudeFunction,
    ExponentOverflowError,
    TimeGrid,
    classify_sector,
    rho_hat,
    sample_plan,
    solve_forward,
    u_hat,
    verify_lemma_rho,
    verify_lemma_uhat,
)
from advdiff.transform import (
    SECTORS,
    asymptotic_check,
    default_shift,
    exp_integral,
    ratio_scan,
    transform_residual,
)

from conftest import heat_problem, manufactured_problem
from oracles import gauss_legendre_doubling, rho_hat_constant, rho_hat_sin_offset, t_exp_integral

PI = np.pi
ONE = AmplitudeFunction.constant(1.0)
SIN = AmplitudeFunction.sinusoidal(2.0, 1.0, 1.0)

guarded = st.complex_numbers(max_magnitude=None, allow_nan=False, allow_infinity=False).filter(
    lambda z: abs(z.real) <= 700 and abs(z.imag) <= 700
)


# rho_hat

def test_rho_hat_trivial_values():
    assert rho_hat(ONE, 0.0, T=2.5) == pytest.approx(2.5, rel=1e-15)
    assert rho_hat(ONE, 1.0, T=1.0) == pytest.approx(0.632120558829, abs=1e-12)


def test_rho_hat_self_refinement_oracle():
    s, M = -2 + 1j, 1.0
    ref, change = gauss_legendre_doubling(lambda t: (2 + np.sin(t)) * np.exp(-(s + M) * t), 1.0)
    assert change < 1e-12 * abs(ref)
    got = rho_hat(SIN, s, M=M, T=1.0)
    assert abs(got - ref) <= 1e-12 * abs(ref)
    assert abs(got - rho_hat_sin_offset(s, 1.0, M)) <= 1e-12 * abs(ref)


@settings(max_examples=60, deadline=None)
@given(guarded)
def test_rho_hat_against_mpmath(s):
    ref = rho_hat_constant(s)
    assert abs(rho_hat(ONE, s, T=1.0) - ref) <= 1e-12 * abs(ref)


@settings(max_examples=40, deadline=None)
@given(st.floats(-50, 50), st.floats(-80, 80))
def test_rho_hat_conjugate_symmetry(re, im):
    a = rho_hat(SIN, complex(re, im), M=0.5, T=1.0)
    b = rho_hat(SIN, complex(re, -im), M=0.5, T=1.0)
    assert abs(a - np.conj(b)) <= 1e-13 * abs(a)


def test_rho_hat_mean_value_property():
    s0, r = complex(-1.5, 2.0), 0.3
    theta = np.linspace(0, 2 * PI, 64, endpoint=False)
    circle = np.mean([rho_hat(SIN, s0 + r * np.exp(1j * t), T=1.0) for t in theta])
    assert abs(circle - rho_hat(SIN, s0, T=1.0)) <= 1e-12 * abs(circle)


def test_exponent_guard():
    with pytest.raises(ExponentOverflowError):
        rho_hat(ONE, -701.0, T=1.0)
    with pytest.raises(ExponentOverflowError):
        rho_hat(ONE, -300.0, T=3.0)
    rho_hat(ONE, -699.0, T=1.0)


def test_grid_trapezoid_mode_and_modes_agree():
    tg = TimeGrid(1.0, 400)
    trap = rho_hat(SIN, 1 + 2j, M=0.0, mode="grid-trapezoid", time_grid=tg)
    exact = rho_hat_sin_offset(1 + 2j)
    assert abs(trap - exact) < 5.0 * tg.dt**2 * abs(exact)
    with pytest.raises(ValueError):
        rho_hat(SIN, 1.0, mode="grid-trapezoid")


def test_exp_integral_limits():
    assert exp_integral(0.0, 1.7) == 1.7
    assert exp_integral(-3.0, 1.0) == pytest.approx((np.exp(3) - 1) / 3, rel=1e-15)
    assert exp_integral(1e-12, 1.0) == pytest.approx(1.0, rel=1e-11)


# u_hat

def test_u_hat_zero_and_s_zero():
    traj = solve_forward(heat_problem(10, f=lambda x: 0 * x))
    assert not np.any(u_hat(traj, 3 + 4j))
    traj = solve_forward(heat_problem(10, n_steps=5))
    w = np.full(6, 0.2)
    w[[0, -1]] = 0.1
    np.testing.assert_allclose(u_hat(traj, 0.0).real, w @ traj.snapshots, rtol=1e-14)


def test_u_hat_manufactured():
    for n in (32, 64):
        p = manufactured_problem(n)
        x = p.grid.nodes()[:, 0]
        traj = solve_forward(p)
        h, dt = p.grid.h[0], p.time_grid.dt
        for s in (0.5, 1.0, 5.0):
            err = np.abs(u_hat(traj, s) - np.sin(PI * x) * t_exp_integral(s)).max()
            assert err <= 2.0 * (h**2 + dt**2)


def test_u_hat_conjugate_symmetry():
    traj = solve_forward(heat_problem(12, b=0.3))
    np.testing.assert_allclose(u_hat(traj, -2 - 5j, 1.0), np.conj(u_hat(traj, -2 + 5j, 1.0)), rtol=1e-14)


# sectors

def test_sector_examples():
    assert classify_sector(1.0, 2.0) == classify_sector(1.0, 50.0) == "A"
    assert classify_sector(-1 + 1j, 2.0) == "B"
    assert classify_sector(-3 + 1j, 2.0) == "C"
    assert classify_sector(-2 + 1j, 2.0) == "B"  # boundary, earlier sector wins
    assert classify_sector(1j, 2.0) == "A"
    assert classify_sector(-3 - 1j, 2.0) == "Cbar"
    with pytest.raises(ValueError):
        classify_sector(1.0, 1.0)


@settings(max_examples=300)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(1.01, 100))
def test_sector_totality(re, im, N):
    label = classify_sector(complex(re, im), N)
    assert label in SECTORS
    # mirror pairs map onto each other below the axis
    if im > 0 and re < 0:
        assert classify_sector(complex(re, -im), N) == label + "bar"


def test_sample_plan_covers_requested_sectors():
    plan = sample_plan(SECTORS, N=4.0, T=1.0)
    labels = {classify_sector(s, 4.0) for s in plan}
    assert labels == set(SECTORS)
    assert plan == sorted(plan, key=lambda z: (z.real, z.imag))
    c_plan = sample_plan(("C",), N=4.0, T=0.5, r_min=1.0)
    assert max(abs(s) for s in c_plan) == pytest.approx(200.0)
    assert all(classify_sector(s, 4.0) in ("C", "B") for s in c_plan)


# lemma reports

def test_lemma_rho_unit_amplitude_on_negative_axis():
    rep = verify_lemma_rho(ONE, 1.0, 2.0, [-0.5, -3.0, -40.0, -600.0])
    np.testing.assert_allclose(rep.ratios, 1.0, rtol=1e-12)
    assert rep.passed


def test_lemma_rho_imaginary_axis_denominator():
    rep = verify_lemma_rho(SIN, 1.0, 2.0, [3j])
    assert rep.ratios[0] == pytest.approx(abs(rho_hat_sin_offset(3j)) / 1.0, rel=1e-12)


def test_lemma_rho_sweep_and_skips():
    plan = [s for s in sample_plan(("C",), N=10.0, T=1.0, r_min=1.0, r_max=300.0)]
    rep = verify_lemma_rho(SIN, 1.0, 10.0, plan + [-800.0])
    assert rep.skipped == 1
    assert rep.passed and rep.extremal == rep.ratios.min() > 0


def test_lemma_rho_rejects_nonpositive_amplitude():
    with pytest.raises(ValueError):
        verify_lemma_rho(AmplitudeFunction.affine(0.0, 1.0), 1.0, 2.0, [-1.0])


def test_lemma_report_files(tmp_path):
    rep = verify_lemma_rho(SIN, 1.0, 2.0, sample_plan(("C",), N=2.0, n_radii=3, n_angles=2))
    rep.write(tmp_path / "rep")
    data = json.loads((tmp_path / "rep.json").read_text())
    assert {"lemma", "N", "M", "samples", "extremal", "pass"} <= set(data)
    assert data["extremal"] == min(r["ratio"] for r in data["samples"])
    lines = (tmp_path / "rep.csv").read_text().splitlines()
    assert lines[0].startswith("s_re,s_im,sector,ratio")
    assert len(lines) == len(data["samples"]) + 1


def test_lemma_uhat_zero_source_vacuous():
    traj = solve_forward(heat_problem(10, f=lambda x: 0 * x))
    rep = verify_lemma_uhat(traj, np.zeros(10), ONE, 1.0, sample_plan(SECTORS, n_radii=3, n_angles=3))
    assert rep.passed and np.all(rep.ratios == 0.0)


def test_lemma_uhat_real_axis_and_conjugates():
    p = manufactured_problem(32)
    traj = solve_forward(p)
    rep = verify_lemma_uhat(traj, p.f, p.rho, 1.0, [0.0, 1.0, 10.0, 100.0])
    assert rep.passed and np.isfinite(rep.extremal)
    pair = verify_lemma_uhat(traj, p.f, p.rho, 1.0, [-3 + 7j, -3 - 7j])
    assert pair.ratios[0] == pytest.approx(pair.ratios[1], rel=1e-13)
    assert all("ratio_h1" in row for row in pair.samples)


def test_lemma_uhat_flags_transform_zeros():
    # rho = 1 on a 4-step grid: the trapezoid sum of exp(-2 pi i t) vanishes
    traj = solve_forward(heat_problem(8, n_steps=4))
    rep = verify_lemma_uhat(traj, traj.problem.f, ONE, 0.0, [1.0, 2j * PI])
    assert rep.flagged == 1
    assert np.isfinite(rep.extremal)


# residual of the transformed equation

def test_transform_residual_zero_source():
    traj = solve_forward(heat_problem(10, f=lambda x: 0 * x))
    assert transform_residual(traj, np.zeros(10), ONE, 1 + 1j, 1.0) == 0.0


@pytest.mark.parametrize("s, M, unit", [(1.0, 0.0, False), (0.0, 1.0, True), (-1 + 2j, 1.0, False)])
def test_transform_residual_refines(s, M, unit):
    res = []
    for n in (32, 64):
        p = heat_problem(n, n_steps=n + 1) if unit else manufactured_problem(n)
        traj = solve_forward(p)
        res.append(transform_residual(traj, p.f, p.rho, s, M))
    assert res[0] / res[1] >= 3.0
    h = 1.0 / 65
    assert res[1] <= 10 * (h**2 + (1 / 65) ** 2)


# asymptotics and ratio scan

def test_asymptotic_unit_amplitude():
    traj = solve_forward(heat_problem(16))
    rep = asymptotic_check(ONE, traj, 0.0, [10.0, 30.0, 50.0])
    assert rep.rho_deviation[-1] < 1e-21
    assert rep.passed


def test_asymptotic_sinusoidal_and_zero_trajectory():
    p = manufactured_problem(32)
    p.rho = SIN
    rep = asymptotic_check(SIN, solve_forward(p), 1.0, [10.0, 30.0, 100.0])
    assert rep.passed and rep.rho_at_zero == 2.0
    zero = solve_forward(heat_problem(8, f=lambda x: 0 * x))
    rep = asymptotic_check(SIN, zero, 1.0, [10.0, 30.0, 100.0])
    assert rep.passed and not any(rep.u_deviation)
    with pytest.raises(ValueError):
        asymptotic_check(SIN, zero, 1.0, [30.0, 10.0, 100.0])


def test_ratio_scan():
    zero = solve_forward(heat_problem(8, f=lambda x: 0 * x))
    scan = ratio_scan(zero, SIN, 1.0, [1.0, 2 + 1j, 5.0])
    assert scan.variation == 0.0 and not np.any(scan.norms)
    p = manufactured_problem(16)
    traj = solve_forward(p)
    scan = ratio_scan(traj, p.rho, 1.0, [1.0, 2 + 1j, 5.0])
    assert scan.variation > 0
    pair = ratio_scan(traj, p.rho, 1.0, [2 + 3j, 2 - 3j])
    np.testing.assert_allclose(pair.fields[0], np.conj(pair.fields[1]), rtol=1e-13)


def test_default_shift():
    assert default_shift(0.0) == 1.0
    assert default_shift(2.5) == 3.5
