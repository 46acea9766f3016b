import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from sohlab.coefficients import (CoefficientSet, Kernel, VmfParams, coefficient_c2,
                                 coefficient_c3, compute_coefficients, kernel_moment_k,
                                 log_partition, order_parameter_c1, solve_gci, vmf_pdf)
from sohlab.errors import DomainError


# --- oracles ---------------------------------------------------------------

def c1_bessel(d):
    return special.ive(1, 1 / d) / special.ive(0, 1 / d)


def c1_langevin(d):
    return 1 / math.tanh(1 / d) - d


def gci_closed_form_m2(d, theta):
    """g = d theta - d pi F(theta)/F(pi), F(t) = int_0^t exp(-cos/d)."""
    f = lambda p: np.exp(-(np.cos(p) + 1) / d)
    big = integrate.quad(f, 0, math.pi, epsabs=0, epsrel=1e-13, limit=400)[0]
    part = np.array([integrate.quad(f, 0, t, epsabs=0, epsrel=1e-13, limit=400)[0]
                     for t in theta])
    return d * theta - d * math.pi * part / big


def c2_from_g(g, d, m):
    w = lambda t: np.exp((np.cos(t) - 1) / d) * np.sin(t) ** (m - 1)
    num = integrate.quad(lambda t: g(t) * np.cos(t) * w(t), 0, math.pi, limit=400)[0]
    den = integrate.quad(lambda t: g(t) * w(t), 0, math.pi, limit=400)[0]
    return num / den


def gci_bvp_m3(d, eps=1e-4):
    """Independent m=3 GCI solve with scipy's collocation BVP solver.

    Near the poles regular solutions behave like sin(theta), which gives
    the Robin conditions g = tan(theta) g' at theta = eps and pi - eps.
    """
    def rhs(t, y):
        g, p = y            # p = w g'
        w = np.sin(t) * np.exp(np.cos(t) / d)
        return np.vstack([p / w, w * g / np.sin(t) ** 2 - w * np.sin(t)])

    def bc(ya, yb):
        wa = math.sin(eps) * math.exp(math.cos(eps) / d)
        wb = math.sin(math.pi - eps) * math.exp(math.cos(math.pi - eps) / d)
        return np.array([ya[0] - math.tan(eps) * ya[1] / wa,
                         yb[0] + math.tan(eps) * yb[1] / wb])

    t = np.linspace(eps, math.pi - eps, 2001)
    sol = integrate.solve_bvp(rhs, bc, t, np.vstack([np.sin(t), np.cos(t)]), tol=1e-9,
                              max_nodes=200000)
    assert sol.success
    return lambda x: sol.sol(np.clip(x, eps, math.pi - eps))[0]


# --- order parameter -------------------------------------------------------

@pytest.mark.parametrize("d", [0.01, 0.05, 0.2, 0.5, 1, 3, 10, 50])
def test_c1_matches_bessel_ratio_in_2d(d):
    assert order_parameter_c1(d, 2) == pytest.approx(c1_bessel(d), abs=1e-12)


@pytest.mark.parametrize("d", [0.01, 0.05, 0.2, 0.5, 1, 3, 10, 50])
def test_c1_matches_langevin_function_in_3d(d):
    assert order_parameter_c1(d, 3) == pytest.approx(c1_langevin(d), abs=1e-12)


def test_c1_trapezoid_and_gauss_agree():
    for m in (2, 3):
        assert order_parameter_c1(0.3, m, rule="trapezoid") == pytest.approx(
            order_parameter_c1(0.3, m), abs=1e-10)


def test_c1_limits():
    assert order_parameter_c1(1e-3, 2) == pytest.approx(1 - 1e-3 / 2, abs=1e-6)
    assert order_parameter_c1(1e3, 2) == pytest.approx(1 / 2e3, rel=1e-3)
    assert order_parameter_c1(1e3, 3) == pytest.approx(1 / 3e3, rel=1e-3)


@pytest.mark.parametrize("m", [2, 3])
def test_vmf_density_integrates_to_one(m):
    p = VmfParams(0.4, m)
    if m == 2:
        phi = np.linspace(0, 2 * math.pi, 20001)
        v = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        total = np.trapezoid(vmf_pdf(p, v), phi)
    else:
        theta = np.linspace(0, math.pi, 20001)
        v = np.stack([np.cos(theta), np.sin(theta), 0 * theta], axis=1)
        total = 2 * math.pi * np.trapezoid(vmf_pdf(p, v) * np.sin(theta), theta)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_log_partition_closed_forms():
    d = 0.7
    assert log_partition(d, 2) == pytest.approx(math.log(2 * math.pi * special.iv(0, 1 / d)),
                                                abs=1e-12)
    assert log_partition(d, 3) == pytest.approx(math.log(4 * math.pi * d * math.sinh(1 / d)),
                                                abs=1e-12)


def test_vmf_rejects_bad_input():
    with pytest.raises(DomainError):
        vmf_pdf(VmfParams(1.0, 2), np.array([1.0, 1.0]))
    with pytest.raises(DomainError):
        VmfParams(1.0, 2, np.array([2.0, 0.0]))
    with pytest.raises(DomainError):
        VmfParams(-1.0, 2)
    with pytest.raises(DomainError):
        order_parameter_c1(0.5, 4)


# --- GCI -------------------------------------------------------------------

@pytest.mark.parametrize("d", [0.2, 1.0, 5.0])
def test_gci_matches_closed_form_2d(d):
    sol = solve_gci(d, 2, 512)
    exact = gci_closed_form_m2(d, sol.theta_grid)
    assert np.max(np.abs(sol.g_values - exact)) < 2e-5


def test_gci_residual_is_solver_level():
    for m in (2, 3):
        assert solve_gci(0.5, m, 1024).residual < 1e-8


def test_gci_rejects_coarse_grid():
    with pytest.raises(DomainError):
        solve_gci(1.0, 2, 16)


def test_gci_tiny_noise_does_not_overflow():
    for m in (2, 3):
        cs = compute_coefficients(1e-3, m)
        assert np.isfinite(cs.c2)
        assert 0 < cs.c2 <= cs.c1
        assert cs.c1 - cs.c2 < 0.02


@pytest.mark.parametrize("d", [0.25, 1.0, 4.0])
def test_c2_matches_closed_form_quadrature_2d(d):
    oracle = c2_from_g(lambda t: gci_closed_form_m2(d, np.atleast_1d(t))[0], d, 2)
    assert coefficient_c2(solve_gci(d, 2)) == pytest.approx(oracle, abs=2e-6)


@pytest.mark.parametrize("d", [0.3, 1.0])
def test_c2_matches_bvp_oracle_3d(d):
    oracle = c2_from_g(gci_bvp_m3(d), d, 3)
    assert coefficient_c2(solve_gci(d, 3)) == pytest.approx(oracle, abs=1e-5)


# --- kernel and c3 ---------------------------------------------------------

def test_indicator_kernel_moments():
    assert kernel_moment_k(Kernel("indicator", 1.0, 2)) == pytest.approx(1 / 8, abs=1e-10)
    assert kernel_moment_k(Kernel("indicator", 1.0, 3)) == pytest.approx(1 / 10, abs=1e-10)


@pytest.mark.parametrize("m", [2, 3])
def test_gaussian_kernel_moment(m):
    # each axis has variance r^2, so <|xi|^2> = m r^2 and k = r^2 / 2
    assert kernel_moment_k(Kernel("gaussian", 0.7, m)) == pytest.approx(0.49 / 2, rel=1e-10)


@pytest.mark.parametrize("m", [2, 3])
def test_indicator_moment_monte_carlo(m):
    gen = np.random.default_rng(11)
    pts = gen.uniform(-1, 1, (400_000, m))
    r2 = np.sum(pts**2, axis=1)
    inside = r2[r2 <= 1]
    mc = inside.mean() / (2 * m)
    se = inside.std() / math.sqrt(inside.size) / (2 * m)
    assert abs(kernel_moment_k(Kernel("indicator", 1.0, m)) - mc) < 4 * se


def test_kernel_scaling_and_normalization():
    ker = Kernel("indicator", 2.0, 2)
    assert kernel_moment_k(ker) == pytest.approx(4 / 8, abs=1e-10)
    r = np.linspace(0, 3, 3001)
    assert 2 * math.pi * np.trapezoid(ker(r) * r, r) == pytest.approx(1, abs=2e-3)


def test_c3_formula_and_validation():
    assert coefficient_c3(2.0, 0.125, 0.5, 0.3, 2) == pytest.approx(2 * 0.125 * 0.8)
    assert coefficient_c3(1.0, 0.1, 0.5, 0.3, 3) == pytest.approx(0.1 * 1.3)
    assert coefficient_c3(0.0, 0.125, 0.5, 0.3, 2) == 0.0
    with pytest.raises(DomainError):
        coefficient_c3(-1.0, 0.125, 0.5, 0.3, 2)
    with pytest.raises(DomainError):
        Kernel("box", 1.0, 2)


def test_coefficient_set_row_and_validation():
    cs = compute_coefficients(1.0, 2, eta0=0.5)
    row = cs.as_row()
    assert len(row) == len(CoefficientSet.CSV_HEADER)
    assert row[0] == 1.0 and row[1] == 2
    assert cs.k == pytest.approx(0.125)
    with pytest.raises(DomainError):
        CoefficientSet(d=1.0, m=2, c1=1.5, c2=0.1, c3=0.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=0.02, max_value=20.0), st.sampled_from([2, 3]))
def test_coefficient_ordering_property(d, m):
    cs = compute_coefficients(d, m, n_theta=512)
    assert 0 < cs.c2 <= cs.c1 <= 1
