import math

import numpy as np
import pytest
from scipy import stats

from sohlab.coefficients import CoefficientSet, order_parameter_c1
from sohlab.errors import DomainError
from sohlab.scenarios import (MillingParams, RiemannSpec, compare_fields, mill_residual,
                              milling_profile_shape, milling_solution, noisy_band_fields,
                              noisy_fields, riemann_init, riemann_masses, sample_riemann_particles,
                              sample_vmf)
from sohlab.soh import SohGrid, SohSolverConfig, soh_run, uniform_fields
from sohlab.particles import empirical_fields


# --- mills -----------------------------------------------------------------

def test_mill_orientation_is_unit_and_tangential():
    p = MillingParams(1.0, 1.0, 0.7, 0.5)
    gen = np.random.default_rng(0)
    x = gen.uniform(-3, 3, (5000, 2))
    x = x[np.hypot(*x.T) > 1e-3]
    rho, u = milling_solution(p, x)
    assert np.max(np.abs(np.linalg.norm(u, axis=1) - 1)) < 1e-12
    assert np.max(np.abs(np.sum(u * x, axis=1))) < 1e-12
    assert np.all(rho > 0)


def test_mill_profile_and_shape():
    p = MillingParams(2.0, 1.5, 0.6, 0.3)
    rho, _ = milling_solution(p, np.array([[3.0, 0.0], [0.0, 1.5]]))
    assert rho == pytest.approx([2.0 * 2.0**2, 2.0])
    assert milling_profile_shape(p) == "convex"
    assert milling_profile_shape(MillingParams(1, 1, 0.2, 0.4)) == "concave"
    assert milling_profile_shape(MillingParams(1, 1, 0.4, 0.4)) == "linear"


def test_mill_domain_errors():
    p = MillingParams(1.0, 1.0, 0.5, 0.5)
    with pytest.raises(DomainError):
        milling_solution(p, np.zeros((1, 2)))
    with pytest.raises(DomainError):
        milling_solution(p, np.array([[0.5, 0.0]]), annulus=(1.0, 3.0))
    with pytest.raises(DomainError):
        MillingParams(-1.0, 1.0, 0.5, 0.5)


@pytest.mark.parametrize("c2,d", [(0.6, 0.3), (0.3, 0.6)])
def test_mill_residual_second_order(c2, d):
    cs = CoefficientSet(d=d, m=2, c1=0.8, c2=c2, c3=0.0)
    p = MillingParams(1.0, 1.0, c2, d)
    res = [mill_residual(p, cs, n) for n in (121, 241)]
    for k in (0, 1):    # mass and momentum residuals
        order = math.log(res[0][k] / res[1][k]) / math.log(res[0][2] / res[1][2])
        assert 1.7 <= order <= 2.3


# --- VMF sampling ----------------------------------------------------------

@pytest.mark.parametrize("d", [0.1, 0.5, 2.0])
def test_vmf_circle_sampler_ks(d):
    gen = np.random.default_rng(1)
    mu = 0.9
    v = sample_vmf((math.cos(mu), math.sin(mu)), d, 20_000, gen)
    rel = np.arctan2(v[:, 1] * math.cos(mu) - v[:, 0] * math.sin(mu),
                     v[:, 0] * math.cos(mu) + v[:, 1] * math.sin(mu))
    assert stats.kstest(rel, stats.vonmises(1 / d).cdf).pvalue > 0.01
    assert np.allclose(np.linalg.norm(v, axis=1), 1)


@pytest.mark.parametrize("d", [0.1, 0.5, 2.0])
def test_vmf_sphere_sampler(d):
    gen = np.random.default_rng(2)
    u = np.array([1.0, 2.0, 2.0]) / 3
    v = sample_vmf(u, d, 20_000, gen)
    w = v @ u
    cdf = lambda x: (np.exp((x - 1) / d) - math.exp(-2 / d)) / (1 - math.exp(-2 / d))
    assert stats.kstest(w, cdf).pvalue > 0.01
    mean = v.mean(axis=0)
    assert np.linalg.norm(mean - order_parameter_c1(d, 3) * u) < 4 / math.sqrt(20_000)
    # tangential part is isotropic: no preferred direction orthogonal to u
    tang = v - w[:, None] * u
    assert np.linalg.norm(tang.mean(axis=0)) < 4 / math.sqrt(20_000)


def test_vmf_rejects_other_dimensions():
    with pytest.raises(DomainError):
        sample_vmf(np.ones(4), 0.5, 10, np.random.default_rng(0))


# --- Riemann problems -------------------------------------------------------

def test_riemann_init_and_masses():
    grid = SohGrid((20,), (10.0,))
    spec = RiemannSpec.from_angles(2.0, 1.0, 0.5, -0.5, 4.0)
    f = riemann_init(spec, grid)
    assert np.all(f.rho[:8] == 2.0) and np.all(f.rho[8:] == 0.5)
    assert np.allclose(f.u[0], [math.cos(1.0), math.sin(1.0)])
    assert f.mass() == pytest.approx(sum(riemann_masses(spec, grid)))
    with pytest.raises(DomainError):
        riemann_init(RiemannSpec.from_angles(1, 0, 1, 0, 12.0), grid)
    with pytest.raises(DomainError):
        RiemannSpec(1.0, (1.0, 1.0), 1.0, (1.0, 0.0), 1.0)


def test_equal_states_are_a_fixed_point():
    grid = SohGrid((50,), (10.0,))
    spec = RiemannSpec.from_angles(1.3, 0.7, 1.3, 0.7, 5.0)
    cs = CoefficientSet(d=0.3, m=2, c1=0.8, c2=0.6, c3=0.01)
    snaps = soh_run(riemann_init(spec, grid), SohSolverConfig(cs, viscous=True), 3.0)
    assert np.max(np.abs(snaps[-1].rho - 1.3)) < 1e-13
    assert np.max(np.abs(snaps[-1].u - snaps[0].u)) < 1e-13


def test_riemann_particle_sampler():
    grid = SohGrid((40,), (20.0,))
    spec = RiemannSpec.from_angles(2.0, 1.7, 1.0, 0.5, 10.0)
    d, n = 0.25, 30_000
    ens, mass_each = sample_riemann_particles(spec, grid, d, n, (20.0, 1.0),
                                              np.random.default_rng(4))
    total = sum(riemann_masses(spec, grid))
    assert abs(mass_each * n - total) < mass_each
    n_left = int(np.sum(ens.x[:, 0] < 10.0))
    assert abs(n_left * mass_each - riemann_masses(spec, grid)[0]) <= mass_each
    c1 = order_parameter_c1(d, 2)
    for side, (u, mask) in {"l": (spec.u_l, ens.x[:, 0] < 10), "r": (spec.u_r, ens.x[:, 0] >= 10)}.items():
        mean = ens.v[mask].mean(axis=0)
        assert np.linalg.norm(mean - c1 * np.asarray(u)) < 4 / math.sqrt(mask.sum())
        vx, vy = ens.v[mask].T
        rel = np.arctan2(vy * u[0] - vx * u[1], vx * u[0] + vy * u[1])
        # p-values are uniform over seeds; 1e-3 keeps false alarms rare
        assert stats.kstest(rel, stats.vonmises(1 / d).cdf).pvalue > 1e-3
    f = empirical_fields(ens, grid, mass=total)
    assert f.mass() == pytest.approx(total, rel=1e-12)
    with pytest.raises(DomainError):
        sample_riemann_particles(spec, grid, d, 10, (19.0, 1.0), np.random.default_rng(0))


# --- noisy data and comparison ----------------------------------------------

def test_noisy_fields_are_admissible():
    grid = SohGrid((16, 16), (4.0, 4.0))
    f = noisy_fields(grid, 1.0, (0.0, 1.0), np.random.default_rng(0), 0.5, 1.0, smooth=2)
    assert np.all(f.rho > 0)
    assert np.allclose(np.linalg.norm(f.u, axis=-1), 1)
    band = noisy_band_fields(SohGrid((40,), (10.0,)), 3.0, 0.5, 5.0, 2.0, (1.0, 0.0),
                             np.random.default_rng(1))
    assert band.rho[20] > 2 * band.rho[0]


def test_compare_fields_metric():
    grid = SohGrid((10, 10), (1.0, 1.0))
    a = noisy_fields(grid, 1.0, (1.0, 0.0), np.random.default_rng(0))
    r = compare_fields(a, a.copy())
    assert (r.l1_rho, r.l1_u, r.cells_compared) == (0.0, 0.0, 100)
    assert compare_fields(a, a.copy(rho=2 * a.rho)).l1_rho == pytest.approx(1.0)
    b = noisy_fields(grid, 1.0, (1.0, 0.0), np.random.default_rng(1))
    b = b.copy(rho=b.rho * a.mass() / b.mass())
    assert compare_fields(a, b).l1_rho == pytest.approx(compare_fields(b, a).l1_rho, rel=1e-12)
    assert compare_fields(a, b).l1_u == pytest.approx(compare_fields(b, a).l1_u, rel=1e-12)
    with pytest.raises(DomainError):
        compare_fields(a, uniform_fields(SohGrid((5, 5), (1.0, 1.0)), 1.0, (1.0, 0.0)))


def test_compare_fields_masks_empty_cells():
    grid = SohGrid((4,), (1.0,))
    a = uniform_fields(grid, 1.0, (1.0, 0.0))
    b = a.copy(u=np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 0.0]]))
    b.valid[1] = False
    masked = compare_fields(a, b)
    assert masked.cells_compared == 3 and masked.l1_u == 0.0
    assert compare_fields(a, b, mask_empty=False).l1_u == pytest.approx(math.pi / 8)
