"""Initial conditions, exact mills, and particle-vs-continuum comparison."""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import DomainError
from .particles import ParticleEnsemble
from .soh import SohFields, SohGrid, steady_residual

VMF_TABLE_NODES = 10_000


# --------------------------------------------------------------------------
# milling solutions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MillingParams:
    rho0: float
    r0: float
    c2: float
    d: float

    def __post_init__(self):
        if not (self.rho0 > 0 and self.r0 > 0 and self.d > 0):
            raise DomainError("mill needs rho0, r0, d > 0")

    @property
    def exponent(self):
        return self.c2 / self.d


def milling_solution(p, x, annulus=None):
    """Stationary mill: ``rho = rho0 (r/r0)^(c2/d)``, ``u = x^perp / |x|``.

    ``x`` has shape ``(..., 2)``. If ``annulus=(r_min, r_max)`` is given every
    point must lie inside it.
    """
    x = np.asarray(x, dtype=float)
    r = np.hypot(x[..., 0], x[..., 1])
    if np.any(r == 0):
        raise DomainError("mill is singular at the origin")
    if annulus is not None:
        r_min, r_max = annulus
        if not r_min > 0:
            raise DomainError("annulus inner radius must be positive")
        if np.any((r < r_min * (1 - 1e-12)) | (r > r_max * (1 + 1e-12))):
            raise DomainError("point outside the annulus")
    rho = p.rho0 * (r / p.r0) ** p.exponent
    u = np.stack([-x[..., 1] / r, x[..., 0] / r], axis=-1)
    return rho, u


def milling_profile_shape(p):
    """'convex', 'linear' or 'concave' according to ``c2/d`` vs 1."""
    e = p.exponent
    if math.isclose(e, 1.0, rel_tol=1e-12):
        return "linear"
    return "convex" if e > 1 else "concave"


def mill_residual(p, coeffs, n, annulus=(1.0, 3.0)):
    """Max-norm steady residual of the sampled mill on an ``n x n`` node mesh.

    The mesh covers ``[-r_max, r_max]^2``; only nodes whose centered stencil
    stays inside the annulus are scored. Returns ``(mass, momentum, h)``.
    """
    r_min, r_max = annulus
    xs = np.linspace(-r_max, r_max, n)
    h = xs[1] - xs[0]
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    r = np.hypot(X, Y)
    inside = (r >= r_min + h * math.sqrt(2)) & (r <= r_max - h * math.sqrt(2))
    pts = np.stack([X, Y], axis=-1)
    safe = np.where(r[..., None] > 0, pts, r_max)
    rho, u = milling_solution(p, safe)
    mass, mom = steady_residual(rho, u, (h, h), coeffs)
    return float(np.abs(mass[inside]).max()), float(np.abs(mom[inside]).max()), h


# --------------------------------------------------------------------------
# VMF sampling
# --------------------------------------------------------------------------

def _circle_table(d, nodes=VMF_TABLE_NODES):
    phi = np.linspace(-math.pi, math.pi, nodes)
    dens = np.exp((np.cos(phi) - 1.0) / d)
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(phi))))
    return phi, cdf / cdf[-1]


def sample_vmf(u, d, size, gen):
    """``size`` draws from ``VMF(u, d)`` on ``S^{m-1}`` (m = 2 or 3).

    m = 2 inverts a tabulated CDF of the angle; m = 3 inverts the exact CDF
    of ``w = u . v`` and adds a uniform tangent direction.
    """
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    if u.size == 2:
        phi, cdf = _circle_table(d)
        angle = np.interp(gen.random(size), cdf, phi) + math.atan2(u[1], u[0])
        return np.stack([np.cos(angle), np.sin(angle)], axis=1)
    if u.size == 3:
        q = gen.random(size)
        w = 1.0 + d * np.log(q + (1.0 - q) * math.exp(-2.0 / d))
        w = np.clip(w, -1.0, 1.0)
        helper = np.eye(3)[np.argmin(np.abs(u))]
        e1 = helper - helper.dot(u) * u
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(u, e1)
        psi = 2.0 * math.pi * gen.random(size)
        tang = np.cos(psi)[:, None] * e1 + np.sin(psi)[:, None] * e2
        return w[:, None] * u + np.sqrt(1.0 - w**2)[:, None] * tang
    raise DomainError("VMF sampling supports m = 2 and 3")


# --------------------------------------------------------------------------
# Riemann problems
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RiemannSpec:
    """Left state on ``[0, interface)``, right state on ``[interface, L)`` along x."""

    rho_l: float
    u_l: tuple
    rho_r: float
    u_r: tuple
    interface: float

    def __post_init__(self):
        if not (self.rho_l > 0 and self.rho_r > 0):
            raise DomainError("Riemann densities must be positive")
        for name in ("u_l", "u_r"):
            vec = np.asarray(getattr(self, name), dtype=float)
            if abs(np.linalg.norm(vec) - 1.0) > 1e-12:
                raise DomainError(f"{name} must be a unit vector")

    @classmethod
    def from_angles(cls, rho_l, angle_l, rho_r, angle_r, interface):
        return cls(rho_l, (math.cos(angle_l), math.sin(angle_l)),
                   rho_r, (math.cos(angle_r), math.sin(angle_r)), interface)


def riemann_init(spec, grid, t=0.0):
    """Piecewise-constant SOH fields for ``spec`` (cells split by their centers)."""
    if not 0 < spec.interface < grid.box[0]:
        raise DomainError("interface must lie inside the box")
    x = grid.mesh()[0]
    left = x < spec.interface
    rho = np.where(left, spec.rho_l, spec.rho_r)
    u = np.where(left[..., None], np.asarray(spec.u_l), np.asarray(spec.u_r))
    return SohFields(grid, rho, u, t)


def riemann_masses(spec, grid):
    """Exact masses ``(left, right)`` of the piecewise-constant density."""
    transverse = float(np.prod(grid.box[1:])) if grid.dims > 1 else 1.0
    lx = grid.box[0]
    return (spec.rho_l * spec.interface * transverse,
            spec.rho_r * (lx - spec.interface) * transverse)


def sample_riemann_particles(spec, grid, d, n, box, gen, seed=0):
    """Particles matching the Riemann state: positions from the density, velocities VMF.

    ``box`` is the particle box (its first ``grid.dims`` edges must equal the
    grid's). Each side receives particles in proportion to its mass;
    within a side positions are uniform (the inverse CDF of a constant
    density), velocities are ``VMF(u_side, d)``. Returns the ensemble and
    the mass carried by each particle.
    """
    box = tuple(float(b) for b in box)
    for a in range(grid.dims):
        if abs(box[a] - grid.box[a]) > 1e-12 * box[a]:
            raise DomainError("particle box does not match the grid")
    m = len(box)
    m_l, m_r = riemann_masses(spec, grid)
    n_l = int(round(n * m_l / (m_l + m_r)))
    n_r = n - n_l
    x = gen.random((n, m)) * np.asarray(box)
    x[:n_l, 0] = spec.interface * gen.random(n_l)
    x[n_l:, 0] = spec.interface + (box[0] - spec.interface) * gen.random(n_r)
    v = np.empty((n, m))
    v[:n_l] = sample_vmf(_lift(spec.u_l, m), d, n_l, gen)
    v[n_l:] = sample_vmf(_lift(spec.u_r, m), d, n_r, gen)
    ens = ParticleEnsemble(x=x, v=v, box=box, seed=seed)
    return ens, (m_l + m_r) / n


def _lift(u, m):
    out = np.zeros(m)
    out[:len(u)] = u
    return out


# --------------------------------------------------------------------------
# noisy initial data
# --------------------------------------------------------------------------

def noisy_fields(grid, rho0, u0, gen, rho_noise=0.2, angle_noise=0.3, smooth=0):
    """Constant state perturbed cell by cell (m = 2 orientation).

    Density is multiplied by ``1 + rho_noise * U(-1, 1)`` and the angle of
    ``u0`` shifted by ``angle_noise * U(-1, 1)``; ``smooth`` box-filter
    passes make the noise spatially correlated.
    """
    base = math.atan2(u0[1], u0[0])
    rho = rho0 * (1.0 + rho_noise * gen.uniform(-1, 1, grid.cells))
    angle = angle_noise * gen.uniform(-1, 1, grid.cells)
    for _ in range(smooth):
        rho = _box_filter(rho)
        angle = _box_filter(angle)
    angle += base
    u = np.stack([np.cos(angle), np.sin(angle)], axis=-1)
    return SohFields(grid, rho, u)


def noisy_band_fields(grid, rho_in, rho_out, center, width, u0, gen, rho_noise=0.1,
                      angle_noise=0.2):
    """Dense band ``|x - center| < width/2`` (along axis 0) on a dilute background, with noise."""
    x = grid.mesh()[0]
    band = np.abs(x - center) < width / 2
    f = noisy_fields(grid, 1.0, u0, gen, rho_noise, angle_noise)
    f.rho = f.rho * np.where(band, rho_in, rho_out)
    return f


def _box_filter(f):
    out = f.copy()
    for axis in range(f.ndim):
        out = (np.roll(out, 1, axis) + out + np.roll(out, -1, axis)) / 3.0
    return out


# --------------------------------------------------------------------------
# comparison
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonReport:
    l1_rho: float
    l1_u: float
    cells_compared: int
    t: float

    CSV_HEADER = ("t", "l1_rho", "l1_u", "cells_compared")

    def as_row(self):
        return (self.t, self.l1_rho, self.l1_u, self.cells_compared)


def orientation_gap(u_a, u_b):
    """Angle in radians between unit orientations (rows).

    ``2 atan2(|a - b|, |a + b|)`` stays accurate near 0 and pi, where
    ``arccos`` of the dot product loses half the digits.
    """
    return 2.0 * np.arctan2(np.linalg.norm(u_a - u_b, axis=-1), np.linalg.norm(u_a + u_b, axis=-1))


def compare_fields(a, b, mask_empty=True):
    """Density and orientation discrepancy of ``b`` relative to ``a``.

    ``l1_rho = sum|rho_a - rho_b| / sum rho_a``; ``l1_u`` is the mean angle
    between unit orientations over compared cells. With ``mask_empty``
    only cells valid in both fields are compared for ``u``.
    """
    if a.grid != b.grid:
        raise DomainError("fields live on different grids")
    if a.m != b.m:
        raise DomainError("fields have different velocity dimensions")
    total = float(a.rho.sum())
    if not total > 0:
        raise DomainError("reference field has no mass")
    l1_rho = float(np.abs(a.rho - b.rho).sum() / total)
    mask = (a.valid & b.valid) if mask_empty else np.ones(a.grid.cells, dtype=bool)
    n = int(mask.sum())
    l1_u = float(orientation_gap(a.u[mask], b.u[mask]).mean()) if n else 0.0
    return ComparisonReport(l1_rho=l1_rho, l1_u=l1_u, cells_compared=n, t=float(a.t))
