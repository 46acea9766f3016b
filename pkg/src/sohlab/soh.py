"""Finite-volume solver for the SOH system on periodic grids.

One time step is the relaxation splitting

1. Rusanov update of the conservative system
   ``d_t rho + div(c1 rho u) = 0``,
   ``d_t (rho u) + div(c2 rho u (x) u) + d grad rho = 0``;
2. renormalization ``u <- u / |u|`` (the stiff relaxation limit);
3. optionally an explicit step for ``c3 P_{u^perp} Lap(rho u) / rho``.

Fields are cell averages: ``rho`` has the grid shape and ``u`` has the grid
shape plus a trailing axis of length ``m`` (the velocity dimension, which may
exceed the number of spatial axes).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np

from .coefficients import CoefficientSet
from .errors import ConfigurationError, DomainError, StepRejected

DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class SohGrid:
    """Uniform periodic grid of ``cells`` on ``[0, box_a)`` per axis."""

    cells: tuple
    box: tuple

    def __post_init__(self):
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        box = tuple(float(b) for b in np.atleast_1d(self.box))
        if len(cells) not in (1, 2) or len(cells) != len(box):
            raise DomainError("grid must have 1 or 2 axes with matching box lengths")
        if min(cells) < 4:
            raise DomainError("need at least 4 cells per axis")
        if min(box) <= 0:
            raise DomainError("box lengths must be positive")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "box", box)

    @property
    def dims(self):
        return len(self.cells)

    @property
    def dx(self):
        return tuple(b / c for b, c in zip(self.box, self.cells))

    @property
    def cell_volume(self):
        return float(np.prod(self.dx))

    def centers(self, axis=0):
        return (np.arange(self.cells[axis]) + 0.5) * self.dx[axis]

    def mesh(self):
        """Cell-center coordinates, one array of the grid shape per axis."""
        return np.meshgrid(*(self.centers(a) for a in range(self.dims)), indexing="ij")


@dataclass
class SohFields:
    """Density and orientation on a :class:`SohGrid`.

    ``valid`` marks cells that carry an orientation (cells coarse-grained
    from zero particles do not); ``count`` is the particle count when the
    fields come from an ensemble.
    """

    grid: SohGrid
    rho: np.ndarray
    u: np.ndarray
    t: float = 0.0
    valid: np.ndarray = None
    count: np.ndarray = None

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if self.rho.shape != self.grid.cells:
            raise DomainError(f"rho shape {self.rho.shape} does not match grid {self.grid.cells}")
        if self.u.shape[:-1] != self.grid.cells:
            raise DomainError("u must have the grid shape plus a velocity axis")
        if self.valid is None:
            self.valid = np.ones(self.grid.cells, dtype=bool)

    @property
    def m(self):
        return self.u.shape[-1]

    def mass(self):
        return float(self.rho.sum() * self.grid.cell_volume)

    def copy(self, **changes):
        base = dict(rho=self.rho.copy(), u=self.u.copy(), valid=self.valid.copy(),
                    count=None if self.count is None else self.count.copy())
        base.update(changes)
        return replace(self, **base)


def uniform_fields(grid, rho0, u0, t=0.0):
    """Constant state ``(rho0, u0)`` on ``grid``."""
    u0 = np.asarray(u0, dtype=float)
    rho = np.full(grid.cells, float(rho0))
    u = np.broadcast_to(u0 / np.linalg.norm(u0), grid.cells + u0.shape).copy()
    return SohFields(grid, rho, u, t)


# --------------------------------------------------------------------------
# characteristic structure
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class WaveSpeeds:
    """Characteristic speeds along a direction making ``cos_angle`` with ``u``.

    ``hyperbolic`` is False where the sound-speed radicand is negative; with
    the absolute-value fix the speeds are still finite there.
    """

    lambda_minus: np.ndarray
    lambda_zero: np.ndarray
    lambda_plus: np.ndarray
    sound_speed: np.ndarray
    hyperbolic: np.ndarray

    def max_abs(self):
        return np.maximum(np.maximum(np.abs(self.lambda_minus), np.abs(self.lambda_plus)),
                          np.abs(self.lambda_zero))


def characteristic_speeds(c1, c2, d, cos_angle, fix=True):
    """Eigenvalues of the inviscid SOH system for propagation direction ``xi``.

    ``cos_angle`` is ``u . xi`` (scalar or array).
    """
    if not np.all(np.asarray(d) > 0):
        raise DomainError("d must be positive")
    s = np.asarray(cos_angle, dtype=float)
    radicand = (c2 - c1) ** 2 * s**2 + 4.0 * d * (1.0 - s**2)
    hyperbolic = radicand >= 0
    if fix:
        cs = np.sqrt(np.abs(radicand))
    else:
        cs = np.sqrt(np.where(hyperbolic, radicand, np.nan))
    mean = (c1 + c2) * s
    return WaveSpeeds(lambda_minus=0.5 * (mean - cs), lambda_zero=c1 * s,
                      lambda_plus=0.5 * (mean + cs), sound_speed=cs,
                      hyperbolic=hyperbolic)


def rsoh_hyperbolicity_bound(c1, c2, d):
    """Largest ``|u|`` for which the relaxed conservative system stays hyperbolic.

    Returns None when ``c2 >= c1`` (hyperbolic for every ``|u|``).
    """
    if not c1 > 0:
        raise DomainError("c1 must be positive")
    if not c2 > 0:
        raise DomainError("c2 must be positive")
    if c2 >= c1:
        return None
    r = c2 / c1
    return math.sqrt(d / (r * (1.0 - r)))


# --------------------------------------------------------------------------
# solver
# --------------------------------------------------------------------------

@dataclass
class SohSolverConfig:
    coeffs: CoefficientSet
    cfl: float = 0.5
    viscous: bool = False
    dt_cap: float = None
    nonhyperbolic_fix: bool = True

    def __post_init__(self):
        if not 0 < self.cfl <= 1:
            raise ConfigurationError("cfl must lie in (0, 1]")
        if self.viscous and self.coeffs.c3 < 0:
            raise ConfigurationError("viscous step needs c3 >= 0")
        if self.dt_cap is not None and not self.dt_cap > 0:
            raise ConfigurationError("dt_cap must be positive")


def interface_speeds(fields, cfg, axis):
    """Rusanov dissipation speed at the ``i+1/2`` faces along ``axis``.

    Max over the two adjacent cells of the largest characteristic speed
    along the face normal, computed from the unit orientation.
    """
    c = cfg.coeffs
    norm = np.linalg.norm(fields.u, axis=-1)
    s = fields.u[..., axis] / np.where(norm > 0, norm, 1.0)
    cell = characteristic_speeds(c.c1, c.c2, c.d, s, fix=cfg.nonhyperbolic_fix).max_abs()
    return np.maximum(cell, np.roll(cell, -1, axis=axis))


def stable_dt(fields, cfg):
    """CFL time step ``cfl / sum_a(max a_a / dx_a)`` for the unsplit update."""
    rate = 0.0
    for axis, h in enumerate(fields.grid.dx):
        rate += float(np.max(interface_speeds(fields, cfg, axis))) / h
    if not rate > 0:
        raise StepRejected("zero wave speed; cannot pick a time step")
    return cfg.cfl / rate


def _physical_flux(rho, q, axis, c):
    ux = q[..., axis] / rho
    f_rho = c.c1 * q[..., axis]
    f_q = c.c2 * q * ux[..., None]
    f_q[..., axis] += c.d * rho
    return f_rho, f_q


def rusanov_step(fields, cfg, dt):
    """Conservative Rusanov update; the returned ``u`` is not renormalized."""
    c = cfg.coeffs
    rho = fields.rho
    q = rho[..., None] * fields.u
    new_rho = rho.copy()
    new_q = q.copy()
    for axis, h in enumerate(fields.grid.dx):
        a = interface_speeds(fields, cfg, axis)
        rho_r = np.roll(rho, -1, axis=axis)
        q_r = np.roll(q, -1, axis=axis)
        fl_rho, fl_q = _physical_flux(rho, q, axis, c)
        fr_rho, fr_q = _physical_flux(rho_r, q_r, axis, c)
        flux_rho = 0.5 * (fl_rho + fr_rho) - 0.5 * a * (rho_r - rho)
        flux_q = 0.5 * (fl_q + fr_q) - 0.5 * a[..., None] * (q_r - q)
        lam = dt / h
        new_rho -= lam * (flux_rho - np.roll(flux_rho, 1, axis=axis))
        new_q -= lam * (flux_q - np.roll(flux_q, 1, axis=axis))
    if not np.all(np.isfinite(new_rho)) or np.any(new_rho <= 0):
        bad = int(np.sum(~(new_rho > 0)))
        raise StepRejected(f"non-positive density in {bad} cells (dt={dt:.3e}); halve dt")
    return fields.copy(rho=new_rho, u=new_q / new_rho[..., None], t=fields.t + dt)


def normalize_velocity(fields, fallback=None):
    """Project the orientation back onto the unit sphere, cell by cell.

    Cells with ``|u| < 1e-12`` take their orientation from ``fallback``
    (the pre-step fields) or keep the raw vector if none is given.
    """
    norm = np.linalg.norm(fields.u, axis=-1)
    degenerate = norm < DEGENERATE_NORM
    safe = np.where(degenerate, 1.0, norm)
    u = fields.u / safe[..., None]
    if np.any(degenerate) and fallback is not None:
        u[degenerate] = fallback.u[degenerate]
    return fields.copy(rho=fields.rho, u=u)


def discrete_laplacian(f, grid):
    """Periodic central Laplacian over the spatial axes of ``f``."""
    out = np.zeros_like(f)
    for axis, h in enumerate(grid.dx):
        out += (np.roll(f, -1, axis=axis) - 2.0 * f + np.roll(f, 1, axis=axis)) / h**2
    return out


def viscous_dt_limit(fields, c3):
    """Largest explicit viscous step for the density-weighted Laplacian."""
    if c3 <= 0:
        return math.inf
    ratio = float(fields.rho.max() / fields.rho.min())
    return 1.0 / (c3 * ratio * sum(2.0 / h**2 for h in fields.grid.dx))


def viscous_step(fields, cfg, dt):
    """Explicit step of ``d_t u = (c3/rho) P_{u^perp} Lap(rho u)``, then renormalize."""
    c3 = cfg.coeffs.c3
    if c3 == 0:
        return fields.copy()
    limit = viscous_dt_limit(fields, c3)
    if dt > limit * (1 + 1e-12):
        raise ConfigurationError(f"viscous step unstable: dt={dt:.3e} > limit {limit:.3e}")
    u = fields.u
    lap = discrete_laplacian(fields.rho[..., None] * u, fields.grid)
    tangential = lap - np.sum(lap * u, axis=-1, keepdims=True) * u
    raw = u + dt * (c3 / fields.rho)[..., None] * tangential
    return normalize_velocity(fields.copy(rho=fields.rho, u=raw), fallback=fields)


def _pick_dt(fields, cfg, dt, t_stop):
    if dt is None:
        dt = stable_dt(fields, cfg)
        if cfg.dt_cap is not None:
            dt = min(dt, cfg.dt_cap)
        if cfg.viscous:
            dt = min(dt, 0.9 * viscous_dt_limit(fields, cfg.coeffs.c3))
    if t_stop is not None and fields.t + dt > t_stop:
        dt = t_stop - fields.t
    return dt


def soh_step(fields, cfg, dt=None, t_stop=None, diagnostics=None):
    """One relaxation-splitting step; returns ``(new_fields, dt_used)``.

    ``dt`` defaults to the CFL step. ``t_stop`` clips the step so the new
    time does not overshoot. If ``diagnostics`` is a dict, the
    pre-normalization drift ``max | |u~| - 1 |`` is stored under
    ``"norm_drift"``.
    """
    dt = _pick_dt(fields, cfg, dt, t_stop)
    tilde = rusanov_step(fields, cfg, dt)
    if diagnostics is not None:
        diagnostics["norm_drift"] = float(np.max(np.abs(np.linalg.norm(tilde.u, axis=-1) - 1.0)))
    new = normalize_velocity(tilde, fallback=fields)
    if cfg.viscous:
        new = viscous_step(new, cfg, dt)
    return new, dt


def nonconservative_step(fields, cfg, dt=None, t_stop=None, diagnostics=None):
    """Naive shock-capturing step on the primitive form, for contrast runs.

    Density uses the same conservative Rusanov flux; the orientation is
    advanced with centered differences of
    ``d_t u + c2 (u . grad) u + (d / rho) P_{u^perp} grad rho = 0``
    plus the same local Lax-Friedrichs dissipation, then renormalized.
    """
    dt = _pick_dt(fields, cfg, dt, t_stop)
    c = cfg.coeffs
    rho, u = fields.rho, fields.u
    new_rho = rho.copy()
    du = np.zeros_like(u)
    for axis, h in enumerate(fields.grid.dx):
        a = interface_speeds(fields, cfg, axis)
        rho_r, rho_l = np.roll(rho, -1, axis=axis), np.roll(rho, 1, axis=axis)
        u_r, u_l = np.roll(u, -1, axis=axis), np.roll(u, 1, axis=axis)
        q_axis = c.c1 * rho * u[..., axis]
        flux = 0.5 * (q_axis + np.roll(q_axis, -1, axis=axis)) - 0.5 * a * (rho_r - rho)
        new_rho -= dt / h * (flux - np.roll(flux, 1, axis=axis))
        grad_u = (u_r - u_l) / (2 * h)
        grad_rho = (rho_r - rho_l) / (2 * h)
        e = np.zeros(u.shape[-1])
        e[axis] = 1.0
        pressure = grad_rho[..., None] * (e - u[..., axis][..., None] * u)
        a_l = np.roll(a, 1, axis=axis)[..., None]
        visc = (a[..., None] * (u_r - u) - a_l * (u - u_l)) / (2 * h)
        du += -c.c2 * u[..., axis][..., None] * grad_u - c.d * pressure / rho[..., None] + visc
    if not np.all(np.isfinite(new_rho)) or np.any(new_rho <= 0):
        raise StepRejected("non-positive density in non-conservative step")
    raw = fields.copy(rho=new_rho, u=u + dt * du, t=fields.t + dt)
    new = normalize_velocity(raw, fallback=fields)
    if cfg.viscous:
        new = viscous_step(new, cfg, dt)
    return new, dt


SCHEMES = {"relaxation": soh_step, "nonconservative": nonconservative_step}


def soh_run(init, cfg, t_end, snapshot_every=None, scheme="relaxation", diagnostics=None):
    """Advance ``init`` to ``t_end``; returns the list of snapshots.

    Snapshots are taken at ``init.t``, every ``snapshot_every`` time units
    (steps are clipped to land on them) and at ``t_end``. If
    ``diagnostics`` is a dict it collects ``steps`` and the largest
    pre-normalization drift ``max_norm_drift``.
    """
    if t_end < init.t:
        raise DomainError("t_end precedes the initial time")
    step = SCHEMES[scheme]
    snaps = [init.copy()]
    fields = init
    if diagnostics is not None:
        diagnostics.setdefault("steps", 0)
        diagnostics.setdefault("max_norm_drift", 0.0)
    targets = []
    if snapshot_every:
        k = 1
        while init.t + k * snapshot_every < t_end - 1e-12 * max(1.0, t_end):
            targets.append(init.t + k * snapshot_every)
            k += 1
    targets.append(t_end)
    for target in targets:
        while fields.t < target:
            info = {}
            fields, _ = step(fields, cfg, t_stop=target, diagnostics=info)
            if abs(fields.t - target) <= 1e-12 * max(1.0, abs(target)):
                fields.t = target
            if diagnostics is not None:
                diagnostics["steps"] += 1
                diagnostics["max_norm_drift"] = max(diagnostics["max_norm_drift"],
                                                    info.get("norm_drift", 0.0))
        if fields is not snaps[-1] and fields.t > snaps[-1].t:
            snaps.append(fields.copy())
    return snaps


# --------------------------------------------------------------------------
# steady-state residual (node-based, non-periodic)
# --------------------------------------------------------------------------

def steady_residual(rho, u, spacing, coeffs):
    """Pointwise residual of the stationary inviscid SOH equations.

    ``rho`` and ``u`` are nodal samples on a uniform (non-periodic) mesh with
    the given ``spacing`` per axis; derivatives use second-order centered
    differences, so only interior nodes are meaningful. Returns
    ``(mass_residual, momentum_residual)`` with the momentum residual of
    shape ``rho.shape + (m,)``.
    """
    dims = rho.ndim
    m = u.shape[-1]
    c = coeffs
    div_flux = np.zeros_like(rho)
    advect = np.zeros_like(u)
    grad_rho = np.zeros(rho.shape + (m,))
    for axis in range(dims):
        h = spacing[axis]
        def central(f):
            return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2 * h)
        div_flux += central(c.c1 * rho * u[..., axis])
        advect += u[..., axis][..., None] * central(u)
        grad_rho[..., axis] = central(rho)
    tangential = grad_rho - np.sum(grad_rho * u, axis=-1, keepdims=True) * u
    momentum = rho[..., None] * c.c2 * advect + c.d * tangential
    return div_flux, momentum
