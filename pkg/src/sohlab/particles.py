"""Self-propelled particles with local alignment.

Two dynamics share one ensemble representation:

* :func:`step_discrete` -- the time-discrete Vicsek update with a uniform
  noise cone of half-angle ``d_angle``;
* :func:`step_continuous` -- one projected Euler step of the sphere-valued
  SDE with alignment frequency ``nu`` and angular diffusion ``D``.

Neighbor currents include the particle itself. Random numbers come from
per-particle Philox streams keyed by the seed and indexed by the step
counter, so trajectories are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import math

import numpy as np

from . import rng
from .errors import ConfigurationError, DomainError
from .neighbors import CellList
from .soh import SohFields

NOISE_MODELS = ("uniform_cone", "brownian")
EMPTY_CURRENT = 1e-12


@dataclass(frozen=True)
class ParticleParams:
    """Run parameters for a particle simulation.

    ``D`` is the angular diffusion of the continuous model and ``d_angle``
    the noise-cone half-width of the discrete one; only the one matching
    ``noise_model`` is used.
    """

    n: int
    m: int = 2
    c: float = 1.0
    nu: float = 1.0
    D: float = 0.0
    R: float = 1.0
    dt: float = 0.01
    box: tuple = (10.0, 10.0)
    noise_model: str = "brownian"
    d_angle: float = 0.0
    seed: int = 0
    parallel: bool = False

    def __post_init__(self):
        box = tuple(float(b) for b in np.atleast_1d(self.box))
        object.__setattr__(self, "box", box)
        if self.n < 1:
            raise DomainError("need at least one particle")
        if self.m not in (2, 3):
            raise DomainError("particle dimension must be 2 or 3")
        if len(box) != self.m:
            raise DomainError(f"box needs {self.m} edge lengths, got {len(box)}")
        for name in ("c", "nu", "R", "dt"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.D < 0:
            raise DomainError("D must be nonnegative")
        if self.R > min(box) / 2:
            raise DomainError("interaction radius must not exceed half the smallest box edge")
        if self.noise_model not in NOISE_MODELS:
            raise DomainError(f"noise_model must be one of {NOISE_MODELS}")

    @property
    def noise_ratio(self):
        """Macroscopic noise ``d = D / nu``."""
        return self.D / self.nu


@dataclass
class ParticleEnsemble:
    """Positions ``x`` (n, m) in a periodic box and unit velocities ``v`` (n, m).

    ``step`` counts completed updates; together with ``seed`` it is the
    counter of every particle's random stream.
    """

    x: np.ndarray
    v: np.ndarray
    box: tuple
    t: float = 0.0
    step: int = 0
    seed: int = 0

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=float)
        self.v = np.ascontiguousarray(self.v, dtype=float)
        self.box = tuple(float(b) for b in self.box)
        if self.x.shape != self.v.shape or self.x.ndim != 2:
            raise DomainError("x and v must both have shape (n, m)")
        if self.x.shape[1] != len(self.box):
            raise DomainError("box dimension does not match positions")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def m(self):
        return self.x.shape[1]

    def copy(self):
        return replace(self, x=self.x.copy(), v=self.v.copy())


def make_ensemble(params, x=None, v=None, aligned=None):
    """Ensemble for ``params``: uniform positions, isotropic or ``aligned`` velocities.

    Missing positions/velocities are drawn from the params' seed on a stream
    separate from the dynamics.
    """
    gen = np.random.Generator(np.random.Philox(key=params.seed ^ 0x5EED))
    n, m = params.n, params.m
    if x is None:
        x = gen.random((n, m)) * np.asarray(params.box)
    if v is None:
        if aligned is not None:
            v = np.tile(np.asarray(aligned, dtype=float) / np.linalg.norm(aligned), (n, 1))
        else:
            v = gen.standard_normal((n, m))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
    ens = ParticleEnsemble(x=x, v=v, box=params.box, seed=params.seed)
    ens.x = np.mod(ens.x, np.asarray(ens.box))
    return ens


# --------------------------------------------------------------------------
# alignment
# --------------------------------------------------------------------------

def neighbor_currents(ens, R, parallel=False, cells=None):
    """``J_k`` for every particle (self included)."""
    cells = CellList(ens.x, ens.box, R) if cells is None else cells
    return cells.currents(ens.v, parallel=parallel)


def mean_directions(J, fallback):
    """Normalize currents; rows with ``|J| < 1e-12`` take ``fallback``."""
    norm = np.linalg.norm(J, axis=1)
    empty = norm < EMPTY_CURRENT
    out = J / np.where(empty, 1.0, norm)[:, None]
    out[empty] = fallback[empty]
    return out, empty


def neighbor_average(ens, k, R, cells=None):
    """Normalized neighbor current of particle ``k``, or None if it vanishes."""
    if not 0 <= k < ens.n:
        raise IndexError(k)
    cells = CellList(ens.x, ens.box, R) if cells is None else cells
    ci, cj = cells.pairs()
    J = ens.v[cj[ci == k]].sum(axis=0)
    norm = np.linalg.norm(J)
    if norm < EMPTY_CURRENT:
        return None
    return J / norm


def tangent_basis(w):
    """Orthonormal basis of the plane orthogonal to each row of ``w`` (m = 3)."""
    helper = np.zeros_like(w)
    pick = np.argmin(np.abs(w), axis=1)
    helper[np.arange(w.shape[0]), pick] = 1.0
    e1 = helper - np.sum(helper * w, axis=1, keepdims=True) * w
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(w, e1)
    return e1, e2


def rotate_by_noise(vbar, theta, unif):
    """``cos(theta) vbar + sin(theta) w`` with ``w`` uniform on the tangent sphere.

    ``unif`` holds one uniform per particle selecting ``w`` (a sign for
    m = 2, an angle for m = 3).
    """
    m = vbar.shape[1]
    if m == 2:
        perp = np.stack([-vbar[:, 1], vbar[:, 0]], axis=1)
        w = np.where(unif[:, None] < 0.5, -perp, perp)
    else:
        e1, e2 = tangent_basis(vbar)
        psi = 2.0 * np.pi * unif[:, None]
        w = np.cos(psi) * e1 + np.sin(psi) * e2
    out = np.cos(theta)[:, None] * vbar + np.sin(theta)[:, None] * w
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def _advance(ens, new_v, p):
    x = np.mod(ens.x + p.c * p.dt * ens.v, np.asarray(ens.box))
    # np.mod can return the box edge itself for tiny negative inputs
    x[x >= np.asarray(ens.box)] = 0.0
    return replace(ens, x=x, v=new_v, t=ens.t + p.dt, step=ens.step + 1)


def step_discrete(ens, p):
    """Synchronous Vicsek update with a uniform noise cone.

    All neighbor averages use the pre-step state. With ``nu * dt = 1`` the
    alignment target is the neighbor mean direction itself (the original
    model); for ``nu * dt < 1`` it is the normalized partial relaxation
    ``v + nu dt (vbar - v)``. Positions advance with the pre-step velocity.
    """
    if p.noise_model != "uniform_cone":
        raise ConfigurationError("step_discrete needs noise_model='uniform_cone'")
    if not 0.0 <= p.d_angle <= math.pi:
        raise DomainError(f"noise cone d_angle must lie in [0, pi], got {p.d_angle}")
    relax = p.nu * p.dt
    if relax > 1.0 + 1e-12:
        raise ConfigurationError("discrete model needs nu * dt <= 1")
    J = neighbor_currents(ens, p.R, parallel=p.parallel)
    vbar, _ = mean_directions(J, ens.v)
    if relax < 1.0:
        target, _ = mean_directions(ens.v + relax * (vbar - ens.v), ens.v)
    else:
        target = vbar
    u = rng.uniforms(ens.seed, ens.step, np.arange(ens.n))
    theta = p.d_angle * u[:, 0]
    return _advance(ens, rotate_by_noise(target, theta, u[:, 1]), p)


def max_continuous_dt(p):
    return 0.5 / p.nu


def step_continuous(ens, p):
    """Projected Euler-Maruyama step on the sphere, then renormalization.

    ``v* = v + P_{v^perp}(nu vbar dt + sqrt(2 D dt) xi)``, ``v_new = v*/|v*|``.
    """
    if p.noise_model != "brownian":
        raise ConfigurationError("step_continuous needs noise_model='brownian'")
    if p.nu * p.dt > 0.5 * (1 + 1e-12):
        raise ConfigurationError(f"nu*dt = {p.nu * p.dt:.3g} exceeds 0.5")
    v = ens.v
    J = neighbor_currents(ens, p.R, parallel=p.parallel)
    vbar, _ = mean_directions(J, v)
    xi = rng.normals(ens.seed, ens.step, np.arange(ens.n), ens.m)
    force = p.nu * p.dt * vbar + math.sqrt(2.0 * p.D * p.dt) * xi
    force -= np.sum(force * v, axis=1, keepdims=True) * v
    new_v = v + force
    new_v /= np.linalg.norm(new_v, axis=1, keepdims=True)
    return _advance(ens, new_v, p)


def stepper(p):
    return step_continuous if p.noise_model == "brownian" else step_discrete


def run_particles(ens, p, t_end, snapshot_every=None, callback=None):
    """Advance to ``t_end`` with fixed ``dt``; returns the list of snapshots.

    ``callback(ens)`` runs after every step. Times are tracked as
    ``step * dt`` offsets from the initial time to avoid drift.
    """
    step = stepper(p)
    t0, s0 = ens.t, ens.step
    n_steps = int(round((t_end - t0) / p.dt))
    every = None if not snapshot_every else max(1, int(round(snapshot_every / p.dt)))
    snaps = [ens.copy()]
    for i in range(1, n_steps + 1):
        ens = step(ens, p)
        ens.t = t0 + (ens.step - s0) * p.dt
        if callback is not None:
            callback(ens)
        if (every and i % every == 0) or i == n_steps:
            snaps.append(ens.copy())
    return snaps


# --------------------------------------------------------------------------
# observables
# --------------------------------------------------------------------------

def global_order_parameter(ens):
    """``|sum_k v_k| / n``."""
    return float(np.linalg.norm(ens.v.sum(axis=0)) / ens.n)


def empirical_fields(ens, grid, mass=None, min_count=1):
    """Coarse-grain the ensemble onto ``grid``.

    The grid's axes are the first ``grid.dims`` position coordinates.
    Each particle carries mass ``mass / n`` (default 1), so
    ``sum(rho) * cell_volume == mass``. Orientation is the normalized cell
    current; cells with fewer than ``min_count`` particles (or a vanishing
    current) are marked invalid and keep ``u = 0``.
    """
    mass = float(ens.n if mass is None else mass)
    idx = []
    for a in range(grid.dims):
        if abs(grid.box[a] - ens.box[a]) > 1e-12 * ens.box[a]:
            raise DomainError("grid does not cover the particle box")
        i = np.floor(ens.x[:, a] / grid.dx[a]).astype(np.int64)
        idx.append(np.clip(i, 0, grid.cells[a] - 1))
    flat = np.ravel_multi_index(tuple(idx), grid.cells)
    size = int(np.prod(grid.cells))
    count = np.bincount(flat, minlength=size)
    current = np.stack([np.bincount(flat, weights=ens.v[:, a], minlength=size)
                        for a in range(ens.m)], axis=1)
    rho = count * (mass / ens.n) / grid.cell_volume
    norm = np.linalg.norm(current, axis=1)
    valid = (count >= max(1, min_count)) & (norm > EMPTY_CURRENT)
    u = np.zeros_like(current)
    u[valid] = current[valid] / norm[valid, None]
    shape = grid.cells
    return SohFields(grid, rho.reshape(shape), u.reshape(shape + (ens.m,)), t=ens.t,
                     valid=valid.reshape(shape), count=count.reshape(shape))
