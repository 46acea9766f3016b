"""Von Mises-Fisher equilibria and the SOH closure coefficients.

All angular integrals are written in the polar angle ``theta`` measured from
the VMF direction, so an integral over the sphere ``S^{m-1}`` reduces to

    |S^{m-2}| * int_0^pi f(cos theta) sin^{m-2}(theta) dtheta.

Exponential weights ``exp(cos(theta)/d)`` are always evaluated shifted by their
maximum, ``exp((cos(theta) - 1)/d)``, so small noise does not overflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np
from scipy.linalg import solve_banded

from .errors import DomainError, SolverError

SUPPORTED_DIMS = (2, 3)

GAUSS_NODES = 512
TRAPEZOID_NODES = 100_001


def _check_d(d):
    if not (np.isfinite(d) and d > 0):
        raise DomainError(f"noise intensity d must be positive, got {d!r}")


def _check_m(m):
    if m not in SUPPORTED_DIMS:
        raise DomainError(f"dimension m must be one of {SUPPORTED_DIMS}, got {m!r}")


def sphere_area(dim):
    """Surface measure of the unit sphere ``S^dim``."""
    return 2.0 * math.pi ** ((dim + 1) / 2) / math.gamma((dim + 1) / 2)


# --------------------------------------------------------------------------
# quadrature rules
# --------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _legendre(n):
    return np.polynomial.legendre.leggauss(n)


def gauss_legendre(f, a, b, n=GAUSS_NODES, breaks=()):
    """Composite Gauss-Legendre quadrature of a vectorized ``f`` on [a, b].

    ``breaks`` are optional interior points where the integrand changes scale;
    each sub-interval gets its own ``n``-node rule.
    """
    x0, w0 = _legendre(n)
    edges = [a, *sorted(p for p in breaks if a < p < b), b]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        x = lo + half * (x0 + 1.0)
        total += half * np.dot(w0, f(x))
    return float(total)


def trapezoid(f, a, b, n=TRAPEZOID_NODES):
    """Composite trapezoid rule with ``n`` nodes (endpoints included)."""
    x = np.linspace(a, b, n)
    return float(np.trapezoid(f(x), x))


def _peak_breaks(d):
    # exp((cos - 1)/d) has width ~sqrt(d) about theta = 0 (and, for the
    # reflected weight, about theta = pi); split there so small d is resolved.
    w = 30.0 * math.sqrt(d)
    return tuple(p for p in (w, math.pi - w) if 0.0 < p < math.pi)


def theta_integral(f, d, rule="gauss"):
    """Integrate ``f(theta)`` over (0, pi) with the given rule."""
    if rule == "gauss":
        return gauss_legendre(f, 0.0, math.pi, breaks=_peak_breaks(d))
    if rule == "trapezoid":
        return trapezoid(f, 0.0, math.pi)
    raise ValueError(f"unknown quadrature rule {rule!r}")


# --------------------------------------------------------------------------
# VMF distribution and order parameter
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class VmfParams:
    """VMF distribution ``M_u(v) = exp(u.v / d) / Z_d`` on ``S^{m-1}``."""

    d: float
    m: int
    u: np.ndarray = field(default=None)

    def __post_init__(self):
        _check_d(self.d)
        _check_m(self.m)
        u = np.zeros(self.m) if self.u is None else np.asarray(self.u, dtype=float)
        if self.u is None:
            u[0] = 1.0
        if u.shape != (self.m,):
            raise DomainError(f"direction must have shape ({self.m},), got {u.shape}")
        if abs(np.linalg.norm(u) - 1.0) > 1e-12:
            raise DomainError("VMF direction must be a unit vector")
        object.__setattr__(self, "u", u)


def _radial_weight(theta, d, m):
    return np.exp((np.cos(theta) - 1.0) / d) * np.sin(theta) ** (m - 2)


def log_partition(d, m, rule="gauss"):
    """``log Z_d``, the VMF normalizing constant over the whole sphere."""
    _check_d(d)
    _check_m(m)
    integral = theta_integral(lambda t: _radial_weight(t, d, m), d, rule)
    return 1.0 / d + math.log(sphere_area(m - 2) * integral)


def vmf_pdf(p, v):
    """Density of ``VMF(p.u, p.d)`` at the unit vector(s) ``v``.

    ``v`` may be a single vector of shape ``(m,)`` or a stack ``(n, m)``.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != p.m:
        raise DomainError(f"v must have trailing dimension {p.m}")
    if np.any(np.abs(np.linalg.norm(v, axis=-1) - 1.0) > 1e-12):
        raise DomainError("vmf_pdf is only defined on the unit sphere")
    cos = v @ p.u
    return np.exp(cos / p.d - log_partition(p.d, p.m))


def order_parameter_c1(d, m, rule="gauss"):
    """Magnitude ``c1(d)`` of the VMF first moment."""
    _check_d(d)
    _check_m(m)
    num = theta_integral(lambda t: _radial_weight(t, d, m) * np.cos(t), d, rule)
    den = theta_integral(lambda t: _radial_weight(t, d, m), d, rule)
    return num / den


# --------------------------------------------------------------------------
# generalized collision invariant
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GciSolution:
    """Discrete solution ``g`` of the GCI boundary value problem.

    ``theta_grid`` holds the ``n_theta`` interior nodes ``i*pi/(n_theta+1)``;
    the homogeneous Dirichlet values at 0 and pi are implicit and exposed by
    :attr:`theta_full` / :attr:`g_full`.
    """

    d: float
    m: int
    theta_grid: np.ndarray
    g_values: np.ndarray
    residual: float

    @property
    def n_theta(self):
        return self.theta_grid.size

    @property
    def h_values(self):
        return self.g_values / np.sin(self.theta_grid)

    @property
    def theta_full(self):
        return np.concatenate(([0.0], self.theta_grid, [math.pi]))

    @property
    def g_full(self):
        return np.concatenate(([0.0], self.g_values, [0.0]))


def gci_operator_bands(d, m, n_theta):
    """Tridiagonal matrix and right-hand side of the discrete GCI problem.

    The operator is discretized in self-adjoint form,

        -(w g')' + (m-2) w g / sin^2 = w sin,    w = sin^{m-2} exp(cos/d),

    and each row is divided by ``w`` at its node, so only ratios of weights
    appear (this is what keeps tiny ``d`` from underflowing).

    Returns ``(theta, lower, diag, upper, rhs)`` with ``lower[i]`` coupling
    row ``i`` to node ``i-1`` and ``upper[i]`` to node ``i+1``.
    """
    h = math.pi / (n_theta + 1)
    theta = h * np.arange(1, n_theta + 1)
    half = h * (np.arange(n_theta + 1) + 0.5)

    def log_w(t):
        return (m - 2) * np.log(np.sin(t)) + np.cos(t) / d

    lw = log_w(theta)
    lw_half = log_w(half)
    w_minus = np.exp(lw_half[:-1] - lw) / h**2
    w_plus = np.exp(lw_half[1:] - lw) / h**2
    diag = w_minus + w_plus + (m - 2) / np.sin(theta) ** 2
    return theta, -w_minus, diag, -w_plus, np.sin(theta)


def apply_gci_operator(d, m, g_full):
    """Discrete operator applied to nodal values ``g_full`` (endpoints included)."""
    n_theta = g_full.size - 2
    _, lower, diag, upper, _ = gci_operator_bands(d, m, n_theta)
    return lower * g_full[:-2] + diag * g_full[1:-1] + upper * g_full[2:]


def solve_gci(d, m, n_theta=2048):
    """Solve ``L* g = sin(theta)`` with ``g(0) = g(pi) = 0``.

    Second-order central differences on a uniform grid; for m = 2 the
    ``(m-2)/sin^2`` term vanishes identically.
    """
    _check_d(d)
    _check_m(m)
    if n_theta < 64:
        raise DomainError(f"n_theta must be at least 64, got {n_theta}")
    theta, lower, diag, upper, rhs = gci_operator_bands(d, m, n_theta)
    ab = np.zeros((3, n_theta))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    try:
        g = solve_banded((1, 1), ab, rhs)
    except np.linalg.LinAlgError as exc:
        cond = _condition_estimate(lower, diag, upper)
        raise SolverError(f"GCI system is singular (condition ~ {cond:.3e})") from exc
    if not np.all(np.isfinite(g)):
        cond = _condition_estimate(lower, diag, upper)
        raise SolverError(f"GCI solve produced non-finite values (condition ~ {cond:.3e})")
    full = np.concatenate(([0.0], g, [0.0]))
    res = apply_gci_operator(d, m, full) - rhs
    return GciSolution(d=float(d), m=int(m), theta_grid=theta, g_values=g,
                       residual=float(np.max(np.abs(res))))


def _condition_estimate(lower, diag, upper):
    a = np.diag(diag) + np.diag(lower[1:], -1) + np.diag(upper[:-1], 1)
    return float(np.linalg.cond(a, 1))


def coefficient_c2(gci):
    """Velocity-transport coefficient ``c2`` from a GCI solution.

    Since ``h sin^m = g sin^{m-1}``, both integrals are evaluated with ``g``
    directly; the trapezoid rule on the GCI grid never touches theta = 0, pi
    because the integrands vanish there.
    """
    theta = gci.theta_full
    weight = np.exp((np.cos(theta) - 1.0) / gci.d) * gci.g_full * np.sin(theta) ** (gci.m - 1)
    den = np.trapezoid(weight, theta)
    if abs(den) < 1e-14:
        raise SolverError("degenerate GCI solution: c2 denominator vanishes")
    return float(np.trapezoid(weight * np.cos(theta), theta) / den)


def coefficient_c3(eta0, k, d, c2, m):
    """Viscosity ``c3 = eta0 * k * ((m - 1) d + c2)``."""
    for name, val in (("eta0", eta0), ("k", k), ("d", d), ("c2", c2)):
        if not np.isfinite(val):
            raise DomainError(f"{name} must be finite")
    if eta0 < 0:
        raise DomainError("eta0 must be nonnegative")
    if k <= 0:
        raise DomainError("kernel moment k must be positive")
    _check_d(d)
    return eta0 * k * ((m - 1) * d + c2)


# --------------------------------------------------------------------------
# interaction kernel
# --------------------------------------------------------------------------

KERNEL_KINDS = ("indicator", "gaussian")


@dataclass(frozen=True)
class Kernel:
    """Radial interaction kernel ``K(|xi|)``, normalized to unit mass on R^m.

    ``indicator`` is the ball of radius ``radius_scale``; ``gaussian`` has
    standard deviation ``radius_scale`` per axis.
    """

    kind: str = "indicator"
    radius_scale: float = 1.0
    m: int = 2

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise DomainError(f"kernel kind must be one of {KERNEL_KINDS}")
        if not (np.isfinite(self.radius_scale) and self.radius_scale > 0):
            raise DomainError("kernel radius_scale must be positive")
        _check_m(self.m)

    @property
    def support(self):
        return self.radius_scale if self.kind == "indicator" else 12.0 * self.radius_scale

    def profile(self, r):
        """Unnormalized radial profile."""
        r = np.asarray(r, dtype=float)
        if self.kind == "indicator":
            return (r <= self.radius_scale).astype(float)
        return np.exp(-0.5 * (r / self.radius_scale) ** 2)

    def radial_moment(self, power):
        """``int_{R^m} K(|xi|) |xi|^power dxi`` of the unnormalized profile."""
        shell = sphere_area(self.m - 1)
        val = gauss_legendre(lambda r: self.profile(r) * r ** (self.m - 1 + power),
                             0.0, self.support)
        return shell * val

    @property
    def mass(self):
        mass = self.radial_moment(0)
        if not (np.isfinite(mass) and mass > 0):
            raise DomainError("kernel is not normalizable")
        return mass

    def __call__(self, r):
        return self.profile(r) / self.mass


def kernel_moment_k(kernel):
    """``k = (1/2m) int K(|xi|) |xi|^2 dxi`` for the normalized kernel."""
    second = kernel.radial_moment(2) / kernel.mass
    if not (np.isfinite(second) and second > 0):
        raise DomainError("kernel second moment is not finite")
    return second / (2 * kernel.m)


# --------------------------------------------------------------------------
# closure constants
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientSet:
    """SOH closure constants for one (d, m)."""

    d: float
    m: int
    c1: float
    c2: float
    c3: float
    eta0: float = 0.0
    k: float = 0.125
    n_theta: int = 0
    gci_residual: float = 0.0

    CSV_HEADER = ("d", "m", "c1", "c2", "c3", "eta0", "k", "n_theta", "gci_residual")

    def __post_init__(self):
        if not 0.0 <= self.c1 <= 1.0:
            raise DomainError(f"c1 outside [0, 1]: {self.c1}")
        if self.c3 < 0:
            raise DomainError(f"c3 must be nonnegative: {self.c3}")

    def as_row(self):
        return (self.d, self.m, self.c1, self.c2, self.c3, self.eta0, self.k,
                self.n_theta, self.gci_residual)


def compute_coefficients(d, m, eta0=0.0, kernel=None, n_theta=2048):
    """Evaluate ``c1``, ``c2``, ``c3`` for noise ``d`` in dimension ``m``."""
    kernel = Kernel("indicator", 1.0, m) if kernel is None else kernel
    if kernel.m != m:
        raise DomainError("kernel dimension does not match m")
    k = kernel_moment_k(kernel)
    c1 = order_parameter_c1(d, m)
    gci = solve_gci(d, m, n_theta)
    c2 = coefficient_c2(gci)
    c3 = coefficient_c3(eta0, k, d, c2, m)
    return CoefficientSet(d=float(d), m=int(m), c1=c1, c2=c2, c3=c3, eta0=float(eta0),
                          k=k, n_theta=n_theta, gci_residual=gci.residual)
