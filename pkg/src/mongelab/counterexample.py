"""Planar transport instance whose monotone optimal map blows up at (-2, 0).

The construction lives on the triangle with vertices A=(-3,0), B=(1,4),
C=(1,0), foliated by the segments

    ell_a = { y = sqrt(a) (x + 2 + a),  x in [-2-a, 1] },   a in [0, 1],

with source density f = 1 and target density g = 1 + x/4 + eta(y), where
eta is the unique smooth correction making f and g carry equal mass below
every segment.  The domain is the reflection-symmetric triangle ABB' with
B' = (1, -4); all densities and maps extend evenly in y.

The monotone ray-wise map moves mass along each ell_a; its x-displacement
at (-2, sigma) scales like sigma^(2/3), so the map is Hoelder-2/3 but not
Lipschitz at the interior point (-2, 0).
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import DomainError, InternalError

# geometric tolerance for point-in-triangle checks
GEOM_TOL = 1e-9

_RAY_TOL = 1e-14


@dataclass(frozen=True)
class TriangleSpec:
    """Fixed vertices of the construction triangle and its reflection."""

    A: tuple = (-3.0, 0.0)
    B: tuple = (1.0, 4.0)
    C: tuple = (1.0, 0.0)
    B_prime: tuple = (1.0, -4.0)


TRIANGLE = TriangleSpec()


@dataclass(frozen=True)
class RayCoord:
    """Ray coordinates: parameter a in [0,1] and arclength-like t = x+2+a."""

    a: float
    t: float

    def __post_init__(self):
        if not (-GEOM_TOL <= self.a <= 1 + GEOM_TOL):
            raise DomainError(f"ray parameter a={self.a} outside [0, 1]")
        if not (-GEOM_TOL <= self.t <= 3 + self.a + GEOM_TOL):
            raise DomainError(f"ray coordinate t={self.t} outside [0, 3+a]")

    def point(self, sign=1.0):
        """Cartesian image (t-2-a, sign*sqrt(a)*t)."""
        return np.array([self.t - 2.0 - self.a, sign * np.sqrt(self.a) * self.t])


def in_triangle_upper(x, y, tol=GEOM_TOL):
    """True if (x, y) lies in the closed upper triangle ABC."""
    return (y >= -tol) and (x <= 1 + tol) and (y <= x + 3 + tol)


def in_triangle_full(x, y, tol=GEOM_TOL):
    """True if (x, y) lies in the closed symmetric triangle ABB'."""
    return (x <= 1 + tol) and (abs(y) <= x + 3 + tol)


def a_of_y(y):
    """Inverse of y = (3+a) sqrt(a) on [0, 4], extended evenly in y.

    Closed form a = h + 1/h - 2 with h = cbrt(sqrt(y^4/4 + y^2) + y^2/2 + 1).
    """
    y = abs(float(y))
    # the closed form continues analytically past y=4; allow a small margin
    # so centered difference stencils at the endpoint stay evaluable
    if y > 4 + 1e-3:
        raise DomainError(f"|y|={y} exceeds 4")
    h = np.cbrt(np.sqrt(0.25 * y**4 + y**2) + 0.5 * y**2 + 1.0)
    return max(h + 1.0 / h - 2.0, 0.0)


def eta_of_a(a):
    """Density correction as a function of the ray parameter."""
    return a * (10.0 * a**3 + 41.0 * a**2 + 54.0 * a + 27.0) / (54.0 * (1.0 + a) ** 3)


def eta(y):
    """Smooth even correction eta(y) >= 0 making the strip masses balance."""
    return eta_of_a(a_of_y(y))


def eta_ode_coeffs(a):
    """Coefficients (p, q) of the balance ODE eta'(y) + q/y eta = y p."""
    q = (5.0 * a - 1.0) * (3.0 + a) / (3.0 * (1.0 + a) ** 2)
    p = (27.0 + 135.0 * a + 70.0 * a**2) / (162.0 * (1.0 + a) ** 3 * (3.0 + a))
    return p, q


def eta_integral_form(y):
    """eta(y) by quadrature of its first-order-ODE solution formula.

    Independent of the closed form: integrates
    int_0^y t p(a(t)) exp(-int_t^y q(a(tau))/tau dtau) dt numerically.
    """
    y = abs(float(y))
    if y == 0.0:
        return 0.0

    def inner(t):
        val, _ = quad(
            lambda tau: eta_ode_coeffs(a_of_y(tau))[1] / tau,
            t, y, epsabs=1e-12, epsrel=1e-12, limit=200,
        )
        return val

    val, _ = quad(
        lambda t: t * eta_ode_coeffs(a_of_y(t))[0] * np.exp(-inner(t)),
        0.0, y, epsabs=1e-10, epsrel=1e-10, limit=200,
    )
    return val


def ray_of_point(x, y):
    """Ray coordinates (a, t) of a point of the symmetric triangle ABB'.

    Solves sqrt(a)(a + 2 + x) = |y| for a in [0, 1] via a bracketed root
    find in s = sqrt(a); the bracket lower end accounts for points with
    x < -2, which are reached only by rays with a >= -(2+x).
    """
    if not in_triangle_full(x, y):
        raise DomainError(f"point ({x}, {y}) outside triangle ABB'")
    ya = abs(y)
    s_min = np.sqrt(max(0.0, -(2.0 + x)))
    if ya <= GEOM_TOL:
        a = max(0.0, -(2.0 + x))
        return RayCoord(a=a, t=max(0.0, x + 2.0 + a))

    def fun(s):
        return s * (s * s + 2.0 + x) - ya

    hi = 1.0
    if fun(hi) < 0:
        # point numerically above the a=1 edge; clamp
        if fun(hi) > -1e-9:
            return RayCoord(a=1.0, t=x + 3.0)
        raise InternalError(f"no ray through ({x}, {y})")
    s = brentq(fun, s_min, hi, xtol=_RAY_TOL, rtol=8.9e-16)
    a = s * s
    return RayCoord(a=a, t=x + 2.0 + a)


def densities(x, y):
    """Source and target densities (f, g) at a point of triangle ABB'."""
    if not in_triangle_full(x, y):
        raise DomainError(f"point ({x}, {y}) outside triangle ABB'")
    return 1.0, 1.0 + 0.25 * x + eta(abs(y))


def ray_direction(x, y):
    """Unit direction -(1, sqrt(a))/sqrt(1+a) of the ray through (x, y)."""
    a = ray_of_point(x, abs(y)).a
    return -np.array([1.0, np.sqrt(a)]) / np.sqrt(1.0 + a)


# base point of the potential line integral; lies on the a=1 edge
_P = (-2.0, 1.0)


def potential_u(x, y, epsabs=1e-12):
    """Kantorovich potential on the triangle, by line integral from P=(-2,1).

    u(x,y) = (x+2) int_0^1 nu_1(gamma(t)) dt + (y-1) int_0^1 nu_2(gamma(t)) dt
    along the straight segment gamma from P to (x, y); its gradient equals
    the ray direction, so u decreases with unit slope along every ray.  The
    construction is mirror-symmetric in y, so the lower half evaluates at |y|.
    """
    if y < 0.0:
        y = -y
    if not in_triangle_upper(x, y):
        raise DomainError(f"point ({x}, {y}) outside triangle ABC")
    px, py = _P
    dx, dy = x - px, y - py
    if abs(dx) < 1e-15 and abs(dy) < 1e-15:
        return 0.0

    def nu(t):
        gx = px + t * dx
        gy = py + t * dy
        # clamp quadrature nodes onto the closed triangle
        gy = min(max(gy, 0.0), gx + 3.0)
        gx = min(gx, 1.0)
        return ray_direction(gx, gy)

    i1, _ = quad(lambda t: nu(t)[0], 0.0, 1.0, epsabs=epsabs, epsrel=1e-12, limit=200)
    i2, _ = quad(lambda t: nu(t)[1], 0.0, 1.0, epsabs=epsabs, epsrel=1e-12, limit=200)
    return dx * i1 + dy * i2


def _g_on_ray(s, a):
    """Target density restricted to ray a at coordinate s: g(s-2-a, sqrt(a) s)."""
    return 0.5 + 0.25 * (s - a) + eta_of_a(a_of_y(np.sqrt(a) * s))


def cumulative_f(a, t):
    """Weighted source mass int_0^t (s+2a) ds below t on ray a (closed form)."""
    return 0.5 * t * t + 2.0 * a * t


def cumulative_g(a, t):
    """Weighted target mass int_0^t (s+2a) g_ray(s) ds on ray a, by quadrature."""
    if t <= 0.0:
        return 0.0
    val, _ = quad(
        lambda s: (s + 2.0 * a) * _g_on_ray(s, a),
        0.0, t, epsabs=1e-13, epsrel=1e-13, limit=200,
    )
    return val


def monotone_ray_map(a, t0):
    """Monotone rearrangement along ray a: the t' with equal weighted mass.

    Solves int_0^t0 (s+2a) ds = int_0^t' (s+2a) g_ray(s) ds for t' in
    [0, 3+a].  The right side is strictly increasing, so the root is unique.
    """
    if not (0.0 <= a <= 1.0 + GEOM_TOL):
        raise DomainError(f"ray parameter a={a} outside [0, 1]")
    top = 3.0 + a
    if not (-GEOM_TOL <= t0 <= top + GEOM_TOL):
        raise DomainError(f"t0={t0} outside [0, {top}]")
    t0 = min(max(t0, 0.0), top)
    if t0 == 0.0:
        return 0.0
    target = cumulative_f(a, t0)
    g_top = cumulative_g(a, top)
    if target >= g_top:
        # full-strip balance: masses agree up to quadrature noise
        if target > g_top + 1e-8 * (1.0 + g_top):
            raise InternalError(
                f"ray mass balance violated at a={a}: {target} > {g_top}"
            )
        return top
    tp = brentq(
        lambda t: cumulative_g(a, t) - target, 0.0, top, xtol=1e-15, rtol=8.9e-16
    )
    return tp


def t0_map(x, y):
    """Monotone ray-wise optimal map on the symmetric triangle ABB'."""
    rc = ray_of_point(x, y)
    tp = monotone_ray_map(rc.a, rc.t)
    sign = 1.0 if y >= 0 else -1.0
    return RayCoord(a=rc.a, t=tp).point(sign=sign)


def strip_mass_check(a, epsabs=1e-11):
    """Source and target masses of the strip below ray a, by 2-D quadrature.

    Returns (lhs, rhs) where lhs integrates f and rhs integrates g over the
    triangle with vertices P_a=(-2-a,0), C=(1,0), Q_a=(1,(3+a)sqrt(a)).
    """
    if not (0.0 <= a <= 1.0):
        raise DomainError(f"a={a} outside [0, 1]")
    if a == 0.0:
        return 0.0, 0.0
    sa = np.sqrt(a)

    def upper(x):
        return sa * (x + 2.0 + a)

    def line_f(x):
        return upper(x)

    def line_g(x):
        top = upper(x)
        val, _ = quad(eta, 0.0, top, epsabs=epsabs, epsrel=1e-12, limit=200)
        return top + 0.25 * x * top + val

    lhs, _ = quad(line_f, -2.0 - a, 1.0, epsabs=epsabs, epsrel=1e-12, limit=200)
    rhs, _ = quad(line_g, -2.0 - a, 1.0, epsabs=epsabs, epsrel=1e-12, limit=200)
    return lhs, rhs
