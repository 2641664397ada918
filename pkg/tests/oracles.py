"""Independent reference computations used to freeze expected test values.

None of these call into the package's numerical core: they use scipy
quadrature, ODE shooting and brute-force grid searches directly.
"""

import math

import mpmath as mp
import numpy as np
from scipy import integrate, optimize, special


def grid_conjugate(f, p, lo=-30.0, hi=30.0, points=2_000_001):
    """``sup_xi (xi p - f(xi))`` by dense grid search, refined by a local fit."""
    xi = np.linspace(lo, hi, points)
    with np.errstate(over="ignore", invalid="ignore"):
        vals = xi * p - f(xi)
    vals = np.where(np.isfinite(vals), vals, -np.inf)
    k = int(np.argmax(vals))
    res = optimize.minimize_scalar(lambda x: -(x * p - f(x)), bounds=(xi[max(k - 1, 0)], xi[min(k + 1, points - 1)]), method="bounded", options={"xatol": 1e-14})
    return max(vals[k], -res.fun), res.x


def poisson_conjugate(p):
    """Conjugate of ``e^xi - 1 - xi``: ``(1+p) ln(1+p) - p`` for ``p > -1``."""
    return (1 + p) * math.log1p(p) - p


def ou_shooting(x1=1.0):
    """Minimum of ``1/2 int (phi' + phi)^2`` from 0 to ``x1`` by shooting on phi'' = phi."""

    def end(v0):
        sol = integrate.solve_ivp(lambda t, y: [y[1], y[0]], (0, 1), [0.0, v0], rtol=1e-12, atol=1e-14)
        return sol.y[0, -1] - x1

    v0 = optimize.brentq(end, 0.0, 5.0, xtol=1e-15)
    sol = integrate.solve_ivp(lambda t, y: [y[1], y[0]], (0, 1), [0.0, v0], rtol=1e-12, atol=1e-14, dense_output=True)
    cost = integrate.quad(lambda t: 0.5 * (sol.sol(t)[1] + sol.sol(t)[0]) ** 2, 0, 1, epsabs=1e-13, epsrel=1e-13)[0]
    return cost, v0


def ts_log_mgf_quad(alpha, m, xi, dps=30):
    """Jump part of ``Psi`` for the one-sided tempered-stable density, by mpmath quadrature."""
    mp.mp.dps = dps
    a, m, xi = mp.mpf(alpha), mp.mpf(m), mp.mpf(xi)
    c = a * (a - 1) / (2 * mp.gamma(2 - a))
    dens = lambda y: c * mp.exp(-m * y) / y ** (1 + a)  # noqa: E731
    inner = mp.quad(lambda y: (mp.expm1(xi * y) - xi * y) * dens(y), [0, mp.mpf("1e-6"), mp.mpf("1e-3"), 1])
    outer = mp.quad(lambda y: mp.expm1(xi * y) * dens(y), [1, 10, mp.inf])
    return float(inner + outer)


def ts_tail_finite(alpha, m, xi, upper=2000.0):
    """Whether ``int_1^upper e^{xi y} nu(dy)`` stays bounded as upper grows (edge at xi = m)."""
    c = alpha * (alpha - 1) / (2 * special.gamma(2 - alpha))
    return (xi - m) * upper + math.log(c) < 0


def gaussian_tail(x):
    return 0.5 * math.erfc(x / math.sqrt(2))


def entropy_single_atom_grid(zeta, points=2_000_001):
    """min over g of (g ln g - g + 1) subject to g * 1 = zeta (uncompensated single unit atom)."""
    g = np.linspace(1e-9, 10, points)
    feasible = np.abs(g - zeta) <= 5e-6
    h = g * np.log(g) - g + 1
    return float(h[feasible].min()), float(g[feasible][np.argmin(h[feasible])])


def brownian_dual_sup(cs=np.linspace(-3, 3, 60001)):
    """max_c of -c - c^2/2 (one piece on (0, 1)) for phi(t) = t and Psi = xi^2/2."""
    v = -cs - 0.5 * cs * cs
    return float(v.max())


if __name__ == "__main__":
    print("ou", ou_shooting(), (math.e**2 - 1) / (math.e**2 - 2 + math.e**-2))
    f = lambda x: np.expm1(x) - x  # noqa: E731
    for p in (-0.5, 1.0, 3.0):
        print("poisson", p, grid_conjugate(f, p), poisson_conjugate(p))
    print("gauss3", grid_conjugate(lambda x: 0.5 * x * x, 3.0))
    for xi in (-10, -1, 0.5, 1.9):
        print("ts", xi, repr(ts_log_mgf_quad(1.5, 2.0, xi)))
    print("tails", [gaussian_tail(1 / math.sqrt(e)) for e in (0.5, 0.25, 0.1)])
    print("entropy", entropy_single_atom_grid(2.0), 2 * math.log(2) - 1)
    print("dual", brownian_dual_sup())
