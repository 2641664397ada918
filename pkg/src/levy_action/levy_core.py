"""Lévy triplets, characteristic exponent and log-moment generating function.

For a triplet ``(a, sigma2, nu)`` the characteristic exponent is

    psi(xi) = i a xi - sigma2 xi^2 / 2 + int (e^{i xi y} - 1 - i xi y 1{|y|<=1}) nu(dy)

and the log-MGF of ``L_1`` is ``Psi(xi) = psi(-i xi)``.  Atomic measures are
evaluated in closed form.  Density measures use composite Gauss-Legendre
quadrature on ``[rho, 1]`` (geometrically graded panels, adaptively refined),
on ``[1, R]`` and on a doubling tail beyond ``R``; the piece ``(0, rho)`` is
handled by a Taylor expansion of the integrand against the measure's small
moments.  Outside the (numerically detected) domain of ``Psi`` the value
``+inf`` is returned, so ``Psi`` can be fed to the Legendre engine as an
extended-real convex function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special

from .errors import InfiniteMomentError, QuadratureError, ValidationError

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_TAYLOR_ORDER = 10
_MAX_DEPTH = 40
_MAX_PANELS = 20000
_MAX_DOUBLINGS = 200


def _phi2(x):
    """``e^x - 1 - x`` without cancellation near 0."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-3
    xs = x[small]
    out[small] = xs * xs * (0.5 + xs * (1 / 6 + xs * (1 / 24 + xs / 120)))
    xl = x[~small]
    with np.errstate(over="ignore"):
        out[~small] = np.expm1(xl) - xl
    return out


def _gl(f, a, b):
    half = 0.5 * (b - a)
    nodes = 0.5 * (a + b) + half * _GL_NODES
    with np.errstate(over="ignore", invalid="ignore"):
        return half * np.dot(_GL_WEIGHTS, f(nodes))


def _adaptive_gl(f, a, b, tol):
    """Adaptive composite Gauss-Legendre; returns (value, error estimate)."""
    total = 0.0
    err_total = 0.0
    first = _gl(f, a, b)
    stack = [(a, b, first, tol * max(1.0, abs(first)), 0)]
    budget = _MAX_PANELS
    while stack:
        budget -= 1
        lo, hi, whole, ptol, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        left, right = _gl(f, lo, mid), _gl(f, mid, hi)
        with np.errstate(invalid="ignore"):
            err = abs(left + right - whole)
        if not np.isfinite(err):
            return left + right + total, math.inf
        # The relative floor absorbs rounding noise of exp() at large arguments.
        if err <= ptol or err <= 1e-12 * abs(left + right) or depth >= _MAX_DEPTH or budget <= 0:
            total += left + right
            err_total += err
        else:
            stack.append((lo, mid, left, 0.5 * ptol, depth + 1))
            stack.append((mid, hi, right, 0.5 * ptol, depth + 1))
    return total, err_total


# -- measures -----------------------------------------------------------------


class LevyMeasure:
    """Base class; concrete measures are :class:`AtomicMeasure` and
    :class:`DensityMeasure` (with the builtins :class:`TemperedStable` and
    :class:`ExponentialTail`)."""

    def integral(self, xi, kind):
        """Return ``(value, residual)`` of the jump integral of ``kind``.

        ``kind`` is ``'psi'`` (complex symbol part) or ``'mgf0'``, ``'mgf1'``,
        ``'mgf2'`` for the log-MGF part and its first two derivatives.
        """
        raise NotImplementedError

    @property
    def is_zero(self):
        return False

    @property
    def is_symmetric(self):
        return False


@dataclass(frozen=True, eq=False)
class AtomicMeasure(LevyMeasure):
    """Finite sum of point masses ``sum_i w_i delta_{z_i}``."""

    atoms: tuple = ()

    def __post_init__(self):
        atoms = tuple((float(z), float(w)) for z, w in self.atoms)
        for i, (z, w) in enumerate(atoms):
            if not (math.isfinite(z) and math.isfinite(w)):
                raise ValidationError("atom values must be finite", f"/atoms/{i}")
            if z == 0.0:
                raise ValidationError("a Lévy measure has no mass at 0", f"/atoms/{i}")
            if w <= 0.0:
                raise ValidationError("atom masses must be > 0", f"/atoms/{i}")
        object.__setattr__(self, "atoms", atoms)

    @property
    def sizes(self):
        return np.array([z for z, _ in self.atoms], dtype=float)

    @property
    def masses(self):
        return np.array([w for _, w in self.atoms], dtype=float)

    @property
    def is_zero(self):
        return not self.atoms

    @property
    def is_symmetric(self):
        pos = sorted((z, w) for z, w in self.atoms if z > 0)
        neg = sorted((-z, w) for z, w in self.atoms if z < 0)
        return pos == neg

    @property
    def total_mass(self):
        return float(self.masses.sum()) if self.atoms else 0.0

    def integral(self, xi, kind):
        xi = np.asarray(xi, dtype=float)
        if not self.atoms:
            zero = np.zeros(xi.shape, dtype=complex if kind == "psi" else float)
            return zero, 0.0
        z, w = self.sizes, self.masses
        small = np.abs(z) <= 1.0
        x = xi[..., None] * z
        with np.errstate(over="ignore"):
            if kind == "psi":
                vals = np.expm1(1j * x) - 1j * x * small
            elif kind == "mgf0":
                vals = np.where(small, _phi2(x), np.expm1(x))
            elif kind == "mgf1":
                vals = z * np.where(small, np.expm1(x), np.exp(x))
            elif kind == "mgf2":
                vals = z * z * np.exp(x)
            else:
                raise ValueError(kind)
        return vals @ w, 0.0


@dataclass(frozen=True, eq=False)
class DensityMeasure(LevyMeasure):
    """Absolutely continuous Lévy measure ``nu(dy) = density(y) dy``.

    ``density`` must accept numpy arrays.  ``log_density`` (optional) is used
    in the tail so that ``exp(xi y) * density(y)`` never overflows; it also
    enables exponential-growth detection.  ``support`` restricts the measure
    to ``'positive'`` or ``'negative'`` jumps.  ``inner_moment(k, rho, side)``
    (optional) returns ``int_0^rho u^k nu(side * du)``; by default it is
    computed by quadrature.  ``tail_moment(k, t, side, R)`` (optional) returns
    ``int_R^inf u^k e^{t u} nu(side * du)`` (``inf`` when divergent) and
    replaces the tail quadrature of the log-MGF terms.
    """

    density: Callable
    log_density: Optional[Callable] = None
    support: str = "both"
    rho: float = 1e-6
    R: float = 50.0
    panels_per_decade: int = 2
    tol: float = 1e-12
    inner_moment: Optional[Callable] = None
    tail_moment: Optional[Callable] = None
    symmetric: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.support not in ("both", "positive", "negative"):
            raise ValidationError(f"unknown support {self.support!r}", "/support")
        if not 0.0 < self.rho < 1.0:
            raise ValidationError("small-jump cutoff rho must lie in (0, 1)", "/rho")
        if not self.R > 1.0:
            raise ValidationError("truncation radius R must exceed 1", "/R")
        # ∫ (y^2 ∧ 1) ν(dy) < ∞, checked numerically.
        for s in self.sides:
            near, err_n = self._quad(lambda u, s=s: u * u * self._dens(s, u), self.rho * 1e-12, 1.0)
            far, err_f = self._tail_mass(s)
            vals = self._dens(s, np.geomspace(self.rho, self.R, 97))
            if np.any(vals < 0) or not np.all(np.isfinite(vals)):
                raise ValidationError("density must be finite and nonnegative", "/density")
            # y^3 nu(y) must vanish at 0 for y^2 nu(y) to be integrable there
            probe = np.geomspace(self.rho * 1e-12, 1.0, 61)
            g = probe**3 * self._dens(s, probe)
            inner_growth = g[0] > 1e-3 * max(float(np.max(g)), 1e-300)
            if not (math.isfinite(near) and math.isfinite(far)) or inner_growth:
                raise ValidationError("∫ min(y², 1) ν(dy) is not finite", "/density")

    @property
    def sides(self):
        return {"both": (1.0, -1.0), "positive": (1.0,), "negative": (-1.0,)}[self.support]

    @property
    def is_symmetric(self):
        return self.symmetric

    def _dens(self, s, u):
        with np.errstate(all="ignore"):
            return np.asarray(self.density(s * np.asarray(u, dtype=float)), dtype=float)

    def _quad(self, f, a, b):
        edges = np.geomspace(a, b, max(2, int(math.ceil(self.panels_per_decade * math.log10(b / a)))) + 1)
        val = err = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            v, e = _adaptive_gl(f, lo, hi, self.tol)
            val += v
            err += e
        return val, err

    def _tail_mass(self, s):
        v, e = self._quad(lambda u: self._dens(s, u), 1.0, self.R)
        t, e2, _ = self._tail(lambda u: self._dens(s, u), None)
        return v + t, e + e2

    def moment_inner(self, k, s):
        key = ("inner", k, s)
        if key not in self._cache:
            if self.inner_moment is not None:
                self._cache[key] = float(self.inner_moment(k, self.rho, s))
            else:
                v, _ = self._quad(lambda u: u**k * self._dens(s, u), self.rho * 1e-12, self.rho)
                self._cache[key] = v
        return self._cache[key]

    def _tail(self, f, log_growth):
        """Integrate ``f`` over ``[R, inf)`` with doubling panels.

        Returns ``(value, residual, diverged)``.  ``log_growth(y)`` is the log
        of the integrand's magnitude when available and is used to detect
        exponential growth.
        """
        if log_growth is not None:
            y1, y2 = 1e12 * self.R, 2e12 * self.R
            with np.errstate(all="ignore"):
                g1, g2 = log_growth(y1), log_growth(y2)
            if np.isfinite(g2) and g2 > g1 and g2 > -700:
                return math.inf, 0.0, True
        total, err = 0.0, 0.0
        prev = []
        lo = self.R
        for _ in range(_MAX_DOUBLINGS):
            hi = 2.0 * lo
            c, e = _adaptive_gl(f, lo, hi, self.tol)
            if not np.isfinite(c) or not np.isfinite(e):
                return math.inf, math.inf, True
            total += c
            err += e
            lo = hi
            mag = abs(c)
            if mag <= self.tol * max(1.0, abs(total)):
                return total, err + mag, False
            prev.append(mag)
            # Without a log-density, sustained growth is the only divergence signal.
            if log_growth is None and len(prev) >= 4 and prev[-1] > prev[-2] > prev[-3] > prev[-4]:
                return math.inf, math.inf, True
        raise QuadratureError("tail integral did not converge beyond the truncation radius", abs(c))

    def integral(self, xi, kind):
        xi_arr = np.asarray(xi, dtype=float)
        if xi_arr.ndim:
            out = [self.integral(float(v), kind) for v in xi_arr.ravel()]
            vals = np.array([o[0] for o in out]).reshape(xi_arr.shape)
            return vals, max((o[1] for o in out), default=0.0)
        key = (float(xi), kind)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._integral_scalar(float(xi), kind)
            self._cache[key] = hit
        return hit

    def _integral_scalar(self, xi, kind):
        total = 0.0 + 0.0j if kind == "psi" else 0.0
        resid = 0.0
        if xi == 0.0 and kind in ("psi", "mgf0"):
            return total, resid
        for s in self.sides:
            v, r = self._side(xi, s, kind)
            if not np.isfinite(v):
                return (math.inf, math.inf) if kind != "psi" else (complex(math.nan), math.inf)
            total += v
            resid += r
        return total, resid

    def _side(self, xi, s, kind):
        rho = self.rho
        if abs(xi) * rho > 0.5:
            raise QuadratureError(f"|xi|*rho too large for the inner Taylor correction at xi={xi}", abs(xi) * rho)
        t = xi * s
        # Inner piece (0, rho): Taylor series of the integrand in y = s u.
        inner = 0.0
        for k in range(2, _TAYLOR_ORDER + 1):
            mk = self.moment_inner(k, s) * s**k
            if kind == "psi":
                inner += (1j * xi) ** k * mk / math.factorial(k)
            elif kind == "mgf0":
                inner += xi**k * mk / math.factorial(k)
            elif kind == "mgf1":
                inner += xi ** (k - 1) * mk / math.factorial(k - 1)
            else:
                inner += xi ** (k - 2) * mk / math.factorial(k - 2)

        dens = lambda u: self._dens(s, u)  # noqa: E731
        if kind == "psi":
            near = lambda u: (np.expm1(1j * t * u) - 1j * t * u) * dens(u)  # noqa: E731
            far = lambda u: np.expm1(1j * t * u) * dens(u)  # noqa: E731
        elif kind == "mgf0":
            near = lambda u: _phi2(t * u) * dens(u)  # noqa: E731
            far = lambda u: self._exp_dens(s, t, u) - dens(u)  # noqa: E731
        elif kind == "mgf1":
            near = lambda u: s * u * np.expm1(t * u) * dens(u)  # noqa: E731
            far = lambda u: s * u * self._exp_dens(s, t, u)  # noqa: E731
        else:
            near = lambda u: u * u * np.exp(t * u) * dens(u)  # noqa: E731
            far = lambda u: u * u * self._exp_dens(s, t, u)  # noqa: E731

        if kind == "psi":
            v1, e1 = self._quad_complex(near, rho, 1.0)
            v2, e2 = self._quad_complex(far, 1.0, self.R)
            tr, ti = self._tail(lambda u: far(u).real, None), self._tail(lambda u: far(u).imag, None)
            return inner + v1 + v2 + tr[0] + 1j * ti[0], e1 + e2 + tr[1] + ti[1]

        v1, e1 = self._quad(near, rho, 1.0)
        v2, e2 = self._quad(far, 1.0, self.R)
        if self.tail_moment is not None:
            power = {"mgf0": 0, "mgf1": 1, "mgf2": 2}[kind]
            tv = float(self.tail_moment(power, t, s, self.R)) * s**power
            if power == 0:
                tv -= float(self.tail_moment(0, 0.0, s, self.R))
            if not math.isfinite(tv):
                return math.inf, math.inf
            return inner + v1 + v2 + tv, e1 + e2
        log_growth = None
        if self.log_density is not None:
            power = {"mgf0": 0, "mgf1": 1, "mgf2": 2}[kind]
            log_growth = lambda y: t * y + power * math.log(y) + float(self.log_density(s * y))  # noqa: E731
        tv, te, diverged = self._tail(far, log_growth)
        if diverged:
            return math.inf, math.inf
        return inner + v1 + v2 + tv, e1 + e2 + te

    def _quad_complex(self, f, a, b):
        vr, er = self._quad(lambda u: f(u).real, a, b)
        vi, ei = self._quad(lambda u: f(u).imag, a, b)
        return vr + 1j * vi, er + ei

    def _exp_dens(self, s, t, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(all="ignore"):
            if self.log_density is not None:
                return np.exp(t * u + np.asarray(self.log_density(s * u), dtype=float))
            d = self._dens(s, u)
            out = np.exp(t * u) * d
            return np.where(d == 0.0, 0.0, out)


def _tempered_stable_constant(alpha):
    return 0.5 * alpha * (alpha - 1.0) / special.gamma(2.0 - alpha)


def _upper_gamma(s, x):
    """Upper incomplete gamma Gamma(s, x) for non-integer s and x > 0."""
    if s > 0:
        return special.gammaincc(s, x) * special.gamma(s)
    return (_upper_gamma(s + 1.0, x) - x**s * math.exp(-x)) / s


class TemperedStable(DensityMeasure):
    """One-sided tempered stable measure on ``y > 0``.

    Density ``c(alpha) e^{-m y} / y^{1+alpha}`` with
    ``c(alpha) = alpha (alpha-1) / (2 Gamma(2-alpha))``, so that
    ``c(alpha) Gamma(-alpha) = 1/2``.  ``Psi`` is finite exactly on
    ``(-inf, m]``.
    """

    def __init__(self, alpha, m, rho=1e-6, R=None, panels_per_decade=2, tol=1e-12):
        alpha, m = float(alpha), float(m)
        if not 1.0 < alpha < 2.0:
            raise ValidationError("tempered-stable alpha must lie in (1, 2)", "/params/alpha")
        if not m > 0.0:
            raise ValidationError("tempered-stable m must be > 0", "/params/m")
        c = _tempered_stable_constant(alpha)
        logc = math.log(c)

        def density(y):
            y = np.asarray(y, dtype=float)
            with np.errstate(all="ignore"):
                out = c * np.exp(-m * y) / np.abs(y) ** (1.0 + alpha)
            return np.where(y > 0, out, 0.0)

        def log_density(y):
            return logc - m * y - (1.0 + alpha) * np.log(y)

        def inner_moment(k, r, side):
            if side < 0:
                return 0.0
            # ∫_0^r u^k c e^{-mu} u^{-1-alpha} du = c m^{alpha-k} γ(k-alpha, m r)
            return c * m ** (alpha - k) * special.gammainc(k - alpha, m * r) * special.gamma(k - alpha)

        def tail_moment(k, t, side, r):
            if side < 0:
                return 0.0
            # ∫_r^inf u^k e^{tu} c e^{-mu} u^{-1-alpha} du = c d^{alpha-k} Γ(k-alpha, d r), d = m - t
            d = m - t
            if d < 0:
                return math.inf
            if d == 0:
                return c * r ** (k - alpha) / (alpha - k) if k < alpha else math.inf
            return c * d ** (alpha - k) * _upper_gamma(k - alpha, d * r)

        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "m", m)
        super().__init__(
            density=density,
            log_density=log_density,
            support="positive",
            rho=rho,
            R=float(R) if R is not None else max(2.0, 50.0 / m),
            panels_per_decade=panels_per_decade,
            tol=tol,
            inner_moment=inner_moment,
            tail_moment=tail_moment,
        )

    @property
    def constant(self):
        return _tempered_stable_constant(self.alpha)

    @property
    def large_jump_mean(self):
        """``int_{y>1} y nu(dy)``."""
        return self.constant * self.m ** (self.alpha - 1.0) * _upper_gamma(1.0 - self.alpha, self.m)

    def closed_form_log_mgf(self, xi):
        """Exact jump part of ``Psi`` (with the ``1{|y|<=1}`` compensator)."""
        a, m = self.alpha, self.m
        xi = np.asarray(xi, dtype=float)
        with np.errstate(invalid="ignore"):
            val = 0.5 * (np.power(np.maximum(m - xi, 0.0), a) - m**a + a * m ** (a - 1.0) * xi)
        val = val + xi * self.large_jump_mean
        return np.where(xi <= m, val, np.inf)

    def closed_form_symbol(self, xi):
        """Exact jump part of ``psi`` (complex, since the measure is one-sided)."""
        a, m = self.alpha, self.m
        xi = np.asarray(xi, dtype=float)
        base = np.power(m - 1j * xi, a)
        return 0.5 * (base - m**a + 1j * a * m ** (a - 1.0) * xi) + 1j * xi * self.large_jump_mean


class ExponentialTail(DensityMeasure):
    """Symmetric measure with density ``exp(-|z|^alpha)``."""

    def __init__(self, alpha, rho=1e-6, R=50.0, panels_per_decade=2, tol=1e-12):
        alpha = float(alpha)
        if not alpha > 0.0:
            raise ValidationError("exponential-tail alpha must be > 0", "/params/alpha")

        def density(z):
            return np.exp(-np.abs(np.asarray(z, dtype=float)) ** alpha)

        def log_density(z):
            return -abs(z) ** alpha

        def inner_moment(k, r, side):
            # ∫_0^r u^k e^{-u^alpha} du = γ((k+1)/alpha, r^alpha) / alpha
            s = (k + 1.0) / alpha
            return special.gammainc(s, r**alpha) * special.gamma(s) / alpha

        object.__setattr__(self, "alpha", alpha)
        super().__init__(
            density=density,
            log_density=log_density,
            support="both",
            rho=rho,
            R=R,
            panels_per_decade=panels_per_decade,
            tol=tol,
            inner_moment=inner_moment,
            symmetric=True,
        )

    @property
    def total_mass(self):
        return 2.0 * special.gamma(1.0 + 1.0 / self.alpha)


# -- triplets -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LevyTriplet:
    """Drift ``a``, Gaussian variance ``sigma2`` and Lévy measure ``nu``."""

    a: float = 0.0
    sigma2: float = 0.0
    nu: LevyMeasure = field(default_factory=AtomicMeasure)

    def __post_init__(self):
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if not (math.isfinite(self.a) and math.isfinite(self.sigma2)):
            raise ValidationError("triplet entries must be finite")
        if self.sigma2 < 0.0:
            raise ValidationError("sigma2 must be >= 0", "/sigma2")
        if not isinstance(self.nu, LevyMeasure):
            raise ValidationError("nu must be a LevyMeasure", "/nu")

    @classmethod
    def gaussian(cls, sigma2=1.0, a=0.0):
        return cls(a=a, sigma2=sigma2)

    @classmethod
    def poisson(cls, size=1.0, rate=1.0, a=0.0):
        """Single-atom measure ``rate * delta_size``."""
        return cls(a=a, nu=AtomicMeasure(((size, rate),)))

    @property
    def is_deterministic(self):
        """True when ``L_t = a t`` (``Psi`` is linear)."""
        return self.sigma2 == 0.0 and self.nu.is_zero

    def psi(self, xi):
        xi = np.asarray(xi, dtype=float)
        jump, _ = self.nu.integral(xi, "psi")
        return 1j * self.a * xi - 0.5 * self.sigma2 * xi * xi + jump

    def Psi(self, xi, deriv=0):
        """``Psi`` or its ``deriv``-th derivative; ``+inf`` outside the domain."""
        xi = np.asarray(xi, dtype=float)
        jump, _ = self.nu.integral(xi, ("mgf0", "mgf1", "mgf2")[deriv])
        if deriv == 0:
            out = self.a * xi + 0.5 * self.sigma2 * xi * xi + jump
        elif deriv == 1:
            out = self.a + self.sigma2 * xi + jump
        else:
            out = self.sigma2 + jump
        out = np.where(np.isnan(out), np.inf, out)
        return float(out) if out.ndim == 0 else out

    def residual(self, xi, deriv=0):
        """Quadrature error estimate attached to ``Psi(xi)``."""
        return self.nu.integral(float(xi), ("mgf0", "mgf1", "mgf2")[deriv])[1]

    def mean(self):
        """``E L_1 = Psi'(0) = a + int_{|y|>1} y nu(dy)``."""
        return self.Psi(0.0, 1)

    def variance(self):
        """``Var L_1 = Psi''(0) = sigma2 + int y^2 nu(dy)``."""
        return self.Psi(0.0, 2)


# -- module-level operations --------------------------------------------------


def psi_eval(triplet, xi):
    """Characteristic exponent ``psi(xi)`` (complex)."""
    out = triplet.psi(xi)
    return complex(out) if np.ndim(out) == 0 else out


def log_mgf(triplet, xi, order=0, strict=False):
    """``Psi(xi)``; with ``order`` 1 or 2 returns ``(Psi, Psi', ...)``.

    Outside the domain of ``Psi`` the value is ``+inf``; with ``strict=True``
    an :class:`InfiniteMomentError` carrying ``xi`` is raised instead.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    vals = tuple(triplet.Psi(xi, d) for d in range(order + 1))
    if strict and not np.all(np.isfinite(vals[0])):
        raise InfiniteMomentError(xi)
    return vals[0] if order == 0 else vals


@dataclass(frozen=True)
class MomentDiagnostic:
    lambda_max_tested: float
    finite: bool
    first_failing_lambda: Optional[float] = None


def check_exponential_moments(triplet, lambda_max, points=24, rtol=1e-4):
    """Probe ``Psi(+-lambda)`` on a geometric grid up to ``lambda_max``.

    On the first divergence the edge is refined by bisection to relative
    accuracy ``rtol`` and reported as ``first_failing_lambda``.
    """
    if not lambda_max > 0:
        raise ValidationError("lambda_max must be > 0")
    grid = np.geomspace(lambda_max * 1e-3, lambda_max, points)

    def finite_at(lam):
        return all(np.isfinite(triplet.Psi(s * lam)) for s in (1.0, -1.0))

    good = 0.0
    for lam in grid:
        if not finite_at(lam):
            lo, hi = good, float(lam)
            while hi - lo > rtol * hi:
                mid = 0.5 * (lo + hi)
                if finite_at(mid):
                    lo = mid
                else:
                    hi = mid
            return MomentDiagnostic(float(lambda_max), False, hi)
        good = float(lam)
    return MomentDiagnostic(float(lambda_max), True, None)
