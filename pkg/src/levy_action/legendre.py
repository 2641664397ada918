"""Numerical Legendre transform of extended-real convex functions.

``legendre_transform(f, p)`` computes ``f*(p) = sup_xi {xi p - f(xi)}``.  With a
derivative the maximiser solves ``f'(xi) = p``: a bracket is grown
geometrically from ``xi0`` and the root is polished by Newton steps safeguarded
by bisection.  Without a derivative the concave objective is maximised by
golden-section search on the grown bracket.

Suprema that are not attained in the interior are reported rather than
raised: at a finite domain edge (``status='boundary'``, ``argmax`` at the
edge), approached at infinity with a finite limit (``status='boundary'``,
``argmax=+-inf``), or infinite (``status='unbounded'``, ``value=+inf``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from .errors import InfiniteMomentError, NonConvexError

XI_MAX = 2.0**20
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ConvexFn:
    """A convex function with optional first and second derivatives.

    ``eval`` returns ``+inf`` outside the effective domain.  ``domain`` is a
    hint ``(lower, upper)``; points outside it are treated as infinite.
    """

    eval: Callable
    deriv: Optional[Callable] = None
    second: Optional[Callable] = None
    domain: tuple = (-math.inf, math.inf)

    def __call__(self, xi):
        lo, hi = self.domain
        if xi < lo or xi > hi:
            return math.inf
        return float(self.eval(xi))


@dataclass(frozen=True)
class LegendreResult:
    value: float
    argmax: float
    stationarity_residual: float = math.nan
    status: str = "interior"

    @property
    def unbounded(self):
        return self.status == "unbounded"


def _slope_tol(a, b):
    return 1e-9 * (1.0 + abs(a) + abs(b))


def _edge(f, inside, outside, rtol=1e-13):
    """Bisect for the last point where ``f`` is finite between the two."""
    while abs(outside - inside) > rtol * max(1.0, abs(inside)):
        mid = 0.5 * (inside + outside)
        if math.isfinite(f(mid)):
            inside = mid
        else:
            outside = mid
    return inside


def legendre_transform(f, p, tol=1e-10, value_tol=1e-8, xi0=0.0, xi_max=XI_MAX):
    """Convex conjugate of ``f`` at ``p`` (see module docstring)."""
    if not tol > 0:
        raise ValueError("tol must be > 0")
    p = float(p)
    if not math.isfinite(f(xi0)):
        raise ValueError("f must be finite at the starting point xi0")
    if f.deriv is None:
        return _golden(f, p, tol, value_tol, xi0, xi_max)
    return _newton(f, p, tol, value_tol, xi0, xi_max)


def _obj(f, p, xi):
    return xi * p - f(xi)


def _far_field(f, p, prev, x, value_tol, direction):
    """Decide between a finite limit at infinity and an unbounded conjugate."""
    o_prev, o_x = _obj(f, p, prev), _obj(f, p, x)
    if o_x - o_prev > value_tol * (1.0 + abs(o_x)):
        return LegendreResult(math.inf, direction * math.inf, math.nan, "unbounded")
    return LegendreResult(o_x, direction * math.inf, abs(f.deriv(x) - p) if f.deriv else math.nan, "boundary")


def _newton(f, p, tol, value_tol, xi0, xi_max):
    d = lambda x: float(f.deriv(x))  # noqa: E731
    g0 = d(xi0) - p
    if g0 == 0.0:
        return LegendreResult(_obj(f, p, xi0), xi0, 0.0)
    direction = 1.0 if g0 < 0 else -1.0
    prev, dprev = xi0, g0 + p
    step = 1.0
    while True:
        x = xi0 + direction * step
        lo_dom, hi_dom = f.domain
        if not math.isfinite(f(x)):
            e = _edge(f, prev, x)
            ge = d(e) - p if math.isfinite(d(e)) else direction * math.inf
            if direction * ge >= 0:
                lo, hi = (prev, e) if direction > 0 else (e, prev)
                break
            return LegendreResult(_obj(f, p, e), e, abs(ge), "boundary")
        dx = d(x)
        if direction * (dx - dprev) < -_slope_tol(dx, dprev):
            raise NonConvexError(f"derivative decreases between {prev} and {x}")
        if direction * (dx - p) >= 0:
            lo, hi = (prev, x) if direction > 0 else (x, prev)
            break
        if step >= xi_max:
            return _far_field(f, p, prev, x, value_tol, direction)
        prev, dprev = x, dx
        step *= 2.0

    # Safeguarded Newton on g(x) = f'(x) - p with g(lo) < 0 <= g(hi).
    x = 0.5 * (lo + hi)
    if f.second is None:
        def g(t):
            v = d(t) - p
            return v if math.isfinite(v) else math.copysign(math.inf, t - lo)

        x = optimize.brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        return LegendreResult(_obj(f, p, x), x, abs(d(x) - p))
    for _ in range(200):
        gx = d(x) - p
        if not math.isfinite(gx):
            hi = x
            x = 0.5 * (lo + hi)
            continue
        if abs(gx) <= tol:
            break
        if gx < 0:
            lo = x
        else:
            hi = x
        h = float(f.second(x))
        if h < -_slope_tol(h, 0.0):
            raise NonConvexError(f"negative curvature {h} at {x}")
        step_x = x - gx / h if h > 0 else math.nan
        x_new = step_x if (math.isfinite(step_x) and lo < step_x < hi) else 0.5 * (lo + hi)
        if x_new == x or hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(x)):
            x = x_new
            break
        x = x_new
    return LegendreResult(_obj(f, p, x), x, abs(d(x) - p))


def _golden(f, p, tol, value_tol, xi0, xi_max):
    h = lambda x: _obj(f, p, x) if math.isfinite(f(x)) else -math.inf  # noqa: E731
    a, ha = xi0, h(xi0)
    b, hb = xi0 + 1.0, h(xi0 + 1.0)
    direction = 1.0
    if hb < ha:
        b, hb = xi0 - 1.0, h(xi0 - 1.0)
        direction = -1.0
        if hb < ha:
            # xi0 is already bracketed by xi0 - 1 and xi0 + 1
            a, b, c = xi0 - 1.0, xi0, xi0 + 1.0
            return _golden_polish(f, p, h, a, c, tol)
    step = 2.0
    slopes = []
    while True:
        c = xi0 + direction * step
        hc = h(c)
        if hc == -math.inf:
            e = _edge(f, b, c)
            he = h(e)
            if he >= hb:
                return LegendreResult(he, e, math.nan, "boundary")
            c = e
            break
        slopes.append((hc - hb) / (c - b))
        if len(slopes) >= 2 and direction * (slopes[-1] - slopes[-2]) > _slope_tol(slopes[-1], slopes[-2]):
            raise NonConvexError(f"secant slopes of the conjugate objective increase near {c}")
        if hc < hb:
            break
        if step >= xi_max:
            return _far_field(f, p, b, c, value_tol, direction)
        a, ha, b, hb = b, hb, c, hc
        step *= 2.0
    lo, hi = (a, c) if a < c else (c, a)
    return _golden_polish(f, p, h, lo, hi, tol)


def _golden_polish(f, p, h, lo, hi, tol):
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    h1, h2 = h(x1), h(x2)
    while hi - lo > tol * (1.0 + abs(lo) + abs(hi)) and hi - lo > 1e-15:
        if h1 >= h2:
            hi, x2, h2 = x2, x1, h1
            x1 = hi - _GOLDEN * (hi - lo)
            h1 = h(x1)
        else:
            lo, x1, h1 = x1, x2, h2
            x2 = lo + _GOLDEN * (hi - lo)
            h2 = h(x2)
    x = x1 if h1 >= h2 else x2
    return LegendreResult(h(x), x, math.nan)


def conjugate_many(f, ps, tol=1e-10, max_iter=100):
    """Vectorized ``(values, argmax)`` of ``f*`` at every entry of ``ps``.

    ``f.eval``, ``f.deriv`` and ``f.second`` must accept arrays.  Entries whose
    root cannot be bracketed within ``|xi| <= XI_MAX`` on the finite part of the
    domain fall back to :func:`legendre_transform`.
    """
    ps = np.asarray(ps, dtype=float)
    vals, arg = batch_conjugate(
        lambda x, idx: f.eval(x),
        lambda x, idx: f.deriv(x),
        lambda x, idx: f.second(x),
        ps.ravel(),
        lambda i: _scalar_view(f),
        tol=tol,
        max_iter=max_iter,
    )
    return vals.reshape(ps.shape), arg.reshape(ps.shape)


def batch_conjugate(fval, fder, fsec, ps, scalar_fn, tol=1e-10, max_iter=100):
    """Conjugates of a family ``f_i`` at ``ps[i]``, solved together.

    ``fval(xi, idx)`` (and ``fder``, ``fsec``) evaluate ``f_idx[j]`` at
    ``xi[j]``.  ``scalar_fn(i)`` returns a :class:`ConvexFn` for entry ``i``,
    used when the batched bracket fails (domain edges, unbounded cases).
    """
    flat = np.asarray(ps, dtype=float)
    n = flat.size
    every = np.arange(n)
    lo = np.zeros(n)
    hi = np.zeros(n)
    with np.errstate(all="ignore"):
        g0 = np.asarray(fder(np.zeros(n), every), dtype=float) - flat
    ok = np.isfinite(g0)
    for sign, need in ((1.0, ok & (g0 < 0)), (-1.0, ok & (g0 > 0))):
        idx = np.flatnonzero(need)
        step = 1.0
        last = np.zeros(idx.size)
        while idx.size and step <= XI_MAX:
            x = np.full(idx.size, sign * step)
            with np.errstate(all="ignore"):
                fx = np.asarray(fval(x, idx), dtype=float)
                gx = np.asarray(fder(x, idx), dtype=float) - flat[idx]
            bad = ~np.isfinite(fx) | ~np.isfinite(gx)
            done = ~bad & (sign * gx >= 0)
            ok[idx[bad]] = False
            if sign > 0:
                lo[idx[done]], hi[idx[done]] = last[done], x[done]
            else:
                lo[idx[done]], hi[idx[done]] = x[done], last[done]
            keep = ~bad & ~done
            idx, last = idx[keep], x[keep]
            step *= 2.0
        ok[idx] = False

    x = np.where(g0 == 0, 0.0, 0.5 * (lo + hi))
    act = ok & (g0 != 0)
    for _ in range(max_iter):
        ids = np.flatnonzero(act)
        if not ids.size:
            break
        xa = x[ids]
        with np.errstate(all="ignore"):
            ga = np.asarray(fder(xa, ids), dtype=float) - flat[ids]
            ha = np.asarray(fsec(xa, ids), dtype=float)
        conv = np.abs(ga) <= tol
        lo_a = np.where(ga < 0, xa, lo[ids])
        hi_a = np.where(ga >= 0, xa, hi[ids])
        with np.errstate(all="ignore"):
            newton = xa - ga / ha
        inside = np.isfinite(newton) & (newton > lo_a) & (newton < hi_a)
        nx = np.where(inside, newton, 0.5 * (lo_a + hi_a))
        tiny = (hi_a - lo_a) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(xa))
        nx = np.where(conv, xa, nx)
        x[ids], lo[ids], hi[ids] = nx, lo_a, hi_a
        act[ids[conv | tiny]] = False
    with np.errstate(all="ignore"):
        values = x * flat - np.asarray(fval(x, every), dtype=float)
    argmax = x.copy()
    for i in np.flatnonzero(~ok):
        r = legendre_transform(scalar_fn(i), flat[i], tol=tol)
        values[i], argmax[i] = r.value, r.argmax
    return values, argmax


def _scalar_view(f):
    return ConvexFn(
        lambda t: float(np.asarray(f.eval(np.array([t])))[0]),
        (lambda t: float(np.asarray(f.deriv(np.array([t])))[0])) if f.deriv else None,
        (lambda t: float(np.asarray(f.second(np.array([t])))[0])) if f.second else None,
        f.domain,
    )


# -- Psi, Hamiltonian, Lagrangian ---------------------------------------------


def mgf_fn(triplet):
    """``Psi`` of a triplet as a :class:`ConvexFn` (array-capable)."""
    return ConvexFn(
        lambda xi: triplet.Psi(xi, 0),
        lambda xi: triplet.Psi(xi, 1),
        lambda xi: triplet.Psi(xi, 2),
    )


def hamiltonian_fn(model, x):
    """``xi -> H(x, xi) = b(x) xi + sigma(x)^2 xi^2 / 2 + Psi(eta(x) xi)``."""
    c = model.coeffs
    b, s, e = float(c.b(x)), float(c.sigma(x)), float(c.eta(x))
    t = model.triplet
    s2 = s * s
    if e == 0.0:
        return ConvexFn(
            lambda xi: b * xi + 0.5 * s2 * np.square(xi),
            lambda xi: b + s2 * np.asarray(xi, dtype=float),
            lambda xi: s2 + 0.0 * np.asarray(xi, dtype=float),
        )
    return ConvexFn(
        lambda xi: b * xi + 0.5 * s2 * np.square(xi) + t.Psi(e * np.asarray(xi, dtype=float), 0),
        lambda xi: b + s2 * np.asarray(xi, dtype=float) + e * t.Psi(e * np.asarray(xi, dtype=float), 1),
        lambda xi: s2 + e * e * t.Psi(e * np.asarray(xi, dtype=float), 2),
    )


def hamiltonian(model, x, xi):
    """``H(x, xi)``; raises :class:`InfiniteMomentError` outside the domain."""
    val = float(hamiltonian_fn(model, x).eval(xi))
    if not math.isfinite(val):
        raise InfiniteMomentError(float(model.coeffs.eta(x)) * xi)
    return val


def lagrangian(model, x, zeta, tol=1e-10):
    """``L(x, zeta) = sup_xi {zeta xi - H(x, xi)}`` as a :class:`LegendreResult`."""
    return legendre_transform(hamiltonian_fn(model, x), zeta, tol=tol)
