"""Action functionals of grid paths.

Every functional integrates a cell cost over the ``n`` cells of a
piecewise-linear :class:`~levy_action.paths.Path`.  Slopes are constant per
cell; state-dependent integrands use the cell midpoint value (midpoint rule).
``+inf`` is an ordinary return value meaning "outside the effective domain";
numerical failures raise.
"""

from __future__ import annotations

import math
import threading
import weakref
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import DegenerateDiffusionError, InfeasibleError, ValidationError
from .legendre import XI_MAX, batch_conjugate, hamiltonian_fn, legendre_transform, mgf_fn
from .levy_core import AtomicMeasure, LevyTriplet
from .model import CoefficientSet, ModelSpec
from .paths import StepFunction

FUNCTIONALS = ("brownian", "sde_brownian", "levy", "general", "joint")


def _starts_ok(phi, x0):
    return x0 is None or phi.start == float(x0)


# -- conjugate of Psi, memoized per triplet ------------------------------------

_tables = weakref.WeakKeyDictionary()
_tables_lock = threading.Lock()


def _table(triplet):
    with _tables_lock:
        tab = _tables.get(triplet)
        if tab is None:
            tab = {}
            _tables[triplet] = tab
        return tab


def _gaussian_only(triplet):
    return triplet.nu.is_zero


def psi_conjugate(triplet, p, tol=1e-10):
    """``(Psi*(p), argmax)`` elementwise, memoized on the slope value.

    The memo is a plain dict per triplet; concurrent inserts of the same key
    store identical values, so sharing it across threads is harmless.
    """
    p = np.asarray(p, dtype=float)
    flat = p.ravel()
    if _gaussian_only(triplet):
        return _gaussian_conjugate(triplet.a, triplet.sigma2, p)
    tab = _table(triplet)
    uniq = np.unique(flat)
    missing = np.array([u for u in uniq if (u, tol) not in tab])
    if missing.size:
        f = mgf_fn(triplet)
        vals, args = batch_conjugate(
            lambda x, idx: f.eval(x),
            lambda x, idx: f.deriv(x),
            lambda x, idx: f.second(x),
            missing,
            lambda i: f,
            tol=tol,
        )
        for u, v, a in zip(missing, vals, args):
            tab[(float(u), tol)] = (float(v), float(a))
    vals = np.array([tab[(float(u), tol)][0] for u in flat]).reshape(p.shape)
    args = np.array([tab[(float(u), tol)][1] for u in flat]).reshape(p.shape)
    return vals, args


def _gaussian_conjugate(a, s2, p):
    """Closed form for ``Psi(xi) = a xi + s2 xi^2 / 2``."""
    p = np.asarray(p, dtype=float)
    if s2 > 0:
        return 0.5 * (p - a) ** 2 / s2, (p - a) / s2
    exact = p == a
    return np.where(exact, 0.0, np.inf), np.where(exact, 0.0, np.sign(p - a) * np.inf)


# -- cellwise costs with derivatives -------------------------------------------


@dataclass
class CellCosts:
    """Per-cell cost ``L_k`` and its partials in the slope and in the state."""

    cost: np.ndarray
    d_slope: np.ndarray
    d_state: np.ndarray

    def total(self, n):
        return float(np.sum(self.cost) / n) if np.all(np.isfinite(self.cost)) else math.inf


def _brownian_cells(phi):
    z = phi.slopes
    return CellCosts(0.5 * z * z, z, np.zeros_like(z))


def _sde_brownian_cells(phi, coeffs):
    m, z = phi.midpoints, phi.slopes
    s = np.asarray(coeffs.sigma(m), dtype=float) * np.ones_like(m)
    if np.any(~(np.abs(s) >= coeffs.sigma_min)):
        k = int(np.argmin(np.abs(s)))
        raise DegenerateDiffusionError(f"|sigma| = {abs(s[k]):.3g} < sigma_min at x = {m[k]:.6g}")
    b = np.asarray(coeffs.b(m), dtype=float) * np.ones_like(m)
    r = (z - b) / s
    db = np.asarray(coeffs.db(m)) * np.ones_like(m)
    ds = np.asarray(coeffs.dsigma(m)) * np.ones_like(m)
    return CellCosts(0.5 * r * r, r / s, -r * (db + r * ds) / s)


def _levy_cells(phi, triplet, tol=1e-10):
    vals, args = psi_conjugate(triplet, phi.slopes, tol)
    return CellCosts(vals, args, np.zeros_like(vals))


def _general_cells(phi, model, tol=1e-10):
    m, z = phi.midpoints, phi.slopes
    c, t = model.coeffs, model.triplet
    ones = np.ones_like(m)
    b = np.asarray(c.b(m), dtype=float) * ones
    s = np.asarray(c.sigma(m), dtype=float) * ones
    e = np.asarray(c.eta(m), dtype=float) * ones
    s2 = s * s
    if t.nu.is_zero:
        # Psi(eta xi) is quadratic, so L is a closed-form quadratic in zeta
        drift = b + t.a * e
        var = s2 + t.sigma2 * e * e
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = np.where(var > 0, (z - drift) / np.where(var > 0, var, 1.0), 0.0)
        cost = 0.5 * var * xi * xi
        bad = (var == 0) & (z != drift)
        cost = np.where(bad, np.inf, cost)
        xi = np.where(bad, np.sign(z - drift) * np.inf, xi)
    else:
        cost, xi = batch_conjugate(
            lambda x, i: b[i] * x + 0.5 * s2[i] * x * x + t.Psi(e[i] * x, 0),
            lambda x, i: b[i] + s2[i] * x + e[i] * t.Psi(e[i] * x, 1),
            lambda x, i: s2[i] + e[i] ** 2 * t.Psi(e[i] * x, 2),
            z,
            lambda i: hamiltonian_fn(model, m[i]),
            tol=tol,
        )
    # envelope theorem: dL/dx = -dH/dx at the maximizer
    fin = np.isfinite(xi)
    xf = np.where(fin, xi, 0.0)
    db = np.asarray(c.db(m)) * ones
    ds = np.asarray(c.dsigma(m)) * ones
    de = np.asarray(c.deta(m)) * ones
    hx = db * xf + s * ds * xf * xf
    if np.any(de != 0):
        hx = hx + de * xf * np.where(de != 0, t.Psi(e * xf, 1), 0.0)
    return CellCosts(cost, xi, np.where(fin, -hx, 0.0))


def cell_costs(functional, phi, model=None, tol=1e-10):
    """Per-cell costs of a named functional (see :data:`FUNCTIONALS`)."""
    if functional == "brownian":
        return _brownian_cells(phi)
    if functional == "sde_brownian":
        return _sde_brownian_cells(phi, model.coeffs)
    if functional == "levy":
        return _levy_cells(phi, model.triplet if isinstance(model, ModelSpec) else model, tol)
    if functional == "general":
        return _general_cells(phi, model, tol)
    raise ValidationError(f"no cellwise form for functional {functional!r}")


def action_and_gradient(functional, phi, model=None, tol=1e-10):
    """Action and its gradient with respect to every grid value of ``phi``.

    With midpoints ``m_k`` and slopes ``z_k = n (phi_{k+1} - phi_k)``,
    ``dS/dphi_j = (L_z[j-1] - L_z[j]) + (L_x[j-1] + L_x[j]) / (2n)``.
    """
    cells = cell_costs(functional, phi, model, tol)
    n = phi.n
    total = cells.total(n)
    grad = np.zeros(n + 1)
    if math.isfinite(total):
        grad[:-1] -= cells.d_slope
        grad[1:] += cells.d_slope
        half = 0.5 * cells.d_state / n
        grad[:-1] += half
        grad[1:] += half
    return total, grad


# -- public functionals --------------------------------------------------------


def action_brownian(phi, x0=0.0):
    """``1/2 int phi'^2``, exact for piecewise-linear paths."""
    if not _starts_ok(phi, x0):
        return math.inf
    return _brownian_cells(phi).total(phi.n)


def action_sde_brownian(phi, coeffs, x0=0.0):
    """``1/2 int ((phi' - b(phi)) / sigma(phi))^2`` by the midpoint rule.

    Raises :class:`DegenerateDiffusionError` where ``|sigma| < sigma_min``.
    """
    if isinstance(coeffs, ModelSpec):
        coeffs = coeffs.coeffs
    if not _starts_ok(phi, x0):
        return math.inf
    return _sde_brownian_cells(phi, coeffs).total(phi.n)


def action_levy(phi, triplet, x0=0.0, tol=1e-10):
    """``int Psi*(phi')``; slope conjugates are memoized per triplet."""
    if isinstance(triplet, ModelSpec):
        triplet = triplet.triplet
    if not _starts_ok(phi, x0):
        return math.inf
    return _levy_cells(phi, triplet, tol).total(phi.n)


def action_general(phi, model, x0=0.0, tol=1e-10):
    """``int L(phi, phi')`` with ``L(x, .)`` the conjugate of ``H(x, .)``."""
    if not _starts_ok(phi, x0):
        return math.inf
    return _general_cells(phi, model, tol).total(phi.n)


# -- joint infimum -------------------------------------------------------------


@dataclass(frozen=True)
class JointDetail:
    """Cell minima ``1/2 u^2 + Psi*(v)`` with the optimal controls."""

    value: float
    cost: np.ndarray
    u: np.ndarray
    v: np.ndarray
    infeasible_cells: tuple


def _joint_cell(zeta, b, s, e, triplet, xi_star, vbar, tol):
    """``min 1/2 u^2 + Psi*(v)`` subject to ``zeta = b + s u + e v``."""
    if e == 0.0:
        if s == 0.0:
            return (0.0, 0.0, vbar) if zeta == b else (math.inf, math.nan, math.nan)
        u = (zeta - b) / s
        return 0.5 * u * u, u, vbar
    if s == 0.0:
        v = (zeta - b) / e
        val, _ = xi_star(v)
        return val, 0.0, v
    k = e * e / (s * s)
    c = e * (zeta - b) / (s * s)

    # d/dv of the convex cell objective: xi*(v) + k v - c, increasing in v
    def slope(v):
        g = xi_star(v)[1] + k * v - c
        return float(np.clip(g, -1e300, 1e300))

    g0 = slope(vbar)
    if g0 == 0.0:
        v = vbar
    else:
        direction = -1.0 if g0 > 0 else 1.0
        step = 1.0 + abs(vbar)
        while True:
            w = vbar + direction * step
            if direction * slope(w) >= 0:
                break
            if step > XI_MAX * (1.0 + abs(c) / k):
                raise InfeasibleError(f"no minimizer found for cell with slope {zeta}")
            step *= 2.0
        lo, hi = (vbar, w) if direction > 0 else (w, vbar)
        v = optimize.brentq(slope, lo, hi, xtol=tol * (1.0 + abs(lo) + abs(hi)), rtol=4 * np.finfo(float).eps)
    u = (zeta - b - e * v) / s
    val, _ = xi_star(v)
    return 0.5 * u * u + val, u, v


def action_joint(phi, model, x0=0.0, tol=1e-12, detail=False):
    """Cellwise ``inf {1/2 u^2 + Psi*(v) : phi' = b + sigma u + eta v}``.

    The constraint is the time derivative of the controlled equation, with
    coefficients at the cell midpoint.  Each cell is a 1-D convex problem in
    ``v`` solved by a bracketed root search on its derivative.  Cells where
    ``sigma = eta = 0`` and ``phi' != b`` are infeasible and make the value
    ``+inf``; ``detail=True`` returns a :class:`JointDetail` listing them.
    """
    c, t = model.coeffs, model.triplet
    m, z = phi.midpoints, phi.slopes
    ones = np.ones_like(m)
    b = np.asarray(c.b(m), dtype=float) * ones
    s = np.asarray(c.sigma(m), dtype=float) * ones
    e = np.asarray(c.eta(m), dtype=float) * ones
    f = mgf_fn(t)
    vbar = t.mean()
    memo = {}

    def xi_star(v):
        hit = memo.get(v)
        if hit is None:
            if _gaussian_only(t):
                val, arg = _gaussian_conjugate(t.a, t.sigma2, v)
                hit = (float(val), float(arg))
            else:
                r = legendre_transform(f, v, tol=1e-13)
                hit = (r.value, r.argmax)
            memo[v] = hit
        return hit

    n = phi.n
    cost, us, vs = np.empty(n), np.empty(n), np.empty(n)
    for k in range(n):
        cost[k], us[k], vs[k] = _joint_cell(z[k], b[k], s[k], e[k], t, xi_star, vbar, tol)
    bad = tuple(int(k) for k in np.flatnonzero(~np.isfinite(cost)))
    value = math.inf if (bad or not _starts_ok(phi, x0)) else float(np.sum(cost) / n)
    if detail:
        return JointDetail(value, cost, us, vs, bad)
    return value


# -- dual lower bound ----------------------------------------------------------


def dual_lower_bound(phi, triplet, alpha):
    """``int phi d(alpha) - int_0^1 Psi(alpha(1) - alpha(s)) ds`` for a step ``alpha``.

    ``int phi d(alpha) = sum_j c_j (phi(s_j) - phi(t_j))`` and, since
    ``alpha(1) = 0``, the second term is ``sum_j (t_j - s_j) Psi(-c_j)``.
    Both are exact for piecewise-linear ``phi``.  Returns ``-inf`` (a valid but
    useless bound) when ``Psi(-c_j)`` is infinite for some piece.
    """
    if isinstance(triplet, ModelSpec):
        triplet = triplet.triplet
    if not isinstance(alpha, StepFunction):
        alpha = StepFunction(tuple(alpha))
    if not alpha.pieces:
        return 0.0
    c, s, t = (np.array(col) for col in zip(*alpha.pieces))
    stieltjes = float(np.sum(c * (phi(s) - phi(t))))
    psi = np.asarray(triplet.Psi(-c), dtype=float)
    if not np.all(np.isfinite(psi)):
        return -math.inf
    return stieltjes - float(np.sum((t - s) * psi))


# -- entropy form for discrete measures ----------------------------------------


@dataclass(frozen=True)
class EntropyResult:
    """Entropy cost, controlled-equation residual and the tilt table ``g``."""

    value: float
    residual: float
    g: np.ndarray
    theta: np.ndarray = None


def _entropy(g, w):
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(g > 0, g * np.log(np.where(g > 0, g, 1.0)) - g + 1.0, 1.0)
    return h @ w


def solve_tilt(target, z, w, compensated=True):
    """``theta`` with ``sum z (e^{theta z} - c) w = target`` (``c = 1`` or 0)."""
    z, w = np.asarray(z, dtype=float), np.asarray(w, dtype=float)
    base = float(np.sum(z * w)) if compensated else 0.0

    def h(th):
        with np.errstate(over="ignore"):
            return float(np.sum(z * np.exp(th * z) * w)) - base - target

    # theta -> sum z e^{theta z} w is increasing with range (inf_range, sup_range)
    sup_range = math.inf if np.any(z > 0) else 0.0
    inf_range = -math.inf if np.any(z < 0) else 0.0
    lo_val, hi_val = inf_range - base, sup_range - base
    if not (lo_val < target < hi_val):
        raise InfeasibleError(f"target drift {target} outside the tilt range ({lo_val}, {hi_val})")
    zmax = float(np.max(np.abs(z)))
    lo, hi = -1.0 / zmax, 1.0 / zmax
    while h(lo) > 0:
        lo *= 2.0
    while h(hi) < 0:
        hi *= 2.0
    return optimize.brentq(h, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def action_entropy_form(phi, grad_U, nu_atoms, g=None, compensated=True, x0=0.0):
    """Entropy cost ``sum_cells sum_z (g ln g - g + 1) nu{z} / n``.

    The controlled equation on each cell reads
    ``phi' = -grad_U(phi) + sum_z z (g - 1) nu{z}`` (``compensated=True``) or
    ``phi' = -grad_U(phi) + sum_z z g nu{z}`` (``compensated=False``).  With
    ``g`` given as an ``(n, atoms)`` table, the cost and the max-norm residual
    of that equation are returned.  With ``g=None`` the optimal tilt
    ``g = e^{theta z}`` is solved per cell, so the residual is zero and the
    cost equals the conjugate of ``sum_z (e^{theta z} - 1 - theta z) nu{z}``
    (compensated case) at the target drift.
    """
    if not isinstance(nu_atoms, AtomicMeasure):
        raise ValidationError("the entropy form needs a discrete Lévy measure", "/nu")
    z, w = nu_atoms.sizes, nu_atoms.masses
    grad_U = grad_U if callable(grad_U) else CoefficientSet(b=grad_U).b
    m, zeta = phi.midpoints, phi.slopes
    target = zeta + np.asarray(grad_U(m), dtype=float) * np.ones_like(m)
    n = phi.n
    if g is None:
        theta = np.array([solve_tilt(tk, z, w, compensated) for tk in target])
        g = np.exp(np.outer(theta, z))
    else:
        theta = None
        g = np.asarray(g, dtype=float)
        if g.shape != (n, z.size):
            raise ValidationError(f"g must have shape ({n}, {z.size})", "/g")
        if np.any(~(g > 0)):
            raise ValidationError("tilt table g must be positive", "/g")
    drift = (g - (1.0 if compensated else 0.0)) @ (z * w)
    residual = float(np.max(np.abs(target - drift)))
    value = float(np.sum(_entropy(g, w)) / n)
    if not _starts_ok(phi, x0):
        value = math.inf
    return EntropyResult(value, residual, g, theta)


def compensator_triplet(nu_atoms):
    """Pure-jump triplet with ``Psi(xi) = sum (e^{xi z} - 1 - xi z) nu{z}``."""
    z, w = nu_atoms.sizes, nu_atoms.masses
    a = -float(np.sum(np.where(np.abs(z) > 1.0, z * w, 0.0)))
    return LevyTriplet(a=a, sigma2=0.0, nu=nu_atoms)


def evaluate(functional, phi, model, **kw):
    """Dispatch on a functional name from :data:`FUNCTIONALS`."""
    if functional == "brownian":
        return action_brownian(phi, **kw)
    if functional == "sde_brownian":
        return action_sde_brownian(phi, model.coeffs, **kw)
    if functional == "levy":
        return action_levy(phi, model.triplet, **kw)
    if functional == "general":
        return action_general(phi, model, **kw)
    if functional == "joint":
        return action_joint(phi, model, **kw)
    raise ValidationError(f"unknown functional {functional!r}; expected one of {FUNCTIONALS}", "/functional")
