"""Samplers for scaled Brownian and Lévy paths, the Euler scheme and F^m.

Random numbers come from :class:`RngStream`, a Philox counter-based stream
keyed by ``(seed, stream_id)``; substream ``i`` starts at counter block ``i``,
so any worker can regenerate any chunk independently of scheduling.

Lévy increments use the small-jump approximation: jumps with ``|y| > rho``
form a compound Poisson process, jumps with ``|y| <= rho`` are replaced by a
Gaussian with the same variance, and the compensator over
``rho < |y| <= 1`` becomes a drift.  Mean and variance of ``L_1`` are kept
exactly.  The scaled process ``eps L(t / eps)`` is sampled directly on the
``[0, 1]`` grid: a cell of length ``1/n`` carries the increment of ``L`` over
``1 / (n eps)`` units of its own time, scaled by ``eps``.
"""

from __future__ import annotations

import math
import threading
import weakref
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import CutoffRequiredError, GridMismatchError, ValidationError
from .levy_core import AtomicMeasure, DensityMeasure, _gl
from .paths import Path

DEFAULT_BOUND = 1e8
_MASK64 = (1 << 64) - 1


class RngStream:
    """Counter-based random stream identified by ``(seed, stream_id)``."""

    def __init__(self, seed=0, stream_id=0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64

    def generator(self, sub=0):
        """Independent ``numpy.random.Generator`` for substream ``sub``."""
        key = self.seed | (self.stream_id << 64)
        bitgen = np.random.Philox(key=key, counter=[0, 0, int(sub) & _MASK64, 0])
        return np.random.Generator(bitgen)

    def child(self, stream_id):
        return RngStream(self.seed, stream_id)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


class SamplePath(Path):
    """Grid path produced by a sampler.

    ``step`` selects the càdlàg reading; ``horizon`` is the time covered by
    the grid (1 except for raw Lévy paths on ``[0, n]``); ``aborted`` marks a
    trajectory stopped by the overflow guard.
    """

    def __init__(self, values, step=True, horizon=1.0, aborted=False):
        super().__init__(values, step=step)
        self.horizon = float(horizon)
        self.aborted = bool(aborted)

    @property
    def times(self):
        return np.linspace(0.0, self.horizon, self.n + 1)


# -- small-jump cutoff -----------------------------------------------------------


@dataclass(frozen=True)
class JumpModel:
    """Compound-Poisson plus Gaussian approximation of a Lévy process.

    Per unit of the process's own time: drift ``drift``, Gaussian variance
    ``gauss_var`` (Brownian part plus substituted small jumps) and jumps at
    rate ``rate`` drawn by ``sample_sizes``.
    """

    rho: float
    drift: float
    gauss_var: float
    rate: float
    small_var: float
    sampler: object

    def sample_sizes(self, gen, k):
        if k == 0:
            return np.zeros(0)
        return self.sampler(gen, k)


def _atomic_sampler(z, p):
    cum = np.cumsum(p)
    cum /= cum[-1]

    def sample(gen, k):
        return z[np.minimum(np.searchsorted(cum, gen.random(k), side="right"), z.size - 1)]

    return sample


class _DensityTable:
    """Inverse-CDF sampler for ``nu`` restricted to ``|y| > rho``.

    Each side is split into geometric panels; within a panel the density is
    treated as a power law through its endpoint values.
    """

    def __init__(self, measure, rho, panels=4000):
        self.sides = []
        for s in measure.sides:
            lo = rho if rho > 0 else 1e-9
            hi = 1.0
            while hi < 1e6 and float(measure._dens(s, hi)) * hi > 1e-18:
                hi *= 2.0
            # 1 is a panel edge so the compensator range is covered exactly
            k1 = max(8, int(panels * math.log(1.0 / lo) / math.log(hi / lo)))
            edges = np.concatenate([np.geomspace(lo, 1.0, k1 + 1), np.geomspace(1.0, hi, max(8, panels - k1) + 1)[1:]])
            mass = np.array([_gl(lambda u: measure._dens(s, u), a, b) for a, b in zip(edges[:-1], edges[1:])])
            first = np.array([_gl(lambda u: u * measure._dens(s, u), a, b) for a, b in zip(edges[:-1], edges[1:])])
            head = 0.0
            if rho == 0:
                head = _gl(lambda u: measure._dens(s, u), 0.0, lo)
            dens = measure._dens(s, edges)
            self.sides.append((s, edges, mass, first, head, dens))
        self.mass = np.array([m.sum() + h for _, _, m, _, h, _ in self.sides])

    def compensator(self, rho):
        """``int_{rho < |y| <= 1} y nu(dy)``."""
        total = 0.0
        for s, edges, _, first, head, _ in self.sides:
            inside = edges[1:] <= 1.0
            total += s * float(first[inside].sum())
            if head:
                total += s * 0.5 * edges[0] * head
        return total

    def __call__(self, gen, k):
        which = np.searchsorted(np.cumsum(self.mass) / self.mass.sum(), gen.random(k), side="right")
        which = np.minimum(which, len(self.sides) - 1)
        out = np.empty(k)
        for i, (s, edges, mass, _, head, dens) in enumerate(self.sides):
            sel = np.flatnonzero(which == i)
            if not sel.size:
                continue
            cum = np.concatenate([[head], head + np.cumsum(mass)])
            u = gen.random(sel.size) * cum[-1]
            v = gen.random(sel.size)
            j = np.searchsorted(cum, u, side="right") - 1
            in_head = u < head
            j = np.clip(j, 0, mass.size - 1)
            ya, yb = edges[j], edges[j + 1]
            fa, fb = dens[j], dens[j + 1]
            with np.errstate(all="ignore"):
                g = 1.0 + np.log(fb / fa) / np.log(yb / ya)
                r = yb / ya
                pw = ya * (1.0 + v * (r**g - 1.0)) ** (1.0 / g)
                lg = ya * r**v
            y = np.where(np.isfinite(pw) & (np.abs(g) > 1e-8), pw, lg)
            y = np.where(in_head, v * edges[0], y)
            out[sel] = s * y
        return out


def _rate_above(measure, rho):
    total = 0.0
    for s in measure.sides:
        near, _ = measure._quad(lambda u, s=s: measure._dens(s, u), rho, 1.0) if rho < 1.0 else (0.0, 0.0)
        far, _ = measure._tail_mass(s)
        total += near + far
    return total


def _var_below(measure, rho):
    if rho <= 0:
        return 0.0
    total = 0.0
    for s in measure.sides:
        if measure.inner_moment is not None:
            total += float(measure.inner_moment(2, rho, s))
        else:
            v, _ = measure._quad(lambda u, s=s: u * u * measure._dens(s, u), rho * 1e-24, rho)
            total += v
    return total


def default_cutoff(measure, var_fraction=1e-4, max_rate=100.0):
    """Small-jump cutoff for a density measure.

    The largest ``rho`` whose substituted variance is at most
    ``var_fraction`` of the total jump variance, raised if needed so that the
    jump rate ``nu(|y| > rho)`` stays at most ``max_rate``.  Measures of finite
    mass not exceeding ``max_rate`` are simulated without a cutoff.
    """
    if isinstance(measure, AtomicMeasure):
        return 0.0
    mass = getattr(measure, "total_mass", None)
    if mass is not None and mass <= max_rate:
        return 0.0
    total_var = _var_below(measure, 1.0) + sum(
        integrate.quad(lambda u, s=s: u * u * float(measure._dens(s, u)), 1.0, np.inf, limit=200)[0]
        for s in measure.sides
    )
    lo, hi = -30.0, 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _var_below(measure, 10.0**mid) <= var_fraction * total_var:
            lo = mid
        else:
            hi = mid
    rho = 10.0**lo
    if _rate_above(measure, rho) > max_rate:
        lo, hi = lo, 0.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if _rate_above(measure, 10.0**mid) > max_rate:
                lo = mid
            else:
                hi = mid
        rho = 10.0**hi
    return rho


_models = weakref.WeakKeyDictionary()
_models_lock = threading.Lock()


def jump_model(triplet, rho=None):
    """Build (and cache per triplet) the :class:`JumpModel` for cutoff ``rho``."""
    with _models_lock:
        per = _models.setdefault(triplet, {})
        if rho in per:
            return per[rho]
    nu = triplet.nu
    if rho is not None and not 0.0 <= rho <= 1.0:
        raise ValidationError("small-jump cutoff rho must lie in [0, 1]", "/rho")
    if nu.is_zero:
        jm = JumpModel(0.0, triplet.a, triplet.sigma2, 0.0, 0.0, None)
    elif isinstance(nu, AtomicMeasure):
        r = 0.0 if rho is None else rho
        z, w = nu.sizes, nu.masses
        big = np.abs(z) > r
        comp = float(np.sum(np.where(big & (np.abs(z) <= 1.0), z * w, 0.0)))
        small_var = float(np.sum(np.where(big, 0.0, z * z * w)))
        sampler = _atomic_sampler(z[big], w[big]) if big.any() else None
        jm = JumpModel(r, triplet.a - comp, triplet.sigma2 + small_var, float(w[big].sum()), small_var, sampler)
    elif isinstance(nu, DensityMeasure):
        if rho is None:
            r = default_cutoff(nu)
        else:
            r = float(rho)
            if r == 0.0 and getattr(nu, "total_mass", None) is None:
                raise CutoffRequiredError("this Lévy measure has infinite mass; a cutoff rho > 0 is required", "/rho")
        table = _DensityTable(nu, r)
        small_var = _var_below(nu, r)
        comp = table.compensator(r)
        jm = JumpModel(r, triplet.a - comp, triplet.sigma2 + small_var, float(table.mass.sum()), small_var, table)
    else:
        raise ValidationError(f"cannot simulate measure of type {type(nu).__name__}", "/nu")
    with _models_lock:
        _models[triplet][rho] = jm
    return jm


def levy_increments(triplet, durations, gen, size=1, scale=1.0, rho=None):
    """``scale * (L(t_{j+1}) - L(t_j))`` for cells of the given own-time lengths.

    Returns an array of shape ``(size, len(durations))``.  Draw order is fixed:
    Gaussian normals, Poisson counts, then jump sizes.
    """
    dur = np.asarray(durations, dtype=float)
    jm = jump_model(triplet, rho)
    shape = (int(size), dur.size)
    out = np.broadcast_to(jm.drift * dur * scale, shape).copy()
    if jm.gauss_var > 0:
        out += gen.standard_normal(shape) * (math.sqrt(jm.gauss_var) * scale * np.sqrt(dur))
    if jm.rate > 0:
        counts = gen.poisson(jm.rate * dur, size=shape)
        k = int(counts.sum())
        if k:
            sizes = jm.sample_sizes(gen, k)
            cell = np.repeat(np.arange(out.size), counts.ravel())
            out += scale * np.bincount(cell, weights=sizes, minlength=out.size).reshape(shape)
    return out


def _cumulative(increments):
    out = np.zeros(increments.shape[:-1] + (increments.shape[-1] + 1,))
    np.cumsum(increments, axis=-1, out=out[..., 1:])
    return out


# -- samplers ------------------------------------------------------------------


def _check(epsilon, n):
    if not (math.isfinite(epsilon) and epsilon > 0):
        raise ValidationError("epsilon must be > 0", "/epsilon")
    if int(n) < 1:
        raise ValidationError("n must be >= 1", "/n")


def scaled_brownian_batch(epsilon, n, gen, size):
    """``(size, n+1)`` grid values of ``sqrt(eps) B``."""
    _check(epsilon, n)
    return _cumulative(math.sqrt(epsilon / n) * gen.standard_normal((int(size), int(n))))


def sample_scaled_brownian(epsilon, n, rng):
    """One path of ``sqrt(eps) B`` on the grid (the law of ``eps B(t/eps)``)."""
    vals = scaled_brownian_batch(epsilon, n, rng.generator(0), 1)[0]
    return SamplePath(vals, step=False)


def scaled_levy_batch(triplet, epsilon, n, gen, size, rho=None):
    """``(size, n+1)`` grid values of ``eps L(t / eps)``."""
    _check(epsilon, n)
    dur = np.full(int(n), 1.0 / (n * epsilon))
    return _cumulative(levy_increments(triplet, dur, gen, size, scale=epsilon, rho=rho))


def sample_scaled_levy(triplet, epsilon, n, rng, rho=None):
    """One path of ``eps L(t / eps)`` on ``[0, 1]`` as a step path."""
    vals = scaled_levy_batch(triplet, epsilon, n, rng.generator(0), 1, rho)[0]
    return SamplePath(vals, step=not triplet.nu.is_zero)


def levy_on_horizon(triplet, horizon, cells, rng, rho=None):
    """Unscaled ``L`` on ``[0, horizon]`` with ``cells`` uniform cells."""
    dur = np.full(int(cells), float(horizon) / cells)
    vals = _cumulative(levy_increments(triplet, dur, rng.generator(0), 1, rho=rho))[0]
    return SamplePath(vals, step=not triplet.nu.is_zero, horizon=horizon)


def driving_batch(model, n, gen, size, rho=None):
    """Driving grid values ``(g, h) = (sqrt(eps) B, L^eps)``, each ``(size, n+1)``."""
    g = scaled_brownian_batch(model.epsilon, n, gen, size)
    if model.has_jumps:
        h = scaled_levy_batch(model.triplet, model.epsilon, n, gen, size, rho)
    else:
        h = np.zeros_like(g)
    return g, h


# -- schemes -------------------------------------------------------------------


def _coef(fn, x):
    return np.asarray(fn(x), dtype=float) * np.ones_like(x)


def fm_batch(model, m, g, h, x0=0.0, bound=DEFAULT_BOUND):
    """Vectorized F^m on driving arrays of shape ``(size, n+1)``.

    On each coarse cell ``(k/m, (k+1)/m]`` the coefficients are frozen at
    the value at ``k/m``; fine-grid values follow
    ``x + b dt + s (g - g_k) + e (h - h_k)``.  Returns ``(values, aborted)``.
    """
    g = np.atleast_2d(np.asarray(g, dtype=float))
    h = np.atleast_2d(np.asarray(h, dtype=float))
    if g.shape != h.shape:
        raise GridMismatchError("driving paths must share one grid")
    size, n1 = g.shape
    n = n1 - 1
    m = int(m)
    if m < 1 or n % m:
        raise GridMismatchError(f"driving grid of {n} cells does not refine 1/{m}")
    r = n // m
    c = model.coeffs
    out = np.empty_like(g)
    out[:, 0] = x0
    aborted = np.zeros(size, dtype=bool)
    x = np.full(size, float(x0))
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(m):
            j0 = k * r
            b, s, e = _coef(c.b, x), _coef(c.sigma, x), _coef(c.eta, x)
            for i in range(1, r + 1):
                j = j0 + i
                dt = i / n
                dg = g[:, j] - g[:, j0]
                dh = h[:, j] - h[:, j0]
                out[:, j] = x + b * dt + s * dg + e * dh
            x = out[:, j0 + r]
            x, aborted = _guard(x, aborted, bound)
    return out, aborted


def _guard(x, aborted, bound):
    # aborted trajectories are frozen at the bound so later steps stay finite
    bad = ~(np.abs(x) <= bound)
    if bad.any():
        aborted = aborted | bad
        x = np.where(bad, np.copysign(bound, np.nan_to_num(x)), x)
    return x, aborted


def _euler_recursion(model, g, h, x0, bound):
    size, n1 = g.shape
    n = n1 - 1
    c = model.coeffs
    out = np.empty_like(g)
    out[:, 0] = x0
    aborted = np.zeros(size, dtype=bool)
    x = np.full(size, float(x0))
    dt = 1 / n
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            b, s, e = _coef(c.b, x), _coef(c.sigma, x), _coef(c.eta, x)
            dg = g[:, k + 1] - g[:, k]
            dh = h[:, k + 1] - h[:, k]
            out[:, k + 1] = x + b * dt + s * dg + e * dh
            x, aborted = _guard(out[:, k + 1], aborted, bound)
    return out, aborted


def euler_batch(model, n, gen, size, x0=0.0, bound=DEFAULT_BOUND, rho=None):
    """Left-point Euler scheme on ``n`` cells for ``size`` independent paths.

    ``X_{k+1} = X_k + b(X_k) / n + sigma(X_k) dg_k + eta(X_k) dh_k`` with
    ``dg`` and ``dh`` the grid increments of ``sqrt(eps) B`` and ``L^eps``.
    Returns ``(values, aborted, g, h)``.
    """
    _check(model.epsilon, n)
    g, h = driving_batch(model, n, gen, size, rho)
    vals, aborted = _euler_recursion(model, g, h, x0, bound)
    return vals, aborted, g, h


def euler_maruyama(model, n, rng, x0=0.0, bound=DEFAULT_BOUND, rho=None):
    """One Euler path of the jump SDE (see :func:`euler_batch`)."""
    vals, aborted, _, _ = euler_batch(model, n, rng.generator(0), 1, x0, bound, rho)
    v = np.clip(np.nan_to_num(vals[0], nan=bound), -bound, bound)
    return SamplePath(v, step=model.has_jumps, aborted=bool(aborted[0]))


def fm_scheme(model, m, driving, x0=0.0, bound=DEFAULT_BOUND):
    """F^m applied to a pair of driving sample paths on a shared grid."""
    g, h = driving
    if g.n != h.n:
        raise GridMismatchError(f"driving grids differ: {g.n} vs {h.n}")
    vals, aborted = fm_batch(model, m, g.values[None, :], h.values[None, :], x0, bound)
    v = np.clip(np.nan_to_num(vals[0], nan=bound), -bound, bound)
    return SamplePath(v, step=g.step or h.step, aborted=bool(aborted[0]))


def discretize_Zn(levy_path, n):
    """Step path ``t -> L(floor(n t)) / n`` on ``[0, 1]`` from ``L`` on ``[0, n]``."""
    n = int(n)
    if n < 1:
        raise ValidationError("n must be >= 1", "/n")
    horizon = getattr(levy_path, "horizon", 1.0)
    if abs(horizon - n) > 1e-12 * n:
        raise GridMismatchError(f"the Lévy path covers [0, {horizon:g}], expected [0, {n}]")
    if levy_path.n % n:
        raise GridMismatchError(f"a grid of {levy_path.n} cells does not contain the integers 0..{n}")
    r = levy_path.n // n
    return SamplePath(levy_path.values[::r] / n, step=True)
