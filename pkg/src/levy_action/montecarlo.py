"""Rare-event Monte Carlo, ε log P rate tables and approximation diagnostics.

Samples are produced in fixed-size chunks; chunk ``i`` always draws from
substream ``i`` of the caller's :class:`~levy_action.simulate.RngStream` and
chunk results are folded in index order, so estimates do not depend on the
number of worker threads.  ``LEVY_ACTION_THREADS`` caps the default worker
count.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ValidationError
from .minimize import BoundaryProblem, drift_path, minimize_action
from .action import evaluate
from .paths import Path
from .simulate import (
    DEFAULT_BOUND,
    RngStream,
    _cumulative,
    _euler_recursion,
    driving_batch,
    fm_batch,
    levy_increments,
)

CHUNK = 1 << 14
Z95 = 1.959963984540054


def default_workers():
    cap = os.environ.get("LEVY_ACTION_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValidationError(f"LEVY_ACTION_THREADS must be an integer, got {cap!r}")
    return n


def _chunks(total, size=CHUNK):
    full, rest = divmod(int(total), size)
    return [size] * full + ([rest] if rest else [])


def _run_chunks(fn, total, workers=None, chunk=CHUNK):
    """``[fn(i, size_i)]`` over chunks, in chunk order."""
    sizes = _chunks(total, chunk)
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(sizes) == 1:
        return [fn(i, s) for i, s in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(len(sizes)), sizes))


# -- events --------------------------------------------------------------------


@dataclass(frozen=True)
class EventSpec:
    """Predicate on grid paths, vectorized over rows of a ``(size, n+1)`` array.

    Built-ins: ``terminal_ge(c)`` is ``{phi(1) >= c}``, ``terminal_le(c)`` is
    ``{phi(1) <= c}``, ``sup_ge(c)`` is ``{sup |phi| >= c}`` and
    ``tube(ref, delta)`` is ``{||phi - ref||_inf <= delta}``.  Events combine
    with ``|``, ``&`` and ``~``.
    """

    kind: str
    threshold: float = 0.0
    reference: Path = None
    parts: tuple = ()
    fn: object = None
    label: str = ""

    @classmethod
    def terminal_ge(cls, c):
        return cls("terminal_ge", float(c), label=f"terminal>={c:g}")

    @classmethod
    def terminal_le(cls, c):
        return cls("terminal_le", float(c), label=f"terminal<={c:g}")

    @classmethod
    def sup_ge(cls, c):
        return cls("sup_ge", float(c), label=f"sup>={c:g}")

    @classmethod
    def tube(cls, reference, delta):
        if not delta > 0:
            raise ValidationError("tube radius must be > 0", "/delta")
        return cls("tube", float(delta), reference, label=f"tube<={delta:g}")

    @classmethod
    def custom(cls, fn, label="custom"):
        return cls("custom", fn=fn, label=label)

    @classmethod
    def always(cls):
        return cls("always", label="always")

    def __or__(self, other):
        return EventSpec("or", parts=(self, other), label=f"({self.label})|({other.label})")

    def __and__(self, other):
        return EventSpec("and", parts=(self, other), label=f"({self.label})&({other.label})")

    def __invert__(self):
        return EventSpec("not", parts=(self,), label=f"~({self.label})")

    def __call__(self, values):
        v = np.atleast_2d(np.asarray(values, dtype=float))
        k = self.kind
        if k == "terminal_ge":
            return v[:, -1] >= self.threshold
        if k == "terminal_le":
            return v[:, -1] <= self.threshold
        if k == "sup_ge":
            return np.max(np.abs(v), axis=1) >= self.threshold
        if k == "tube":
            ref = self.reference.values
            if ref.size != v.shape[1]:
                raise ValidationError(f"tube reference has {ref.size - 1} cells, paths have {v.shape[1] - 1}", "/reference")
            return np.max(np.abs(v - ref), axis=1) <= self.threshold
        if k == "always":
            return np.ones(v.shape[0], dtype=bool)
        if k == "custom":
            return np.asarray(self.fn(v), dtype=bool)
        if k == "or":
            return self.parts[0](v) | self.parts[1](v)
        if k == "and":
            return self.parts[0](v) & self.parts[1](v)
        if k == "not":
            return ~self.parts[0](v)
        raise ValidationError(f"unknown event kind {k!r}")


def parse_event(text, reference=None):
    """``terminal>=c``, ``terminal<=c``, ``sup>=c`` or ``tube<=delta``."""
    t = text.replace(" ", "")
    for prefix, build in (
        ("terminal>=", EventSpec.terminal_ge),
        ("terminal<=", EventSpec.terminal_le),
        ("sup>=", EventSpec.sup_ge),
        ("tube<=", None),
    ):
        if t.startswith(prefix):
            try:
                c = float(t[len(prefix):])
            except ValueError:
                raise ValidationError(f"bad threshold in event {text!r}", "/event")
            if build is None:
                if reference is None:
                    raise ValidationError("a tube event needs a reference path", "/reference")
                return EventSpec.tube(reference, c)
            return build(c)
    raise ValidationError(f"unknown event {text!r}; use terminal>=c, terminal<=c, sup>=c or tube<=d", "/event")


# -- estimates -----------------------------------------------------------------


def wilson_interval(hits, total, z=Z95):
    """Wilson score interval for a binomial proportion."""
    if total <= 0:
        raise ValidationError("need at least one sample")
    p = hits / total
    den = 1.0 + z * z / total
    centre = (p + z * z / (2 * total)) / den
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / den
    # the interval ends are exactly 0 and 1 at the boundary counts
    lo = 0.0 if hits == 0 else max(0.0, centre - half)
    hi = 1.0 if hits == total else min(1.0, centre + half)
    return lo, hi


@dataclass(frozen=True)
class LdpEstimate:
    epsilon: float
    p_hat: float
    ci95: tuple
    rate_value: float
    n_samples: int
    hits: int
    no_hits: bool = False
    aborted: int = 0

    @property
    def rate_band(self):
        """``eps ln`` of the interval ends (``-inf`` for a zero lower end)."""
        lo, hi = self.ci95
        f = lambda p: self.epsilon * math.log(p) if p > 0 else -math.inf  # noqa: E731
        return f(lo), f(hi)


def _estimate(epsilon, hits, total, aborted=0):
    p = hits / total
    ci = wilson_interval(hits, total)
    if hits == 0:
        rate = epsilon * math.log(3.0 / total)
    else:
        rate = epsilon * math.log(p)
    return LdpEstimate(float(epsilon), p, ci, rate, int(total), int(hits), hits == 0, int(aborted))


def estimate_event(model, event, n_samples, n, rng, workers=None, x0=0.0, rho=None, bound=DEFAULT_BOUND):
    """Crude Monte Carlo frequency of ``event`` for Euler paths of ``model``.

    Aborted trajectories (overflow guard) count as misses and are reported.
    With no hits, ``rate_value`` is the rule-of-three bound
    ``eps ln(3 / n_samples)`` and ``no_hits`` is set.
    """
    if int(n_samples) < 100:
        raise ValidationError("n_samples must be >= 100", "/n_samples")
    rng = rng if isinstance(rng, RngStream) else RngStream(rng)

    def chunk(i, size):
        gen = rng.generator(i)
        g, h = driving_batch(model, n, gen, size, rho)
        vals, aborted = _euler_recursion(model, g, h, x0, bound)
        hit = event(vals) & ~aborted
        return int(hit.sum()), int(aborted.sum())

    parts = _run_chunks(chunk, n_samples, workers)
    hits = sum(p[0] for p in parts)
    ab = sum(p[1] for p in parts)
    return _estimate(model.epsilon, hits, int(n_samples), ab)


def event_masks(model, events, n_samples, n, rng, workers=None, x0=0.0, rho=None):
    """Boolean hit arrays of several events on the same sampled paths."""
    rng = rng if isinstance(rng, RngStream) else RngStream(rng)

    def chunk(i, size):
        g, h = driving_batch(model, n, rng.generator(i), size, rho)
        vals, aborted = _euler_recursion(model, g, h, x0, DEFAULT_BOUND)
        return [e(vals) & ~aborted for e in events]

    parts = _run_chunks(chunk, n_samples, workers)
    return [np.concatenate([p[j] for p in parts]) for j in range(len(events))]


# -- rate table ----------------------------------------------------------------


def event_infimum(model, event, n=400, functional=None):
    """``inf S`` over the event, by the 1-D endpoint sweep.

    ``terminal_ge(c)``/``terminal_le(c)``: zero if the drift flow ends inside
    the event, else the minimum action to end exactly at ``c``.  ``sup_ge(c)``:
    the smaller of the actions to end at ``+c`` and ``-c`` at time 1 (exact when
    the start is a rest point of the drift).  ``tube``: ``S`` of the reference
    path, an upper bound on the infimum.  Returns ``nan`` for other events.
    """
    if functional is None:
        functional = "general" if model.has_jumps else "sde_brownian"
    k, c = event.kind, event.threshold
    if k == "tube":
        n = event.reference.n
    flow = drift_path(model, n)
    if event(flow[None, :])[0]:
        return 0.0
    if k in ("terminal_ge", "terminal_le"):
        targets = [c]
    elif k == "sup_ge":
        targets = [c, -c]
    elif k == "tube":
        return float(evaluate(functional, event.reference, model))
    else:
        return math.nan
    best = math.inf
    for x1 in targets:
        try:
            r = minimize_action(BoundaryProblem(functional, model, x1, n))
        except Exception:  # noqa: BLE001 - an infeasible endpoint contributes +inf
            continue
        best = min(best, r.action)
    return best


CORRECTIONS = {
    "eps_log": lambda e: np.column_stack([np.ones_like(e), e * np.log(1.0 / e)]),
    "linear": lambda e: np.column_stack([np.ones_like(e), e]),
    "eps_log_linear": lambda e: np.column_stack([np.ones_like(e), e * np.log(1.0 / e), e]),
    "none": lambda e: np.ones((e.size, 1)),
}


@dataclass
class RateTable:
    rows: list
    neg_inf_S: float
    extrapolated: float
    correction: str
    coefficients: tuple = field(default=())

    COLUMNS = ("epsilon", "p_hat", "ci_lo", "ci_hi", "rate_value", "neg_inf_S")

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow(_fmt(v) for v in (r.epsilon, r.p_hat, r.ci95[0], r.ci95[1], r.rate_value, self.neg_inf_S))
        return buf.getvalue()


def _fmt(v):
    return "%.17g" % v


def extrapolate(epsilons, rates, correction="eps_log"):
    """Least-squares fit of ``rate(eps)`` to the correction model; returns ``(c0, coeffs)``."""
    e = np.asarray(epsilons, dtype=float)
    r = np.asarray(rates, dtype=float)
    ok = np.isfinite(r)
    design = CORRECTIONS[correction](e[ok])
    if ok.sum() < design.shape[1]:
        return math.nan, ()
    coef, *_ = np.linalg.lstsq(design, r[ok], rcond=None)
    return float(coef[0]), tuple(float(c) for c in coef)


def rate_table(model, event, epsilons, n_samples, n, rng, correction="eps_log", workers=None, minimize_n=400):
    """Per-ε estimates, the extrapolated limit and ``-inf S`` for comparison.

    ``epsilons`` must be strictly decreasing.  Each ε uses its own stream id
    (its position in the list) under the caller's seed.
    """
    eps = [float(e) for e in epsilons]
    if not eps or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValidationError("epsilons must be strictly decreasing", "/epsilons")
    if correction not in CORRECTIONS:
        raise ValidationError(f"unknown correction {correction!r}", "/correction")
    rng = rng if isinstance(rng, RngStream) else RngStream(rng)
    rows = [
        estimate_event(model.with_epsilon(e), event, n_samples, n, rng.child(rng.stream_id + i), workers)
        for i, e in enumerate(eps)
    ]
    s = event_infimum(model, event, minimize_n)
    limit, coef = extrapolate(eps, [r.rate_value if not r.no_hits else math.nan for r in rows], correction)
    return RateTable(rows, -s, limit, correction, coef)


def gaussian_tail(x):
    """``P(Z >= x)`` for a standard normal ``Z``."""
    return 0.5 * special.erfc(x / math.sqrt(2.0))


# -- exponential-equivalence diagnostics ---------------------------------------


def levy_gap_batch(triplet, epsilon, gen, size, per_unit=8, rho=None):
    """Sup-distances between ``Z_N / N`` and ``eps L(./eps)``, ``N = floor(1/eps)``.

    ``L`` is sampled on ``[0, 1/eps]`` on the union of a grid with
    ``per_unit`` cells per unit time and the integers ``0..N``; both paths are
    step functions and the distance is taken over those breakpoints.
    """
    horizon = 1.0 / epsilon
    big_n = int(math.floor(horizon))
    if big_n < 1:
        raise ValidationError("epsilon must be <= 1 for the Z_N discretization", "/epsilon")
    cells = max(1, int(math.ceil(horizon * per_unit)))
    times = np.unique(np.concatenate([np.linspace(0.0, horizon, cells + 1), np.arange(big_n + 1, dtype=float)]))
    L = _cumulative(levy_increments(triplet, np.diff(times), gen, size, rho=rho))
    # Z_N/N at time t = eps * tau is L(floor(N eps tau)) / N
    idx_int = np.searchsorted(times, np.arange(big_n + 1, dtype=float))
    k = np.floor(big_n * epsilon * times + 1e-12).astype(int)
    k = np.minimum(k, big_n)
    z = L[:, idx_int[k]] / big_n
    return np.max(np.abs(z - epsilon * L), axis=1)


def sde_gap_batch(model, m, n, gen, size, rho=None):
    """Sup-distances between F^m and the fine Euler path on shared noise."""
    g, h = driving_batch(model, n, gen, size, rho)
    coarse, _ = fm_batch(model, m, g, h)
    fine, _ = _euler_recursion(model, g, h, 0.0, DEFAULT_BOUND)
    return np.max(np.abs(coarse - fine), axis=1)


@dataclass(frozen=True)
class GapEstimate:
    frequency: float
    ci95: tuple
    n_samples: int
    exceed: int
    mean_gap: float


def equivalence_gap(target, n_samples, delta, rng, epsilon=None, m=None, n=None, workers=None, per_unit=8, rho=None):
    """Empirical ``P(sup-distance > delta)`` for an approximation scheme.

    With a :class:`~levy_action.levy_core.LevyTriplet` and ``epsilon``: the
    ``Z_N / N`` discretization against ``eps L(./eps)``.  With a
    :class:`~levy_action.model.ModelSpec`, ``m`` and a fine grid ``n``:
    F^m against the Euler scheme on ``n`` cells, sharing driving noise.
    """
    if not delta > 0:
        raise ValidationError("delta must be > 0", "/delta")
    rng = rng if isinstance(rng, RngStream) else RngStream(rng)
    if m is not None:
        if n is None:
            raise ValidationError("the SDE variant needs the fine grid size n", "/n")

        def chunk(i, size):
            return sde_gap_batch(target, m, n, rng.generator(i), size, rho)
    else:
        if epsilon is None:
            raise ValidationError("the Lévy variant needs epsilon", "/epsilon")

        def chunk(i, size):
            return levy_gap_batch(target, epsilon, rng.generator(i), size, per_unit, rho)

    gaps = np.concatenate(_run_chunks(chunk, n_samples, workers))
    exceed = int(np.sum(gaps > delta))
    return GapEstimate(exceed / gaps.size, wilson_interval(exceed, gaps.size), int(gaps.size), exceed, float(gaps.mean()))
