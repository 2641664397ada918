"""Minimum-action paths between fixed endpoints.

The interior grid values are optimized by L-BFGS-B with the analytic gradient
from :func:`levy_action.action.action_and_gradient`.  The search runs in
whitened coordinates ``phi = phi0 + C^{-T} w``, where ``C C^T`` is the
Hessian of the discrete Brownian action (``n`` times the second-difference
matrix), so the problem is well conditioned independently of ``n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .action import FUNCTIONALS, action_and_gradient, action_joint
from .errors import InfeasibleError, ValidationError
from .model import ModelSpec
from .paths import Path

_SMOOTH = ("brownian", "sde_brownian", "levy", "general")


@dataclass(frozen=True)
class BoundaryProblem:
    """Minimize ``functional`` over grid paths from ``x0`` to ``x1``."""

    functional: str
    model: ModelSpec
    x1: float
    n: int = 200
    x0: float = 0.0

    def __post_init__(self):
        if self.functional not in FUNCTIONALS:
            raise ValidationError(f"unknown functional {self.functional!r}", "/functional")
        if int(self.n) < 1:
            raise ValidationError("n must be >= 1", "/n")
        if float(self.x0) != 0.0:
            raise ValidationError("paths of the action functionals start at 0", "/x0")
        if not math.isfinite(float(self.x1)):
            raise ValidationError("x1 must be finite", "/x1")

    @property
    def objective(self):
        # the joint infimum coincides with the Lagrangian form by convex duality
        return "general" if self.functional == "joint" else self.functional


@dataclass
class MinimizationResult:
    path: Path
    action: float
    grad_norm: float
    el_residual: float
    iterations: int
    converged: bool
    message: str = ""
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        doc = self.path.to_dict()
        doc["metadata"] = {
            "action": self.action,
            "grad_norm": self.grad_norm,
            "el_residual": self.el_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "message": self.message,
            **self.meta,
        }
        return doc


def _whitener(n):
    """Banded lower Cholesky factor of ``n * tridiag(-1, 2, -1)`` (size n-1)."""
    m = n - 1
    ab = np.empty((2, m))
    ab[0] = 2.0 * n
    ab[1] = -1.0 * n
    return linalg.cholesky_banded(ab, lower=True)


def drift_path(model, n, x0=0.0):
    """Forward-Euler solution of the zero-cost flow ``phi' = H_xi(phi, 0)``."""
    c, t = model.coeffs, model.triplet
    mean = t.mean() if model.has_jumps else 0.0
    x = np.empty(n + 1)
    x[0] = x0
    for k in range(n):
        v = float(c.b(x[k])) + (float(c.eta(x[k])) * mean if mean else 0.0)
        x[k + 1] = x[k] + v / n
    return x


def initial_path(problem):
    """Straight line, or the drift flow warped linearly onto ``x1``."""
    n = problem.n
    line = Path.line(problem.x0, problem.x1, n)
    s, _ = action_and_gradient(problem.objective, line, problem.model)
    if math.isfinite(s):
        return line
    flow = drift_path(problem.model, n, problem.x0)
    t = np.linspace(0.0, 1.0, n + 1)
    warped = Path(flow + t * (problem.x1 - flow[-1]))
    s, _ = action_and_gradient(problem.objective, warped, problem.model)
    if math.isfinite(s):
        return warped
    raise InfeasibleError(
        f"no finite-action starting path from {problem.x0} to {problem.x1}; "
        "try a smaller endpoint gap"
    )


def euler_lagrange_residual(path, model, functional=None):
    """Max over interior nodes of the discrete ``d/dt L_zeta - L_x``.

    This is ``n |dS/dphi_j|`` for the midpoint discretization.  By default
    the Lagrangian form is used for models with jumps and the Brownian form
    otherwise.
    """
    if functional is None:
        functional = "general" if model.has_jumps else "sde_brownian"
    if functional == "joint":
        functional = "general"
    s, g = action_and_gradient(functional, path, model)
    if not math.isfinite(s):
        return math.inf
    if path.n < 2:
        return 0.0
    return float(np.max(np.abs(path.n * g[1:-1])))


def minimize_action(problem, gtol=None, maxiter=None, init=None):
    """Quasi-Newton minimization of the discrete action (see module docstring).

    Returns the best path found; ``converged`` is true when L-BFGS-B reports
    convergence and the whitened gradient satisfies
    ``max|grad| <= gtol`` (default ``1e-8 (1 + |S|)``).
    """
    n = problem.n
    model = problem.model
    phi0 = init if init is not None else initial_path(problem)
    if phi0.n != n or phi0.start != problem.x0 or phi0.end != float(problem.x1):
        raise ValidationError("initial path must match the grid and endpoints", "/init")
    name = problem.objective
    base = phi0.values.copy()
    if n < 2:
        s, _ = action_and_gradient(name, phi0, model)
        return _finish(problem, phi0, s, 0.0, 0, True, "no interior nodes")
    chol = _whitener(n)
    maxiter = 10 * n if maxiter is None else int(maxiter)
    s_init, _ = action_and_gradient(name, phi0, model)

    def unwhiten(w):
        y = base.copy()
        y[1:-1] += linalg.solve_banded((0, 1), _upper(chol), w)
        return y

    best = {"s": s_init, "w": np.zeros(n - 1)}

    def fun(w):
        y = unwhiten(w)
        s, g = action_and_gradient(name, Path(y), model)
        if not math.isfinite(s):
            return 1e300, np.zeros_like(w)
        if s < best["s"]:
            best["s"], best["w"] = s, w.copy()
        return s, linalg.solve_banded((1, 0), chol, g[1:-1])

    res = optimize.minimize(
        fun,
        np.zeros(n - 1),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": maxiter, "maxfun": 2 * maxiter, "gtol": 1e-14, "ftol": 1e-15, "maxcor": 20},
    )
    path = Path(unwhiten(best["w"]))
    s, g = action_and_gradient(name, path, model)
    gw = linalg.solve_banded((1, 0), chol, g[1:-1])
    gnorm = float(np.max(np.abs(gw)))
    tol = 1e-8 * (1.0 + abs(s)) if gtol is None else float(gtol)
    converged = bool(math.isfinite(s) and gnorm <= tol)
    msg = res.message if isinstance(res.message, str) else str(res.message)
    return _finish(problem, path, s, gnorm, int(res.nit), converged, msg)


def _upper(chol):
    """Banded storage of ``C^T`` from the lower factor ``C``."""
    up = np.empty_like(chol)
    up[1] = chol[0]
    up[0, 1:] = chol[1, :-1]
    up[0, 0] = 0.0
    return up


def _finish(problem, path, s, gnorm, nit, converged, msg):
    if problem.functional == "joint":
        s = action_joint(path, problem.model)
    el = euler_lagrange_residual(path, problem.model, problem.objective)
    return MinimizationResult(
        path, float(s), gnorm, el, nit, converged, msg,
        {"functional": problem.functional, "x0": problem.x0, "x1": float(problem.x1), "n": problem.n},
    )
