import json
import math

import numpy as np
import pytest

from levy_action.action import action_and_gradient, action_general, action_joint, evaluate
from levy_action.errors import InfeasibleError, ValidationError
from levy_action.levy_core import AtomicMeasure, LevyTriplet, TemperedStable
from levy_action.minimize import (
    BoundaryProblem,
    drift_path,
    euler_lagrange_residual,
    initial_path,
    minimize_action,
)
from levy_action.model import CoefficientSet, ModelSpec, brownian_model
from levy_action.paths import Path

OU_EXACT = (math.e**2 - 1) / (math.e**2 - 2 + math.e**-2)
# initial slope of sinh(t)/sinh(1); oracles.ou_shooting() gives 0.8509181282392233
OU_V0 = 1.0 / math.sinh(1.0)

OU = brownian_model(b=lambda x: -x)
POISSON = ModelSpec(CoefficientSet(b=0.0, sigma=0.0, eta=1.0), LevyTriplet.poisson(1.0, 1.0))


def sinh_path(n):
    return Path.from_function(lambda t: np.sinh(t) / math.sinh(1.0), n)


def test_ou_oracle_constants():
    assert OU_V0 == pytest.approx(0.8509181282392233, abs=1e-12)


def test_brownian_minimizer_is_straight_line():
    r = minimize_action(BoundaryProblem("brownian", OU, 1.0, n=50))
    assert r.action == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(r.path.values, np.linspace(0, 1, 51), atol=1e-10)
    assert r.converged


def test_ou_minimizer_matches_closed_form():
    r = minimize_action(BoundaryProblem("sde_brownian", OU, 1.0, n=2000))
    assert r.converged
    assert r.action == pytest.approx(OU_EXACT, abs=1e-3)
    assert r.path.sup_distance(sinh_path(2000)) < 1e-6
    assert r.el_residual <= 1e-3
    assert r.action <= evaluate("sde_brownian", Path.line(0, 1, 2000), OU)


def test_ou_through_general_and_joint():
    for name in ("general", "joint"):
        r = minimize_action(BoundaryProblem(name, OU, 1.0, n=400))
        assert r.action == pytest.approx(OU_EXACT, abs=1e-5)
    r = minimize_action(BoundaryProblem("joint", OU, 1.0, n=400))
    assert r.action == pytest.approx(action_joint(r.path, OU), abs=1e-12)


def test_levy_mean_endpoint_costs_nothing():
    ts = ModelSpec(CoefficientSet(b=0.0, sigma=0.0, eta=1.0), LevyTriplet(a=0.2, nu=TemperedStable(1.5, 2.0)))
    mean = ts.triplet.mean()
    r = minimize_action(BoundaryProblem("levy", ts, mean, n=20))
    assert r.action == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(r.path.values, np.linspace(0, mean, 21), atol=1e-12)


def test_levy_line_is_minimizer_for_state_free_integrand():
    r = minimize_action(BoundaryProblem("levy", POISSON, 2.0, n=40))
    assert r.action == pytest.approx(3 * math.log(3) - 2, abs=1e-10)


def test_el_residual_examples():
    # grid slopes of a linspace line differ by rounding; the residual scales as n^2 eps
    assert euler_lagrange_residual(Path.line(0, 1, 100), brownian_model()) == pytest.approx(0.0, abs=1e4 * 1e-15)
    base = euler_lagrange_residual(sinh_path(2000), OU)
    assert base <= 1e-3
    bumped = Path.from_function(lambda t: np.sinh(t) / math.sinh(1.0) + 0.1 * np.sin(np.pi * t), 2000)
    assert euler_lagrange_residual(bumped, OU) > 10 * base
    assert euler_lagrange_residual(bumped, OU) > 0.5


def test_state_dependent_jump_model_minimizer_is_stationary():
    model = ModelSpec(
        CoefficientSet(b=lambda x: -x, sigma=0.5, eta=lambda x: 1 + 0.2 * np.tanh(x)),
        LevyTriplet(nu=AtomicMeasure(((1.0, 1.0), (-0.5, 0.5)))),
    )
    r = minimize_action(BoundaryProblem("general", model, 1.0, n=100))
    assert r.converged
    assert r.el_residual < 1e-5
    assert r.action <= action_general(Path.line(0, 1, 100), model)
    # no nearby path does better
    rng = np.random.default_rng(0)
    for _ in range(5):
        bump = np.zeros(101)
        bump[1:-1] = 1e-3 * rng.standard_normal(99)
        assert action_general(Path(r.path.values + bump), model) >= r.action - 1e-12


def test_refinement_is_second_order():
    model = brownian_model(b=lambda x: -np.sin(3 * x), sigma=lambda x: 1 + 0.3 * np.cos(x))
    s = [minimize_action(BoundaryProblem("sde_brownian", model, 1.5, n=n)).action for n in (40, 80, 160)]
    assert (s[0] - s[1]) / (s[1] - s[2]) == pytest.approx(4.0, rel=0.1)


def test_time_symmetry_for_even_functional():
    x1 = 1.2
    # sigma symmetric about x1/2 and a symmetric jump measure
    model = ModelSpec(
        CoefficientSet(b=0.0, sigma=lambda x: 1 + 0.3 * np.cos(2 * np.pi * (x - x1 / 2)), eta=1.0),
        LevyTriplet(nu=AtomicMeasure(((1.0, 0.5), (-1.0, 0.5)))),
    )
    r = minimize_action(BoundaryProblem("general", model, x1, n=80))
    mirrored = Path(x1 - r.path.values[::-1])
    assert action_general(mirrored, model) == pytest.approx(r.action, abs=1e-10)
    assert r.action < action_general(Path.line(0, x1, 80), model)


def test_gradient_matches_finite_differences_on_smooth_paths():
    model = ModelSpec(
        CoefficientSet(b=lambda x: np.cos(x), sigma=lambda x: 1 + 0.2 * np.sin(x), eta=0.7),
        LevyTriplet(sigma2=0.1, nu=AtomicMeasure(((1.0, 1.0), (2.0, 0.2)))),
    )
    p = Path.from_function(lambda t: 0.8 * t + 0.3 * np.sin(2 * t), 12)
    for name in ("sde_brownian", "general"):
        _, g = action_and_gradient(name, p, model)
        h = 1e-6
        for j in range(1, 12):
            up, dn = p.values.copy(), p.values.copy()
            up[j] += h
            dn[j] -= h
            fd = (evaluate(name, Path(up), model) - evaluate(name, Path(dn), model)) / (2 * h)
            assert g[j] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_infeasible_line_falls_back_to_drift_flow():
    # compensated unit jumps with a = 1: Psi* is finite only for slopes > 0
    model = ModelSpec(CoefficientSet(b=lambda x: 1.0 - x, sigma=0.0, eta=1.0), LevyTriplet.poisson(1.0, 1.0, a=1.0))
    problem = BoundaryProblem("general", model, 0.8, n=20)
    assert action_general(Path.line(0, 0.8, 20), model) == math.inf
    init = initial_path(problem)
    assert math.isfinite(action_general(init, model))
    np.testing.assert_allclose(drift_path(model, 4), [0, 0.5, 0.875, 1.15625, 1.3671875])
    with pytest.raises(InfeasibleError):
        initial_path(BoundaryProblem("levy", POISSON, -2.0, n=10))


def test_problem_validation_and_serialization():
    with pytest.raises(ValidationError):
        BoundaryProblem("sde_brownian", OU, 1.0, x0=1.0)
    with pytest.raises(ValidationError):
        BoundaryProblem("nope", OU, 1.0)
    r = minimize_action(BoundaryProblem("sde_brownian", OU, 1.0, n=10))
    doc = json.loads(json.dumps(r.to_dict()))
    assert Path.from_dict(doc).n == 10
    assert doc["metadata"]["action"] == r.action
    assert doc["metadata"]["converged"] is True


def test_maxiter_returns_best_so_far():
    r = minimize_action(BoundaryProblem("sde_brownian", OU, 1.0, n=200), maxiter=1)
    assert not r.converged
    assert r.action <= evaluate("sde_brownian", Path.line(0, 1, 200), OU)
