import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levy_action.action import (
    action_and_gradient,
    action_brownian,
    action_entropy_form,
    action_general,
    action_joint,
    action_levy,
    action_sde_brownian,
    compensator_triplet,
    dual_lower_bound,
    evaluate,
    psi_conjugate,
    solve_tilt,
)
from levy_action.errors import DegenerateDiffusionError, InfeasibleError, ValidationError
from levy_action.levy_core import AtomicMeasure, LevyTriplet, TemperedStable
from levy_action.model import CoefficientSet, ModelSpec, brownian_model
from levy_action.paths import Path, StepFunction

from oracles import brownian_dual_sup, ou_shooting, poisson_conjugate

OU_EXACT = (math.e**2 - 1) / (math.e**2 - 2 + math.e**-2)
# ou_shooting(): minimum by ODE shooting, agrees with OU_EXACT to 1e-9
OU_SHOOTING = 1.156517642749741

SMOOTH = ModelSpec(CoefficientSet(b=lambda x: -np.sin(x), sigma=lambda x: 1 + 0.2 * np.cos(x), eta=0.0), LevyTriplet.poisson(1.0, 1.0))
PURE_JUMP = ModelSpec(CoefficientSet(b=0.0, sigma=0.0, eta=1.0), LevyTriplet.poisson(1.0, 1.0))
MIXED = ModelSpec(CoefficientSet(b=lambda x: -0.5 * x, sigma=lambda x: 1 + 0.1 * np.sin(x), eta=lambda x: 0.8 + 0.1 * np.cos(x)),
                  LevyTriplet(nu=AtomicMeasure(((1.0, 1.0), (-0.5, 0.5)))))


def random_path(seed, n=20, lo=-0.9, hi=3.0):
    rng = np.random.default_rng(seed)
    return Path(np.concatenate([[0.0], np.cumsum(rng.uniform(lo, hi, n)) / n]))


def sinh_path(n):
    return Path.from_function(lambda t: np.sinh(t) / math.sinh(1.0), n)


def test_oracles_agree():
    assert ou_shooting()[0] == pytest.approx(OU_EXACT, abs=1e-9)
    assert OU_SHOOTING == pytest.approx(OU_EXACT, abs=1e-9)


def test_brownian_examples():
    assert action_brownian(Path.line(0, 2, 7)) == pytest.approx(2.0, rel=1e-15)
    assert action_brownian(Path(np.zeros(5))) == 0.0
    half = Path(np.minimum(np.linspace(0, 1, 11), 0.5))
    assert action_brownian(half) == pytest.approx(0.25, rel=1e-14)


def test_wrong_start_is_infinite_unless_released():
    p = Path([1.0, 2.0])
    assert action_brownian(p) == math.inf
    assert action_brownian(p, x0=None) == pytest.approx(0.5)
    assert action_brownian(p, x0=1.0) == pytest.approx(0.5)
    assert action_levy(p, PURE_JUMP.triplet) == math.inf


def test_sde_brownian_ou_path():
    ou = brownian_model(b=lambda x: -x)
    assert action_sde_brownian(sinh_path(2000), ou.coeffs) == pytest.approx(OU_EXACT, abs=1e-4)
    assert action_sde_brownian(Path.line(0, 1, 9), brownian_model().coeffs) == action_brownian(Path.line(0, 1, 9))


def test_sde_brownian_zero_on_flow():
    # phi' = 1 - phi from 0: phi = 1 - e^{-t}
    model = brownian_model(b=lambda x: 1 - x)
    for n in (100, 200):
        assert action_sde_brownian(Path.from_function(lambda t: 1 - np.exp(-t), n), model.coeffs) < 5.0 / n**4 + 1e-15


def test_degenerate_diffusion_raises():
    model = brownian_model(sigma=lambda x: x)
    with pytest.raises(DegenerateDiffusionError):
        action_sde_brownian(Path.line(0, 1, 4).with_values([0.0, 0.0, 0.0, 0.5, 1.0]), model.coeffs)


def test_levy_examples():
    assert action_levy(Path.line(0, 1, 13), PURE_JUMP.triplet) == pytest.approx(poisson_conjugate(1.0), abs=1e-10)
    assert action_levy(Path.line(0, 1, 13), LevyTriplet.gaussian(1.0)) == pytest.approx(0.5, abs=1e-14)
    ts = LevyTriplet(nu=TemperedStable(1.5, 2.0))
    assert action_levy(Path.line(0, ts.mean(), 5), ts) == pytest.approx(0.0, abs=1e-12)
    # slope below the left edge of the compensated-Poisson drift range
    assert action_levy(Path.line(0, -1.5, 4), PURE_JUMP.triplet) == math.inf


def test_general_examples():
    assert action_general(Path.line(0, 1, 13), PURE_JUMP) == pytest.approx(poisson_conjugate(1.0), abs=1e-10)
    ou = brownian_model(b=lambda x: -x)
    assert action_general(sinh_path(2000), ou) == pytest.approx(OU_EXACT, abs=1e-4)
    # H'(x, 0) = 1 + 0.2 - x vanishes at the rest point x = 1.2
    flat = ModelSpec(CoefficientSet(b=lambda x: 1 - x, sigma=1.0, eta=1.0), LevyTriplet(nu=AtomicMeasure(((2.0, 0.1),))))
    assert action_general(Path(np.full(9, 0.0)), flat) > 0
    assert action_general(Path(np.full(9, 1.2)), flat, x0=None) == pytest.approx(0.0, abs=1e-12)


def test_joint_mixed_unit_atom_equals_general():
    model = ModelSpec(CoefficientSet(b=0.0, sigma=1.0, eta=1.0), LevyTriplet.poisson(1.0, 1.0))
    p = Path.line(0, 1, 10)
    assert action_joint(p, model) == pytest.approx(action_general(p, model), abs=1e-6)


def test_joint_infeasible_cells_listed():
    model = ModelSpec(CoefficientSet(b=0.0, sigma=lambda x: np.where(x > 0.45, 0.0, 1.0), eta=0.0))
    d = action_joint(Path.line(0, 1, 10), model, detail=True)
    assert d.value == math.inf
    assert d.infeasible_cells == tuple(range(5, 10))


@pytest.mark.parametrize("seed", range(10))
def test_reduction_lattice(seed):
    p = random_path(seed)
    sde = action_sde_brownian(p, SMOOTH.coeffs)
    assert action_general(p, SMOOTH) == pytest.approx(sde, abs=1e-6)
    assert action_joint(p, SMOOTH) == pytest.approx(sde, abs=1e-6)
    lev = action_levy(p, PURE_JUMP.triplet)
    assert action_general(p, PURE_JUMP) == pytest.approx(lev, abs=1e-6)
    assert action_joint(p, PURE_JUMP) == pytest.approx(lev, abs=1e-6)
    assert action_joint(p, MIXED) == pytest.approx(action_general(p, MIXED), abs=1e-6)
    assert action_levy(p, LevyTriplet.gaussian(1.0)) == pytest.approx(action_brownian(p), abs=1e-12)


def test_actions_nonnegative():
    for seed in range(5):
        p = random_path(100 + seed, lo=-3, hi=3)
        for name in ("brownian", "sde_brownian", "levy", "general", "joint"):
            assert evaluate(name, p, MIXED if name != "sde_brownian" else SMOOTH) >= 0


def test_general_tempered_stable_state_dependent_equals_joint():
    model = ModelSpec(CoefficientSet(b=lambda x: -x, sigma=0.5, eta=lambda x: 1 + 0.3 * np.tanh(x)),
                      LevyTriplet(nu=TemperedStable(1.5, 2.0)))
    p = random_path(7, n=12, lo=-1, hi=2)
    assert action_joint(p, model) == pytest.approx(action_general(p, model), abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-0.9, 3.0), min_size=2, max_size=12),
    st.lists(st.tuples(st.floats(-3, 3), st.floats(0, 1), st.floats(0, 1)), min_size=0, max_size=4),
)
def test_weak_duality(slopes, raw):
    n = len(slopes)
    p = Path(np.concatenate([[0.0], np.cumsum(slopes) / n]))
    cuts = sorted(x for _, s, t in raw for x in (s, t))
    pieces = [(c, cuts[2 * j], cuts[2 * j + 1]) for j, (c, _, _) in enumerate(raw) if cuts[2 * j] < cuts[2 * j + 1]]
    alpha = StepFunction(tuple(pieces))
    assert dual_lower_bound(p, PURE_JUMP.triplet, alpha) <= action_levy(p, PURE_JUMP.triplet) + 1e-8


def test_dual_examples():
    p = Path.line(0, 1, 8)
    assert dual_lower_bound(p, LevyTriplet.gaussian(1.0), StepFunction(())) == 0.0
    cs = np.linspace(-3, 3, 601)
    vals = [dual_lower_bound(p, LevyTriplet.gaussian(1.0), [(c, 0.0, 1.0)]) for c in cs]
    assert max(vals) <= 0.5 + 1e-12
    assert max(vals) == pytest.approx(brownian_dual_sup(), abs=1e-12)
    ts = LevyTriplet(nu=TemperedStable(1.5, 2.0))
    assert dual_lower_bound(p, ts, [(-3.0, 0.0, 0.5)]) == -math.inf


def test_one_piece_dual_reaches_action_on_lines():
    t = PURE_JUMP.triplet
    for slope in (-0.5, 0.7, 2.0):
        p = Path.line(0, slope, 4)
        best = max(dual_lower_bound(p, t, [(c, 0.0, 1.0)]) for c in np.linspace(-4, 4, 1601))
        assert best >= 0.95 * action_levy(p, t)


TS = LevyTriplet(nu=TemperedStable(1.5, 2.0))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 10_000), st.floats(0, 1))
def test_convexity_in_path(s1, s2, lam):
    p1, p2 = random_path(s1, n=6), random_path(s2, n=6)
    # shared endpoints
    v2 = p2.values + (p1.end - p2.end) * np.linspace(0, 1, 7)
    p2 = Path(v2)
    mix = Path(lam * p1.values + (1 - lam) * p2.values)
    for f in (action_brownian, lambda q: action_levy(q, PURE_JUMP.triplet), lambda q: action_levy(q, TS)):
        assert f(mix) <= lam * f(p1) + (1 - lam) * f(p2) + 1e-9


def test_refinement_ratio_near_four():
    model = ModelSpec(CoefficientSet(b=lambda x: -x, sigma=1.0, eta=0.5), LevyTriplet.poisson(1.0, 1.0))
    fn = lambda t: 0.8 * np.sin(2 * t)  # noqa: E731
    s = [action_general(Path.from_function(fn, n), model) for n in (20, 40, 80)]
    assert (s[0] - s[1]) / (s[1] - s[2]) == pytest.approx(4.0, rel=0.05)
    s = [action_sde_brownian(Path.from_function(fn, n), SMOOTH.coeffs) for n in (20, 40, 80)]
    assert (s[0] - s[1]) / (s[1] - s[2]) == pytest.approx(4.0, rel=0.05)


@pytest.mark.parametrize("name,model", [("sde_brownian", SMOOTH), ("levy", PURE_JUMP), ("general", MIXED), ("brownian", None)])
def test_gradient_matches_finite_differences(name, model):
    p = random_path(3, n=8, lo=-0.5, hi=2.0)
    total, grad = action_and_gradient(name, p, model)
    assert total == pytest.approx(evaluate(name, p, model), rel=1e-12)
    h = 1e-6
    for j in range(p.n + 1):
        up, dn = p.values.copy(), p.values.copy()
        up[j] += h
        dn[j] -= h
        fd = (evaluate(name, Path(up), model, x0=None) - evaluate(name, Path(dn), model, x0=None)) / (2 * h)
        assert grad[j] == pytest.approx(fd, abs=1e-5)


def test_psi_conjugate_memo_consistent():
    t = LevyTriplet(nu=AtomicMeasure(((1.0, 2.0),)))
    v1, a1 = psi_conjugate(t, [0.3, 0.3, 1.0])
    v2, _ = psi_conjugate(t, [1.0])
    assert v1[0] == v1[1] and v1[2] == v2[0]
    assert a1[2] == pytest.approx(math.log(1 + 1.0 / 2.0), abs=1e-10)


# -- entropy form ---------------------------------------------------------------


def test_entropy_untilted_is_zero_with_residual_report():
    nu = AtomicMeasure(((1.0, 1.0), (-2.0, 0.5)))
    p = Path.line(0, 0.3, 6)
    r = action_entropy_form(p, lambda x: x, nu, g=np.ones((6, 2)))
    assert r.value == 0.0
    expected = np.max(np.abs(p.slopes + p.midpoints))
    assert r.residual == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("zeta", [0.5, 2.0])
def test_entropy_single_atom_uncompensated(zeta):
    # oracles.entropy_single_atom_grid(zeta) reproduces zeta ln zeta - zeta + 1 to 1e-5
    r = action_entropy_form(Path.line(0, zeta, 4), 0.0, AtomicMeasure(((1.0, 1.0),)), compensated=False)
    np.testing.assert_allclose(r.g, zeta, rtol=1e-12)
    assert r.value == pytest.approx(zeta * math.log(zeta) - zeta + 1, abs=1e-12)
    assert r.residual < 1e-12


def test_entropy_single_atom_compensated():
    r = action_entropy_form(Path.line(0, 0.5, 4), 0.0, AtomicMeasure(((1.0, 1.0),)))
    np.testing.assert_allclose(r.g, 1.5, rtol=1e-12)
    assert r.value == pytest.approx(poisson_conjugate(0.5), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.tuples(st.floats(-3, 3).filter(lambda z: abs(z) > 0.05), st.floats(0.05, 3)), min_size=1, max_size=4),
    st.floats(-1, 1),
)
def test_entropy_optimum_equals_conjugate(atoms, frac):
    nu = AtomicMeasure(tuple(atoms))
    z, w = nu.sizes, nu.masses
    # target strictly inside the attainable drift range
    lo = -np.sum(np.clip(z, 0, None) * w) if np.all(z > 0) else -3.0
    hi = -np.sum(np.clip(z, None, 0) * w) if np.all(z < 0) else 3.0
    zeta = 0.5 * (lo + hi) + 0.45 * frac * (hi - lo)
    r = action_entropy_form(Path.line(0, zeta, 3), 0.0, nu)
    assert r.value == pytest.approx(action_levy(Path.line(0, zeta, 3), compensator_triplet(nu)), abs=1e-6)


def test_entropy_tilt_errors():
    with pytest.raises(InfeasibleError):
        solve_tilt(-1.0, [1.0], [1.0], compensated=False)
    with pytest.raises(ValidationError):
        action_entropy_form(Path.line(0, 1, 2), 0.0, AtomicMeasure(((1.0, 1.0),)), g=np.zeros((2, 1)))
    with pytest.raises(ValidationError):
        action_entropy_form(Path.line(0, 1, 2), 0.0, TemperedStable(1.5, 2.0))


# -- paths ----------------------------------------------------------------------


def test_path_json_round_trip():
    p = random_path(5)
    q = Path.from_json(p.to_json())
    np.testing.assert_array_equal(p.values, q.values)
    s = Path([0.0, 1.0, 0.5], step=True)
    assert Path.from_dict(s.to_dict()).step
    assert s(0.4) == 0.0 and s(0.7) == 1.0 and s(1.0) == 0.5


def test_path_validation():
    with pytest.raises(ValidationError):
        Path([0.0])
    with pytest.raises(ValidationError):
        Path.from_dict({"n": 2, "values": [0.0, 1.0]})
    with pytest.raises(ValidationError):
        Path([0.0, 1.0], start=1.0)
    with pytest.raises(ValidationError):
        StepFunction(((1.0, 0.5, 0.2),))
    with pytest.raises(ValidationError):
        evaluate("nope", Path.line(0, 1, 2), None)
