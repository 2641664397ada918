import math

import numpy as np
import pytest

from levy_action.errors import ValidationError
from levy_action.levy_core import LevyTriplet, TemperedStable
from levy_action.model import CoefficientSet, ModelSpec, brownian_model
from levy_action.montecarlo import (
    CHUNK,
    EventSpec,
    equivalence_gap,
    estimate_event,
    event_infimum,
    event_masks,
    extrapolate,
    gaussian_tail,
    parse_event,
    rate_table,
    wilson_interval,
)
from levy_action.paths import Path
from levy_action.simulate import RngStream

# oracles.gaussian_tail(1 / sqrt(eps)) for eps = 0.5, 0.25, 0.1
GAUSS_TAIL = {0.5: 0.0786496035251426, 0.25: 0.02275013194817922, 0.1: 0.0007827011290012761}

BM = brownian_model()


def test_gaussian_tail_oracle():
    for eps, p in GAUSS_TAIL.items():
        assert gaussian_tail(1 / math.sqrt(eps)) == pytest.approx(p, rel=1e-14)


def test_wilson_interval():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0.0 and hi == pytest.approx(0.03699, abs=1e-4)
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi and hi - 0.5 == pytest.approx(0.5 - lo, rel=1e-12)
    lo, hi = wilson_interval(100, 100)
    assert hi == 1.0


def test_sure_event():
    est = estimate_event(BM.with_epsilon(0.3), EventSpec.always(), 1000, 4, RngStream(0))
    assert est.p_hat == 1.0 and est.rate_value == 0.0
    assert est.ci95[0] <= est.p_hat <= est.ci95[1]


def test_pure_drift_event_rate_zero():
    model = ModelSpec(CoefficientSet(b=1.0, sigma=0.0, eta=0.0))
    table = rate_table(model, EventSpec.terminal_ge(0.5), [0.5, 0.1], 200, 8, RngStream(1))
    assert all(r.rate_value == 0.0 for r in table.rows)
    assert table.neg_inf_S == 0.0


@pytest.mark.parametrize("eps", [0.5, 0.1])
def test_gaussian_tail_within_ci(eps):
    est = estimate_event(BM.with_epsilon(eps), EventSpec.terminal_ge(1.0), 1_000_000, 1, RngStream(5, int(eps * 100)))
    lo, hi = est.ci95
    assert lo <= GAUSS_TAIL[eps] <= hi


def test_zero_hits_reports_rule_of_three():
    est = estimate_event(BM.with_epsilon(0.01), EventSpec.terminal_ge(2.0), 500, 1, RngStream(0))
    assert est.no_hits and est.hits == 0
    assert est.rate_value == pytest.approx(0.01 * math.log(3 / 500), rel=1e-14)


def test_disjoint_additivity_and_nesting():
    a = EventSpec.terminal_ge(0.5)
    b = EventSpec.terminal_le(-0.5)
    big = EventSpec.sup_ge(0.5)
    masks = event_masks(BM.with_epsilon(0.2), [a, b, a | b, big, a & big, ~a], 5000, 20, RngStream(2))
    ma, mb, mab, mbig, mand, mnot = masks
    assert not np.any(ma & mb)
    assert mab.sum() == ma.sum() + mb.sum()
    # {phi(1) >= 0.5} and {phi(1) <= -0.5} both lie in {sup |phi| >= 0.5}
    assert np.all(mab <= mbig) and mab.sum() <= mbig.sum()
    np.testing.assert_array_equal(mand, ma)
    assert mnot.sum() == 5000 - ma.sum()


def test_reproducible_across_workers_and_runs():
    model = ModelSpec(CoefficientSet(b=lambda x: -x, sigma=1.0, eta=0.5), LevyTriplet(nu=TemperedStable(1.5, 2.0)), epsilon=0.3)
    total = 2 * CHUNK + 123
    ests = [estimate_event(model, EventSpec.sup_ge(0.8), total, 16, RngStream(77), workers=w) for w in (1, 3, 1)]
    assert ests[0] == ests[1] == ests[2]
    gaps = [equivalence_gap(BM.with_epsilon(0.5), total, 0.05, RngStream(4), m=4, n=16, workers=w) for w in (1, 4)]
    assert gaps[0] == gaps[1]


def test_event_parsing():
    assert parse_event("terminal>=1").kind == "terminal_ge"
    assert parse_event("terminal <= -0.5").threshold == -0.5
    assert parse_event("sup>=2").kind == "sup_ge"
    ref = Path.line(0, 1, 4)
    ev = parse_event("tube<=0.1", reference=ref)
    vals = np.array([ref.values, ref.values + 0.2])
    np.testing.assert_array_equal(ev(vals), [True, False])
    for bad in ("terminal>1", "tube<=0.1", "nonsense", "sup>=x"):
        with pytest.raises(ValidationError):
            parse_event(bad)


def test_event_infimum_endpoint_sweep():
    assert event_infimum(BM, EventSpec.terminal_ge(1.0)) == pytest.approx(0.5, abs=1e-10)
    assert event_infimum(BM, EventSpec.sup_ge(2.0)) == pytest.approx(2.0, abs=1e-10)
    ou = brownian_model(b=lambda x: -x)
    exact = (math.e**2 - 1) / (math.e**2 - 2 + math.e**-2)
    assert event_infimum(ou, EventSpec.terminal_ge(1.0), n=400) == pytest.approx(exact, abs=1e-5)
    ref = Path.line(0, 1, 10)
    assert event_infimum(BM, EventSpec.tube(ref, 0.1)) == pytest.approx(0.5, abs=1e-12)


def test_rate_table_columns_and_limit():
    eps = [0.5, 0.25, 0.1]
    table = rate_table(BM, EventSpec.terminal_ge(1.0), eps, 20_000, 1, RngStream(3))
    lines = table.to_csv().splitlines()
    assert lines[0] == "epsilon,p_hat,ci_lo,ci_hi,rate_value,neg_inf_S"
    assert all(line.endswith(",-0.5") for line in lines[1:])
    assert len(lines) == 4
    exact = [e * math.log(GAUSS_TAIL[e]) for e in eps]
    for r, x in zip(table.rows, exact):
        lo, hi = r.rate_band
        assert lo - 1e-12 <= x <= hi + 1e-12
    with pytest.raises(ValidationError):
        rate_table(BM, EventSpec.terminal_ge(1.0), [0.1, 0.5], 200, 1, RngStream(3))


def test_extrapolation_recovers_model_coefficients():
    eps = np.array([0.5, 0.25, 0.1, 0.05])
    rates = -0.5 + 0.3 * eps * np.log(1 / eps)
    c0, coef = extrapolate(eps, rates, "eps_log")
    assert c0 == pytest.approx(-0.5, abs=1e-12) and coef[1] == pytest.approx(0.3, abs=1e-12)
    c0, _ = extrapolate(eps, -0.5 + 2 * eps, "linear")
    assert c0 == pytest.approx(-0.5, abs=1e-12)
    assert math.isnan(extrapolate([0.5], [-1.0], "eps_log")[0])


def test_sde_gap_monotone_in_m_and_zero_at_grid():
    model = brownian_model(b=lambda x: -np.sin(2 * x), sigma=lambda x: 1 + 0.5 * np.cos(x), epsilon=0.5)
    freq = [equivalence_gap(model, 10_000, 0.05, RngStream(9), m=m, n=64).frequency for m in (2, 4, 8, 16, 32, 64)]
    assert all(a >= b for a, b in zip(freq, freq[1:]))
    assert freq[0] > 0.1
    assert freq[-1] == 0.0


def test_levy_gap_shrinks_with_epsilon():
    t = LevyTriplet.poisson(1.0, 1.0)
    freq = [equivalence_gap(t, 4000, 0.3, RngStream(10), epsilon=e).frequency for e in (0.5, 0.2, 0.05)]
    assert freq[0] > freq[1] > freq[2]


def test_estimate_validation():
    with pytest.raises(ValidationError):
        estimate_event(BM, EventSpec.always(), 10, 4, RngStream(0))
    with pytest.raises(ValidationError):
        equivalence_gap(BM, 100, 0.0, RngStream(0), m=2, n=4)
