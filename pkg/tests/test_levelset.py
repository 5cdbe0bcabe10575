import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pulseshaper.koopman import BasinLabel
from pulseshaper.levelset import (
    GridSpec,
    LevelCurve,
    SweepGrid,
    bisect_tau,
    extract_level_contours_grid,
    extract_separatrix_grid,
    sweep,
    switches,
    trace_level_curve_monotone,
    trace_separatrix_monotone,
)
from pulseshaper.model import Pulse
from pulseshaper.switching import SwitchingSample, alpha_for_time, eval_r

MUS = [6.0, 10.0, 14.0, 20.0]
BRACKET = (0.05, 20.0)
TOL = 1e-2


def synthetic_grid(fn, n=21):
    mus = np.linspace(0, 10, n)
    taus = np.linspace(0, 10, n)
    rows = []
    for tau in taus:
        row = []
        for mu in mus:
            r = fn(mu, tau)
            label = BasinLabel("basin_of_target" if r is not None else "basin_of_source")
            row.append(SwitchingSample(Pulse(mu, tau), r, label, None, 0.01, 1.0))
        rows.append(row)
    return SweepGrid(mus, taus, rows)


class TestBisection:
    @given(root=st.floats(0.01, 9.99), tol=st.floats(1e-6, 1e-1))
    def test_bracket_contains_root(self, root, tol):
        res = bisect_tau(lambda t: t >= root, 0.0, 10.0, tol)
        assert res.lo <= root <= res.hi and res.hi - res.lo <= tol
        assert res.iterations == math.ceil(math.log2(10.0 / tol) - 1e-12)

    @given(tol=st.floats(1e-6, 1e-1))
    def test_doubling_tol_saves_one_step(self, tol):
        f = lambda t: t >= 3.3
        assert bisect_tau(f, 0.0, 10.0, tol).iterations - bisect_tau(f, 0.0, 10.0, 2 * tol).iterations == 1

    def test_bad_tol(self):
        with pytest.raises(ValueError):
            bisect_tau(lambda t: True, 0.0, 1.0, 0.0)


class TestGridSpec:
    @pytest.mark.parametrize("kw", [{"mu": (1, 0, 5)}, {"tau": (0, 1, 1)}, {"mu": (-1, 1, 3)},
                                    {"log": True, "mu": (0, 1, 3)}, {"tau": (0, 1, 2.5)}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            GridSpec(**kw)

    def test_axes(self):
        g = GridSpec(mu=(1, 100, 3), tau=(0, 1, 5), log=False)
        np.testing.assert_allclose(g.axis("tau"), [0, 0.25, 0.5, 0.75, 1])
        np.testing.assert_allclose(GridSpec(mu=(1, 100, 3), tau=(1, 4, 3), log=True).axis("mu"), [1, 10, 100])


@pytest.fixture(scope="module")
def sep(rep_system):
    return trace_separatrix_monotone(rep_system, MUS, BRACKET, TOL)


class TestSeparatrix:
    def test_resolved_and_monotone(self, sep):
        assert not sep.unresolved_mu and len(sep.points) == len(MUS)
        assert sep.monotone_violations() == 0
        taus = sep.tau
        assert np.all(np.diff(taus) <= TOL)

    def test_consistent_classification(self, rep_system, sep):
        for mu, tau in sep.points:
            assert switches(rep_system, Pulse(mu, tau + 2 * TOL)) is True
            assert switches(rep_system, Pulse(mu, tau - 2 * TOL)) is False

    def test_warm_start_matches_independent(self, rep_system, sep):
        cold = trace_separatrix_monotone(rep_system, MUS, BRACKET, TOL, warm_start=False, jobs=4)
        np.testing.assert_allclose(cold.tau, sep.tau, atol=TOL)

    def test_unresolved_when_bracket_too_short(self, rep_system):
        c = trace_separatrix_monotone(rep_system, [4.0, 20.0], (0.05, 8.0), TOL)
        assert c.unresolved_mu == [4.0]
        assert len(c.points) == 1

    def test_dominance(self, rep_system, sep):
        # pulses dominating a switching pulse switch as well
        for mu, tau in sep.points:
            assert switches(rep_system, Pulse(mu * 1.2, tau + 2 * TOL + 1.0)) is True

    def test_nested_lower_levels(self, rep_system, rep_ev, sep):
        rate = rep_system.target.rate
        taus = [sep.tau]
        for T in (15.0, 10.0, 5.0):
            c = trace_level_curve_monotone(rep_system, alpha_for_time(T, rate), "lower", MUS,
                                           BRACKET, TOL, evaluator=rep_ev)
            assert not c.unresolved_mu and c.monotone_violations() == 0
            taus.append(c.tau)
        for a, b in zip(taus, taus[1:]):
            assert np.all(a <= b + TOL)


def test_level_curve_self_consistency(rep_system, rep_ev):
    alpha = alpha_for_time(10.0, rep_system.target.rate)
    c = trace_level_curve_monotone(rep_system, alpha, "lower", [10.0, 20.0], BRACKET, 1e-3,
                                   evaluator=rep_ev)
    for mu, tau in c.points:
        lo = eval_r(rep_system, Pulse(mu, tau - 1e-3), evaluator=rep_ev).r.real
        hi = eval_r(rep_system, Pulse(mu, tau + 1e-3), evaluator=rep_ev).r.real
        assert lo <= -alpha <= hi


def test_upper_branch_unreachable_is_unresolved(rep_system, rep_ev):
    alpha = alpha_for_time(15.0, rep_system.target.rate)
    c = trace_level_curve_monotone(rep_system, alpha, "upper", [10.0], BRACKET, TOL,
                                   evaluator=rep_ev)
    assert c.points == [] and c.unresolved_mu == [10.0]
    assert c.monotone_violations() == 0


class TestRefusals:
    def test_non_monotone_model(self, ta_system):
        with pytest.raises(ValueError, match="monotone"):
            trace_separatrix_monotone(ta_system, [1.0, 2.0], BRACKET)

    def test_bad_inputs(self, rep_system):
        with pytest.raises(ValueError):
            trace_separatrix_monotone(rep_system, [2.0, 1.0], BRACKET)
        with pytest.raises(ValueError):
            trace_separatrix_monotone(rep_system, [1.0], (5.0, 1.0))
        with pytest.raises(ValueError):
            trace_level_curve_monotone(rep_system, 1.0, "sideways", [1.0], BRACKET)
        with pytest.raises(ValueError):
            trace_level_curve_monotone(rep_system, -1.0, "lower", [1.0], BRACKET)


class TestGridContours:
    def test_constant_field_is_empty(self):
        g = synthetic_grid(lambda mu, tau: complex(-3.0, 0))
        curves = extract_level_contours_grid(g, [1.0, 3.5])
        assert all(c.points == [] for c in curves)

    def test_linear_field(self):
        g = synthetic_grid(lambda mu, tau: complex(-(1.0 + mu + tau), 0))
        (c,) = extract_level_contours_grid(g, [8.0])
        assert c.branch == "lower" and len(c.points) > 3
        for mu, tau in c.points:
            assert mu + tau == pytest.approx(7.0, abs=1e-9)
        assert c.monotone_violations() == 0

    def test_complex_field_is_modulus(self):
        g = synthetic_grid(lambda mu, tau: complex(mu, tau) + 0.5)
        curves = extract_level_contours_grid(g, [5.0])
        assert curves and all(c.branch == "modulus" for c in curves)

    def test_masked_nodes(self):
        g = synthetic_grid(lambda mu, tau: None if mu + tau < 5 else complex(mu + tau, 0))
        (sep,) = extract_separatrix_grid(g)
        assert all(4.0 <= mu + tau <= 6.0 for mu, tau in sep.points)
        (c,) = extract_level_contours_grid(g, [8.0])
        assert c.branch == "upper"

    def test_no_switching_anywhere(self):
        g = synthetic_grid(lambda mu, tau: None)
        (sep,) = extract_separatrix_grid(g)
        assert sep.points == []


class TestSweep:
    def test_tau_major_layout(self, rep_system, rep_ev):
        spec = GridSpec(mu=(5.0, 20.0, 3), tau=(1.0, 15.0, 2))
        g = sweep(rep_system, spec, jobs=2, evaluator=rep_ev)
        flat = g.flat()
        assert [(s.pulse.mu, s.pulse.tau) for s in flat[:3]] == [(5.0, 1.0), (12.5, 1.0), (20.0, 1.0)]
        assert flat[-1].switches and not flat[0].switches


def test_level_curve_json():
    c = LevelCurve(2.5, "lower", [(1.0, 2.0), (3.0, 1.0)], 1e-3, [7.0])
    d = json.loads(c.to_json())
    assert d == {"alpha": 2.5, "branch": "lower", "tol": 1e-3,
                 "points": [{"mu": 1.0, "tau": 2.0}, {"mu": 3.0, "tau": 1.0}],
                 "unresolved_mu": [7.0]}
    assert json.loads(LevelCurve(math.inf, "separatrix", [], 0.1).to_json())["alpha"] == "inf"
    with pytest.raises(ValueError):
        LevelCurve(1.0, "diagonal", [], 0.1)


def test_violation_count():
    c = LevelCurve(1.0, "lower", [(1.0, 1.0), (2.0, 2.0), (3.0, 0.5)], 0.1)
    assert c.monotone_violations() == 1
