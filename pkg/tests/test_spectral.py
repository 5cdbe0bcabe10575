import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import LORENZ_WING, REP_HIGH, REP_LOW, TA_SOURCE, TA_TARGET
from pulseshaper.model import builtin_lorenz, builtin_repressilator8, builtin_toxin_antitoxin
from pulseshaper.spectral import (
    AmbiguousDominance,
    DefectiveMatrixError,
    NewtonStagnation,
    OutsideDomain,
    analyze_equilibrium,
    dominant_triple,
    eigendecompose,
    find_fixed_point,
    fixed_point_report,
)
from test_oracles import lorenz_char_roots, repressilator_lambda1


def _close_to(loc, ref):
    ref = np.asarray(ref)
    tol = np.where(np.abs(ref) >= 1, 1e-3 * np.abs(ref), 1e-3)
    return np.all(np.abs(loc - ref) <= tol)


class TestFixedPoints:
    def test_repressilator_attractors(self, rep_system):
        hi_lo = [REP_HIGH, REP_LOW] * 4
        lo_hi = [REP_LOW, REP_HIGH] * 4
        locs = [rep_system.source.location, rep_system.target.location]
        assert any(np.allclose(l, hi_lo, rtol=1e-9) for l in locs)
        assert any(np.allclose(l, lo_hi, rtol=1e-9) for l in locs)

    def test_repressilator_lambda1(self, rep_system):
        for fp in rep_system.attractors:
            assert abs(fp.lambda1.imag) <= 1e-9
            assert fp.lambda1.real == pytest.approx(repressilator_lambda1(), abs=1e-8)
            assert fp.is_stable and fp.is_hyperbolic and fp.spectral_gap > 0

    def test_toxin_antitoxin_states(self, ta_system):
        assert _close_to(ta_system.target.location, TA_TARGET)
        assert _close_to(ta_system.source.location, TA_SOURCE)

    def test_lorenz_wings(self, lorenz_system):
        w = LORENZ_WING
        locs = sorted((tuple(fp.location) for fp in lorenz_system.attractors))
        np.testing.assert_allclose(locs[0], [-w, -w, 1.0], atol=1e-8)
        np.testing.assert_allclose(locs[1], [w, w, 1.0], atol=1e-8)
        for fp in lorenz_system.attractors:
            assert fp.complex_dominant
            roots = lorenz_char_roots()
            top = roots[np.argmax(roots.real)]
            assert fp.lambda1.real == pytest.approx(top.real, abs=1e-9)
            assert abs(fp.lambda1.imag) == pytest.approx(abs(top.imag), abs=1e-9)

    def test_origin_is_unstable_saddle(self):
        fp = find_fixed_point(builtin_lorenz(), [0.01, 0.01, 0.0])
        np.testing.assert_allclose(fp.location, 0.0, atol=1e-12)
        assert not fp.is_stable
        with pytest.raises(ValueError):
            dominant_triple(fp)

    def test_quadratic_convergence_toxin_antitoxin(self):
        m = builtin_toxin_antitoxin()
        fp = find_fixed_point(m, np.array(TA_TARGET) * 1.01)
        h = fp.residual_history
        assert fp.residual <= 1e-6 and len(h) >= 4
        # r_{k+1} ~ C r_k^2 with one constant C across the final steps
        c_prev = h[-2] / h[-3] ** 2
        assert h[-1] <= 10 * c_prev * h[-2] ** 2

    def test_guess_outside(self):
        with pytest.raises(OutsideDomain):
            find_fixed_point(builtin_lorenz(), [100.0, 0.0, 0.0])

    def test_stagnation(self):
        m = builtin_repressilator8()
        with pytest.raises(NewtonStagnation):
            find_fixed_point(m, np.full(8, 10.0), newton_tol=1e-300, max_iter=3)


class TestEigen:
    @given(arrays(float, (4, 4), elements=st.floats(-5, 5)))
    def test_biorthogonal(self, A):
        try:
            eigs, V, W = eigendecompose(A)
        except DefectiveMatrixError:
            return
        np.testing.assert_allclose(W.T @ V, np.eye(4), atol=1e-6 * max(1, np.linalg.cond(V)))
        assert np.all(np.diff(np.round(eigs.real, 9)) <= 1e-9)

    def test_residuals(self, rep_system):
        fp = rep_system.target
        J = rep_system.model.eval_jacobian(fp.location)
        lam, v, w = dominant_triple(fp)
        assert np.linalg.norm(J @ v - lam * v) <= 1e-10 * np.linalg.norm(J, 2)
        assert np.linalg.norm(w @ J - lam * w) <= 1e-10 * np.linalg.norm(J, 2) * np.linalg.norm(w)
        assert w @ v == pytest.approx(1.0)

    def test_defective(self):
        with pytest.raises(DefectiveMatrixError):
            eigendecompose(np.array([[-1.0, 1.0], [0.0, -1.0]]))

    def test_ambiguous_dominance(self):
        fp = analyze_equilibrium(np.diag([-1.0, -1.0, -2.0]), np.zeros(3))
        with pytest.raises(AmbiguousDominance):
            dominant_triple(fp)

    def test_complex_pair_not_ambiguous(self):
        J = np.array([[-1.0, 2.0, 0.0], [-2.0, -1.0, 0.0], [0.0, 0.0, -3.0]])
        fp = analyze_equilibrium(J, np.zeros(3))
        lam, v, w = dominant_triple(fp)
        assert lam == pytest.approx(-1 + 2j)
        assert fp.spectral_gap == pytest.approx(2.0)

    def test_orientation_positive_in_cone(self, rep_system):
        fp = rep_system.target
        s = rep_system.model.cone.as_array()
        assert np.sum(s * fp.v1) > 0

    def test_bad_matrix(self):
        with pytest.raises(Exception):
            eigendecompose(np.array([[np.nan]]))


def test_report_json(ta_system):
    rep = fixed_point_report(ta_system.target)
    text = json.dumps(rep, allow_nan=False)
    back = json.loads(text)
    assert set(back) >= {"location", "eigenvalues", "lambda1", "stable"}
    assert back["stable"] is True and len(back["eigenvalues"]) == 4
