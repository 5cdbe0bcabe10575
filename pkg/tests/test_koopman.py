import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pulseshaper.integrate import IntegratorSettings, integrate_flow
from pulseshaper.koopman import (
    BASIN_OF_SOURCE,
    BASIN_OF_TARGET,
    EigenfunctionEvaluator,
    NotInBasin,
    classify_basin,
    eval_s1,
    evaluate_batch,
    isostable_time,
    write_s1_csv,
)

FLOW = IntegratorSettings(rtol=1e-12, atol=1e-14)


def basin_points(system, ev, n, rng, spread=0.5):
    """Random relative perturbations of the target that ``ev`` resolves."""
    fp = system.target
    pts = []
    while len(pts) < n:
        x = fp.location * (1 + spread * rng.uniform(-1, 1, fp.location.size))
        if ev.evaluate(x).status == "ok":
            pts.append(x)
    return pts


def flow(system, x, t):
    return integrate_flow(system.model, x, None, t, FLOW).final_state


class TestExamples:
    @pytest.mark.parametrize("name", ["rep", "ta"])
    def test_at_fixed_point(self, name, request):
        system = request.getfixturevalue(f"{name}_system")
        ev = request.getfixturevalue(f"{name}_ev")
        assert eval_s1(ev, system.target.location) == 0

    @pytest.mark.parametrize("name,tol", [("rep", 1e-5), ("ta", 1e-3)])
    def test_along_v1(self, name, tol, request):
        system = request.getfixturevalue(f"{name}_system")
        ev = request.getfixturevalue(f"{name}_ev")
        fp = system.target
        d = 1e-4
        assert eval_s1(ev, fp.location + d * fp.v1).real / d == pytest.approx(1.0, abs=tol)

    @pytest.mark.parametrize("name", ["rep", "ta"])
    def test_other_attractor(self, name, request):
        system = request.getfixturevalue(f"{name}_system")
        ev = request.getfixturevalue(f"{name}_ev")
        res = ev.evaluate(system.source.location)
        assert res.status == "not_in_basin"
        with pytest.raises(NotInBasin):
            eval_s1(ev, system.source.location)

    def test_outside_box(self, rep_ev):
        assert rep_ev.evaluate(np.full(8, 1e3)).status == "escaped"

    def test_asymptotic_expansion_repressilator(self, rep_system, rep_ev):
        fp = rep_system.target
        for d in (1e-1, 1e-2, 1e-3):
            s = eval_s1(rep_ev, fp.location + d * fp.v1)
            assert abs(s - d) <= 0.01 * d * d

    def test_lorenz_is_complex(self, lorenz_system, lorenz_ev):
        fp = lorenz_system.target
        s = eval_s1(lorenz_ev, fp.location + 1e-3 * fp.v1.real)
        assert abs(s.imag) > 0


@pytest.mark.parametrize("name", ["rep", "ta"])
def test_semigroup(name, request, rng):
    system = request.getfixturevalue(f"{name}_system")
    ev = request.getfixturevalue(f"{name}_ev")
    lam = ev.lambda1
    for x in basin_points(system, ev, 6, rng):
        s0 = eval_s1(ev, x)
        for t in (1.0, 2.0):
            st_ = eval_s1(ev, flow(system, x, t))
            assert abs(st_ - s0 * np.exp(lam * t)) <= 1e-4 * max(1.0, abs(s0))


def test_decay_rate_slope(rep_system, rep_ev, rng):
    x = basin_points(rep_system, rep_ev, 1, rng)[0]
    ts = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
    logs = [math.log(abs(eval_s1(rep_ev, flow(rep_system, x, t) if t else x))) for t in ts]
    slope = np.polyfit(ts, logs, 1)[0]
    assert slope == pytest.approx(rep_ev.lambda1.real, abs=1e-3)


def test_monotone_in_cone_order(rep_system, rep_ev, rng):
    s = rep_system.model.cone.as_array()
    pts = basin_points(rep_system, rep_ev, 50, rng, spread=0.3)
    for x in pts:
        y = x + s * rng.uniform(0, 0.5, x.size)
        ry = rep_ev.evaluate(y)
        if ry.status != "ok":
            continue
        assert ry.value.real >= eval_s1(rep_ev, x).real - 1e-6


class TestClassify:
    def test_labels(self, rep_system):
        fp_t, fp_s = rep_system.target, rep_system.source
        assert classify_basin(rep_system, fp_t.location + 0.1 * fp_t.v1).value == BASIN_OF_TARGET
        assert classify_basin(rep_system, fp_s.location + 0.1 * fp_s.v1).value == BASIN_OF_SOURCE

    def test_escape(self, lorenz_system):
        assert classify_basin(lorenz_system, [100.0, 0.0, 0.0]).value == "escaped"


class TestIsostableTime:
    def test_examples(self):
        assert isostable_time(math.e, 1.0, -1.0) == pytest.approx(1.0)
        assert isostable_time(1.0, math.e, 0.5) == pytest.approx(-2.0)
        assert isostable_time(2.0, 2.0, -3.0) == 0.0

    @pytest.mark.parametrize("args", [(0, 1, -1), (1, -1, -1), (1, 1, 0)])
    def test_errors(self, args):
        with pytest.raises(ValueError):
            isostable_time(*args)

    @given(a=st.floats(1e-3, 1e3), b=st.floats(1e-3, 1e3), c=st.floats(1e-3, 1e3),
           lam=st.floats(0.01, 10))
    def test_additive(self, a, b, c, lam):
        total = isostable_time(a, b, -lam) + isostable_time(b, c, -lam)
        assert total == pytest.approx(isostable_time(a, c, -lam), abs=1e-9)


class TestEvaluator:
    def test_defaults(self, rep_system):
        ev = EigenfunctionEvaluator.for_target(rep_system)
        rate = rep_system.target.rate
        assert ev.t_checkpoint == pytest.approx(5 / rate)
        assert ev.t_max == pytest.approx(60 / rate)
        assert ev.estimator == "terminal_rescale"

    def test_lorenz_uses_running_average(self, lorenz_ev):
        assert lorenz_ev.estimator == "running_average"

    def test_rejects_unstable(self, lorenz_system):
        from pulseshaper.spectral import find_fixed_point
        fp0 = find_fixed_point(lorenz_system.model, [0.01, 0.01, 0.0])
        with pytest.raises(ValueError):
            EigenfunctionEvaluator(lorenz_system.model, fp0)

    def test_batch_matches_serial(self, rep_system, rep_ev, rng):
        pts = basin_points(rep_system, rep_ev, 6, rng)
        serial = [rep_ev.evaluate(p) for p in pts]
        batch = evaluate_batch(rep_ev, pts, jobs=3)
        assert [r.value for r in serial] == [r.value for r in batch]


def test_s1_csv(tmp_path, rep_system, rep_ev):
    pts = [rep_system.target.location + 0.1, rep_system.source.location]
    res = [rep_ev.evaluate(p) for p in pts]
    path = tmp_path / "s1.csv"
    write_s1_csv(path, pts, res)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join([f"x{i}" for i in range(1, 9)] + ["re_s1", "im_s1", "status"])
    assert lines[1].endswith(",ok")
    assert lines[2].endswith(",,,not_in_basin")


def test_expansion_residual_decays(rep_system, rep_ev, rng):
    """Residual of x_fp + v1 s1 e^{lambda1 t}, relative to the leading term, shrinks
    between t = T and 2T by at least e^{gap T} / 2.

    Only meaningful when the gap is below |Re lambda1|; otherwise the quadratic
    term in s1 decays more slowly than the second mode and sets the rate.
    """
    fp = rep_system.target
    lam, gap, T = fp.lambda1.real, fp.spectral_gap, 10.0
    assert gap < abs(lam)
    for x in basin_points(rep_system, rep_ev, 3, rng, spread=0.3):
        s = eval_s1(rep_ev, x).real

        def rel_residual(t):
            lead = fp.v1 * s * np.exp(lam * t)
            return np.linalg.norm(flow(rep_system, x, t) - fp.location - lead) / np.linalg.norm(lead)

        assert rel_residual(T) / rel_residual(2 * T) >= np.exp(gap * T) / 2
