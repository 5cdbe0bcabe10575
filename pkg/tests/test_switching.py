import csv
import math

import pytest
from hypothesis import given, strategies as st

from pulseshaper.model import Pulse
from pulseshaper.switching import (
    SwitchingSample,
    alpha_for_time,
    eval_r,
    laplace_switching_value,
    time_to_eps,
    total_time,
    write_switch_map_csv,
)
from pulseshaper.koopman import BasinLabel


def _sample(r, tau=2.0, rate=0.5, eps=0.01):
    label = BasinLabel("basin_of_target" if r is not None else "basin_of_source")
    T = None if r is None else math.log(abs(r) / eps) / rate
    return SwitchingSample(Pulse(1.0, tau), r, label, T, eps, rate)


class TestTimes:
    def test_time_to_eps(self):
        s = _sample(complex(-0.01 * math.e, 0))
        assert time_to_eps(s, 0.01) == pytest.approx(2.0)
        assert total_time(s, 0.01) == pytest.approx(4.0)

    def test_already_close(self):
        s = _sample(complex(0.001, 0))
        assert time_to_eps(s, 0.01) < 0
        assert total_time(s, 0.01) == 2.0

    def test_absent(self):
        s = _sample(None)
        with pytest.raises(ValueError):
            time_to_eps(s, 0.01)
        assert s.T_tot is None and s.status == "not_in_basin" and not s.switches

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            time_to_eps(_sample(1 + 0j), 0.0)

    @given(T=st.floats(0, 30), rate=st.floats(0.05, 5))
    def test_alpha_inverts_time(self, T, rate):
        a = alpha_for_time(T, rate, 0.01)
        assert time_to_eps(_sample(complex(-a, 0), rate=rate), 0.01) == pytest.approx(T, abs=1e-9)


class TestRepressilator:
    def test_zero_pulse_does_not_switch(self, rep_system, rep_ev):
        s = eval_r(rep_system, Pulse(10.0, 0.0), evaluator=rep_ev)
        assert s.r is None and not s.switches

    def test_strong_pulse_switches(self, rep_system, rep_ev):
        s = eval_r(rep_system, Pulse(10.0, 10.0), evaluator=rep_ev)
        assert s.switches and s.status == "ok"
        assert s.r.imag == 0.0
        assert s.T_tot == pytest.approx(s.pulse.tau + max(s.T_eps, 0.0))

    def test_weak_pulse_returns_home(self, rep_system, rep_ev):
        s = eval_r(rep_system, Pulse(2.0, 3.0), evaluator=rep_ev)
        assert s.status == "not_in_basin"

    def test_increasing_in_tau(self, rep_system, rep_ev):
        vals = [eval_r(rep_system, Pulse(15.0, t), evaluator=rep_ev).r.real for t in (8, 10, 12, 16)]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_increasing_in_mu(self, rep_system, rep_ev):
        vals = [eval_r(rep_system, Pulse(m, 10.0), evaluator=rep_ev).r.real for m in (10, 12, 15, 20)]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    @pytest.mark.parametrize("mu,tau", [(8, 10), (10, 8), (12, 12), (15, 7), (20, 6)])
    def test_laplace_route_agrees(self, rep_system, rep_ev, mu, tau):
        s = eval_r(rep_system, Pulse(mu, tau), evaluator=rep_ev)
        lap = laplace_switching_value(rep_system, Pulse(mu, tau))
        assert abs(lap - s.r) <= 1e-4 * max(1.0, abs(s.r))


def test_laplace_route_toxin_antitoxin(ta_system, ta_ev):
    pulse = Pulse(20.0, 20.0)
    s = eval_r(ta_system, pulse, evaluator=ta_ev)
    if s.r is None:
        pytest.skip("pulse does not reach the target basin")
    lap = laplace_switching_value(ta_system, pulse)
    assert abs(lap - s.r) <= 1e-4 * max(1.0, abs(s.r))


def test_laplace_window_validation(rep_system):
    with pytest.raises(ValueError):
        laplace_switching_value(rep_system, Pulse(10.0, 10.0), window=(5.0, 5.0))


def test_csv(tmp_path):
    rows = [_sample(complex(-0.5, 0)), _sample(None)]
    path = tmp_path / "map.csv"
    write_switch_map_csv(path, rows)
    with open(path) as fh:
        data = list(csv.reader(fh))
    assert data[0] == ["mu", "tau", "status", "re_r", "im_r", "abs_r", "T_eps", "T_tot"]
    assert data[1][2] == "ok" and float(data[1][3]) == -0.5 and float(data[1][5]) == 0.5
    assert data[2][2] == "not_in_basin" and data[2][3:] == ["", "", "", "", ""]
