"""The switching function ``r(mu, tau)`` and convergence-time maps.

``r`` is the dominant eigenfunction of the target attractor evaluated where a
pulse leaves the source attractor.  Its modulus fixes the isostable reached at
the end of the pulse and hence the remaining time to come within ``eps`` of
the target.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .integrate import CAPTURED, ESCAPED as _ESCAPED_STATUS, OK, advance
from .koopman import (
    BASIN_OF_SOURCE,
    BASIN_OF_TARGET,
    ESCAPED,
    NOT_IN_BASIN,
    UNDECIDED,
    BasinLabel,
    BistableSystem,
    EigenfunctionEvaluator,
    classify_basin,
)
from .model import Pulse

__all__ = [
    "DEFAULT_EPS",
    "SwitchingSample",
    "eval_r",
    "time_to_eps",
    "total_time",
    "alpha_for_time",
    "pulse_endpoint",
    "laplace_switching_value",
    "write_switch_map_csv",
]

DEFAULT_EPS = 0.01

_STATUS = {
    BASIN_OF_TARGET: "ok",
    BASIN_OF_SOURCE: NOT_IN_BASIN,
    ESCAPED: ESCAPED,
    UNDECIDED: UNDECIDED,
}


@dataclass(frozen=True)
class SwitchingSample:
    """One pulse evaluation.  ``rate`` is ``|Re lambda1|`` at the target."""

    pulse: Pulse
    r: complex | None
    basin: BasinLabel
    T_eps: float | None
    eps: float
    rate: float

    @property
    def status(self) -> str:
        return _STATUS[self.basin.value]

    @property
    def switches(self) -> bool:
        return self.basin.in_target

    @property
    def T_tot(self) -> float | None:
        return None if self.r is None else total_time(self, self.eps)


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise ValueError("eps must be positive")


def alpha_for_time(T: float, rate: float, eps: float = DEFAULT_EPS) -> float:
    """Isostable level whose points need time ``T`` to reach ``|s1| = eps``."""
    _check_eps(eps)
    return eps * math.exp(rate * T)


def time_to_eps(sample: SwitchingSample, eps: float) -> float:
    """``ln(|r| / eps) / |Re lambda1|``; negative when already within ``eps``."""
    if sample.r is None:
        raise ValueError("switching value absent: the pulse does not switch")
    _check_eps(eps)
    mod = abs(sample.r)
    if mod == 0:
        return -math.inf
    return math.log(mod / eps) / sample.rate


def total_time(sample: SwitchingSample, eps: float) -> float:
    T = time_to_eps(sample, eps)
    return sample.pulse.tau + T if T >= 0 else sample.pulse.tau


def pulse_endpoint(system: BistableSystem, pulse: Pulse, settings=None):
    """``phi(tau, x*, mu)`` as a :class:`~pulseshaper.integrate.Segment`."""
    src = system.source.location
    return advance(system.model, np.zeros_like(src), pulse.mu, 0.0, pulse.tau,
                   settings or system.settings, origin=src)


def eval_r(system: BistableSystem, pulse: Pulse, eps: float = DEFAULT_EPS,
           evaluator: EigenfunctionEvaluator | None = None) -> SwitchingSample:
    """Evaluate the switching function; never raises for non-switching pulses."""
    _check_eps(eps)
    ev = evaluator or EigenfunctionEvaluator.for_target(system)
    rate = system.target.rate

    def sample(r, label, when=None):
        T = None
        if r is not None:
            T = math.log(abs(r) / eps) / rate if r != 0 else -math.inf
        return SwitchingSample(pulse, r, BasinLabel(label, when), T, eps, rate)

    end = pulse_endpoint(system, pulse, ev.settings)
    if end.status == _ESCAPED_STATUS:
        return sample(None, ESCAPED, end.t)
    if end.status != OK:
        return sample(None, UNDECIDED)
    x = end.y + system.source.location
    res = ev.evaluate(x)
    if res.status == "ok":
        return sample(res.value, BASIN_OF_TARGET, res.time)
    if res.status == ESCAPED:
        return sample(None, ESCAPED, res.time)
    if res.status == NOT_IN_BASIN and res.captured_by is not None:
        return sample(None, BASIN_OF_SOURCE, res.time)
    # divergence without capture, or no convergence: settle the label by flow
    label = classify_basin(system, x)
    if label.value == BASIN_OF_TARGET:
        # in the target basin but s1 could not be resolved
        return sample(None, UNDECIDED)
    return sample(None, label.value, label.witness_time)


def laplace_switching_value(system: BistableSystem, pulse: Pulse,
                            window: tuple[float, float] = (10.0, 15.0),
                            settings=None, near: float = 1e-2,
                            t_limit: float = 200.0) -> complex:
    """``r`` from the time-shifted Laplace average along the pulsed flow.

    The rescaled observable ``g(phi(t)) exp(-lambda1 (t - tau))`` is averaged
    over a window of length ``(b - a) / |Re lambda1|``.  The window opens
    ``a / |Re lambda1|`` after the pulse, or later if the state is not yet
    within ``near`` of the target, so large ``|r|`` does not leave nonlinear
    residue in the average.  This is an independent route to ``r`` that
    never evaluates ``s1`` at the pulse end.
    """
    tgt = system.target
    m = system.model
    lam, rate = tgt.lambda1, tgt.rate
    a, b = window
    if not 0 <= a < b:
        raise ValueError("window must satisfy 0 <= a < b")
    settings = settings or EigenfunctionEvaluator.for_target(system).settings
    origin = tgt.location
    dref = m.eval_f(origin)
    y = system.source.location - origin
    h = None

    def run(u, t0, t1, store=False, ball=False):
        nonlocal y, h
        if t1 <= t0:
            return None
        centers = origin[None, :] if ball else None
        seg = advance(m, y, u, t0, t1, settings, origin=origin, dref=dref, store=store, h=h,
                      h_max=(t1 - t0) / 512 if store else None, centers=centers,
                      radii=np.array([near]) if ball else None)
        if seg.status not in (OK, CAPTURED):
            raise RuntimeError(f"pulsed flow failed (status {seg.status}) at t={seg.t:.6g}")
        y, h = seg.y, seg.h
        return seg

    run(pulse.mu, 0.0, pulse.tau)
    t_open = pulse.tau + a / rate
    run(0.0, pulse.tau, t_open)
    if np.linalg.norm(y) > near:
        seg = run(0.0, t_open, t_open + t_limit / rate, ball=True)
        if seg.status != CAPTURED:
            raise RuntimeError("pulsed flow did not approach the target")
        t_open = seg.t
    seg = run(0.0, t_open, t_open + (b - a) / rate, store=True)
    vals = (seg.ys @ tgt.w1) * np.exp(-lam * (seg.ts - pulse.tau))
    val = complex(trapezoid(vals, seg.ts) / (seg.ts[-1] - seg.ts[0]))
    return val if tgt.complex_dominant else complex(val.real, 0.0)


def _fmt(v) -> str:
    return "" if v is None else f"{v:.17g}"


def write_switch_map_csv(path, samples) -> None:
    """Rows in the given order (callers pass tau-major order)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mu", "tau", "status", "re_r", "im_r", "abs_r", "T_eps", "T_tot"])
        for s in samples:
            r = s.r
            w.writerow([
                _fmt(s.pulse.mu), _fmt(s.pulse.tau), s.status,
                _fmt(None if r is None else r.real), _fmt(None if r is None else r.imag),
                _fmt(None if r is None else abs(r)), _fmt(s.T_eps), _fmt(s.T_tot),
            ])
