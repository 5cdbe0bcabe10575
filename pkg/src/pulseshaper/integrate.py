"""Adaptive time integration under rectangular pulse inputs.

Two compiled steppers share one driver layout:

* ``dopri_run``  -- Dormand-Prince 5(4), explicit, FSAL.
* ``esdirk_run`` -- ESDIRK4(3)6L[2]SA of Kennedy & Carpenter: L-stable,
  stiffly accurate, stage order 2, simplified Newton on every implicit stage
  with the model Jacobian frozen over the step.

Both can integrate in *deviation coordinates* ``y = x - origin``; the vector
field is then evaluated as ``f(origin + y) - dref``.  Step-size control is
relative to ``|y|``, which keeps tiny deviations from an equilibrium
resolved long after ``|x|`` has stopped changing in the last digits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ._jit import njit
from .model import Pulse, SystemModel

__all__ = [
    "IntegratorSettings",
    "Trajectory",
    "IntegrationError",
    "StepSizeUnderflow",
    "MaxStepsExceeded",
    "EscapedDomain",
    "NonFiniteDerivative",
    "advance",
    "integrate_flow",
    "integrate_to_convergence",
    "write_trajectory_csv",
]

OK, UNDERFLOW, MAX_STEPS, ESCAPED, NONFINITE, CAPTURED = range(6)

SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 5.0

# Dormand-Prince 5(4)
DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
DP_A = np.array([
    [0, 0, 0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0, 0],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0],
])
DP_B = DP_A[6].copy()
DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

# ESDIRK4(3)6L[2]SA
_s2 = math.sqrt(2.0)
SD_GAMMA = 0.25
SD_C = np.array([0.0, 0.5, (2 - _s2) / 4, 5 / 8, 26 / 25, 1.0])
SD_A = np.array([
    [0, 0, 0, 0, 0, 0],
    [0.25, 0.25, 0, 0, 0, 0],
    [(1 - _s2) / 8, (1 - _s2) / 8, 0.25, 0, 0, 0],
    [(5 - 7 * _s2) / 64, (5 - 7 * _s2) / 64, 7 * (1 + _s2) / 32, 0.25, 0, 0],
    [(-13796 - 54539 * _s2) / 125000, (-13796 - 54539 * _s2) / 125000,
     (506605 + 132109 * _s2) / 437500, 166 * (-97 + 376 * _s2) / 109375, 0.25, 0],
    [(1181 - 987 * _s2) / 13782, (1181 - 987 * _s2) / 13782,
     47 * (-267 + 1783 * _s2) / 273343, -16 * (-22922 + 3525 * _s2) / 571953,
     -15625 * (97 + 376 * _s2) / 90749876, 0.25],
])
SD_B = SD_A[5].copy()
SD_BHAT = np.array([
    -480923228411 / 4982971448372, -480923228411 / 4982971448372,
    6709447293961 / 12833189095359, 3513175791894 / 6748737351361,
    -498863281070 / 6042575550617, 2077005547802 / 8945017530137,
])
SD_E = SD_BHAT - SD_B


# ---------------------------------------------------------------------------
# compiled helpers

@njit
def _feval(rhs, p, xref, dref, y, u):
    return rhs(xref + y, u, p) - dref


@njit
def _err_norm(err, y, ynew, rtol, atol):
    acc = 0.0
    n = err.shape[0]
    for i in range(n):
        sc = atol[i] + rtol * max(abs(y[i]), abs(ynew[i]))
        acc += (err[i] / sc) ** 2
    return math.sqrt(acc / n)


@njit
def _all_finite(v):
    for i in range(v.shape[0]):
        if not math.isfinite(v[i]):
            return False
    return True


@njit
def _outside(xref, y, lo, hi):
    for i in range(y.shape[0]):
        xi = xref[i] + y[i]
        if xi < lo[i] or xi > hi[i]:
            return True
    return False


@njit
def _captured(xref, y, centers, radii):
    n = y.shape[0]
    for k in range(centers.shape[0]):
        d2 = 0.0
        for i in range(n):
            d2 += (xref[i] + y[i] - centers[k, i]) ** 2
        if math.sqrt(d2) <= radii[k]:
            return k
    return -1


@njit
def _initial_step(rhs, p, xref, dref, y, u, f0, rtol, atol, order, span):
    n = y.shape[0]
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol[i] + rtol * abs(y[i])
        d0 += (y[i] / sc) ** 2
        d1 += (f0[i] / sc) ** 2
    d0 = math.sqrt(d0 / n)
    d1 = math.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = _feval(rhs, p, xref, dref, y + h0 * f0, u)
    d2 = 0.0
    for i in range(n):
        sc = atol[i] + rtol * abs(y[i])
        d2 += ((f1[i] - f0[i]) / sc) ** 2
    d2 = math.sqrt(d2 / n) / h0
    if not math.isfinite(d2):
        return h0 * 1e-3
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (order + 1))
    return min(100.0 * h0, h1, span)


@njit
def _grow(ts, ys, m):
    cap = ts.shape[0]
    if m < cap:
        return ts, ys
    ts2 = np.empty(2 * cap)
    ys2 = np.empty((2 * cap, ys.shape[1]))
    ts2[:cap] = ts
    ys2[:cap] = ys
    return ts2, ys2


# ---------------------------------------------------------------------------
# explicit stepper

@njit
def dopri_run(rhs, p, y0, xref, dref, u, t0, t1, rtol, atol, h, hmin, hmax,
              max_steps, lo, hi, centers, radii, store):
    """Integrate from t0 to t1.  Returns (status, t, y, h_next, nsteps, hit, ts, ys).

    The state is ``xref + y``; ``atol`` is a per-component vector.
    """
    n = y0.shape[0]
    y = y0.copy()
    t = t0
    ts = np.empty(64 if store else 1)
    ys = np.empty((ts.shape[0], n))
    m = 0
    if store:
        ts[0] = t
        ys[0] = y
        m = 1
    hit = _captured(xref, y, centers, radii)
    if hit >= 0:
        return CAPTURED, t, y, h, 0, hit, ts[:m], ys[:m]
    if _outside(xref, y, lo, hi):
        return ESCAPED, t, y, h, 0, -1, ts[:m], ys[:m]
    k = np.empty((7, n))
    k[0] = _feval(rhs, p, xref, dref, y, u)
    if not _all_finite(k[0]):
        return NONFINITE, t, y, h, 0, -1, ts[:m], ys[:m]
    if t1 <= t0:
        return OK, t, y, h, 0, -1, ts[:m], ys[:m]
    if h <= 0.0:
        h = _initial_step(rhs, p, xref, dref, y, u, k[0], rtol, atol, 5, t1 - t0)
    h = min(h, hmax)
    nsteps = 0
    bad_values = False
    while t < t1:
        if nsteps >= max_steps:
            return MAX_STEPS, t, y, h, nsteps, -1, ts[:m], ys[:m]
        hmin_eff = max(hmin, 16.0 * 2.220446049250313e-16 * abs(t))
        h_prop = h
        last = False
        if t + h >= t1:
            h = t1 - t
            last = True
        for s in range(1, 7):
            ys_ = y.copy()
            for j in range(s):
                if DP_A[s, j] != 0.0:
                    ys_ += h * DP_A[s, j] * k[j]
            k[s] = _feval(rhs, p, xref, dref, ys_, u)
        # stage 7 was evaluated at the 5th-order solution (FSAL)
        ynew = ys_
        errv = np.zeros(n)
        for j in range(7):
            if DP_E[j] != 0.0:
                errv += h * DP_E[j] * k[j]
        err = _err_norm(errv, y, ynew, rtol, atol)
        if not (_all_finite(ynew) and _all_finite(k[6]) and math.isfinite(err)):
            bad_values = True
            h = h * FAC_MIN
            if h < hmin_eff:
                return NONFINITE, t, y, h, nsteps, -1, ts[:m], ys[:m]
            continue
        if err <= 1.0:
            t = t1 if last else t + h
            y = ynew
            k[0] = k[6]
            nsteps += 1
            bad_values = False
            if store:
                ts, ys = _grow(ts, ys, m)
                ts[m] = t
                ys[m] = y
                m += 1
            if _outside(xref, y, lo, hi):
                return ESCAPED, t, y, h, nsteps, -1, ts[:m], ys[:m]
            hit = _captured(xref, y, centers, radii)
            if hit >= 0:
                return CAPTURED, t, y, h, nsteps, hit, ts[:m], ys[:m]
            fac = FAC_MAX if err == 0.0 else min(FAC_MAX, max(FAC_MIN, SAFETY * err ** -0.2))
            h = min((h_prop if last else h) * fac, hmax)
        else:
            h = h * max(FAC_MIN, SAFETY * err ** -0.2)
            if h < hmin_eff:
                status = NONFINITE if bad_values else UNDERFLOW
                return status, t, y, h, nsteps, -1, ts[:m], ys[:m]
    return OK, t, y, h, nsteps, -1, ts[:m], ys[:m]


# ---------------------------------------------------------------------------
# implicit stepper

@njit
def esdirk_run(rhs, jac, p, y0, xref, dref, u, t0, t1, rtol, atol, h, hmin, hmax,
               max_steps, lo, hi, centers, radii, store):
    """Same contract as :func:`dopri_run`; ``jac(x, u, p)`` is the state Jacobian."""
    n = y0.shape[0]
    s = SD_B.shape[0]
    y = y0.copy()
    t = t0
    ts = np.empty(64 if store else 1)
    ys = np.empty((ts.shape[0], n))
    m = 0
    if store:
        ts[0] = t
        ys[0] = y
        m = 1
    hit = _captured(xref, y, centers, radii)
    if hit >= 0:
        return CAPTURED, t, y, h, 0, hit, ts[:m], ys[:m]
    if _outside(xref, y, lo, hi):
        return ESCAPED, t, y, h, 0, -1, ts[:m], ys[:m]
    K = np.empty((s, n))
    f0 = _feval(rhs, p, xref, dref, y, u)
    if not _all_finite(f0):
        return NONFINITE, t, y, h, 0, -1, ts[:m], ys[:m]
    if t1 <= t0:
        return OK, t, y, h, 0, -1, ts[:m], ys[:m]
    if h <= 0.0:
        h = _initial_step(rhs, p, xref, dref, y, u, f0, rtol, atol, 4, t1 - t0)
    h = min(h, hmax)
    eye = np.eye(n)
    J = jac(xref + y, u, p)
    nsteps = 0
    while t < t1:
        if nsteps >= max_steps:
            return MAX_STEPS, t, y, h, nsteps, -1, ts[:m], ys[:m]
        hmin_eff = max(hmin, 16.0 * 2.220446049250313e-16 * abs(t))
        h_prop = h
        last = False
        if t + h >= t1:
            h = t1 - t
            last = True
        M = eye - (h * SD_GAMMA) * J
        sc = np.empty(n)
        for i in range(n):
            sc[i] = atol[i] + rtol * abs(y[i])
        K[0] = f0
        converged = True
        Z = y.copy()
        for i in range(1, s):
            base = y.copy()
            for j in range(i):
                base += (h * SD_A[i, j]) * K[j]
            Z = base + (h * SD_GAMMA) * K[i - 1]
            converged = False
            prev = np.inf
            for it in range(10):
                G = Z - (h * SD_GAMMA) * _feval(rhs, p, xref, dref, Z, u) - base
                if not _all_finite(G):
                    break
                dZ = np.linalg.solve(M, -G)
                Z = Z + dZ
                nrm = 0.0
                for q in range(n):
                    nrm += (dZ[q] / sc[q]) ** 2
                nrm = math.sqrt(nrm / n)
                if nrm < 3e-3:
                    converged = True
                    break
                if it > 0 and nrm > 2.0 * prev:
                    break
                prev = nrm
            if not converged:
                break
            K[i] = (Z - base) / (h * SD_GAMMA)
        if not converged:
            h = h * 0.25
            J = jac(xref + y, u, p)
            if h < hmin_eff:
                return UNDERFLOW, t, y, h, nsteps, -1, ts[:m], ys[:m]
            continue
        ynew = Z
        errv = np.zeros(n)
        for j in range(s):
            errv += (h * SD_E[j]) * K[j]
        # damp the stiff components of the estimate (Hairer & Wanner filter)
        errv = np.linalg.solve(M, errv)
        err = _err_norm(errv, y, ynew, rtol, atol)
        f_new = _feval(rhs, p, xref, dref, ynew, u)
        if not (math.isfinite(err) and _all_finite(f_new)):
            err = np.inf
        if err <= 1.0:
            t = t1 if last else t + h
            y = ynew
            f0 = f_new
            nsteps += 1
            if store:
                ts, ys = _grow(ts, ys, m)
                ts[m] = t
                ys[m] = y
                m += 1
            if _outside(xref, y, lo, hi):
                return ESCAPED, t, y, h, nsteps, -1, ts[:m], ys[:m]
            hit = _captured(xref, y, centers, radii)
            if hit >= 0:
                return CAPTURED, t, y, h, nsteps, hit, ts[:m], ys[:m]
            fac = FAC_MAX if err == 0.0 else min(FAC_MAX, max(FAC_MIN, SAFETY * err ** -0.25))
            h = min((h_prop if last else h) * fac, hmax)
            J = jac(xref + y, u, p)
        else:
            fac = FAC_MIN if not math.isfinite(err) else max(FAC_MIN, SAFETY * err ** -0.25)
            h = h * fac
            if h < hmin_eff:
                return UNDERFLOW, t, y, h, nsteps, -1, ts[:m], ys[:m]
    return OK, t, y, h, nsteps, -1, ts[:m], ys[:m]


@njit
def fd_jac_kernel(rhs, x, u, p):
    n = x.shape[0]
    J = np.empty((n, n))
    for j in range(n):
        step = 1e-6 * (1.0 + abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += step
        xm[j] -= step
        J[:, j] = (rhs(xp, u, p) - rhs(xm, u, p)) / (2.0 * step)
    return J


# ---------------------------------------------------------------------------
# Python-facing API

@dataclass(frozen=True)
class IntegratorSettings:
    """Tolerances and limits shared by both steppers.

    ``stiff=None`` defers to the model's own hint.  ``h_init=0`` selects the
    automatic starting step.
    """

    rtol: float = 1e-8
    atol: float = 1e-10
    h_init: float = 0.0
    h_min: float = 1e-14
    h_max: float = math.inf
    stiff: bool | None = None
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if not (0 < self.h_min <= self.h_max):
            raise ValueError("need 0 < h_min <= h_max")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")

    def use_stiff(self, m: SystemModel) -> bool:
        return m.stiff if self.stiff is None else bool(self.stiff)


@dataclass
class Trajectory:
    """Accepted steps of one run.  If ``origin`` is set, ``states`` hold
    deviations ``x - origin`` rather than absolute states."""

    times: np.ndarray
    states: np.ndarray
    input_used: Pulse | None = None
    origin: np.ndarray | None = None

    @property
    def absolute_states(self) -> np.ndarray:
        if self.origin is None:
            return self.states
        return self.states + self.origin

    @property
    def final_state(self) -> np.ndarray:
        return self.absolute_states[-1]

    def __len__(self):
        return len(self.times)


class IntegrationError(RuntimeError):
    def __init__(self, message, time=None, state=None, trajectory=None):
        super().__init__(message)
        self.time = time
        self.state = state
        self.trajectory = trajectory


class StepSizeUnderflow(IntegrationError):
    pass


class MaxStepsExceeded(IntegrationError):
    pass


class EscapedDomain(IntegrationError):
    pass


class NonFiniteDerivative(IntegrationError):
    pass


_ERRORS = {
    UNDERFLOW: (StepSizeUnderflow, "step size underflow"),
    MAX_STEPS: (MaxStepsExceeded, "maximum number of steps exceeded"),
    ESCAPED: (EscapedDomain, "escaped the domain box"),
    NONFINITE: (NonFiniteDerivative, "non-finite derivative"),
}


class Segment(NamedTuple):
    status: int
    t: float
    y: np.ndarray
    h: float
    nsteps: int
    hit: int
    ts: np.ndarray
    ys: np.ndarray


_NO_CENTERS = np.empty((0, 1))
_EPS = float(np.finfo(float).eps)
_NO_RADII = np.empty(0)


def advance(m: SystemModel, y, u: float, t0: float, t1: float,
            settings: IntegratorSettings, *, origin=None, dref=None, store=False,
            centers=None, radii=None, h: float | None = None,
            h_max: float | None = None) -> Segment:
    """Run one constant-input segment through the compiled stepper.

    Never raises on numerical failure; the status code is returned instead.
    """
    n = m.dim
    y = np.ascontiguousarray(y, dtype=float)
    xref = np.zeros(n) if origin is None else np.ascontiguousarray(origin, dtype=float)
    dref = np.zeros(n) if dref is None else np.ascontiguousarray(dref, dtype=float)
    if centers is None or len(centers) == 0:
        centers, radii = np.empty((0, n)), _NO_RADII
    else:
        centers = np.ascontiguousarray(centers, dtype=float).reshape(-1, n)
        radii = np.ascontiguousarray(radii, dtype=float)
    h0 = settings.h_init if h is None else h
    hmax = settings.h_max if h_max is None else min(h_max, settings.h_max)
    lo = np.ascontiguousarray(m.domain_box[:, 0])
    hi = np.ascontiguousarray(m.domain_box[:, 1])
    # y is a deviation from xref, so the absolute scale can never be finer
    # than the rounding of xref + y itself
    atol = settings.atol + 4.0 * _EPS * np.abs(xref)
    common = (y, xref, dref, float(u), float(t0), float(t1), settings.rtol, atol,
              float(h0), settings.h_min, float(hmax), settings.max_steps, lo, hi,
              centers, radii, store)
    if settings.use_stiff(m):
        jac = m.jac if m.jac is not None else _fd_jac_for(m)
        out = esdirk_run(m.rhs, jac, m.p, *common)
    else:
        out = dopri_run(m.rhs, m.p, *common)
    return Segment(*out)


_FD_JACS: dict = {}


def _fd_jac_for(m: SystemModel):
    rhs = m.rhs
    if rhs not in _FD_JACS:
        @njit
        def jac(x, u, p):
            return fd_jac_kernel(rhs, x, u, p)

        _FD_JACS[rhs] = jac
    return _FD_JACS[rhs]


def _raise_for(seg: Segment, times, states, pulse, origin):
    cls, msg = _ERRORS[seg.status]
    traj = Trajectory(np.asarray(times), np.asarray(states), pulse, origin)
    raise cls(f"{msg} at t={seg.t:.6g}", time=seg.t, state=seg.y, trajectory=traj)


def integrate_flow(m: SystemModel, x0, pulse: Pulse | None, t_end: float,
                   settings: IntegratorSettings | None = None, *, origin=None) -> Trajectory:
    """Samples of the pulsed flow on ``[0, t_end]``.

    The run is split at ``t = tau`` so no step straddles the input jump.
    With ``origin`` the integration (and the returned states) use deviation
    coordinates.
    """
    settings = settings or IntegratorSettings()
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (m.dim,):
        raise ValueError(f"x0 must have shape ({m.dim},)")
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    if not m.in_box(x0):
        raise EscapedDomain("initial state outside the domain box", time=0.0, state=x0)
    org = None if origin is None else np.asarray(origin, dtype=float)
    y = x0 if org is None else x0 - org
    segments = []
    if pulse is not None and pulse.tau > 0 and pulse.mu != 0:
        segments.append((pulse.mu, 0.0, min(pulse.tau, t_end)))
        if pulse.tau < t_end:
            segments.append((0.0, pulse.tau, t_end))
    else:
        segments.append((0.0, 0.0, t_end))
    times, states = [np.array([0.0])], [y[None, :]]
    h = None
    for u, a, b in segments:
        seg = advance(m, y, u, a, b, settings, origin=org, store=True, h=h)
        times.append(seg.ts[1:])
        states.append(seg.ys[1:])
        if seg.status != OK:
            _raise_for(seg, np.concatenate(times), np.concatenate(states), pulse, org)
        y, h = seg.y, seg.h
    return Trajectory(np.concatenate(times), np.concatenate(states), pulse, org)


def default_capture_radius(location) -> float:
    return 1e-6 * (1.0 + float(np.linalg.norm(location)))


def integrate_to_convergence(m: SystemModel, x0, attractors: Sequence, capture_radius=None,
                             t_max: float = 500.0, settings: IntegratorSettings | None = None):
    """Run the unforced flow until it enters a capture ball of one attractor.

    ``attractors`` are objects with a ``location`` attribute (fixed-point
    records).  Returns ``(trajectory, attractor_or_None, capture_time_or_None)``.
    Leaving the domain box raises :class:`EscapedDomain`.
    """
    settings = settings or IntegratorSettings()
    x0 = np.asarray(x0, dtype=float)
    if not m.in_box(x0):
        raise EscapedDomain("initial state outside the domain box", time=0.0, state=x0)
    centers = np.array([a.location for a in attractors], dtype=float).reshape(-1, m.dim)
    if capture_radius is None:
        radii = np.array([default_capture_radius(c) for c in centers])
    else:
        radii = np.full(len(centers), float(capture_radius))
    seg = advance(m, x0, 0.0, 0.0, t_max, settings, store=True, centers=centers, radii=radii)
    traj = Trajectory(seg.ts, seg.ys, None)
    if seg.status == CAPTURED:
        return traj, attractors[seg.hit], seg.t
    if seg.status == OK:
        return traj, None, None
    _raise_for(seg, seg.ts, seg.ys, None, None)


def write_trajectory_csv(path, traj: Trajectory) -> None:
    states = traj.absolute_states
    n = states.shape[1]
    header = ",".join(["t"] + [f"x{i + 1}" for i in range(n)])
    data = np.column_stack([traj.times, states])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
