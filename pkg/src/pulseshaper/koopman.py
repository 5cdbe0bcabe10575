"""Dominant Koopman eigenfunction on a basin of attraction.

``s1(x)`` is estimated from the observable ``g(x) = w1^T (x - x_fp)`` along
the unforced flow.  Because ``w1`` annihilates every other right
eigenvector, the linear parts of the subdominant modes drop out of ``g`` and
the exponentially rescaled value ``g(phi(T, x)) exp(-lambda1 T)`` converges
at the rate ``|Re lambda1|`` of the remaining nonlinear modes.  Runs are
done in deviation coordinates around ``x_fp`` so the rescaled value keeps
its relative accuracy while ``phi`` approaches the equilibrium.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.integrate import trapezoid

from ._parallel import parallel_map
from .integrate import (
    CAPTURED,
    ESCAPED as _ESCAPED_STATUS,
    OK,
    EscapedDomain,
    IntegrationError,
    IntegratorSettings,
    advance,
    default_capture_radius,
    integrate_to_convergence,
)
from .model import SystemModel
from .spectral import FixedPointData, find_fixed_point

__all__ = [
    "BistableSystem",
    "prepare",
    "BasinLabel",
    "EigenfunctionEvaluator",
    "S1Result",
    "NotInBasin",
    "Undecided",
    "eval_s1",
    "classify_basin",
    "isostable_time",
    "evaluate_batch",
    "write_s1_csv",
]

BASIN_OF_TARGET = "basin_of_target"
BASIN_OF_SOURCE = "basin_of_source"
ESCAPED = "escaped"
UNDECIDED = "undecided"


@dataclass(frozen=True, eq=False)
class BistableSystem:
    """A model together with its two attractors: ``source`` (x*) and ``target`` (x•)."""

    model: SystemModel
    source: FixedPointData
    target: FixedPointData
    settings: IntegratorSettings = IntegratorSettings()

    @property
    def attractors(self) -> tuple[FixedPointData, FixedPointData]:
        return (self.target, self.source)


def prepare(model: SystemModel, settings: IntegratorSettings | None = None,
            source_guess=None, target_guess=None, newton_tol: float = 1e-6) -> BistableSystem:
    src = find_fixed_point(model, model.source_guess if source_guess is None else source_guess,
                           newton_tol)
    tgt = find_fixed_point(model, model.target_guess if target_guess is None else target_guess,
                           newton_tol)
    for name, fp in (("source", src), ("target", tgt)):
        if not fp.is_stable:
            raise ValueError(f"{name} equilibrium {fp.location} is not stable")
    if np.allclose(src.location, tgt.location, rtol=1e-6, atol=1e-9):
        raise ValueError("source and target guesses converged to the same equilibrium")
    return BistableSystem(model, src, tgt, settings or IntegratorSettings())


@dataclass(frozen=True)
class BasinLabel:
    value: str
    witness_time: float | None = None

    def __post_init__(self):
        if self.value not in (BASIN_OF_TARGET, BASIN_OF_SOURCE, ESCAPED, UNDECIDED):
            raise ValueError(f"unknown basin label {self.value!r}")

    @property
    def in_target(self) -> bool:
        return self.value == BASIN_OF_TARGET


class S1Result(NamedTuple):
    value: complex | None
    status: str  # ok | not_in_basin | undecided | escaped
    time: float
    captured_by: int | None = None


class NotInBasin(RuntimeError):
    pass


class Undecided(RuntimeError):
    pass


TERMINAL = "terminal_rescale"
RUNNING = "running_average"


@dataclass(frozen=True, eq=False)
class EigenfunctionEvaluator:
    """Evaluates ``s1`` of ``fp``.

    ``competitors`` are other attractors; reaching one of them ends a run
    early with ``not_in_basin``.
    """

    model: SystemModel
    fp: FixedPointData
    t_checkpoint: float | None = None
    rel_tol: float = 1e-6
    t_max: float | None = None
    estimator: str | None = None
    settings: IntegratorSettings | None = None
    competitors: tuple = ()
    divergence_factor: float = 1e6

    def __post_init__(self):
        rate = self.fp.rate
        if not self.fp.is_stable or rate <= 0:
            raise ValueError("eigenfunction evaluator needs a stable equilibrium")
        if self.t_checkpoint is None:
            object.__setattr__(self, "t_checkpoint", 5.0 / rate)
        if self.t_max is None:
            object.__setattr__(self, "t_max", 60.0 / rate)
        if self.estimator is None:
            est = RUNNING if self.fp.complex_dominant else TERMINAL
            object.__setattr__(self, "estimator", est)
        if self.estimator not in (TERMINAL, RUNNING):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.settings is None:
            # stiff models carry O(1/eps) terms whose rounding sets a coarser floor
            atol = 1e-12 if self.model.stiff else 1e-14
            object.__setattr__(self, "settings", IntegratorSettings(rtol=1e-10, atol=atol))
        object.__setattr__(self, "competitors", tuple(self.competitors))

    @classmethod
    def for_target(cls, system: BistableSystem, **kw) -> "EigenfunctionEvaluator":
        return cls(system.model, system.target, competitors=(system.source,), **kw)

    @property
    def lambda1(self) -> complex:
        return self.fp.lambda1

    def observable(self, x) -> complex:
        val = self.fp.w1 @ (np.asarray(x, dtype=float) - self.fp.location)
        return complex(val)

    def _g(self, y) -> complex:
        return complex(self.fp.w1 @ y)

    def evaluate(self, x) -> S1Result:
        x = np.asarray(x, dtype=float)
        m, fp = self.model, self.fp
        if not m.in_box(x):
            return S1Result(None, ESCAPED, 0.0)
        lam = self.fp.lambda1
        origin = fp.location
        dref = m.eval_f(origin)
        floor = 16 * _EPS * float(np.max(np.abs(origin))) + 10 * self.settings.atol
        if self.competitors:
            centers = np.array([c.location for c in self.competitors])
            radii = np.array([default_capture_radius(c) for c in centers])
        else:
            centers = radii = None
        dt = self.t_checkpoint
        running = self.estimator == RUNNING
        y = x - origin
        if not np.any(y):
            return S1Result(0j, "ok", 0.0)
        t = 0.0
        h = None
        prev = first = prev_diff = None
        k = 0
        while True:
            k += 1
            t_next = k * dt
            if t_next > self.t_max * (1 + 1e-12):
                return S1Result(None, UNDECIDED, t)
            seg = advance(m, y, 0.0, t, t_next, self.settings, origin=origin, dref=dref,
                          store=running, centers=centers, radii=radii, h=h,
                          h_max=dt / 64 if running else None)
            if seg.status == CAPTURED:
                return S1Result(None, NOT_IN_BASIN, seg.t, seg.hit)
            if seg.status == _ESCAPED_STATUS:
                return S1Result(None, ESCAPED, seg.t)
            if seg.status != OK:
                return S1Result(None, UNDECIDED, seg.t)
            y, h, t = seg.y, seg.h, t_next
            if running:
                vals = (seg.ys @ fp.w1) * np.exp(-lam * seg.ts)
                est = complex(trapezoid(vals, seg.ts) / (seg.ts[-1] - seg.ts[0]))
            else:
                est = self._g(y) * complex(np.exp(-lam * t))
            if not (math.isfinite(est.real) and math.isfinite(est.imag)):
                return S1Result(None, NOT_IN_BASIN, t)
            # absolute accuracy of y is bounded by atol and by rounding of
            # origin + y; relative to a tiny y this floor swamps the estimate
            ynorm = float(np.max(np.abs(y)))
            noise = floor / ynorm if ynorm > 0 else math.inf
            if first is None:
                first = est
            elif abs(est) > self.divergence_factor * max(1.0, abs(first)):
                return S1Result(None, NOT_IN_BASIN, t)
            tol = self.rel_tol * max(1.0, abs(est)) + noise * abs(est)
            if prev is not None:
                diff = abs(est - prev)
                done = diff <= tol
                if not done and prev_diff is not None and prev_diff > 0:
                    # contamination shrinks geometrically between checkpoints;
                    # stop once the predicted remainder of the tail is below tol
                    q = diff / prev_diff
                    done = q < 0.1 and diff * q / (1 - q) <= tol
                if done:
                    if not fp.complex_dominant:
                        est = complex(est.real, 0.0)
                    return S1Result(est, "ok", t)
                prev_diff = diff
            if noise > 1e-3:
                return S1Result(None, UNDECIDED, t)
            prev = est


NOT_IN_BASIN = "not_in_basin"
_EPS = float(np.finfo(float).eps)


def eval_s1(ev: EigenfunctionEvaluator, x) -> complex:
    """``s1(x)``; raises :class:`NotInBasin` or :class:`Undecided`."""
    res = ev.evaluate(x)
    if res.status == "ok":
        return res.value
    if res.status == UNDECIDED:
        raise Undecided(f"no convergence before t_max={ev.t_max:.4g}")
    raise NotInBasin(f"point is not in the basin ({res.status} at t={res.time:.4g})")


def classify_basin(system: BistableSystem, x, t_max: float = 500.0, capture_radius=None,
                   settings: IntegratorSettings | None = None) -> BasinLabel:
    """Label the attractor reached by the unforced flow from ``x``.

    Integration failures become ``escaped``/``undecided`` labels.
    """
    try:
        _, fp, when = integrate_to_convergence(
            system.model, x, system.attractors, capture_radius, t_max,
            settings or system.settings,
        )
    except EscapedDomain as exc:
        return BasinLabel(ESCAPED, exc.time)
    except IntegrationError:
        return BasinLabel(UNDECIDED, None)
    if fp is None:
        return BasinLabel(UNDECIDED, None)
    return BasinLabel(BASIN_OF_TARGET if fp is system.target else BASIN_OF_SOURCE, when)


def isostable_time(alpha1: float, alpha2: float, lambda1_re: float) -> float:
    """Time to travel from isostable ``alpha1`` to isostable ``alpha2``."""
    if alpha1 <= 0 or alpha2 <= 0:
        raise ValueError("isostable levels must be positive")
    if lambda1_re == 0:
        raise ValueError("lambda1 must have nonzero real part")
    return math.log(alpha1 / alpha2) / abs(lambda1_re)


def evaluate_batch(ev: EigenfunctionEvaluator, points: Sequence, jobs: int | None = None):
    return parallel_map(ev.evaluate, [np.asarray(p, dtype=float) for p in points], jobs)


def write_s1_csv(path, points, results: Sequence[S1Result]) -> None:
    points = np.asarray(points, dtype=float)
    n = points.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(n)] + ["re_s1", "im_s1", "status"])
        for x, res in zip(points, results):
            if res.value is None:
                vals = ["", ""]
            else:
                vals = [f"{res.value.real:.17g}", f"{res.value.imag:.17g}"]
            w.writerow([f"{v:.17g}" for v in x] + vals + [res.status])
