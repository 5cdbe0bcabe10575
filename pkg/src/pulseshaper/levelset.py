"""Level curves of the switching function in the (mu, tau) plane.

Monotone models get per-mu bisection in tau: the switching set is
order-convex and ``Re r`` grows with the pulse, so each level is the graph of
a non-increasing function of mu.  Other models are swept on a grid and the
``|r|`` field is contoured.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from skimage.measure import find_contours

from ._parallel import parallel_map
from .integrate import OK
from .koopman import BistableSystem, EigenfunctionEvaluator, classify_basin
from .koopman import BASIN_OF_TARGET, UNDECIDED
from .model import Pulse
from .switching import DEFAULT_EPS, SwitchingSample, eval_r, pulse_endpoint

__all__ = [
    "GridSpec",
    "SweepGrid",
    "LevelCurve",
    "BisectionResult",
    "bisect_tau",
    "sweep",
    "switches",
    "trace_separatrix_monotone",
    "trace_level_curve_monotone",
    "extract_level_contours_grid",
    "extract_separatrix_grid",
]

LOWER, UPPER, SEPARATRIX, MODULUS = "lower", "upper", "separatrix", "modulus"


@dataclass(frozen=True)
class GridSpec:
    """Axis ranges as ``(lo, hi, count)``; ``log`` spaces both axes geometrically."""

    mu: tuple[float, float, int] = (0.05, 20.0, 20)
    tau: tuple[float, float, int] = (0.05, 20.0, 20)
    log: bool = False

    def __post_init__(self):
        for name, (lo, hi, n) in (("mu", self.mu), ("tau", self.tau)):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"{name} range needs lo < hi")
            if int(n) != n or n < 2:
                raise ValueError(f"{name} count must be an integer >= 2")
            if lo < 0:
                raise ValueError(f"{name} must be nonnegative")
            if self.log and lo <= 0:
                raise ValueError("log-spaced axes need positive bounds")

    def axis(self, which: str) -> np.ndarray:
        lo, hi, n = getattr(self, which)
        space = np.geomspace if self.log else np.linspace
        return space(lo, hi, int(n))


@dataclass
class SweepGrid:
    """``samples[i][j]`` is the pulse ``(mu_values[j], tau_values[i])``."""

    mu_values: np.ndarray
    tau_values: np.ndarray
    samples: list
    spec: GridSpec | None = None

    def __post_init__(self):
        if len(self.samples) != len(self.tau_values) or any(
            len(row) != len(self.mu_values) for row in self.samples
        ):
            raise ValueError("samples do not match the axis lengths")

    def field(self, fn: Callable[[SwitchingSample], float]) -> np.ndarray:
        return np.array([[fn(s) for s in row] for row in self.samples], dtype=float)

    def abs_r(self) -> np.ndarray:
        return self.field(lambda s: abs(s.r) if s.status == "ok" else np.nan)

    def flat(self) -> list:
        """Samples in tau-major order."""
        return [s for row in self.samples for s in row]


def sweep(system: BistableSystem, spec: GridSpec, eps: float = DEFAULT_EPS,
          jobs: int | None = None, evaluator: EigenfunctionEvaluator | None = None) -> SweepGrid:
    ev = evaluator or EigenfunctionEvaluator.for_target(system)
    mus, taus = spec.axis("mu"), spec.axis("tau")
    pulses = [Pulse(float(mu), float(tau)) for tau in taus for mu in mus]
    flat = parallel_map(lambda p: eval_r(system, p, eps, ev), pulses, jobs)
    rows = [flat[i * len(mus):(i + 1) * len(mus)] for i in range(len(taus))]
    return SweepGrid(mus, taus, rows, spec)


@dataclass
class LevelCurve:
    alpha: float
    branch: str
    points: list
    tol: float
    unresolved_mu: list = field(default_factory=list)
    iterations: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.branch not in (LOWER, UPPER, SEPARATRIX, MODULUS):
            raise ValueError(f"unknown branch {self.branch!r}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @property
    def mu(self) -> np.ndarray:
        return np.array([p[0] for p in self.points], dtype=float)

    @property
    def tau(self) -> np.ndarray:
        return np.array([p[1] for p in self.points], dtype=float)

    def monotone_violations(self) -> int:
        """Pairs with ``mu1 < mu2`` and ``tau1 < tau2 - tol``."""
        count = 0
        pts = self.points
        for a in range(len(pts)):
            for b in range(len(pts)):
                if pts[a][0] < pts[b][0] and pts[a][1] < pts[b][1] - self.tol:
                    count += 1
        return count

    def to_dict(self) -> dict:
        return {
            "alpha": "inf" if math.isinf(self.alpha) else float(self.alpha),
            "branch": self.branch,
            "tol": float(self.tol),
            "points": [{"mu": float(m), "tau": float(t)} for m, t in self.points],
            "unresolved_mu": [float(m) for m in self.unresolved_mu],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# ---------------------------------------------------------------------------
# monotone tracing

@dataclass(frozen=True)
class BisectionResult:
    lo: float
    hi: float
    iterations: int

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)


def bisect_tau(above: Callable[[float], bool], lo: float, hi: float, tol: float) -> BisectionResult:
    """Shrink ``[lo, hi]`` (with ``above(lo)`` false, ``above(hi)`` true) to width ``<= tol``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    n = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if above(mid):
            hi = mid
        else:
            lo = mid
        n += 1
    return BisectionResult(lo, hi, n)


def _require_monotone(system: BistableSystem) -> None:
    if not system.model.declared_monotone:
        raise ValueError("monotone tracing needs a model declared monotone; use the grid method")


def switches(system: BistableSystem, pulse: Pulse, t_max: float = 500.0, settings=None):
    """True/False for switch/no switch, None if undecided after one t_max doubling."""
    end = pulse_endpoint(system, pulse, settings)
    if end.status != OK:
        return None
    x = end.y + system.source.location
    for tm in (t_max, 2 * t_max):
        label = classify_basin(system, x, t_max=tm, settings=settings)
        if label.value != UNDECIDED:
            return label.value == BASIN_OF_TARGET
    return None


class _Unresolved(Exception):
    pass


def _trace(mu_values, tau_bracket, tol, above, warm_start, jobs):
    lo0, hi0 = map(float, tau_bracket)
    if not 0 <= lo0 < hi0:
        raise ValueError("tau bracket needs 0 <= lo < hi")
    mus = [float(m) for m in mu_values]
    if any(b <= a for a, b in zip(mus, mus[1:])):
        raise ValueError("mu_values must be strictly ascending")

    def solve(mu, hi_guess):
        f = lambda tau: above(mu, tau)
        hi = hi0
        if hi_guess is not None and hi_guess < hi0:
            # the curve is non-increasing in mu, so the previous root bounds this one
            if f(hi_guess):
                hi = hi_guess
        if not f(hi):
            raise _Unresolved
        if f(lo0):
            raise _Unresolved
        return bisect_tau(f, lo0, hi, tol)

    def solve_safe(mu, hi_guess=None):
        try:
            return solve(mu, hi_guess)
        except _Unresolved:
            return None

    if warm_start:
        results, prev = [], None
        for mu in mus:
            res = solve_safe(mu, None if prev is None else prev.hi + tol)
            results.append(res)
            if res is not None:
                prev = res
    else:
        results = parallel_map(solve_safe, mus, jobs)
    points, unresolved, its = [], [], []
    for mu, res in zip(mus, results):
        if res is None:
            unresolved.append(mu)
        else:
            points.append((mu, res.mid))
            its.append(res.iterations)
    return points, unresolved, its


def trace_separatrix_monotone(system: BistableSystem, mu_values: Sequence[float],
                              tau_bracket: tuple[float, float], tol: float = 1e-3,
                              t_max: float = 500.0, warm_start: bool = True,
                              jobs: int | None = None, settings=None) -> LevelCurve:
    """Bisect the switch/no-switch classification in tau for each mu."""
    _require_monotone(system)

    def above(mu, tau):
        s = switches(system, Pulse(mu, tau), t_max, settings)
        if s is None:
            raise _Unresolved
        return s

    points, unresolved, its = _trace(mu_values, tau_bracket, tol, above, warm_start, jobs)
    return LevelCurve(math.inf, SEPARATRIX, points, tol, unresolved, its)


def trace_level_curve_monotone(system: BistableSystem, alpha: float, branch: str,
                               mu_values: Sequence[float], tau_bracket: tuple[float, float],
                               tol: float = 1e-3, eps: float = DEFAULT_EPS,
                               warm_start: bool = True, jobs: int | None = None,
                               evaluator: EigenfunctionEvaluator | None = None) -> LevelCurve:
    """Solve ``Re r = -alpha`` (lower) or ``+alpha`` (upper) in tau for each mu.

    Pulses without a resolved ``r`` sit on the non-switching side of the
    separatrix where ``r`` tends to minus infinity, so they count as below
    every level.
    """
    _require_monotone(system)
    if branch not in (LOWER, UPPER):
        raise ValueError("branch must be 'lower' or 'upper'")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if system.target.complex_dominant:
        raise ValueError("r is complex-valued for this model; use the grid method")
    ev = evaluator or EigenfunctionEvaluator.for_target(system)
    level = -alpha if branch == LOWER else alpha

    def above(mu, tau):
        s = eval_r(system, Pulse(mu, tau), eps, ev)
        return s.r is not None and s.r.real >= level

    points, unresolved, its = _trace(mu_values, tau_bracket, tol, above, warm_start, jobs)
    return LevelCurve(float(alpha), branch, points, tol, unresolved, its)


# ---------------------------------------------------------------------------
# grid contours

def _index_to_value(axis: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return np.interp(idx, np.arange(axis.size), axis)


def extract_level_contours_grid(grid: SweepGrid, alphas: Sequence[float]) -> list:
    """Marching-squares contours of ``|r|``; cells touching a non-ok node are skipped.

    Each polyline becomes its own curve, kept in path order.  For a real
    ``r`` the branch follows the sign of ``Re r`` along the polyline; complex
    fields are tagged ``modulus``.
    """
    mod = grid.abs_r()
    ok = np.isfinite(mod)
    re = grid.field(lambda s: s.r.real if s.status == "ok" else np.nan)
    im = grid.field(lambda s: s.r.imag if s.status == "ok" else 0.0)
    is_complex = bool(np.any(np.abs(im[ok]) > 0)) if ok.any() else False
    filled = np.where(ok, mod, 0.0)
    curves = []
    for alpha in alphas:
        alpha = float(alpha)
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        if not ok.any() or alpha < np.min(mod[ok]) or alpha > np.max(mod[ok]):
            curves.append(LevelCurve(alpha, MODULUS if is_complex else LOWER, [], 0.0))
            continue
        tol = 0.0
        if grid.mu_values.size > 1 and grid.tau_values.size > 1:
            tol = float(max(np.max(np.diff(grid.mu_values)), np.max(np.diff(grid.tau_values))))
        found = find_contours(filled, alpha, mask=ok)
        if not found:
            curves.append(LevelCurve(alpha, MODULUS if is_complex else LOWER, [], tol))
            continue
        for path in found:
            taus = _index_to_value(grid.tau_values, path[:, 0])
            mus = _index_to_value(grid.mu_values, path[:, 1])
            if is_complex:
                branch = MODULUS
            else:
                i = np.clip(np.rint(path[:, 0]).astype(int), 0, re.shape[0] - 1)
                j = np.clip(np.rint(path[:, 1]).astype(int), 0, re.shape[1] - 1)
                branch = LOWER if np.nanmean(re[i, j]) < 0 else UPPER
            curves.append(LevelCurve(alpha, branch, list(zip(mus.tolist(), taus.tolist())), tol))
    return curves


def extract_separatrix_grid(grid: SweepGrid) -> list:
    """Half-level contours of the switch indicator; undecided nodes are masked."""
    status = grid.field(lambda s: {"ok": 1.0, "not_in_basin": 0.0}.get(s.status, np.nan))
    ok = np.isfinite(status)
    if not (np.any(status[ok] == 1.0) and np.any(status[ok] == 0.0)):
        return [LevelCurve(math.inf, SEPARATRIX, [], 0.0)]
    tol = float(max(np.max(np.diff(grid.mu_values)), np.max(np.diff(grid.tau_values))))
    curves = []
    for path in find_contours(np.where(ok, status, 0.0), 0.5, mask=ok):
        taus = _index_to_value(grid.tau_values, path[:, 0])
        mus = _index_to_value(grid.mu_values, path[:, 1])
        curves.append(LevelCurve(math.inf, SEPARATRIX, list(zip(mus.tolist(), taus.tolist())), tol))
    return curves
