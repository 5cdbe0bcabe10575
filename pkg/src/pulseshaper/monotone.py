"""Orthant orders, sampled Kamke checks and monotone-flow diagnostics.

A diagonal cone ``K = diag(sigma) R^n_{>=0}`` orders states by the sign of
``diag(sigma)(x - y)``.  The flow is monotone for that cone when, in the
flipped coordinates ``z = diag(sigma) x``, every off-diagonal Jacobian entry
and every input derivative is nonnegative.  Here those signs are sampled at
quasi-random points, which is evidence, not a proof.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .integrate import OK, IntegrationError, IntegratorSettings, advance
from .koopman import BistableSystem
from .model import ConeSpec, SystemModel
from .spectral import fd_jacobian

__all__ = [
    "OrderReport",
    "cone_compare",
    "KamkeReport",
    "kamke_samples",
    "check_kamke",
    "search_cones",
    "TransientReport",
    "verify_increasing_transient",
]

GEQ, LEQ, EQUAL, INCOMPARABLE = "geq", "leq", "equal", "incomparable"


@dataclass(frozen=True)
class OrderReport:
    relation: str
    cone: ConeSpec
    margin: float


def cone_compare(x, y, cone: ConeSpec, order_tol: float = 0.0) -> OrderReport:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.shape != (cone.dim,):
        raise ValueError("x, y and the cone must share one dimension")
    d = cone.as_array() * (x - y)
    margin = float(np.min(d)) if d.size else 0.0
    if np.all(np.abs(d) <= order_tol):
        rel = EQUAL
    elif np.all(d >= -order_tol):
        rel = GEQ
    elif np.all(d <= order_tol):
        rel = LEQ
    else:
        rel = INCOMPARABLE
    return OrderReport(rel, cone, margin)


@dataclass(frozen=True)
class KamkeReport:
    passed: bool
    worst_violation: float
    witness_x: np.ndarray
    witness_u: float
    samples_checked: int
    cone: ConeSpec
    kamke_tol: float

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "worst_violation": float(self.worst_violation),
            "witness": {"x": [float(v) for v in self.witness_x], "u": float(self.witness_u)},
            "samples": int(self.samples_checked),
            "cone": {"signs": list(self.cone.signs), "input_sign": self.cone.input_sign},
            "kamke_tol": float(self.kamke_tol),
            "note": "sampled sign check at quasi-random points; a pass is evidence, not a proof",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def kamke_samples(m: SystemModel, n_samples: int, u_max: float, box=None, seed: int = 0):
    """Halton points over ``box x [0, u_max]``; returns ``(X, U)``."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    if u_max < 0:
        raise ValueError("u_max must be nonnegative")
    box = m.sampling_box if box is None else np.asarray(box, dtype=float)
    pts = qmc.Halton(d=m.dim + 1, scramble=True, seed=seed).random(n_samples)
    X = box[:, 0] + pts[:, :m.dim] * (box[:, 1] - box[:, 0])
    U = pts[:, m.dim] * u_max
    return X, U


def _derivatives(m: SystemModel, X, U):
    """State Jacobians ``(N, n, n)`` and input derivatives ``(N, n)``."""
    N, n = X.shape
    J = np.empty((N, n, n))
    B = np.empty((N, n))
    for k in range(N):
        x, u = X[k], float(U[k])
        if m.jac is not None:
            J[k] = m.jac(x, u, m.p)
        else:
            J[k] = fd_jacobian(m.eval_f, x, u)
        du = 1e-6 * (1.0 + abs(u))
        B[k] = (m.eval_f(x, u + du) - m.eval_f(x, u - du)) / (2 * du)
    if not (np.all(np.isfinite(J)) and np.all(np.isfinite(B))):
        bad = int(np.flatnonzero(~(np.isfinite(J).all(axis=(1, 2)) & np.isfinite(B).all(axis=1)))[0])
        raise FloatingPointError(f"non-finite derivative at x={X[bad]}, u={U[bad]}")
    return J, B


class _Extremes:
    """Entrywise minima/maxima over samples, enough to score any signature."""

    def __init__(self, J, B):
        N, n, _ = J.shape
        flatJ = J.reshape(N, n * n)
        self.n = n
        self.jmin_idx = flatJ.argmin(axis=0).reshape(n, n)
        self.jmax_idx = flatJ.argmax(axis=0).reshape(n, n)
        self.jmin = flatJ.min(axis=0).reshape(n, n)
        self.jmax = flatJ.max(axis=0).reshape(n, n)
        self.bmin_idx, self.bmax_idx = B.argmin(axis=0), B.argmax(axis=0)
        self.bmin, self.bmax = B.min(axis=0), B.max(axis=0)

    def score(self, cone: ConeSpec):
        """Most negative transformed entry and the sample index attaining it."""
        s = cone.as_array()
        worst, where = 0.0, 0
        for i in range(self.n):
            for j in range(self.n):
                if i == j:
                    continue
                if s[i] * s[j] > 0:
                    val, idx = self.jmin[i, j], self.jmin_idx[i, j]
                else:
                    val, idx = -self.jmax[i, j], self.jmax_idx[i, j]
                if val < worst:
                    worst, where = val, idx
            if s[i] * cone.input_sign > 0:
                val, idx = self.bmin[i], self.bmin_idx[i]
            else:
                val, idx = -self.bmax[i], self.bmax_idx[i]
            if val < worst:
                worst, where = val, idx
        return 0.0 - worst, int(where)


def _report(ext, cone, X, U, kamke_tol):
    viol, k = ext.score(cone)
    return KamkeReport(viol <= kamke_tol, viol, X[k].copy(), float(U[k]), len(X), cone, kamke_tol)


def check_kamke(m: SystemModel, n_samples: int = 10_000, kamke_tol: float = 1e-9,
                u_max: float = 20.0, cone: ConeSpec | None = None, box=None,
                seed: int = 0) -> KamkeReport:
    """Sample the Kamke sign conditions for ``cone`` (default: the model's)."""
    cone = m.cone if cone is None else cone
    if cone.dim != m.dim:
        raise ValueError("cone dimension does not match the model")
    X, U = kamke_samples(m, n_samples, u_max, box, seed)
    J, B = _derivatives(m, X, U)
    return _report(_Extremes(J, B), cone, X, U, kamke_tol)


def search_cones(m: SystemModel, n_samples: int = 10_000, kamke_tol: float = 1e-9,
                 u_max: float = 20.0, box=None, seed: int = 0, max_dim: int = 8):
    """Score all ``2^n`` signatures (input sign +1) on one sample set.

    Returns ``(passing, reports)`` where ``reports`` covers every signature.
    """
    if m.dim > max_dim:
        raise ValueError(f"exhaustive cone search limited to n <= {max_dim}")
    X, U = kamke_samples(m, n_samples, u_max, box, seed)
    ext = _Extremes(*_derivatives(m, X, U))
    reports = [
        _report(ext, ConeSpec(tuple(sig)), X, U, kamke_tol)
        for sig in itertools.product((1, -1), repeat=m.dim)
    ]
    return [r for r in reports if r.passed], reports


@dataclass(frozen=True)
class TransientReport:
    passed: bool
    worst_margin: float
    times: np.ndarray
    states: np.ndarray


def verify_increasing_transient(system: BistableSystem, mu: float, times, order_tol=None,
                                settings: IntegratorSettings | None = None) -> TransientReport:
    """Check that ``phi(t, x*, mu)`` climbs in the cone order under constant input.

    ``order_tol`` defaults to ``1e-8 * (1 + |x|)`` per comparison.
    """
    m = system.model
    if not m.declared_monotone:
        raise ValueError(f"model {m.name!r} is not declared monotone")
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValueError("times must be an ascending list of nonnegative values")
    settings = settings or IntegratorSettings(rtol=1e-10, atol=1e-12)
    origin = system.source.location
    y = np.zeros(m.dim)
    t, h = 0.0, None
    states = []
    for tk in times:
        if tk > t:
            seg = advance(m, y, mu, t, tk, settings, origin=origin, h=h)
            if seg.status != OK:
                raise IntegrationError(f"integration failed with status {seg.status}",
                                       seg.t, seg.y + origin)
            y, h, t = seg.y, seg.h, tk
        states.append(y + origin)
    states = np.array(states)
    worst = np.inf
    passed = True
    for a, b in zip(states[:-1], states[1:]):
        tol = 1e-8 * (1.0 + np.linalg.norm(b)) if order_tol is None else order_tol
        rep = cone_compare(b, a, m.cone, tol)
        worst = min(worst, rep.margin)
        if rep.relation not in (GEQ, EQUAL):
            passed = False
    return TransientReport(passed, float(worst), times, states)
