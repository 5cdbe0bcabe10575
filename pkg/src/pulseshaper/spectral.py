"""Equilibria, Jacobians and the dominant eigentriple.

The eigensolver is LAPACK's Hessenberg/shifted-QR driver (through scipy);
left vectors are rescaled against the right ones so that ``w_j^T v_j = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .model import ConeSpec, SystemModel

__all__ = [
    "FixedPointData",
    "FixedPointError",
    "NewtonStagnation",
    "SingularJacobian",
    "OutsideDomain",
    "EigenDecompositionError",
    "DefectiveMatrixError",
    "AmbiguousDominance",
    "fd_jacobian",
    "model_jacobian",
    "eigendecompose",
    "find_fixed_point",
    "dominant_triple",
    "fixed_point_report",
]


class FixedPointError(RuntimeError):
    pass


class NewtonStagnation(FixedPointError):
    pass


class SingularJacobian(FixedPointError):
    pass


class OutsideDomain(FixedPointError):
    pass


class EigenDecompositionError(RuntimeError):
    pass


class DefectiveMatrixError(EigenDecompositionError):
    pass


class AmbiguousDominance(RuntimeError):
    pass


def fd_jacobian(f, x, u: float = 0.0) -> np.ndarray:
    """Central differences with step ``1e-6 * (1 + |x_i|)``; ``f(x, u)``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    J = np.empty((n, n))
    for j in range(n):
        h = 1e-6 * (1.0 + abs(x[j]))
        e = np.zeros(n)
        e[j] = h
        J[:, j] = (f(x + e, u) - f(x - e, u)) / (2 * h)
    return J


def model_jacobian(m: SystemModel, x) -> np.ndarray:
    J = m.eval_jacobian(x)
    return fd_jacobian(m.eval_f, x) if J is None else J


def _sort_order(eigs: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(eigs)))) if eigs.size else 1.0
    re = np.round(eigs.real / scale, 12)
    # descending real part, then positive imaginary part first
    return np.lexsort((-eigs.imag, -re))


def eigendecompose(J) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eigenvalues sorted by descending real part, right vectors (unit norm)
    and left vectors scaled so that ``W[:, j] @ V[:, j] == 1``."""
    J = np.asarray(J, dtype=float)
    n = J.shape[0]
    if J.shape != (n, n) or not np.all(np.isfinite(J)):
        raise EigenDecompositionError("matrix must be square and finite")
    if n > 64:
        raise EigenDecompositionError("dense path limited to n <= 64")
    try:
        eigs, vl, vr = scipy.linalg.eig(J, left=True, right=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise EigenDecompositionError(str(exc)) from exc
    order = _sort_order(eigs)
    eigs, vl, vr = eigs[order], vl[:, order], vr[:, order]
    # scipy returns u with u^H J = lambda u^H; we want w^T J = lambda w^T
    W = np.conj(vl)
    V = vr / np.linalg.norm(vr, axis=0)
    normJ = max(np.linalg.norm(J, 2), np.finfo(float).tiny)
    for j in range(n):
        overlap = W[:, j] @ V[:, j]
        if abs(overlap) < 1e-10 * np.linalg.norm(W[:, j]):
            raise DefectiveMatrixError(f"eigenvalue {eigs[j]} appears defective")
        W[:, j] = W[:, j] / overlap
        res_r = np.linalg.norm(J @ V[:, j] - eigs[j] * V[:, j])
        res_l = np.linalg.norm(W[:, j] @ J - eigs[j] * W[:, j]) / np.linalg.norm(W[:, j])
        if res_r > 1e-8 * normJ or res_l > 1e-8 * normJ:
            raise DefectiveMatrixError(
                f"eigenpair residual too large for eigenvalue {eigs[j]} (defective matrix?)"
            )
    return eigs, V, W


def _is_real(z: complex) -> bool:
    return abs(z.imag) <= 1e-12 * max(1.0, abs(z))


def _oriented_dominant(eigs, V, W, cone: ConeSpec | None):
    lam = eigs[0]
    v = V[:, 0].copy()
    if _is_real(lam):
        lam = complex(lam.real, 0.0)
        v = v.real.copy()
        v /= np.linalg.norm(v)
        signs = np.ones(v.size) if cone is None else cone.as_array()
        total = float(np.sum(signs * v))
        if abs(total) > 1e-12:
            flip = total < 0
        else:
            flip = v[np.flatnonzero(np.abs(v) > 1e-12)[0]] < 0
        if flip:
            v = -v
        w = W[:, 0].real.copy()
        w /= w @ v
    else:
        k = int(np.argmax(np.abs(v)))
        v = v * (abs(v[k]) / v[k])
        v /= np.linalg.norm(v)
        w = W[:, 0] / (W[:, 0] @ v)
    return lam, v, w


@dataclass(frozen=True, eq=False)
class FixedPointData:
    """An equilibrium with its full spectral data.

    ``eigenvalues`` are sorted by descending real part; ``lambda1``, ``v1``,
    ``w1`` are the oriented dominant triple (``w1 @ v1 == 1``).
    """

    location: np.ndarray
    eigenvalues: np.ndarray
    right_vectors: np.ndarray
    left_vectors: np.ndarray
    lambda1: complex
    v1: np.ndarray
    w1: np.ndarray
    is_hyperbolic: bool
    is_stable: bool
    spectral_gap: float
    complex_dominant: bool
    residual: float = 0.0
    residual_history: tuple = ()
    dominant_index: int = 0
    cone: ConeSpec | None = field(default=None, repr=False)

    @property
    def rate(self) -> float:
        """``|Re lambda1|``, the asymptotic convergence rate."""
        return abs(self.lambda1.real)


def analyze_equilibrium(J, location, cone: ConeSpec | None = None, residual=0.0,
                        history=()) -> FixedPointData:
    eigs, V, W = eigendecompose(J)
    lam0 = eigs[0]
    complex_dom = not _is_real(lam0)
    if complex_dom:
        others = [e for e in eigs[1:] if abs(e - np.conj(lam0)) > 1e-9 * max(1.0, abs(lam0))]
    else:
        others = list(eigs[1:])
    gap = float(lam0.real - max(e.real for e in others)) if others else float("inf")
    lam, v1, w1 = _oriented_dominant(eigs, V, W, cone)
    return FixedPointData(
        location=np.asarray(location, dtype=float),
        eigenvalues=eigs,
        right_vectors=V,
        left_vectors=W,
        lambda1=lam,
        v1=v1,
        w1=w1,
        is_hyperbolic=bool(np.all(np.abs(eigs.real) > 1e-9)),
        is_stable=bool(np.all(eigs.real < 0)),
        spectral_gap=gap,
        complex_dominant=complex_dom,
        residual=float(residual),
        residual_history=tuple(history),
        cone=cone,
    )


def find_fixed_point(m: SystemModel, guess, newton_tol: float = 1e-6,
                     max_iter: int = 200) -> FixedPointData:
    """Damped Newton on ``f(x, 0) = 0`` with backtracking on ``||f||_inf``."""
    x = np.asarray(guess, dtype=float).copy()
    if not m.in_box(x):
        raise OutsideDomain("initial guess outside the domain box")
    F = m.eval_f(x)
    r = float(np.max(np.abs(F)))
    history = [r]
    best, since_best = r, 0
    for _ in range(max_iter):
        J = model_jacobian(m, x)
        try:
            if np.linalg.cond(J) > 1e15:
                raise np.linalg.LinAlgError
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            raise SingularJacobian(f"singular Jacobian at {x}") from None
        if np.linalg.norm(dx, np.inf) <= 1e-14 * (1.0 + np.linalg.norm(x, np.inf)):
            break
        lam = 1.0
        while lam > 1e-10:
            x_try = x + lam * dx
            F_try = m.eval_f(x_try)
            r_try = float(np.max(np.abs(F_try)))
            if np.isfinite(r_try) and r_try <= (1.0 - 1e-4 * lam) * r:
                break
            lam *= 0.5
        else:
            # roundoff floor: no further decrease is possible
            if r <= newton_tol:
                break
            x_try = x + lam * dx
            F_try = m.eval_f(x_try)
            r_try = float(np.max(np.abs(F_try)))
        x, F, r = x_try, F_try, r_try
        history.append(r)
        if r < best:
            best, since_best = r, 0
        else:
            since_best += 1
            if since_best >= 50:
                raise NewtonStagnation("no residual decrease over 50 iterations")
    else:
        if r > newton_tol:
            raise NewtonStagnation(f"Newton did not converge, residual {r:.3g}")
    r = float(np.max(np.abs(m.eval_f(x))))
    if not r <= newton_tol:
        raise NewtonStagnation(f"Newton stalled at residual {r:.3g} > {newton_tol:.3g}")
    if not m.in_box(x):
        raise OutsideDomain(f"fixed point {x} lies outside the domain box")
    return analyze_equilibrium(model_jacobian(m, x), x, m.cone, r, history)


def dominant_triple(fp: FixedPointData):
    """``(lambda1, v1, w1)`` of a stable equilibrium with unambiguous dominance."""
    if not fp.is_stable:
        raise ValueError("dominant triple requested for an unstable equilibrium")
    if fp.spectral_gap <= 1e-9:
        raise AmbiguousDominance(f"spectral gap {fp.spectral_gap:.3g} too small")
    return fp.lambda1, fp.v1, fp.w1


def _cplx(z) -> dict:
    return {"re": float(np.real(z)), "im": float(np.imag(z))}


def fixed_point_report(fp: FixedPointData) -> dict:
    return {
        "location": [float(v) for v in fp.location],
        "eigenvalues": [_cplx(e) for e in fp.eigenvalues],
        "lambda1": _cplx(fp.lambda1),
        "stable": fp.is_stable,
        "hyperbolic": fp.is_hyperbolic,
        "complex_dominant": fp.complex_dominant,
        "spectral_gap": fp.spectral_gap,
        "residual": fp.residual,
    }
