"""Dynamical-system abstraction, pulse inputs and the built-in model families.

Every model is ``x' = f(x, u)`` with a scalar input ``u`` that enters the
vector field additively.  Vector fields and Jacobians are compiled kernels
with signature ``kernel(x, u, p)`` where ``p`` is a flat float64 parameter
vector, so the integrators can call them without going back to Python.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping, Sequence

import numpy as np

from ._jit import njit

__all__ = [
    "ConeSpec",
    "Pulse",
    "SystemModel",
    "ModelConfigError",
    "pulse_input",
    "builtin_repressilator8",
    "builtin_toxin_antitoxin",
    "builtin_lorenz",
    "load_model",
    "serialize_model",
    "model_config",
    "FAMILIES",
]


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ConeSpec:
    """Diagonal orthant cone ``diag(signs) * R^n_{>=0}``."""

    signs: tuple[int, ...]
    input_sign: int = 1

    def __post_init__(self):
        signs = tuple(int(s) for s in self.signs)
        if not signs or any(s not in (1, -1) for s in signs):
            raise ValueError(f"cone signs must be +1/-1, got {self.signs!r}")
        if self.input_sign not in (1, -1):
            raise ValueError("input_sign must be +1 or -1")
        object.__setattr__(self, "signs", signs)

    @classmethod
    def standard(cls, n: int) -> "ConeSpec":
        return cls((1,) * n)

    @property
    def dim(self) -> int:
        return len(self.signs)

    @property
    def is_standard(self) -> bool:
        return all(s == 1 for s in self.signs)

    def as_array(self) -> np.ndarray:
        return np.array(self.signs, dtype=float)


@dataclass(frozen=True)
class Pulse:
    """Rectangular pulse ``u(t) = mu`` on ``[0, tau]`` and zero afterwards."""

    mu: float
    tau: float

    def __post_init__(self):
        mu, tau = float(self.mu), float(self.tau)
        if not (math.isfinite(mu) and math.isfinite(tau)) or mu < 0 or tau < 0:
            raise ValueError(f"pulse needs finite mu, tau >= 0, got ({self.mu}, {self.tau})")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "tau", tau)


def pulse_input(p: Pulse, t: float) -> float:
    # the end point t == tau still belongs to the pulse
    return p.mu if 0.0 <= t <= p.tau else 0.0


# ---------------------------------------------------------------------------
# kernels

@njit(cache=True)
def repressilator_rhs(x, u, p):
    n = x.shape[0]
    dx = np.empty(n)
    for i in range(n):
        prev = x[n - 1] if i == 0 else x[i - 1]
        dx[i] = p[0] / (1.0 + (prev / p[1]) ** p[2]) + p[3] - p[4] * x[i]
    dx[0] += u
    return dx


@njit(cache=True)
def repressilator_jac(x, u, p):
    n = x.shape[0]
    J = np.zeros((n, n))
    for i in range(n):
        j = n - 1 if i == 0 else i - 1
        q = (x[j] / p[1]) ** p[2]
        dq = p[2] * (x[j] / p[1]) ** (p[2] - 1.0) / p[1]
        J[i, j] = -p[0] * dq / (1.0 + q) ** 2
        J[i, i] = -p[4]
    return J


@njit(cache=True)
def toxin_antitoxin_rhs(x, u, p):
    # state (T, A, Af, Tf); p = sigma_T, K0, beta_M, beta_C, sigma_A,
    # Gamma_A, K_T, K_TT, epsilon
    T, A, Af, Tf = x[0], x[1], x[2], x[3]
    P = Af * Tf
    den = (1.0 + P / p[1]) * (1.0 + p[2] * Tf)
    quad = Af * Tf * Tf / (p[6] * p[7])
    dx = np.empty(4)
    dx[0] = p[0] / den - T / (1.0 + p[3] * Tf)
    dx[1] = p[4] / den - p[5] * A + u
    dx[2] = (A - (Af + P / p[6] + quad)) / p[8]
    dx[3] = (T - (Tf + P / p[6] + 2.0 * quad)) / p[8]
    return dx


@njit(cache=True)
def toxin_antitoxin_jac(x, u, p):
    T, A, Af, Tf = x[0], x[1], x[2], x[3]
    D1 = 1.0 + Af * Tf / p[1]
    D2 = 1.0 + p[2] * Tf
    den2 = (D1 * D2) ** 2
    # partials of 1 / (D1 * D2)
    d_af = -(Tf / p[1]) * D2 / den2
    d_tf = -((Af / p[1]) * D2 + D1 * p[2]) / den2
    kk = p[6] * p[7]
    eps = p[8]
    J = np.zeros((4, 4))
    J[0, 0] = -1.0 / (1.0 + p[3] * Tf)
    J[0, 2] = p[0] * d_af
    J[0, 3] = p[0] * d_tf + T * p[3] / (1.0 + p[3] * Tf) ** 2
    J[1, 1] = -p[5]
    J[1, 2] = p[4] * d_af
    J[1, 3] = p[4] * d_tf
    J[2, 1] = 1.0 / eps
    J[2, 2] = -(1.0 + Tf / p[6] + Tf * Tf / kk) / eps
    J[2, 3] = -(Af / p[6] + 2.0 * Af * Tf / kk) / eps
    J[3, 0] = 1.0 / eps
    J[3, 2] = -(Tf / p[6] + 2.0 * Tf * Tf / kk) / eps
    J[3, 3] = -(1.0 + Af / p[6] + 4.0 * Af * Tf / kk) / eps
    return J


@njit(cache=True)
def lorenz_rhs(x, u, p):
    dx = np.empty(3)
    dx[0] = p[0] * (x[1] - x[0]) + u
    dx[1] = x[0] * (p[1] - x[2]) - x[1] + u
    dx[2] = x[0] * x[1] - p[2] * x[2]
    return dx


@njit(cache=True)
def lorenz_jac(x, u, p):
    J = np.empty((3, 3))
    J[0, 0] = -p[0]
    J[0, 1] = p[0]
    J[0, 2] = 0.0
    J[1, 0] = p[1] - x[2]
    J[1, 1] = -1.0
    J[1, 2] = -x[0]
    J[2, 0] = x[1]
    J[2, 1] = x[0]
    J[2, 2] = -p[2]
    return J


# ---------------------------------------------------------------------------
# model object

@dataclass(frozen=True, eq=False)
class SystemModel:
    """An input-affine ODE family instance.

    ``source_guess``/``target_guess`` seed the Newton search for the two
    attractors ``x*`` (start of the switch) and ``x•`` (its goal).
    ``nonnegative_states`` marks concentration-type models whose vector field
    is only meaningful on the nonnegative orthant.
    """

    name: str
    dim: int
    params: Mapping[str, float]
    rhs: Callable
    domain_box: np.ndarray
    cone: ConeSpec
    declared_monotone: bool
    jac: Callable | None = None
    stiff: bool = False
    nonnegative_states: bool = False
    source_guess: np.ndarray | None = None
    target_guess: np.ndarray | None = None
    p: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        box = np.array(self.domain_box, dtype=float)
        if box.shape != (self.dim, 2) or not np.all(box[:, 0] < box[:, 1]):
            raise ValueError("domain_box must be (dim, 2) with lo < hi")
        box.setflags(write=False)
        if self.cone.dim != self.dim:
            raise ValueError("cone dimension does not match model dimension")
        params = MappingProxyType(dict(self.params))
        p = np.array(list(params.values()), dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "domain_box", box)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "p", p)
        for name in ("source_guess", "target_guess"):
            g = getattr(self, name)
            if g is not None:
                g = np.array(g, dtype=float)
                g.setflags(write=False)
                object.__setattr__(self, name, g)

    def eval_f(self, x, u: float = 0.0) -> np.ndarray:
        return self.rhs(np.asarray(x, dtype=float), float(u), self.p)

    def eval_jacobian(self, x) -> np.ndarray | None:
        """Analytic Jacobian of the unforced field, or None if not provided."""
        if self.jac is None:
            return None
        return self.jac(np.asarray(x, dtype=float), 0.0, self.p)

    def in_box(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.domain_box[:, 0]) and np.all(x <= self.domain_box[:, 1]))

    @property
    def sampling_box(self) -> np.ndarray:
        """Domain box restricted to where the model is physically meaningful."""
        box = self.domain_box.copy()
        if self.nonnegative_states:
            box[:, 0] = np.maximum(box[:, 0], 0.0)
        return box

    def with_cone(self, cone: ConeSpec) -> "SystemModel":
        return _rebuild(self, cone=cone)


def _rebuild(m: SystemModel, **changes) -> SystemModel:
    kw = dict(
        name=m.name, dim=m.dim, params=dict(m.params), rhs=m.rhs,
        domain_box=m.domain_box, cone=m.cone, declared_monotone=m.declared_monotone,
        jac=m.jac, stiff=m.stiff, nonnegative_states=m.nonnegative_states,
        source_guess=m.source_guess, target_guess=m.target_guess,
    )
    kw.update(changes)
    return SystemModel(**kw)


# ---------------------------------------------------------------------------
# built-in families

def _check_positive(params, names):
    for k in names:
        v = params[k]
        if not math.isfinite(v) or v <= 0:
            raise ModelConfigError(f"parameter {k!r} must be positive, got {v}")


def _repressilator_two_cycle(p1, p2, p3, p4, p5):
    """High/low values of the alternating equilibrium via the scalar two-cycle map."""
    F = lambda x: (p1 / (1.0 + (x / p2) ** p3) + p4) / p5
    hi = p1 / p5 + p4 / p5
    for _ in range(500):
        hi = F(F(hi))
    return hi, F(hi)


def _make_repressilator(params, domain=None):
    _check_positive(params, ("p1", "p2", "p3", "p5"))
    if not math.isfinite(params["p4"]) or params["p4"] < 0:
        raise ModelConfigError("parameter 'p4' must be nonnegative")
    hi, lo = _repressilator_two_cycle(*(params[k] for k in ("p1", "p2", "p3", "p4", "p5")))
    target = np.array([hi, lo] * 4)
    return SystemModel(
        name="repressilator8",
        dim=8,
        params=params,
        rhs=repressilator_rhs,
        jac=repressilator_jac,
        domain_box=domain if domain is not None else [[-10.0, 200.0]] * 8,
        cone=ConeSpec((1, -1, 1, -1, 1, -1, 1, -1)),
        declared_monotone=True,
        nonnegative_states=True,
        source_guess=np.roll(target, 1),
        target_guess=target,
    )


def _make_toxin_antitoxin(params, domain=None):
    _check_positive(params, tuple(params))
    return SystemModel(
        name="toxin_antitoxin",
        dim=4,
        params=params,
        rhs=toxin_antitoxin_rhs,
        jac=toxin_antitoxin_jac,
        domain_box=domain if domain is not None else [[-10.0, 200.0]] * 4,
        cone=ConeSpec.standard(4),
        declared_monotone=False,
        stiff=True,
        nonnegative_states=True,
        source_guess=[162.8103, 26.2221, 0.0002, 110.4375],
        target_guess=[27.1517, 80.5151, 58.4429, 0.0877],
    )


def _make_lorenz(params, domain=None):
    _check_positive(params, ("sigma", "beta"))
    rho = params["rho"]
    if not math.isfinite(rho):
        raise ModelConfigError("parameter 'rho' must be finite")
    wing = math.sqrt(params["beta"] * max(rho - 1.0, 0.0))
    return SystemModel(
        name="lorenz",
        dim=3,
        params=params,
        rhs=lorenz_rhs,
        jac=lorenz_jac,
        domain_box=domain if domain is not None else [[-50.0, 50.0]] * 3,
        cone=ConeSpec.standard(3),
        declared_monotone=False,
        source_guess=[-wing, -wing, rho - 1.0],
        target_guess=[wing, wing, rho - 1.0],
    )


# defaults keep the order of the kernels' parameter vectors
FAMILIES: dict[str, tuple[dict[str, float], Callable]] = {
    "repressilator8": (
        {"p1": 100.0, "p2": 1.0, "p3": 2.0, "p4": 1.0, "p5": 1.0},
        _make_repressilator,
    ),
    "toxin_antitoxin": (
        {
            "sigma_T": 166.28, "K0": 1.0, "beta_M": 0.16, "beta_C": 0.16,
            "sigma_A": 100.0, "Gamma_A": 0.2, "K_T": 0.3, "K_TT": 0.3,
            "epsilon": 1e-6,
        },
        _make_toxin_antitoxin,
    ),
    "lorenz": ({"sigma": 10.0, "rho": 2.0, "beta": 8.0 / 3.0}, _make_lorenz),
}


def build_model(family: str, params: Mapping[str, float] | None = None,
                domain: Sequence[Sequence[float]] | None = None) -> SystemModel:
    if family not in FAMILIES:
        raise ModelConfigError(f"unknown model family {family!r}")
    defaults, factory = FAMILIES[family]
    merged = dict(defaults)
    for k, v in (params or {}).items():
        if k not in defaults:
            raise ModelConfigError(f"unknown parameter {k!r} for model {family!r}")
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ModelConfigError(f"parameter {k!r} must be a number")
        merged[k] = float(v)
    if domain is not None:
        try:
            domain = np.array(domain, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ModelConfigError(f"bad domain: {exc}") from exc
    try:
        return factory(merged, domain)
    except ValueError as exc:
        if isinstance(exc, ModelConfigError):
            raise
        raise ModelConfigError(str(exc)) from exc


def builtin_repressilator8(**overrides) -> SystemModel:
    return build_model("repressilator8", overrides)


def builtin_toxin_antitoxin(**overrides) -> SystemModel:
    return build_model("toxin_antitoxin", overrides)


def builtin_lorenz(**overrides) -> SystemModel:
    return build_model("lorenz", overrides)


def load_model(config_text: str) -> SystemModel:
    """Build a model from a JSON config ``{"model": ..., "params": {...}, "domain": [...]}``."""
    try:
        cfg = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise ModelConfigError(f"cannot parse model config: {exc}") from exc
    if not isinstance(cfg, dict) or "model" not in cfg:
        raise ModelConfigError("model config must be an object with a 'model' key")
    extra = set(cfg) - {"model", "params", "domain"}
    if extra:
        raise ModelConfigError(f"unexpected config keys: {sorted(extra)}")
    params = cfg.get("params") or {}
    if not isinstance(params, dict):
        raise ModelConfigError("'params' must be an object")
    return build_model(cfg["model"], params, cfg.get("domain"))


def model_config(m: SystemModel) -> dict:
    return {
        "model": m.name,
        "params": dict(m.params),
        "domain": m.domain_box.tolist(),
    }


def serialize_model(m: SystemModel) -> str:
    return json.dumps(model_config(m))
