"""Vector fields, the model registry, and closed-form reference results.

Array conventions: a state is ``(n_x,)`` or a batch ``(n_x, N)``; parameters
are ``(n_p,)`` (broadcast over the batch) or ``(n_p, N)``. Batched Jacobians
carry the batch axis last, e.g. ``(n_x, n_x, N)``.
"""
from __future__ import annotations

import importlib
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, DomainError, EvaluationFailure, PoleError

__all__ = [
    "VectorField",
    "evaluate",
    "jacobian_state",
    "register",
    "get_model",
    "available_models",
    "cstr",
    "brusselator4",
    "cstr_oracle_equilibrium",
    "cstr_oracle_hopf_curve",
    "cstr_oracle_l1",
    "cstr_oracle_bt",
    "cstr_oracle_bp_theta",
    "brus_oracle_hopf",
    "brus_oracle_eigs",
]


def _fd_step(u):
    return np.maximum(1e-6, 1e-6 * np.abs(u))


@dataclass
class VectorField:
    """Autonomous right-hand side ``f(x, p)`` with optional analytic Jacobians.

    ``rhs``, ``jac_x`` and ``jac_p`` must accept batched arguments when
    ``vectorized`` is true; otherwise batches are evaluated column by column.
    """

    n_x: int
    n_p: int
    rhs: Callable
    param_names: list = field(default_factory=list)
    state_names: list = field(default_factory=list)
    jac_x: Optional[Callable] = None
    jac_p: Optional[Callable] = None
    name: str = "field"
    vectorized: bool = True

    def __post_init__(self):
        if self.n_x < 1 or self.n_p < 1:
            raise DimensionError("n_x and n_p must be positive")
        if not self.param_names:
            self.param_names = [f"p{i + 1}" for i in range(self.n_p)]
        if not self.state_names:
            self.state_names = [f"x{i + 1}" for i in range(self.n_x)]
        if len(self.param_names) != self.n_p or len(self.state_names) != self.n_x:
            raise DimensionError("name lists do not match dimensions")

    # -- shape handling -------------------------------------------------
    def _check(self, x, p):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        if x.shape[0] != self.n_x:
            raise DimensionError(f"state has leading dimension {x.shape[0]}, expected {self.n_x}")
        if p.shape[0] != self.n_p:
            raise DimensionError(f"params have leading dimension {p.shape[0]}, expected {self.n_p}")
        if x.ndim == 2 and p.ndim == 1:
            p = np.repeat(p[:, None], x.shape[1], axis=1)
        elif x.ndim == 1 and p.ndim == 2:
            x = np.repeat(x[:, None], p.shape[1], axis=1)
        return x, p

    def _columns(self, fn, x, p):
        if x.ndim == 1 or self.vectorized:
            return np.asarray(fn(x, p), dtype=float)
        cols = [np.asarray(fn(x[:, i], p[:, i]), dtype=float) for i in range(x.shape[1])]
        return np.stack(cols, axis=-1)

    # -- public evaluation ------------------------------------------------
    def f(self, x, p):
        x, p = self._check(x, p)
        out = self._columns(self.rhs, x, p)
        if out.shape != x.shape:
            raise DimensionError(f"rhs returned shape {out.shape}, expected {x.shape}")
        if not np.all(np.isfinite(out)):
            raise EvaluationFailure(f"{self.name}: non-finite right-hand side")
        return out

    def dfdx(self, x, p):
        x, p = self._check(x, p)
        if self.jac_x is not None:
            out = self._columns(self.jac_x, x, p)
        else:
            out = self._fd_jac(x, p, wrt="x")
        if not np.all(np.isfinite(out)):
            raise EvaluationFailure(f"{self.name}: non-finite state Jacobian")
        return out

    def dfdp(self, x, p):
        x, p = self._check(x, p)
        if self.jac_p is not None:
            out = self._columns(self.jac_p, x, p)
        else:
            out = self._fd_jac(x, p, wrt="p")
        if not np.all(np.isfinite(out)):
            raise EvaluationFailure(f"{self.name}: non-finite parameter Jacobian")
        return out

    def _fd_jac(self, x, p, wrt):
        base = x if wrt == "x" else p
        n = base.shape[0]
        cols = []
        for i in range(n):
            h = _fd_step(base[i])
            up, um = base.copy(), base.copy()
            up[i] = up[i] + h
            um[i] = um[i] - h
            if wrt == "x":
                d = (self._columns(self.rhs, up, p) - self._columns(self.rhs, um, p)) / (2 * h)
            else:
                d = (self._columns(self.rhs, x, up) - self._columns(self.rhs, x, um)) / (2 * h)
            cols.append(d)
        return np.stack(cols, axis=1)

    def dJv_dx(self, x, p, v):
        """Derivative of ``dfdx(x, p) @ v`` with respect to ``x``."""
        x, p = self._check(x, p)
        v = np.asarray(v, dtype=float)
        cols = []
        for l in range(self.n_x):
            h = 1e-5 * np.maximum(1.0, np.abs(x[l]))
            xp, xm = x.copy(), x.copy()
            xp[l] = xp[l] + h
            xm[l] = xm[l] - h
            cols.append(_matvec(self.dfdx(xp, p) - self.dfdx(xm, p), v) / (2 * h))
        return np.stack(cols, axis=1)

    def dJv_dp(self, x, p, v):
        """Derivative of ``dfdx(x, p) @ v`` with respect to ``p``."""
        x, p = self._check(x, p)
        v = np.asarray(v, dtype=float)
        cols = []
        for l in range(self.n_p):
            h = 1e-5 * np.maximum(1.0, np.abs(p[l]))
            pp, pm = p.copy(), p.copy()
            pp[l] = pp[l] + h
            pm[l] = pm[l] - h
            cols.append(_matvec(self.dfdx(x, pp) - self.dfdx(x, pm), v) / (2 * h))
        return np.stack(cols, axis=1)

    def param_index(self, name):
        try:
            return self.param_names.index(name)
        except ValueError:
            raise DimensionError(f"unknown parameter {name!r} for model {self.name}") from None

    def state_index(self, name):
        try:
            return self.state_names.index(name)
        except ValueError:
            raise DimensionError(f"unknown state {name!r} for model {self.name}") from None


def _matvec(M, v):
    # (n, n[, N]) times (n[, N])
    if M.ndim == 2:
        return M @ v
    if v.ndim == 1:
        return np.einsum("ijn,j->in", M, v)
    return np.einsum("ijn,jn->in", M, v)


def evaluate(field: VectorField, x, p):
    return field.f(x, p)


def jacobian_state(field: VectorField, x, p):
    return field.dfdx(x, p)


# ---------------------------------------------------------------------------
# built-in models

def _cstr_rhs(u, p):
    x, y = u[0], u[1]
    be, de, ga, si = p[0], p[1], p[2], p[3]
    r = (1 - x) * np.exp(y / (1 + be * y))
    return np.array([r - x / de, (r - y / si) / ga])


def _cstr_jac_x(u, p):
    x, y = u[0], u[1]
    be, de, ga, si = p[0], p[1], p[2], p[3]
    e = np.exp(y / (1 + be * y))
    dedy = e / (1 + be * y) ** 2
    rx = -e
    ry = (1 - x) * dedy
    return np.array([[rx - 1 / de, ry], [rx / ga, (ry - 1 / si) / ga]])


def _cstr_jac_p(u, p):
    x, y = u[0], u[1]
    be, de, ga, si = p[0], p[1], p[2], p[3]
    e = np.exp(y / (1 + be * y))
    r = (1 - x) * e
    rbe = r * (-(y ** 2) / (1 + be * y) ** 2)
    z = np.zeros_like(r)
    return np.array([
        [rbe, x / de ** 2, z, z],
        [rbe / ga, z, -(r - y / si) / ga ** 2, y / (si ** 2 * ga)],
    ])


def cstr():
    """Continuous stirred tank reactor, parameters (be, de, ga, si)."""
    return VectorField(
        n_x=2, n_p=4, rhs=_cstr_rhs, jac_x=_cstr_jac_x, jac_p=_cstr_jac_p,
        param_names=["be", "de", "ga", "si"], state_names=["x", "y"], name="cstr",
    )


def _brus_rhs(z, p):
    A, B, eps = p[0], p[1], p[2]
    x, y = z[0::2], z[1::2]
    sx, sy = x.sum(axis=0), y.sum(axis=0)
    out = np.empty_like(z)
    out[0::2] = A - (B + 1) * x + x * x * y + eps * (sx - 4 * x)
    out[1::2] = B * x - x * x * y + 10 * eps * (sy - 4 * y)
    return out


_BRUS_COUPLING = np.kron(np.ones((4, 4)) - 4 * np.eye(4), np.diag([1.0, 10.0]))


def _brus_jac_x(z, p):
    A, B, eps = p[0], p[1], p[2]
    x, y = z[0::2], z[1::2]
    batch = z.shape[1:]
    J = np.zeros((8, 8) + batch)
    for i in range(4):
        a, b = 2 * i, 2 * i + 1
        J[a, a] = -(B + 1) + 2 * x[i] * y[i]
        J[a, b] = x[i] ** 2
        J[b, a] = B - 2 * x[i] * y[i]
        J[b, b] = -x[i] ** 2
    if batch:
        J += _BRUS_COUPLING[:, :, None] * eps
    else:
        J += _BRUS_COUPLING * eps
    return J


def _brus_jac_p(z, p):
    A, B, eps = p[0], p[1], p[2]
    x, y = z[0::2], z[1::2]
    batch = z.shape[1:]
    out = np.zeros((8, 3) + batch)
    sx, sy = x.sum(axis=0), y.sum(axis=0)
    out[0::2, 0] = 1.0
    out[0::2, 1] = -x
    out[1::2, 1] = x
    out[0::2, 2] = sx - 4 * x
    out[1::2, 2] = 10 * (sy - 4 * y)
    return out


def brusselator4():
    """Four all-to-all coupled Brusselator cells, parameters (A, B, eps)."""
    names = [f"{c}{i}" for i in range(1, 5) for c in ("x", "y")]
    return VectorField(
        n_x=8, n_p=3, rhs=_brus_rhs, jac_x=_brus_jac_x, jac_p=_brus_jac_p,
        param_names=["A", "B", "eps"], state_names=names, name="brusselator4",
    )


# small test systems used by the test-suite and handy from the CLI

def harmonic():
    """x1' = w x2, x2' = -w x1 with a single frequency parameter."""
    def rhs(u, p):
        return np.array([p[0] * u[1], -p[0] * u[0]])

    def jx(u, p):
        z = np.zeros_like(u[0]) + p[0]
        return np.array([[np.zeros_like(z), z], [-z, np.zeros_like(z)]])

    def jp(u, p):
        return np.array([[u[1]], [-u[0]]])

    return VectorField(2, 1, rhs, ["w"], ["x1", "x2"], jx, jp, name="harmonic")


def hopf_normal_form():
    """Radial Hopf normal form x' = (mu - r^2) x - y, y' = (mu - r^2) y + x."""
    def rhs(u, p):
        r2 = u[0] ** 2 + u[1] ** 2
        return np.array([(p[0] - r2) * u[0] - u[1], (p[0] - r2) * u[1] + u[0]])

    def jx(u, p):
        x, y = u[0], u[1]
        r2 = x * x + y * y
        return np.array([[p[0] - r2 - 2 * x * x, -2 * x * y - 1],
                         [-2 * x * y + 1, p[0] - r2 - 2 * y * y]])

    def jp(u, p):
        return np.array([[u[0]], [u[1]]])

    return VectorField(2, 1, rhs, ["mu"], ["x", "y"], jx, jp, name="hopf_nf")


def rossler():
    def rhs(u, p):
        x, y, z = u
        a, b, c = p
        return np.array([-y - z, x + a * y, b + z * (x - c)])

    def jx(u, p):
        x, y, z = u
        a, b, c = p
        o, l = np.zeros_like(x), np.ones_like(x)
        return np.array([[o, -l, -l], [l, o + a, o], [z, o, x - c]])

    def jp(u, p):
        x, y, z = u
        o = np.zeros_like(x)
        return np.array([[o, o, o], [y, o, o], [o, o + 1, -z]])

    return VectorField(3, 3, rhs, ["a", "b", "c"], ["x", "y", "z"], jx, jp, name="rossler")


_REGISTRY = {
    "cstr": cstr,
    "brusselator4": brusselator4,
    "harmonic": harmonic,
    "hopf_nf": hopf_normal_form,
    "rossler": rossler,
}


def register(name, factory):
    """Register a zero-argument factory returning a :class:`VectorField`."""
    _REGISTRY[name] = factory


def available_models():
    return sorted(_REGISTRY)


def get_model(name):
    """Instantiate a registered model, or a plugin given as ``module:factory``."""
    if name in _REGISTRY:
        return _REGISTRY[name]()
    if ":" in name:
        mod, attr = name.split(":", 1)
        obj = getattr(importlib.import_module(mod), attr)
        fld = obj() if callable(obj) and not isinstance(obj, VectorField) else obj
        if not isinstance(fld, VectorField):
            raise DimensionError(f"plugin {name} did not produce a VectorField")
        return fld
    raise KeyError(f"unknown model {name!r}; known: {available_models()}")


# ---------------------------------------------------------------------------
# closed forms for the CSTR with be = 0

def cstr_oracle_equilibrium(x, y):
    """(de, si) making (x, y) an equilibrium when be = 0."""
    if not (0 < x < 1) or y <= 0:
        raise DomainError("need 0 < x < 1 and y > 0")
    e = math.exp(-y)
    return x * e / (1 - x), y * e / (1 - x)


def cstr_oracle_hopf_curve(s, gamma):
    """Hopf/neutral-saddle curve parameterized by the state x = s.

    Returns ``(sigma, delta, y, k)``; ``k > 0`` on genuine Hopf points.
    """
    q = s * (1 - s) - gamma
    if abs(q) < 1e-14:
        raise PoleError(f"s(1-s) = gamma at s = {s}")
    y = s * (1 - s) / q
    e = math.exp(-y)
    sigma = s * e / q
    delta = s * e / (1 - s)
    k = -(s ** 3 - s ** 2 + gamma) * math.exp(2 * y) / (s * s * gamma)
    return sigma, delta, y, k


def cstr_oracle_l1(x, gamma):
    """Closed-form first Lyapunov coefficient on the CSTR Hopf curve."""
    q = x * x * (1 - x) - gamma
    if q <= 0:
        raise DomainError(f"p(x) >= 0 at x = {x}: not a Hopf point")
    num = (2 * gamma ** 2 - x * (3 - gamma) * gamma + x ** 2 * (1 + 5 * gamma - 2 * gamma ** 2)
           - x ** 3 * (3 + 2 * gamma) + 3 * x ** 4 - x ** 5)
    return num / (4 * math.sqrt(gamma) * q ** 1.5 * (1 + (1 - x) * gamma))


def cstr_oracle_bt(gamma):
    """Positive roots of x^3 - x^2 + gamma, ascending."""
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    crit = 4.0 / 27.0
    if gamma > crit + 1e-15:
        raise DomainError(f"no Bogdanov-Takens points for gamma > 4/27 (gamma = {gamma})")
    if abs(gamma - crit) <= 1e-15:
        return 2.0 / 3.0, 2.0 / 3.0
    # trigonometric form of the three real roots
    shift = 1.0 / 3.0
    pp = -1.0 / 3.0
    qq = -2.0 / 27.0 + gamma
    m = 2 * math.sqrt(-pp / 3)
    arg = 3 * qq / (pp * m)
    arg = min(1.0, max(-1.0, arg))
    th = math.acos(arg) / 3
    roots = sorted(m * math.cos(th - 2 * math.pi * k / 3) + shift for k in range(3))
    pos = [r for r in roots if r > 0]
    return pos[0], pos[1]


def cstr_oracle_bp_theta(theta, gamma):
    """Neutral saddles where the theta-dependent family meets the Hopf curve."""
    c = math.cos(theta) / math.sin(theta)
    a = gamma + c * c
    disc = a * a - 8 * gamma ** 2 * c
    if disc < 0:
        raise DomainError("complex pair: discriminant negative")
    r = math.sqrt(disc)
    return (a - r) / (2 * gamma), (a + r) / (2 * gamma)


# ---------------------------------------------------------------------------
# closed forms for the coupled Brusselator at its symmetric equilibrium

def brus_oracle_hopf(A, B):
    """Equivariant Hopf point: (eps*, omega, k2)."""
    delta = B - 1 - A * A
    rad = 11 * A * A * (11 - 9 * delta) - 100 * delta ** 2
    if delta <= 0 or rad <= 0:
        raise DomainError("no transversal equivariant Hopf crossing for these (A, B)")
    omega = math.sqrt(rad) / 11
    k2 = 11 * A * A / (11j * omega - 11 * A * A - 10 * delta)
    return delta / 44, omega, k2


def brus_oracle_eigs(A, B, eps):
    """Eigenvalue pairs (kappa1+, kappa1-, kappa2+, kappa2-); kappa2 has multiplicity 3."""
    delta = B - 1 - A * A
    r1 = np.sqrt(complex(delta ** 2 - 4 * A * A))
    r2 = np.sqrt(complex((delta + 36 * eps) ** 2 - 4 * A * A * (1 - 36 * eps)))
    k1p, k1m = (delta + r1) / 2, (delta - r1) / 2
    k2p, k2m = (delta - 44 * eps + r2) / 2, (delta - 44 * eps - r2) / 2
    return k1p, k1m, k2p, k2m
