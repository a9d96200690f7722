"""Equilibria and their bifurcations: saddle-node, Hopf, degenerate Hopf."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .contin import Monitor, ZeroProblem
from .errors import DimensionError, EigenpairInvalid, NoZeroEigenvalue, NotAHopf
from .model import VectorField


# ---------------------------------------------------------------------------
# shared parameter handling

class FieldProblem(ZeroProblem):
    """Unknown vectors start with the full parameter vector ``u[:n_p]``.

    Parameters not listed in ``free`` are pinned to their initial values and
    ``state_pins`` pin selected state components (index -> value).
    """

    aux_weight = 1.0

    def __init__(self, field: VectorField, p0, free: Sequence[str], state_pins: Optional[dict] = None,
                 display: Optional[dict] = None):
        super().__init__()
        self.field = field
        p0 = np.asarray(p0, dtype=float)
        if p0.shape != (field.n_p,):
            raise DimensionError(f"expected {field.n_p} parameter values")
        self.p0 = p0
        self.free = [field.param_index(n) if isinstance(n, str) else int(n) for n in free]
        self.display = dict(display or {})
        for i in range(field.n_p):
            if i not in self.free:
                self.pin(i, p0[i])
        self.state_pins = {}
        for key, val in (state_pins or {}).items():
            idx = field.state_index(key) if isinstance(key, str) else int(key)
            self.state_pins[idx] = float(val)
            self.pin(field.n_p + idx, val)
        self.principal = self.free[0] if self.free else None

    @property
    def n_p(self):
        return self.field.n_p

    @property
    def n_x(self):
        return self.field.n_x

    def params(self, u):
        return u[: self.n_p]

    def state(self, u):
        return u[self.n_p: self.n_p + self.n_x]

    def param_weights(self):
        w = np.ones(self.n_p)
        for name, (_, scale) in self.display.items():
            w[self.field.param_index(name)] = float(scale) ** 2
        return w

    def weights(self):
        w = np.full(self.n_u, self.aux_weight)
        w[: self.n_p] = self.param_weights()
        w[self.n_p: self.n_p + self.n_x] = 1.0
        return w

    def base_columns(self, u):
        p, x = self.params(u), self.state(u)
        mon = {n: float(p[i]) for i, n in enumerate(self.field.param_names)}
        for name, (disp, scale) in self.display.items():
            mon[disp] = float(scale) * mon[name]
        mon.update({n: float(x[i]) for i, n in enumerate(self.field.state_names)})
        return mon


# ---------------------------------------------------------------------------
# equilibria

def _eigs(J):
    try:
        return np.linalg.eigvals(J)
    except np.linalg.LinAlgError:
        return None


def eig_monitor_values(J):
    """``ustab``, ``sn_test`` (det J) and ``hopf_test`` (product of pairwise eigenvalue sums)."""
    lam = _eigs(J)
    if lam is None or not np.all(np.isfinite(lam)):
        return {"ustab": float("nan"), "sn_test": float("nan"), "hopf_test": float("nan")}
    n = lam.size
    prod = 1.0 + 0j
    for i in range(n):
        for j in range(i + 1, n):
            prod *= lam[i] + lam[j]
    return {
        "ustab": float(np.count_nonzero(lam.real > 0)),
        "sn_test": float(np.linalg.det(J)),
        "hopf_test": float(prod.real),
    }


def _hopf_or_neutral(J):
    lam = np.linalg.eigvals(J)
    best, pair = math.inf, None
    for i in range(lam.size):
        for j in range(i + 1, lam.size):
            val = abs(lam[i] + lam[j])
            if val < best:
                best, pair = val, (lam[i], lam[j])
    if pair is None:
        return None
    scale = max(1.0, float(np.max(np.abs(lam))))
    return "HB" if abs(pair[0].imag) > 1e-7 * scale else "NSA"


def eig_monitors(field: VectorField, report_neutral=False):
    """Event definitions for ``ustab`` (discrete), ``sn_test`` and ``hopf_test`` (regular).

    Zeros of ``hopf_test`` at neutral saddles are suppressed unless
    ``report_neutral`` is set, in which case they are labeled NSA.
    """
    def classify_hopf(problem, pt, left, right):
        lab = _hopf_or_neutral(field.dfdx(problem.state(pt.u), problem.params(pt.u)))
        if lab == "NSA" and not report_neutral:
            return None
        return lab

    return [
        Monitor("sn_test", "SN", "regular"),
        Monitor("hopf_test", "HB", "regular", classify=classify_hopf),
        Monitor("ustab", "", "discrete"),
    ]


class EquilibriumProblem(FieldProblem):
    """``0 = f(x, p)`` over ``u = (p, x)``."""

    name = "ep"
    report_neutral = False

    @property
    def n_u(self):
        return self.n_p + self.n_x

    @property
    def n_core(self):
        return self.n_x

    def initial_u(self, x0, p0=None):
        p0 = self.p0 if p0 is None else np.asarray(p0, dtype=float)
        return np.concatenate([p0, np.asarray(x0, dtype=float)])

    def core_residual(self, u):
        return self.field.f(self.state(u), self.params(u))

    def core_jacobian(self, u):
        x, p = self.state(u), self.params(u)
        return np.hstack([self.field.dfdp(x, p), self.field.dfdx(x, p)])

    def monitors(self, u):
        mon = self.base_columns(u)
        mon.update(eig_monitor_values(self.field.dfdx(self.state(u), self.params(u))))
        return mon

    def events(self):
        return eig_monitors(self.field, self.report_neutral)


def ep_problem(field: VectorField, free_params, p0, state_pins=None, display=None) -> EquilibriumProblem:
    """Equilibrium continuation problem; rejects configurations whose deficit is not 1."""
    prob = EquilibriumProblem(field, p0, free_params, state_pins, display)
    if prob.deficit != 1:
        raise ValueError(f"equilibrium problem has deficit {prob.deficit}; need exactly 1 for continuation")
    return prob


def equilibrium_point(field: VectorField, x, p):
    """Eigen-data summary for an equilibrium."""
    J = field.dfdx(np.asarray(x, float), np.asarray(p, float))
    lam = np.linalg.eigvals(J)
    return {"x": np.asarray(x, float), "p": np.asarray(p, float), "eigenvalues": lam,
            "ustab": int(np.count_nonzero(lam.real > 0))}


# ---------------------------------------------------------------------------
# saddle-node

class SaddleNodeProblem(FieldProblem):
    """``f = 0, J v = 0, v.v = 1`` over ``u = (p, x, v)``."""

    name = "sn"

    @property
    def n_u(self):
        return self.n_p + 2 * self.n_x

    @property
    def n_core(self):
        return 2 * self.n_x + 1

    def vec(self, u):
        return u[self.n_p + self.n_x: self.n_p + 2 * self.n_x]

    def core_residual(self, u):
        x, p, v = self.state(u), self.params(u), self.vec(u)
        J = self.field.dfdx(x, p)
        return np.concatenate([self.field.f(x, p), J @ v, [v @ v - 1.0]])

    def core_jacobian(self, u):
        x, p, v = self.state(u), self.params(u), self.vec(u)
        n, m = self.n_x, self.n_p
        J = self.field.dfdx(x, p)
        A = np.zeros((2 * n + 1, m + 2 * n))
        A[:n, :m] = self.field.dfdp(x, p)
        A[:n, m:m + n] = J
        A[n:2 * n, :m] = self.field.dJv_dp(x, p, v)
        A[n:2 * n, m:m + n] = self.field.dJv_dx(x, p, v)
        A[n:2 * n, m + n:] = J
        A[2 * n, m + n:] = 2 * v
        return A

    def monitors(self, u):
        return self.base_columns(u)

    def initial_u(self, x, p, v):
        return np.concatenate([p, x, v])


def sn_problem(field: VectorField, free_params, p0, display=None) -> SaddleNodeProblem:
    return SaddleNodeProblem(field, p0, free_params, None, display)


def sn_init(field: VectorField, x, p, tol=1e-6):
    """Unit kernel eigenvector of the Jacobian at a saddle-node equilibrium.

    The vector comes from an eigensolve, never from a branch tangent.
    """
    J = field.dfdx(np.asarray(x, float), np.asarray(p, float))
    lam, V = np.linalg.eig(J)
    i = int(np.argmin(np.abs(lam)))
    if abs(lam[i]) >= tol:
        raise NoZeroEigenvalue(f"smallest eigenvalue magnitude {abs(lam[i]):.3e}")
    v = np.real(V[:, i])
    v = v / np.linalg.norm(v)
    k = int(np.argmax(np.abs(v)))
    if v[k] < 0:
        v = -v
    return v


# ---------------------------------------------------------------------------
# Hopf

@dataclass
class HopfData:
    x: np.ndarray
    p: np.ndarray
    omega: float
    v: np.ndarray
    w: np.ndarray


def hopf_eigendata(field: VectorField, x, p):
    """Critical eigen-data ``(omega, v, w)`` with ``J v = -omega w`` and ``J w = omega v``.

    The complex eigenvector is rotated so that its largest component is real
    and then scaled so that ``v`` has unit length.
    """
    x, p = np.asarray(x, float), np.asarray(p, float)
    J = field.dfdx(x, p)
    lam, V = np.linalg.eig(J)
    cand = [i for i in range(lam.size) if lam[i].imag > 1e-10 * max(1.0, abs(lam[i]))]
    if not cand:
        raise NotAHopf("no complex eigenvalue pair")
    i = min(cand, key=lambda j: abs(lam[j].real) / abs(lam[j]))
    omega = float(lam[i].imag)
    q = V[:, i]
    k = int(np.argmax(np.abs(q)))
    q = q * (abs(q[k]) / q[k])
    v, w = q.real.copy(), q.imag.copy()
    nv = np.linalg.norm(v)
    return HopfData(x, p, omega, v / nv, w / nv)


class HopfProblem(FieldProblem):
    """Hopf defining system over ``u = (p, x, k, v1, w1, v2, w2)``:

    ``f = 0``, ``J v1 = w1``, ``J v2 = w2``, ``w1 = v2``, ``k v1 + w2 = 0``,
    ``v1.v1 = 1`` and ``xi.v1 = 0`` with ``xi`` refreshed after every step.
    """

    name = "hopf"
    aux_weight = 1e-6
    _state_keys = ("xi",)

    def __init__(self, *args, seed=2024, **kw):
        super().__init__(*args, **kw)
        self._rng_seed = seed
        self._w_ref = np.random.default_rng(seed).standard_normal(self.field.n_x)
        self.xi = None

    @property
    def n_u(self):
        return self.n_p + 5 * self.n_x + 1

    @property
    def n_core(self):
        return 5 * self.n_x + 2

    def split(self, u):
        m, n = self.n_p, self.n_x
        p = u[:m]
        x = u[m:m + n]
        k = u[m + n]
        o = m + n + 1
        v1, w1, v2, w2 = (u[o + j * n: o + (j + 1) * n] for j in range(4))
        return p, x, k, v1, w1, v2, w2

    @property
    def k_index(self):
        return self.n_p + self.n_x

    def set_xi(self, v1):
        w = self._w_ref
        xi = w - (w @ v1) / (v1 @ v1) * v1
        if np.linalg.norm(xi) < 1e-3:
            self._w_ref = np.random.default_rng(self._rng_seed + 1).standard_normal(self.n_x)
            w = self._w_ref
            xi = w - (w @ v1) / (v1 @ v1) * v1
        self.xi = xi / np.linalg.norm(xi)

    def core_residual(self, u):
        p, x, k, v1, w1, v2, w2 = self.split(u)
        J = self.field.dfdx(x, p)
        return np.concatenate([
            self.field.f(x, p), J @ v1 - w1, J @ v2 - w2, w1 - v2, k * v1 + w2,
            [v1 @ v1 - 1.0, self.xi @ v1],
        ])

    def core_jacobian(self, u):
        p, x, k, v1, w1, v2, w2 = self.split(u)
        m, n = self.n_p, self.n_x
        F = self.field
        J = F.dfdx(x, p)
        I = np.eye(n)
        A = np.zeros((5 * n + 2, self.n_u))
        cx, ck = m, m + n
        cv1, cw1, cv2, cw2 = (m + n + 1 + j * n for j in range(4))
        A[:n, :m] = F.dfdp(x, p)
        A[:n, cx:cx + n] = J
        r = n
        A[r:r + n, :m] = F.dJv_dp(x, p, v1)
        A[r:r + n, cx:cx + n] = F.dJv_dx(x, p, v1)
        A[r:r + n, cv1:cv1 + n] = J
        A[r:r + n, cw1:cw1 + n] = -I
        r += n
        A[r:r + n, :m] = F.dJv_dp(x, p, v2)
        A[r:r + n, cx:cx + n] = F.dJv_dx(x, p, v2)
        A[r:r + n, cv2:cv2 + n] = J
        A[r:r + n, cw2:cw2 + n] = -I
        r += n
        A[r:r + n, cw1:cw1 + n] = I
        A[r:r + n, cv2:cv2 + n] = -I
        r += n
        A[r:r + n, ck] = v1
        A[r:r + n, cv1:cv1 + n] = k * I
        A[r:r + n, cw2:cw2 + n] = I
        r += n
        A[r, cv1:cv1 + n] = 2 * v1
        A[r + 1, cv1:cv1 + n] = self.xi
        return A

    def update(self, u, t):
        self.set_xi(self.split(u)[3])
        return u, t, True

    def l1_value(self, u):
        p, x, k = self.split(u)[:3]
        if k <= 0:
            return float("nan")
        try:
            return lyapunov_first(self.field, x, p)
        except (NotAHopf, np.linalg.LinAlgError):
            return float("nan")

    def monitors(self, u):
        mon = self.base_columns(u)
        k = float(u[self.k_index])
        mon["k"] = k
        mon["omega"] = math.sqrt(k) if k > 0 else float("nan")
        mon["l1"] = self.l1_value(u)
        return mon

    def events(self):
        return [Monitor("k", "BTP", "regular"), Monitor("l1", "DH", "regular")]

    def initial_u(self, x, p, omega, v, w):
        return hopf_init(self, x, p, omega, v, w)

    def classify(self, u):
        return hopf_classify(float(u[self.k_index]))


def hopf_problem(field: VectorField, free_params, p0, display=None, seed=2024) -> HopfProblem:
    return HopfProblem(field, p0, free_params, None, display, seed=seed)


def hopf_init(problem: HopfProblem, x, p, omega, v, w, tol=1e-6):
    """Assemble ``(p, x, omega^2, v, -omega w, -omega w, -omega^2 v)`` and set ``xi`` orthogonal to ``v``."""
    x, p, v, w = (np.asarray(a, dtype=float) for a in (x, p, v, w))
    nv = np.linalg.norm(v)
    if nv == 0:
        raise EigenpairInvalid("zero eigenvector")
    v, w = v / nv, w / nv
    J = problem.field.dfdx(x, p)
    scale = max(1.0, abs(omega))
    if (np.linalg.norm(J @ v + omega * w) > tol * scale or np.linalg.norm(J @ w - omega * v) > tol * scale):
        raise EigenpairInvalid("(v, w) do not satisfy J v = -omega w, J w = omega v")
    problem.set_xi(v)
    return np.concatenate([p, x, [omega ** 2], v, -omega * w, -omega * w, -omega ** 2 * v])


def hopf_classify(k, tol=1e-8):
    """HB for ``k > 0``, NSA for ``k < 0``, BTP when ``k`` vanishes."""
    if abs(k) <= tol:
        return "BTP"
    return "HB" if k > 0 else "NSA"


# ---------------------------------------------------------------------------
# first Lyapunov coefficient

def _dJ(field, x, p, a, h):
    return (field.dfdx(x + h * a, p) - field.dfdx(x - h * a, p)) / (2 * h)


def _d2J(field, x, p, a, b, h):
    return (field.dfdx(x + h * (a + b), p) - field.dfdx(x + h * (a - b), p)
            - field.dfdx(x - h * (a - b), p) + field.dfdx(x - h * (a + b), p)) / (4 * h * h)


def _complex_jacobian(field, x, p):
    """Return a callable evaluating the analytic Jacobian at complex states, or None."""
    if field.jac_x is None:
        return None
    try:
        probe = np.asarray(field.jac_x(x + 1e-30j * np.ones_like(x), p))
    except (TypeError, ValueError):
        return None
    if not np.iscomplexobj(probe) or probe.shape != (x.size, x.size):
        return None
    return lambda z: np.asarray(field.jac_x(z, p))


def _forms_complex_step(jac, x, eta=1e-5, h=1e-30):
    # complex step in the first direction, central difference in the second
    def dJ(a):
        return jac(x + 1j * h * a).imag / h

    def d2J(a, b):
        return (jac(x + 1j * h * a + eta * b).imag - jac(x + 1j * h * a - eta * b).imag) / (2 * eta * h)

    def B(a, b):
        return (dJ(a.real) + 1j * dJ(a.imag)) @ b

    def C(a, c):
        ar, ai = a.real, a.imag
        H = d2J(ar, ar) - d2J(ai, ai) + 1j * (d2J(ar, ai) + d2J(ai, ar))
        return H @ c

    return B, C


def _forms_from_jacobian(field, x, p, hB=1e-5, hC=1e-4):
    def B(a, b):
        return (_dJ(field, x, p, a.real, hB) + 1j * _dJ(field, x, p, a.imag, hB)) @ b

    def C(a, c):
        # C(a, a, c) for complex a
        ar, ai = a.real, a.imag
        H = _d2J(field, x, p, ar, ar, hC) - _d2J(field, x, p, ai, ai, hC) + 2j * _d2J(field, x, p, ar, ai, hC)
        return H @ c

    return B, C


def _forms_from_rhs(field, x, p, hB=1e-4, hC=1e-3):
    f = lambda z: field.f(z, p)

    def Breal(a, b):
        return (f(x + hB * (a + b)) - f(x + hB * (a - b)) - f(x - hB * (a - b)) + f(x - hB * (a + b))) / (4 * hB ** 2)

    def B(a, b):
        return (Breal(a.real, b.real) - Breal(a.imag, b.imag)
                + 1j * (Breal(a.real, b.imag) + Breal(a.imag, b.real)))

    def Creal(a, b, c):
        h = hC
        s = 0.0
        for sa in (1, -1):
            for sb in (1, -1):
                for sc in (1, -1):
                    s = s + sa * sb * sc * f(x + h * (sa * a + sb * b + sc * c))
        return s / (8 * h ** 3)

    def C(a, c):
        out = 0j
        parts = ((a.real, 1.0), (a.imag, 1j))
        for u1, c1 in parts:
            for u2, c2 in parts:
                out = out + c1 * c2 * (Creal(u1, u2, c.real) + 1j * Creal(u1, u2, c.imag))
        return out

    return B, C


def lyapunov_first(field: VectorField, x, p) -> float:
    """First Lyapunov coefficient at a Hopf point via the projection formula.

    Uses ``q`` with ``A q = i omega q``, ``p`` with ``A^T p = -i omega p``,
    ``<q, q> = <p, q> = 1``.
    """
    x, p = np.asarray(x, float), np.asarray(p, float)
    A = field.dfdx(x, p)
    lam, V = np.linalg.eig(A)
    cand = [i for i in range(lam.size) if lam[i].imag > 1e-10 * max(1.0, abs(lam[i]))]
    if not cand:
        raise NotAHopf("no complex pair: k <= 0")
    i = min(cand, key=lambda j: abs(lam[j].real))
    omega = float(lam[i].imag)
    q = V[:, i] / np.linalg.norm(V[:, i])
    lamT, VT = np.linalg.eig(A.T)
    jT = int(np.argmin(np.abs(lamT - (-1j * omega))))
    pv = VT[:, jT]
    pv = pv / np.conj(np.vdot(pv, q))
    cj = _complex_jacobian(field, x, p)
    if cj is not None:
        B, C = _forms_complex_step(cj, x)
    elif field.jac_x is not None:
        B, C = _forms_from_jacobian(field, x, p)
    else:
        B, C = _forms_from_rhs(field, x, p)
    qb = np.conj(q)
    n = x.size
    t1 = np.vdot(pv, C(q, qb))
    t2 = np.vdot(pv, B(q, np.linalg.solve(A, B(q, qb))))
    t3 = np.vdot(pv, B(qb, np.linalg.solve(2j * omega * np.eye(n) - A, B(q, q))))
    return float((t1 - 2 * t2 + t3).real / (2 * omega))


# ---------------------------------------------------------------------------
# degenerate Hopf

class DegenerateHopfProblem(HopfProblem):
    """Hopf system plus the scalar condition ``l1 = 0``."""

    name = "dh"

    @property
    def n_core(self):
        return 5 * self.n_x + 3

    def _l1(self, u):
        p, x = self.split(u)[:2]
        try:
            return lyapunov_first(self.field, x, p)
        except NotAHopf:
            return float("nan")

    def core_residual(self, u):
        return np.concatenate([super().core_residual(u), [self._l1(u)]])

    def core_jacobian(self, u):
        A = super().core_jacobian(u)
        row = np.zeros(self.n_u)
        for i in range(self.n_p + self.n_x):
            h = 1e-6 * max(1.0, abs(u[i]))
            up, um = u.copy(), u.copy()
            up[i] += h
            um[i] -= h
            row[i] = (self._l1(up) - self._l1(um)) / (2 * h)
        return np.vstack([A, row])

    def events(self):
        return [Monitor("k", "BTP", "regular")]


def dh_problem(field: VectorField, free_params, p0, display=None, seed=2024) -> DegenerateHopfProblem:
    return DegenerateHopfProblem(field, p0, free_params, None, display, seed=seed)
