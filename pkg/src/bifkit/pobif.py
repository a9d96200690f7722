"""Periodic orbits by collocation, their stability, and their bifurcations.

The unknown vector of every problem here is ``u = (p, T, X, ...)`` with the
full parameter vector first, then the period and the base values of the
orbit (base-point major, ``n_base * n_x`` entries). Defining systems for
saddle-node, period-doubling and torus bifurcations append variational
functions on the same mesh and a few vectors and scalars.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np
import scipy.optimize as sopt
import scipy.sparse as sp

from . import coll
from .coll import Collocation, Mesh, make_mesh
from .contin import Monitor, newton_correct
from .eqbif import FieldProblem, HopfData, hopf_eigendata
from .errors import BifkitError, DimensionError, DomainError, NoConvergence, NotAHopf, RankDeficient
from .model import VectorField

log = logging.getLogger(__name__)


class DegenerateOrbit(BifkitError):
    """The orbit collapsed onto an equilibrium."""


class MeshLimit(BifkitError):
    """The error tolerance needs more mesh intervals than allowed."""


# ---------------------------------------------------------------------------
# solutions

@dataclass
class POSolution:
    """Discretized periodic orbit: base values ``X`` of shape ``(n_base, n_x)``."""

    mesh: Mesh
    X: np.ndarray
    T: float
    p: np.ndarray
    field: Optional[VectorField] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        self.T = float(self.T)
        if self.X.shape[0] != self.mesh.n_base:
            raise DimensionError(f"expected {self.mesh.n_base} base points, got {self.X.shape[0]}")

    @property
    def n_x(self):
        return self.X.shape[1]

    def __call__(self, t):
        """State at normalized times ``t`` (taken modulo 1)."""
        return coll.evaluate(self.mesh, self.X, t)

    def at_time(self, t):
        return self(np.asarray(t, dtype=float) / self.T)

    def to_dict(self):
        return {"mesh": self.mesh.to_dict(), "X": self.X.tolist(), "T": self.T, "p": self.p.tolist()}

    @classmethod
    def from_dict(cls, d, field=None):
        return cls(Mesh.from_dict(d["mesh"]), np.asarray(d["X"]), d["T"], np.asarray(d["p"]), field)


def sample_orbit(fn, mesh: Mesh, T, p, field=None) -> POSolution:
    """Solution object from a callable ``fn(t)`` of physical time returning states."""
    t = mesh.base_times * T
    X = np.array([np.asarray(fn(ti), dtype=float) for ti in t])
    return POSolution(mesh, X, T, p, field)


def amplitude(sol: POSolution, coord_index: int = 0, factor: int = 16) -> float:
    """Max minus min of one coordinate over an oversampled grid."""
    v = coll.oversampled(sol.mesh, sol.X, factor)[:, coord_index]
    return float(np.max(v) - np.min(v))


def _amplitudes(mesh, X, factor=16):
    v = coll.oversampled(mesh, X, factor)
    return np.max(v, axis=0) - np.min(v, axis=0)


def estimate_error(sol: POSolution) -> float:
    return coll.estimate_error(sol.mesh, sol.X)


def adapt_mesh(sol: POSolution, tol: float = 1e-4, L_min: int = 5, L_max: int = 400) -> Mesh:
    return coll.adapt_mesh(sol.mesh, sol.X, tol, L_min, L_max)


# ---------------------------------------------------------------------------
# Floquet analysis

@dataclass
class FloquetData:
    monodromy: np.ndarray
    multipliers: np.ndarray
    trivial: int
    ust: int
    log_scale: float = 0.0
    log_abs: np.ndarray = dc_field(default_factory=lambda: np.zeros(0))


def _monodromy(field, mesh, X, p, T):
    C = Collocation(mesh, X.shape[1])
    M, _ = C.transfer_matrices(field, X, p, T)
    P = np.eye(X.shape[1])
    log_scale = 0.0
    for Mi in M:
        P = Mi @ P
        s = float(np.max(np.abs(P)))
        if s > 1e50 or s < 1e-50:
            P = P / s
            log_scale += math.log(s)
    return P, log_scale


def floquet(sol: POSolution, field: Optional[VectorField] = None, ust_tol: float = 0.0) -> FloquetData:
    """Monodromy matrix and multipliers from the discretized variational problem.

    The product of per-interval transfer matrices is rescaled when it grows
    or shrinks too much; ``log_scale`` records the factor so that the true
    monodromy is ``exp(log_scale) * monodromy``. Otherwise the trivial
    multiplier is taken along ``f(x(0))`` and listed first, which keeps it
    accurate when a second multiplier is close to 1.
    """
    field = field or sol.field
    if field is None:
        raise ValueError("a vector field is required")
    P, log_scale = _monodromy(field, sol.mesh, sol.X, sol.p, sol.T)
    f0 = np.asarray(field.f(sol.X[0], sol.p), dtype=float)
    deflate = log_scale == 0.0 and np.linalg.norm(f0) > 1e-8 * max(1.0, float(np.abs(sol.X).max()))
    if deflate:
        # f(x(0)) spans the trivial direction; rotate it to the first basis vector
        Q, _ = np.linalg.qr(np.column_stack([f0, np.eye(f0.size)]))
        B = Q.T @ P @ Q
        mu = np.concatenate([[B[0, 0]], np.linalg.eigvals(B[1:, 1:])]).astype(complex)
    else:
        mu = np.linalg.eigvals(P)
    with np.errstate(divide="ignore"):
        log_abs = np.log(np.abs(mu)) + log_scale
    with np.errstate(over="ignore"):
        mult = mu * math.exp(min(log_scale, 700.0)) if log_scale <= 700 else mu * np.inf
    if deflate:
        trivial = 0
    elif log_scale == 0.0:
        trivial = int(np.argmin(np.abs(mu - 1.0)))
    else:
        dist = np.abs(log_abs) + np.abs(np.angle(mu))
        trivial = int(np.argmin(dist))
    ust = int(sum(1 for i in range(mu.size) if i != trivial and log_abs[i] > ust_tol))
    mono = P * math.exp(log_scale) if abs(log_scale) < 700 else P
    return FloquetData(mono, mult, trivial, ust, log_scale if abs(log_scale) >= 700 else 0.0, log_abs)


def variational_solution(field, mesh, X, p, T, v):
    """Base values of the discretized variational solution started at ``v``."""
    n = X.shape[1]
    C = Collocation(mesh, n)
    _, Z = C.transfer_matrices(field, X, p, T)
    m = mesh.n_deg
    Y = np.empty((mesh.n_base, n))
    Y[0] = v
    y = np.asarray(v, dtype=float)
    for i in range(mesh.L):
        rest = (Z[i] @ y).reshape(m, n)
        Y[i * m + 1: (i + 1) * m + 1] = rest
        y = rest[-1]
    return Y


# ---------------------------------------------------------------------------
# homoclinic diagnostics

def slowpoint_monitors(sol: POSolution, field: Optional[VectorField] = None):
    """Determinant and trace of the Jacobian at the base point where ``|f|`` is smallest."""
    field = field or sol.field
    F = field.f(sol.X.T, sol.p)
    k = int(np.argmin(np.sum(F * F, axis=0)))
    J = field.dfdx(sol.X[k], sol.p)
    return float(np.linalg.det(J)), float(np.trace(J))


@dataclass
class ScalingFit:
    """Outcome of :func:`period_scaling_fit`.

    ``coefficient`` is ``A`` in ``T = c + A d**-0.5`` (power mode) or ``k``
    in ``T = c - k log d`` (log mode), with ``d = |sigma - sigma_star|``.
    ``exponent`` is the best free exponent ``e`` in ``T = c + A d**e``.
    """

    mode: str
    coefficient: float
    exponent: float
    sigma_star: float
    residual_power: float
    residual_log: float

    @property
    def lambda_u(self):
        """Unstable eigenvalue estimate of the saddle (log mode)."""
        return 1.0 / self.coefficient if self.mode == "log" and self.coefficient else float("nan")


def _lin_fit(g, s, T, star):
    d = g(np.maximum(np.abs(s - star), 1e-300))
    A = np.vstack([np.ones_like(d), d]).T
    coef, *_ = np.linalg.lstsq(A, T, rcond=None)
    return coef, float(np.sqrt(np.mean((A @ coef / T - 1.0) ** 2)))


def period_scaling_fit(sigma, T=None, sigma_star: Optional[float] = None, min_points: int = 5,
                       noise: float = 1e-9) -> ScalingFit:
    """Decide between square-root and logarithmic growth of the period.

    ``sigma`` may be a branch (columns ``po.period`` and its principal
    parameter); otherwise pass parameter values and periods. Points whose
    parameter is within ``noise`` (or three times the parameter spread over
    the top quarter of periods, if larger) of the largest-period point are
    dropped as unresolved. With ``sigma_star`` omitted the limit is fitted separately
    for each model. Residuals are RMS relative errors of the period.
    """
    if T is None:
        br = sigma
        T = br.column("po.period")
        sigma = br.column(br.meta.get("principal"))
    s = np.asarray(sigma, dtype=float)
    T = np.asarray(T, dtype=float)
    ok = np.isfinite(s) & np.isfinite(T)
    s, T = s[ok], T[ok]
    i_end = int(np.argmax(T))
    s_end = s[i_end]
    # parameter jitter along the long-period tail sets the resolution floor
    tail = s[T >= 0.75 * T[i_end]]
    floor = max(noise * max(1.0, abs(s_end)), 3.0 * float(np.ptp(tail)) if tail.size > 1 else 0.0)
    keep = np.abs(s - s_end) > floor
    s, T = s[keep], T[keep]
    if s.size < min_points:
        raise ValueError(f"need at least {min_points} resolved points, got {s.size}")
    side = 1.0 if np.median(s) >= s_end else -1.0
    span = float(np.ptp(s)) or 1.0

    def power(D):
        return D ** -0.5

    def logm(D):
        return -np.log(D)

    def best_star(g):
        def obj(z):
            return _lin_fit(g, s, T, s_end - side * span * math.exp(z))[1]
        zs = np.linspace(-35.0, 2.0, 371)
        z0 = zs[int(np.argmin([obj(z) for z in zs]))]
        res = sopt.minimize_scalar(obj, bounds=(z0 - 0.1, z0 + 0.1), method="bounded", options={"xatol": 1e-9})
        z = res.x if res.fun <= obj(z0) else z0
        return s_end - side * span * math.exp(z)

    star_p = float(sigma_star) if sigma_star is not None else best_star(power)
    star_l = float(sigma_star) if sigma_star is not None else best_star(logm)
    (_, A), rp = _lin_fit(power, s, T, star_p)
    (_, k), rl = _lin_fit(logm, s, T, star_l)

    def free_exp(e):
        return _lin_fit(lambda D: D ** e, s, T, star_p)[1]

    e = float(sopt.minimize_scalar(free_exp, bounds=(-2.0, -0.01), method="bounded").x)
    if rp <= rl:
        return ScalingFit("power", float(A), e, float(star_p), rp, rl)
    return ScalingFit("log", float(k), e, float(star_l), rp, rl)


def insert_dwell(sol: POSolution, T_new: float, mesh: Optional[Mesh] = None) -> POSolution:
    """Longer-period guess: the orbit waits at its slow point for ``T_new - T`` time units."""
    field = sol.field
    if T_new <= sol.T:
        raise ValueError("new period must exceed the current one")
    F = field.f(sol.X.T, sol.p) if field is not None else np.gradient(sol.X, axis=0).T
    k = int(np.argmin(np.sum(F * F, axis=0)))
    t_slow = sol.mesh.base_times[k] * sol.T
    extra = T_new - sol.T
    if mesh is None:
        # keep the old mesh on the excursion and add a graded mesh over the dwell
        old = sol.mesh.tau * sol.T
        pre = old[old < t_slow]
        post = old[old > t_slow] + extra
        n_dwell = 20
        grade = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, n_dwell + 1))
        dwell = t_slow + extra * grade
        tau = np.unique(np.concatenate([pre, dwell, post]) / T_new)
        tau = tau[np.concatenate([[True], np.diff(tau) > 1e-12])]
        tau[0], tau[-1] = 0.0, 1.0
        mesh = Mesh(tau, sol.mesh.n_deg)

    def old_time(t):
        if t <= t_slow:
            return t
        if t <= t_slow + extra:
            return t_slow
        return t - extra

    tt = mesh.base_times * T_new
    X = coll.evaluate(sol.mesh, sol.X, np.array([old_time(t) for t in tt]) / sol.T)
    X[-1] = X[0]
    return POSolution(mesh, X, T_new, sol.p.copy(), field)


# ---------------------------------------------------------------------------
# problems

class PeriodicOrbitProblem(FieldProblem):
    """Collocation equations, periodicity and an integral phase condition.

    ``u = (p, T, X)``. The phase condition is orthogonality of ``X - Xref``
    to the derivative of a reference orbit, which is reset to the current
    orbit after every accepted step. With ``adapt`` the mesh is
    redistributed to keep the error estimate below ``err_tol``.
    """

    name = "po"
    n_fun = 1
    aux_weight = 1e-2

    def __init__(self, field: VectorField, mesh: Mesh, X_ref, p0, free: Sequence[str], T_fixed=None,
                 display=None, amp_index: int = 0, adapt: bool = True, err_tol: float = 1e-4,
                 L_range=(10, 400), stability: bool = False, slowpoint: bool = False,
                 ncs_threshold: float = -0.05, fold_label: str = "SN", amp_min: float = 1e-10,
                 corrector_tol: float = 1e-8, hopf_amp: Optional[float] = None):
        super().__init__(field, p0, free, None, display)
        self.mesh = mesh
        self.Xref = np.array(X_ref, dtype=float)
        if self.Xref.shape != (mesh.n_base, field.n_x):
            raise DimensionError("reference orbit does not match the mesh")
        self.T_fixed = T_fixed
        if T_fixed is not None:
            self.pin(self.n_p, float(T_fixed))
        self.amp_index = int(amp_index)
        self.adapt = bool(adapt)
        self.err_tol = float(err_tol)
        self.L_range = tuple(int(v) for v in L_range)
        self.stability = bool(stability)
        self.slowpoint = bool(slowpoint)
        self.ncs_threshold = float(ncs_threshold)
        self.fold_label = fold_label
        self.amp_min = float(amp_min)
        if hopf_amp is None:
            hopf_amp = 1e-2 * max(1.0, float(np.max(np.abs(self.Xref))))
        self.hopf_amp = float(hopf_amp)
        self.fold_min = 1e-8
        self.corrector_tol = float(corrector_tol)
        self.hint = None
        self.column_hooks = {}
        self.extra_events = []
        self._coll = None
        self._phi = None

    # -- layout ---------------------------------------------------------
    @property
    def coll(self) -> Collocation:
        if self._coll is None or self._coll.mesh is not self.mesh:
            self._coll = Collocation(self.mesh, self.n_x)
            self._phi = None
        return self._coll

    @property
    def phi(self):
        c = self.coll
        if self._phi is None:
            self._phi = c.phase_row(self.Xref)
        return self._phi

    @property
    def N(self):
        return self.mesh.n_base * self.n_x

    @property
    def i_T(self):
        return self.n_p

    @property
    def x_off(self):
        return self.n_p + 1

    @property
    def n_tail(self):
        return 0

    @property
    def n_u(self):
        return self.n_p + 1 + self.n_fun * self.N + self.n_tail

    @property
    def n_po_rows(self):
        return self.mesh.n_coll * self.n_x + self.n_x + 1

    @property
    def n_core(self):
        return self.n_po_rows

    def unpack(self, u):
        p = u[: self.n_p]
        T = float(u[self.i_T])
        o = self.x_off
        funs = [u[o + k * self.N: o + (k + 1) * self.N].reshape(self.mesh.n_base, self.n_x)
                for k in range(self.n_fun)]
        tail = u[o + self.n_fun * self.N:]
        return p, T, funs, tail

    def pack(self, p, T, funs, tail=()):
        return np.concatenate([np.asarray(p, float), [float(T)]] + [np.asarray(f, float).ravel() for f in funs]
                              + [np.asarray(tail, float).ravel()])

    def solution(self, u) -> POSolution:
        p, T, funs, _ = self.unpack(u)
        return POSolution(self.mesh, funs[0].copy(), T, p.copy(), self.field)

    def initial_u(self, sol: POSolution):
        if sol.mesh != self.mesh:
            raise DimensionError("solution mesh differs from the problem mesh")
        return self.pack(sol.p, sol.T, [sol.X])

    # -- residual -------------------------------------------------------
    def _po_residual(self, p, T, X):
        C = self.coll
        return np.concatenate([C.residual(self.field, X, p, T), X[0] - X[-1],
                               [float(self.phi @ (X - self.Xref).ravel())]])

    def _po_jacobian(self, p, T, X):
        """Rows of the orbit equations over columns ``(p, T, X)``."""
        C = self.coll
        n, N = self.n_x, self.N
        Jx = C.dX(self.field, X, p, T)
        Jp = sp.csr_matrix(C.dp(self.field, X, p, T))
        JT = sp.csr_matrix(C.dT(self.field, X, p)[:, None])
        per = sp.hstack([sp.identity(n), sp.csr_matrix((n, N - 2 * n)), -sp.identity(n)])
        top = sp.hstack([Jp, JT, Jx])
        mid = sp.hstack([sp.csr_matrix((n, self.n_p + 1)), per])
        bot = sp.hstack([sp.csr_matrix((1, self.n_p + 1)), sp.csr_matrix(self.phi[None, :])])
        return sp.vstack([top, mid, bot], format="csr")

    def core_residual(self, u):
        p, T, funs, _ = self.unpack(u)
        return self._po_residual(p, T, funs[0])

    def core_jacobian(self, u):
        p, T, funs, _ = self.unpack(u)
        return self._po_jacobian(p, T, funs[0]).tocsc()

    # -- continuation hooks ---------------------------------------------
    def weights(self):
        w = np.empty(self.n_u)
        w[: self.n_p] = self.param_weights()
        w[self.i_T] = 1.0
        o = self.x_off
        w[o: o + self.N] = 1.0 / self.mesh.n_base
        w[o + self.N:] = self.aux_weight / self.mesh.n_base
        if self.n_tail:
            w[-self.n_tail:] = self.aux_weight
        return w

    def param_columns(self, u):
        p = u[: self.n_p]
        mon = {n: float(p[i]) for i, n in enumerate(self.field.param_names)}
        for name, (disp, scale) in self.display.items():
            mon[disp] = float(scale) * mon[name]
        return mon

    def monitors(self, u):
        p, T, funs, _ = self.unpack(u)
        X = funs[0]
        mon = self.param_columns(u)
        mon["po.period"] = T
        amps = _amplitudes(self.mesh, X)
        mon["amplitude"] = float(amps[self.amp_index])
        mon["max_amplitude"] = float(np.max(amps))
        mon["L"] = float(self.mesh.L)
        mon["err"] = coll.estimate_error(self.mesh, X)
        if self.stability:
            fl = floquet(POSolution(self.mesh, X, T, p), self.field)
            mon["UST"] = float(fl.ust)
        if self.slowpoint:
            d, tr = slowpoint_monitors(POSolution(self.mesh, X, T, p), self.field)
            mon["det"], mon["tr"] = d, tr
        if self.column_hooks:
            sol = POSolution(self.mesh, X, T, p, self.field)
            for name, fn in self.column_hooks.items():
                mon[name] = float(fn(sol))
        return mon

    def events(self):
        ev = []
        if self.stability:
            ev.append(Monitor("UST", "UST", "discrete"))
        if self.slowpoint:
            ev.append(Monitor("tr", "NSA", "regular"))
            ev.append(Monitor("det", "NCS", "threshold", (self.ncs_threshold,)))
        return ev + list(self.extra_events)

    def check_terminal(self, u, mon):
        if mon.get("max_amplitude", 1.0) < self.amp_min:
            return "MX"
        return None

    def classify_fold(self, pt, left, right):
        # a fold on an orbit of vanishing size is the Hopf point closing the branch
        if pt.monitors.get("max_amplitude", np.inf) < self.hopf_amp:
            return "EP"
        i = self.principal
        excursion = max(abs(left.u[i] - pt.u[i]), abs(right.u[i] - pt.u[i]))
        if excursion < self.fold_min:
            return None  # turning of size comparable to discretization noise
        return self.fold_label

    def check_start(self, u):
        X = self.unpack(u)[2][0]
        if float(np.max(_amplitudes(self.mesh, X))) < self.amp_min:
            raise DegenerateOrbit("initial orbit has collapsed onto an equilibrium")

    def direction_hint(self, u):
        if self.hint is not None and self.hint.size == self.n_u:
            return self.hint
        return None

    def update(self, u, t):
        p, T, funs, tail = self.unpack(u)
        self.Xref = funs[0].copy()
        self._phi = None
        if not self.adapt:
            return u, t, True
        L_min, L_max = self.L_range
        new = coll.adapt_mesh(self.mesh, funs[0], self.err_tol, L_min, L_max)
        if new is self.mesh:
            return u, t, True
        if new.L >= L_max and coll.estimate_error(self.mesh, funs[0]) > self.err_tol * 2 ** (self.mesh.n_deg + 1):
            raise MeshLimit(f"error tolerance needs more than {L_max} intervals")
        saved = (self.mesh, self.Xref.copy())
        u_old, t_old = u, t
        u, t = self.remesh(u, t, new)
        W = self.weights()
        c = W * t
        try:
            u, _ = newton_correct(self, u, c, float(c @ u), self.corrector_tol, 20)
        except (NoConvergence, RankDeficient):
            # keep the old discretization for this step
            self.mesh, self.Xref = saved[0], funs[0].copy()
            self._coll = None
            self._phi = None
            return u_old, t_old, True
        self.Xref = self.unpack(u)[2][0].copy()
        self._phi = None
        return u, t, True

    def remesh(self, u, t, new: Mesh):
        """Interpolate ``u`` and ``t`` onto mesh ``new`` and switch to it."""
        old = self.mesh
        p, T, funs, tail = self.unpack(u)
        tp, tT, tfuns, ttail = self.unpack(t)
        u2 = self.pack(p, T, [coll.interpolate(old, F, new) for F in funs], tail)
        t2 = self.pack(tp, tT, [coll.interpolate(old, F, new) for F in tfuns], ttail)
        self.Xref = coll.interpolate(old, self.Xref, new)
        self.mesh = new
        self._coll = None
        self._phi = None
        return u2, t2

    def get_state(self):
        return {"mesh": self.mesh.to_dict(), "Xref": self.Xref.copy()}

    def set_state(self, state):
        self.mesh = Mesh.from_dict(state["mesh"])
        self.Xref = np.array(state["Xref"], dtype=float)
        self._coll = None
        self._phi = None


def po_problem(field: VectorField, mesh: Mesh, reference, free_params, p0=None, **kw) -> PeriodicOrbitProblem:
    """Periodic-orbit problem; ``reference`` is a :class:`POSolution` (or base values)."""
    Xref = reference.X if isinstance(reference, POSolution) else reference
    if p0 is None:
        if not isinstance(reference, POSolution):
            raise ValueError("parameters required")
        p0 = reference.p
    return PeriodicOrbitProblem(field, mesh, Xref, p0, free_params, **kw)


def fixed_period_problem(field: VectorField, mesh: Mesh, T_fixed: float, reference, free_params, p0=None,
                         **kw) -> PeriodicOrbitProblem:
    """Orbits of fixed period ``T_fixed`` with two free parameters; slow-point monitors on."""
    if T_fixed <= 0:
        raise ValueError("period must be positive")
    kw.setdefault("slowpoint", True)
    kw.setdefault("fold_label", "FP")
    # a large-period orbit that shrinks has reached a Bogdanov-Takens point
    kw.setdefault("amp_min", 1e-6)
    kw.setdefault("hopf_amp", 0.0)
    return po_problem(field, mesh, reference, free_params, p0, T_fixed=T_fixed, **kw)


def po_from_hopf(field: VectorField, hopf, r: Optional[float] = None, mesh: Optional[Mesh] = None,
                 p=None):
    """Small circular orbit ``x* + r (v cos 2 pi t - w sin 2 pi t)`` at a Hopf point.

    ``hopf`` is a :class:`HopfData` or a state vector (then ``p`` is needed).
    Returns ``(solution, T0)`` with ``T0 = 2 pi / omega``.
    """
    if not isinstance(hopf, HopfData):
        hopf = hopf_eigendata(field, hopf, p)
    if hopf.omega <= 0:
        raise NotAHopf("no positive frequency")
    x = np.asarray(hopf.x, dtype=float)
    if r is None:
        r = 1e-3 * max(1.0, float(np.linalg.norm(x)))
    mesh = mesh or make_mesh(10, 4)
    t = mesh.base_times
    X = x[None, :] + r * (np.outer(np.cos(2 * np.pi * t), hopf.v) - np.outer(np.sin(2 * np.pi * t), hopf.w))
    X[-1] = X[0]
    T0 = 2 * np.pi / hopf.omega
    return POSolution(mesh, X, T0, np.asarray(hopf.p, dtype=float), field), T0


def starter_hint(problem: PeriodicOrbitProblem, sol: POSolution):
    """Initial direction of growing amplitude for a branch started at a Hopf point."""
    d = np.zeros(problem.n_u)
    o = problem.x_off
    d[o: o + problem.N] = (sol.X - sol.X.mean(axis=0)).ravel()
    return d


def hopf_po_problem(field, hopf, free_params, r=None, mesh=None, p=None, **kw):
    """Problem, initial vector and starter solution for a branch born at a Hopf point."""
    sol, _ = po_from_hopf(field, hopf, r, mesh, p)
    prob = po_problem(field, sol.mesh, sol, free_params, **kw)
    prob.hint = starter_hint(prob, sol)
    return prob, prob.initial_u(sol), sol


# ---------------------------------------------------------------------------
# bifurcations of periodic orbits

class _VariationalProblem(PeriodicOrbitProblem):
    """Orbit equations plus ``n_fun - 1`` variational functions and a tail of vectors/scalars."""

    adapt_default = False

    def _var_rows(self, p, T, X, Y):
        """Residual and Jacobian columns ``(p, T, X, Y)`` of ``y' - T f_x(x) y``."""
        C = self.coll
        res = C.linear_residual(self.field, X, p, T, Y)
        xc, _ = C.values(X)
        yc, _ = C.values(Y)
        L, m, n = xc.shape
        xs, ys = xc.reshape(-1, n).T, yc.reshape(-1, n).T
        Fx = self.field.dfdx(xs, p)
        h = self.mesh.h
        G = self.field.dJv_dx(xs, p, ys)  # (n, n, N)
        Gv = np.transpose(G, (2, 0, 1)).reshape(L, m, n, n)
        vals = (-(h * T)[:, None, None, None, None] * C.Wm[None, :, :, None, None] * Gv[:, :, None, :, :]).ravel()
        dX = sp.csr_matrix((vals, (C.rows, C.cols)), shape=(C.n_rows, C.n_cols))
        dY = sp.csr_matrix((C.block_values(Fx, T), (C.rows, C.cols)), shape=(C.n_rows, C.n_cols))
        Jy = np.einsum("abN,bN->aN", Fx, ys)
        dT = (-h[:, None, None] * Jy.T.reshape(L, m, n)).ravel()
        Gp = self.field.dJv_dp(xs, p, ys)  # (n, n_p, N)
        dp = (-(h * T)[:, None, None, None] * np.transpose(Gp, (2, 0, 1)).reshape(L, m, n, -1)).reshape(L * m * n, -1)
        return res, dp, dT, dX, dY

    def _row(self, pieces, n_rows):
        """Assemble a sparse block row from ``{column block: matrix}``."""
        sizes = self._col_sizes()
        blocks = []
        for key, size in sizes:
            M = pieces.get(key)
            blocks.append(sp.csr_matrix((n_rows, size)) if M is None else sp.csr_matrix(M))
        return sp.hstack(blocks, format="csr")

    def _col_sizes(self):
        out = [("p", self.n_p), ("T", 1)]
        for k in range(self.n_fun):
            out.append((f"F{k}", self.N))
        out.append(("tail", self.n_tail))
        return [(k, s) for k, s in out if s > 0]

    def _x0_cols(self, A):
        """Columns over ``X`` touching only ``X[0]``."""
        A = np.atleast_2d(A)
        return sp.hstack([sp.csr_matrix(A), sp.csr_matrix((A.shape[0], self.N - self.n_x))])

    def _xend_cols(self, A):
        A = np.atleast_2d(A)
        return sp.hstack([sp.csr_matrix((A.shape[0], self.N - self.n_x)), sp.csr_matrix(A)])

    def monitors(self, u):
        mon = super().monitors(u)
        mon.update(self.extra_columns(u))
        return mon

    def extra_columns(self, u):
        return {}

    def events(self):
        return []


class POSaddleNodeProblem(_VariationalProblem):
    """Saddle-node of periodic orbits: ``u = (p, T, X, Y, b, v)``."""

    name = "po_sn"
    n_fun = 2

    @property
    def n_tail(self):
        return 1 + self.n_x

    @property
    def n_core(self):
        return self.n_po_rows + self.mesh.n_coll * self.n_x + 1 + 2 * self.n_x + 1

    def core_residual(self, u):
        p, T, (X, Y), tail = self.unpack(u)
        b, v = tail[0], tail[1:]
        f0 = self.field.f(X[0], p)
        res = [self._po_residual(p, T, X), self.coll.linear_residual(self.field, X, p, T, Y),
               [f0 @ v], Y[0] - v, Y[-1] - v - b * f0, [v @ v - 1.0]]
        return np.concatenate(res)

    def core_jacobian(self, u):
        p, T, (X, Y), tail = self.unpack(u)
        b, v = tail[0], tail[1:]
        n = self.n_x
        po = self._po_jacobian(p, T, X)
        po = sp.hstack([po, sp.csr_matrix((po.shape[0], self.N + self.n_tail))])
        _, dp, dT, dX, dY = self._var_rows(p, T, X, Y)
        var = self._row({"p": dp, "T": dT[:, None], "F0": dX, "F1": dY}, dX.shape[0])
        f0 = self.field.f(X[0], p)
        fx = self.field.dfdx(X[0], p)
        fp = self.field.dfdp(X[0], p)
        tail_cols = np.zeros((1, self.n_tail))
        tail_cols[0, 1:] = f0
        r5 = self._row({"p": (v @ fp)[None, :], "F0": self._x0_cols(v @ fx), "tail": tail_cols}, 1)
        t6 = np.zeros((n, self.n_tail))
        t6[:, 1:] = -np.eye(n)
        r6 = self._row({"F1": self._x0_cols(np.eye(n)), "tail": t6}, n)
        t7 = np.zeros((n, self.n_tail))
        t7[:, 0] = -f0
        t7[:, 1:] = -np.eye(n)
        r7 = self._row({"p": -b * fp, "F0": self._x0_cols(-b * fx), "F1": self._xend_cols(np.eye(n)),
                        "tail": t7}, n)
        t8 = np.zeros((1, self.n_tail))
        t8[0, 1:] = 2 * v
        r8 = self._row({"tail": t8}, 1)
        return sp.vstack([po, var, r5, r6, r7, r8], format="csc")

    def extra_columns(self, u):
        return {"b": float(self.unpack(u)[3][0])}


class POPeriodDoublingProblem(_VariationalProblem):
    """Period doubling: ``u = (p, T, X, Y, v)`` with ``Y(1) + v = 0``."""

    name = "po_pd"
    n_fun = 2

    @property
    def n_tail(self):
        return self.n_x

    @property
    def n_core(self):
        return self.n_po_rows + self.mesh.n_coll * self.n_x + 2 * self.n_x + 1

    def core_residual(self, u):
        p, T, (X, Y), v = self.unpack(u)
        return np.concatenate([self._po_residual(p, T, X), self.coll.linear_residual(self.field, X, p, T, Y),
                               Y[0] - v, Y[-1] + v, [v @ v - 1.0]])

    def core_jacobian(self, u):
        p, T, (X, Y), v = self.unpack(u)
        n = self.n_x
        po = self._po_jacobian(p, T, X)
        po = sp.hstack([po, sp.csr_matrix((po.shape[0], self.N + self.n_tail))])
        _, dp, dT, dX, dY = self._var_rows(p, T, X, Y)
        var = self._row({"p": dp, "T": dT[:, None], "F0": dX, "F1": dY}, dX.shape[0])
        r6 = self._row({"F1": self._x0_cols(np.eye(n)), "tail": -np.eye(n)}, n)
        r7 = self._row({"F1": self._xend_cols(np.eye(n)), "tail": np.eye(n)}, n)
        r8 = self._row({"tail": 2 * v[None, :]}, 1)
        return sp.vstack([po, var, r6, r7, r8], format="csc")


class POTorusProblem(_VariationalProblem):
    """Torus (Neimark-Sacker): ``u = (p, T, X, Y1, Y2, v1, v2, a, b)``."""

    name = "po_tr"
    n_fun = 3

    @property
    def n_tail(self):
        return 2 * self.n_x + 2

    @property
    def n_core(self):
        return self.n_po_rows + 2 * self.mesh.n_coll * self.n_x + 4 * self.n_x + 3

    def _split_tail(self, tail):
        n = self.n_x
        return tail[:n], tail[n: 2 * n], tail[2 * n], tail[2 * n + 1]

    def core_residual(self, u):
        p, T, (X, Y1, Y2), tail = self.unpack(u)
        v1, v2, a, b = self._split_tail(tail)
        C = self.coll
        return np.concatenate([
            self._po_residual(p, T, X),
            C.linear_residual(self.field, X, p, T, Y1), C.linear_residual(self.field, X, p, T, Y2),
            Y1[0] - v1, Y2[0] - v2, Y1[-1] - a * v1 + b * v2, Y2[-1] - a * v2 - b * v1,
            [v1 @ v1 + v2 @ v2 - 1.0, v1 @ v2, a * a + b * b - 1.0],
        ])

    def core_jacobian(self, u):
        p, T, (X, Y1, Y2), tail = self.unpack(u)
        v1, v2, a, b = self._split_tail(tail)
        n = self.n_x
        I = np.eye(n)
        po = self._po_jacobian(p, T, X)
        po = sp.hstack([po, sp.csr_matrix((po.shape[0], 2 * self.N + self.n_tail))])
        _, dp1, dT1, dX1, dY1 = self._var_rows(p, T, X, Y1)
        _, dp2, dT2, dX2, dY2 = self._var_rows(p, T, X, Y2)
        var1 = self._row({"p": dp1, "T": dT1[:, None], "F0": dX1, "F1": dY1}, dX1.shape[0])
        var2 = self._row({"p": dp2, "T": dT2[:, None], "F0": dX2, "F2": dY2}, dX2.shape[0])

        def tail_block(rows, v1c=None, v2c=None, ac=None, bc=None):
            M = np.zeros((rows, self.n_tail))
            if v1c is not None:
                M[:, :n] = v1c
            if v2c is not None:
                M[:, n: 2 * n] = v2c
            if ac is not None:
                M[:, 2 * n] = ac
            if bc is not None:
                M[:, 2 * n + 1] = bc
            return M

        r1 = self._row({"F1": self._x0_cols(I), "tail": tail_block(n, v1c=-I)}, n)
        r2 = self._row({"F2": self._x0_cols(I), "tail": tail_block(n, v2c=-I)}, n)
        r3 = self._row({"F1": self._xend_cols(I), "tail": tail_block(n, -a * I, b * I, -v1, v2)}, n)
        r4 = self._row({"F2": self._xend_cols(I), "tail": tail_block(n, -b * I, -a * I, -v2, -v1)}, n)
        r5 = self._row({"tail": tail_block(1, 2 * v1[None, :], 2 * v2[None, :])}, 1)
        r6 = self._row({"tail": tail_block(1, v2[None, :], v1[None, :])}, 1)
        r7 = self._row({"tail": tail_block(1, ac=np.array([2 * a]), bc=np.array([2 * b]))}, 1)
        return sp.vstack([po, var1, var2, r1, r2, r3, r4, r5, r6, r7], format="csc")

    def extra_columns(self, u):
        _, _, _, tail = self.unpack(u)
        _, _, a, b = self._split_tail(tail)
        return {"a": float(a), "b": float(b), "arg": float(math.atan2(b, a))}


def _var_kwargs(kw):
    kw.setdefault("adapt", False)
    # folds of a bifurcation curve are plain turning points
    kw.setdefault("fold_label", "FP")
    kw.setdefault("hopf_amp", 0.0)
    return kw


def po_sn_problem(field, mesh, reference, free_params, p0=None, **kw) -> POSaddleNodeProblem:
    Xref = reference.X if isinstance(reference, POSolution) else reference
    p0 = reference.p if p0 is None else p0
    return POSaddleNodeProblem(field, mesh, Xref, p0, free_params, **_var_kwargs(kw))


def po_pd_problem(field, mesh, reference, free_params, p0=None, **kw) -> POPeriodDoublingProblem:
    Xref = reference.X if isinstance(reference, POSolution) else reference
    p0 = reference.p if p0 is None else p0
    return POPeriodDoublingProblem(field, mesh, Xref, p0, free_params, **_var_kwargs(kw))


def po_tr_problem(field, mesh, reference, free_params, p0=None, **kw) -> POTorusProblem:
    Xref = reference.X if isinstance(reference, POSolution) else reference
    p0 = reference.p if p0 is None else p0
    return POTorusProblem(field, mesh, Xref, p0, free_params, **_var_kwargs(kw))


def po_sn_init(problem: POSaddleNodeProblem, sol: POSolution):
    """Initial vector at an (approximate) fold of periodic orbits."""
    f = problem.field
    M, _ = _monodromy(f, sol.mesh, sol.X, sol.p, sol.T)
    f0 = f.f(sol.X[0], sol.p)
    n = sol.n_x
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = M - np.eye(n)
    A[:n, n] = -f0
    A[n, :n] = f0
    _, _, Vt = np.linalg.svd(A)
    z = Vt[-1]
    v = z[:n] - (z[:n] @ f0) / (f0 @ f0) * f0
    v = v / np.linalg.norm(v)
    Y = variational_solution(f, sol.mesh, sol.X, sol.p, sol.T, v)
    b = float(f0 @ (Y[-1] - v) / (f0 @ f0))
    return problem.pack(sol.p, sol.T, [sol.X, Y], np.concatenate([[b], v]))


def po_pd_init(problem: POPeriodDoublingProblem, sol: POSolution):
    f = problem.field
    M, _ = _monodromy(f, sol.mesh, sol.X, sol.p, sol.T)
    lam, V = np.linalg.eig(M)
    i = int(np.argmin(np.abs(lam + 1.0)))
    v = np.real(V[:, i])
    v = v / np.linalg.norm(v)
    Y = variational_solution(f, sol.mesh, sol.X, sol.p, sol.T, v)
    return problem.pack(sol.p, sol.T, [sol.X, Y], v)


def po_tr_init(problem: POTorusProblem, sol: POSolution):
    f = problem.field
    M, _ = _monodromy(f, sol.mesh, sol.X, sol.p, sol.T)
    lam, V = np.linalg.eig(M)
    cand = [i for i in range(lam.size) if lam[i].imag > 1e-10]
    if not cand:
        raise DomainError("no complex multiplier pair")
    i = min(cand, key=lambda j: abs(abs(lam[j]) - 1.0))
    q = V[:, i]
    # rotate so that real and imaginary parts are orthogonal
    a1, a2 = q.real, q.imag
    phi = 0.5 * math.atan2(2 * (a1 @ a2), (a1 @ a1) - (a2 @ a2))
    q = q * np.exp(-1j * phi)
    q = q / np.linalg.norm(q)
    v1, v2 = q.real.copy(), q.imag.copy()
    mu = lam[i] / abs(lam[i])
    Y1 = variational_solution(f, sol.mesh, sol.X, sol.p, sol.T, v1)
    Y2 = variational_solution(f, sol.mesh, sol.X, sol.p, sol.T, v2)
    return problem.pack(sol.p, sol.T, [sol.X, Y1, Y2], np.concatenate([v1, v2, [mu.real, mu.imag]]))
