"""Pseudo-arclength continuation with event detection and location.

A :class:`ZeroProblem` exposes residual and Jacobian over a flat unknown
vector. :func:`continue_branch` covers the one-dimensional solution manifold
through a starting point in both directions, locates sign changes of monitor
functions and returns a :class:`Branch`.
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np
import scipy.optimize as sopt
import scipy.sparse as sp

from .errors import (
    BracketLost,
    EvaluationFailure,
    NoConvergence,
    NullspaceDimensionError,
    RankDeficient,
)
from .linalg import Factorized, hstack, left_nullspace_dense, orthonormal_columns, procrustes_align, to_dense, vstack

log = logging.getLogger(__name__)

EVENT_LABELS = ("EP", "HB", "SN", "BP", "FP", "MX", "UZ", "DH", "BTP", "NSA", "NCS", "UST")


# ---------------------------------------------------------------------------
# problems

class ZeroProblem:
    """Base class for continuation problems.

    Subclasses implement ``n_u``, ``core_residual`` and ``core_jacobian``.
    Pins ``u[i] = value`` are appended as extra residual rows.
    """

    name = "zero"
    fold_label = "FP"
    principal: Optional[int] = None
    _state_keys: tuple = ()

    def __init__(self):
        self.pins: list = []

    # sizes
    @property
    def n_u(self) -> int:
        raise NotImplementedError

    @property
    def n_core(self) -> int:
        raise NotImplementedError

    @property
    def n_r(self) -> int:
        return self.n_core + len(self.pins)

    @property
    def deficit(self) -> int:
        return self.n_u - self.n_r

    def pin(self, index, value):
        self.pins.append((int(index), float(value)))

    # evaluation
    def core_residual(self, u):
        raise NotImplementedError

    def core_jacobian(self, u):
        raise NotImplementedError

    def residual(self, u):
        r = np.asarray(self.core_residual(u), dtype=float)
        if self.pins:
            r = np.concatenate([r, [u[i] - v for i, v in self.pins]])
        return r

    def jacobian(self, u):
        J = self.core_jacobian(u)
        if not self.pins:
            return J
        rows = np.zeros((len(self.pins), self.n_u))
        for k, (i, _) in enumerate(self.pins):
            rows[k, i] = 1.0
        return vstack([J, sp.csr_matrix(rows) if sp.issparse(J) else rows])

    # hooks with harmless defaults
    def weights(self):
        return np.ones(self.n_u)

    def monitors(self, u) -> dict:
        return {}

    def events(self) -> list:
        return []

    def update(self, u, t):
        return u, t, False

    def direction_hint(self, u):
        return None

    def check_terminal(self, u, mon):
        return None

    def check_start(self, u):
        """Raise if ``u`` is not an admissible starting point."""

    def classify_fold(self, pt, left, right):
        """Label for a located fold; ``EP`` ends the sweep there."""
        return self.fold_label

    def get_state(self):
        return {k: copy.deepcopy(getattr(self, k)) for k in self._state_keys}

    def set_state(self, state):
        for k, v in state.items():
            setattr(self, k, copy.deepcopy(v))


class FunctionProblem(ZeroProblem):
    """Problem defined by plain callables; the Jacobian defaults to central differences."""

    def __init__(self, fn: Callable, n_u: int, jac: Optional[Callable] = None,
                 names: Optional[Sequence[str]] = None, principal: int = 0, n_r: Optional[int] = None):
        super().__init__()
        self.fn = fn
        self.jac = jac
        self._n_u = int(n_u)
        self._n_core = int(n_r) if n_r is not None else self._n_u - 1
        self.names = list(names) if names else [f"u{i}" for i in range(self._n_u)]
        self.principal = principal

    @property
    def n_u(self):
        return self._n_u

    @property
    def n_core(self):
        return self._n_core

    def core_residual(self, u):
        return np.atleast_1d(np.asarray(self.fn(u), dtype=float))

    def core_jacobian(self, u):
        if self.jac is not None:
            return np.atleast_2d(np.asarray(self.jac(u), dtype=float))
        return fd_jacobian(self.core_residual, u)

    def monitors(self, u):
        return {n: float(u[i]) for i, n in enumerate(self.names)}


def fd_jacobian(fn, u, rel=1e-7):
    u = np.asarray(u, dtype=float)
    f0 = fn(u)
    J = np.empty((f0.size, u.size))
    for i in range(u.size):
        h = rel * max(1.0, abs(u[i]))
        up, um = u.copy(), u.copy()
        up[i] += h
        um[i] -= h
        J[:, i] = (fn(up) - fn(um)) / (2 * h)
    return J


# ---------------------------------------------------------------------------
# monitors, points, branches

@dataclass
class Monitor:
    """Event definition over a monitor column.

    ``kind`` is ``regular`` (sign change), ``discrete`` (integer change),
    ``uz`` (crossing of any of ``values``) or ``threshold`` (crossing of
    ``values[0]``). ``fn(problem, u)`` adds a new column; when omitted the
    column must be produced by the problem's ``monitors``. ``classify`` may
    rename or suppress an event: it receives the problem, the located point
    and the bracketing points and returns a label, a list of labels or None.
    """

    name: str
    label: str
    kind: str = "regular"
    values: tuple = ()
    fn: Optional[Callable] = None
    classify: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("regular", "discrete", "uz", "threshold"):
            raise ValueError(f"unknown monitor kind {self.kind!r}")
        self.values = tuple(float(v) for v in self.values)


@dataclass
class ContinuationSettings:
    h0: float = 0.05
    h_min: float = 1e-6
    h_max: float = 0.5
    tol: float = 1e-8
    max_iter: int = 10
    max_steps: Any = 200
    bounds: dict = field(default_factory=dict)
    event_tol: float = 1e-10
    discrete_tol: float = 1e-7
    max_angle: float = 10.0
    label_every: int = 10
    h_grow: float = 1.3
    fast_iter: int = 3
    bp: bool = True
    fp: bool = True
    close_loops: bool = True

    def __post_init__(self):
        if not (0 < self.h_min <= self.h0 <= self.h_max):
            raise ValueError("need 0 < h_min <= h0 <= h_max")
        if isinstance(self.max_steps, (int, np.integer)):
            self.max_steps = (int(self.max_steps), int(self.max_steps))
        else:
            self.max_steps = tuple(int(v) for v in self.max_steps)
        self.bounds = {k: (None if v[0] is None else float(v[0]), None if v[1] is None else float(v[1]))
                       for k, v in self.bounds.items()}


@dataclass
class Point:
    u: np.ndarray
    t: np.ndarray
    s: float
    h: float
    monitors: dict
    types: list = field(default_factory=list)
    label: Optional[int] = None
    sweep: int = 0
    state: Any = None
    info: dict = field(default_factory=dict)
    labeled: bool = False


@dataclass
class Branch:
    points: list = field(default_factory=list)
    problem: str = ""
    meta: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def events(self):
        return [(ty, p) for p in self.points for ty in p.types]

    def labeled(self):
        return [p for p in self.points if p.label is not None]

    def find(self, ref):
        """Look up a point by integer label, ``TYPE`` (first) or ``TYPE:n`` (n-th, 1-based)."""
        if isinstance(ref, (int, np.integer)) or (isinstance(ref, str) and ref.isdigit()):
            for p in self.points:
                if p.label == int(ref):
                    return p
            raise KeyError(f"no label {ref}")
        ty, _, n = str(ref).partition(":")
        n = int(n) if n else 1
        hits = [p for p in self.points if ty in p.types]
        if len(hits) < n:
            raise KeyError(f"no event {ref}")
        return hits[n - 1]

    def column(self, name, labeled_only=False):
        pts = self.labeled() if labeled_only else self.points
        return np.array([p.monitors.get(name, np.nan) for p in pts], dtype=float)


# ---------------------------------------------------------------------------
# corrector and tangent

def _wdot(W, a, b):
    return float(np.dot(W * a, b))


def newton_correct(problem: ZeroProblem, u0, c=None, c0=None, tol=1e-8, max_iter=10):
    """Newton iteration on ``problem`` optionally bordered by ``c @ u = c0``.

    Returns ``(u, iterations)``.
    """
    u = np.array(u0, dtype=float)
    nrm0 = None
    for it in range(max_iter + 1):
        try:
            r = problem.residual(u)
        except EvaluationFailure as exc:
            raise NoConvergence(str(exc), it) from None
        if not np.all(np.isfinite(r)):
            raise NoConvergence("non-finite residual", it)
        rc = 0.0 if c is None else float(c @ u - c0)
        nrm = float(np.max(np.abs(r))) if r.size else 0.0
        if nrm <= tol and abs(rc) <= tol * (1 + abs(c0 if c0 is not None else 0.0)):
            return u, it
        if nrm0 is None:
            nrm0 = nrm
        elif nrm > 1e4 * max(nrm0, tol):
            raise NoConvergence("diverging", it, nrm)
        if it == max_iter:
            raise NoConvergence(f"no convergence in {max_iter} iterations", it, nrm)
        try:
            J = problem.jacobian(u)
            if c is not None:
                J = vstack([J, c[None, :]])
                r = np.concatenate([r, [rc]])
            du = Factorized(J).solve(-r)
        except (RankDeficient, EvaluationFailure) as exc:
            raise NoConvergence(str(exc), it, nrm) from None
        if not np.all(np.isfinite(du)):
            raise NoConvergence("non-finite Newton step", it, nrm)
        u = u + du
    raise NoConvergence("unreachable", max_iter)


def _tangent(problem, u, c):
    """Solve ``[J; c^T] t = e_last``; return W-normalized t and det data of the bordered matrix."""
    J = problem.jacobian(u)
    A = vstack([J, c[None, :]])
    F = Factorized(A)
    rhs = np.zeros(A.shape[0])
    rhs[-1] = 1.0
    t = F.solve(rhs)
    if not np.all(np.isfinite(t)):
        raise RankDeficient("tangent solve failed")
    W = problem.weights()
    t = t / math.sqrt(_wdot(W, t, t))
    sign, logabs = F.sign_logdet()
    return t, sign, logabs


def _seed_vector(n, seed=12345):
    return np.random.default_rng(seed).standard_normal(n)


def tangent_vector(problem: ZeroProblem, u, t_prev=None, hint=None):
    """Unit tangent (weighted norm) to the solution manifold at ``u``.

    Orientation follows ``t_prev`` when given, else ``hint``.
    """
    W = problem.weights()
    if t_prev is not None:
        t, _, _ = _tangent(problem, u, W * t_prev)
        return t
    t, _, _ = _initial_tangent(problem, u, hint)
    return t


def _initial_tangent(problem, u, hint):
    W = problem.weights()
    t = None
    if hint is not None:
        try:
            t, sign, logabs = _tangent(problem, u, W * hint)
        except RankDeficient:
            t = None
    if t is None:
        t, sign, logabs = _tangent(problem, u, _seed_vector(problem.n_u))
    if hint is not None and _wdot(W, t, hint) < 0:
        t, sign = -t, -sign
    return t, sign, logabs


def branch_point_test(problem: ZeroProblem, u, t):
    """Determinant of the bordered matrix ``[J(u); t^T]``."""
    A = vstack([problem.jacobian(u), np.asarray(t)[None, :]])
    try:
        sign, logabs = Factorized(A).sign_logdet()
    except RankDeficient:
        return 0.0
    return sign * math.exp(min(logabs, 700.0))


def switch_branch(problem: ZeroProblem, u, t_in, gap=1e-3):
    """Direction of the second branch through a simple branch point.

    The 2-dimensional kernel of the Jacobian is taken from its SVD and the
    incoming tangent is projected out.
    """
    J = to_dense(problem.jacobian(u))
    n_r, n_u = J.shape
    if n_u != n_r + 1:
        raise NullspaceDimensionError("branch switching needs deficit 1")
    _, s, Vt = np.linalg.svd(J)
    scale = s[-2] if n_r >= 2 else 1.0
    if s[-1] > gap * scale:
        raise NullspaceDimensionError("kernel is one-dimensional here: not a branch point")
    if n_r >= 3 and s[-2] <= gap * s[-3]:
        raise NullspaceDimensionError("kernel dimension exceeds two")
    K = np.stack([Vt[-1], Vt[-2]], axis=1)
    W = problem.weights()
    a = K.T @ (W * t_in)
    coef = np.array([-a[1], a[0]])
    d = K @ coef
    d = d - _wdot(W, d, t_in) / _wdot(W, t_in, t_in) * t_in
    nd = math.sqrt(_wdot(W, d, d))
    if nd < 1e-12:
        raise NullspaceDimensionError("incoming tangent spans the kernel")
    return d / nd


# ---------------------------------------------------------------------------
# redundant constraints

class Regularized(ZeroProblem):
    """``F(u) + S w = 0`` where ``F = [base residual; g(u)]`` and the columns
    of ``S`` span the left nullspace of ``dF/du`` at the last accepted point."""

    def __init__(self, base: ZeroProblem, g: Callable, dg: Callable, m: int, slack_tol=1e-6):
        super().__init__()
        self.base = base
        self.g = g
        self.dg = dg
        self.m = int(m)
        self.S = None
        self.slack_tol = slack_tol
        self.name = base.name
        self.fold_label = base.fold_label
        self.principal = base.principal

    @property
    def n_u(self):
        return self.base.n_u + self.m

    @property
    def n_core(self):
        return self.base.n_r + self.m

    def split(self, u):
        return u[: -self.m], u[-self.m:]

    def _F(self, ub):
        return np.concatenate([self.base.residual(ub), np.atleast_1d(self.g(ub))])

    def _dF(self, ub):
        J = self.base.jacobian(ub)
        G = self.dg(ub)
        return vstack([J, G])

    def _ensure_S(self, ub):
        if self.S is None:
            self.S = self.initial_basis(ub)

    def initial_basis(self, ub):
        M = self._dF(ub)
        if M.shape[1] <= 600:
            return left_nullspace_dense(M, self.m)
        rng = np.random.default_rng(7)
        S = orthonormal_columns(rng.standard_normal((M.shape[0], self.m)))
        for _ in range(3):
            S = self._refine(M, S, None)
        return S

    def _refine(self, M, S, t):
        A = hstack([M, S])
        if t is None:
            c = _seed_vector(A.shape[1], 3)
        else:
            c = t
        t_aug, _, _ = _tangent_matrix(A, c)
        B = vstack([A, t_aug[None, :]])
        F = Factorized(B)
        n_u = M.shape[1]
        Y = np.empty((M.shape[0], self.m))
        for j in range(self.m):
            rhs = np.zeros(B.shape[0])
            rhs[n_u + j] = 1.0
            z = F.solve(rhs, trans=True)
            Y[:, j] = z[:-1]
        S_new = orthonormal_columns(Y)
        return procrustes_align(S_new, S)

    def core_residual(self, u):
        ub, w = self.split(u)
        self._ensure_S(ub)
        return self._F(ub) + self.S @ w

    def core_jacobian(self, u):
        ub, _ = self.split(u)
        self._ensure_S(ub)
        return hstack([self._dF(ub), self.S])

    def weights(self):
        return np.concatenate([self.base.weights(), np.ones(self.m)])

    def monitors(self, u):
        ub, w = self.split(u)
        mon = dict(self.base.monitors(ub))
        mon["slack"] = float(np.max(np.abs(w))) if w.size else 0.0
        return mon

    def events(self):
        return self.base.events()

    def direction_hint(self, u):
        h = self.base.direction_hint(self.split(u)[0])
        return None if h is None else np.concatenate([h, np.zeros(self.m)])

    def check_terminal(self, u, mon):
        return self.base.check_terminal(self.split(u)[0], mon)

    def check_start(self, u):
        self.base.check_start(self.split(u)[0])

    def classify_fold(self, pt, left, right):
        return self.base.classify_fold(pt, left, right)

    def update(self, u, t):
        ub, w = self.split(u)
        tb, tw = self.split(t)
        ub2, tb2, changed = self.base.update(ub, tb)
        if ub2.shape != ub.shape:
            self.S = None
            self._ensure_S(ub2)
        else:
            M = self._dF(ub2)
            self.S = self._refine(M, self.S, np.concatenate([tb2, tw]))
        return np.concatenate([ub2, w]), np.concatenate([tb2, tw]), True

    def get_state(self):
        return {"base": self.base.get_state(), "S": None if self.S is None else self.S.copy()}

    def set_state(self, state):
        self.base.set_state(state["base"])
        self.S = None if state["S"] is None else state["S"].copy()

    def __getattr__(self, item):
        # delegate model-specific helpers (column names, meshes, ...)
        if item == "base":
            raise AttributeError(item)
        return getattr(self.base, item)


def _tangent_matrix(A, c):
    B = vstack([A, c[None, :]])
    F = Factorized(B)
    rhs = np.zeros(B.shape[0])
    rhs[-1] = 1.0
    t = F.solve(rhs)
    return t / np.linalg.norm(t), F, None


def regularize_redundant(problem: ZeroProblem, extra_constraints=None):
    """Wrap ``problem`` with redundant constraints ``(g, dg, m)`` and slack variables.

    With no constraints the problem is returned unchanged.
    """
    if extra_constraints is None:
        return problem
    g, dg, m = extra_constraints
    if m == 0:
        return problem
    return Regularized(problem, g, dg, m)


# ---------------------------------------------------------------------------
# the continuation engine

class _Reject(Exception):
    pass


def _arc_increment(W, du, t0, t1):
    chord = math.sqrt(max(_wdot(W, du, du), 0.0))
    c = _wdot(W, t0, t1)
    phi = math.acos(max(-1.0, min(1.0, c)))
    if phi < 1e-8:
        return chord
    return chord * (phi / 2) / math.sin(phi / 2)


class _Engine:
    def __init__(self, problem, settings, monitors):
        self.P = problem
        self.S = settings
        self.user = list(monitors)
        self.specs = list(problem.events()) + list(self.user)
        if settings.fp and problem.principal is not None:
            self.specs.append(Monitor("_fp", problem.fold_label, "regular",
                                      classify=lambda P, pt, a, b: P.classify_fold(pt, a, b)))
        if settings.bp:
            self.specs.append(Monitor("_bp", "BP", "regular"))
        self.warnings = []

    # -- evaluation -----------------------------------------------------
    def columns(self, u, t, bp_sign):
        mon = dict(self.P.monitors(u))
        for m in self.user:
            if m.fn is not None:
                mon[m.name] = float(m.fn(self.P, u))
        if self.P.principal is not None:
            mon["_fp"] = float(t[self.P.principal])
        mon["_bp"] = float(bp_sign)
        return mon

    def correct(self, u_pred, c, c0):
        return newton_correct(self.P, u_pred, c, c0, self.S.tol, self.S.max_iter)

    def probe(self, ua, ta, ub, hb, s, known=None):
        """Corrected point at pseudo-arclength ``s`` from ``ua`` (0 <= s <= hb).

        ``known`` maps already corrected arclengths to points; the predictor
        interpolates between the nearest ones on either side.
        """
        W = self.P.weights()
        c = W * ta
        pts = dict(known or {})
        pts.setdefault(0.0, ua)
        pts.setdefault(hb, ub)
        left = max((k for k in pts if k <= s), default=0.0)
        right = min((k for k in pts if k >= s), default=hb)
        if right > left:
            guess = pts[left] + (s - left) / (right - left) * (pts[right] - pts[left])
        else:
            guess = pts[left].copy()
        u, _ = newton_correct(self.P, guess, c, float(c @ ua) + s, self.S.tol, max(self.S.max_iter, 20))
        t, sign, logabs = _tangent(self.P, u, c)
        return u, t, sign, logabs

    # -- events ---------------------------------------------------------
    def _crossings(self, spec, va, vb):
        if va is None or vb is None:
            return []
        if isinstance(va, float) and (math.isnan(va) or math.isnan(vb)):
            return []
        if spec.kind == "regular":
            return [0.0] if va * vb < 0 else []
        if spec.kind == "discrete":
            return [None] if int(round(va)) != int(round(vb)) else []
        out = []
        vals = spec.values if spec.kind == "uz" else spec.values[:1]
        for v in vals:
            if (va - v) * (vb - v) < 0:
                out.append(v)
        return out

    def locate(self, a, b, h, spec, value):
        """Locate an event in the step from point ``a`` to ``b`` (pseudo-arclength ``h``)."""
        cache = {}

        def at(s):
            if s not in cache:
                u, t, sign, logabs = self.probe(a.u, a.t, b.u, h, s, {k: v[0] for k, v in cache.items()})
                cache[s] = (u, t, sign, logabs, self.columns(u, t, sign))
            return cache[s]

        if spec.kind == "discrete":
            lo, hi = 0.0, h
            va = int(round(a.monitors[spec.name]))
            while hi - lo > self.S.discrete_tol:
                mid = 0.5 * (lo + hi)
                if int(round(at(mid)[4][spec.name])) == va:
                    lo = mid
                else:
                    hi = mid
            s_star = 0.5 * (lo + hi)
        else:
            if spec.name == "_bp":
                ref = {}

                def g(s):
                    try:
                        _, _, sign, logabs, _ = at(s)
                    except RankDeficient:
                        return 0.0  # landed exactly on the singular point
                    if not ref:
                        ref["l"] = logabs
                    return sign * math.exp(max(min(logabs - ref["l"], 300.0), -300.0))

                ga = gb = None
            else:
                def g(s):
                    return at(s)[4][spec.name] - value
                ga, gb = a.monitors[spec.name] - value, b.monitors[spec.name] - value
            try:
                if spec.name == "_bp":
                    ga = g(0.0)
                    if ga * g(h) >= 0:
                        raise BracketLost("determinant sign change not reproduced")
                s_star = sopt.brentq(g, 0.0, h, xtol=self.S.event_tol, rtol=4 * np.finfo(float).eps, maxiter=200)
            except ValueError:
                lo, hi = 0.0, h
                sa = np.sign(ga)
                while hi - lo > self.S.event_tol * 100:
                    mid = 0.5 * (lo + hi)
                    if np.sign(g(mid)) == sa:
                        lo = mid
                    else:
                        hi = mid
                s_star = 0.5 * (lo + hi)
        for d in (0.0, 1e-10, -1e-10, 1e-8, -1e-8):
            try:
                u, t, sign, logabs, mon = at(min(max(s_star + d * max(h, 1.0), 0.0), h))
                break
            except RankDeficient:
                if d == -1e-8:
                    raise
        return s_star, u, t, mon

    # -- sweep ------------------------------------------------------------
    def sweep(self, u0, t0, mon0, state0, sweep_id, max_steps, start_singular, s_offset=0.0):
        P, S = self.P, self.S
        pts = [Point(u0.copy(), t0.copy(), s_offset, S.h0, mon0, ["EP"], sweep=sweep_id, state=state0)]
        if max_steps <= 0:
            return pts
        cur = pts[0]
        h = S.h0
        steps = 0
        skip_events = start_singular
        bounds = S.bounds
        cos_max = math.cos(math.radians(S.max_angle))
        u_start, t_start = u0.copy(), t0.copy()
        travelled = 0.0
        while True:
            if steps >= max_steps:
                pts[-1].types.append("EP")
                break
            W = P.weights()
            c = W * cur.t
            u_pred = cur.u + h * cur.t
            try:
                u_new, iters = self.correct(u_pred, c, float(c @ u_pred))
                t_new, sign, logabs = _tangent(P, u_new, c)
                if _wdot(W, t_new, cur.t) < cos_max and h > S.h_min * 1.0001:
                    raise _Reject()
                mon_new = self.columns(u_new, t_new, sign)
            except (NoConvergence, RankDeficient, EvaluationFailure, _Reject) as exc:
                if h <= S.h_min * 1.0001:
                    log.info("corrector failure at minimal step: %s", exc)
                    pts[-1].types.append("MX")
                    break
                h = max(h / 2, S.h_min)
                continue
            nxt = Point(u_new, t_new, 0.0, h, mon_new, [], sweep=sweep_id)
            dist = _arc_increment(W, u_new - cur.u, cur.t, t_new)

            located = []
            stop = None
            if not skip_events:
                for spec in self.specs:
                    if not spec.label:
                        continue
                    if spec.name not in cur.monitors or spec.name not in mon_new:
                        continue
                    for value in self._crossings(spec, cur.monitors[spec.name], mon_new[spec.name]):
                        try:
                            s_star, u_e, t_e, mon_e = self.locate(cur, nxt, h, spec, value)
                        except (NoConvergence, RankDeficient, EvaluationFailure, BracketLost) as exc:
                            self.warnings.append(f"event {spec.label} not located: {exc}")
                            continue
                        pe = Point(u_e, t_e, 0.0, h, mon_e, [], sweep=sweep_id)
                        labels = spec.label
                        if spec.classify is not None:
                            labels = spec.classify(P, pe, cur, nxt)
                        if not labels:
                            continue
                        pe.types = [labels] if isinstance(labels, str) else list(labels)
                        if "EP" in pe.types:
                            if stop is None or s_star < stop[0]:
                                stop = (s_star, pe)
                            continue
                        located.append((s_star, pe))
            skip_events = False
            for col, (lo, hi) in bounds.items():
                if col not in cur.monitors or col not in mon_new:
                    continue
                va, vb = cur.monitors[col], mon_new[col]
                for lim, outside in ((lo, lambda v, l: v < l), (hi, lambda v, l: v > l)):
                    if lim is None:
                        continue
                    if not outside(va, lim) and outside(vb, lim):
                        spec = Monitor(col, "EP", "threshold", (lim,))
                        try:
                            s_star, u_e, t_e, mon_e = self.locate(cur, nxt, h, spec, lim)
                        except (NoConvergence, RankDeficient, EvaluationFailure):
                            s_star, u_e, t_e, mon_e = h, u_new, t_new, mon_new
                        if stop is None or s_star < stop[0]:
                            stop = (s_star, Point(u_e, t_e, 0.0, h, mon_e, ["EP"], sweep=sweep_id))
            # loop closure: does the step pass the start point?
            closing = None
            if S.close_loops and travelled > 2 * S.h0 and steps > 2 and u_start.shape == cur.u.shape:
                ds0 = _wdot(W, u_start - cur.u, cur.t)
                if 0 < ds0 <= h and _wdot(W, t_start, cur.t) > 0:
                    gap = u_start - (cur.u + ds0 / h * (u_new - cur.u))
                    if math.sqrt(_wdot(W, gap, gap)) < S.h0 / 2:
                        closing = ds0
            if closing is not None and (stop is None or closing < stop[0]):
                try:
                    u_c, t_c, sign_c, _ = self.probe(cur.u, cur.t, u_new, h, closing)
                    stop = (closing, Point(u_c, t_c, 0.0, h, self.columns(u_c, t_c, sign_c), ["EP"],
                                           sweep=sweep_id, info={"closed": True}))
                except (NoConvergence, RankDeficient):
                    pass
            if stop is not None:
                located = [e for e in located if e[0] <= stop[0]]
            located.sort(key=lambda e: e[0])
            state_now = P.get_state() if located or stop is not None else None
            base_s = cur.s
            for s_star, pe in located + ([stop] if stop is not None else []):
                pe.s = base_s + _arc_increment(W, pe.u - cur.u, cur.t, pe.t)
                pe.state = state_now
                pts.append(pe)
            if stop is not None:
                break
            nxt.s = base_s + dist
            travelled += dist
            steps += 1
            term = P.check_terminal(u_new, mon_new)
            pts.append(nxt)
            if term:
                nxt.types.append(term)
                nxt.state = P.get_state()
                break
            if S.label_every and steps % S.label_every == 0:
                nxt.labeled = True
                nxt.state = P.get_state()
            # adapt internal data and re-evaluate monitors in the new discretization
            try:
                u_up, t_up, changed = P.update(u_new, t_new)
                if changed:
                    W2 = P.weights()
                    t_up, sign, _ = _tangent(P, u_up, W2 * t_up)
                    nxt.u, nxt.t = u_up, t_up
                    nxt.monitors = self.columns(u_up, t_up, sign)
                nxt.state = P.get_state()
            except Exception as exc:  # hook failure terminates the sweep
                log.info("update hook failed: %s", exc)
                self.warnings.append(f"update hook failed: {exc}")
                nxt.types.append("MX")
                nxt.state = P.get_state()
                break
            cur = nxt
            if iters > S.fast_iter:
                h = max(h / 2, S.h_min)
            else:
                h = min(h * S.h_grow, S.h_max)
        if pts[-1].state is None:
            pts[-1].state = P.get_state()
        return pts


def continue_branch(problem: ZeroProblem, u0, settings: Optional[ContinuationSettings] = None,
                    monitors: Sequence[Monitor] = (), t0=None, direction: Optional[int] = None,
                    singular_start: bool = False, correct_start: bool = True) -> Branch:
    """Cover the branch through ``u0`` in both directions.

    ``t0`` optionally fixes the initial direction (it is used unchanged when
    ``singular_start`` is set, e.g. after :func:`switch_branch`). The first
    sweep follows increasing principal parameter (or the problem's direction
    hint) unless ``direction=-1``.
    """
    settings = settings or ContinuationSettings()
    P = problem
    if P.deficit != 1:
        raise ValueError(f"continuation needs deficit 1, problem has {P.deficit}")
    u0 = np.array(u0, dtype=float)
    W = P.weights()
    hint = None if t0 is None else np.asarray(t0, dtype=float)
    if hint is None:
        hint = P.direction_hint(u0)
    if hint is None and P.principal is not None:
        hint = np.zeros(P.n_u)
        hint[P.principal] = 1.0
    if singular_start:
        t = hint / math.sqrt(_wdot(W, hint, hint))
        sign = 0
    else:
        if correct_start:
            t_k = tangent_vector(P, u0, hint=hint)
            c = W * t_k
            u0, _ = newton_correct(P, u0, c, float(c @ u0), settings.tol, max(settings.max_iter, 20))
        t, sign, _ = _initial_tangent(P, u0, hint)
    P.check_start(u0)
    d = 1 if direction is None else int(np.sign(direction)) or 1
    t = d * t
    eng = _Engine(P, settings, monitors)
    state0 = P.get_state()
    mon0 = eng.columns(u0, t, sign * d if sign else 1)
    branch = Branch(problem=P.name, meta={"singular_start": singular_start})
    for k, sgn in enumerate((1, -1)):
        if k == 1 and settings.max_steps[1] <= 0:
            break
        P.set_state(state0)
        tt = sgn * t
        m0 = dict(mon0)
        if "_fp" in m0:
            m0["_fp"] = float(tt[P.principal])
        if not singular_start:
            _, sg, _ = _tangent(P, u0, W * tt)
            m0["_bp"] = float(sg)
        pts = eng.sweep(u0, tt, m0, copy.deepcopy(state0), k, settings.max_steps[k], singular_start)
        branch.points.extend(pts)
    branch.warnings.extend(eng.warnings)
    _assign_labels(branch)
    return branch


def _assign_labels(branch: Branch):
    lab = 0
    for p in branch.points:
        if p.types or p.labeled:
            lab += 1
            p.label = lab
