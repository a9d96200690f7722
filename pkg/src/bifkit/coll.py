"""Piecewise-polynomial collocation on a mesh of ``[0, 1]``.

A solution is stored by its values at ``L * n_deg + 1`` base points: the
interval boundaries plus ``n_deg - 1`` equally spaced interior points per
interval. Each interval carries a Lagrange basis over its base points and is
collocated at the Gauss-Legendre nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError


@lru_cache(maxsize=None)
def _reference(n_deg: int):
    """Lagrange data on the reference interval for degree ``n_deg``."""
    s = np.linspace(0.0, 1.0, n_deg + 1)
    if n_deg >= 1:
        g, w = np.polynomial.legendre.leggauss(n_deg)
        c, w = (g + 1) / 2, w / 2
    V = np.vander(s, n_deg + 1, increasing=True)
    coef = np.linalg.inv(V)  # column k: monomial coefficients of basis k
    dcoef = np.array([np.polynomial.polynomial.polyder(coef[:, k]) for k in range(n_deg + 1)]).T
    Wm = np.vander(c, n_deg + 1, increasing=True) @ coef
    Wd = np.vander(c, n_deg, increasing=True) @ dcoef
    top = math.factorial(n_deg) * coef[-1, :]  # n_deg-th derivative of each basis function
    grid = np.linspace(0.0, 1.0, 2001)
    node_poly = float(np.max(np.abs(np.prod(grid[:, None] - s[None, :], axis=1))))
    return s, c, w, coef, Wm, Wd, top, node_poly


def basis_matrix(n_deg: int, x, derivative=False):
    """Values (or derivatives) of the reference Lagrange basis at points ``x``."""
    coef = _reference(n_deg)[3]
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not derivative:
        return np.vander(x, n_deg + 1, increasing=True) @ coef
    dcoef = np.array([np.polynomial.polynomial.polyder(coef[:, k]) for k in range(n_deg + 1)]).T
    return np.vander(x, n_deg, increasing=True) @ dcoef


@dataclass
class Mesh:
    """Interval boundaries ``tau`` (length ``L + 1``) and polynomial degree."""

    tau: np.ndarray
    n_deg: int = 4
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        if self.tau.ndim != 1 or self.tau.size < 2:
            raise DimensionError("mesh needs at least one interval")
        if abs(self.tau[0]) > 1e-14 or abs(self.tau[-1] - 1.0) > 1e-14:
            raise ValueError("mesh boundaries must run from 0 to 1")
        if np.any(np.diff(self.tau) <= 0):
            raise ValueError("mesh boundaries must be strictly increasing")
        if self.n_deg < 1:
            raise ValueError("polynomial degree must be at least 1")
        self.tau[0], self.tau[-1] = 0.0, 1.0

    @property
    def L(self) -> int:
        return self.tau.size - 1

    @property
    def h(self):
        return np.diff(self.tau)

    @property
    def n_base(self) -> int:
        return self.L * self.n_deg + 1

    @property
    def n_coll(self) -> int:
        return self.L * self.n_deg

    @property
    def nodes(self):
        """Collocation parameters on the reference interval."""
        return _reference(self.n_deg)[1]

    @property
    def quad_weights(self):
        return _reference(self.n_deg)[2]

    @property
    def base_times(self):
        s = _reference(self.n_deg)[0]
        t = (self.tau[:-1, None] + self.h[:, None] * s[None, :-1]).ravel()
        return np.append(t, 1.0)

    @property
    def coll_times(self):
        return (self.tau[:-1, None] + self.h[:, None] * self.nodes[None, :]).ravel()

    def base_index(self):
        """``(L, n_deg + 1)`` indices of the base points of each interval."""
        if "bidx" not in self._cache:
            m = self.n_deg
            self._cache["bidx"] = np.arange(self.L)[:, None] * m + np.arange(m + 1)[None, :]
        return self._cache["bidx"]

    def to_dict(self):
        return {"tau": self.tau.tolist(), "n_deg": int(self.n_deg)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["tau"], dtype=float), int(d["n_deg"]))

    def __deepcopy__(self, memo):
        return Mesh(self.tau.copy(), self.n_deg)

    def __eq__(self, other):
        return isinstance(other, Mesh) and self.n_deg == other.n_deg and self.tau.shape == other.tau.shape \
            and bool(np.all(self.tau == other.tau))


def make_mesh(L: int, n_deg: int = 4) -> Mesh:
    """Uniform mesh with ``L`` intervals and Gauss-Legendre collocation of degree ``n_deg``."""
    if int(L) < 1:
        raise ValueError("L must be at least 1")
    return Mesh(np.linspace(0.0, 1.0, int(L) + 1), int(n_deg))


# ---------------------------------------------------------------------------
# evaluation of piecewise polynomials

def locate(mesh: Mesh, t):
    """Interval index and local coordinate in ``[0, 1]`` for times ``t``."""
    t = np.mod(np.asarray(t, dtype=float), 1.0)
    i = np.clip(np.searchsorted(mesh.tau, t, side="right") - 1, 0, mesh.L - 1)
    s = (t - mesh.tau[i]) / mesh.h[i]
    return i, s


def evaluate(mesh: Mesh, X, t, derivative=False):
    """Values (``(len(t), n_x)``) of the piecewise polynomial with base values ``X``.

    With ``derivative`` the derivative with respect to ``t`` is returned.
    ``t`` is taken modulo 1.
    """
    X = np.asarray(X, dtype=float)
    t = np.atleast_1d(t)
    i, s = locate(mesh, t)
    B = basis_matrix(mesh.n_deg, s, derivative)
    Xi = X[mesh.base_index()[i]]  # (N, m+1, n_x)
    out = np.einsum("nk,nka->na", B, Xi)
    if derivative:
        out = out / mesh.h[i][:, None]
    return out


def interpolate(old: Mesh, X, new: Mesh):
    """Re-sample base values ``X`` from ``old`` onto the base points of ``new``."""
    out = evaluate(old, X, new.base_times)
    out[-1] = X[-1]
    out[0] = X[0]
    return out


def oversampled(mesh: Mesh, X, factor: int = 16):
    """Values at ``factor`` equally spaced points per interval (closing point included)."""
    s = np.linspace(0.0, 1.0, factor, endpoint=False)
    B = basis_matrix(mesh.n_deg, s)
    Xi = X[mesh.base_index()]  # (L, m+1, n_x)
    vals = np.einsum("jk,lka->lja", B, Xi).reshape(-1, X.shape[1])
    return np.vstack([vals, X[-1:]])


# ---------------------------------------------------------------------------
# collocation residual and Jacobian

class Collocation:
    """Assembly of ``x' - T f(x, p)`` at all collocation points.

    Residual rows are scaled by the interval widths, i.e. row ``(i, j)`` is
    ``sum_k Wd[j,k] x_{i,k} - h_i T f(x(tau_ij), p)``.
    """

    def __init__(self, mesh: Mesh, n_x: int):
        self.mesh = mesh
        self.n_x = n_x
        m, L, n = mesh.n_deg, mesh.L, n_x
        self.Wm, self.Wd = _reference(m)[4:6]
        I, J, K, A, B = np.meshgrid(np.arange(L), np.arange(m), np.arange(m + 1), np.arange(n), np.arange(n),
                                    indexing="ij")
        self.rows = ((I * m + J) * n + A).ravel()
        self.cols = ((I * m + K) * n + B).ravel()
        self.n_rows = L * m * n
        self.n_cols = mesh.n_base * n

    def values(self, X):
        """Collocation-point values ``(L, m, n_x)`` and scaled derivatives."""
        Xi = X[self.mesh.base_index()]
        xc = np.einsum("jk,lka->lja", self.Wm, Xi)
        dx = np.einsum("jk,lka->lja", self.Wd, Xi)
        return xc, dx

    def points(self, X):
        xc, _ = self.values(X)
        return xc.reshape(-1, self.n_x).T  # (n_x, L*m)

    def residual(self, field, X, p, T):
        xc, dx = self.values(X)
        L, m, n = xc.shape
        f = field.f(xc.reshape(-1, n).T, p).T.reshape(L, m, n)
        h = self.mesh.h[:, None, None]
        return (dx - h * T * f).ravel()

    def linear_residual(self, field, X, p, T, Y):
        """Variational residual ``y' - T f_x(x, p) y`` for base values ``Y``."""
        xc, _ = self.values(X)
        yc, dy = self.values(Y)
        L, m, n = xc.shape
        Fx = field.dfdx(xc.reshape(-1, n).T, p)  # (n, n, N)
        Jy = np.einsum("abN,bN->aN", Fx, yc.reshape(-1, n).T).T.reshape(L, m, n)
        h = self.mesh.h[:, None, None]
        return (dy - h * T * Jy).ravel()

    def block_values(self, Fx, T):
        """Entries of ``d residual / d X`` for state Jacobians ``Fx`` of shape ``(n, n, L*m)``."""
        L, m, n = self.mesh.L, self.mesh.n_deg, self.n_x
        F = np.transpose(Fx, (2, 0, 1)).reshape(L, m, n, n)
        h = self.mesh.h
        eye = np.eye(n)
        vals = (self.Wd[None, :, :, None, None] * eye[None, None, None]
                - (h * T)[:, None, None, None, None] * self.Wm[None, :, :, None, None] * F[:, :, None, :, :])
        return vals.ravel()

    def dX(self, field, X, p, T):
        Fx = field.dfdx(self.points(X), p)
        return sp.csr_matrix((self.block_values(Fx, T), (self.rows, self.cols)), shape=(self.n_rows, self.n_cols))

    def dT(self, field, X, p):
        xc, _ = self.values(X)
        L, m, n = xc.shape
        f = field.f(xc.reshape(-1, n).T, p).T.reshape(L, m, n)
        return (-self.mesh.h[:, None, None] * f).ravel()

    def dp(self, field, X, p, T):
        xc, _ = self.values(X)
        L, m, n = xc.shape
        Fp = field.dfdp(xc.reshape(-1, n).T, p)  # (n, n_p, N)
        Fp = np.transpose(Fp, (2, 0, 1)).reshape(L, m, n, -1)
        return (-(self.mesh.h * T)[:, None, None, None] * Fp).reshape(L * m * n, -1)

    def phase_row(self, Xref):
        """Gradient of ``int_0^1 xref'(t) . x(t) dt`` with respect to the base values."""
        _, dref = self.values(Xref)  # h-scaled derivatives, (L, m, n)
        w = self.mesh.quad_weights
        g = np.einsum("j,jk,lja->lka", w, self.Wm, dref)  # (L, m+1, n)
        out = np.zeros((self.mesh.n_base, self.n_x))
        np.add.at(out, self.mesh.base_index(), g)
        return out.ravel()

    def transfer_matrices(self, field, X, p, T):
        """Per-interval maps ``y(tau_i) -> y(tau_{i+1})`` and interior maps of the variational problem.

        Returns ``(M, Z)`` with ``M`` of shape ``(L, n, n)`` and ``Z`` of shape
        ``(L, m*n, n)`` mapping an interval's initial value to its remaining
        base values.
        """
        L, m, n = self.mesh.L, self.mesh.n_deg, self.n_x
        Fx = field.dfdx(self.points(X), p)
        blocks = self.block_values(Fx, T).reshape(L, m, m + 1, n, n)
        A = np.transpose(blocks, (0, 1, 3, 2, 4)).reshape(L, m * n, (m + 1) * n)
        A0, A1 = A[:, :, :n], A[:, :, n:]
        Z = np.linalg.solve(A1, -A0)
        return Z[:, -n:, :], Z


# ---------------------------------------------------------------------------
# error estimation and adaptation

def interval_error(mesh: Mesh, X):
    """Per-interval interpolation-error indicator.

    The next derivative is estimated from jumps of the highest polynomial
    derivative between neighbouring intervals; the bound includes the node
    polynomial factor of the equally spaced base points.
    """
    m = mesh.n_deg
    top, node_poly = _reference(m)[6:8]
    h = mesh.h
    D = np.einsum("k,lka->la", top, X[mesh.base_index()]) / h[:, None] ** m  # m-th derivative per interval
    Dn = np.roll(D, -1, axis=0)
    hn = np.roll(h, -1)
    jump = np.linalg.norm(Dn - D, axis=1) / (0.5 * (h + hn))  # estimate of the (m+1)-th derivative
    d = 0.5 * (jump + np.roll(jump, 1))
    d = d * node_poly
    return h ** (m + 1) * d / math.factorial(m + 1), d


def estimate_error(mesh: Mesh, X) -> float:
    """Max-norm error estimate of the collocation solution."""
    return float(np.max(interval_error(mesh, X)[0]))


def adapt_mesh(mesh: Mesh, X, tol: float = 1e-4, L_min: int = 5, L_max: int = 400, safety: float = 0.25,
               max_ratio: float = 3.0) -> Mesh:
    """Mesh that equidistributes the error indicator with estimated error below ``tol``.

    The mesh is returned unchanged when the error is inside
    ``[tol / 2**(n_deg+1), tol]`` and already roughly equidistributed.
    """
    m = mesh.n_deg
    e, d = interval_error(mesh, X)
    est = float(np.max(e))
    g = (d / math.factorial(m + 1)) ** (1.0 / (m + 1))
    g = g + 0.05 * float(np.mean(g)) + 1e-12
    share = g * mesh.h
    ratio = float(np.max(share) / np.min(share))
    if tol / 2 ** (m + 1) <= est <= tol and ratio <= max_ratio and L_min <= mesh.L <= L_max:
        return mesh
    G = np.concatenate([[0.0], np.cumsum(share)])
    L_new = int(math.ceil(G[-1] / (safety * tol) ** (1.0 / (m + 1))))
    L_new = min(max(L_new, L_min), L_max)
    targets = np.linspace(0.0, G[-1], L_new + 1)
    tau = np.interp(targets, G, mesh.tau)
    tau[0], tau[-1] = 0.0, 1.0
    return Mesh(tau, m)
