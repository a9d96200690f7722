"""Spatiotemporal symmetries of networks of identical cells.

A symmetry ``(Pi, l)`` permutes cells and shifts time per permutation cycle:
``[(Pi (x) I) z]_k(t) = z_k(t + T / l_k)``. The permutation acts on cell
vectors by ``(Pi z)_{pi(i)} = z_i``, so ``(1 2 4 3)_4`` encodes
``z_1(t) = z_2(t + T/4) = z_4(t + T/2) = z_3(t + 3T/4)``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import coll
from .coll import Mesh
from .contin import Monitor, Regularized, ZeroProblem, regularize_redundant
from .eqbif import HopfProblem, hopf_init
from .errors import DimensionError, EvaluationFailure, SchemaError
from .model import VectorField
from .pobif import POSolution, po_sn_init, po_sn_problem

_CYCLE = re.compile(r"\(\s*([0-9\s]+?)\s*\)(?:_\s*([0-9]+))?")


@dataclass(frozen=True)
class SpatioTemporalSymmetry:
    """Cell permutation ``perm`` (0-based images, ``perm[i] = pi(i)``) and shift vector ``shift``."""

    perm: tuple
    shift: tuple
    cell_dim: int = 2

    def __post_init__(self):
        perm = tuple(int(v) for v in self.perm)
        shift = tuple(int(v) for v in self.shift)
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "shift", shift)
        n = len(perm)
        if sorted(perm) != list(range(n)):
            raise ValueError(f"{perm} is not a permutation")
        if len(shift) != n:
            raise DimensionError("one shift per cell required")
        if self.cell_dim < 1:
            raise ValueError("cell dimension must be positive")
        for cyc in self.cycles:
            ls = {shift[i] for i in cyc}
            if len(ls) != 1:
                raise ValueError("shift must be constant on each cycle")
            l = ls.pop()
            # going once around the cycle shifts time by len(cyc) T / l
            if l < 1 or len(cyc) % l:
                raise ValueError(f"shift {l} is inconsistent with a cycle of length {len(cyc)}")

    # -- construction ---------------------------------------------------
    @classmethod
    def identity(cls, n_cells: int, cell_dim: int = 2):
        return cls(tuple(range(n_cells)), (1,) * n_cells, cell_dim)

    @classmethod
    def from_cycles(cls, cycles: Sequence[Sequence[int]], shifts: Sequence[int], n_cells: int,
                    cell_dim: int = 2):
        """Build from 1-based cycles; cells not mentioned are fixed with shift 1."""
        perm = list(range(n_cells))
        shift = [1] * n_cells
        seen = set()
        for cyc, l in zip(cycles, shifts):
            idx = [int(c) - 1 for c in cyc]
            if any(i < 0 or i >= n_cells for i in idx):
                raise ValueError(f"cell index out of range in {tuple(cyc)}")
            if seen.intersection(idx) or len(set(idx)) != len(idx):
                raise ValueError("cycles must be disjoint")
            seen.update(idx)
            for a, b in zip(idx, idx[1:] + idx[:1]):
                perm[a] = b
            for i in idx:
                shift[i] = int(l)
        return cls(tuple(perm), tuple(shift), cell_dim)

    @classmethod
    def parse(cls, text: str, n_cells: int = 4, cell_dim: int = 2):
        """Parse cycle notation such as ``"(1 2 4 3)_4"`` or ``"(1 2)_2(3 4)_1"``.

        Omitted cells are fixed with shift 1; a missing ``_l`` means shift 1.
        ``""`` and ``"()"`` denote the identity.
        """
        body = text.strip()
        if body in ("", "()", "e"):
            return cls.identity(n_cells, cell_dim)
        pos = 0
        cycles, shifts = [], []
        for m in _CYCLE.finditer(body):
            if body[pos:m.start()].strip():
                raise SchemaError(f"cannot parse symmetry {text!r}")
            cycles.append([int(v) for v in m.group(1).split()])
            shifts.append(int(m.group(2)) if m.group(2) else 1)
            pos = m.end()
        if not cycles or body[pos:].strip():
            raise SchemaError(f"cannot parse symmetry {text!r}")
        try:
            return cls.from_cycles(cycles, shifts, n_cells, cell_dim)
        except ValueError as exc:
            raise SchemaError(str(exc)) from None

    # -- structure ------------------------------------------------------
    @property
    def n_cells(self) -> int:
        return len(self.perm)

    @property
    def n_x(self) -> int:
        return self.n_cells * self.cell_dim

    @property
    def cycles(self):
        """Cycles as lists of 0-based cells, each starting at its smallest element."""
        seen, out = set(), []
        for i in range(len(self.perm)):
            if i in seen:
                continue
            cyc, j = [], i
            while j not in seen:
                seen.add(j)
                cyc.append(j)
                j = self.perm[j]
            out.append(cyc)
        return out

    @property
    def K(self) -> int:
        return len(self.cycles)

    @property
    def inverse(self):
        inv = [0] * self.n_cells
        for i, j in enumerate(self.perm):
            inv[j] = i
        return tuple(inv)

    def render(self) -> str:
        parts = []
        for cyc in self.cycles:
            l = self.shift[cyc[0]]
            if len(cyc) == 1 and l == 1:
                continue
            parts.append("(" + " ".join(str(i + 1) for i in cyc) + f")_{l}")
        return "".join(parts) if parts else "()"

    def __str__(self):
        return self.render()

    def perm_matrix(self) -> np.ndarray:
        P = np.zeros((self.n_cells, self.n_cells))
        for i, j in enumerate(self.perm):
            P[j, i] = 1.0
        return P

    def full_perm(self) -> np.ndarray:
        """``Pi (x) I_d`` acting on stacked cell states."""
        return np.kron(self.perm_matrix(), np.eye(self.cell_dim))

    def phase_matrix(self) -> np.ndarray:
        """Diagonal ``E_l`` with entries ``exp(2 pi i / l_k)``."""
        return np.diag(np.exp(2j * np.pi / np.array(self.shift, dtype=float)))

    def full_phase(self) -> np.ndarray:
        return np.kron(self.phase_matrix(), np.eye(self.cell_dim))

    def component_shift(self) -> np.ndarray:
        """Time shift ``1 / l_k`` (in units of the period) for every state component."""
        return np.repeat(1.0 / np.array(self.shift, dtype=float), self.cell_dim)

    def source_component(self, j: int) -> int:
        """Index ``i`` with ``(Pi z)_j = z_i``."""
        c, r = divmod(j, self.cell_dim)
        return self.inverse[c] * self.cell_dim + r

    def is_trivial_component(self, j: int) -> bool:
        c = j // self.cell_dim
        return self.perm[c] == c and self.shift[c] == 1


def all_symmetries(n_cells: int = 4, cell_dim: int = 2):
    """Every admissible ``(Pi, l)`` on ``n_cells`` cells."""
    from itertools import permutations, product
    out = []
    for perm in permutations(range(n_cells)):
        base = SpatioTemporalSymmetry(perm, (1,) * n_cells, cell_dim)
        choices = []
        for cyc in base.cycles:
            choices.append([l for l in range(1, len(cyc) + 1) if len(cyc) % l == 0])
        for ls in product(*choices):
            shift = [1] * n_cells
            for cyc, l in zip(base.cycles, ls):
                for i in cyc:
                    shift[i] = l
            out.append(SpatioTemporalSymmetry(perm, tuple(shift), cell_dim))
    return out


# ---------------------------------------------------------------------------
# equivariance and equivariant Hopf points

def check_equivariance(field: VectorField, Pi_full, n_samples: int = 20, p=None, seed: int = 0,
                       scale: float = 1.0) -> float:
    """Largest ``|f(Pi z, p) - Pi f(z, p)|`` over random states (and parameters)."""
    if isinstance(Pi_full, SpatioTemporalSymmetry):
        Pi_full = Pi_full.full_perm()
    Pi_full = np.asarray(Pi_full, dtype=float)
    if Pi_full.shape != (field.n_x, field.n_x):
        raise DimensionError("permutation does not match the state dimension")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        z = scale * rng.uniform(0.1, 3.0, field.n_x)
        q = rng.uniform(0.1, 3.0, field.n_p) if p is None else np.asarray(p, dtype=float)
        r = field.f(Pi_full @ z, q) - Pi_full @ field.f(z, q)
        worst = max(worst, float(np.max(np.abs(r))))
    return worst


def _augmented(J, omega, sym: Optional[SpatioTemporalSymmetry]):
    J = np.asarray(J, dtype=float)
    A = J - 1j * omega * np.eye(J.shape[0])
    if sym is None:
        return A
    if sym.n_x != J.shape[0]:
        raise DimensionError("symmetry does not match the Jacobian")
    return np.vstack([A, sym.full_perm() - sym.full_phase()])


def eqv_hopf_nullspace_dim(J, omega: float, sym: Optional[SpatioTemporalSymmetry] = None,
                           tol: float = 1e-8) -> int:
    """Complex dimension of ``ker [J - i omega I; Pi (x) I - E_l (x) I]`` by singular values."""
    A = _augmented(J, omega, sym)
    s = np.linalg.svd(A, compute_uv=False)
    n = A.shape[1]
    rank = int(np.sum(s > tol * s[0])) if s.size else 0
    return n - rank


def symmetric_hopf_eigvec(sym: SpatioTemporalSymmetry, J, omega: float, tol: float = 1e-8):
    """Real and imaginary parts ``(v, w)`` of the symmetric critical eigenvector.

    Normalized with ``v.v = 1``, ``v.w = 0`` and a positive leading entry of
    ``v``, so that ``J v = -omega w``,
    ``J w = omega v`` and ``(Pi (x) I)(v + i w) = E_l (v + i w)``.
    """
    dim = eqv_hopf_nullspace_dim(J, omega, sym, tol)
    if dim != 1:
        raise DimensionError(f"augmented nullspace has dimension {dim}, expected 1")
    A = _augmented(J, omega, sym)
    _, _, Vh = np.linalg.svd(A)
    q = Vh[-1].conj()
    a, b = q.real, q.imag
    c2, s2 = (a @ a) - (b @ b), 2 * (a @ b)
    if math.hypot(c2, s2) < 1e-8 * (a @ a + b @ b):
        # |Re| = |Im| with Re orthogonal to Im: every phase qualifies, so make the leading entry real
        lead = int(np.flatnonzero(np.abs(q) > 0.5 * np.abs(q).max())[0])
        q = q * np.exp(-1j * np.angle(q[lead]))
    else:
        q = q * np.exp(-0.5j * math.atan2(s2, c2))
        if np.linalg.norm(q.real) < np.linalg.norm(q.imag):
            q = q * 1j
    q = q / np.linalg.norm(q.real)
    lead = int(np.flatnonzero(np.abs(q.real) > 0.5 * np.abs(q.real).max())[0])
    if q.real[lead] < 0:
        q = -q
    return q.real.copy(), q.imag.copy()


# ---------------------------------------------------------------------------
# symmetry constraints on periodic orbits

def _eval_rows(mesh: Mesh, times):
    """Sparse ``(len(times), n_base)`` weights giving ``x(t)`` from base values."""
    i, s = coll.locate(mesh, np.asarray(times, dtype=float))
    B = coll.basis_matrix(mesh.n_deg, s)
    idx = mesh.base_index()[i]
    rows = np.repeat(np.arange(len(times)), mesh.n_deg + 1)
    return sp.csr_matrix((B.ravel(), (rows, idx.ravel())), shape=(len(times), mesh.n_base))


def _constraint_matrix(mesh: Mesh, sym: SpatioTemporalSymmetry, times, components):
    """Rows ``(Pi x)_j(t) - x_j(t + 1/l_j)`` over base values ``X`` (base-major)."""
    n = sym.n_x
    shifts = sym.component_shift()
    data, rows, cols = [], [], []
    r = 0
    for t in times:
        for j in components:
            src = sym.source_component(j)
            for tt, comp, sign in ((t, src, 1.0), (t + shifts[j], j, -1.0)):
                e = _eval_rows(mesh, [tt]).tocoo()
                rows.extend([r] * e.nnz)
                cols.extend(e.col * n + comp)
                data.extend(sign * e.data)
            r += 1
    G = sp.csr_matrix((data, (rows, cols)), shape=(r, mesh.n_base * n))
    G.sum_duplicates()
    G.eliminate_zeros()
    return G


class _SymmetryConstraints:
    """Linear constraints on the orbit block of a periodic-orbit problem."""

    def __init__(self, problem, sym: SpatioTemporalSymmetry, times, components):
        self.problem = problem
        self.sym = sym
        self.times = [float(t) % 1.0 for t in times]
        self.components = list(components)
        self._mesh = None
        self._G = None
        self.m = len(self.times) * len(self.components)

    def matrix(self):
        P = self.problem
        if self._mesh is not P.mesh:
            G = _constraint_matrix(P.mesh, self.sym, self.times, self.components)
            o = P.x_off
            left = sp.csr_matrix((G.shape[0], o))
            right = sp.csr_matrix((G.shape[0], P.n_u - o - G.shape[1]))
            self._G = sp.hstack([left, G, right], format="csr")
            self._mesh = P.mesh
        return self._G

    def g(self, u):
        return self.matrix() @ u

    def dg(self, u):
        return self.matrix()


def append_symmetry_constraints(problem: ZeroProblem, sym: SpatioTemporalSymmetry,
                                sample_times: Sequence[float] = (0.0,),
                                components: Optional[Sequence[int]] = None) -> ZeroProblem:
    """Append redundant constraints ``(Pi x)_j(t_s) = x_j(t_s + 1/l_j)`` plus slack variables.

    ``sample_times`` are in units of the period. By default every component
    moved by the symmetry is constrained. With no sample times the problem is
    returned unchanged.
    """
    if sym.n_x != problem.n_x:
        raise DimensionError("symmetry does not match the state dimension")
    if components is None:
        components = [j for j in range(sym.n_x) if not sym.is_trivial_component(j)]
    times = list(sample_times)
    if not times or not components:
        return problem
    con = _SymmetryConstraints(problem, sym, times, components)
    return regularize_redundant(problem, (con.g, con.dg, con.m))


def symmetry_residual(sol: POSolution, sym: SpatioTemporalSymmetry, n_probe: int = 32) -> float:
    """Max over probe times of ``|(Pi x)(t) - x(t + shifts)|``."""
    if sym.n_x != sol.X.shape[1]:
        raise DimensionError("symmetry does not match the orbit")
    t = np.arange(n_probe) / n_probe
    Pf = sym.full_perm()
    lhs = coll.evaluate(sol.mesh, sol.X, t) @ Pf.T
    shifts = sym.component_shift()
    rhs = np.empty_like(lhs)
    for j in range(sym.n_x):
        rhs[:, j] = coll.evaluate(sol.mesh, sol.X, t + shifts[j])[:, j]
    return float(np.max(np.abs(lhs - rhs)))


def watch_symmetries(problem, symmetries, threshold: float = 1e-4):
    """Report :func:`symmetry_residual` for candidate larger symmetries.

    Each symmetry adds a column ``symres<notation>`` and an advisory ``SYM?``
    event when that column drops below ``threshold``. Returns the column names.
    """
    base = problem.base if isinstance(problem, Regularized) else problem
    names = []
    for s in symmetries:
        name = f"symres{s.render()}"
        base.column_hooks[name] = (lambda sol, s=s: symmetry_residual(sol, s))
        base.extra_events.append(Monitor(name, "SYM?", "threshold", (threshold,)))
        names.append(name)
    return names


# ---------------------------------------------------------------------------
# tracking equivariant bifurcations

class EquivariantHopfProblem(HopfProblem):
    """Hopf defining system whose critical eigenvector carries a prescribed symmetry.

    The first Lyapunov coefficient is not monitored: it is undefined on a
    multiple critical eigenvalue.
    """

    name = "eqv_hopf"

    def __init__(self, *args, sym: SpatioTemporalSymmetry, **kw):
        super().__init__(*args, **kw)
        self.sym = sym
        self._D = sym.full_perm() - sym.full_phase()

    def monitors(self, u):
        mon = self.base_columns(u)
        k = float(u[self.k_index])
        mon["k"] = k
        mon["omega"] = math.sqrt(k) if k > 0 else float("nan")
        return mon

    def events(self):
        return [Monitor("k", "BTP", "regular")]

    def check_terminal(self, u, mon):
        return "MX" if mon["k"] <= 0 else None

    # symmetry rows: Re/Im of D (sqrt(k) v1 - i J v1)
    def sym_residual(self, u):
        p, x, k = self.split(u)[:3]
        v1 = self.split(u)[3]
        if k <= 0:
            raise EvaluationFailure("symmetry condition is not differentiable at k <= 0")
        J = self.field.dfdx(x, p)
        r = self._D @ (math.sqrt(k) * v1 - 1j * (J @ v1))
        return np.concatenate([r.real, r.imag])

    def sym_jacobian(self, u):
        p, x, k = self.split(u)[:3]
        v1 = self.split(u)[3]
        if k <= 0:
            raise EvaluationFailure("symmetry condition is not differentiable at k <= 0")
        n, m = self.n_x, self.n_p
        F = self.field
        J = F.dfdx(x, p)
        sk = math.sqrt(k)
        D = self._D
        G = np.zeros((n, self.n_u), dtype=complex)
        G[:, :m] = -1j * D @ F.dJv_dp(x, p, v1)
        G[:, m:m + n] = -1j * D @ F.dJv_dx(x, p, v1)
        G[:, self.k_index] = D @ v1 / (2 * sk)
        o = m + n + 1
        G[:, o:o + n] = D @ (sk * np.eye(n) - 1j * J)
        return np.vstack([G.real, G.imag])


def eqv_hopf_track_problem(field: VectorField, sym: SpatioTemporalSymmetry, free_params, p0,
                           display=None, seed: int = 2024):
    """Equivariant Hopf curve: Hopf system plus ``2 n_x`` redundant symmetry rows, regularized."""
    if sym.n_x != field.n_x:
        raise DimensionError("symmetry does not match the state dimension")
    base = EquivariantHopfProblem(field, p0, free_params, None, display, seed=seed, sym=sym)
    return Regularized(base, base.sym_residual, base.sym_jacobian, 2 * field.n_x)


def eqv_hopf_init(problem, x, p, omega=None, tol: float = 1e-8):
    """Initial vector at an equivariant Hopf point using the symmetric eigenvector."""
    base = problem.base if isinstance(problem, Regularized) else problem
    J = base.field.dfdx(np.asarray(x, float), np.asarray(p, float))
    if omega is None:
        ev = np.linalg.eigvals(J)
        crit = ev[np.argmin(np.abs(ev.real) + (ev.imag <= 0) * 1e9)]
        omega = float(crit.imag)
    v, w = symmetric_hopf_eigvec(base.sym, J, omega, tol)
    ub = hopf_init(base, x, p, omega, v, w)
    if isinstance(problem, Regularized):
        return np.concatenate([ub, np.zeros(problem.m)])
    return ub


def symbreak_track_problem(field: VectorField, mesh: Mesh, sym: SpatioTemporalSymmetry, reference,
                           free_params, p0=None, sample_times: Sequence[float] = (0.0,),
                           components: Optional[Sequence[int]] = None, **kw):
    """Symmetry-breaking curve: PO saddle-node system with symmetry constraints on the orbit."""
    base = po_sn_problem(field, mesh, reference, free_params, p0, **kw)
    return append_symmetry_constraints(base, sym, sample_times, components)


def symbreak_init(problem, sol: POSolution):
    """Initial vector at a located symmetry-breaking point (multiplier +1 with BP signature)."""
    base = problem.base if isinstance(problem, Regularized) else problem
    ub = po_sn_init(base, sol)
    if isinstance(problem, Regularized):
        return np.concatenate([ub, np.zeros(problem.m)])
    return ub
