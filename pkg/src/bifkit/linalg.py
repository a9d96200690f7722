"""Factorizations with determinant signs, used by the correctors and the
branch-point test."""
from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import RankDeficient

DENSE_LIMIT = 250


def _parity(perm):
    perm = np.asarray(perm)
    seen = np.zeros(perm.size, dtype=bool)
    sign = 1
    for i in range(perm.size):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def vstack(blocks):
    if any(sp.issparse(b) for b in blocks):
        return sp.vstack([sp.csr_matrix(b) for b in blocks], format="csc")
    return np.vstack([np.atleast_2d(b) for b in blocks])


def hstack(blocks):
    if any(sp.issparse(b) for b in blocks):
        return sp.hstack([sp.csr_matrix(b) for b in blocks], format="csc")
    return np.hstack(blocks)


def to_dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A)


class Factorized:
    """LU factorization of a square matrix, dense or sparse."""

    def __init__(self, A):
        n = A.shape[0]
        if A.shape[1] != n:
            raise ValueError("square matrix required")
        self.n = n
        if sp.issparse(A) and n > DENSE_LIMIT:
            self.sparse = True
            try:
                self._lu = spla.splu(sp.csc_matrix(A))
            except RuntimeError as exc:
                raise RankDeficient(str(exc)) from None
            d = self._lu.U.diagonal()
        else:
            self.sparse = False
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                self._lu = sla.lu_factor(to_dense(A), check_finite=False)
            d = np.diag(self._lu[0])
        if np.any(d == 0) or not np.all(np.isfinite(d)):
            raise RankDeficient("singular matrix")
        self._diag = d

    def solve(self, b, trans=False):
        if self.sparse:
            return self._lu.solve(np.asarray(b, dtype=float), trans="T" if trans else "N")
        return sla.lu_solve(self._lu, b, trans=1 if trans else 0, check_finite=False)

    def sign_logdet(self):
        d = self._diag
        sign = int(np.prod(np.sign(d)))
        if self.sparse:
            sign *= _parity(self._lu.perm_r) * _parity(self._lu.perm_c)
        else:
            piv = self._lu[1]
            swaps = int(np.count_nonzero(piv != np.arange(piv.size)))
            sign *= -1 if swaps % 2 else 1
        return sign, float(np.sum(np.log(np.abs(d))))


def solve(A, b):
    return Factorized(A).solve(b)


def orthonormal_columns(Y):
    q, _ = np.linalg.qr(Y)
    return q


def procrustes_align(S_new, S_old):
    """Rotate the columns of ``S_new`` (within their span) to best match ``S_old``."""
    M = S_new.T @ S_old
    U, _, Vt = np.linalg.svd(M)
    return S_new @ (U @ Vt)


def left_nullspace_dense(M, m):
    """Orthonormal basis of the ``m`` left singular directions with smallest singular values."""
    U, _, _ = np.linalg.svd(to_dense(M), full_matrices=True)
    return U[:, -m:]
