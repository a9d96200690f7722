import numpy as np
import pytest
from hypothesis import given, strategies as st

from bifkit import coll, model, pobif
from bifkit.contin import FunctionProblem
from bifkit.errors import SchemaError
from bifkit.model import get_model
from bifkit.sym import (SpatioTemporalSymmetry, all_symmetries, append_symmetry_constraints, check_equivariance,
                        eqv_hopf_nullspace_dim, symmetric_hopf_eigvec, symmetry_residual)

SYMS = all_symmetries(4, 2)


def test_symmetry_count_on_four_cells():
    assert len(SYMS) == 59
    assert len(set(SYMS)) == 59


@given(st.sampled_from(SYMS))
def test_render_parse_round_trip(s):
    assert SpatioTemporalSymmetry.parse(s.render(), 4, 2) == s


def test_parse_examples():
    s = SpatioTemporalSymmetry.parse("(1 2 4 3)_4")
    assert s.perm == (1, 3, 0, 2)
    assert s.shift == (4, 4, 4, 4)
    assert SpatioTemporalSymmetry.parse("(1 2)(3 4)_2").shift == (1, 1, 2, 2)
    assert SpatioTemporalSymmetry.parse("()") == SpatioTemporalSymmetry.identity(4)
    for bad in ["(1 2 x)", "(1 2)_3", "(1 5)", "(1 2)(2 3)", "1 2"]:
        with pytest.raises(SchemaError):
            SpatioTemporalSymmetry.parse(bad)


def test_brusselator_is_equivariant_under_all_permutations():
    f = get_model("brusselator4")
    perms = {s.perm: s for s in SYMS}
    assert len(perms) == 24
    for s in perms.values():
        assert check_equivariance(f, s, n_samples=10) <= 1e-13


def test_cstr_swap_is_not_a_symmetry():
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert check_equivariance(get_model("cstr"), swap, p=[0.0, 0.1, 0.1, 0.5]) > 0.1


def _two_cell_orbit(second):
    mesh = coll.make_mesh(40, 4)
    return pobif.sample_orbit(lambda t: [np.cos(t), second(t)], mesh, 2 * np.pi, [1.0])


def test_symmetry_residual():
    half = SpatioTemporalSymmetry.parse("(1 2)_2", n_cells=2, cell_dim=1)
    sym_orbit = _two_cell_orbit(lambda t: -np.cos(t))
    assert symmetry_residual(sym_orbit, half) < 1e-8
    other = _two_cell_orbit(np.sin)
    assert symmetry_residual(other, half) > 0.5
    ident = SpatioTemporalSymmetry.identity(2, 1)
    assert symmetry_residual(other, ident) <= 1e-12


def test_no_sample_times_leaves_problem_unchanged():
    P = FunctionProblem(lambda u: np.zeros(8), 9, n_r=8)
    P.n_x = 8
    s = SpatioTemporalSymmetry.parse("(1 2 4 3)_4")
    assert append_symmetry_constraints(P, s, sample_times=[]) is P


def test_symmetric_critical_eigenvector():
    A, B = 2.0, 5.9
    eps, omega, _ = model.brus_oracle_hopf(A, B)
    J = get_model("brusselator4").dfdx(np.array([A, B / A] * 4), np.array([A, B, eps]))
    s = SpatioTemporalSymmetry.parse("(1 2 4 3)_4")
    assert eqv_hopf_nullspace_dim(J, omega) == 3
    assert eqv_hopf_nullspace_dim(J, omega, s) == 1
    v, w = symmetric_hopf_eigvec(s, J, omega)
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-14)
    assert abs(v @ w) < 1e-12
    assert np.allclose(J @ v, -omega * w, atol=1e-10)
    assert np.allclose(J @ w, omega * v, atol=1e-10)
    q = v + 1j * w
    assert np.allclose(s.full_perm() @ q, s.full_phase() @ q, atol=1e-10)
    v2, w2 = symmetric_hopf_eigvec(s, J, omega)
    assert np.array_equal(v, v2) and np.array_equal(w, w2)
