import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bifkit import model
from bifkit.errors import DimensionError, DomainError
from bifkit.model import VectorField, get_model


def test_registry():
    assert {"cstr", "brusselator4", "harmonic", "hopf_nf", "rossler"} <= set(model.available_models())
    with pytest.raises(KeyError):
        get_model("nope")
    f = get_model("bifkit.model:harmonic")
    assert f.name == "harmonic"


def test_dimension_checks():
    f = get_model("cstr")
    with pytest.raises(DimensionError):
        f.f(np.zeros(3), np.zeros(4))
    with pytest.raises(DimensionError):
        f.f(np.zeros(2), np.zeros(2))
    with pytest.raises(DimensionError):
        VectorField(n_x=2, n_p=1, rhs=lambda x, p: x, param_names=["a", "b"])


def test_batched_evaluation_matches_columns():
    f = get_model("brusselator4")
    rng = np.random.default_rng(3)
    X = rng.uniform(0.5, 3.0, size=(8, 5))
    p = np.array([2.0, 5.9, 0.01])
    F = f.f(X, p)
    J = f.dfdx(X, p)
    for k in range(5):
        assert np.allclose(F[:, k], f.f(X[:, k], p), rtol=0, atol=1e-14)
        assert np.allclose(J[:, :, k], f.dfdx(X[:, k], p), rtol=0, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(x=st.floats(0.05, 0.95), y=st.floats(0.1, 4.0), de=st.floats(0.01, 0.5), si=st.floats(0.1, 2.0))
def test_finite_difference_fallback_matches_analytic(x, y, de, si):
    ref = get_model("cstr")
    bare = VectorField(n_x=2, n_p=4, rhs=ref.rhs, param_names=ref.param_names)
    u, p = np.array([x, y]), np.array([0.0, de, 0.1, si])
    Jx, Jp = ref.dfdx(u, p), ref.dfdp(u, p)
    assert np.allclose(bare.dfdx(u, p), Jx, rtol=1e-6, atol=1e-6 * (1 + np.abs(Jx).max()))
    assert np.allclose(bare.dfdp(u, p), Jp, rtol=1e-6, atol=1e-6 * (1 + np.abs(Jp).max()))


@settings(max_examples=40, deadline=None)
@given(x=st.floats(0.01, 0.99), y=st.floats(0.01, 8.0))
def test_cstr_equilibrium_oracle(x, y):
    de, si = model.cstr_oracle_equilibrium(x, y)
    r = get_model("cstr").f(np.array([x, y]), np.array([0.0, de, 0.1, si]))
    assert np.abs(r).max() <= 1e-13 * max(1.0, x / de, y / si / 0.1)


def test_cstr_oracle_domains():
    with pytest.raises(DomainError):
        model.cstr_oracle_equilibrium(1.2, 1.0)
    with pytest.raises(DomainError):
        model.cstr_oracle_bt(0.2)
    for r in model.cstr_oracle_bt(0.1):
        assert abs(r ** 3 - r ** 2 + 0.1) < 1e-14


@pytest.mark.parametrize("s", [0.72, 0.78, 0.84])
def test_cstr_hopf_curve_is_neutral(s):
    si, de, y, k = model.cstr_oracle_hopf_curve(s, 0.1)
    J = get_model("cstr").dfdx(np.array([s, y]), np.array([0.0, de, 0.1, si]))
    assert abs(np.trace(J)) < 1e-10 * np.abs(J).max()
    assert (np.linalg.det(J) > 0) == (k > 0)


def test_brusselator_eigenvalue_oracle():
    A, B, eps = 2.0, 5.9, 0.0123
    f = get_model("brusselator4")
    J = f.dfdx(np.array([A, B / A] * 4), np.array([A, B, eps]))
    got = np.linalg.eigvals(J)
    k1p, k1m, k2p, k2m = model.brus_oracle_eigs(A, B, eps)
    for lam, mult in [(k1p, 1), (k1m, 1), (k2p, 3), (k2m, 3)]:
        assert np.sum(np.abs(got - lam) < 1e-10) == mult
    assert k1p == pytest.approx(complex(0.45, math.sqrt(15.19) / 2), abs=1e-14)


def test_brusselator_hopf_oracle():
    eps, omega, _ = model.brus_oracle_hopf(2.0, 5.9)
    k2p = model.brus_oracle_eigs(2.0, 5.9, eps)[2]
    assert abs(k2p.real) < 1e-12
    assert abs(k2p.imag) == pytest.approx(omega, rel=1e-12)
