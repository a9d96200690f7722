import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bifkit.contin import (ContinuationSettings, FunctionProblem, Monitor, branch_point_test, continue_branch,
                           newton_correct, regularize_redundant, switch_branch)
from bifkit.errors import NoConvergence, NullspaceDimensionError


def circle(r=1.0):
    return FunctionProblem(lambda u: [u[0] ** 2 + u[1] ** 2 - r * r], 2,
                           jac=lambda u: [[2 * u[0], 2 * u[1]]], names=["lam", "x"])


def fold():
    # x^2 + lam = 0 turns at the origin
    return FunctionProblem(lambda u: [u[1] ** 2 + u[0]], 2, jac=lambda u: [[1.0, 2 * u[1]]], names=["lam", "x"])


def pitchfork():
    return FunctionProblem(lambda u: [u[1] * (u[0] - u[1] ** 2)], 2,
                           jac=lambda u: [[u[1], u[0] - 3 * u[1] ** 2]], names=["lam", "x"])


def test_newton_quadratic_and_failure():
    P = FunctionProblem(lambda u: [u[0] ** 2 - 2.0], 1, n_r=1)
    u, it = newton_correct(P, [1.0], tol=1e-12)
    assert u[0] == pytest.approx(math.sqrt(2), abs=1e-12)
    assert it <= 6
    Q = FunctionProblem(lambda u: [u[0] ** 2 + 1.0], 1, n_r=1)
    with pytest.raises(NoConvergence):
        newton_correct(Q, [0.3], max_iter=15)


def test_settings_validation():
    with pytest.raises(ValueError):
        ContinuationSettings(h0=1.0, h_max=0.1)
    s = ContinuationSettings(max_steps=7, bounds={"x": (None, 2)})
    assert s.max_steps == (7, 7)
    assert s.bounds["x"] == (None, 2.0)


def test_circle_closes_and_stays_on_manifold():
    P = circle()
    br = continue_branch(P, [1.0, 0.0], ContinuationSettings(h0=0.1, h_max=0.3, max_steps=500))
    assert br.points[-1].info.get("closed")
    assert max(abs(P.residual(p.u)[0]) for p in br.points) <= 1e-8
    folds = [p for p in br.points if "FP" in p.types and p.sweep == 0]
    assert sorted(round(p.u[0], 6) for p in folds) == [-1.0, 1.0]


def test_fold_located_and_bp_test_constant_sign():
    P = fold()
    br = continue_branch(P, [-1.0, 1.0], ContinuationSettings(h0=0.1, h_max=0.2, max_steps=30))
    fp = br.find("FP")
    assert abs(fp.u[0]) < 1e-8 and abs(fp.u[1]) < 1e-4
    assert not [p for p in br.points if "BP" in p.types]
    signs = {np.sign(branch_point_test(P, p.u, p.t)) for p in br.points if p.sweep == 0}
    assert len(signs) == 1


def test_pitchfork_branch_point_and_switch():
    P = pitchfork()
    br = continue_branch(P, [-1.0, 0.0], ContinuationSettings(h0=0.1, h_max=0.2, max_steps=20))
    bp = br.find("BP")
    assert np.allclose(bp.u, [0, 0], atol=1e-7)
    before = [p for p in br.points if p.sweep == bp.sweep and p.s < bp.s][-1]
    after = [p for p in br.points if p.sweep == bp.sweep and p.s > bp.s][0]
    assert np.sign(branch_point_test(P, before.u, before.t)) != np.sign(branch_point_test(P, after.u, after.t))
    d = switch_branch(P, bp.u, bp.t)
    assert abs(d[1]) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(NullspaceDimensionError):
        switch_branch(P, np.array([1.0, 1.0]), np.array([1.0, 0.0]))


def test_events_in_arclength_order_and_bracketing():
    P = circle()
    mon = Monitor("x", "UZ", "uz", (0.5, -0.5))
    br = continue_branch(P, [1.0, 0.0], ContinuationSettings(h0=0.1, h_max=0.3, max_steps=500), monitors=[mon])
    for sweep in {p.sweep for p in br.points}:
        s = [p.s for p in br.points if p.sweep == sweep]
        assert s == sorted(s)
    uz = [p for p in br.points if "UZ" in p.types and p.sweep == 0]
    assert len(uz) == 4
    for p in uz:
        assert min(abs(p.u[1] - 0.5), abs(p.u[1] + 0.5)) < 1e-8


def test_bounds_terminate_with_ep():
    P = circle()
    br = continue_branch(P, [1.0, 0.0], ContinuationSettings(h0=0.1, max_steps=100, bounds={"x": (-0.3, 0.3)}))
    ends = [p for p in br.points if p.info == {} and "EP" in p.types and abs(abs(p.u[1]) - 0.3) < 1e-8]
    assert len(ends) == 2


def test_restart_reproduces_events():
    P = fold()
    S = ContinuationSettings(h0=0.05, h_max=0.2, max_steps=(40, 0), label_every=3)
    br = continue_branch(P, [-1.0, 1.0], S, direction=1)
    fp = br.find("FP")
    start = [p for p in br.points if p.labeled and p.s < fp.s][0]
    again = continue_branch(P, start.u, S, t0=start.t)
    assert again.find("FP").u[0] == pytest.approx(fp.u[0], abs=1e-10)


def test_regularized_scalar_is_regular():
    P = FunctionProblem(lambda u: [u[0] ** 2], 1, jac=lambda u: [[2 * u[0]]], n_r=1)
    assert regularize_redundant(P, None) is P
    R = regularize_redundant(P, (lambda u: np.array([u[0]]), lambda u: np.array([[1.0]]), 1))
    J = R.jacobian(np.zeros(2))
    J = J.toarray() if hasattr(J, "toarray") else np.asarray(J)
    assert np.linalg.matrix_rank(J) == 2


@settings(max_examples=15, deadline=None)
@given(r=st.floats(0.2, 5.0), h=st.floats(0.02, 0.2))
def test_points_satisfy_tolerance(r, h):
    P = circle(r)
    br = continue_branch(P, [r, 0.0], ContinuationSettings(h0=h, h_max=max(h, 0.3), max_steps=30))
    assert max(abs(P.residual(p.u)[0]) for p in br.points) <= 1e-8
