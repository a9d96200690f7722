import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from bifkit import coll, pobif
from bifkit.contin import ContinuationSettings, continue_branch, newton_correct
from bifkit.model import get_model


def circle_orbit(mu, L=20, n_deg=4):
    f = get_model("hopf_nf")
    r = math.sqrt(mu)
    mesh = coll.make_mesh(L, n_deg)
    sol = pobif.sample_orbit(lambda t: [r * math.cos(t), r * math.sin(t)], mesh, 2 * math.pi, [mu], f)
    return f, sol


def test_amplitude_of_unit_circle():
    _, sol = circle_orbit(1.0)
    assert pobif.amplitude(sol, 0) == pytest.approx(2.0, abs=1e-9)
    assert pobif.amplitude(sol, 1) == pytest.approx(2.0, abs=1e-9)


def test_error_estimate_and_adaptation():
    _, sol = circle_orbit(1.0, L=8)
    err = pobif.estimate_error(sol)
    assert 0 < err < 1e-3
    mesh = pobif.adapt_mesh(sol, tol=1e-9, L_min=5, L_max=400)
    assert 5 <= mesh.L <= 400
    fine = pobif.sample_orbit(lambda t: [math.cos(t), math.sin(t)], mesh, 2 * math.pi, [1.0])
    assert pobif.estimate_error(fine) < err


@pytest.mark.parametrize("mu", [0.5, 1.0, 2.0])
def test_floquet_multipliers_of_normal_form(mu):
    f, sol = circle_orbit(mu, L=40)
    fl = pobif.floquet(sol)
    mult = np.sort(np.abs(fl.multipliers))
    assert mult[1] == pytest.approx(1.0, abs=1e-8)
    assert mult[0] == pytest.approx(math.exp(-4 * math.pi * mu), rel=1e-6)


def test_branch_from_hopf_follows_square_root_law():
    f = get_model("hopf_nf")
    prob, u0, _ = pobif.hopf_po_problem(f, [0.0, 0.0], ["mu"], p=[0.0])
    br = continue_branch(prob, u0, ContinuationSettings(h0=0.01, h_max=0.1, max_steps=(30, 0)), direction=1)
    assert len(br.points) > 10
    for pt in br.points[2:]:
        prob.set_state(pt.state)
        sol = prob.solution(pt.u)
        mu = sol.p[0]
        assert mu > 0
        # coarse default mesh, so only discretization accuracy is expected
        assert pobif.amplitude(sol, 0) == pytest.approx(2 * math.sqrt(mu), rel=1e-4)
        assert sol.T == pytest.approx(2 * math.pi, rel=1e-8)


def test_scaling_fit_logarithmic():
    s = 0.4 + np.geomspace(1e-7, 1e-1, 40)
    T = 3.0 - 0.5 * np.log(s - 0.4)
    fit = pobif.period_scaling_fit(s, T)
    assert fit.mode == "log"
    assert fit.coefficient == pytest.approx(0.5, rel=1e-6)
    assert fit.lambda_u == pytest.approx(2.0, rel=1e-6)
    assert fit.residual_log < 1e-10


def test_scaling_fit_square_root():
    s = 0.4 - np.geomspace(1e-7, 1e-1, 40)
    T = 2.0 + 1.5 / np.sqrt(0.4 - s)
    fit = pobif.period_scaling_fit(s, T)
    assert fit.mode == "power"
    assert fit.coefficient == pytest.approx(1.5, rel=1e-6)
    assert fit.exponent == pytest.approx(-0.5, abs=1e-3)
    with pytest.raises(ValueError):
        pobif.period_scaling_fit(s[:3], T[:3])


@settings(max_examples=10, deadline=None)
@given(extra=st.floats(0.5, 50.0))
def test_insert_dwell_keeps_periodicity(extra):
    _, sol = circle_orbit(1.0)
    long = pobif.insert_dwell(sol, sol.T + extra)
    assert long.T == pytest.approx(sol.T + extra)
    assert np.array_equal(long.X[-1], long.X[0])
    # excursion is unchanged, so the amplitude is too
    assert pobif.amplitude(long, 0) == pytest.approx(2.0, abs=1e-3)


def test_insert_dwell_rejects_shorter_period():
    _, sol = circle_orbit(1.0)
    with pytest.raises(ValueError):
        pobif.insert_dwell(sol, sol.T)


def test_rossler_period_doubling():
    f = get_model("rossler")
    p = np.array([0.2, 0.2, 2.5])

    def rhs(t, u):
        return f.f(u, p)

    s = solve_ivp(rhs, (0, 500), [1, 1, 0], rtol=1e-10, atol=1e-12)

    def cross(t, u):
        return u[1]

    cross.direction = -1
    s2 = solve_ivp(rhs, (0, 60), s.y[:, -1], rtol=1e-11, atol=1e-12, events=cross, dense_output=True)
    te = s2.t_events[0]
    T = te[-1] - te[-2]
    mesh = coll.make_mesh(40, 4)
    sol = pobif.POSolution(mesh, s2.sol(te[-2] + T * mesh.base_times).T, T, p, f)
    P = pobif.po_problem(f, mesh, sol, ["c"], stability=True)
    br = continue_branch(P, P.initial_u(sol), ContinuationSettings(h0=0.01, h_max=0.1, max_steps=(60, 0)),
                         direction=1)
    pd = br.find("UST")
    P.set_state(pd.state)
    sol = P.solution(pd.u)
    mults = pobif.floquet(sol).multipliers
    assert np.min(np.abs(mults + 1)) < 1e-5
    D = pobif.po_pd_problem(f, P.mesh, sol, ["c"])
    u0 = pobif.po_pd_init(D, sol)
    assert np.abs(D.residual(u0)).max() < 1e-5
    u, _ = newton_correct(D, u0, None, None, 1e-10, 20)
    assert np.abs(D.residual(u)).max() < 1e-10
    assert u[2] == pytest.approx(pd.monitors["c"], abs=1e-5)
