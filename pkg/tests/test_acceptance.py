"""Reference scenarios, one test each, run through the declarative driver."""
import math

import numpy as np
import pytest

import runspecs as R
from bifkit import coll, model, pobif, sym
from bifkit.cli import run

TOL = 1e-8


def labelled(archive, kind=None):
    pts = [p for p in archive.branch.points if p.label is not None]
    return [p for p in pts if kind in p.types] if kind else pts


def sweep_ends(archive):
    ends = {}
    for p in archive.branch.points:
        ends[p.sweep] = p
    return [ends[k] for k in sorted(ends)]


def assert_residuals(archive):
    assert R.max_residual(archive) <= TOL * (1 + 1e-6)


def solution_at(archive, point):
    prob = archive.problem
    prob.set_state(point.state)
    base = getattr(prob, "base", prob)
    u = point.u[: base.n_u]
    return base.solution(u)


def test_01_cstr_fixed_y_branch(runs):
    a = runs.get(R.cstr_fixed_y())
    assert_residuals(a)
    e2 = math.e ** 2
    (sn,) = labelled(a, "SN")
    (hb,) = labelled(a, "HB")
    got_sn = [sn.monitors[k] for k in ("x", "si", "de")]
    got_hb = [hb.monitors[k] for k in ("x", "si", "de")]
    assert np.allclose(got_sn, [0.50000, 0.54134, 0.13534], atol=5e-4, rtol=0)
    assert np.allclose(got_hb, [0.72361, 0.97930, 0.35431], atol=5e-4, rtol=0)
    assert np.allclose(got_sn, [0.5, 4 / e2, 1 / e2], atol=1e-6, rtol=0)
    r5 = math.sqrt(5)
    assert np.allclose(got_hb, [(5 + r5) / 10, (5 + r5) / e2, (3 + r5) / (2 * e2)], atol=1e-6, rtol=0)


def test_02_cstr_hopf_curve(runs):
    runs.get(R.cstr_fixed_y())
    a = runs.get(R.cstr_hopf_curve())
    assert_residuals(a)

    def find(kind, si, de):
        cands = labelled(a, kind)
        best = min(cands, key=lambda p: abs(p.monitors["si"] / si - 1) + abs(p.monitors["de"] / de - 1))
        assert best.monitors["si"] == pytest.approx(si, rel=1e-3)
        assert best.monitors["de"] == pytest.approx(de, rel=1e-3)
        return best

    find("DH", 0.69586, 0.22796)
    find("DH", 0.26535, 0.047034)
    find("BTP", 0.52818, 0.12801)
    find("BTP", 0.030747, 0.0035466)
    bp = find("BP", 0.42292, 0.071751)
    # stored eigenvector direction vs the closed-form neutral-saddle family
    n_p = 4
    x_bp = bp.u[n_p]
    v1 = bp.u[n_p + 3: n_p + 5]
    theta = math.atan2(v1[1], v1[0]) % math.pi
    assert theta == pytest.approx(1.43, abs=0.01)
    x_minus, _ = model.cstr_oracle_bp_theta(theta, R.GAMMA)
    assert x_minus == pytest.approx(x_bp, abs=1e-3)


def test_03_degenerate_hopf_families(runs):
    runs.get(R.cstr_fixed_y())
    runs.get(R.cstr_hopf_curve())
    first = runs.get(R.cstr_dh("DH:1", "cstr_dh1"))
    second = runs.get(R.cstr_dh("DH:2", "cstr_dh2"))
    assert_residuals(first)
    assert_residuals(second)
    ends1 = [p for p in sweep_ends(first) if "MX" in p.types]
    assert ends1 and abs(ends1[0].monitors["ga"] - 0.125) <= 2e-3
    ends2 = [p for p in labelled(second) if {"MX", "FP"} & set(p.types)]
    assert any(abs(p.monitors["ga"] - 0.14590) <= 2e-3 for p in ends2)


def test_04_hopf_bubbles(runs):
    a = runs.get(R.cstr_po_at_sigma("cstr_bub1", 0.85))
    b = runs.get(R.cstr_po_at_sigma("cstr_bub2", 0.63433))
    assert_residuals(a)
    assert_residuals(b)
    end = a.branch.points[-1]
    assert end.monitors["amplitude"] < 1e-3  # closes at a Hopf point
    assert end.monitors["si"] == pytest.approx(0.71379, abs=1e-3)
    assert end.monitors["po.period"] == pytest.approx(1.0583, abs=1e-2)
    (sn,) = labelled(b, "SN")
    assert sn.monitors["si"] == pytest.approx(0.56537, abs=1e-3)
    end = b.branch.points[-1]
    assert end.monitors["amplitude"] < 1e-3
    assert end.monitors["si"] == pytest.approx(0.56748, abs=1e-3)


def test_05_snic_and_homoclinic_scaling(runs):
    snic = runs.get(R.cstr_po_at_delta("cstr_snic", 0.11426))
    hom = runs.get(R.cstr_po_at_delta("cstr_hom", 0.091))
    for arch, sigma in ((snic, 0.50612), (hom, 0.43724)):
        assert_residuals(arch)
        end = arch.branch.points[-1]
        assert end.monitors["po.period"] == pytest.approx(20.0, abs=1e-6)
        assert end.monitors["si"] == pytest.approx(sigma, abs=1e-3)
        assert sorted(round(p.monitors["po.period"]) for p in labelled(arch, "UZ")) == [5, 10, 15]
    fit = pobif.period_scaling_fit(snic.branch.column("si"), snic.branch.column("po.period"))
    assert fit.mode == "power"
    assert fit.exponent == pytest.approx(-0.5, abs=0.1)
    fit = pobif.period_scaling_fit(hom.branch.column("si"), hom.branch.column("po.period"))
    assert fit.mode == "log"
    # unstable eigenvalue of the saddle equilibrium at the limiting parameter
    p = np.array([0.0, 0.091, R.GAMMA, fit.sigma_star])
    f = model.cstr()
    lam_u = None
    for y0 in np.linspace(0.5, 5.0, 46):
        z = _equilibrium(f, p, [0.5, y0])
        if z is None:
            continue
        ev = np.linalg.eigvals(f.dfdx(z, p))
        if np.all(np.isreal(ev)) and ev.real.min() < 0 < ev.real.max():
            lam_u = ev.real.max()
            break
    assert lam_u is not None
    assert fit.lambda_u == pytest.approx(lam_u, rel=0.2)


def _equilibrium(f, p, guess):
    import scipy.optimize as sopt

    z, info, ok, _ = sopt.fsolve(lambda z: f.f(z, p), guess, full_output=True)
    return z if ok == 1 and np.abs(f.f(z, p)).max() < 1e-12 else None


def test_06_fixed_period_homoclinic_tracking(runs):
    src = runs.get(R.cstr_po_at_delta("cstr_snic", 0.11426))
    last = [p for p in src.branch.points if p.label is not None][-1]
    a = runs.get(R.cstr_t500(f"cstr_snic/{last.label}"))
    assert_residuals(a)
    nsa = labelled(a, "NSA")
    for si, de in ((0.49376, 0.10821), (0.51949, 0.12293)):
        assert any(abs(p.monitors["si"] - si) <= 2e-3 and abs(p.monitors["de"] - de) <= 2e-3 for p in nsa)
    ncs = [p.monitors["si"] for p in labelled(a, "NCS")]
    for si in (0.50027, 0.50918, 0.53240):
        assert any(abs(s - si) <= 2e-3 for s in ncs)
    ends = sweep_ends(a)
    assert all("MX" in p.types and p.monitors["amplitude"] < 1e-5 for p in ends)
    bts = sorted((p.monitors["si"], p.monitors["de"]) for p in ends)
    assert np.allclose(bts[0], (0.030747, 0.0035466), atol=2e-3)
    assert np.allclose(bts[1], (0.52816, 0.12800), atol=2e-3)


def test_07_brusselator_equivariant_hopf(runs):
    A, B = R.BRUS_A, R.BRUS_B
    eps, omega, _ = model.brus_oracle_hopf(A, B)
    assert eps == pytest.approx(0.0204545, abs=1e-6)
    a = runs.get(R.brus_ep())
    assert_residuals(a)
    (hb,) = labelled(a, "HB")
    assert hb.monitors["lambda"] == pytest.approx(20.455, abs=1e-2)
    f = model.brusselator4()
    J = f.dfdx(np.tile([A, B / A], 4), np.array([A, B, eps]))
    assert sym.eqv_hopf_nullspace_dim(J, omega) == 3
    for text in ("(1 2 4 3)_4", "(1 2)_2(3 4)_1", "(2 3 4)_1"):
        assert sym.eqv_hopf_nullspace_dim(J, omega, sym.SpatioTemporalSymmetry.parse(text)) == 1


def test_08_brusselator_p1_branch(runs):
    a = runs.get(R.brus_p1(constrained=False))
    c = runs.get(R.brus_p1(constrained=True))
    assert_residuals(a)
    assert_residuals(c)
    assert a.branch.points[0].monitors["po.period"] == pytest.approx(10.125, abs=0.05)
    ust = [p.monitors["lambda"] for p in labelled(a, "UST")]
    bp = [p.monitors["lambda"] for p in labelled(a, "BP")]
    for lam in (19.302, 17.002, 2.6735):
        assert any(abs(v - lam) <= 0.05 for v in ust)
    for lam in (17.002, 2.6735):
        assert any(abs(v - lam) <= 0.05 for v in bp)
    assert not any(abs(v - 19.302) <= 0.05 for v in bp)
    # the first crossing is a complex pair
    q = R.nearest(labelled(a, "UST"), "lambda", 19.302)
    mult = pobif.floquet(solution_at(a, q)).multipliers
    near = mult[np.abs(np.abs(mult) - 1) < 1e-2]
    assert np.any(np.abs(near.imag) > 1e-2)
    # with the redundant symmetry constraints the 17.002 point is UST only
    assert any(abs(p.monitors["lambda"] - 17.002) <= 0.05 for p in labelled(c, "UST"))
    assert not any(abs(p.monitors["lambda"] - 17.002) <= 0.05 for p in labelled(c, "BP"))


def test_09_brusselator_two_parameter_curves(runs):
    e = runs.get(R.brus_eqv_hopf())
    assert_residuals(e)
    pts = e.branch.points
    A = R.BRUS_A
    assert max(abs(p.monitors["eps"] - (p.monitors["B"] - 1 - A * A) / 44) for p in pts) <= 1e-6
    low = R.nearest(pts, "lambda", 15.0)
    assert low.monitors["lambda"] == pytest.approx(15.000, abs=0.05)
    assert low.monitors["B"] == pytest.approx(5.6600, abs=0.05)
    assert low.monitors["k"] == pytest.approx(1.4800, abs=0.01)
    mx = [p for p in sweep_ends(e) if "MX" in p.types]
    assert mx
    assert mx[0].monitors["lambda"] == pytest.approx(22.263, abs=0.05)
    assert mx[0].monitors["B"] == pytest.approx(5.9796, abs=0.05)
    assert abs(mx[0].monitors["k"]) < 5e-3

    c = runs.get(R.brus_p1(constrained=True))
    src = R.nearest(labelled(c, "UST"), "lambda", 17.002)
    s = runs.get(R.brus_symbreak(f"brus_p1c/{src.label}"))
    assert_residuals(s)
    folds = labelled(s, "FP")
    for lam, B in ((15.762, 5.6935), (17.467, 6.1746)):
        assert any(abs(p.monitors["lambda"] - lam) <= 0.05 and abs(p.monitors["B"] - B) <= 0.05 for p in folds)


def _central_jacobian(fn, z, h=1e-5):
    z = np.asarray(z, dtype=float)
    cols = []
    for i in range(z.size):
        d = np.zeros_like(z)
        d[i] = h * max(1.0, abs(z[i]))
        cols.append((fn(z + d) - fn(z - d)) / (2 * d[i]))
    return np.array(cols).T


def test_10_property_suites(runs, tmp_path):
    # trivial multiplier on every converged orbit of a branch
    a = runs.get(R.cstr_po_at_sigma("cstr_bub2", 0.63433))
    for p in a.branch.points:
        sol = solution_at(a, p)
        mult = pobif.floquet(sol).multipliers
        bound = 10 * pobif.estimate_error(sol) + 1e-6
        assert np.min(np.abs(mult - 1)) <= bound

    # analytic Jacobians against central differences
    rng = np.random.default_rng(7)
    samples = {
        "cstr": (lambda: rng.uniform([0.1, 0.5], [0.9, 3.0]), lambda: rng.uniform([0, 0.05, 0.05, 0.2], [0.5, 1, 0.3, 2])),
        "brusselator4": (lambda: rng.uniform(0.5, 3.0, 8), lambda: rng.uniform([1, 3, 0.005], [3, 7, 0.05])),
        "harmonic": (lambda: rng.normal(size=2), lambda: rng.uniform(0.5, 2, 1)),
        "hopf_nf": (lambda: rng.normal(size=2), lambda: rng.uniform(-1, 1, 1)),
        "rossler": (lambda: rng.normal(size=3), lambda: rng.uniform([0.1, 0.1, 2], [0.3, 0.3, 6])),
    }
    for name, (gx, gp) in samples.items():
        f = model.get_model(name)
        for _ in range(20):
            x, p = gx(), gp()
            Jx = f.dfdx(x, p)
            Jp = f.dfdp(x, p)
            Fx = _central_jacobian(lambda z: f.f(z, p), x)
            Fp = _central_jacobian(lambda q: f.f(x, q), p)
            assert np.abs(Jx - Fx).max() <= 1e-6 * max(1.0, np.abs(Jx).max())
            assert np.abs(Jp - Fp).max() <= 1e-6 * max(1.0, np.abs(Jp).max())

    # permutation equivariance of the coupled cells
    f = model.brusselator4()
    worst = 0.0
    for s in sym.all_symmetries(4):
        if all(v == 1 for v in s.shift):
            worst = max(worst, sym.check_equivariance(f, s, n_samples=10))
    assert worst <= 1e-13

    # collocation order on the harmonic oscillator
    h = model.harmonic()
    w = np.array([1.0])
    for m in (2, 3, 4, 5):
        Ls, errs = [8, 16, 32, 64], []
        for L in Ls:
            mesh = coll.make_mesh(L, m)
            _, Z = coll.Collocation(mesh, 2).transfer_matrices(h, np.zeros((mesh.n_base, 2)), w, 2 * np.pi)
            Y = np.zeros((mesh.n_base, 2))
            y = np.array([1.0, 0.0])
            Y[0] = y
            for i in range(L):
                Y[i * m + 1: i * m + m + 1] = (Z[i] @ y).reshape(m, 2)
                y = Y[i * m + m]
            t = mesh.base_times
            errs.append(np.abs(Y - np.c_[np.cos(2 * np.pi * t), -np.sin(2 * np.pi * t)]).max())
        assert -np.polyfit(np.log(Ls), np.log(errs), 1)[0] >= m

    # Floquet multipliers of the unit circle of the radial normal form
    g = model.hopf_normal_form()
    circle = pobif.sample_orbit(lambda t: [np.cos(t), np.sin(t)], coll.make_mesh(40, 4), 2 * np.pi, np.array([1.0]), g)
    mu = np.sort(np.abs(pobif.floquet(circle).multipliers))
    assert mu[0] == pytest.approx(math.exp(-4 * math.pi), rel=1e-8)
    assert mu[1] == pytest.approx(1.0, abs=1e-8)

    # restart determinism: resume from a stored label, compare downstream events
    ref = R.cstr_po_at_sigma("det_ref", 0.63433)
    ref["settings"]["label_every"] = 5
    first = run(ref, tmp_path)
    sn = labelled(first, "SN")[0]
    start = [p for p in labelled(first) if not p.types and p.s < sn.s][-1]
    again = dict(ref, id="det_restart", start={"restart": f"det_ref/{start.label}"})
    again["settings"] = dict(ref["settings"], max_steps=[300, 300])
    again.pop("direction")
    again["model"] = {"name": "cstr"}
    second = run(again, tmp_path)
    sn2 = R.nearest(labelled(second, "SN"), "si", sn.monitors["si"])
    assert sn2.monitors["si"] == pytest.approx(sn.monitors["si"], rel=1e-6)
    assert sn2.monitors["po.period"] == pytest.approx(sn.monitors["po.period"], rel=1e-6)
