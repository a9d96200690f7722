"""RunSpecs for the reference scenarios; each one is plain JSON-compatible data."""
from __future__ import annotations

import math

import numpy as np
import scipy.optimize as sopt

from bifkit import model

E2 = math.e ** 2
GAMMA = 0.1
BRUS_A, BRUS_B = 2.0, 5.9
LAMBDA = {"eps": {"label": "lambda", "scale": 1000.0}}


def _cstr_params(si, de, ga=GAMMA):
    return {"be": 0.0, "de": de, "ga": ga, "si": si}


def hopf_on_curve(key: str, value: float, lo=0.7, hi=0.87):
    """Point of the CSTR Hopf curve with ``si`` or ``de`` equal to ``value``."""
    col = {"si": 0, "de": 1}[key]
    x = sopt.brentq(lambda s: model.cstr_oracle_hopf_curve(s, GAMMA)[col] - value, lo, hi)
    si, de, y, _ = model.cstr_oracle_hopf_curve(x, GAMMA)
    return x, y, si, de


def cstr_fixed_y():
    return {
        "id": "cstr_y2", "model": {"name": "cstr", "params": _cstr_params(20 / E2, 9 / E2)},
        "problem": "ep", "start": {"x": [0.9, 2.0]}, "free": ["si", "de", "y=2"],
        "settings": {"h0": 0.05, "h_max": 0.2, "max_steps": 200, "bounds": {"x": [0.2, None]}},
    }


def cstr_hopf_curve():
    return {
        "id": "cstr_hopf", "model": {"name": "cstr"}, "problem": "hopf",
        "start": {"restart": "cstr_y2/HB"}, "free": ["si", "de"], "direction": -1,
        "settings": {"h0": 0.02, "h_max": 0.1, "max_steps": 1000, "label_every": 0,
                     "bounds": {"x": [0.2, None]}},
    }


def cstr_dh(ref: str, run_id: str):
    return {
        "id": run_id, "model": {"name": "cstr"}, "problem": "dh",
        "start": {"restart": f"cstr_hopf/{ref}"}, "free": ["si", "de", "ga"],
        "settings": {"h0": 0.01, "h_max": 0.05, "max_steps": 400, "label_every": 0,
                     "bounds": {"de": [None, 0.3]}},
    }


def cstr_po_at_sigma(run_id: str, sigma: float, **settings):
    x, y, si, de = hopf_on_curve("si", sigma, 0.7, 0.87)
    st = {"h0": 0.01, "h_max": 0.1, "max_steps": [300, 0]}
    st.update(settings)
    return {
        "id": run_id, "model": {"name": "cstr", "params": _cstr_params(si, de)}, "problem": "po",
        "start": {"x": [x, y]}, "free": ["si"], "direction": 1, "settings": st,
    }


def cstr_po_at_delta(run_id: str, delta: float):
    x, y, si, de = hopf_on_curve("de", delta, 0.7, 0.86)
    return {
        "id": run_id, "model": {"name": "cstr", "params": _cstr_params(si, de)}, "problem": "po",
        "start": {"x": [x, y]}, "free": ["si"], "direction": 1,
        "events": {"uz": {"po.period": [5.0, 10.0, 15.0]}},
        "settings": {"h0": 0.01, "h_max": 0.5, "max_steps": [800, 0],
                     "bounds": {"po.period": [None, 20.0]}},
    }


def cstr_t500(source: str):
    return {
        "id": "cstr_t500", "model": {"name": "cstr"}, "problem": "po_fixT",
        "start": {"restart": source}, "free": ["si", "de"], "options": {"T_fixed": 500.0},
        "settings": {"h0": 0.01, "h_max": 0.05, "max_steps": [400, 400], "label_every": 0},
    }


def brus_base(run_id: str, problem: str, **extra):
    eps = model.brus_oracle_hopf(BRUS_A, BRUS_B)[0]
    spec = {
        "id": run_id,
        "model": {"name": "brusselator4", "params": {"A": BRUS_A, "B": BRUS_B, "eps": eps}, "display": LAMBDA},
        "problem": problem, "start": {"x": [BRUS_A, BRUS_B / BRUS_A] * 4},
    }
    spec.update(extra)
    return spec


def brus_ep():
    spec = brus_base("brus_ep", "ep", free=["eps"],
                     settings={"h_max": 2.0, "max_steps": [200, 200], "bounds": {"lambda": [1.0, 40.0]}})
    spec["model"]["params"]["eps"] = 0.03
    return spec


def brus_p1(constrained: bool):
    return brus_base(
        "brus_p1c" if constrained else "brus_p1", "po", free=["eps"], symmetry="(1 2 4 3)_4", direction=1,
        options={"mesh_intervals": 40, "n_deg": 4, "adapt": False, "stability": True,
                 "sample_times": [0.0] if constrained else []},
        settings={"h0": 0.01, "h_max": 0.2, "max_steps": [400, 0], "label_every": 0,
                  "bounds": {"lambda": [1.0, None]}},
    )


def brus_eqv_hopf():
    return brus_base(
        "brus_eqvh", "eqv_hopf", free=["eps", "B"], symmetry="(1 2 4 3)_4", direction=-1,
        settings={"h0": 0.01, "h_max": 0.2, "max_steps": [300, 300], "label_every": 0,
                  "bounds": {"lambda": [15.0, None]}},
    )


def brus_symbreak(source: str):
    return brus_base(
        "brus_symbreak", "symbreak", free=["eps", "B"], symmetry="(1 2 4 3)_4",
        start={"restart": source},
        settings={"h0": 0.01, "h_max": 0.05, "max_steps": [50, 70], "label_every": 0},
    )


def nearest(points, col, value):
    return min(points, key=lambda p: abs(p.monitors[col] - value))


def max_residual(archive) -> float:
    """Largest residual over all accepted points, evaluated with each point's stored state."""
    prob = archive.problem
    worst = 0.0
    for p in archive.branch.points:
        if p.u is None:
            continue
        if p.state is not None:
            prob.set_state(p.state)
        worst = max(worst, float(np.max(np.abs(prob.residual(p.u)))))
    return worst
