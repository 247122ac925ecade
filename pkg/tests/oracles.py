"""Independent high-precision evaluations of the law families, for checking the library."""

import numpy as np
from mpmath import mp, mpf

from scalelab.core import MODELS
from scalelab.laws import FREE_PARAMS, LawFamily, LawParams

F = LawFamily


def mp_law(family, q, n, d, p, l0):
    """Law value at log-space coordinates ``q`` in mpmath arithmetic."""
    A = mp.e ** q["log_A"]
    a, b = q["alpha"], q["beta"]
    B = mp.e ** q["log_B"] if "log_B" in q else 0
    E = mp.e ** q["log_E"] if "log_E" in q else 0
    n, d, p = mpf(n), mpf(d), mpf(p)
    if family is F.ADDITIVE_ND:
        return E + A / n**a + B / d**b
    if family is F.MULTIPLICATIVE_FT:
        return A / (n**a * d**b) + E
    if family is F.FORGETTING_MULT:
        return mpf(l0) + A * d**b / ((1 + B * p) * n) ** a
    if family is F.FORGETTING_NO_BASE:
        return A * d**b / ((1 + B * p) * n) ** a + E
    if family is F.FORGETTING_KAPPA:
        return A * d**b * (1 - p) ** q["kappa"] / n**a + E
    return A / n**a + B * d**b + E


def mp_central_diff(family, q, name, n, d, p, l0, h="1e-12", dps=40):
    """Central difference of :func:`mp_law` in coordinate ``name``, at ``dps`` digits."""
    with mp.workdps(dps):
        h = mpf(h)
        up, dn = dict(q), dict(q)
        up[name] = mpf(q[name]) + h
        dn[name] = mpf(q[name]) - h
        return float((mp_law(family, up, n, d, p, l0) - mp_law(family, dn, n, d, p, l0)) / (2 * h))


def random_case(rng, family):
    """Log-space coordinates and covariates; exponents drawn from [1e-3, 1]."""
    q = {}
    for nm in FREE_PARAMS[family]:
        if nm == "log_A":
            q[nm] = rng.uniform(0.0, 8.0)
        elif nm == "log_B":
            q[nm] = rng.uniform(-3.0, 9.0) if family is not F.FORGETTING_ADDITIVE_DELTA else rng.uniform(-12, -4)
        elif nm == "log_E":
            q[nm] = rng.uniform(-2.0, 1.5)
        else:
            q[nm] = rng.uniform(1e-3, 1.0)
    n = float(rng.choice([m.n_params for m in MODELS]))
    d = float(np.exp(rng.uniform(np.log(3e5), np.log(3e7))))
    p = float(rng.choice([0.0, 0.001, 0.01, 0.05, rng.uniform(0, 0.9)]))
    return q, n, d, p


def params_from_q(family, q, l0=None):
    return LawParams.from_theta(family, [q[k] for k in FREE_PARAMS[family]], l0_pt=l0)
