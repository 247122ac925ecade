"""Compiled Huber objective and gradient for the fitter's inner loop.

Mirrors :func:`scalelab.laws.log_terms` term by term; the test-suite checks
both against each other and against finite differences.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# Family codes; order matches FAMILY_CODE below.
ADDITIVE_ND, MULTIPLICATIVE_FT, FORGETTING_MULT, FORGETTING_KAPPA, ADDITIVE_DELTA, NO_BASE = range(6)

FAMILY_CODE = {
    "additive_nd": ADDITIVE_ND,
    "multiplicative_ft": MULTIPLICATIVE_FT,
    "forgetting_mult": FORGETTING_MULT,
    "forgetting_kappa": FORGETTING_KAPPA,
    "forgetting_additive_delta": ADDITIVE_DELTA,
    "forgetting_no_base": NO_BASE,
}

# Full coordinate vector layout.
COORDS = ("log_A", "log_B", "log_E", "alpha", "beta", "kappa")
LA, LB, LE, AL, BE, KA = range(6)


@njit(cache=True)
def huber_objective(fam, th, has, logn, logd, p, logl0, logy, delta, grad):
    """Return the summed Huber penalty of log-residuals; write d/d(th) into ``grad``.

    ``th`` follows :data:`COORDS`; ``has[k]`` flags whether the A, B and E
    summands exist (a dropped coefficient is exactly zero).
    """
    la, lb, le, al, be, ka = th[0], th[1], th[2], th[3], th[4], th[5]
    hasA, hasB, hasE = has[0], has[1], has[2]
    Bc = math.exp(lb) if hasB else 0.0
    n = logn.shape[0]
    t = np.empty(4)
    g = np.zeros((4, 6))
    for j in range(6):
        grad[j] = 0.0
    f = 0.0
    for i in range(n):
        K = 0
        for a in range(4):
            for b in range(6):
                g[a, b] = 0.0
        ln = logn[i]
        ld = logd[i]
        pi = p[i]
        if fam == FORGETTING_MULT:
            t[K] = logl0[i]
            K += 1
        if hasA:
            if fam == MULTIPLICATIVE_FT:
                t[K] = la - al * ln - be * ld
                g[K, LA] = 1.0
                g[K, AL] = -ln
                g[K, BE] = -ld
                K += 1
            elif fam == ADDITIVE_ND or fam == ADDITIVE_DELTA:
                t[K] = la - al * ln
                g[K, LA] = 1.0
                g[K, AL] = -ln
                K += 1
            elif fam == FORGETTING_MULT or fam == NO_BASE:
                bp = Bc * pi
                l1p = math.log1p(bp)
                t[K] = la + be * ld - al * (l1p + ln)
                g[K, LA] = 1.0
                g[K, LB] = -al * bp / (1.0 + bp)
                g[K, AL] = -(l1p + ln)
                g[K, BE] = ld
                K += 1
            elif fam == FORGETTING_KAPPA:
                if pi < 1.0:
                    l1m = math.log1p(-pi)
                    kt = ka * l1m
                else:
                    l1m = 0.0
                    kt = 0.0 if ka == 0.0 else -np.inf
                t[K] = la + be * ld + kt - al * ln
                g[K, LA] = 1.0
                g[K, AL] = -ln
                g[K, BE] = ld
                g[K, KA] = l1m
                K += 1
        if hasB:
            if fam == ADDITIVE_ND:
                t[K] = lb - be * ld
                g[K, LB] = 1.0
                g[K, BE] = -ld
                K += 1
            elif fam == ADDITIVE_DELTA:
                t[K] = lb + be * ld
                g[K, LB] = 1.0
                g[K, BE] = ld
                K += 1
        if hasE and fam != FORGETTING_MULT:
            t[K] = le
            g[K, LE] = 1.0
            K += 1

        m = -np.inf
        for k in range(K):
            if t[k] > m:
                m = t[k]
        if not m > -np.inf:
            return np.inf
        s = 0.0
        for k in range(K):
            s += math.exp(t[k] - m)
        r = m + math.log(s) - logy[i]
        ar = abs(r)
        if ar <= delta:
            f += 0.5 * r * r
            dh = r
        else:
            f += delta * (ar - 0.5 * delta)
            dh = delta if r > 0 else -delta
        for k in range(K):
            w = dh * math.exp(t[k] - m) / s
            if w != 0.0:
                for b in range(6):
                    grad[b] += w * g[k, b]
    return f
