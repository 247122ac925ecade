"""Scaling-law families for finetuning and forgetting.

Every family is available in two forms:

* :func:`eval_law` / :func:`evaluate` compute the loss from the closed-form
  expression in direct space.
* :func:`log_terms` decomposes the loss into additive summands, each given by
  its logarithm and that logarithm's gradient with respect to the fitted
  parameterization ``(log_A, log_B, log_E, alpha, beta, kappa)``. The loss is
  then ``exp(LSE(terms))``; this is what the fitter optimizes.

Keeping the two routes separate lets the test-suite check one against the
other.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from enum import Enum
from typing import Mapping, NamedTuple, Optional, Union

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "LawFamily",
    "LawParams",
    "Covariates",
    "Prediction",
    "FREE_PARAMS",
    "eval_law",
    "evaluate",
    "grad_law",
    "log_space_eval",
    "log_law_and_jacobian",
    "predict_batch",
    "response",
    "needs_l0",
]


class LawFamily(str, Enum):
    ADDITIVE_ND = "additive_nd"
    MULTIPLICATIVE_FT = "multiplicative_ft"
    FORGETTING_MULT = "forgetting_mult"
    FORGETTING_KAPPA = "forgetting_kappa"
    FORGETTING_ADDITIVE_DELTA = "forgetting_additive_delta"
    FORGETTING_NO_BASE = "forgetting_no_base"

    def __str__(self) -> str:
        return self.value


F = LawFamily

# Fitted coordinates, in optimizer order.
FREE_PARAMS: dict[LawFamily, tuple[str, ...]] = {
    F.ADDITIVE_ND: ("log_A", "log_B", "log_E", "alpha", "beta"),
    F.MULTIPLICATIVE_FT: ("log_A", "log_E", "alpha", "beta"),
    F.FORGETTING_MULT: ("log_A", "log_B", "alpha", "beta"),
    F.FORGETTING_KAPPA: ("log_A", "log_E", "alpha", "beta", "kappa"),
    F.FORGETTING_ADDITIVE_DELTA: ("log_A", "log_B", "log_E", "alpha", "beta"),
    F.FORGETTING_NO_BASE: ("log_A", "log_B", "log_E", "alpha", "beta"),
}

_REQUIRED = {
    fam: tuple(n[4:] if n.startswith("log_") else n for n in names) for fam, names in FREE_PARAMS.items()
}

EXPONENT_MAX = 2.0

L0Type = Union[float, Mapping[int, float], None]


def needs_l0(family) -> bool:
    """Whether the family needs the per-size pretraining baseline (to predict or to form its response)."""
    return LawFamily(family) in (F.FORGETTING_MULT, F.FORGETTING_ADDITIVE_DELTA)


@dataclass(frozen=True)
class Covariates:
    n_params: float
    dft_tokens: float
    p: float = 0.0


class Prediction(NamedTuple):
    record: object
    predicted: Optional[float]
    error: Optional[str] = None


@dataclass(frozen=True)
class LawParams:
    """Coefficients of one law. Fields a family does not use stay ``None``.

    ``l0_pt`` is the fixed pretraining baseline of ``forgetting_mult``: either
    a scalar or a mapping from parameter count to baseline loss.
    """

    A: float
    alpha: float
    beta: float
    B: Optional[float] = None
    E: Optional[float] = None
    kappa: Optional[float] = None
    l0_pt: L0Type = None

    def l0_for(self, n_params) -> np.ndarray:
        if self.l0_pt is None:
            raise ValueError("law needs l0_pt (pretraining baseline) but none was given")
        if isinstance(self.l0_pt, Mapping):
            n = np.atleast_1d(np.asarray(n_params))
            try:
                return np.array([float(self.l0_pt[int(x)]) for x in n])
            except KeyError as e:
                raise ValueError(f"no l0_pt entry for n_params={e.args[0]}") from None
        return np.full(np.shape(np.atleast_1d(n_params)), float(self.l0_pt))

    def validate(self, family) -> "LawParams":
        family = LawFamily(family)
        for name in _REQUIRED[family]:
            v = getattr(self, name)
            if v is None or not math.isfinite(v):
                raise ValueError(f"{family}: parameter {name} must be a finite number, got {v!r}")
        if self.A < 0 or (self.B is not None and self.B < 0):
            raise ValueError("A and B must be non-negative")
        if self.E is not None and self.E < 0:
            raise ValueError("E must be non-negative")
        for name in ("alpha", "beta", "kappa"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= EXPONENT_MAX:
                raise ValueError(f"exponent {name}={v} outside [0, {EXPONENT_MAX}]")
        if family is F.FORGETTING_MULT and self.l0_pt is None:
            raise ValueError("forgetting_mult needs l0_pt")
        return self

    def to_dict(self, family=None) -> dict:
        out = {}
        if family is not None:
            out["family"] = LawFamily(family).value
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if f.name == "l0_pt" and isinstance(v, Mapping):
                v = {str(int(k)): float(x) for k, x in sorted(v.items())}
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "LawParams":
        kw = {k: v for k, v in d.items() if k != "family"}
        l0 = kw.get("l0_pt")
        if isinstance(l0, Mapping):
            kw["l0_pt"] = {int(k): float(v) for k, v in l0.items()}
        return cls(**kw)

    def to_json(self, family=None) -> str:
        return json.dumps(self.to_dict(family), sort_keys=True)

    # Fitter coordinates ------------------------------------------------

    def to_theta(self, family, names=None) -> np.ndarray:
        names = FREE_PARAMS[LawFamily(family)] if names is None else names
        out = []
        for n in names:
            if n.startswith("log_"):
                v = getattr(self, n[4:])
                out.append(math.log(v) if v > 0 else -math.inf)
            else:
                out.append(float(getattr(self, n)))
        return np.array(out)

    @classmethod
    def from_theta(cls, family, theta, names=None, l0_pt: L0Type = None, e_floor: Optional[float] = None):
        """Build params from fitter coordinates.

        Coordinates missing from ``names`` that the family requires (for
        instance ``log_E`` dropped from a fit) are set to zero. A ``log_E`` at
        or below ``e_floor`` is reported as ``E = 0``.
        """
        family = LawFamily(family)
        names = FREE_PARAMS[family] if names is None else names
        q = dict(zip(names, (float(x) for x in theta)))
        kw = {}
        for req in _REQUIRED[family]:
            key = "log_" + req if req in ("A", "B", "E") else req
            if key not in q:
                kw[req] = 0.0
            elif key.startswith("log_"):
                if req == "E" and e_floor is not None and q[key] <= e_floor:
                    kw[req] = 0.0
                else:
                    kw[req] = math.exp(q[key])
            else:
                kw[req] = q[key]
        if needs_l0(family):
            kw["l0_pt"] = l0_pt
        return cls(**kw)


# ---------------------------------------------------------------------------
# Direct-space evaluation


def _arrays(n, d, p):
    n = np.asarray(n, dtype=float)
    d = np.asarray(d, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(n <= 0):
        raise ValueError("n_params must be positive")
    if np.any(d <= 0):
        raise ValueError("dft_tokens must be positive")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p must lie in [0, 1]")
    return n, d, p


def evaluate(family, params: LawParams, n_params, dft_tokens, p=0.0) -> np.ndarray:
    """Vectorized closed-form loss. For ``forgetting_additive_delta`` the
    prediction is the increase ``L_pt - L0_pt``, not the loss itself."""
    family = LawFamily(family)
    n, d, p = _arrays(n_params, dft_tokens, p)
    A, B, E = params.A, params.B, params.E
    a, b = params.alpha, params.beta
    if family is F.ADDITIVE_ND:
        return E + A / n**a + B / d**b
    if family is F.MULTIPLICATIVE_FT:
        return A / (n**a * d**b) + E
    if family is F.FORGETTING_MULT:
        return params.l0_for(n).reshape(np.shape(n)) + A * d**b / ((1 + B * p) * n) ** a
    if family is F.FORGETTING_NO_BASE:
        return A * d**b / ((1 + B * p) * n) ** a + E
    if family is F.FORGETTING_KAPPA:
        k = params.kappa
        # (1 - p)**k with the 0**0 = 1 convention; at p = 1 and k > 0 the term vanishes.
        decay = np.where(p < 1, (1 - np.minimum(p, 1)) ** k, 1.0 if k == 0 else 0.0)
        return A * d**b * decay / n**a + E
    if family is F.FORGETTING_ADDITIVE_DELTA:
        return A / n**a + B * d**b + E
    raise ValueError(f"unknown family {family}")


def eval_law(family, params: LawParams, cov) -> float:
    """Loss predicted for a single covariate triple (anything with
    ``n_params``, ``dft_tokens`` and ``p`` attributes)."""
    return float(evaluate(family, params, cov.n_params, cov.dft_tokens, getattr(cov, "p", 0.0)))


# ---------------------------------------------------------------------------
# Log-space evaluation with analytic gradients


def _param_dict(family, params: LawParams) -> dict:
    q = {}
    for name in FREE_PARAMS[family]:
        if name.startswith("log_"):
            v = getattr(params, name[4:])
            if v > 0:
                q[name] = math.log(v)
        else:
            q[name] = float(getattr(params, name))
    return q


def log_terms(family, q: Mapping[str, float], names, logn, logd, p, l0=None):
    """Log-summands of a law and their gradients.

    Args:
        family: law family.
        q: parameter values keyed by coordinate name. A missing ``log_*``
            coordinate means that coefficient is zero and its summand is
            dropped.
        names: coordinates to differentiate with respect to, in order.
        logn, logd, p: covariate arrays of shape (n,).
        l0: per-record baseline, required by ``forgetting_mult``.

    Returns:
        ``(T, G)`` with ``T`` of shape (K, n) holding the log of each summand
        (``-inf`` for a vanishing one) and ``G`` of shape (K, n, len(names))
        holding d T / d theta.
    """
    family = LawFamily(family)
    npts = logn.shape[0]
    col = {nm: j for j, nm in enumerate(names)}
    terms: list[np.ndarray] = []
    grads: list[np.ndarray] = []

    def add(t, partials):
        g = np.zeros((npts, len(names)))
        for nm, v in partials.items():
            j = col.get(nm)
            if j is not None:
                g[:, j] = v
        t = np.asarray(t, dtype=float)
        terms.append(t if t.shape == (npts,) else np.full(npts, t))
        grads.append(g)

    la = q.get("log_A")
    lb = q.get("log_B")
    le = q.get("log_E")
    al = q.get("alpha", 0.0)
    be = q.get("beta", 0.0)

    if family is F.FORGETTING_MULT:
        if l0 is None:
            raise ValueError("forgetting_mult needs the per-record l0 baseline")
        add(np.log(l0), {})

    if la is not None:
        if family is F.MULTIPLICATIVE_FT:
            add(la - al * logn - be * logd, {"log_A": 1.0, "alpha": -logn, "beta": -logd})
        elif family in (F.ADDITIVE_ND, F.FORGETTING_ADDITIVE_DELTA):
            add(la - al * logn, {"log_A": 1.0, "alpha": -logn})
        elif family in (F.FORGETTING_MULT, F.FORGETTING_NO_BASE):
            bp = math.exp(lb) * p if lb is not None else np.zeros_like(p)
            l1p = np.log1p(bp)
            add(la + be * logd - al * (l1p + logn),
                {"log_A": 1.0, "log_B": -al * bp / (1 + bp), "alpha": -(l1p + logn), "beta": logd})
        elif family is F.FORGETTING_KAPPA:
            k = q.get("kappa", 0.0)
            alive = p < 1
            log1mp = np.where(alive, np.log1p(-np.where(alive, p, 0.0)), 0.0)
            if k == 0:
                kterm = np.zeros_like(p)
            else:
                kterm = np.where(alive, k * log1mp, -np.inf)
            t = la + be * logd + kterm - al * logn
            add(t, {"log_A": 1.0, "alpha": -logn, "beta": logd, "kappa": log1mp})

    if lb is not None:
        if family is F.ADDITIVE_ND:
            add(lb - be * logd, {"log_B": 1.0, "beta": -logd})
        elif family is F.FORGETTING_ADDITIVE_DELTA:
            add(lb + be * logd, {"log_B": 1.0, "beta": logd})

    if le is not None and family is not F.FORGETTING_MULT:
        add(np.full(npts, le), {"log_E": 1.0})

    if not terms:
        return [np.full(npts, -np.inf)], [np.zeros((npts, len(names)))]
    return terms, grads


def log_law_and_jacobian(family, q, names, logn, logd, p, l0=None):
    """``log L`` per record and its Jacobian with respect to ``names``."""
    T, G = log_terms(family, q, names, logn, logd, p, l0)
    if len(T) == 1:
        logL, J = T[0], G[0].copy()
        J[~np.isfinite(logL)] = 0.0
        return logL, J
    m = np.maximum.reduce(T)
    # Rows where every summand vanishes: keep log L = -inf, zero Jacobian.
    dead = ~np.isfinite(m)
    if dead.any():
        m = np.where(dead, 0.0, m)
    w = [np.exp(t - m) for t in T]
    s = sum(w)
    logL = m + np.log(s)
    J = sum((wk / s)[:, None] * gk for wk, gk in zip(w, G))
    if dead.any():
        logL = np.where(dead, -np.inf, logL)
        J[dead] = 0.0
    return logL, J


def _cov_arrays(cov):
    n, d, p = _arrays(getattr(cov, "n_params"), getattr(cov, "dft_tokens"), getattr(cov, "p", 0.0))
    return np.atleast_1d(n), np.atleast_1d(d), np.atleast_1d(p)


def log_space_eval(family, params: LawParams, cov) -> float:
    """``log`` of the predicted loss, computed as a log-sum-exp of summands.

    Summands with a zero coefficient are left out. If every summand vanishes
    the result is ``-inf``.
    """
    family = LawFamily(family)
    n, d, p = _cov_arrays(cov)
    l0 = params.l0_for(n) if family is F.FORGETTING_MULT else None
    T, _ = log_terms(family, _param_dict(family, params), (), np.log(n), np.log(d), p, l0)
    return float(logsumexp(np.stack(T), axis=0)[0])


def grad_law(family, params: LawParams, cov) -> dict[str, float]:
    """Partial derivatives of the direct-space loss with respect to the
    fitted coordinates (``log_A``, ``log_B``, ``log_E``, ``alpha``, ``beta``,
    ``kappa`` as the family uses them)."""
    family = LawFamily(family)
    names = FREE_PARAMS[family]
    n, d, p = _cov_arrays(cov)
    l0 = params.l0_for(n) if family is F.FORGETTING_MULT else None
    q = _param_dict(family, params)
    logL, J = log_law_and_jacobian(family, q, names, np.log(n), np.log(d), p, l0)
    g = math.exp(logL[0]) * J[0]
    return dict(zip(names, map(float, g)))


# ---------------------------------------------------------------------------
# Dataset-level helpers


def response(family, dataset, l0: Optional[Mapping[int, float]] = None) -> np.ndarray:
    """Observed quantity the family predicts, one value per record."""
    family = LawFamily(family)
    if family in (F.ADDITIVE_ND, F.MULTIPLICATIVE_FT):
        return dataset.column("min_val_ft_loss")
    y = dataset.column("pt_loss_at_min")
    if family is F.FORGETTING_ADDITIVE_DELTA:
        if l0 is None:
            raise ValueError("forgetting_additive_delta needs an l0 table to form L_pt - L0_pt")
        try:
            base = np.array([l0[r.n_params] for r in dataset])
        except KeyError as e:
            raise ValueError(f"no l0 entry for n_params={e.args[0]}") from None
        return y - base
    return y


def predict_batch(family, params: LawParams, dataset) -> list[Prediction]:
    """Predict every record, preserving order. Records that cannot be
    predicted get an ``error`` entry instead of raising."""
    family = LawFamily(family)
    out = []
    for rec in dataset:
        try:
            out.append(Prediction(rec, eval_law(family, params, rec)))
        except ValueError as e:
            out.append(Prediction(rec, None, str(e)))
    return out
