import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import mp_central_diff, params_from_q, random_case

from scalelab import coefficients
from scalelab.core import MODELS, FitDataset, RunRecord, l0_table
from scalelab.laws import (
    FREE_PARAMS,
    Covariates,
    LawFamily,
    LawParams,
    eval_law,
    evaluate,
    grad_law,
    log_law_and_jacobian,
    log_space_eval,
    predict_batch,
    response,
)

F = LawFamily
ARXIV_FG = coefficients.fg_params("arxiv")
ARXIV_FT = coefficients.ft_params("arxiv")

# 40-digit evaluations of the closed forms, done outside the package.
FROZEN = [
    (F.FORGETTING_MULT, ARXIV_FG, (41_000_000, 300_000, 0.01), 3.2173963521995785712),
    (F.FORGETTING_MULT, ARXIV_FG, (1_270_000_000, 30_000_000, 0.05), 2.2735820403542408917),
    (F.FORGETTING_MULT, ARXIV_FG, (334_000_000, 3_000_000, 0.0), 2.6412700110650681539),
    (F.MULTIPLICATIVE_FT, ARXIV_FT, (41_000_000, 300_000, 0.0), 2.6698099589668431064),
    (F.MULTIPLICATIVE_FT, ARXIV_FT, (1_270_000_000, 30_000_000, 0.05), 1.7821552971195390266),
    (F.MULTIPLICATIVE_FT, coefficients.ft_params("openhermes"), (334_000_000, 3_000_000, 0.0), 1.9212527150141310143),
]


@pytest.mark.parametrize("family,params,cov,expected", FROZEN)
def test_frozen_values(family, params, cov, expected):
    assert eval_law(family, params, Covariates(*cov)) == pytest.approx(expected, rel=1e-12)


def test_published_rows():
    assert len(coefficients.DOMAINS) == 12
    a = coefficients.domain("Arxiv")
    assert (a.ft_alpha, a.ft_beta, a.ft_A, a.ft_E) == (0.17, 0.10, 95.18, 1.30)
    assert (a.fg_alpha, a.fg_beta, a.fg_A, a.fg_B) == (0.74, 0.34, 526, 392)
    h = coefficients.domain("openhermes")
    assert (h.ft_alpha, h.ft_beta, h.ft_A, h.ft_E, h.fg_A, h.fg_B) == (0.17, 0.03, 64.28, 0.46, 5513, 8584)
    assert coefficients.domain("Dm mathematics").fg_B == 9847
    with pytest.raises(KeyError):
        coefficients.domain("c4")


def test_small_hand_examples():
    p = LawParams(A=2.0, alpha=1.0, beta=1.0, B=3.0, E=0.5, kappa=2.0, l0_pt=1.0)
    assert eval_law(F.ADDITIVE_ND, p, Covariates(2, 4)) == pytest.approx(0.5 + 1.0 + 0.75)
    assert eval_law(F.MULTIPLICATIVE_FT, p, Covariates(2, 4)) == pytest.approx(0.5 + 2 / 8)
    assert eval_law(F.FORGETTING_MULT, p, Covariates(2, 4, 1 / 3)) == pytest.approx(1.0 + 2 * 4 / 4)
    assert eval_law(F.FORGETTING_NO_BASE, p, Covariates(2, 4, 1 / 3)) == pytest.approx(0.5 + 2)
    assert eval_law(F.FORGETTING_KAPPA, p, Covariates(2, 4, 0.5)) == pytest.approx(2 * 4 * 0.25 / 2 + 0.5)
    assert eval_law(F.FORGETTING_ADDITIVE_DELTA, p, Covariates(2, 4)) == pytest.approx(1 + 12 + 0.5)


def test_kappa_edges():
    p = LawParams(A=2.0, alpha=0.5, beta=0.3, E=0.7, kappa=1.3)
    assert eval_law(F.FORGETTING_KAPPA, p, Covariates(1e8, 1e6, 1.0)) == 0.7
    flat = LawParams(A=2.0, alpha=0.5, beta=0.3, E=0.7, kappa=0.0)
    vals = evaluate(F.FORGETTING_KAPPA, flat, 1e8, 1e6, np.array([0.0, 0.5, 1.0]))
    assert np.all(vals == vals[0])


def test_zero_p_ignores_B():
    a = ARXIV_FG
    b = LawParams(A=a.A, alpha=a.alpha, beta=a.beta, B=a.B * 17, l0_pt=a.l0_pt)
    n = np.array([m.n_params for m in MODELS])
    assert np.array_equal(evaluate(F.FORGETTING_MULT, a, n, 1e6, 0.0), evaluate(F.FORGETTING_MULT, b, n, 1e6, 0.0))


def test_domain_errors():
    with pytest.raises(ValueError, match="n_params"):
        evaluate(F.MULTIPLICATIVE_FT, ARXIV_FT, 0, 1e6)
    with pytest.raises(ValueError, match="p must"):
        evaluate(F.MULTIPLICATIVE_FT, ARXIV_FT, 1e8, 1e6, 1.5)
    with pytest.raises(ValueError, match="no l0_pt entry"):
        evaluate(F.FORGETTING_MULT, ARXIV_FG, 12345, 1e6)


def test_params_validation():
    with pytest.raises(ValueError, match="exponent"):
        LawParams(A=1.0, alpha=2.5, beta=0.1, E=1.0).validate(F.MULTIPLICATIVE_FT)
    with pytest.raises(ValueError, match="non-negative"):
        LawParams(A=-1.0, alpha=0.5, beta=0.1, E=1.0).validate(F.MULTIPLICATIVE_FT)
    with pytest.raises(ValueError, match="parameter E"):
        LawParams(A=1.0, alpha=0.5, beta=0.1).validate(F.MULTIPLICATIVE_FT)
    with pytest.raises(ValueError, match="l0_pt"):
        LawParams(A=1.0, alpha=0.5, beta=0.1, B=1.0).validate(F.FORGETTING_MULT)


def test_params_serialization():
    d = ARXIV_FG.to_dict(F.FORGETTING_MULT)
    assert d["family"] == "forgetting_mult" and "E" not in d
    assert d["l0_pt"]["41000000"] == 3.19
    back = LawParams.from_dict(d)
    assert back == ARXIV_FG


def test_theta_roundtrip_and_floor():
    th = ARXIV_FT.to_theta(F.MULTIPLICATIVE_FT)
    back = LawParams.from_theta(F.MULTIPLICATIVE_FT, th)
    assert back.A == pytest.approx(95.18, rel=1e-15) and back.E == pytest.approx(1.30, rel=1e-15)
    floored = LawParams.from_theta(F.MULTIPLICATIVE_FT, [1.0, -10.0, 0.1, 0.1], e_floor=-10.0)
    assert floored.E == 0.0
    dropped = LawParams.from_theta(F.MULTIPLICATIVE_FT, [1.0, 0.1, 0.1], ("log_A", "alpha", "beta"))
    assert dropped.E == 0.0


@pytest.mark.parametrize("family", list(F))
def test_gradient_matches_high_precision_differences(family):
    rng = np.random.default_rng(7)
    l0 = l0_table()
    for _ in range(20):
        q, n, d, p = random_case(rng, family)
        g = grad_law(family, params_from_q(family, q, l0), Covariates(n, d, p))
        for name in FREE_PARAMS[family]:
            fd = mp_central_diff(family, q, name, n, d, p, l0[int(n)])
            assert abs(g[name] - fd) <= 1e-9 * abs(fd) + 1e-300, (name, g[name], fd)


@settings(max_examples=200, deadline=None)
@given(
    family=st.sampled_from(list(F)),
    seed=st.integers(0, 2**32 - 1),
)
def test_log_space_matches_direct(family, seed):
    q, n, d, p = random_case(np.random.default_rng(seed), family)
    params = params_from_q(family, q, l0_table())
    cov = Covariates(n, d, p)
    assert math.exp(log_space_eval(family, params, cov)) == pytest.approx(eval_law(family, params, cov), rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    n1=st.sampled_from([m.n_params for m in MODELS]),
    d=st.floats(1e5, 1e8),
    p1=st.floats(0.0, 0.5),
    dp=st.floats(1e-3, 0.5),
)
def test_forgetting_monotone(n1, d, p1, dp):
    n = np.array([n1, n1 * 2])
    l0 = {n1: 2.5, n1 * 2: 2.5}
    fg = LawParams(A=526, alpha=0.74, beta=0.34, B=392, l0_pt=l0)
    lo_p, hi_p = evaluate(F.FORGETTING_MULT, fg, n1, d, [p1, p1 + dp])
    assert hi_p < lo_p
    small_n, big_n = evaluate(F.FORGETTING_MULT, fg, n, d, p1)
    assert big_n < small_n
    lo_d, hi_d = evaluate(F.FORGETTING_MULT, fg, n1, [d, 2 * d], p1)
    assert hi_d > lo_d


def test_all_summands_vanish():
    q = {"log_A": 0.0, "alpha": 0.1, "beta": 0.1, "kappa": 1.0}
    logL, J = log_law_and_jacobian(F.FORGETTING_KAPPA, q, ("log_A", "alpha", "beta", "kappa"),
                                   np.log([1e8, 1e8]), np.log([1e6, 1e6]), np.array([1.0, 0.5]))
    assert logL[0] == -np.inf and np.all(J[0] == 0)
    assert np.isfinite(logL[1])


def test_response_and_batch_prediction():
    recs = [RunRecord("x", 41_000_000, 300_000, 0.0, 3.0, 3.3), RunRecord("x", 42, 300_000, 0.0, 3.0, 3.3)]
    ds = FitDataset(recs, "x")
    assert response(F.FORGETTING_ADDITIVE_DELTA, ds.subset([0]), l0_table())[0] == pytest.approx(3.3 - 3.19)
    with pytest.raises(ValueError, match="l0"):
        response(F.FORGETTING_ADDITIVE_DELTA, ds)
    preds = predict_batch(F.FORGETTING_MULT, ARXIV_FG, ds)
    assert preds[0].error is None and preds[0].predicted > 3.19
    assert preds[1].predicted is None and "no l0_pt entry" in preds[1].error
