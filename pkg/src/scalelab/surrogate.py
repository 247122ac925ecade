"""Synthetic run grids and loss trajectories generated from known laws.

Full-scale finetuning runs are not reproducible at desk scale, so these
generators serve as ground truth for the fitting and evaluation code: data
produced from known coefficients must be recovered by the fitter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import coefficients
from .core import MODELS, SEQ_LEN, FitDataset, LossCurve, ModelSpec, RunRecord, l0_table
from .laws import LawFamily, LawParams, evaluate
from .rng import stream

__all__ = [
    "SurrogateSpec",
    "CurveShape",
    "TOKEN_GRID",
    "P_GRID",
    "gen_grid",
    "gen_curve",
    "gen_ift_grid",
    "spec_for_domain",
    "ucurve_argmin",
]

TOKEN_GRID = (300_000, 900_000, 3_000_000, 9_000_000, 30_000_000)
P_GRID = (0.0, 0.001, 0.005, 0.01, 0.05)

# Epochs over the finetuning set used to fill the synthetic ``steps_to_min``.
EPOCHS_TO_MIN = 4


@dataclass(frozen=True)
class SurrogateSpec:
    ft_params: LawParams
    fg_params: LawParams
    model_grid: tuple = MODELS
    token_grid: tuple = TOKEN_GRID
    p_grid: tuple = P_GRID
    noise_sigma: float = 0.005
    seed: int = 0
    domain: str = "synthetic"
    pt_noise: str = "total"

    def __post_init__(self):
        if not (self.model_grid and self.token_grid and self.p_grid):
            raise ValueError("grids must be non-empty")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.pt_noise not in ("total", "excess"):
            raise ValueError("pt_noise must be 'total' or 'excess'")

    @property
    def l0(self) -> dict[int, float]:
        return {m.n_params: m.pt_loss_rewarmed for m in self.model_grid}


@dataclass(frozen=True)
class CurveShape:
    """Parameters of the synthetic finetuning trajectory.

    ``val_ft(t) = L_min + (L_start - L_min) * exp(-t / tau_fit) + overfit_rate * t**gamma``
    """

    tau_fit: float = 200.0
    overfit_rate: float = 2e-4
    gamma: float = 1.0
    steps_total: int = 12_000
    log_every: int = 10

    def __post_init__(self):
        if self.tau_fit <= 0 or self.overfit_rate < 0 or self.gamma <= 0:
            raise ValueError("curve shape parameters must be positive")
        if self.steps_total <= 0 or self.log_every <= 0:
            raise ValueError("steps_total and log_every must be positive")


def spec_for_domain(name: str, **kw) -> SurrogateSpec:
    """Surrogate spec using a domain's published coefficients."""
    models = kw.get("model_grid", MODELS)
    l0 = {m.n_params: m.pt_loss_rewarmed for m in models}
    return SurrogateSpec(coefficients.ft_params(name), coefficients.fg_params(name, l0), domain=name, **kw)


def _steps_to_min(d: int, batch: int) -> int:
    return max(1, math.ceil(EPOCHS_TO_MIN * d / (batch * SEQ_LEN)))


def gen_grid(spec: SurrogateSpec) -> FitDataset:
    """One record per (model, tokens, p) cell, in that nesting order.

    Both losses get multiplicative lognormal noise. With
    ``spec.pt_noise == "excess"`` the pretraining-loss noise multiplies only
    the rise above the baseline, which keeps every record at or above it but
    makes the noise on the total loss far smaller than ``noise_sigma``. Each
    cell draws from its own stream, so its value does not depend on the grid
    around it.
    """
    fg = replace(spec.fg_params, l0_pt=spec.l0)
    records = []
    for m in spec.model_grid:
        base = m.pt_loss_rewarmed
        for d in spec.token_grid:
            for p in spec.p_grid:
                lft = float(evaluate(LawFamily.MULTIPLICATIVE_FT, spec.ft_params, m.n_params, d, p))
                lpt = float(evaluate(LawFamily.FORGETTING_MULT, fg, m.n_params, d, p))
                if spec.noise_sigma > 0:
                    eps = stream(spec.seed, "grid", m.n_params, d, repr(p)).normal(0.0, spec.noise_sigma, 2)
                    lft *= math.exp(eps[0])
                    if spec.pt_noise == "excess":
                        lpt = base + (lpt - base) * math.exp(eps[1])
                    else:
                        lpt *= math.exp(eps[1])
                records.append(
                    RunRecord(
                        domain=spec.domain,
                        n_params=m.n_params,
                        dft_tokens=int(d),
                        p=float(p),
                        min_val_ft_loss=lft,
                        pt_loss_at_min=lpt,
                        steps_to_min=_steps_to_min(d, m.batch_size),
                        seq_len=SEQ_LEN,
                        batch_size=m.batch_size,
                    )
                )
    return FitDataset(tuple(records), spec.domain)


def gen_ift_grid(spec: Optional[SurrogateSpec] = None, **kw) -> FitDataset:
    """Grid generated from the instruction-finetuning (OpenHermes) coefficients."""
    if spec is None:
        spec = spec_for_domain("openhermes", **kw)
    return gen_grid(spec)


def ucurve_argmin(l_start: float, l_min: float, shape: CurveShape) -> float:
    """Continuous minimizer of the synthetic ``val_ft`` curve.

    Closed form for ``gamma = 1``; otherwise a bounded scalar search.
    """
    a = l_start - l_min
    b = shape.overfit_rate
    if b == 0 or a <= 0:
        return float(shape.steps_total) if b == 0 else 0.0
    if shape.gamma == 1.0:
        return float(np.clip(shape.tau_fit * math.log(a / (b * shape.tau_fit)), 0.0, shape.steps_total))
    from scipy.optimize import minimize_scalar

    res = minimize_scalar(
        lambda t: a * math.exp(-t / shape.tau_fit) + b * t**shape.gamma,
        bounds=(0.0, float(shape.steps_total)),
        method="bounded",
        options={"xatol": 1e-9},
    )
    return float(res.x)


def gen_curve(
    spec: SurrogateSpec,
    shape: CurveShape,
    cov,
    l_start: float,
    noise_sigma: float = 0.0,
    run_id: Optional[str] = None,
) -> LossCurve:
    """Synthetic finetuning trajectory for one run.

    Args:
        spec: supplies the finetuning and forgetting laws.
        shape: trajectory shape and logging cadence.
        cov: covariates (``n_params``, ``dft_tokens``, ``p``).
        l_start: finetuning-domain loss of the pretrained model at step 0.
        noise_sigma: optional per-point multiplicative noise on the
            validation series (seeded from ``spec.seed``).

    The pretraining loss rises monotonically from the baseline and reaches the
    forgetting law's value at the analytic bottom of the ``val_ft`` curve.
    """
    n, d, p = cov.n_params, cov.dft_tokens, getattr(cov, "p", 0.0)
    l_min = float(evaluate(LawFamily.MULTIPLICATIVE_FT, spec.ft_params, n, d, p))
    base = spec.l0[int(n)]
    fg = replace(spec.fg_params, l0_pt=spec.l0)
    l_fg = float(evaluate(LawFamily.FORGETTING_MULT, fg, n, d, p))

    t = np.arange(0, shape.steps_total + 1, shape.log_every, dtype=float)
    val_ft = l_min + (l_start - l_min) * np.exp(-t / shape.tau_fit) + shape.overfit_rate * t**shape.gamma
    train_ft = l_start * np.exp(-t / shape.tau_fit)

    t_bottom = max(ucurve_argmin(l_start, l_min, shape), float(shape.log_every))
    rise = -np.expm1(-t / t_bottom) / -math.expm1(-1.0)
    val_pt = base + (l_fg - base) * rise

    if noise_sigma > 0:
        rng = stream(spec.seed, "curve", int(n), int(d), repr(p))
        val_ft = val_ft * np.exp(rng.normal(0.0, noise_sigma, t.size))
        val_pt = val_pt * np.exp(rng.normal(0.0, noise_sigma, t.size))

    run_id = run_id or f"{spec.domain}-N{int(n)}-D{int(d)}-p{p:g}"
    return LossCurve(run_id, t, val_ft, train_ft, val_pt, meta={"t_bottom": t_bottom, "l_min": l_min})
