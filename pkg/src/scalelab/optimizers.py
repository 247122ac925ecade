"""Adam, AdamW and Anchored AdamW on plain parameter vectors.

Weight decay is decoupled from the Adam step and pulls the parameters toward
an anchor: the origin for AdamW, the starting weights ``theta0`` for the
anchored variant. The pull is applied in proximal (implicit) form

    theta <- theta_adam - c / (1 + c) * (theta_adam - anchor),   c = lr * lam

which agrees with the explicit ``theta_adam - lr * lam * (theta - anchor)``
to first order in ``lr * lam`` but stays stable when ``lr * lam > 2``. The
pull is exactly zero when ``lam = 0`` or when the point already sits on the
anchor.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

__all__ = [
    "OptimizerState",
    "OptimizerError",
    "init_state",
    "adam_step",
    "adamw_step",
    "anchored_adamw_step",
    "STEPS",
    "Trajectory",
    "run_toy_quadratic",
    "TOY_OPTIMUM",
    "toy_objective",
    "toy_gradient",
]


class OptimizerError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerState:
    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lam: float = 0.0
    theta0: Optional[np.ndarray] = None

    def __post_init__(self):
        k = np.shape(self.theta)
        if np.shape(self.m) != k or np.shape(self.v) != k:
            raise ValueError("theta, m and v must have the same shape")
        if self.theta0 is not None and np.shape(self.theta0) != k:
            raise ValueError("theta0 must match theta")
        if self.t < 0 or not self.lr > 0:
            raise ValueError("need t >= 0 and lr > 0")


def init_state(theta, lr=1e-3, lam=0.0, anchor=True, **kw) -> OptimizerState:
    """Fresh state at ``theta``; the anchor ``theta0`` is a copy of it."""
    theta = np.array(theta, dtype=float)
    z = np.zeros_like(theta)
    return OptimizerState(theta, z, z.copy(), 0, lr, lam=lam, theta0=theta.copy() if anchor else None, **kw)


def _adam(state: OptimizerState, grad) -> OptimizerState:
    g = np.asarray(grad, dtype=float)
    if g.shape != state.theta.shape:
        raise OptimizerError(f"gradient shape {g.shape} does not match theta {state.theta.shape}")
    t = state.t + 1
    if not np.all(np.isfinite(g)):
        raise OptimizerError(f"non-finite gradient at step {t}")
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    mhat = m / (1 - state.beta1**t)
    vhat = v / (1 - state.beta2**t)
    theta = state.theta - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return replace(state, theta=theta, m=m, v=v, t=t)


def _decay(state: OptimizerState, anchor) -> OptimizerState:
    c = state.lr * state.lam
    return replace(state, theta=state.theta - c / (1 + c) * (state.theta - anchor))


def adam_step(state: OptimizerState, grad) -> OptimizerState:
    return _adam(state, grad)


def adamw_step(state: OptimizerState, grad) -> OptimizerState:
    """Adam step followed by decoupled decay toward the origin."""
    return _decay(_adam(state, grad), 0.0)


def anchored_adamw_step(state: OptimizerState, grad) -> OptimizerState:
    """Adam step followed by decoupled decay toward ``state.theta0``."""
    if state.theta0 is None:
        raise OptimizerError("anchored AdamW needs theta0")
    return _decay(_adam(state, grad), state.theta0)


STEPS = {"adam": adam_step, "adamw": adamw_step, "anchored_adamw": anchored_adamw_step}

# ---------------------------------------------------------------------------
# Two-dimensional toy problem

TOY_OPTIMUM = np.array([2.0, -3.0])


def toy_objective(xy) -> float:
    x, y = xy
    return float((x - 2.0) ** 2 + (y + 3.0) ** 2)


def toy_gradient(xy) -> np.ndarray:
    return 2.0 * (np.asarray(xy, dtype=float) - TOY_OPTIMUM)


@dataclass
class Trajectory:
    points: np.ndarray  # (steps + 1, 2), starting point included
    values: np.ndarray
    meta: dict = field(default_factory=dict)
    states: list = field(default_factory=list, repr=False)

    @property
    def final(self) -> np.ndarray:
        return self.points[-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "x", "y", "f"])
            for i, ((x, y), f) in enumerate(zip(self.points, self.values)):
                w.writerow([i, repr(float(x)), repr(float(y)), repr(float(f))])


def run_toy_quadratic(variant: str, lam: float = 0.0, steps: int = 100, lr: float = 0.1, start=(4.0, 4.0),
                      **kw) -> Trajectory:
    """Minimize ``(x - 2)^2 + (y + 3)^2`` with one of the optimizers.

    Args:
        variant: ``"adam"``, ``"adamw"`` or ``"anchored_adamw"``.
        lam: weight-decay coefficient (ignored by ``"adam"``).
        steps: number of updates.
        lr: learning rate.
        start: starting point, which is also the anchor.
        **kw: ``beta1``, ``beta2`` or ``eps`` overrides.

    Returns:
        The visited points and objective values, with the settings in ``meta``.
    """
    try:
        step = STEPS[variant]
    except KeyError:
        raise ValueError(f"unknown optimizer {variant!r}; choose from {sorted(STEPS)}") from None
    state = init_state(start, lr=lr, lam=lam, **kw)
    states = [state]
    for _ in range(steps):
        state = step(state, toy_gradient(state.theta))
        states.append(state)
    pts = np.array([s.theta for s in states])
    return Trajectory(
        pts,
        np.array([toy_objective(p) for p in pts]),
        meta={"variant": variant, "lam": lam, "lr": lr, "steps": steps, "start": list(map(float, start)),
              "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps},
        states=states,
    )
