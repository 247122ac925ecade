"""Coefficient estimation: Huber loss on log-residuals, minimized by bounded
L-BFGS from every point of a Cartesian initialization grid."""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from . import _kernels
from .laws import FREE_PARAMS, LawFamily, LawParams, log_law_and_jacobian, needs_l0, response

__all__ = [
    "FitConfig",
    "FitResult",
    "StartDiagnostic",
    "FitError",
    "huber",
    "huber_grad",
    "objective",
    "fit",
    "default_grid",
    "default_bounds",
    "LOG_E_FLOOR",
]

LOG_E_FLOOR = -10.0

_GRID = {
    "log_A": (0.0, 3.0, 6.0, 9.0, 12.0),
    "log_B": (0.0, 3.0, 6.0, 9.0, 12.0),
    "log_E": (-2.0, -1.5, -1.0, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0),
    "alpha": (0.0, 0.5, 1.0),
    "beta": (0.0, 0.5, 1.0),
    "kappa": (0.0, 0.5, 1.0),
}

_BOUNDS = {
    "log_A": (-30.0, 30.0),
    "log_B": (-30.0, 30.0),
    "log_E": (LOG_E_FLOOR, 5.0),
    "alpha": (0.0, 2.0),
    "beta": (0.0, 2.0),
    "kappa": (0.0, 2.0),
}


def default_grid(family) -> dict[str, list[float]]:
    return {n: list(_GRID[n]) for n in FREE_PARAMS[LawFamily(family)]}


def default_bounds(family) -> dict[str, tuple[float, float]]:
    return {n: _BOUNDS[n] for n in FREE_PARAMS[LawFamily(family)]}


class FitError(RuntimeError):
    """Every start of a fit failed. ``diagnostics`` lists what happened to each."""

    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class _Abort(Exception):
    pass


def huber(r, delta: float):
    """Huber penalty: quadratic inside ``|r| <= delta``, linear outside."""
    r = np.asarray(r, dtype=float)
    a = np.abs(r)
    out = np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))
    return out if out.ndim else float(out)


def huber_grad(r, delta: float):
    r = np.asarray(r, dtype=float)
    return np.where(np.abs(r) <= delta, r, delta * np.sign(r))


@dataclass
class FitConfig:
    """Settings of a multi-start fit.

    ``init_grid`` and ``bounds`` default to the family's standard grid and box
    when left as ``None``; a partial mapping overrides only the named
    coordinates.
    """

    huber_delta: float = 1e-4
    init_grid: Optional[dict] = None
    max_iterations: int = 500
    grad_tolerance: float = 1e-9
    bounds: Optional[dict] = None
    memory: int = 10

    def __post_init__(self):
        if not self.huber_delta > 0:
            raise ValueError("huber_delta must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")

    def grid_for(self, family) -> dict[str, list[float]]:
        g = default_grid(family)
        for k, v in (self.init_grid or {}).items():
            if k in g:
                g[k] = [float(x) for x in v]
        for k, v in g.items():
            if not v:
                raise ValueError(f"init grid for {k} is empty")
        return g

    def bounds_for(self, family) -> dict[str, tuple[float, float]]:
        b = default_bounds(family)
        for k, v in (self.bounds or {}).items():
            if k in b:
                lo, hi = (float(x) for x in v)
                if lo > hi:
                    raise ValueError(f"bound for {k} is empty: [{lo}, {hi}]")
                b[k] = (lo, hi)
        grid = self.grid_for(family)
        for k, pts in grid.items():
            lo, hi = b[k]
            bad = [x for x in pts if not lo <= x <= hi]
            if bad:
                raise ValueError(f"grid points {bad} for {k} fall outside bounds [{lo}, {hi}]")
        return b

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["bounds"] is not None:
            d["bounds"] = {k: list(v) for k, v in d["bounds"].items()}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "FitConfig":
        d = dict(d)
        if d.get("bounds") is not None:
            d["bounds"] = {k: tuple(v) for k, v in d["bounds"].items()}
        return cls(**d)


@dataclass
class StartDiagnostic:
    index: int
    x0: list
    objective: float
    converged: bool
    iterations: int
    message: str


@dataclass
class FitResult:
    family: LawFamily
    params: LawParams
    objective: float
    n_starts: int
    best_start_index: int
    converged: bool
    seed_provenance: str
    theta: list = field(default_factory=list)
    free_params: list = field(default_factory=list)
    e_at_floor: bool = False
    config: FitConfig = field(default_factory=FitConfig)
    starts: list = field(default_factory=list, repr=False)

    def predict(self, dataset) -> np.ndarray:
        from .laws import evaluate

        return evaluate(self.family, self.params, dataset.n_params, dataset.dft_tokens, dataset.p)

    def to_dict(self, include_starts: bool = True) -> dict:
        return {
            "family": self.family.value,
            "params": self.params.to_dict(self.family),
            "objective": self.objective,
            "n_starts": self.n_starts,
            "best_start_index": self.best_start_index,
            "converged": self.converged,
            "seed_provenance": self.seed_provenance,
            "theta": list(self.theta),
            "free_params": list(self.free_params),
            "e_at_floor": self.e_at_floor,
            "config": self.config.to_dict(),
            "starts": [asdict(s) for s in self.starts] if include_starts else [],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FitResult":
        return cls(
            family=LawFamily(d["family"]),
            params=LawParams.from_dict(d["params"]),
            objective=d["objective"],
            n_starts=d["n_starts"],
            best_start_index=d["best_start_index"],
            converged=d["converged"],
            seed_provenance=d["seed_provenance"],
            theta=list(d.get("theta", [])),
            free_params=list(d.get("free_params", [])),
            e_at_floor=d.get("e_at_floor", False),
            config=FitConfig.from_dict(d.get("config", {})),
            starts=[StartDiagnostic(**s) for s in d.get("starts", [])],
        )

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), sort_keys=True, indent=2)


class _Problem:
    """Log-covariates and log-responses of a dataset, prepared once per fit."""

    def __init__(self, family, n, d, p, y, l0=None, delta=1e-4):
        self.family = LawFamily(family)
        y = np.asarray(y, dtype=float)
        if np.any(~np.isfinite(y)) or np.any(y <= 0):
            raise ValueError("observed responses must be positive to take logs")
        self.logn = np.log(np.asarray(n, dtype=float))
        self.logd = np.log(np.asarray(d, dtype=float))
        self.p = np.asarray(p, dtype=float)
        self.logy = np.log(y)
        self.l0 = None if l0 is None else np.asarray(l0, dtype=float)
        self.delta = delta
        self._prepare()

    def _prepare(self):
        self._code = _kernels.FAMILY_CODE[self.family.value]
        self._logl0 = np.log(self.l0) if self.l0 is not None else np.zeros_like(self.logn)
        self._th = np.zeros(6)
        self._grad = np.zeros(6)
        self._layout = {}

    @classmethod
    def from_dataset(cls, family, dataset, l0_map=None, delta=1e-4):
        family = LawFamily(family)
        y = response(family, dataset, l0_map)
        l0 = None
        if family is LawFamily.FORGETTING_MULT:
            try:
                l0 = np.array([l0_map[r.n_params] for r in dataset])
            except KeyError as e:
                raise ValueError(f"no l0 entry for n_params={e.args[0]}") from None
        return cls(family, dataset.n_params, dataset.dft_tokens, dataset.p, y, l0, delta)

    def subset(self, idx) -> "_Problem":
        new = object.__new__(_Problem)
        new.family, new.delta = self.family, self.delta
        new.logn, new.logd, new.p, new.logy = self.logn[idx], self.logd[idx], self.p[idx], self.logy[idx]
        new.l0 = None if self.l0 is None else self.l0[idx]
        new._prepare()
        return new

    def _slots(self, names):
        lay = self._layout.get(names)
        if lay is None:
            pos = np.array([_kernels.COORDS.index(n) for n in names], dtype=np.int64)
            has = np.array([n in names for n in ("log_A", "log_B", "log_E")], dtype=np.bool_)
            lay = self._layout[names] = (pos, has)
        return lay

    def value_and_grad(self, theta, names):
        """Objective and gradient with respect to ``theta`` (ordered as ``names``)."""
        names = tuple(names)
        pos, has = self._slots(names)
        th = self._th
        th[:] = 0.0
        th[pos] = theta
        f = _kernels.huber_objective(
            self._code, th, has, self.logn, self.logd, self.p, self._logl0, self.logy, self.delta, self._grad
        )
        return float(f), self._grad[pos].copy()

    def value_and_grad_reference(self, theta, names):
        """Same quantity through the generic numpy route in :mod:`scalelab.laws`."""
        q = dict(zip(names, theta))
        logL, J = log_law_and_jacobian(self.family, q, names, self.logn, self.logd, self.p, self.l0)
        r = logL - self.logy
        return float(np.sum(huber(r, self.delta))), J.T @ huber_grad(r, self.delta)


def _need_l0(family, l0):
    if needs_l0(family) and l0 is None:
        raise ValueError(f"{LawFamily(family).value} needs a per-size l0 table (missing L0 table)")


def objective(family, params: LawParams, dataset, config: Optional[FitConfig] = None, l0=None) -> float:
    """Sum over records of ``Huber(log predicted - log observed)``.

    ``l0`` maps parameter count to pretraining baseline; when omitted the
    baseline stored on ``params`` is used.
    """
    family = LawFamily(family)
    config = config or FitConfig()
    if l0 is None and isinstance(params.l0_pt, Mapping):
        l0 = params.l0_pt
    if l0 is None and params.l0_pt is not None:
        l0 = {r.n_params: float(params.l0_pt) for r in dataset}
    _need_l0(family, l0)
    prob = _Problem.from_dataset(family, dataset, l0, config.huber_delta)
    names = FREE_PARAMS[family]
    theta = params.to_theta(family, names)
    keep = [i for i, t in enumerate(theta) if np.isfinite(t)]
    names = tuple(names[i] for i in keep)
    return prob.value_and_grad(theta[keep], names)[0]


def _run_start(prob: _Problem, x0, names, bounds, config: FitConfig):
    def fun(x):
        f, g = prob.value_and_grad(x, names)
        if not (math.isfinite(f) and np.all(np.isfinite(g))):
            raise _Abort("non-finite objective")
        return f, g

    res = minimize(
        fun,
        np.asarray(x0, dtype=float),
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={
            "maxiter": config.max_iterations,
            "gtol": config.grad_tolerance,
            "ftol": 0.0,
            "maxcor": config.memory,
        },
    )
    return res


def _provenance(family, names, grid, bounds, config) -> str:
    blob = json.dumps({"family": family.value, "names": names, "grid": grid, "bounds": bounds}, sort_keys=True)
    digest = hashlib.sha1(blob.encode()).hexdigest()[:12]
    return (
        f"grid:{digest} starts:{math.prod(len(v) for v in grid.values())} "
        f"optimizer:L-BFGS-B(m={config.memory},maxiter={config.max_iterations},"
        f"pgtol={config.grad_tolerance:g},ftol=0) huber_delta:{config.huber_delta:g}"
    )


def _fit_problem(family, prob: _Problem, config: FitConfig, l0=None) -> FitResult:
    family = LawFamily(family)
    names = FREE_PARAMS[family]
    grid = config.grid_for(family)
    bmap = config.bounds_for(family)
    bounds = [bmap[n] for n in names]
    if prob.logy.size < len(names):
        raise ValueError(f"{family.value} has {len(names)} free parameters but only {prob.logy.size} records")

    starts = []
    best = None  # (objective, norm, index, x)
    for idx, x0 in enumerate(itertools.product(*(grid[n] for n in names))):
        try:
            res = _run_start(prob, x0, names, bounds, config)
        except _Abort as e:
            starts.append(StartDiagnostic(idx, list(x0), math.inf, False, 0, str(e)))
            continue
        f = float(res.fun)
        ok = math.isfinite(f) and np.all(np.isfinite(res.x))
        starts.append(StartDiagnostic(idx, list(x0), f if ok else math.inf, bool(res.success), int(res.nit),
                                      str(res.message)))
        if not ok:
            continue
        key = (f, float(np.linalg.norm(res.x)), idx)
        if best is None or key < best[:3]:
            best = (*key, np.array(res.x), bool(res.success))

    if best is None:
        raise FitError(f"all {len(starts)} starts of {family.value} failed", starts)

    f, _, idx, x, converged = best
    theta, free = x, list(names)
    e_floor = bmap["log_E"][0] if "log_E" in bmap else None
    at_floor = e_floor is not None and x[names.index("log_E")] <= e_floor + 1e-9
    if at_floor:
        # Coefficient E pinned to its floor: refit with the summand removed so
        # that the reported E = 0 is the model actually being evaluated.
        j = names.index("log_E")
        free = [n for n in names if n != "log_E"]
        res = _run_start(prob, np.delete(x, j), tuple(free), [bmap[n] for n in free], config)
        theta, f, converged = np.array(res.x), float(res.fun), bool(res.success)

    params = LawParams.from_theta(family, theta, free, l0_pt=l0, e_floor=e_floor)
    return FitResult(
        family=family,
        params=params,
        objective=f,
        n_starts=len(starts),
        best_start_index=idx,
        converged=converged,
        seed_provenance=_provenance(family, list(names), grid, bmap, config),
        theta=[float(t) for t in theta],
        free_params=free,
        e_at_floor=bool(at_floor),
        config=config,
        starts=starts,
    )


def fit(family, dataset, config: Optional[FitConfig] = None, l0: Optional[Mapping[int, float]] = None) -> FitResult:
    """Fit one law family to a dataset.

    Args:
        family: law family to fit.
        dataset: a :class:`~scalelab.core.FitDataset` (duplicates allowed).
        config: fit settings; defaults to :class:`FitConfig`.
        l0: pretraining baseline per parameter count, required by the
            forgetting families that include it. It is a fixed input, never
            fitted.

    Returns:
        The best start by objective, ties broken by smaller parameter norm
        and then by lower start index.

    Raises:
        ValueError: too few records, missing baseline, non-positive responses.
        FitError: every start produced a non-finite objective.
    """
    family = LawFamily(family)
    config = config or FitConfig()
    _need_l0(family, l0)
    prob = _Problem.from_dataset(family, dataset, l0, config.huber_delta)
    return _fit_problem(family, prob, config, l0)
