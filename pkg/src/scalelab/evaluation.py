"""Error metrics and evaluation protocols.

Bootstrap and extrapolation estimates of fit quality, U-curve bottom
extraction from finetuning trajectories, the fraction of pretraining progress
undone by forgetting, and a two-proportion z-test for downstream accuracies.
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .core import MODELS_BY_NAME, FitDataset, LossCurve
from .fitting import FitConfig, FitError, _need_l0, _Problem, _fit_problem
from .laws import LawFamily, evaluate, response
from .rng import stream

__all__ = [
    "mre",
    "BootstrapConfig",
    "BootstrapResult",
    "bootstrap_mre",
    "resample_indices",
    "ExtrapolationSetup",
    "SETUPS",
    "split_extrapolation",
    "extrapolation_mre",
    "UCurveBottom",
    "ucurve_bottom",
    "median_smooth",
    "progress_lost",
    "ClampWarning",
    "ZTestResult",
    "two_proportion_ztest",
    "critical_value",
    "format_table",
    "write_rep_csv",
]


def mre(predictions, observations) -> float:
    """Mean relative error ``mean(|yhat - y| / y)``.

    Raises:
        ValueError: on a length mismatch, empty input or a non-positive
            observation.
    """
    yhat = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(observations, dtype=float).ravel()
    if yhat.shape != y.shape:
        raise ValueError(f"length mismatch: {yhat.size} predictions vs {y.size} observations")
    if y.size == 0:
        raise ValueError("mre needs at least one observation")
    if np.any(y <= 0):
        raise ValueError("observations must be positive")
    return float(np.mean(np.abs(yhat - y) / y))


# ---------------------------------------------------------------------------
# Bootstrap


@dataclass(frozen=True)
class BootstrapConfig:
    repetitions: int = 128
    resample_size: Optional[int] = None  # None: size of the dataset
    seed: int = 0

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.resample_size is not None and self.resample_size < 1:
            raise ValueError("resample_size must be at least 1")


@dataclass
class BootstrapResult:
    """Outcome of :func:`bootstrap_mre`.

    ``per_rep`` holds NaN for repetitions whose fit failed; those indices are
    listed in ``failed`` and left out of ``mean``.
    """

    mean: float
    per_rep: list
    failed: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_rep"] = [None if math.isnan(x) else x for x in self.per_rep]
        return d


def resample_indices(seed: int, rep: int, n: int, size: Optional[int] = None) -> np.ndarray:
    """Uniform with-replacement draw of ``size`` indices out of ``n`` for one repetition."""
    return stream(seed, "bootstrap", rep).integers(0, n, size=n if size is None else size)


def _observed(family, dataset, l0):
    return response(family, dataset, l0)


def _predicted(family, params, dataset):
    return evaluate(family, params, dataset.n_params, dataset.dft_tokens, dataset.p)


def _one_rep(args):
    family, prob, idx, config, l0, full_y, dataset = args
    try:
        res = _fit_problem(family, prob.subset(idx), config, l0)
    except (FitError, ValueError) as e:
        return math.nan, f"{type(e).__name__}: {e}"
    return mre(_predicted(family, res.params, dataset), full_y), None


def _workers(requested: Optional[int]) -> int:
    if requested is not None:
        return max(1, int(requested))
    try:
        return max(1, int(os.environ.get("SCALELAB_THREADS", "1")))
    except ValueError:
        return 1


def bootstrap_mre(
    family,
    dataset: FitDataset,
    fit_config: Optional[FitConfig] = None,
    bs_config: Optional[BootstrapConfig] = None,
    l0: Optional[Mapping[int, float]] = None,
    sampler: Optional[Callable[[int, int, int], np.ndarray]] = None,
    workers: Optional[int] = None,
) -> BootstrapResult:
    """Mean MRE of refits on with-replacement resamples of ``dataset``.

    Each repetition draws ``resample_size`` records uniformly with
    replacement, fits on them, and scores the refit against the full
    original dataset (in-sample MRE; recorded in ``metadata``).

    Args:
        family: law family to fit.
        dataset: records to resample.
        fit_config: settings for each refit.
        bs_config: repetitions, resample size and master seed.
        l0: per-size baseline for forgetting families.
        sampler: ``sampler(rep, n, size) -> indices``; defaults to
            :func:`resample_indices` keyed on the master seed.
        workers: process count; defaults to ``$SCALELAB_THREADS`` or 1. The
            result does not depend on it.
    """
    family = LawFamily(family)
    fit_config = fit_config or FitConfig()
    bs_config = bs_config or BootstrapConfig()
    _need_l0(family, l0)
    n = len(dataset)
    size = bs_config.resample_size or n
    if sampler is None:
        def sampler(rep, n_, k):
            return resample_indices(bs_config.seed, rep, n_, k)

    prob = _Problem.from_dataset(family, dataset, l0, fit_config.huber_delta)
    full_y = _observed(family, dataset, l0)
    jobs = [
        (family, prob, np.asarray(sampler(rep, n, size)), fit_config, l0, full_y, dataset)
        for rep in range(bs_config.repetitions)
    ]
    nw = min(_workers(workers), len(jobs))
    if nw > 1:
        with ProcessPoolExecutor(max_workers=nw) as ex:
            outcomes = list(ex.map(_one_rep, jobs))
    else:
        outcomes = [_one_rep(j) for j in jobs]

    per_rep = [v for v, _ in outcomes]
    failed = [i for i, (_, err) in enumerate(outcomes) if err is not None]
    ok = [v for v in per_rep if not math.isnan(v)]
    return BootstrapResult(
        mean=float(np.mean(ok)) if ok else math.nan,
        per_rep=per_rep,
        failed=failed,
        metadata={
            "family": family.value,
            "repetitions": bs_config.repetitions,
            "resample_size": size,
            "seed": bs_config.seed,
            "mre_reference": "full original dataset (in-sample)",
            "n_failed": len(failed),
            "failures": {i: outcomes[i][1] for i in failed},
        },
    )


def write_rep_csv(result: BootstrapResult, path) -> None:
    """Per-repetition MREs as CSV ``rep,mre`` (failed reps left blank)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rep", "mre"])
        for i, v in enumerate(result.per_rep):
            w.writerow([i, "" if math.isnan(v) else repr(float(v))])


# ---------------------------------------------------------------------------
# Extrapolation


@dataclass(frozen=True)
class ExtrapolationSetup:
    """Held-out strata: a record is held out if its size OR its token count is excluded."""

    tag: str
    excluded_model_sizes: tuple
    excluded_token_counts: tuple

    @property
    def excluded_params(self) -> frozenset:
        return frozenset(MODELS_BY_NAME[m].n_params for m in self.excluded_model_sizes)

    def held_out(self, record) -> bool:
        return record.n_params in self.excluded_params or record.dft_tokens in self.excluded_token_counts


SETUPS = {
    "A": ExtrapolationSetup("A", ("XL",), (30_000_000,)),
    "B": ExtrapolationSetup("B", ("Large", "XL"), (9_000_000, 30_000_000)),
}


def split_extrapolation(dataset: FitDataset, setup) -> tuple[FitDataset, FitDataset]:
    """Split into (train, test); test is every record matching an exclusion."""
    if isinstance(setup, str):
        setup = SETUPS[setup]
    mask = [setup.held_out(r) for r in dataset]
    test = dataset.where(mask)
    train = dataset.where([not m for m in mask])
    if len(train) == 0 or len(test) == 0:
        raise ValueError(f"setup {setup.tag} leaves an empty {'train' if len(train) == 0 else 'test'} stratum")
    return train, test


def extrapolation_mre(
    family,
    dataset: FitDataset,
    setup,
    fit_config: Optional[FitConfig] = None,
    l0: Optional[Mapping[int, float]] = None,
) -> float:
    """Fit on the retained strata, report MRE on the held-out ones only."""
    from .fitting import fit

    family = LawFamily(family)
    train, test = split_extrapolation(dataset, setup)
    res = fit(family, train, fit_config, l0)
    return mre(_predicted(family, res.params, test), _observed(family, test, l0))


# ---------------------------------------------------------------------------
# U-curve bottom


class UCurveBottom(NamedTuple):
    step: float
    loss: float
    smoothed: float
    no_overfitting: bool


def median_smooth(values, window: int = 5) -> np.ndarray:
    """Centered running median; the window is truncated at both ends."""
    v = np.asarray(values, dtype=float)
    h = window // 2
    return np.array([np.median(v[max(0, i - h): i + h + 1]) for i in range(v.size)])


def ucurve_bottom(curve: LossCurve, window: int = 5) -> UCurveBottom:
    """Step and raw ``val_ft`` loss at the minimum of the median-smoothed curve.

    Ties in the smoothed series go to the lowest raw loss, then the earliest
    step. ``no_overfitting`` is set when the smoothed curve ends at its
    minimum, i.e. it never turns back up (a final plateau counts).
    """
    y = np.asarray(curve.val_ft, dtype=float)
    if y.size < 1:
        raise ValueError("ucurve_bottom needs at least one point")
    s = median_smooth(y, window)
    tied = np.flatnonzero(s == s.min())
    i = int(tied[np.argmin(y[tied])])  # argmin returns the first of equal raw values
    return UCurveBottom(float(curve.steps[i]), float(y[i]), float(s[i]), bool(s[-1] == s[i]))


# ---------------------------------------------------------------------------
# Progress lost


class ClampWarning(UserWarning):
    """A post-finetuning loss outside the pretraining curve's range was clamped."""


def progress_lost(pt_loss_after: float, pretrain_curve: LossCurve) -> float:
    """Fraction ``1 - t*/T`` of a pretraining run undone by forgetting.

    ``t*`` is the earliest step at which the (running-minimum) pretraining
    loss curve reaches ``pt_loss_after``, linearly interpolated between
    logged steps; ``T`` is the last step. Losses above the initial value
    clamp to 1 and below the final value to 0, with a :class:`ClampWarning`.
    """
    steps = np.asarray(pretrain_curve.steps, dtype=float)
    if steps.size == 0 or pretrain_curve.val_pt is None:
        raise ValueError("progress_lost needs a non-empty val_pt series")
    y = np.minimum.accumulate(np.asarray(pretrain_curve.val_pt, dtype=float))
    T = steps[-1]
    if pt_loss_after > y[0]:
        warnings.warn(f"loss {pt_loss_after} above the initial {y[0]}; clamped to 1", ClampWarning, stacklevel=2)
        return 1.0
    if pt_loss_after < y[-1]:
        warnings.warn(f"loss {pt_loss_after} below the final {y[-1]}; clamped to 0", ClampWarning, stacklevel=2)
        return 0.0
    k = int(np.argmax(y <= pt_loss_after))
    if k == 0 or y[k] == pt_loss_after:
        t_star = steps[k]
    else:
        y0, y1 = y[k - 1], y[k]
        t_star = steps[k - 1] + (y0 - pt_loss_after) / (y0 - y1) * (steps[k] - steps[k - 1])
    return float(1.0 - t_star / T)


# ---------------------------------------------------------------------------
# Significance test

_Z99 = 2.5758


def critical_value(level: float = 0.99) -> float:
    """Two-sided standard-normal critical value."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if level == 0.99:
        return _Z99
    return float(ndtri(0.5 + level / 2))


class ZTestResult(NamedTuple):
    z: float
    critical: float
    significant: bool
    delta_points: Optional[float]

    @property
    def label(self) -> str:
        return f"{self.delta_points:+.1f}" if self.significant else "n.s."


def two_proportion_ztest(acc_a: float, n_a: int, acc_b: float, n_b: int, level: float = 0.99) -> ZTestResult:
    """Pooled two-proportion z-test of ``acc_a`` against ``acc_b``.

    Returns:
        The statistic, the critical value, and the accuracy difference in
        percentage points when significant (``None`` otherwise).
    """
    for a in (acc_a, acc_b):
        if not 0 <= a <= 1:
            raise ValueError("accuracies must lie in [0, 1]")
    if n_a < 1 or n_b < 1:
        raise ValueError("sample sizes must be at least 1")
    crit = critical_value(level)
    pooled = (acc_a * n_a + acc_b * n_b) / (n_a + n_b)
    var = pooled * (1 - pooled) * (1 / n_a + 1 / n_b)
    if var == 0:
        return ZTestResult(0.0, crit, False, None)
    z = (acc_a - acc_b) / math.sqrt(var)
    sig = abs(z) > crit
    return ZTestResult(z, crit, sig, 100.0 * (acc_a - acc_b) if sig else None)


# ---------------------------------------------------------------------------
# Reports


def format_table(rows: Sequence[Mapping], columns: Sequence[str]) -> str:
    """Aligned-column text rendering of a list of dicts."""

    def cell(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    body = [[cell(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) if body else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


def to_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)
