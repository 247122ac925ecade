"""Domain types shared across scalelab: model configurations, run records,
loss curves, compute accounting and dataset validation."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "ModelSpec",
    "MODELS",
    "MODELS_BY_NAME",
    "MODELS_BY_PARAMS",
    "RunRecord",
    "FitDataset",
    "LossCurve",
    "DatasetValidationError",
    "ForgettingWarning",
    "flops_train",
    "flops_infer",
    "validate_dataset",
    "l0_table",
    "read_runs_jsonl",
    "write_runs_jsonl",
    "read_curve_csv",
    "write_curve_csv",
]

RUN_FIELDS = (
    "domain",
    "n_params",
    "dft_tokens",
    "p",
    "min_val_ft_loss",
    "pt_loss_at_min",
    "steps_to_min",
    "seq_len",
    "batch_size",
)

CURVE_HEADER = ("step", "train_ft", "val_ft", "val_pt")


class DatasetValidationError(ValueError):
    """Raised by :func:`validate_dataset`; ``issues`` holds one entry per violation."""

    def __init__(self, issues: list[dict]):
        self.issues = issues
        lines = [f"  [{i['index']}] {i['message']}" if i.get("index") is not None else f"  {i['message']}"
                 for i in issues]
        super().__init__(f"{len(issues)} dataset issue(s):\n" + "\n".join(lines))


class ForgettingWarning(UserWarning):
    """A record reports a pretraining loss below its rewarmed baseline."""


def _as_count(x, name: str) -> int:
    if isinstance(x, (float, np.floating)):
        if not math.isfinite(x) or x != int(x):
            raise ValueError(f"{name} must be an integral count, got {x!r}")
    v = int(x)
    if v <= 0:
        raise ValueError(f"{name} must be positive, got {x!r}")
    return v


def flops_train(n_params, tokens) -> int:
    """Training compute, ``6 * N * D``, in exact integer arithmetic."""
    return 6 * _as_count(n_params, "n_params") * _as_count(tokens, "tokens")


def flops_infer(n_params, tokens) -> int:
    """Inference compute, ``2 * N * D``."""
    return 2 * _as_count(n_params, "n_params") * _as_count(tokens, "tokens")


@dataclass(frozen=True)
class ModelSpec:
    """One pretrained model configuration.

    ``pt_loss_terminal`` is the pretraining loss at the end of the cosine
    schedule; ``pt_loss_rewarmed`` is measured after raising the learning rate
    to the constant finetuning value, and is the baseline forgetting is
    measured against.
    """

    name: str
    n_params: int
    dim: int
    heads: int
    layers: int
    batch_size: int
    init_lr: float
    pretrain_tokens: int
    pt_loss_terminal: float
    pt_loss_rewarmed: float

    def __post_init__(self):
        if self.n_params <= 0 or self.pretrain_tokens <= 0:
            raise ValueError(f"{self.name}: n_params and pretrain_tokens must be positive")
        if self.pt_loss_rewarmed < self.pt_loss_terminal:
            raise ValueError(f"{self.name}: rewarmed loss below terminal loss")

    @property
    def flops(self) -> int:
        return flops_train(self.n_params, self.pretrain_tokens)


MODELS: tuple[ModelSpec, ...] = (
    ModelSpec("Tiny", 41_000_000, 512, 8, 8, 32, 1e-3, 5_100_000_000, 3.13, 3.19),
    ModelSpec("Small", 109_000_000, 768, 12, 12, 32, 1e-3, 12_000_000_000, 2.84, 2.92),
    ModelSpec("Medium", 334_000_000, 1024, 16, 24, 64, 1e-3, 33_000_000_000, 2.55, 2.60),
    ModelSpec("Large", 665_000_000, 1536, 16, 24, 128, 3e-4, 66_000_000_000, 2.34, 2.39),
    ModelSpec("XL", 1_270_000_000, 2048, 16, 24, 112, 3e-4, 100_000_000_000, 2.22, 2.27),
)
MODELS_BY_NAME = {m.name: m for m in MODELS}
MODELS_BY_PARAMS = {m.n_params: m for m in MODELS}

SEQ_LEN = 1024
VOCAB_SIZE = 32_000


def l0_table(which: str = "rewarmed", models: Iterable[ModelSpec] = MODELS) -> dict[int, float]:
    """Baseline pretraining loss per model size, keyed by parameter count."""
    if which not in ("rewarmed", "terminal"):
        raise ValueError(f"unknown baseline {which!r}")
    return {m.n_params: getattr(m, f"pt_loss_{which}") for m in models}


@dataclass(frozen=True)
class RunRecord:
    """Covariates and U-curve-bottom losses of one finetuning run."""

    domain: str
    n_params: int
    dft_tokens: int
    p: float
    min_val_ft_loss: float
    pt_loss_at_min: float
    steps_to_min: int = 0
    seq_len: int = SEQ_LEN
    batch_size: int = 32

    @property
    def covariates(self) -> tuple[int, int, float]:
        return (self.n_params, self.dft_tokens, self.p)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunRecord":
        missing = [k for k in RUN_FIELDS if k not in d]
        if missing:
            raise ValueError(f"missing field(s): {', '.join(missing)}")
        unknown = sorted(set(d) - set(RUN_FIELDS))
        if unknown:
            raise ValueError(f"unknown field(s): {', '.join(unknown)}")
        return cls(
            domain=str(d["domain"]),
            n_params=_as_count(d["n_params"], "n_params"),
            dft_tokens=_as_count(d["dft_tokens"], "dft_tokens"),
            p=float(d["p"]),
            min_val_ft_loss=float(d["min_val_ft_loss"]),
            pt_loss_at_min=float(d["pt_loss_at_min"]),
            steps_to_min=int(d["steps_to_min"]),
            seq_len=int(d["seq_len"]),
            batch_size=int(d["batch_size"]),
        )


@dataclass(frozen=True)
class FitDataset:
    """Records of one domain.

    The constructor does not enforce the ingestion invariants (unique
    covariates); bootstrap resamples legitimately repeat records. Use
    :func:`validate_dataset` on external data.
    """

    records: tuple[RunRecord, ...]
    domain: str

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def n_params(self) -> np.ndarray:
        return self.column("n_params")

    @property
    def dft_tokens(self) -> np.ndarray:
        return self.column("dft_tokens")

    @property
    def p(self) -> np.ndarray:
        return self.column("p")

    def subset(self, indices: Sequence[int]) -> "FitDataset":
        return FitDataset(tuple(self.records[i] for i in indices), self.domain)

    def where(self, mask: Sequence[bool]) -> "FitDataset":
        return FitDataset(tuple(r for r, m in zip(self.records, mask) if m), self.domain)


def validate_dataset(records, l0: Optional[Mapping[int, float]] = None) -> FitDataset:
    """Check ingestion invariants and build a :class:`FitDataset`.

    Args:
        records: sequence of :class:`RunRecord`, or an existing FitDataset.
        l0: optional per-size rewarmed baseline. When given, records with
            ``p < 1`` whose pretraining loss sits below the baseline trigger a
            :class:`ForgettingWarning` (measurement noise, not an error).

    Returns:
        The validated dataset. Validating a FitDataset that already satisfies
        every invariant returns the same object.

    Raises:
        DatasetValidationError: listing every violation with its record index.
    """
    recs = tuple(records)
    issues: list[dict] = []
    if not recs:
        raise DatasetValidationError([{"index": None, "rule": "empty", "message": "empty dataset"}])

    domains = sorted({r.domain for r in recs})
    if len(domains) > 1:
        first = recs[0].domain
        for i, r in enumerate(recs):
            if r.domain != first:
                issues.append({"index": i, "rule": "mixed_domain",
                               "message": f"domain {r.domain!r} differs from {first!r}"})

    seen: dict[tuple, int] = {}
    for i, r in enumerate(recs):
        if not 0.0 <= r.p <= 1.0 or not math.isfinite(r.p):
            issues.append({"index": i, "rule": "p_range", "message": f"p={r.p} outside [0, 1]"})
        for name in ("min_val_ft_loss", "pt_loss_at_min"):
            v = getattr(r, name)
            if not (math.isfinite(v) and v > 0):
                issues.append({"index": i, "rule": "non_positive_loss", "message": f"{name}={v} is not positive"})
        if r.dft_tokens <= 0 or r.n_params <= 0:
            issues.append({"index": i, "rule": "non_positive_count", "message": "counts must be positive"})
        key = r.covariates
        if key in seen:
            j = seen[key]
            issues.append({"index": i, "rule": "duplicate", "other": j,
                           "message": f"duplicate covariates {key} (records {j} and {i})"})
        else:
            seen[key] = i

    if issues:
        raise DatasetValidationError(issues)

    if l0 is not None:
        for i, r in enumerate(recs):
            base = l0.get(r.n_params)
            if base is not None and r.p < 1 and r.pt_loss_at_min < base:
                warnings.warn(f"record {i}: pt_loss_at_min {r.pt_loss_at_min} below baseline {base}",
                              ForgettingWarning, stacklevel=2)

    if isinstance(records, FitDataset):
        return records
    return FitDataset(recs, recs[0].domain)


@dataclass(frozen=True, eq=False)
class LossCurve:
    """Step-indexed loss trajectory of one run. Optional series may be None."""

    run_id: str
    steps: np.ndarray
    val_ft: np.ndarray
    train_ft: Optional[np.ndarray] = None
    val_pt: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=float)
        object.__setattr__(self, "steps", steps)
        if steps.ndim != 1 or np.any(np.diff(steps) <= 0):
            raise ValueError("steps must be strictly increasing")
        for name in ("val_ft", "train_ft", "val_pt"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v, dtype=float)
            if v.shape != steps.shape:
                raise ValueError(f"{name} has {v.size} points, steps has {steps.size}")
            object.__setattr__(self, name, v)


def read_runs_jsonl(path) -> list[RunRecord]:
    """Parse a RunRecord JSONL file. Errors name the 1-based line number."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(RunRecord.from_dict(json.loads(line)))
            except (ValueError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: {e}") from e
    return out


def write_runs_jsonl(records: Iterable[RunRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict()) + "\n")


def _fmt(v: float) -> str:
    return repr(float(v))


def write_curve_csv(curve: LossCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for i, s in enumerate(curve.steps):
            row = [str(int(s)) if float(s).is_integer() else _fmt(s)]
            for name in ("train_ft", "val_ft", "val_pt"):
                v = getattr(curve, name)
                row.append("" if v is None else _fmt(v[i]))
            w.writerow(row)


def read_curve_csv(path, run_id: Optional[str] = None) -> LossCurve:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CURVE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CURVE_HEADER)}")
        rows = [r for r in reader if r]
    cols = list(zip(*rows)) if rows else [()] * 4

    def series(j):
        cells = cols[j]
        if all(c == "" for c in cells):
            return None
        if any(c == "" for c in cells):
            raise ValueError(f"{path}: column {CURVE_HEADER[j]} is partially empty")
        return np.array([float(c) for c in cells])

    val_ft = series(2)
    if val_ft is None:
        raise ValueError(f"{path}: val_ft column is empty")
    return LossCurve(run_id or Path(path).stem, series(0), val_ft, series(1), series(3))
