"""Token streams for finetuning with pretraining-data injection.

Streams are flat runs of 16-bit token ids cut into fixed-length rows. A
finetuning stream may be capped to a budget of unique tokens and repeated
over epochs; the mixture sampler draws each row from the pretraining stream
with probability ``p``. Instruction-tuning data keeps its loss mask in bit 15
of each id.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .rng import stream as rng_stream

__all__ = [
    "ID_LIMIT",
    "MASK_BIT",
    "DomainStream",
    "Cursor",
    "Batch",
    "next_epoch_batch",
    "MixtureConfig",
    "MixtureBatch",
    "MixtureStream",
    "sample_mixture",
    "mixture_sources",
    "binomial_band",
    "tokens_seen",
    "MaskedToken",
    "pack_masked",
    "unpack_masked",
    "pack_array",
    "unpack_array",
    "masked_loss_positions",
    "write_stream",
    "read_stream",
    "write_mixture_manifest",
    "read_mixture_manifest",
]

ID_LIMIT = 1 << 15
MASK_BIT = 1 << 15

REPEAT_EPOCHS = "repeat_epochs"
STREAM_ONCE = "stream_once_then_repeat"


@dataclass
class DomainStream:
    """Ordered token sequences of one domain.

    ``unique_token_budget`` keeps only the first that many tokens (the
    concatenation of ``sequences``), imitating a scarce dataset; ``None``
    uses everything.
    """

    name: str
    sequences: Sequence
    unique_token_budget: Optional[int] = None
    cycle_policy: str = REPEAT_EPOCHS
    tokens: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.cycle_policy not in (REPEAT_EPOCHS, STREAM_ONCE):
            raise ValueError(f"unknown cycle_policy {self.cycle_policy!r}")
        seqs = [np.asarray(s, dtype=np.int64).ravel() for s in self.sequences]
        flat = np.concatenate(seqs) if seqs else np.zeros(0, dtype=np.int64)
        if flat.size and (flat.min() < 0 or flat.max() >= ID_LIMIT):
            raise ValueError("token ids must lie in [0, 32767]")
        if self.unique_token_budget is not None:
            if self.unique_token_budget < 1:
                raise ValueError("unique_token_budget must be positive")
            if self.unique_token_budget > flat.size:
                raise ValueError(
                    f"budget {self.unique_token_budget} exceeds the {flat.size} available tokens of {self.name}"
                )
            flat = flat[: self.unique_token_budget]
        self.sequences = seqs
        self.tokens = flat.astype(np.uint16)

    @property
    def budget(self) -> int:
        """Tokens per epoch."""
        return int(self.tokens.size)

    def __len__(self) -> int:
        return self.budget

    @classmethod
    def synthetic(cls, name, n_tokens, seq_len=1024, seed=0, vocab=32_000, **kw) -> "DomainStream":
        """Random ids, split into ``seq_len`` sequences; handy for demos and tests."""
        ids = rng_stream(seed, "tokens", name).integers(0, vocab, n_tokens)
        return cls(name, np.array_split(ids, max(1, math.ceil(n_tokens / seq_len))), **kw)


@dataclass(frozen=True)
class Cursor:
    position: int = 0  # token offset within the current epoch
    epoch: int = 0
    step: int = 0


@dataclass(frozen=True)
class Batch:
    """``rows`` is (batch, seq_len); tokens past ``valid`` are zero padding."""

    rows: np.ndarray
    valid: np.ndarray
    epoch: int

    @property
    def n_tokens(self) -> int:
        return int(self.valid.sum())


class _RowReader:
    """Pulls ``seq_len``-token rows from a stream, tracking epochs."""

    def __init__(self, stream: DomainStream, seq_len: int, cursor: Cursor = Cursor()):
        if stream.budget == 0:
            raise ValueError(f"stream {stream.name} is empty")
        self.s, self.seq_len = stream, seq_len
        self.pos, self.epoch = cursor.position, cursor.epoch

    def take(self, k: int, stop_at_epoch_end: bool = False):
        """Next ``k`` rows as (rows, valid mask). Under ``repeat_epochs`` the
        last row of an epoch is padded rather than spilling into the next."""
        L, budget, tok = self.seq_len, self.s.budget, self.s.tokens
        rows = np.zeros((k, L), dtype=np.uint16)
        valid = np.zeros((k, L), dtype=bool)
        aligned = self.s.cycle_policy == REPEAT_EPOCHS
        i = 0
        while i < k:
            if aligned:
                left = budget - self.pos
                full = min(k - i, left // L)
                if full:
                    rows[i: i + full] = tok[self.pos: self.pos + full * L].reshape(full, L)
                    valid[i: i + full] = True
                    i += full
                    self.pos += full * L
                if i < k and self.pos < budget:
                    n = budget - self.pos
                    rows[i, :n] = tok[self.pos:]
                    valid[i, :n] = True
                    i += 1
                    self.pos = budget
                if self.pos == budget:
                    self.pos = 0
                    self.epoch += 1
                    if stop_at_epoch_end:
                        break
            else:
                need = (k - i) * L
                rows[i:k] = tok[(self.pos + np.arange(need)) % budget].reshape(k - i, L)
                valid[i:k] = True
                self.epoch += (self.pos + need) // budget
                self.pos = (self.pos + need) % budget
                i = k
        return rows[:i], valid[:i]

    def cursor(self, step: int) -> Cursor:
        return Cursor(self.pos, self.epoch, step)


def next_epoch_batch(stream: DomainStream, cursor: Cursor, batch_size: int = 32, seq_len: int = 1024):
    """One training batch from a (possibly budgeted) stream.

    Returns:
        ``(batch, new_cursor, epoch)`` where ``epoch`` counts completed passes
        over the budget. Under ``repeat_epochs`` the batch that finishes an
        epoch is cut short (padded) so every epoch starts on a fresh batch;
        under ``stream_once_then_repeat`` rows wrap around the end of the
        stream and every batch is full.
    """
    reader = _RowReader(stream, seq_len, cursor)
    rows, valid = reader.take(batch_size, stop_at_epoch_end=True)
    if rows.shape[0] < batch_size:
        pad = batch_size - rows.shape[0]
        rows = np.vstack([rows, np.zeros((pad, seq_len), dtype=np.uint16)])
        valid = np.vstack([valid, np.zeros((pad, seq_len), dtype=bool)])
    new = reader.cursor(cursor.step + 1)
    return Batch(rows, valid, cursor.epoch), new, new.epoch


# ---------------------------------------------------------------------------
# Mixture sampling


@dataclass(frozen=True)
class MixtureConfig:
    p: float
    seed: int = 0
    batch_size: int = 32
    seq_len: int = 1024

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if self.batch_size < 1 or self.seq_len < 1:
            raise ValueError("batch_size and seq_len must be positive")


def mixture_sources(cfg: MixtureConfig, n_rows: int, start: int = 0) -> np.ndarray:
    """Boolean per-row provenance (True = pretraining) for rows ``start..start+n_rows``.

    Row ``r`` uses the ``r``-th uniform of one Philox stream keyed by the seed,
    so the draws do not depend on ``p`` or on how rows are batched.
    """
    return rng_stream(cfg.seed, "mixture").random(start + n_rows)[start:] < cfg.p


@dataclass(frozen=True)
class MixtureBatch:
    step: int
    rows: np.ndarray
    valid: np.ndarray
    from_pt: np.ndarray  # per-row provenance


class MixtureStream:
    """Single-consumer iterator over mixed batches."""

    def __init__(self, cfg: MixtureConfig, ft: DomainStream, pt: DomainStream):
        self.cfg = cfg
        self._ft = _RowReader(ft, cfg.seq_len)
        self._pt = _RowReader(pt, cfg.seq_len)
        self._u = rng_stream(cfg.seed, "mixture")
        self.step = 0
        self.provenance: list[np.ndarray] = []

    def __iter__(self) -> Iterator[MixtureBatch]:
        return self

    def __next__(self) -> MixtureBatch:
        cfg = self.cfg
        src = self._u.random(cfg.batch_size) < cfg.p
        rows = np.zeros((cfg.batch_size, cfg.seq_len), dtype=np.uint16)
        valid = np.zeros_like(rows, dtype=bool)
        k = int(src.sum())
        if k:
            rows[src], valid[src] = self._pt.take(k)
        if k < cfg.batch_size:
            rows[~src], valid[~src] = self._ft.take(cfg.batch_size - k)
        out = MixtureBatch(self.step, rows, valid, src)
        self.provenance.append(src)
        self.step += 1
        return out

    def take(self, n_batches: int) -> list[MixtureBatch]:
        return [next(self) for _ in range(n_batches)]

    @property
    def ft_epoch(self) -> int:
        return self._ft.epoch

    @property
    def pt_epoch(self) -> int:
        return self._pt.epoch


def sample_mixture(cfg: MixtureConfig, ft: DomainStream, pt: DomainStream) -> MixtureStream:
    """Mixed stream: each row comes from ``pt`` with probability ``cfg.p``, else from ``ft``."""
    if ft.budget == 0 or pt.budget == 0:
        raise ValueError("both streams must be non-empty")
    return MixtureStream(cfg, ft, pt)


def binomial_band(p: float, n: int, k: float = 3.0) -> tuple[float, float]:
    """``p +- k * sqrt(p(1-p)/n)`` clipped to [0, 1]."""
    if n < 1:
        raise ValueError("n must be at least 1")
    h = k * math.sqrt(p * (1 - p) / n)
    return max(0.0, p - h), min(1.0, p + h)


def tokens_seen(p: float, steps: int, batch: int, seqlen: int) -> tuple[int, int]:
    """Expected (pretraining, finetuning) tokens after ``steps`` mixed steps.

    Computed in exact rational arithmetic from the decimal value of ``p``;
    the pretraining count is rounded to nearest and the finetuning count is
    the remainder, so the two always sum to the total.
    """
    for v in (steps, batch, seqlen):
        if v < 0:
            raise ValueError("counts must be non-negative")
    total = int(steps) * int(batch) * int(seqlen)
    pt = round(Fraction(repr(float(p))) * total)
    return int(pt), total - int(pt)


# ---------------------------------------------------------------------------
# Mask packing


class MaskedToken(int):
    """A 16-bit packed token: id in the low 15 bits, loss mask in bit 15."""

    @property
    def id(self) -> int:
        return int(self) & (MASK_BIT - 1)

    @property
    def loss_mask(self) -> bool:
        return bool(int(self) & MASK_BIT)


def pack_masked(token_id: int, mask: bool) -> MaskedToken:
    if not 0 <= token_id < ID_LIMIT:
        raise ValueError(f"token id {token_id} does not fit in 15 bits")
    return MaskedToken(token_id | (int(bool(mask)) << 15))


def unpack_masked(packed: int) -> tuple[int, bool]:
    if not 0 <= packed < 1 << 16:
        raise ValueError(f"{packed} is not a 16-bit value")
    return packed & (MASK_BIT - 1), bool(packed & MASK_BIT)


def pack_array(ids, mask) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= ID_LIMIT):
        raise ValueError("token ids must lie in [0, 32767]")
    return (ids | (np.asarray(mask, dtype=np.int64) << 15)).astype(np.uint16)


def unpack_array(packed) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(packed, dtype=np.uint16)
    return a & np.uint16(MASK_BIT - 1), (a & np.uint16(MASK_BIT)) != 0


def masked_loss_positions(tokens) -> np.ndarray:
    """Positions whose mask bit is clear, i.e. where the loss is applied."""
    a = np.asarray(tokens, dtype=np.int64)
    return np.flatnonzero((a & MASK_BIT) == 0)


# ---------------------------------------------------------------------------
# Files


def write_stream(stream: DomainStream, path, masks: Optional[Sequence] = None) -> None:
    """Token ids as little-endian uint16 in ``path``; layout in ``path + '.json'``.

    ``masks``, one boolean array per sequence, is packed into bit 15 of each
    id; the manifest then marks the file as masked.
    """
    path = Path(path)
    lengths = [int(s.size) for s in stream.sequences]
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(int).tolist() if lengths else []
    flat = np.concatenate(stream.sequences) if lengths else np.zeros(0, dtype=np.int64)
    masked = masks is not None
    if masked:
        if [np.size(m) for m in masks] != lengths:
            raise ValueError("masks must match the sequence lengths")
        flat = pack_array(flat, np.concatenate([np.asarray(m, dtype=bool) for m in masks]) if lengths else [])
    flat.astype("<u2").tofile(path)
    meta = {
        "name": stream.name,
        "offsets": offsets,
        "lengths": lengths,
        "unique_token_budget": stream.unique_token_budget,
        "cycle_policy": stream.cycle_policy,
        "masked": masked,
    }
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_stream(path, raw: bool = False):
    """Load a stream written by :func:`write_stream`.

    With ``raw=True`` returns the packed sequences (masked data keeps bit 15)
    instead of a :class:`DomainStream`.
    """
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    flat = np.fromfile(path, dtype="<u2")
    seqs = [flat[o: o + n] for o, n in zip(meta["offsets"], meta["lengths"])]
    if raw:
        return seqs, meta
    if meta.get("masked"):
        seqs = [unpack_array(s)[0] for s in seqs]
    return DomainStream(meta["name"], seqs, meta["unique_token_budget"], meta["cycle_policy"])


def write_mixture_manifest(ms: MixtureStream, path) -> None:
    """Per-row provenance as CSV ``step,row,source``; seed and p in ``path + '.json'``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "row", "source"])
        for step, src in enumerate(ms.provenance):
            for row, s in enumerate(src):
                w.writerow([step, row, "pt" if s else "ft"])
    meta = {"seed": ms.cfg.seed, "p": ms.cfg.p, "batch_size": ms.cfg.batch_size, "seq_len": ms.cfg.seq_len}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_mixture_manifest(path) -> np.ndarray:
    """Per-row provenance (True = pretraining) from a manifest CSV."""
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if r.fieldnames != ["step", "row", "source"]:
            raise ValueError(f"{path}: expected header step,row,source")
        out = []
        for line, row in enumerate(r, start=2):
            if row["source"] not in ("pt", "ft"):
                raise ValueError(f"{path}:{line}: unknown source {row['source']!r}")
            out.append(row["source"] == "pt")
    return np.array(out, dtype=bool)
