"""Next-token distribution records: data model, validation, stats, JSONL I/O.

A record holds one next-token probability distribution together with the token
that actually occurred ("gold"). The distribution is stored either densely
(full length-k vector) or sparsely (top-K token ids with their probabilities,
plus a single tail mass covering everything unlisted).
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

# Probability sums are accepted within this tolerance; 64-bit softmax outputs
# round-trip comfortably inside it. Reduced-precision dumps may need a wider
# value (see the eps arguments below).
SUM_EPS = 1e-6


class RecordFormatError(ValueError):
    """Malformed record file: bad JSON, missing keys, vocab mismatch, bad rows."""


class InvalidRecordError(ValueError):
    """An operation that requires a valid record received an invalid one."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid record: " + ", ".join(self.violations))


@dataclass(frozen=True)
class DenseBody:
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=np.float64))


@dataclass(frozen=True)
class SparseBody:
    ids: np.ndarray
    probs: np.ndarray
    tail_mass: float

    def __post_init__(self):
        object.__setattr__(self, "ids", np.asarray(self.ids, dtype=np.int64))
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=np.float64))
        object.__setattr__(self, "tail_mass", float(self.tail_mass))


@dataclass(frozen=True)
class DistributionRecord:
    seq_id: int
    pos: int
    vocab_size: int
    gold: int
    body: DenseBody | SparseBody

    @property
    def is_dense(self) -> bool:
        return isinstance(self.body, DenseBody)


@dataclass(frozen=True)
class RecordStats:
    entropy: float
    max_prob: float
    gold_prob: float


@dataclass
class Dataset:
    """Ordered collection of records plus free-form string metadata.

    Immutable by convention after construction; `_dense` caches the stacked
    probability matrix for all-dense datasets so fitting stays vectorized.
    """

    records: list
    metadata: dict = field(default_factory=dict)
    _dense: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class ReadReport:
    n_kept: int
    n_dropped: int
    violations: dict


def dense_record(seq_id, pos, vocab_size, gold, probs) -> DistributionRecord:
    return DistributionRecord(int(seq_id), int(pos), int(vocab_size), int(gold),
                              DenseBody(probs))


def sparse_record(seq_id, pos, vocab_size, gold, ids, probs, tail_mass) -> DistributionRecord:
    return DistributionRecord(int(seq_id), int(pos), int(vocab_size), int(gold),
                              SparseBody(ids, probs, tail_mass))


def validate_record(r: DistributionRecord, eps: float = SUM_EPS) -> list:
    """Return every invariant violation as a machine-readable code.

    Empty list means the record is valid. Codes: BAD_SHAPE, NEG_PROB, BAD_TAIL,
    DUP_ID, ID_OOB, BAD_SUM, GOLD_OOB.
    """
    v = []
    k = r.vocab_size
    if k < 1 or r.seq_id < 0 or r.pos < 0:
        v.append("BAD_SHAPE")
        return v
    b = r.body
    if isinstance(b, DenseBody):
        if b.probs.ndim != 1 or len(b.probs) != k:
            v.append("BAD_SHAPE")
            return v
        if np.any(b.probs < 0):
            v.append("NEG_PROB")
        total = float(b.probs.sum())
    else:
        if b.ids.ndim != 1 or b.probs.ndim != 1 or len(b.ids) != len(b.probs) or len(b.ids) > k:
            v.append("BAD_SHAPE")
            return v
        if np.any(b.probs < 0):
            v.append("NEG_PROB")
        if b.tail_mass < 0:
            v.append("BAD_TAIL")
        if len(np.unique(b.ids)) != len(b.ids):
            v.append("DUP_ID")
        if len(b.ids) and (b.ids.min() < 0 or b.ids.max() >= k):
            v.append("ID_OOB")
        total = float(b.probs.sum()) + b.tail_mass
    if not (1.0 - eps <= total <= 1.0 + eps):
        v.append("BAD_SUM")
    if not (0 <= r.gold < k):
        v.append("GOLD_OOB")
    return v


def require_valid(r: DistributionRecord, eps: float = SUM_EPS) -> None:
    v = validate_record(r, eps)
    if v:
        raise InvalidRecordError(v)


def dense_form(r: DistributionRecord) -> np.ndarray:
    """Full length-k probability vector; sparse tail spread uniformly."""
    if r.is_dense:
        return r.body.probs
    b = r.body
    k = r.vocab_size
    m = k - len(b.ids)
    out = np.full(k, b.tail_mass / m if m > 0 else 0.0)
    out[b.ids] = b.probs
    return out


def _entropy_terms(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def entropy(r: DistributionRecord, eps: float = SUM_EPS) -> float:
    """Shannon entropy in nats; 0*ln 0 taken as 0.

    For sparse bodies the tail mass is treated as spread uniformly over the
    k - |ids| unlisted tokens.
    """
    require_valid(r, eps)
    if r.is_dense:
        return _entropy_terms(r.body.probs)
    b = r.body
    h = _entropy_terms(b.probs)
    m = r.vocab_size - len(b.ids)
    if m > 0 and b.tail_mass > 0:
        h += -b.tail_mass * math.log(b.tail_mass / m)
    return h


def gold_prob(r: DistributionRecord) -> float:
    if r.is_dense:
        return float(r.body.probs[r.gold])
    b = r.body
    hits = np.nonzero(b.ids == r.gold)[0]
    if len(hits):
        return float(b.probs[hits[0]])
    m = r.vocab_size - len(b.ids)
    return b.tail_mass / m if m > 0 else 0.0


def record_stats(r: DistributionRecord, eps: float = SUM_EPS) -> RecordStats:
    require_valid(r, eps)
    if r.is_dense:
        mx = float(r.body.probs.max())
    else:
        b = r.body
        m = r.vocab_size - len(b.ids)
        share = b.tail_mass / m if m > 0 else 0.0
        mx = max(float(b.probs.max()) if len(b.probs) else 0.0, share)
    return RecordStats(entropy=entropy(r, eps), max_prob=mx, gold_prob=gold_prob(r))


def dataset_vocab(ds: Dataset) -> int:
    if not ds.records:
        raise ValueError("empty dataset")
    return ds.records[0].vocab_size


def dense_matrix(ds: Dataset) -> np.ndarray:
    """Stacked (n, k) probability matrix; requires an all-dense dataset."""
    if ds._dense is not None:
        return ds._dense
    if not all(r.is_dense for r in ds.records):
        raise ValueError("dataset contains sparse records")
    ds._dense = np.stack([r.body.probs for r in ds.records])
    return ds._dense


def golds(ds: Dataset) -> np.ndarray:
    return np.fromiter((r.gold for r in ds.records), dtype=np.int64, count=len(ds.records))


def entropies(ds: Dataset, eps: float = SUM_EPS) -> np.ndarray:
    if all(r.is_dense for r in ds.records):
        p = dense_matrix(ds)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
        return -t.sum(axis=1)
    return np.array([entropy(r, eps) for r in ds.records])


# ---------------------------------------------------------------------------
# JSON Lines I/O
# ---------------------------------------------------------------------------

def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory and rename; no partial files."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def record_to_obj(r: DistributionRecord) -> dict:
    o = {"seq": r.seq_id, "pos": r.pos, "gold": r.gold, "vocab": r.vocab_size}
    if r.is_dense:
        o["probs"] = [float(x) for x in r.body.probs]
    else:
        o["ids"] = [int(x) for x in r.body.ids]
        o["probs"] = [float(x) for x in r.body.probs]
        o["tail"] = float(r.body.tail_mass)
    return o


def record_from_obj(o: dict) -> DistributionRecord:
    if "ids" in o:
        return sparse_record(o["seq"], o["pos"], o["vocab"], o["gold"],
                             o["ids"], o["probs"], o["tail"])
    return dense_record(o["seq"], o["pos"], o["vocab"], o["gold"], o["probs"])


def write_dataset(ds: Dataset, path) -> None:
    lines = []
    if ds.metadata:
        lines.append(json.dumps({"meta": ds.metadata}))
    for r in ds.records:
        lines.append(json.dumps(record_to_obj(r)))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_dataset(path, strict: bool = True, eps: float = SUM_EPS):
    """Read a JSON Lines record file.

    strict=True aborts on the first bad row (error names the offending line);
    strict=False drops bad rows and counts them in the returned ReadReport.
    A vocab_size mismatch across records is always an error. Returns
    (Dataset, ReadReport).
    """
    records = []
    metadata = {}
    dropped = 0
    violations: dict = {}
    vocab = None
    seen_keys = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise RecordFormatError(f"line {lineno}: bad JSON ({e.msg})") from e
            if lineno == 1 and isinstance(obj, dict) and set(obj) == {"meta"}:
                metadata = {str(k): str(v) for k, v in obj["meta"].items()}
                continue
            try:
                r = record_from_obj(obj)
            except (KeyError, TypeError, ValueError) as e:
                raise RecordFormatError(f"line {lineno}: missing or bad field ({e})") from e
            if vocab is None:
                vocab = r.vocab_size
            elif r.vocab_size != vocab:
                raise RecordFormatError(
                    f"line {lineno}: vocab_size {r.vocab_size} != {vocab} seen earlier")
            codes = validate_record(r, eps)
            key = (r.seq_id, r.pos)
            if not codes and key in seen_keys:
                codes = ["DUP_KEY"]
            if codes:
                if strict:
                    raise RecordFormatError(f"line {lineno}: {', '.join(codes)}")
                dropped += 1
                for c in codes:
                    violations[c] = violations.get(c, 0) + 1
                continue
            seen_keys.add(key)
            records.append(r)
    ds = Dataset(records=records, metadata=metadata)
    return ds, ReadReport(n_kept=len(records), n_dropped=dropped, violations=violations)
