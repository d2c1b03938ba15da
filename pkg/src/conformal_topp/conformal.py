"""APS conformal scores and split-conformal calibration of top-p thresholds.

The score of a record is the total probability mass of every token at least
as probable as the gold token (ties included). Calibration takes the
ceil((n+1)(1-alpha))-th smallest score as the threshold q-hat, either over the
whole calibration set ("global") or independently inside entropy-percentile
bins ("binned").
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import records as rec


@dataclass(frozen=True)
class CalibrationModel:
    alpha: float
    mode: str                 # "global" | "binned"
    bin_edges: tuple          # B-1 entropy values (nats), nondecreasing
    qhats: tuple              # B thresholds in (0, 1]
    n_per_bin: tuple          # B calibration counts
    vocab_size: int
    meta: dict = field(default_factory=dict)

    @property
    def num_bins(self) -> int:
        return len(self.qhats)

    @property
    def n_calibration(self) -> int:
        return int(sum(self.n_per_bin))


@dataclass(frozen=True)
class ScoredRecord:
    record: rec.DistributionRecord
    score: float
    entropy: float


def aps_score(r: rec.DistributionRecord, eps: float = rec.SUM_EPS) -> float:
    """Mass of all tokens with probability >= the gold token's probability.

    Sparse rule: gold outside the listed ids scores 1.0 (conservative worst
    case); otherwise the tail joins the sum only when its uniform per-token
    share reaches the gold probability.
    """
    rec.require_valid(r, eps)
    if r.is_dense:
        p = r.body.probs
        gp = p[r.gold]
        # clamp float overshoot so scores stay usable as thresholds in (0, 1]
        return min(float(p[p >= gp].sum()), 1.0)
    b = r.body
    hits = np.nonzero(b.ids == r.gold)[0]
    if not len(hits):
        return 1.0
    gp = b.probs[hits[0]]
    s = float(b.probs[b.probs >= gp].sum())
    m = r.vocab_size - len(b.ids)
    if m > 0 and b.tail_mass / m >= gp:
        s += b.tail_mass
    return min(s, 1.0)


def _dense_scores(p: np.ndarray, gold: np.ndarray) -> np.ndarray:
    gp = p[np.arange(len(p)), gold]
    return np.minimum((p * (p >= gp[:, None])).sum(axis=1), 1.0)


def aps_scores(ds: rec.Dataset, eps: float = rec.SUM_EPS) -> np.ndarray:
    """Scores for every record; vectorized when the dataset is all dense."""
    if not ds.records:
        raise ValueError("empty dataset")
    if all(r.is_dense for r in ds.records):
        p = rec.dense_matrix(ds)
        g = rec.golds(ds)
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > eps):
            raise rec.InvalidRecordError(["NEG_PROB or BAD_SUM in dataset"])
        if np.any(g < 0) or np.any(g >= p.shape[1]):
            raise rec.InvalidRecordError(["GOLD_OOB"])
        return _dense_scores(p, g)
    return np.array([aps_score(r, eps) for r in ds.records])


def score_records(ds: rec.Dataset, eps: float = rec.SUM_EPS) -> list:
    s = aps_scores(ds, eps)
    h = rec.entropies(ds, eps)
    return [ScoredRecord(r, float(si), float(hi))
            for r, si, hi in zip(ds.records, s, h)]


def conformal_quantile(scores, alpha: float) -> float:
    """The ceil((n+1)(1-alpha))-th smallest score; 1.0 when the rank exceeds n.

    The clamp returns the maximal (full-vocabulary) threshold, the only value
    that cannot violate coverage when the finite-sample quantile is undefined.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("empty scores")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must be in (0,1), got {alpha}")
    n = s.size
    r = math.ceil((n + 1) * (1.0 - alpha) - 1e-12)
    if r > n:
        return 1.0
    return float(np.partition(s, r - 1)[r - 1])


def fit_global(ds: rec.Dataset, alpha: float, eps: float = rec.SUM_EPS) -> CalibrationModel:
    """Single-threshold calibration over the whole dataset."""
    s = aps_scores(ds, eps)
    q = conformal_quantile(s, alpha)
    return CalibrationModel(alpha=float(alpha), mode="global", bin_edges=(),
                            qhats=(q,), n_per_bin=(len(ds.records),),
                            vocab_size=rec.dataset_vocab(ds))


def percentile_edges(values: np.ndarray, num_bins: int) -> np.ndarray:
    """Nearest-rank (ceil) percentile edges splitting values into num_bins bins."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = len(v)
    idx = [math.ceil(n * b / num_bins) - 1 for b in range(1, num_bins)]
    return v[idx]


def assign_bins(edges: np.ndarray, ent: np.ndarray) -> np.ndarray:
    """First bin whose upper edge >= entropy; above the last edge clamps to B-1."""
    return np.searchsorted(np.asarray(edges, dtype=np.float64), ent, side="left")


def fit_binned(ds: rec.Dataset, alpha: float, num_bins: int = 10,
               eps: float = rec.SUM_EPS) -> CalibrationModel:
    """Entropy-percentile binned calibration: one threshold per bin.

    Bin edges are nearest-rank percentiles of the calibration entropies.
    An empty bin (possible under duplicate edges) inherits the q-hat of the
    nearest non-empty lower bin.
    """
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    n = len(ds.records)
    if num_bins > n:
        raise ValueError(f"num_bins={num_bins} exceeds dataset size {n}")
    if num_bins == 1:
        return fit_global(ds, alpha, eps)
    s = aps_scores(ds, eps)
    h = rec.entropies(ds, eps)
    edges = percentile_edges(h, num_bins)
    bins = assign_bins(edges, h)
    qhats = [None] * num_bins
    counts = [0] * num_bins
    for b in range(num_bins):
        mask = bins == b
        counts[b] = int(mask.sum())
        if counts[b]:
            qhats[b] = conformal_quantile(s[mask], alpha)
    for b in range(num_bins):
        if qhats[b] is None:
            lower = [c for c in range(b - 1, -1, -1) if qhats[c] is not None]
            upper = [c for c in range(b + 1, num_bins) if qhats[c] is not None]
            qhats[b] = qhats[lower[0]] if lower else qhats[upper[0]]
    return CalibrationModel(alpha=float(alpha), mode="binned",
                            bin_edges=tuple(float(e) for e in edges),
                            qhats=tuple(qhats), n_per_bin=tuple(counts),
                            vocab_size=rec.dataset_vocab(ds))


def bin_of(model: CalibrationModel, entropy: float) -> int:
    if model.mode != "binned":
        raise ValueError("bin_of requires an entropy-binned model")
    return int(np.searchsorted(np.asarray(model.bin_edges), entropy, side="left"))


def qhat_for(model: CalibrationModel, entropy: float) -> float:
    if model.mode == "global":
        return model.qhats[0]
    return model.qhats[bin_of(model, entropy)]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def model_to_obj(model: CalibrationModel) -> dict:
    return {"alpha": model.alpha, "mode": model.mode,
            "bin_edges": list(model.bin_edges), "qhats": list(model.qhats),
            "n_per_bin": list(model.n_per_bin), "vocab": model.vocab_size,
            "meta": model.meta}


def model_from_obj(o: dict) -> CalibrationModel:
    return CalibrationModel(alpha=float(o["alpha"]), mode=str(o["mode"]),
                            bin_edges=tuple(o["bin_edges"]), qhats=tuple(o["qhats"]),
                            n_per_bin=tuple(int(x) for x in o["n_per_bin"]),
                            vocab_size=int(o["vocab"]), meta=dict(o.get("meta", {})))


def save_model(model: CalibrationModel, path) -> None:
    rec.atomic_write_text(path, json.dumps(model_to_obj(model)) + "\n")


def load_model(path) -> CalibrationModel:
    with open(path, "r", encoding="utf-8") as f:
        return model_from_obj(json.load(f))
