"""Prediction-set construction and sampling: conformal (entropy-adaptive)
top-p decoding plus vanilla top-p and top-k baselines.

All sampling goes through an explicitly seeded numpy PCG64 generator so that
decode traces are bit-identical across runs and platforms for a fixed seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import records as rec
from .conformal import CalibrationModel, bin_of

# Slack for cumulative-mass comparisons: sums of the same probabilities taken
# in different orders must land on the same side of the threshold.
_CUM_EPS = 1e-12


@dataclass(frozen=True)
class PredictionSet:
    token_ids: tuple          # descending probability, ties by ascending id
    cum_mass: float
    threshold_used: float

    def __len__(self):
        return len(self.token_ids)


@dataclass(frozen=True)
class DecodeStep:
    chosen_token: int
    set: PredictionSet
    entropy: float
    bin: int | None
    qhat_used: float
    rng_state_before: dict


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def _check_probs(p: np.ndarray, eps: float = rec.SUM_EPS) -> None:
    if p.ndim != 1 or len(p) < 1 or np.any(p < 0) or abs(float(p.sum()) - 1.0) > eps:
        raise rec.InvalidRecordError(["invalid distribution"])


def _ranked(p: np.ndarray) -> np.ndarray:
    # lexsort: last key is primary -> descending prob, then ascending id
    return np.lexsort((np.arange(len(p)), -p))


def prediction_set(probs, q: float) -> PredictionSet:
    """Smallest prefix of most-probable tokens with cumulative mass >= q.

    Ordering is by descending probability with ties broken by ascending token
    id; at least one token is always included.
    """
    p = np.asarray(probs, dtype=np.float64)
    _check_probs(p)
    if not (0.0 < q <= 1.0):
        raise ValueError(f"q must be in (0,1], got {q}")
    order = _ranked(p)
    cum = np.cumsum(p[order])
    m = int(np.searchsorted(cum, q - _CUM_EPS, side="left")) + 1
    m = min(m, len(p))
    return PredictionSet(token_ids=tuple(int(i) for i in order[:m]),
                         cum_mass=float(cum[m - 1]), threshold_used=float(q))


def sample_from_set(probs, pset: PredictionSet, rng_seed) -> int:
    """Sample a token from the set with probabilities renormalized over it."""
    rng = make_rng(rng_seed)
    p = np.asarray(probs, dtype=np.float64)
    ids = np.asarray(pset.token_ids, dtype=np.int64)
    cw = np.cumsum(p[ids])
    u = rng.random() * cw[-1]
    j = min(int(np.searchsorted(cw, u, side="right")), len(ids) - 1)
    return int(ids[j])


def _entropy_of(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def conformal_decode_step(probs, model: CalibrationModel, rng_seed) -> DecodeStep:
    """One entropy-adaptive decode step: entropy -> bin -> q-hat -> set -> sample."""
    p = np.asarray(probs, dtype=np.float64)
    _check_probs(p)
    if len(p) != model.vocab_size:
        raise ValueError(f"vocab mismatch: probs has {len(p)}, model expects {model.vocab_size}")
    rng = make_rng(rng_seed)
    state = rng.bit_generator.state
    h = _entropy_of(p)
    if model.mode == "binned":
        b = bin_of(model, h)
        q = model.qhats[b]
    else:
        b = None
        q = model.qhats[0]
    pset = prediction_set(p, q)
    tok = sample_from_set(p, pset, rng)
    return DecodeStep(chosen_token=tok, set=pset, entropy=h, bin=b,
                      qhat_used=float(q), rng_state_before=state)


def vanilla_top_p_step(probs, p_level: float, rng_seed) -> DecodeStep:
    """Standard nucleus sampling at a fixed p."""
    p = np.asarray(probs, dtype=np.float64)
    _check_probs(p)
    rng = make_rng(rng_seed)
    state = rng.bit_generator.state
    pset = prediction_set(p, p_level)
    tok = sample_from_set(p, pset, rng)
    return DecodeStep(chosen_token=tok, set=pset, entropy=_entropy_of(p), bin=None,
                      qhat_used=float(p_level), rng_state_before=state)


def vanilla_top_k_step(probs, k: int, rng_seed) -> DecodeStep:
    """Fixed-size top-k sampling (ties by ascending id)."""
    p = np.asarray(probs, dtype=np.float64)
    _check_probs(p)
    if not (1 <= k <= len(p)):
        raise ValueError(f"k must be in [1, {len(p)}], got {k}")
    rng = make_rng(rng_seed)
    state = rng.bit_generator.state
    order = _ranked(p)
    cum = float(p[order[:k]].sum())
    pset = PredictionSet(token_ids=tuple(int(i) for i in order[:k]),
                         cum_mass=cum, threshold_used=cum)
    tok = sample_from_set(p, pset, rng)
    return DecodeStep(chosen_token=tok, set=pset, entropy=_entropy_of(p), bin=None,
                      qhat_used=cum, rng_state_before=state)


def step_to_obj(step: DecodeStep) -> dict:
    """Trace-line form: token, set size, cumulative mass, entropy, bin, q-hat."""
    return {"token": step.chosen_token, "set_size": len(step.set),
            "cum_mass": step.set.cum_mass, "entropy": step.entropy,
            "bin": step.bin, "qhat": step.qhat_used}
