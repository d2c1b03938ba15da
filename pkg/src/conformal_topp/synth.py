"""Synthetic record streams with known ground truth.

Two worlds: IID records whose true distributions are symmetric-Dirichlet
draws, and dependent records produced by an ergodic Markov chain over the
vocabulary. Both can be miscalibrated on purpose by a temperature distortion
(recorded = normalize(true^{1/tau})): tau < 1 sharpens (overconfident),
tau > 1 flattens (underconfident), tau = 1 leaves the world calibrated.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, replace

import numpy as np

from . import records as rec

# Transition probabilities are floored at this value and renormalized, which
# makes every synthetic chain aperiodic and recurrent by construction.
_ERGODIC_FLOOR = 1e-4


@dataclass(frozen=True)
class SynthSpec:
    kind: str                     # "dirichlet" | "markov"
    vocab_size: int
    concentration: float = 0.3
    distortion_temp: float = 1.0
    num_records: int = 1000       # dirichlet worlds
    seq_len: int = 200            # markov worlds
    num_seqs: int = 100
    seed: int = 0


def validate_spec(spec: SynthSpec) -> None:
    if spec.kind not in ("dirichlet", "markov"):
        raise ValueError(f"unknown world kind {spec.kind!r}")
    if spec.vocab_size < 2:
        raise ValueError("vocab_size must be >= 2")
    if spec.concentration <= 0 or spec.distortion_temp <= 0:
        raise ValueError("concentration and distortion_temp must be > 0")
    if spec.kind == "dirichlet" and spec.num_records < 1:
        raise ValueError("num_records must be >= 1")
    if spec.kind == "markov" and (spec.seq_len < 1 or spec.num_seqs < 1):
        raise ValueError("seq_len and num_seqs must be >= 1")


def spec_to_json(spec: SynthSpec) -> str:
    return json.dumps(asdict(spec))


def spec_from_json(text: str) -> SynthSpec:
    spec = SynthSpec(**json.loads(text))
    validate_spec(spec)
    return spec


def distort(p: np.ndarray, tau: float) -> np.ndarray:
    """Temperature distortion p^{1/tau} / Z applied row-wise; identity at tau=1."""
    if tau == 1.0:
        return p
    q = p ** (1.0 / tau)
    return q / q.sum(axis=-1, keepdims=True)


def _dirichlet_rows(rng: np.random.Generator, n: int, k: int, conc: float) -> np.ndarray:
    g = rng.standard_gamma(conc, size=(n, k))
    return g / g.sum(axis=1, keepdims=True)


def _sample_rows(rng: np.random.Generator, p: np.ndarray) -> np.ndarray:
    """One categorical draw per row of p."""
    cum = np.cumsum(p, axis=1)
    u = rng.random(len(p))
    return np.minimum((cum < u[:, None]).sum(axis=1), p.shape[1] - 1)


def gen_dirichlet_world(spec: SynthSpec) -> rec.Dataset:
    """IID records: gold drawn from the true Dirichlet draw, recorded
    distribution temperature-distorted. Deterministic per seed; for a fixed
    seed the true distributions and golds are shared across distortion temps.
    """
    validate_spec(spec)
    if spec.kind != "dirichlet":
        raise ValueError("spec.kind must be 'dirichlet'")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n, k = spec.num_records, spec.vocab_size
    true = _dirichlet_rows(rng, n, k, spec.concentration)
    gold = _sample_rows(rng, true)
    recorded = distort(true, spec.distortion_temp)
    records = [rec.DistributionRecord(i, 0, k, int(gold[i]), rec.DenseBody(recorded[i]))
               for i in range(n)]
    ds = rec.Dataset(records=records,
                     metadata={"source": "dirichlet", "tau": str(spec.distortion_temp),
                               "seed": str(spec.seed)})
    ds._dense = recorded
    return ds


def ergodic_transition_matrix(rng: np.random.Generator, k: int, conc: float) -> np.ndarray:
    t = _dirichlet_rows(rng, k, k, conc)
    t = np.maximum(t, _ERGODIC_FLOOR)
    return t / t.sum(axis=1, keepdims=True)


def gen_markov_world_from_matrix(transition: np.ndarray, tau: float, seq_len: int,
                                 num_seqs: int, seed: int) -> rec.Dataset:
    """Markov world over an explicit transition matrix.

    Each sequence starts from a uniform state; position t records the
    (distorted) transition row of the current state with gold = the realized
    next state, so consecutive records are dependent by construction.
    """
    t = np.asarray(transition, dtype=np.float64)
    k = t.shape[0]
    if t.shape != (k, k) or np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > rec.SUM_EPS):
        raise ValueError("transition must be a square row-stochastic matrix")
    rng = np.random.Generator(np.random.PCG64(seed))
    recorded = distort(t, tau)
    cum = np.cumsum(t, axis=1)
    states = rng.integers(0, k, size=num_seqs)
    srcs = np.empty((num_seqs, seq_len), dtype=np.int64)
    nxts = np.empty((num_seqs, seq_len), dtype=np.int64)
    for pos in range(seq_len):
        u = rng.random(num_seqs)
        nxt = np.minimum((cum[states] < u[:, None]).sum(axis=1), k - 1)
        srcs[:, pos] = states
        nxts[:, pos] = nxt
        states = nxt
    records = []
    for s in range(num_seqs):
        for pos in range(seq_len):
            records.append(rec.DistributionRecord(
                s, pos, k, int(nxts[s, pos]), rec.DenseBody(recorded[srcs[s, pos]])))
    ds = rec.Dataset(records=records,
                     metadata={"source": "markov", "tau": str(tau), "seed": str(seed)})
    ds._dense = recorded[srcs.ravel()]
    return ds


def gen_markov_world(spec: SynthSpec) -> rec.Dataset:
    """Markov world with a random ergodic transition matrix (rows
    Dirichlet-drawn, floored and renormalized)."""
    validate_spec(spec)
    if spec.kind != "markov":
        raise ValueError("spec.kind must be 'markov'")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    t = ergodic_transition_matrix(rng, spec.vocab_size, spec.concentration)
    sim_seed = int(rng.integers(0, 2**63 - 1))
    return gen_markov_world_from_matrix(t, spec.distortion_temp, spec.seq_len,
                                        spec.num_seqs, sim_seed)


def generate(spec: SynthSpec) -> rec.Dataset:
    if spec.kind == "markov":
        return gen_markov_world(spec)
    return gen_dirichlet_world(spec)


def with_size(spec: SynthSpec, n: int, seed: int) -> SynthSpec:
    """Copy of spec resized to roughly n records with a new seed."""
    if spec.kind == "markov":
        return replace(spec, num_seqs=max(1, math.ceil(n / spec.seq_len)), seed=seed)
    return replace(spec, num_records=n, seed=seed)


def subsample_one_per_sequence(ds: rec.Dataset, seed: int) -> rec.Dataset:
    """Keep exactly one uniformly chosen record per seq_id (deterministic per seed)."""
    groups: dict = {}
    for idx, r in enumerate(ds.records):
        groups.setdefault(r.seq_id, []).append(idx)
    rng = np.random.Generator(np.random.PCG64(seed))
    keep = [groups[s][rng.integers(0, len(groups[s]))] for s in sorted(groups)]
    return rec.Dataset(records=[ds.records[i] for i in keep],
                       metadata=dict(ds.metadata, subsampled="one_per_sequence"))
