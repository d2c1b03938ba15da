"""Acceptance suite: one test per top-level criterion, each printing a
single PASS/FAIL line (run with `pytest -s tests/test_acceptance.py` to see
them inline; they also appear in captured output on failure)."""
import math
import time

import numpy as np

from conformal_topp import conformal as cf
from conformal_topp import decoding as dec
from conformal_topp import evaluation as ev
from conformal_topp import records as rec
from conformal_topp import synth

from test_conformal import brute_force_quantile


def report(name, ok, t0, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {name} ({time.perf_counter() - t0:.1f}s) {detail}")
    assert ok, f"{name}: {detail}"


def test_theorem_band_reproduction():
    t0 = time.perf_counter()
    spec = synth.SynthSpec("dirichlet", 50, distortion_temp=1.0, seed=0)
    res = ev.theorem_band_check(spec, alpha=0.1, n_cal=999, n_test=10000,
                                trials=100, seed=7)
    delta = 0.005
    ok = 0.900 - delta <= res.mean_coverage <= 0.901 + delta
    report("theorem-band reproduction", ok, t0,
           f"mean coverage {res.mean_coverage:.5f} in [0.895, 0.906]")


def test_overconfidence_direction():
    t0 = time.perf_counter()
    over = synth.gen_dirichlet_world(
        synth.SynthSpec("dirichlet", 50, distortion_temp=0.7, num_records=8000, seed=11))
    under = synth.gen_dirichlet_world(
        synth.SynthSpec("dirichlet", 50, distortion_temp=1.5, num_records=8000, seed=11))
    ok = True
    details = []
    for alpha in (0.05, 0.1, 0.2):
        q_over = cf.fit_global(over, alpha).qhats[0]
        q_under = cf.fit_global(under, alpha).qhats[0]
        ok = ok and q_over > 1 - alpha and q_under < 1 - alpha
        details.append(f"a={alpha}: {q_over:.3f}>{1-alpha}>{q_under:.3f}")
    report("overconfidence direction", ok, t0, "; ".join(details))


def test_entropy_gradient_reproduction():
    t0 = time.perf_counter()
    # mixed world: low-entropy half sharpened (tau=0.6), high-entropy half calibrated
    rng = np.random.default_rng(42)
    n, k = 30000, 50
    true = synth._dirichlet_rows(rng, n, k, 0.3)
    gold = synth._sample_rows(rng, true)
    h = -(true * np.log(true)).sum(axis=1)
    low = h < np.median(h)
    recorded = np.where(low[:, None], synth.distort(true, 0.6), true)
    records = [rec.DistributionRecord(i, 0, k, int(gold[i]), rec.DenseBody(recorded[i]))
               for i in range(n)]
    ds = rec.Dataset(records)
    ds._dense = recorded
    m = cf.fit_binned(ds, 0.1, 10)
    gap = m.qhats[0] - m.qhats[9]
    report("entropy-gradient reproduction", gap > 0.02, t0,
           f"qhat(bin0)-qhat(bin9) = {gap:.4f} > 0.02")


def test_oracle_equivalence_quantile():
    t0 = time.perf_counter()
    rng = np.random.default_rng(13)
    ok = True
    for _ in range(1000):
        n = int(rng.integers(1, 21))
        scores = rng.uniform(0.01, 1.0, size=n)
        if rng.random() < 0.4:  # force score multisets with duplicates
            scores = np.clip(np.round(scores, 1), 0.05, 1.0)
        alpha = float(rng.uniform(0.01, 0.99))
        if cf.conformal_quantile(scores, alpha) != brute_force_quantile(scores, alpha):
            ok = False
            break
    report("oracle equivalence (quantile vs exhaustive search)", ok, t0,
           "1000 multisets, exact equality")


def test_membership_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(14)
    hits = 0
    n = 10000
    for _ in range(n):
        k = int(rng.integers(2, 80))
        p = rng.dirichlet(np.ones(k))
        g = int(rng.choice(k, p=p))
        r = rec.dense_record(0, 0, k, g, p)
        hits += g in dec.prediction_set(p, cf.aps_score(r)).token_ids
    report("membership identity", hits == n, t0, f"{hits}/{n} fuzzed records")


def test_dependence_robustness():
    t0 = time.perf_counter()
    spec = synth.SynthSpec("markov", 20, seq_len=200, num_seqs=500, seed=3)
    ds = synth.gen_markov_world(spec)
    half = 250 * 200
    cal = rec.Dataset(ds.records[:half])
    test = rec.Dataset(ds.records[half:])
    model = cf.fit_global(cal, 0.1)
    cov = ev.empirical_coverage(model, test).coverage
    q_full = cf.fit_global(ds, 0.1).qhats[0]
    q_sub = cf.fit_global(synth.subsample_one_per_sequence(ds, 5), 0.1).qhats[0]
    ok = abs(cov - 0.9) <= 0.02 and abs(q_full - q_sub) <= 0.03
    report("dependence robustness", ok, t0,
           f"coverage {cov:.4f} (0.9+-0.02); |q_full-q_sub| = {abs(q_full - q_sub):.4f} <= 0.03")


def test_decoder_contracts():
    t0 = time.perf_counter()
    rng = np.random.default_rng(15)
    n_cases = 10000
    ok = True
    for i in range(n_cases):
        k = int(rng.integers(2, 25))
        p = rng.dirichlet(np.full(k, rng.uniform(0.3, 2.0)))
        q1, q2 = sorted(rng.uniform(0.01, 1.0, size=2))
        s1 = dec.prediction_set(p, q1)
        s2 = dec.prediction_set(p, q2)
        # nestedness
        ok = ok and s2.token_ids[: len(s1)] == s1.token_ids
        # minimality
        if len(s2) > 1:
            ok = ok and s2.cum_mass - p[s2.token_ids[-1]] < q2 - 1e-12
        # renormalization sums to 1 with support exactly the set
        w = p[np.asarray(s2.token_ids)] / s2.cum_mass
        ok = ok and abs(w.sum() - 1.0) < 1e-9 * max(1.0, 1.0 / s2.cum_mass)
        # seed determinism
        seed = int(rng.integers(0, 2**32))
        ok = ok and dec.sample_from_set(p, s2, seed) == dec.sample_from_set(p, s2, seed)
        if not ok:
            break
    report("decoder contracts", ok, t0,
           f"{n_cases} cases x (nestedness, minimality, renormalization, determinism)")
