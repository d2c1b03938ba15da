import math

import numpy as np
import pytest

from conformal_topp import conformal as cf
from conformal_topp import records as rec
from conformal_topp import synth


def rec_with_score(i, s, k=6):
    """Dense record whose APS score is exactly s: gold is the strict argmax."""
    rest = (1.0 - s) / (k - 1)
    assert rest < s
    return rec.dense_record(i, 0, k, 0, [s] + [rest] * (k - 1))


def test_aps_score_examples():
    assert cf.aps_score(rec.dense_record(0, 0, 3, 1, [0.5, 0.3, 0.2])) == pytest.approx(0.8)
    assert cf.aps_score(rec.dense_record(0, 0, 3, 0, [0.4, 0.4, 0.2])) == pytest.approx(0.8)
    assert cf.aps_score(rec.dense_record(0, 0, 4, 2, [0, 0, 1, 0])) == pytest.approx(1.0)
    assert cf.aps_score(rec.dense_record(0, 0, 5, 3, [0.2] * 5)) == pytest.approx(1.0)


def test_aps_score_sparse_rules():
    # gold unlisted -> conservative 1.0
    assert cf.aps_score(rec.sparse_record(0, 0, 10, 7, [0, 1], [0.5, 0.3], 0.2)) == 1.0
    # tail share 0.2/8 = 0.025 < gold prob 0.3 -> tail excluded
    assert cf.aps_score(rec.sparse_record(0, 0, 10, 1, [0, 1], [0.5, 0.3], 0.2)) == pytest.approx(0.8)
    # tail share 0.4/8 = 0.05 >= gold prob 0.04 -> tail included
    r = rec.sparse_record(0, 0, 10, 1, [0, 1], [0.56, 0.04], 0.4)
    assert cf.aps_score(r) == pytest.approx(0.56 + 0.04 + 0.4)


def test_aps_rejects_invalid():
    with pytest.raises(rec.InvalidRecordError):
        cf.aps_score(rec.dense_record(0, 0, 3, 0, [0.5, 0.3, 0.1]))


def brute_force_quantile(scores, alpha):
    """Exhaustive threshold search oracle: minimal candidate q with
    |{s <= q}| >= ceil((n+1)(1-alpha)) over candidates = the score values."""
    s = sorted(scores)
    n = len(s)
    r = math.ceil((n + 1) * (1 - alpha) - 1e-12)
    if r > n:
        return 1.0
    best = None
    for q in s:
        if sum(1 for x in s if x <= q) >= r:
            if best is None or q < best:
                best = q
    return best


def test_quantile_examples():
    scores = [0.2, 0.4, 0.6, 0.8, 0.95]
    assert cf.conformal_quantile(scores, 0.2) == 0.95
    assert cf.conformal_quantile(scores, 0.5) == 0.6
    assert cf.conformal_quantile([0.3, 0.5, 0.7], 0.05) == 1.0


def test_quantile_matches_brute_force():
    rng = np.random.default_rng(10)
    for _ in range(500):
        n = int(rng.integers(1, 21))
        scores = rng.uniform(0.01, 1.0, size=n)
        if rng.random() < 0.3:  # force duplicates
            scores = np.round(scores, 1)
            scores = np.clip(scores, 0.05, 1.0)
        alpha = float(rng.uniform(0.01, 0.99))
        assert cf.conformal_quantile(scores, alpha) == brute_force_quantile(scores, alpha)


def test_quantile_errors():
    with pytest.raises(ValueError):
        cf.conformal_quantile([], 0.1)
    with pytest.raises(ValueError):
        cf.conformal_quantile([0.5], 1.5)


def test_quantile_monotone_in_confidence():
    rng = np.random.default_rng(11)
    scores = rng.uniform(0, 1, 50)
    qs = [cf.conformal_quantile(scores, a) for a in np.linspace(0.9, 0.02, 30)]
    assert all(a <= b + 1e-15 for a, b in zip(qs, qs[1:]))


def test_fit_global_hand_built():
    ds = rec.Dataset([rec_with_score(i, s) for i, s in enumerate([0.2, 0.4, 0.6, 0.8, 0.95])])
    m = cf.fit_global(ds, 0.2)
    assert m.mode == "global" and m.num_bins == 1
    assert m.qhats[0] == pytest.approx(0.95)
    assert m.n_per_bin == (5,)


def test_fit_global_one_hot_dataset():
    ds = rec.Dataset([rec.dense_record(i, 0, 4, i % 4, np.eye(4)[i % 4]) for i in range(8)])
    for alpha in (0.05, 0.3, 0.7):
        assert cf.fit_global(ds, alpha).qhats[0] == 1.0


def test_fit_global_calibrated_world():
    spec = synth.SynthSpec("dirichlet", 50, distortion_temp=1.0, num_records=10000, seed=1)
    m = cf.fit_global(synth.gen_dirichlet_world(spec), 0.1)
    assert 0.88 <= m.qhats[0] <= 0.92


def test_fit_binned_identical_entropy_degenerate():
    # permutations of one probability vector: identical entropy, varying scores
    base = np.array([0.5, 0.25, 0.15, 0.1])
    rng = np.random.default_rng(12)
    records = []
    for i in range(40):
        p = rng.permutation(base)
        records.append(rec.dense_record(i, 0, 4, int(rng.integers(0, 4)), p))
    ds = rec.Dataset(records)
    m = cf.fit_binned(ds, 0.2, 10)
    g = cf.fit_global(ds, 0.2)
    assert all(e == m.bin_edges[0] for e in m.bin_edges)
    assert m.n_per_bin[0] == 40 and all(n == 0 for n in m.n_per_bin[1:])
    assert all(q == g.qhats[0] for q in m.qhats)


def test_fit_binned_one_bin_equals_global():
    ds = synth.gen_dirichlet_world(synth.SynthSpec("dirichlet", 20, num_records=500, seed=2))
    assert cf.fit_binned(ds, 0.1, 1) == cf.fit_global(ds, 0.1)


def test_fit_binned_entropy_gradient():
    # low-entropy half sharpened (overconfident), high-entropy half calibrated
    rng = np.random.default_rng(42)
    n, k = 20000, 50
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
    assert m.qhats[0] > m.qhats[9]


def test_fit_binned_errors():
    ds = rec.Dataset([rec_with_score(i, 0.5) for i in range(3)])
    with pytest.raises(ValueError):
        cf.fit_binned(ds, 0.1, 10)
    with pytest.raises(ValueError):
        cf.fit_binned(ds, 0.1, 0)


def test_bin_of_examples():
    m = cf.CalibrationModel(alpha=0.1, mode="binned", bin_edges=(1.0, 2.0),
                            qhats=(0.9, 0.92, 0.95), n_per_bin=(5, 5, 5), vocab_size=4)
    assert cf.bin_of(m, 0.5) == 0
    assert cf.bin_of(m, 99.0) == 2
    assert cf.bin_of(m, 1.0) == 0
    g = cf.CalibrationModel(alpha=0.1, mode="global", bin_edges=(), qhats=(0.9,),
                            n_per_bin=(5,), vocab_size=4)
    with pytest.raises(ValueError):
        cf.bin_of(g, 1.0)


def test_score_at_least_gold_prob_fuzz():
    rng = np.random.default_rng(13)
    for _ in range(500):
        k = int(rng.integers(2, 40))
        p = rng.dirichlet(np.ones(k))
        g = int(rng.integers(0, k))
        r = rec.dense_record(0, 0, k, g, p)
        s = cf.aps_score(r)
        assert s >= p[g] - 1e-15
        assert 0 < s <= 1 + 1e-6


def test_permutation_invariance():
    rng = np.random.default_rng(14)
    ds = synth.gen_dirichlet_world(synth.SynthSpec("dirichlet", 20, num_records=400, seed=3))
    perm = rng.permutation(len(ds.records))
    shuffled = rec.Dataset([ds.records[i] for i in perm])
    assert cf.fit_global(ds, 0.15).qhats == cf.fit_global(shuffled, 0.15).qhats
    a = cf.fit_binned(ds, 0.15, 5)
    b = cf.fit_binned(shuffled, 0.15, 5)
    assert a.qhats == b.qhats and a.bin_edges == b.bin_edges


def test_on_calibration_count_exact():
    # with all-distinct scores, exactly min(ceil((n+1)(1-alpha)), n) scores sit
    # at or below the fitted threshold
    rng = np.random.default_rng(15)
    for _ in range(50):
        n = int(rng.integers(5, 200))
        scores = rng.uniform(0, 1, n)
        while len(np.unique(scores)) != n:
            scores = rng.uniform(0, 1, n)
        alpha = float(rng.uniform(0.02, 0.9))
        q = cf.conformal_quantile(scores, alpha)
        expect = min(math.ceil((n + 1) * (1 - alpha) - 1e-12), n)
        if q == 1.0 and expect == n:
            assert (scores <= q).sum() == n
        else:
            assert (scores <= q).sum() == expect


def test_dense_sparse_score_agreement():
    rng = np.random.default_rng(16)
    for _ in range(200):
        k = int(rng.integers(3, 25))
        p = rng.dirichlet(np.ones(k))
        g = int(rng.integers(0, k))
        dense = rec.dense_record(0, 0, k, g, p)
        sparse = rec.sparse_record(0, 0, k, g, np.arange(k), p, 0.0)
        assert cf.aps_score(sparse) == pytest.approx(cf.aps_score(dense), abs=1e-12)


def test_scored_records():
    ds = rec.Dataset([rec_with_score(i, s) for i, s in enumerate([0.3, 0.6, 0.9])])
    out = cf.score_records(ds)
    assert [pytest.approx(x.score) for x in out] == [0.3, 0.6, 0.9]
    assert all(x.score >= rec.gold_prob(x.record) for x in out)


def test_model_serialization_round_trip(tmp_path):
    ds = synth.gen_dirichlet_world(synth.SynthSpec("dirichlet", 20, num_records=300, seed=4))
    m = cf.fit_binned(ds, 0.1, 5)
    path = tmp_path / "model.json"
    cf.save_model(m, path)
    assert cf.load_model(path) == m
