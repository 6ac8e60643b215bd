"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line with its measurement.

The training-based criteria share runs through a module cache; the ablation sweep trains
nine models on the 256-record fixture and dominates the runtime.
"""

import math
import time

import numpy as np

from vogue import autodiff as ad
from vogue.autodiff import Tensor, finite_diff_check
from vogue.checkpoint import from_bytes, to_bytes
from vogue.decoder import DecoderLayer
from vogue.encoder import EncoderLayer
from vogue.evaluate import evaluate, threshold_scores
from vogue.fusion import CrossAttentionFusion, hybrid_fuse
from vogue.grammar import ToyKG, execute, parse_lf, render
from vogue.losses import combined_loss
from vogue.metrics import bleu, meteor, perplexity
from vogue.synth import fixture
from vogue.threshold import SimilarityThreshold
from vogue.trainer import TrainConfig, noam_lr, train

from conftest import ACCEPTANCE_LINES
from oracles import brute_bleu, brute_execute, per_stream_oracle, random_kg, random_lf


def record(number, title, passed, detail, seconds):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}: {detail} ({seconds:.1f}s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def swapped(obj, attr, fn):
    """Loss as a function of one parameter tensor, for finite differences."""
    original = getattr(obj, attr)

    def f(t):
        setattr(obj, attr, t)
        try:
            return fn()
        finally:
            setattr(obj, attr, original)

    return f, original.data.copy()


# --- 1. gradients --------------------------------------------------------------------


def test_criterion_1_gradients():
    t0 = time.perf_counter()
    g = np.random.default_rng(0)
    d = 8
    errs = {}

    def proj(shape):
        return Tensor(g.normal(size=shape))

    enc = EncoderLayer(d, 2, np.random.default_rng(1), dropout=0.0)
    x = g.normal(size=(1, 4, d))
    r = proj((1, 4, d))
    errs["encoder layer / input"] = finite_diff_check(lambda t: ad.tsum(enc(t) * r), x)
    f, w = swapped(enc.attn.q_proj, "weight", lambda: ad.tsum(enc(Tensor(x)) * r))
    errs["encoder layer / W_q"] = finite_diff_check(f, w)

    head = SimilarityThreshold(d, np.random.default_rng(2), dropout=0.0)
    hq, hlf = g.normal(size=(3, d)), g.normal(size=(3, d))
    r2 = proj((3, 2))
    errs["threshold / h_q"] = finite_diff_check(lambda t: ad.tsum(head(t, Tensor(hlf)) * r2), hq)
    f, w = swapped(head.hidden, "weight", lambda: ad.tsum(head(Tensor(hq), Tensor(hlf)) * r2))
    errs["threshold / W_st1"] = finite_diff_check(f, w)

    fusion = CrossAttentionFusion(d, 2, np.random.default_rng(3), dropout=0.0)
    fq, flf = g.normal(size=(3, d)) * 0.5, g.normal(size=(2, d)) * 0.5
    r3, r3s = proj((1, 5, d)), proj((1, 2 * d))

    def fused_loss(a, b):
        out = hybrid_fuse(a, b, fusion)
        return ad.tsum(out.memory * r3) + ad.tsum(out.summary * r3s)

    errs["fusion / h_q"] = finite_diff_check(lambda t: fused_loss(t, Tensor(flf)), fq)
    errs["fusion / h_lf"] = finite_diff_check(lambda t: fused_loss(Tensor(fq), t), flf)
    f, w = swapped(fusion.w_k, "weight", lambda: fused_loss(Tensor(fq), Tensor(flf)))
    errs["fusion / W_K"] = finite_diff_check(f, w)

    dec = DecoderLayer(2 * d, d, 2, np.random.default_rng(4), dropout=0.0)
    y, mem = g.normal(size=(1, 4, 2 * d)), g.normal(size=(1, 3, d))
    mm = np.ones((1, 3), bool)
    r4 = proj((1, 4, 2 * d))
    errs["decoder layer / input"] = finite_diff_check(
        lambda t: ad.tsum(dec(t, Tensor(mem), mm, None) * r4), y)
    errs["decoder layer / memory"] = finite_diff_check(
        lambda t: ad.tsum(dec(Tensor(y), t, mm, None) * r4), mem)

    def combined(v):
        return combined_loss(v[0], v[1], v[2], v[3])

    errs["combined loss"] = finite_diff_check(combined, np.array([1.3, 0.4, 0.2, -0.7]))

    worst = max(errs, key=errs.get)
    secs = time.perf_counter() - t0
    record(1, "finite differences through every block at d=8",
           errs[worst] <= 1e-4 and secs < 60,
           f"{len(errs)} checks, worst {errs[worst]:.2e} ({worst}) <= 1e-4", secs)


# --- 2. block identity ---------------------------------------------------------------


def test_criterion_2_block_identity():
    t0 = time.perf_counter()
    g = np.random.default_rng(2)
    worst = 0.0
    for i in range(100):
        n, m = int(g.integers(1, 17)), int(g.integers(1, 17))
        d = int(g.choice([4, 8]))
        mod = CrossAttentionFusion(d, int(g.choice([1, 2])), np.random.default_rng(i), 0.0)
        hq, hlf = g.normal(size=(n, d)), g.normal(size=(m, d))
        want_q, want_lf = per_stream_oracle(hq, hlf, mod)
        got = mod.raw(Tensor(np.concatenate([hq, hlf])[None])).data[0]
        worst = max(worst, np.abs(got[:n] - want_q).max(), np.abs(got[n:] - want_lf).max())
    secs = time.perf_counter() - t0
    record(2, "stacked attention equals per-stream expansion", worst <= 1e-10 and secs < 10,
           f"100 shapes, max deviation {worst:.2e} <= 1e-10", secs)


# --- 3. metrics ------------------------------------------------------------------------


def test_criterion_3_metric_oracles():
    t0 = time.perf_counter()
    g = np.random.default_rng(3)
    vocab = list("abcdef")
    bleu_dev = 0.0
    for _ in range(50):
        cand = list(g.choice(vocab, int(g.integers(1, 12))))
        refs = [list(g.choice(vocab, int(g.integers(1, 12)))) for _ in range(int(g.integers(1, 4)))]
        bleu_dev = max(bleu_dev, abs(bleu(cand, refs) - brute_bleu(cand, refs)))
    same = meteor(["the", "cat", "sat"], ["the", "cat", "sat"])
    perm = meteor(["sat", "cat", "the"], ["the", "cat", "sat"])
    ppl = perplexity(37 * math.log(50), 37)
    ok = (bleu_dev <= 1e-12 and round(same, 4) == 0.9815 and abs(perm - 0.5) <= 1e-12
          and abs(ppl - 50.0) <= 1e-9)
    record(3, "metric oracles", ok,
           f"BLEU max dev {bleu_dev:.1e} over 50 pairs; METEOR {same:.4f} and {perm:.4f}; "
           f"uniform perplexity {ppl:.10f}", time.perf_counter() - t0)


# --- 4. grammar --------------------------------------------------------------------------


def test_criterion_4_grammar():
    t0 = time.perf_counter()
    g = np.random.default_rng(4)
    agree = 0
    for _ in range(500):
        ents, rels, types, triples, type_of = random_kg(g, int(g.integers(2, 11)), 3)
        lf = random_lf(g, 3, ents, rels, types)
        agree += execute(lf, ToyKG(frozenset(triples), type_of)) == brute_execute(
            lf.root, triples, type_of)
    trips = 0
    for _ in range(1000):
        lf = random_lf(g, 4, ["A", "B_(x)", "c-1"], ["p", "q"], ["T"])
        trips += parse_lf(render(lf.root)) == lf
    secs = time.perf_counter() - t0
    record(4, "executor and round-trip", agree == 500 and trips == 1000 and secs < 30,
           f"executor {agree}/500, round-trip {trips}/1000", secs)


# --- shared training runs ----------------------------------------------------------------

ABLATION_SEEDS = (0, 1, 2)
VARIANTS = {"full": {}, "no_cross_attention": {"no_cross_attention": True},
            "no_multitask": {"no_multitask": True}}


RUNS: dict = {}


def run_256(seed, variant):
    """Train once per (seed, variant) and remember the result with its training time."""
    if (seed, variant) not in RUNS:
        cfg = TrainConfig.desk(d=32, heads=4, batch_size=16, warmup=200, epochs=45,
                               dev_fraction=0.2, seed=seed, **VARIANTS[variant])
        t0 = time.perf_counter()
        res = train(fixture(256), cfg)
        RUNS[seed, variant] = res, time.perf_counter() - t0
    return RUNS[seed, variant]


# --- 5. overfit -------------------------------------------------------------------------


def test_criterion_5_overfit():
    t0 = time.perf_counter()
    data = fixture(16)
    # every record is trained on; the criterion scores the training set itself
    cfg = TrainConfig.desk(d=32, layers=2, heads=4, seed=7, epochs=300, dev_fraction=0.0)
    res = train(data, cfg)
    report = evaluate(res.model, data)
    b4, exact = report.corpus["bleu4"], report.corpus["exact_match_count"]
    secs = time.perf_counter() - t0
    record(5, "overfit 16 records", b4 >= 0.95 and exact >= 14 and secs < 300,
           f"train BLEU-4 {b4:.4f} >= 0.95, exact {exact}/16 >= 14", secs)


# --- 6. threshold ------------------------------------------------------------------------


def test_criterion_6_threshold():
    res, train_secs = run_256(0, "full")
    t0 = time.perf_counter()
    pool = [ex.logical_form for ex in fixture(256)]
    p, r, f1 = threshold_scores(res.model, res.dev_examples, seed=0, pool=pool)
    secs = train_secs + time.perf_counter() - t0
    record(6, "threshold F1 on held-out 20%", f1 >= 0.90 and secs < 300,
           f"F1 {f1:.4f} >= 0.90 (P {p:.3f}, R {r:.3f}, {len(res.dev_examples)} dev records)",
           secs)


# --- 7. ablation direction ----------------------------------------------------------------


def test_criterion_7_ablation_direction():
    t0 = time.perf_counter()
    pool = [ex.logical_form for ex in fixture(256)]
    scores = {v: [] for v in VARIANTS}
    # runs cached by criterion 6 still count with their original training time
    earlier = sum(spent for _, spent in RUNS.values())
    for seed in ABLATION_SEEDS:
        for variant in VARIANTS:
            res, _ = run_256(seed, variant)
            rep = evaluate(res.model, res.dev_examples, seed=seed, pool=pool)
            scores[variant].append(rep.corpus["bleu4"])
    mean = {v: float(np.mean(s)) for v, s in scores.items()}
    ok = all(mean["full"] >= mean[v] - 0.02 for v in VARIANTS if v != "full")
    secs = time.perf_counter() - t0 + earlier
    detail = ", ".join(f"{v} {mean[v]:.4f}" for v in VARIANTS)
    record(7, "full >= ablation - 0.02 (dev BLEU-4, 3 seeds)", ok and secs < 1800, detail, secs)


# --- 8. determinism and persistence --------------------------------------------------------


def test_criterion_8_determinism_and_persistence():
    t0 = time.perf_counter()
    cfg = TrainConfig.desk(d=16, heads=2, epochs=3, warmup=50, dev_fraction=0.25, seed=11)
    a = train(fixture(16), cfg)
    b = train(fixture(16), cfg)
    blob_a, blob_b = to_bytes(a.model, 11, 3), to_bytes(b.model, 11, 3)
    back, _ = from_bytes(blob_a)
    before = evaluate(a.model, fixture(16)).to_json()
    after = evaluate(back, fixture(16)).to_json()
    ok = blob_a == blob_b and before == after
    record(8, "determinism and persistence", ok,
           f"checkpoints identical: {blob_a == blob_b} ({len(blob_a)} bytes); "
           f"scores preserved: {before == after}", time.perf_counter() - t0)


# --- 9. schedule --------------------------------------------------------------------------


def test_criterion_9_noam():
    t0 = time.perf_counter()
    rate = noam_lr(4000, 300, 4000)
    steps = np.arange(1, 12001)
    peak = int(steps[np.argmax([noam_lr(int(s), 300, 4000) for s in steps])])
    record(9, "Noam schedule", abs(rate - 9.13e-4) <= 1e-6 and peak == 4000,
           f"rate {rate:.4e}, peak at step {peak}", time.perf_counter() - t0)
