"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Exact checks run against independent brute-force oracles; pipeline-level
checks assert the directional results on synthetic data at the operating
points fixed here (medium noise = 1.5, labeling noise = 2.5).
"""

import math
import time

import numpy as np
import pytest

import oracles
from rxdecode.decoder import DecoderConfig, LogitMatrix, decode_topk
from rxdecode.grammar import GrammarSpec, MedicineEntry, build_corpus, default_grammar, enumerate_lines, line_count
from rxdecode.lm import train_ngram
from rxdecode.matcher import MatchStrategy, match_line
from rxdecode.metrics import jaccard_metrics
from rxdecode.pipeline import select_units, train_medicine_lm, train_vanilla_lm
from rxdecode.simulator import SimConfig, gen_dataset
from rxdecode.weaklabel import (
    FeatureSegmenter,
    IterationConfig,
    OracleSegmenter,
    WeakLabeledDoc,
    iterate,
)

MEDIUM_NOISE = 1.5
LABEL_NOISE = 2.5


def _report(num: int, name: str, ok: bool, detail: str, elapsed: float, budget: float) -> None:
    status = "PASS" if ok and elapsed < budget else "FAIL"
    print(f"[acceptance {num:02d}] {status} {name}: {detail} ({elapsed:.1f}s / budget {budget:.0f}s)")
    assert ok, f"criterion {num} failed: {detail}"
    assert elapsed < budget, f"criterion {num} exceeded budget: {elapsed:.1f}s >= {budget}s"


@pytest.fixture(scope="module")
def med_lm7(default_spec):
    return train_medicine_lm(default_spec, order=7)


@pytest.fixture(scope="module")
def van_lm7(distractor_lines):
    return train_vanilla_lm(distractor_lines, order=7)


def _test_split(vocab, spec, distractors, seed, n_docs=250, noise=MEDIUM_NOISE):
    # 10 writers at train_fraction 0.2 leaves 8 test writers: 200 test docs
    cfg = SimConfig(n_docs=n_docs, writers=10, noise_sigma=noise, seed=seed, train_fraction=0.2)
    _, test = gen_dataset(cfg, vocab, spec, distractors)
    return test


def _arm_predictions(docs, med_cfg, van_cfg, vocab, strategy):
    """Per-doc predictions for the three LM/segmentation arms, decoding each unit once per LM."""
    med_seg, van_seg, med_full = [], [], []
    for doc in docs:
        selected = select_units(doc, OracleSegmenter().predict(doc))
        seg_m, seg_v, full_m = set(), set(), set()
        for idx, unit in enumerate(doc.units):
            med_paths = decode_topk(unit.logits, med_cfg)
            van_paths = decode_topk(unit.logits, van_cfg)
            med_hit = match_line(med_paths, vocab, strategy).medicine
            van_hit = match_line(van_paths, vocab, strategy).medicine
            if idx in selected:
                if med_hit:
                    seg_m.add(med_hit)
            else:
                if van_hit:
                    seg_m.add(van_hit)
            if van_hit:
                seg_v.add(van_hit)
            if med_hit:
                full_m.add(med_hit)
        med_seg.append(sorted(seg_m))
        van_seg.append(sorted(seg_v))
        med_full.append(sorted(full_m))
    return med_seg, van_seg, med_full


def test_criterion_01_decoder_oracle_equivalence():
    start = time.time()
    lines = [""] + [x + y for x in "abc" for y in "abc"]
    toy_lm = train_ngram(lines, order=2)
    rng = np.random.default_rng(1001)
    alphabet = ("", "a", "b", "c")
    checked = 0
    worst = 0.0
    for _ in range(100):
        t_len = int(rng.integers(1, 7))
        a_len = int(rng.integers(2, 5))
        logits = LogitMatrix(frames=rng.normal(0, 2, size=(t_len, a_len)),
                             alphabet=alphabet[:a_len])
        for alpha in (0.0, 0.5):
            got = decode_topk(logits, DecoderConfig(k=5, beam_width=4096, alpha=alpha, lm=toy_lm))
            want = oracles.ctc_enumerate(logits.frames, logits.alphabet, 5, alpha, toy_lm)
            assert [p.text for p in got] == [w[0] for w in want]
            for p, w in zip(got, want):
                rel = abs(p.combined_score - w[1]) / max(1.0, abs(w[1]))
                worst = max(worst, rel)
                assert rel <= 1e-6
            checked += len(got)
    _report(1, "decoder-oracle equivalence", True,
            f"100 instances x 2 alphas, {checked} paths, worst rel err {worst:.2e}",
            time.time() - start, 10.0)


def test_criterion_02_alpha_zero_neutrality(shipped_vocab, default_spec, distractor_lines, med_lm7):
    from rxdecode.grammar import sample_line
    from rxdecode.simulator import emit_logits, writer_profile
    start = time.time()
    cfg = SimConfig(noise_sigma=MEDIUM_NOISE, seed=42)
    rng = np.random.default_rng(1002)
    texts = [sample_line(default_spec, shipped_vocab.entries[int(rng.integers(0, len(shipped_vocab)))],
                         seed=1000 + i) for i in range(40)]
    texts += distractor_lines[:10]
    assert len(texts) == 50
    for i, text in enumerate(texts):
        logits = emit_logits(text, writer_profile(cfg, i % 5), cfg,
                             rng=np.random.default_rng([42, i]))
        with_lm = decode_topk(logits, DecoderConfig(k=12, beam_width=16, alpha=0.0, lm=med_lm7))
        without = decode_topk(logits, DecoderConfig(k=12, beam_width=16))
        assert [p.text for p in with_lm] == [p.text for p in without]
    _report(2, "alpha=0 neutrality", True, "50 lines, k=12, string-for-string equal",
            time.time() - start, 5.0)


def test_criterion_03_lm_normalization(shipped_vocab):
    start = time.time()
    spec = default_grammar(shipped_vocab.entries[:40])
    corpus = build_corpus(spec, mode="sampled", samples_per_entry=20, seed=7)
    model = train_ngram(corpus, order=7)
    chars = sorted(model.characters)
    rng = np.random.default_rng(1003)
    worst = 0.0
    for _ in range(1000):
        history = "".join(rng.choice(chars, size=int(rng.integers(0, 10))))
        total = sum(math.exp(model.score_next(history, sym)) for sym in model.predictable)
        worst = max(worst, abs(total - 1.0))
        assert abs(total - 1.0) < 1e-6
    _report(3, "LM normalization", True, f"1000 contexts, worst |sum-1| = {worst:.2e}",
            time.time() - start, 5.0)


def test_criterion_04_grammar_count_law():
    start = time.time()
    rng = np.random.default_rng(1004)
    entry = MedicineEntry("dolo", "tab")
    for trial in range(20):
        spec = GrammarSpec(
            enum_tokens=[f"e{i}" for i in range(rng.integers(0, 5))],
            type_tokens={"tab": [f"t{i}" for i in range(rng.integers(0, 4))]},
            suffix_tokens=[f"s{i}" for i in range(rng.integers(0, 6))],
            optional={n: bool(rng.integers(0, 2)) for n in ("enum", "type", "suffix")},
            entries=[entry],
        )
        lines = enumerate_lines(spec, entry, limit=10_000)
        assert len(lines) == line_count(spec, entry)
        assert len(set(lines)) == len(lines)
    _report(4, "grammar count law", True, "20 random specs, enumeration == closed form",
            time.time() - start, 5.0)


@pytest.fixture(scope="module")
def lm_arm_runs(shipped_vocab, default_spec, distractor_lines, med_lm7, van_lm7):
    med_cfg = DecoderConfig(k=1, beam_width=32, alpha=0.6, lm=med_lm7)
    van_cfg = DecoderConfig(k=1, beam_width=32, alpha=0.3, lm=van_lm7)
    strategy = MatchStrategy.top1_exact()
    runs = []
    start = time.time()
    for seed in (0, 1, 2):
        docs = _test_split(shipped_vocab, default_spec, distractor_lines, seed)
        truths = [sorted(d.weak_labels) for d in docs]
        med_seg, van_seg, med_full = _arm_predictions(docs, med_cfg, van_cfg,
                                                      shipped_vocab, strategy)
        runs.append({
            "seed": seed,
            "docs": docs,
            "med_seg": jaccard_metrics(med_seg, truths),
            "van_seg": jaccard_metrics(van_seg, truths),
            "med_full": jaccard_metrics(med_full, truths),
        })
    return {"runs": runs, "elapsed": time.time() - start}


def test_criterion_05_lm_and_segmentation_direction(lm_arm_runs):
    details = []
    ok = True
    for run in lm_arm_runs["runs"]:
        gap = run["med_seg"].mean_jaccard - run["van_seg"].mean_jaccard
        prec_drop = run["med_full"].mean_precision < run["med_seg"].mean_precision
        ok = ok and gap >= 0.10 and prec_drop
        details.append(f"seed {run['seed']}: gap={gap:.3f}, "
                       f"P(full)={run['med_full'].mean_precision:.3f} < "
                       f"P(seg)={run['med_seg'].mean_precision:.3f}")
    _report(5, "medicine LM + segmentation direction", ok,
            f"200 docs x 3 seeds; {'; '.join(details)}", lm_arm_runs["elapsed"], 300.0)


def test_criterion_06_matching_strategy_direction(lm_arm_runs, shipped_vocab, med_lm7, van_lm7):
    start = time.time()
    docs = lm_arm_runs["runs"][0]["docs"]
    truths = [sorted(d.weak_labels) for d in docs]
    med_cfg = DecoderConfig(k=1000, beam_width=1000, alpha=0.6, lm=med_lm7)
    van_cfg = DecoderConfig(k=1, beam_width=32, alpha=0.3, lm=van_lm7)
    strategies = {
        "top1_exact": MatchStrategy.top1_exact(),
        "top1_edit": MatchStrategy.top1_edit(),
        "topk_first": MatchStrategy.topk_first(),
        "topk_majority": MatchStrategy.topk_majority(),
    }
    preds: dict[str, list] = {name: [] for name in strategies}
    for doc in docs:
        selected = select_units(doc, OracleSegmenter().predict(doc))
        per_strategy: dict[str, set] = {name: set() for name in strategies}
        for idx, unit in enumerate(doc.units):
            paths = decode_topk(unit.logits, med_cfg if idx in selected else van_cfg)
            for name, strategy in strategies.items():
                hit = match_line(paths, shipped_vocab, strategy).medicine
                if hit:
                    per_strategy[name].add(hit)
        for name in strategies:
            preds[name].append(sorted(per_strategy[name]))
    reports = {name: jaccard_metrics(p, truths) for name, p in preds.items()}
    majority, first, top1 = (reports["topk_majority"], reports["topk_first"],
                             reports["top1_exact"])
    edit = reports["top1_edit"]
    ok = (majority.mean_jaccard >= first.mean_jaccard >= top1.mean_jaccard
          and edit.mean_recall >= top1.mean_recall
          and edit.mean_precision <= top1.mean_precision)
    detail = (f"mJI majority={majority.mean_jaccard:.3f} >= first={first.mean_jaccard:.3f} "
              f">= top1={top1.mean_jaccard:.3f}; edit R={edit.mean_recall:.3f} vs "
              f"{top1.mean_recall:.3f}, edit P={edit.mean_precision:.3f} vs "
              f"{top1.mean_precision:.3f}")
    _report(6, "matching strategy direction (k=1000)", ok, detail, time.time() - start, 600.0)


def test_criterion_07_ngram_order_direction(lm_arm_runs, shipped_vocab, default_spec, van_lm7):
    start = time.time()
    docs = lm_arm_runs["runs"][0]["docs"]
    truths = [sorted(d.weak_labels) for d in docs]
    van_cfg = DecoderConfig(k=1, beam_width=32, alpha=0.3, lm=van_lm7)
    strategy = MatchStrategy.top1_exact()
    scores = {}
    for order in (3, 5, 7):
        lm_n = train_medicine_lm(default_spec, order=order)
        med_cfg = DecoderConfig(k=1, beam_width=32, alpha=0.6, lm=lm_n)
        preds = []
        for doc in docs:
            selected = select_units(doc, OracleSegmenter().predict(doc))
            names = set()
            for idx, unit in enumerate(doc.units):
                hit = match_line(decode_topk(unit.logits, med_cfg if idx in selected else van_cfg),
                                 shipped_vocab, strategy).medicine
                if hit:
                    names.add(hit)
            preds.append(sorted(names))
        scores[order] = jaccard_metrics(preds, truths).mean_jaccard
    ok = (scores[7] >= scores[3]
          and scores[5] >= scores[3] - 0.01
          and scores[7] >= scores[5] - 0.01)
    _report(7, "n-gram order direction", ok,
            f"mJI n=3: {scores[3]:.3f}, n=5: {scores[5]:.3f}, n=7: {scores[7]:.3f}",
            time.time() - start, 900.0)


def test_criterion_08_iterative_labeling_direction(shipped_vocab, default_spec,
                                                   distractor_lines, med_lm7):
    start = time.time()
    cfg = SimConfig(n_docs=500, writers=10, noise_sigma=LABEL_NOISE, seed=8)
    train, test = gen_dataset(cfg, shipped_vocab, default_spec, distractor_lines)
    weak = [WeakLabeledDoc.from_sim(d) for d in train + test]
    assert len(weak) == 500
    label_cfg = DecoderConfig(k=48, beam_width=48, alpha=0.6, lm=med_lm7)
    iter_cfg = IterationConfig(iterations=2, k_label=48)

    ref = iterate(weak, FeatureSegmenter, iter_cfg, label_cfg)
    ref_fr = [r.stats.admitted_fraction for r in ref]
    monotone = all(set(a.admitted_ids) <= set(b.admitted_ids) for a, b in zip(ref, ref[1:]))

    orc = iterate(weak, OracleSegmenter, iter_cfg, label_cfg)
    orc_fr = [r.stats.admitted_fraction for r in orc]
    orc_monotone = all(set(a.admitted_ids) <= set(b.admitted_ids) for a, b in zip(orc, orc[1:]))

    ok = (ref_fr[1] > ref_fr[0]) and (orc_fr[1] >= 0.99) and monotone and orc_monotone
    _report(8, "iterative labeling direction", ok,
            f"reference: {ref_fr[0]:.3f} -> {ref_fr[1]:.3f}; oracle iter2: {orc_fr[1]:.3f}",
            time.time() - start, 300.0)


def test_criterion_09_metrics_exactness():
    start = time.time()
    r = jaccard_metrics([{"a"}], [{"a"}])
    assert r.mean_jaccard == r.mean_precision == r.mean_recall == 1.0
    r = jaccard_metrics([{"a"}, {"a"}], [{"a"}, {"a", "b"}])
    assert (r.mean_jaccard, r.mean_precision, r.mean_recall) == (0.75, 1.0, 0.75)
    rng = np.random.default_rng(1009)
    pool = [f"m{i}" for i in range(10)]
    worst = 0.0
    for _ in range(1000):
        m = int(rng.integers(1, 4))
        preds = [{str(x) for x in rng.choice(pool, size=rng.integers(0, 5))} for _ in range(m)]
        truths = [{str(x) for x in rng.choice(pool, size=rng.integers(0, 5))} for _ in range(m)]
        report = jaccard_metrics(preds, truths)
        ji, p, rec = oracles.set_metrics(preds, truths)
        worst = max(worst, abs(report.mean_jaccard - ji), abs(report.mean_precision - p),
                    abs(report.mean_recall - rec))
        assert worst < 1e-12
    _report(9, "metrics exactness", True, f"1000 random cases, worst diff {worst:.2e}",
            time.time() - start, 5.0)


def test_criterion_10_zero_noise_end_to_end(shipped_vocab, default_spec, distractor_lines,
                                            med_lm7, van_lm7):
    start = time.time()
    cfg = SimConfig(n_docs=60, writers=6, noise_sigma=0.0, confusion_pairs=[], seed=10)
    train, test = gen_dataset(cfg, shipped_vocab, default_spec, distractor_lines)
    docs = train + test
    med_cfg = DecoderConfig(k=1, beam_width=32, alpha=0.6, lm=med_lm7)
    van_cfg = DecoderConfig(k=1, beam_width=32, alpha=0.3, lm=van_lm7)
    strategy = MatchStrategy.top1_exact()
    preds = []
    for doc in docs:
        selected = select_units(doc, OracleSegmenter().predict(doc))
        names = set()
        for idx, unit in enumerate(doc.units):
            hit = match_line(decode_topk(unit.logits, med_cfg if idx in selected else van_cfg),
                             shipped_vocab, strategy).medicine
            if hit:
                names.add(hit)
        preds.append(sorted(names))
    report = jaccard_metrics(preds, [sorted(d.weak_labels) for d in docs])
    ok = report.mean_jaccard == 1.0
    _report(10, "zero-noise end-to-end identity", ok,
            f"mJI = {report.mean_jaccard} over {len(docs)} docs", time.time() - start, 30.0)
