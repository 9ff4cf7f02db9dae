import numpy as np
import pytest

from rxdecode.decoder import DecoderConfig, decode_topk
from rxdecode.errors import DataError
from rxdecode.geometry import RotatedBox
from rxdecode.grammar import default_grammar
from rxdecode.matcher import exact_matches
from rxdecode.pipeline import train_medicine_lm
from rxdecode.simulator import SimConfig, gen_dataset
from rxdecode.weaklabel import (
    FeatureSegmenter,
    IterationConfig,
    LabeledBox,
    NullSegmenter,
    OracleSegmenter,
    WeakLabeledDoc,
    coverage_accept,
    iterate,
    load_strong_labels,
    ocr_labeling_fn,
    save_strong_labels,
)


@pytest.fixture(scope="module")
def med_lm(shipped_vocab):
    return train_medicine_lm(default_grammar(shipped_vocab.entries), order=7)


@pytest.fixture(scope="module")
def clean_docs(shipped_vocab, default_spec, distractor_lines):
    cfg = SimConfig(n_docs=24, writers=4, noise_sigma=0.0, confusion_pairs=[], seed=31)
    train, test = gen_dataset(cfg, shipped_vocab, default_spec, distractor_lines)
    return [WeakLabeledDoc.from_sim(d) for d in train + test]


@pytest.fixture(scope="module")
def noisy_docs(shipped_vocab, default_spec, distractor_lines):
    cfg = SimConfig(n_docs=40, writers=5, noise_sigma=2.5, seed=32)
    train, test = gen_dataset(cfg, shipped_vocab, default_spec, distractor_lines)
    return [WeakLabeledDoc.from_sim(d) for d in train + test]


@pytest.fixture(scope="module")
def label_cfg(med_lm):
    return DecoderConfig(k=48, beam_width=48, alpha=0.6, lm=med_lm)


def test_coverage_boundary_is_inclusive():
    assert not coverage_accept(4, 5, 0.9)
    assert coverage_accept(5, 5, 0.9)
    assert coverage_accept(9, 10, 0.9)
    with pytest.raises(DataError):
        coverage_accept(0, 0, 0.9)


def test_one_hot_unit_is_claimed(shipped_vocab, default_spec, distractor_lines, label_cfg):
    cfg = SimConfig(n_docs=4, writers=2, noise_sigma=0.0, confusion_pairs=[],
                    medicines_per_doc=1.0, distractors_per_doc=0.0, seed=33)
    train, test = gen_dataset(cfg, shipped_vocab, default_spec, distractor_lines)
    for doc in train + test:
        weak = WeakLabeledDoc.from_sim(doc)
        boxes = ocr_labeling_fn(weak, label_cfg)
        assert len(boxes) == len(weak.weak_labels)
        assert {b.medicine for b in boxes} == set(weak.weak_labels)
        assert all(b.source == "ocr-fn" for b in boxes)


def test_label_soundness_at_zero_noise(clean_docs, label_cfg):
    for weak in clean_docs[:8]:
        boxes = ocr_labeling_fn(weak, label_cfg)
        by_box = {(u.box.top, u.box.left): u for u in weak.doc.units}
        for labeled in boxes:
            unit = by_box[(labeled.box.top, labeled.box.left)]
            assert labeled.medicine in unit.text.split()


def test_each_medicine_claimed_at_most_once(noisy_docs, label_cfg):
    for weak in noisy_docs[:10]:
        boxes = ocr_labeling_fn(weak, label_cfg)
        names = [b.medicine for b in boxes]
        assert len(names) == len(set(names))
        assert len(boxes) <= len(weak.weak_labels)


def test_matched_count_equals_per_unit_decode_oracle(noisy_docs, label_cfg):
    for weak in noisy_docs[:6]:
        got = len(ocr_labeling_fn(weak, label_cfg))
        remaining = set(weak.weak_labels)
        want = 0
        for unit in weak.doc.units:
            if not remaining:
                break
            hit = None
            for path in decode_topk(unit.logits, label_cfg):
                matches = [m for m in exact_matches(path.text, frozenset(remaining))]
                if matches:
                    hit = matches[0]
                    break
            if hit is not None:
                remaining.discard(hit)
                want += 1
        assert got == want


def test_oracle_segmenter_reaches_full_coverage_by_iter2(noisy_docs, label_cfg):
    cfg = IterationConfig(iterations=2, k_label=48)
    results = iterate(noisy_docs, OracleSegmenter, cfg, label_cfg)
    assert results[1].stats.admitted_fraction == 1.0


def test_null_segmenter_freezes_training_set(noisy_docs, label_cfg):
    cfg = IterationConfig(iterations=3, k_label=48)
    results = iterate(noisy_docs, NullSegmenter, cfg, label_cfg)
    assert results[0].admitted_ids == results[1].admitted_ids == results[2].admitted_ids
    assert results[0].stats.boxes_total == results[2].stats.boxes_total


def test_admitted_set_is_monotone(noisy_docs, label_cfg):
    cfg = IterationConfig(iterations=3, k_label=48)
    results = iterate(noisy_docs, FeatureSegmenter, cfg, label_cfg)
    for earlier, later in zip(results, results[1:]):
        assert set(earlier.admitted_ids) <= set(later.admitted_ids)


def test_reference_segmenter_grows_training_set(noisy_docs, label_cfg):
    cfg = IterationConfig(iterations=2, k_label=48)
    results = iterate(noisy_docs, FeatureSegmenter, cfg, label_cfg)
    assert 0 < results[0].stats.admitted_fraction < 1
    assert results[1].stats.admitted_fraction > results[0].stats.admitted_fraction


def test_dedup_is_idempotent(noisy_docs, label_cfg):
    from rxdecode.weaklabel import _merge_boxes
    weak = noisy_docs[0]
    boxes = [LabeledBox(u.box, None, "ocr-fn") for u in weak.doc.units[:3]]
    once = _merge_boxes(boxes, [u.box for u in weak.doc.units[:3]], "seg-fn-2", 0.5)
    twice = _merge_boxes(once, [u.box for u in weak.doc.units[:3]], "seg-fn-2", 0.5)
    assert once == twice == boxes


def test_no_seed_labels_raises(shipped_vocab, default_spec, distractor_lines, med_lm):
    # noise far beyond recoverable: nothing matches, nothing admitted
    cfg = SimConfig(n_docs=6, writers=2, noise_sigma=8.0, seed=34)
    train, test = gen_dataset(cfg, shipped_vocab, default_spec, distractor_lines)
    weak = [WeakLabeledDoc.from_sim(d) for d in train + test]
    label_cfg = DecoderConfig(k=8, beam_width=8, alpha=0.6, lm=med_lm)
    with pytest.raises(DataError, match="no seed labels"):
        iterate(weak, FeatureSegmenter, IterationConfig(iterations=2, k_label=8), label_cfg)


def test_feature_segmenter_separates_medicine_lines(clean_docs):
    strong = [
        # perfect labels straight from the simulator truth
        type("S", (), {"doc": w.doc, "boxes": [LabeledBox(b, None, "ocr-fn")
                                               for b in w.doc.medicine_boxes()]})()
        for w in clean_docs[:16]
    ]
    seg = FeatureSegmenter()
    seg.train(strong)
    correct = total = 0
    for weak in clean_docs[16:]:
        predicted = {(b.top, b.left) for b in seg.predict(weak.doc)}
        for unit in weak.doc.units:
            total += 1
            correct += ((unit.box.top, unit.box.left) in predicted) == unit.is_medicine
    assert correct / total > 0.9


def test_feature_segmenter_single_class_degenerates():
    seg = FeatureSegmenter()
    box = RotatedBox(0, 0, 10, 10)
    unit = type("U", (), {"box": box, "features": np.array([1.0, 0, 2, 0.1, 3.0])})()
    doc = type("D", (), {"units": [unit]})()
    seg.train([type("S", (), {"doc": doc, "boxes": []})()])  # all negatives
    assert seg.predict(doc) == []


def test_feature_segmenter_deterministic(clean_docs):
    strong = [type("S", (), {"doc": w.doc, "boxes": [LabeledBox(b, None, "ocr-fn")
                                                     for b in w.doc.medicine_boxes()]})()
              for w in clean_docs[:10]]
    a, b = FeatureSegmenter(), FeatureSegmenter()
    a.train(strong)
    b.train(strong)
    np.testing.assert_array_equal(a.weights, b.weights)
    for weak in clean_docs[10:14]:
        assert a.predict(weak.doc) == b.predict(weak.doc)


def test_strong_label_roundtrip(noisy_docs, label_cfg, tmp_path):
    cfg = IterationConfig(iterations=1, k_label=48)
    results = iterate(noisy_docs[:10], FeatureSegmenter, cfg, label_cfg)
    path = tmp_path / "labels.jsonl"
    save_strong_labels(results[0].training_set, path)
    loaded = load_strong_labels(path)
    for strong in results[0].training_set:
        assert loaded[strong.doc.doc_id] == strong.boxes
