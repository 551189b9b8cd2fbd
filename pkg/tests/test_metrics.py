from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ifdl.data import ExplanationSections, Label
from ifdl.metrics.css import (
    SECTION_WEIGHTS,
    EmbeddingError,
    HashingEmbedder,
    SectionScores,
    css_sections,
    get_embedder,
    mean_section_scores,
    weighted_score,
)
from ifdl.metrics.detection import detection_scores, macro_average
from ifdl.metrics.localization import UndefinedMetric, localization_summary, pixel_auc, pixel_f1, pixel_iou
from ifdl.metrics.morphology import MorphOp, parse_perturbation, perturb_mask
from ifdl.metrics.text import bleu1, cider, lcs_length, rouge_l, tokenize
from oracles import (
    all_masks,
    auc_oracle,
    bleu1_oracle,
    confusion_oracle,
    f1_oracle,
    iou_oracle,
    lcs_oracle,
    mask_shapes,
    morph_oracle,
    rouge_oracle,
)

masks_strategy = st.integers(1, 8).flatmap(
    lambda h: st.integers(1, 8).flatmap(
        lambda w: st.tuples(
            st.lists(st.booleans(), min_size=h * w, max_size=h * w),
            st.lists(st.booleans(), min_size=h * w, max_size=h * w),
        ).map(lambda ab: (np.array(ab[0]).reshape(h, w), np.array(ab[1]).reshape(h, w)))
    )
)


# ---------------------------------------------------------------------------
# localization


def test_iou_f1_examples():
    a = np.zeros((8, 8), bool)
    a[:, :4] = True
    b = np.zeros((8, 8), bool)
    b[:4] = True
    assert pixel_iou(a, b) == pytest.approx(1 / 3, abs=1e-15)
    assert pixel_f1(a, b) == pytest.approx(0.5, abs=1e-15)
    assert pixel_iou(a, a) == pixel_f1(a, a) == 1.0
    assert pixel_iou(a, ~a) == pixel_f1(a, ~a) == 0.0
    empty = np.zeros((3, 3), bool)
    assert pixel_iou(empty, empty) == pixel_f1(empty, empty) == 1.0
    assert pixel_iou(empty, ~empty) == pixel_f1(~empty, empty) == 0.0
    with pytest.raises(ValueError):
        pixel_iou(np.zeros((2, 2)), np.zeros((2, 3)))


@pytest.mark.parametrize("shape", mask_shapes(3))
def test_iou_f1_exhaustive(shape):
    masks = list(all_masks(*shape))
    for p in masks:
        for g in masks:
            iou, f1 = pixel_iou(p, g), pixel_f1(p, g)
            assert abs(iou - iou_oracle(p, g)) <= 1e-9
            assert abs(f1 - f1_oracle(p, g)) <= 1e-9
            assert iou <= f1 + 1e-12


@settings(max_examples=200, deadline=None)
@given(masks_strategy)
def test_iou_at_most_f1(pair):
    p, g = pair
    assert pixel_iou(p, g) <= pixel_f1(p, g) + 1e-12 <= 1 + 1e-12


def test_auc_examples():
    scores = np.array([0.9, 0.8, 0.7, 0.8, 0.3, 0.1])
    gt = np.array([1, 1, 1, 0, 0, 0], bool)
    # 7 of 9 positive-negative pairs won outright, one tie (0.8 vs 0.8)
    assert pixel_auc(scores, gt) == pytest.approx(7.5 / 9, abs=1e-12)
    assert auc_oracle(scores, gt) == pytest.approx(7.5 / 9, abs=1e-12)
    assert pixel_auc(np.where(gt, 0.9, 0.1), gt) == 1.0
    assert pixel_auc(np.full(6, 0.4), gt) == 0.5
    with pytest.raises(UndefinedMetric):
        pixel_auc(np.zeros(4), np.ones(4, bool))
    with pytest.raises(UndefinedMetric):
        pixel_auc(np.zeros(4), np.zeros(4, bool))


def test_auc_exhaustive_2x2_three_level_scores():
    levels = (0.0, 0.5, 1.0)
    grids = [np.array(v).reshape(2, 2) for v in np.array(np.meshgrid(*[levels] * 4)).T.reshape(-1, 4)]
    for gt in all_masks(2, 2):
        if gt.all() or not gt.any():
            continue
        for s in grids:
            assert abs(pixel_auc(s, gt) - auc_oracle(s, gt)) <= 1e-9


@pytest.mark.parametrize("shape", mask_shapes(3))
def test_auc_all_masks_random_scores(shape):
    rng = np.random.default_rng(sum(shape))
    for gt in all_masks(*shape):
        if gt.all() or not gt.any():
            continue
        for _ in range(3):
            s = rng.integers(0, 4, size=shape) / 3  # coarse levels force ties
            assert abs(pixel_auc(s, gt) - auc_oracle(s, gt)) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_auc_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    gt = rng.random((5, 5)) > 0.5
    gt[0, 0], gt[0, 1] = True, False
    s = rng.integers(0, 6, size=(5, 5)) / 5
    base = pixel_auc(s, gt)
    assert pixel_auc(np.exp(3 * s) - 7, gt) == pytest.approx(base, abs=1e-12)
    assert pixel_auc(s**3, gt) == pytest.approx(base, abs=1e-12)


def test_localization_summary_skips_undefined_auc():
    out = localization_summary([{"iou": 0.5, "f1": 0.6, "auc": 0.9}, {"iou": 1.0, "f1": 1.0, "auc": None}])
    assert out["iou"] == 0.75 and out["auc"] == 0.9
    assert out["auc_n"] == 1 and out["auc_skipped"] == 1


# ---------------------------------------------------------------------------
# morphology


def test_morphology_examples():
    m = np.zeros((5, 5), bool)
    m[2, 2] = True
    expected = np.zeros((5, 5), bool)
    expected[1:4, 1:4] = True
    assert np.array_equal(perturb_mask(m, "dilate", 1), expected)
    eroded = perturb_mask(np.ones((4, 4), bool), MorphOp.ERODE, 1)
    interior = np.zeros((4, 4), bool)
    interior[1:3, 1:3] = True
    assert np.array_equal(eroded, interior)
    assert not perturb_mask(np.zeros((4, 4), bool), "dilate", 2).any()
    with pytest.raises(ValueError):
        perturb_mask(m, "dilate", 0)


@pytest.mark.parametrize("radius", [1, 2])
@pytest.mark.parametrize("shape", mask_shapes(3))
def test_morphology_exhaustive(shape, radius):
    for m in all_masks(*shape):
        for op in ("dilate", "erode"):
            assert np.array_equal(perturb_mask(m, op, radius), morph_oracle(m, op, radius))


@settings(max_examples=150, deadline=None)
@given(masks_strategy, st.integers(1, 3))
def test_morphology_extensive_and_dual(pair, radius):
    m = pair[0]
    dil, ero = perturb_mask(m, "dilate", radius), perturb_mask(m, "erode", radius)
    assert not (m & ~dil).any()
    assert not (ero & ~m).any()
    # duality under complement, away from the zero-padded frame
    padded = np.pad(m, radius)
    inner = (slice(radius, -radius),) * 2
    assert np.array_equal(perturb_mask(padded, "dilate", radius)[inner], ~perturb_mask(~padded, "erode", radius)[inner])


def test_parse_perturbation():
    assert parse_perturbation("dilate:1") == (MorphOp.DILATE, 1)
    assert parse_perturbation("Erode:3") == (MorphOp.ERODE, 3)
    with pytest.raises(ValueError):
        parse_perturbation("open:1")


# ---------------------------------------------------------------------------
# text


def test_bleu_examples():
    assert bleu1("the cat sat", "the cat slept on the mat") == pytest.approx(2 / 3 * math.exp(-1), abs=1e-12)
    assert round(bleu1("the cat sat", "the cat slept on the mat"), 6) == 0.245253
    assert bleu1("a b c", "a b c") == 1.0
    assert bleu1("x y", "a b") == 0.0
    assert bleu1("", "a b") == 0.0


def test_rouge_examples():
    assert rouge_l("the cat sat", "the cat slept") == pytest.approx(2 / 3, abs=1e-12)
    assert rouge_l("a b c", "a b c") == pytest.approx(1.0, abs=1e-12)
    assert rouge_l("x y", "a b") == 0.0
    assert rouge_l("", "a b") == 0.0


def test_tokenize_rules():
    assert tokenize("The Cat, sat!") == ["the", "cat", "sat"]
    assert tokenize(["Keep", "AS", "is"]) == ["Keep", "AS", "is"]


words = st.lists(st.sampled_from("a b c d e".split()), min_size=0, max_size=7)


@settings(max_examples=300, deadline=None)
@given(words, words)
def test_lcs_bleu_rouge_match_brute_force(a, b):
    assert lcs_length(a, b) == lcs_oracle(a, b)
    assert abs(rouge_l(a, b) - rouge_oracle(a, b)) <= 1e-9
    if b:
        assert abs(bleu1(a, b) - bleu1_oracle(a, b)) <= 1e-9


def test_cider_examples():
    scores, mean = cider(["a b c d e", "v w x y z"], [["a b c d e"], ["v w x y z"]])
    assert scores == pytest.approx([10.0, 10.0], abs=1e-12) and mean == pytest.approx(10.0)
    scores, _ = cider(["q r s", "v w x y z"], [["a b c d e"], ["v w x y z"]])
    assert scores[0] == 0.0
    with pytest.warns(RuntimeWarning):
        scores, mean = cider(["a b c"], [["a b c"]])
    assert scores == [0.0] and mean == 0.0
    assert cider(["", "a"], [["a b"], ["c"]])[0][0] == 0.0


# ---------------------------------------------------------------------------
# CSS


def _expl(*parts):
    return ExplanationSections(*parts)


def test_css_identical_is_one():
    e = _expl("tampered", "top left", "a red ellipse", "sharp edges", "forgery")
    s = css_sections(e, e, HashingEmbedder())
    assert s.as_tuple() == pytest.approx((1.0,) * 5, abs=1e-12)
    assert s.weighted == pytest.approx(1.0, abs=1e-12)


def test_css_empty_conventions():
    a = _expl("tampered", "", "x", "", "")
    b = _expl("tampered", "", "", "y", "")
    s = css_sections(a, b, HashingEmbedder())
    assert s.areas == 1.0 and s.summary == 1.0
    assert s.tampered_content == 0.0 and s.visual_inconsistencies == 0.0


def test_reference_weighted_rows():
    assert SECTION_WEIGHTS == (0.05, 0.35, 0.40, 0.15, 0.05)
    ours = weighted_score((0.87, 0.67, 0.49, 0.70, 0.84))
    baseline = weighted_score((0.83, 0.61, 0.44, 0.67, 0.80))
    assert ours == pytest.approx(0.621, abs=1e-12)
    assert baseline == pytest.approx(0.5715, abs=1e-12)
    assert round(ours, 2) == 0.62 and round(baseline, 2) == 0.57


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=5, max_size=5))
def test_weighted_css_is_convex(scores):
    w = SectionScores(*scores).weighted
    assert min(scores) - 1e-12 <= w <= max(scores) + 1e-12


def test_mean_section_scores():
    a, b = SectionScores(1, 0, 1, 0, 1), SectionScores(0, 0, 0, 1, 1)
    assert mean_section_scores([a, b]).as_tuple() == (0.5, 0.0, 0.5, 0.5, 1.0)


def test_embedding_failure_names_sample_and_section():
    class Broken:
        name = "broken"

        def embed(self, texts):
            raise OSError("offline")

    with pytest.raises(EmbeddingError, match=r"sample s7.*'type'"):
        css_sections(_expl("a", "", "", "", ""), _expl("b", "", "", "", ""), Broken(), sample_id="s7")
    with pytest.raises(ValueError):
        get_embedder("nope")


def test_hashing_embedder_deterministic():
    a = HashingEmbedder().embed(["one two", "three"])
    b = HashingEmbedder().embed(["one two", "three"])
    assert a.shape == (2, 512) and np.array_equal(a, b)


# ---------------------------------------------------------------------------
# detection


def test_detection_perfect():
    labels = [0, 1, 2, 2, 1, 0]
    rep = detection_scores(labels, labels)
    assert all(v == (1.0, 1.0) for v in rep.per_class.values())
    assert rep.overall_accuracy == rep.overall_f1 == 1.0
    assert set(rep.per_class) == {lab.value for lab in Label}


def test_detection_macro_rule():
    assert round(macro_average([0.998, 1.000, 0.994]), 3) == 0.997
    assert macro_average([0.998, 1.000, 0.994]) == pytest.approx(0.997333, abs=1e-6)


def test_detection_confusion_oracle():
    preds = [0, 1, 1, 2, 0, 2]
    labels = [0, 1, 2, 2, 1, 0]
    rep = detection_scores(preds, labels)
    expected = confusion_oracle(preds, labels, 3)
    for (acc, f1), (ea, ef) in zip(rep.per_class.values(), expected):
        assert acc == pytest.approx(ea, abs=1e-12) and f1 == pytest.approx(ef, abs=1e-12)
    assert rep.overall_accuracy == pytest.approx(sum(a for a, _ in expected) / 3, abs=1e-12)
    assert not rep.flags


def test_detection_absent_class_flagged():
    rep = detection_scores([0, 1, 1], [0, 1, 1])
    assert rep.per_class[Label.TAMPERED.value][1] == 1.0
    assert rep.flags
    rep = detection_scores([0, 2, 1], [0, 1, 1])
    assert rep.per_class[Label.TAMPERED.value][1] == 0.0
    with pytest.raises(ValueError):
        detection_scores([0], [0, 1])


# ---------------------------------------------------------------------------
# template slots


def test_template_slots():
    from ifdl.evaluation import template_slots, text_records

    ref = ExplanationSections("tampered", "top left", "a red ellipse", "sharp edges", "forgery in top left")
    assert template_slots(ref) == ("ellipse", "red", "top left")
    swapped = ExplanationSections("tampered", "bottom right", "a red ellipse", "", "")
    assert template_slots(swapped) == ("ellipse", "red", "bottom right")
    assert template_slots(ExplanationSections("real", "", "", "", "")) == (None, None, None)
    recs = text_records(["a", "b"], [ref, swapped], [ref, ref], HashingEmbedder())
    assert [r["slot_accuracy"] for r in recs] == [1.0, 0.0]
