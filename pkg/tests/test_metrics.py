import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
import sweep
from adlayout.errors import EmptyAggregate, GridMismatch
from adlayout.layout import Layout
from adlayout.metrics import (
    METRIC_COLUMNS,
    MetricReport,
    ViolationReport,
    aggregate,
    check_violations,
    failed_report,
    format_metric,
    gradient_magnitude,
    metric_alignment,
    metric_occlusion,
    metric_overlap,
    metric_underlay,
    metric_unreadability,
    metric_utility,
    metric_validity,
    score_layout,
    violation_rate,
)
from adlayout.prompting import ElementConstraint
from adlayout.saliency import BinaryMask, GrayImage, SaliencyMap


def build(boxes, w=102, h=150):
    return Layout.build(w, h, [(c, *r) for c, r in boxes])


# -- geometry metrics --------------------------------------------------------


def test_canonical_layout_scores(canonical_layout):
    assert metric_validity(canonical_layout) == 1.0
    assert metric_overlap(canonical_layout) == 0.0
    assert metric_underlay(canonical_layout) == (1.0, 1.0)


def test_canonical_alignment_matches_oracle(canonical_layout):
    boxes = [(e.category.value, e.rect.as_tuple()) for e in canonical_layout.elements]
    expected = oracles.alignment(boxes, 102)
    assert metric_alignment(canonical_layout) == pytest.approx(expected, rel=1e-12)
    # the two texts share a left edge; the underlay's nearest axis is its
    # x-centre (51) against the texts' (49.5)
    assert expected == pytest.approx(-math.log(1 - 1.5 / 102) / 3, rel=1e-12)


def test_validity_examples():
    assert metric_validity(Layout.build(102, 150, [])) == 1.0
    assert metric_validity(Layout.build(102, 150, [("text", 0, 0, 20, 20), ("text", 90, 0, 20, 20)])) == 0.5


def test_overlap_examples():
    same = [("text", (0, 0, 10, 10))] * 2
    assert metric_overlap(build(same)) == 1.0
    trio = [("text", (0, 0, 10, 10)), ("text", (5, 0, 10, 10)), ("text", (20, 0, 10, 10))]
    assert metric_overlap(build(trio)) == pytest.approx(1 / 9)
    assert metric_overlap(build(trio[:1] + [("underlay", (0, 0, 10, 10))])) == 0.0


def test_alignment_examples():
    assert metric_alignment(build([("text", (3, 3, 10, 10))])) == 0.0
    assert metric_alignment(build([("text", (3, 3, 10, 10)), ("logo", (50, 3, 20, 40))])) == 0.0
    far = build([("text", (0, 0, 10, 10)), ("text", (50, 60, 30, 30))], w=100)
    assert metric_alignment(far) == pytest.approx(oracles.alignment(
        [("text", (0, 0, 10, 10)), ("text", (50, 60, 30, 30))], 100))


def test_underlay_examples():
    assert metric_underlay(build([("text", (0, 0, 5, 5))])) == (None, None)
    assert metric_underlay(build([("underlay", (0, 0, 10, 10)), ("text", (5, 5, 10, 10))])) == (0.25, 0.0)
    assert metric_underlay(build([("underlay", (0, 0, 10, 10))])) == (0.0, 0.0)
    # a zero-area text is skipped rather than dividing by zero
    assert metric_underlay(build([("underlay", (0, 0, 10, 10)), ("text", (1, 1, 0, 0))])) == (0.0, 0.0)


@st.composite
def small_layouts(draw):
    n = draw(st.integers(0, 5))
    return build(
        [
            (
                draw(st.sampled_from(["text", "logo", "underlay"])),
                (draw(st.integers(-3, 20)), draw(st.integers(-3, 20)), draw(st.integers(0, 15)), draw(st.integers(0, 15))),
            )
            for _ in range(n)
        ],
        w=20,
        h=20,
    )


@settings(max_examples=300, deadline=None)
@given(small_layouts(), st.randoms(use_true_random=False))
def test_geometry_metrics_properties(layout, rnd):
    loose, strict = metric_underlay(layout)
    if loose is not None:
        assert 0 <= strict <= loose <= 1
    elements = list(layout.elements)
    rnd.shuffle(elements)
    shuffled = Layout.build(20, 20, [(e.category.value, *e.rect.as_tuple()) for e in elements])
    assert metric_overlap(shuffled) == pytest.approx(metric_overlap(layout), abs=1e-15)
    assert metric_alignment(shuffled) == pytest.approx(metric_alignment(layout), abs=1e-15)
    assert 0 <= metric_overlap(layout) <= 1
    assert metric_alignment(layout) >= 0


# -- pixel metrics -----------------------------------------------------------


def test_utility_examples():
    layout = build([("text", (0, 0, 5, 10))], 10, 10)
    left_free = np.zeros((10, 10), dtype=bool)
    left_free[:, 5:] = True
    assert metric_utility(layout, BinaryMask(left_free)) == 1.0
    assert metric_utility(layout, BinaryMask(np.ones((10, 10), dtype=bool))) is None
    assert metric_utility(build([], 10, 10), BinaryMask(left_free)) == 0.0
    assert metric_utility(build([], 10, 10), BinaryMask(left_free), "element-area") is None
    with pytest.raises(GridMismatch):
        metric_utility(layout, BinaryMask(np.zeros((5, 5), dtype=bool)))
    with pytest.raises(ValueError):
        metric_utility(layout, BinaryMask(left_free), "area")


def test_occlusion_examples():
    layout = build([("text", (2, 2, 4, 4))], 10, 10)
    assert metric_occlusion(layout, SaliencyMap(np.zeros((10, 10)))) == 0.0
    assert metric_occlusion(layout, SaliencyMap(np.ones((10, 10)))) == 1.0
    half = np.zeros((10, 10))
    half[:, 4:] = 1
    assert metric_occlusion(layout, SaliencyMap(half)) == 0.5
    assert metric_occlusion(build([], 10, 10), SaliencyMap(half)) == 0.0
    with pytest.raises(GridMismatch):
        metric_occlusion(layout, SaliencyMap(np.zeros((4, 10))))


def test_unreadability_examples():
    bg = np.zeros((10, 10))
    bg[:, 5:] = 1.0
    text = [("text", (3, 0, 4, 10))]
    score = metric_unreadability(build(text, 10, 10), GrayImage(bg))
    # columns 4 and 5 straddle the step: central difference 0.5, normalised by sqrt(2)
    assert score == pytest.approx((2 * 10 * 0.5 / math.sqrt(2)) / 40)
    assert score == pytest.approx(oracles.unreadability(text, bg.ravel().tolist(), 10, 10))
    covered = text + [("underlay", (0, 0, 10, 10))]
    assert metric_unreadability(build(covered, 10, 10), GrayImage(bg)) == 0.0
    assert metric_unreadability(build(text, 10, 10), GrayImage(np.full((10, 10), 0.7))) == 0.0


def test_gradient_matches_oracle():
    rng = np.random.default_rng(5)
    for h, w in [(1, 1), (1, 6), (5, 1), (7, 9)]:
        values = rng.random((h, w))
        expected = oracles.gradient_norm(values.ravel().tolist(), w, h)
        np.testing.assert_allclose(gradient_magnitude(GrayImage(values)).ravel(), expected, atol=1e-12)


def test_pixel_metrics_on_random_layouts_match_oracle():
    rng = np.random.default_rng(11)
    for _ in range(200):
        w, h = int(rng.integers(4, 14)), int(rng.integers(4, 14))
        boxes = [
            (str(rng.choice(["text", "logo", "underlay"])),
             (int(rng.integers(-2, w)), int(rng.integers(-2, h)), int(rng.integers(0, w)), int(rng.integers(0, h))))
            for _ in range(int(rng.integers(0, 4)))
        ]
        layout = build(boxes, w, h)
        values = rng.random((h, w))
        salient = values >= 0.5
        flat = values.ravel().tolist()
        assert metric_occlusion(layout, SaliencyMap(values)) == pytest.approx(oracles.occlusion(boxes, flat, w, h))
        for denom in ("non-salient", "element-area"):
            got = metric_utility(layout, BinaryMask(salient), denom)
            want = oracles.utility(boxes, sweep.mask_int(salient), w, h, denom)
            assert got == want
        assert metric_unreadability(layout, GrayImage(values)) == pytest.approx(oracles.unreadability(boxes, flat, w, h))


def test_sweep_sample_matches_oracle():
    """A thinned copy of the acceptance sweep, to keep the unit run quick."""
    masks = {name: (m, sweep.mask_int(m)) for name, m in sweep.masks().items()}
    for boxes in itertools.islice(sweep.layouts(), 0, None, 97):
        layout = build(boxes, 8, 8)
        assert metric_overlap(layout) == pytest.approx(oracles.overlap(boxes, 8, 8), abs=1e-12)
        loose, strict = metric_underlay(layout)
        o_loose, o_strict = oracles.underlay(boxes, 8, 8)
        assert (loose is None) == (o_loose is None)
        if loose is not None:
            assert loose == pytest.approx(o_loose, abs=1e-12) and strict == o_strict
        for m, bits in masks.values():
            assert metric_utility(layout, BinaryMask(m)) == oracles.utility(boxes, bits, 8, 8)
            assert metric_occlusion(layout, SaliencyMap(m.astype(float))) == pytest.approx(
                oracles.occlusion(boxes, m.astype(float).ravel().tolist(), 8, 8), abs=1e-12)


# -- full scoring ------------------------------------------------------------


def test_score_layout_scales_to_grid(canonical_layout):
    sal = SaliencyMap(np.zeros((300, 204)))
    report = score_layout(canonical_layout, sal, GrayImage(np.zeros((300, 204))), saliency_source="test")
    assert report.utility == pytest.approx(2 * 2 * (102 * 24) / (204 * 300))
    assert report.occlusion == 0.0 and report.unreadability == 0.0
    assert report.saliency_source == "test" and report.theta == 0.5
    bare = score_layout(canonical_layout)
    assert bare.utility is None and bare.validity == 1.0
    assert list(report.columns()) == list(METRIC_COLUMNS)
    assert MetricReport.from_json(report.to_json()) == report


def test_score_layout_is_deterministic(canonical_layout):
    rng = np.random.default_rng(2)
    sal = SaliencyMap(rng.random((150, 102)))
    bg = GrayImage(rng.random((150, 102)))
    assert score_layout(canonical_layout, sal, bg) == score_layout(canonical_layout, sal, bg)


# -- violations and aggregation ----------------------------------------------


def test_violation_examples(canonical_layout):
    assert not check_violations(canonical_layout, ElementConstraint.parse("text 0 | text 1 | underlay 2")).has_violation
    report = check_violations(canonical_layout, ElementConstraint.parse("text 0 | underlay 1"))
    assert report.constraint_mismatch and report.has_violation
    beside = Layout.build(102, 150, [("text", 2, 10, 40, 10), ("underlay", 60, 10, 40, 10)])
    report = check_violations(beside, ElementConstraint.parse("text 0 | underlay 1"))
    assert not report.constraint_mismatch
    assert report.orphan_underlays == (1,)
    assert ViolationReport.from_json(report.to_json()) == report


def test_aggregate_examples():
    one = MetricReport(validity=1.0, overlap=0.2, underlay_loose=0.5)
    assert aggregate([one]) == one
    two = aggregate([one, MetricReport(validity=0.5, overlap=0.4)])
    assert two.underlay_loose == 0.5 and two.validity == 0.75 and two.overlap == pytest.approx(0.3)
    three = aggregate([MetricReport(validity=v) for v in (1.0, 0.5, 0.0)])
    assert three.validity == 0.5 and three.overlap is None
    assert aggregate([MetricReport(saliency_source="a"), MetricReport(saliency_source="b")]).saliency_source == "mixed"
    with pytest.raises(EmptyAggregate):
        aggregate([])


def test_failed_sample_report():
    report = failed_report(theta=0.5)
    assert report.validity == 0.0 and report.overlap is None


def test_violation_rate_format():
    reports = [ViolationReport(False), ViolationReport(True), ViolationReport(False, (2,))]
    assert violation_rate(reports) == pytest.approx(200 / 3)
    assert f"{violation_rate(reports):.2f}" == "66.67"
    with pytest.raises(EmptyAggregate):
        violation_rate([])
    assert format_metric(None) == "" and format_metric(0.25) == "0.25"
