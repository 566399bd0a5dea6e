import xml.etree.ElementTree as ET

import numpy as np
import pytest
from PIL import Image

from adlayout.client import VLMClient
from adlayout.config import fixture_path
from adlayout.errors import EmptyAggregate, GridMismatch, IncompleteRun
from adlayout.judge import judge_run
from adlayout.layout import Category, Layout, scale_layout
from adlayout.pipeline import parse_condition, run_experiment
from adlayout.render import (
    RenderStyle,
    five_number,
    render_layout,
    save_png,
    svg_boxplot,
    svg_scatter,
    write_run_report,
)

GREY = (40, 80, 120)
OPAQUE = RenderStyle(opacity={c: 1.0 for c in (Category.UNDERLAY, Category.TEXT, Category.LOGO)}, stroke_width=0)


def background(w, h, color=GREY):
    return Image.new("RGB", (w, h), color)


def px(image, x, y):
    return image.getpixel((x, y))[:3]


def test_empty_layout_leaves_background():
    out = render_layout(background(30, 20), Layout.build(30, 20, []))
    assert np.array_equal(np.asarray(out)[..., :3], np.asarray(background(30, 20)))


def test_corner_probes(canonical_layout):
    big = scale_layout(canonical_layout, 5, 5)
    text = Layout.build(510, 750, [("text", *big.elements[0].rect.as_tuple())])
    assert text.elements[0].rect.as_tuple() == (10, 565, 475, 50)
    out = render_layout(background(510, 750), text, OPAQUE)
    fill = OPAQUE.fills[Category.TEXT]
    for x, y in [(10, 565), (484, 565), (10, 614), (484, 614)]:
        assert px(out, x, y) == fill
    for x, y in [(9, 565), (10, 564), (485, 565), (484, 615), (485, 615), (9, 614)]:
        assert px(out, x, y) == GREY


def blend(top, bottom, alpha):
    return tuple(int(np.floor(t * alpha + b * (1 - alpha) + 0.5)) for t, b in zip(top, bottom))


def test_compositing_order(canonical_layout):
    big = scale_layout(canonical_layout, 5, 5)
    out = render_layout(background(510, 750), big)
    style = RenderStyle()
    u, t = style.fills[Category.UNDERLAY], style.fills[Category.TEXT]
    # text over underlay over background, each at 0.55
    under = tuple(c * 0.55 + g * 0.45 for c, g in zip(u, GREY))
    assert px(out, 100, 580) == blend(t, under, 0.55)
    # underlay only (between the underlay top at 555 and the text top at 565)
    assert px(out, 100, 560) == blend(u, GREY, 0.55)
    # strokes use the fill colour, drawn one pixel wide on the inner edge
    assert px(out, 10, 580) == t


def test_draw_order_ignores_element_order():
    a = Layout.build(20, 20, [("text", 2, 2, 10, 10), ("underlay", 0, 0, 20, 20)])
    b = Layout.build(20, 20, [("underlay", 0, 0, 20, 20), ("text", 2, 2, 10, 10)])
    assert render_layout(background(20, 20), a).tobytes() == render_layout(background(20, 20), b).tobytes()
    with pytest.raises(ValueError):
        RenderStyle(order=(Category.TEXT, Category.UNDERLAY, Category.LOGO))


def test_render_is_deterministic(tmp_path, canonical_layout):
    rng = np.random.default_rng(1)
    bg = Image.fromarray(rng.integers(0, 255, (150, 102, 3), dtype=np.uint8), "RGB")
    one = render_layout(bg, canonical_layout)
    two = render_layout(bg, canonical_layout)
    assert one.tobytes() == two.tobytes()
    p1, p2 = save_png(one, tmp_path / "1.png"), save_png(two, tmp_path / "2.png")
    assert p1.read_bytes() == p2.read_bytes()


def test_grid_mismatch(canonical_layout):
    with pytest.raises(GridMismatch):
        render_layout(background(204, 300), canonical_layout)


# -- charts ------------------------------------------------------------------


def median_line(svg):
    root = ET.fromstring(svg)
    return [el for el in root.iter() if el.get("class") == "median"]


def test_boxplot_median_position():
    svg = svg_boxplot({"ours": list(range(1, 11))})
    (line,) = median_line(svg)
    assert line.get("data-value") == "5.50"
    # 1..10 maps onto a 300 px axis starting at y=40: 40 + (10 - 5.5) / 9 * 300
    assert float(line.get("y1")) == pytest.approx(190.0)
    assert five_number(list(range(1, 11))) == {"min": 1.0, "q1": 3.25, "median": 5.5, "q3": 7.75, "max": 10.0}


def test_boxplot_structure():
    svg = svg_boxplot({"a": {"alignment": [5, 5, 5], "overlap": [2, 3]}, "b": {"alignment": [7], "overlap": [9, 9]}})
    root = ET.fromstring(svg)
    groups = [el for el in root.iter() if el.get("class") == "group"]
    assert [g.get("data-criterion") for g in groups] == ["alignment", "overlap"]
    assert all(len([b for b in g if b.get("class") == "box"]) == 2 for g in groups)
    flat = [el for el in root.iter("{http://www.w3.org/2000/svg}rect") if el.get("fill-opacity")][0]
    assert float(flat.get("height")) == 0.0
    assert svg == svg_boxplot({"a": {"alignment": [5, 5, 5], "overlap": [2, 3]}, "b": {"alignment": [7], "overlap": [9, 9]}})
    with pytest.raises(EmptyAggregate):
        svg_boxplot({"a": []})


def panel(svg):
    return next(el for el in ET.fromstring(svg).iter() if el.get("class") == "panel")


def test_scatter_counts():
    svg = svg_scatter([(3, 7), (2, 9)])
    assert panel(svg).get("data-above") == "2" and panel(svg).get("data-below") == "0"
    assert "above: 2" in svg
    on = panel(svg_scatter([(4, 4), (6, 6)]))
    assert (on.get("data-above"), on.get("data-below")) == ("0", "0")
    with pytest.raises(EmptyAggregate):
        svg_scatter([])


def test_scatter_axis_is_fixed():
    a = svg_scatter([(5, 5)])
    b = svg_scatter([(1, 10)])
    diag = lambda s: next(el for el in ET.fromstring(s).iter() if el.get("class") == "diagonal").attrib
    assert diag(a) == diag(b)


# -- report ------------------------------------------------------------------


@pytest.fixture
def fixture_run(tmp_path, manifest, store):
    client = VLMClient("replay", cassette=fixture_path("cassettes", "generation.jsonl"))
    conditions = [parse_condition(c) for c in ("baseline_0shot_nocot", "twostep_10shot")]
    run_experiment(manifest, conditions, 3, 0, client, tmp_path / "run", store)
    return tmp_path / "run", {e.id: e.image for e in manifest.entries}


def test_report_without_judge(fixture_run):
    run_dir, backgrounds = fixture_run
    text = write_run_report(run_dir, backgrounds).read_text()
    assert "## Layout metrics" in text and "## Constraint violations" in text
    assert "Judge data absent" in text
    assert len(list((run_dir / "report" / "thumbs").glob("*.png"))) == 6
    with Image.open(next((run_dir / "report" / "thumbs").glob("*.png"))) as thumb:
        assert thumb.size == (204, 300)


def test_report_with_judge_is_idempotent(fixture_run):
    run_dir, backgrounds = fixture_run
    judge = VLMClient("replay", cassette=fixture_path("cassettes", "judge.jsonl"))
    judge_run(run_dir, judge, backgrounds, compare=("twostep_10shot", "baseline_0shot_nocot"))
    first = write_run_report(run_dir, backgrounds).read_bytes()
    svgs = {p.name: p.read_bytes() for p in (run_dir / "report").glob("*.svg")}
    assert set(svgs) == {"boxplot.svg", "scatter.svg"}
    for blob in svgs.values():
        ET.fromstring(blob)
    text = first.decode()
    assert text.count("| --- |") == 0 and text.count("\n|---|") >= 3
    assert write_run_report(run_dir, backgrounds).read_bytes() == first
    assert {p.name: p.read_bytes() for p in (run_dir / "report").glob("*.svg")} == svgs


def test_incomplete_run(tmp_path):
    (tmp_path / "records").mkdir()
    with pytest.raises(IncompleteRun) as info:
        write_run_report(tmp_path)
    assert "aggregate.csv" in str(info.value)
