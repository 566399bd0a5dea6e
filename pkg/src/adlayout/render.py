"""Box rendering of layouts over backgrounds, static SVG charts and run reports."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union
from xml.sax.saxutils import escape

import numpy as np
from PIL import Image, ImageDraw

from .errors import EmptyAggregate, GridMismatch, IncompleteRun
from .layout import Category, Layout, scale_to

log = logging.getLogger(__name__)

THUMBNAIL_SIZE = (204, 300)
SCORE_RANGE = (1.0, 10.0)
DEFAULT_OPACITY = 0.55


@dataclass(frozen=True)
class RenderStyle:
    fills: Mapping[Category, tuple[int, int, int]] = field(
        default_factory=lambda: {
            Category.UNDERLAY: (255, 214, 0),
            Category.TEXT: (0, 170, 60),
            Category.LOGO: (220, 30, 30),
        }
    )
    opacity: Mapping[Category, float] = field(
        default_factory=lambda: {c: DEFAULT_OPACITY for c in (Category.UNDERLAY, Category.TEXT, Category.LOGO)}
    )
    stroke: Optional[tuple[int, int, int]] = None  # None: use the fill colour
    stroke_width: int = 1
    order: tuple[Category, ...] = (Category.UNDERLAY, Category.TEXT, Category.LOGO)
    labels: bool = False

    def __post_init__(self):
        if self.order.index(Category.UNDERLAY) != 0:
            raise ValueError("underlays must be drawn first")


DEFAULT_STYLE = RenderStyle()


def _background_array(background) -> np.ndarray:
    if isinstance(background, (str, Path)):
        with Image.open(background) as img:
            background = img.convert("RGBA")
    if isinstance(background, Image.Image):
        return np.asarray(background.convert("RGBA"), dtype=np.float64) / 255.0
    arr = np.asarray(background, dtype=np.float64)
    if arr.ndim == 2:
        arr = np.stack([arr, arr, arr, np.ones_like(arr)], axis=-1)
    elif arr.shape[-1] == 3:
        arr = np.concatenate([arr, np.ones(arr.shape[:2] + (1,))], axis=-1)
    if arr.max(initial=0) > 1.0:
        arr = arr / 255.0
    return arr


def _over(dst: np.ndarray, rgb: np.ndarray, alpha: float) -> None:
    """Source-over compositing of a flat colour, in place on straight-alpha RGBA."""
    da = dst[..., 3:4]
    out_a = alpha + da * (1.0 - alpha)
    safe = np.where(out_a > 0, out_a, 1.0)
    dst[..., :3] = (rgb * alpha + dst[..., :3] * da * (1.0 - alpha)) / safe
    dst[..., 3:4] = out_a


def render_layout(background, layout: Layout, style: RenderStyle = DEFAULT_STYLE) -> Image.Image:
    """Composite semi-transparent element boxes over ``background``.

    ``background`` is a path, a PIL image or an array; the layout must already
    be on the background's pixel grid (see :func:`scale_to`).
    """
    canvas = _background_array(background).copy()
    h, w = canvas.shape[:2]
    if (layout.canvas.w, layout.canvas.h) != (w, h):
        raise GridMismatch(f"layout canvas {layout.canvas.w}x{layout.canvas.h} does not match background {w}x{h}")
    rank = {c: i for i, c in enumerate(style.order)}
    ordered = sorted(layout.elements, key=lambda e: (rank.get(e.category, len(rank)), e.index))
    for e in ordered:
        r = e.rect
        x0, y0, x1, y1 = max(r.x, 0), max(r.y, 0), min(r.right, w), min(r.bottom, h)
        if x1 <= x0 or y1 <= y0:
            continue
        fill = np.array(style.fills[e.category], dtype=np.float64) / 255.0
        _over(canvas[y0:y1, x0:x1], fill, float(style.opacity[e.category]))
        sw = style.stroke_width
        if sw > 0:
            stroke = fill if style.stroke is None else np.array(style.stroke, dtype=np.float64) / 255.0
            ring = np.zeros((y1 - y0, x1 - x0), dtype=bool)
            ring[:sw, :] = ring[-sw:, :] = True
            ring[:, :sw] = ring[:, -sw:] = True
            canvas[y0:y1, x0:x1][ring, :3] = stroke
            canvas[y0:y1, x0:x1][ring, 3] = 1.0
    image = Image.fromarray(np.clip(np.rint(canvas * 255.0), 0, 255).astype(np.uint8), "RGBA")
    if style.labels:
        draw = ImageDraw.Draw(image)
        for e in ordered:
            draw.text((e.rect.x + 2, e.rect.y + 1), e.label, fill=(0, 0, 0, 255))
    return image


def render_on_background(background_path: Union[str, Path], layout: Layout,
                         style: RenderStyle = DEFAULT_STYLE) -> Image.Image:
    """Scale a prompt-canvas layout to the background resolution and render it."""
    with Image.open(background_path) as img:
        bg = img.convert("RGBA")
    return render_layout(bg, scale_to(layout, *bg.size), style)


def save_png(image: Image.Image, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image.save(path, format="PNG", optimize=False, compress_level=6)
    return path


# -- statistics shared by charts and the judge summary -----------------------


def five_number(values: Sequence[float]) -> dict[str, float]:
    """min, linear-interpolated quartiles, median, max."""
    if len(values) == 0:
        raise EmptyAggregate("five-number summary of an empty series")
    q = np.percentile(np.asarray(values, dtype=np.float64), [0, 25, 50, 75, 100])
    return dict(zip(("min", "q1", "median", "q3", "max"), (float(v) for v in q)))


def diagonal_split(pairs: Sequence[tuple[float, float]]) -> tuple[int, int, int]:
    """(above, below, on) counts relative to y = x."""
    above = sum(1 for x, y in pairs if y > x)
    below = sum(1 for x, y in pairs if y < x)
    return above, below, len(pairs) - above - below


# -- SVG ---------------------------------------------------------------------


def _f(v: float) -> str:
    return f"{v:.2f}"


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">'
    )
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>"]) + "\n"


def _y_axis(x: float, top: float, bottom: float, to_y) -> list[str]:
    out = [f'<line x1="{_f(x)}" y1="{_f(top)}" x2="{_f(x)}" y2="{_f(bottom)}" stroke="black"/>']
    for tick in range(int(SCORE_RANGE[0]), int(SCORE_RANGE[1]) + 1):
        y = to_y(tick)
        out.append(f'<line x1="{_f(x - 4)}" y1="{_f(y)}" x2="{_f(x)}" y2="{_f(y)}" stroke="black"/>')
        out.append(f'<text x="{_f(x - 7)}" y="{_f(y + 4)}" text-anchor="end">{tick}</text>')
    return out


_PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3")


def svg_boxplot(series: Mapping, title: str = "Scores", y_label: str = "score") -> str:
    """Box-and-whisker chart on a fixed 1-10 axis.

    ``series`` maps system name to either a list of scores or a mapping of
    criterion to list of scores; criteria form groups along the x axis.
    """
    if not series:
        raise EmptyAggregate("no series to plot")
    systems = list(series)
    groups: dict[str, dict[str, Sequence[float]]] = {}
    for name in systems:
        data = series[name]
        if not isinstance(data, Mapping):
            data = {y_label: data}
        for crit, values in data.items():
            if len(values) == 0:
                raise EmptyAggregate(f"series {name!r} has no {crit} values")
            groups.setdefault(crit, {})[name] = values
    box_w, gap, group_gap = 28.0, 8.0, 30.0
    group_w = len(systems) * (box_w + gap) - gap
    left, top, plot_h = 60.0, 40.0, 300.0
    width = int(left + len(groups) * (group_w + group_gap) + 20 + 120)
    height = int(top + plot_h + 60)
    lo, hi = SCORE_RANGE

    def to_y(v: float) -> float:
        return top + (hi - v) / (hi - lo) * plot_h

    body = [f'<text x="{_f(width / 2)}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>']
    body += _y_axis(left - 10, top, top + plot_h, to_y)
    body.append(
        f'<text x="15" y="{_f(top + plot_h / 2)}" transform="rotate(-90 15 {_f(top + plot_h / 2)})" '
        f'text-anchor="middle">{escape(y_label)}</text>'
    )
    gx = left
    for crit, members in groups.items():
        body.append(f'<g class="group" data-criterion="{escape(crit)}">')
        for si, name in enumerate(systems):
            if name not in members:
                continue
            s = five_number(members[name])
            x = gx + si * (box_w + gap)
            cx = x + box_w / 2
            color = _PALETTE[si % len(_PALETTE)]
            body += [
                f'<g class="box" data-system="{escape(name)}">',
                f'<line class="whisker" x1="{_f(cx)}" y1="{_f(to_y(s["max"]))}" x2="{_f(cx)}" '
                f'y2="{_f(to_y(s["min"]))}" stroke="black"/>',
                f'<rect x="{_f(x)}" y="{_f(to_y(s["q3"]))}" width="{_f(box_w)}" '
                f'height="{_f(to_y(s["q1"]) - to_y(s["q3"]))}" fill="{color}" fill-opacity="0.6" stroke="black"/>',
                f'<line class="median" data-value="{_f(s["median"])}" x1="{_f(x)}" y1="{_f(to_y(s["median"]))}" '
                f'x2="{_f(x + box_w)}" y2="{_f(to_y(s["median"]))}" stroke="black" stroke-width="2"/>',
                "</g>",
            ]
        body.append(
            f'<text x="{_f(gx + group_w / 2)}" y="{_f(top + plot_h + 20)}" text-anchor="middle">{escape(crit)}</text>'
        )
        body.append("</g>")
        gx += group_w + group_gap
    for si, name in enumerate(systems):
        ly = top + 14 * si
        body.append(f'<rect x="{_f(gx)}" y="{_f(ly)}" width="10" height="10" fill="{_PALETTE[si % len(_PALETTE)]}"/>')
        body.append(f'<text x="{_f(gx + 14)}" y="{_f(ly + 9)}">{escape(name)}</text>')
    return _svg(width, height, body)


def svg_scatter(pairs, x_label: str = "baseline", y_label: str = "ours", title: str = "Paired scores") -> str:
    """Square scatter plot(s) with the y = x diagonal and above/below counts.

    ``pairs`` is a list of (x, y) tuples or a mapping of panel name to such
    lists.  Axes are fixed to the 1-10 score range.
    """
    panels = pairs if isinstance(pairs, Mapping) else {"": pairs}
    if not panels or any(len(p) == 0 for p in panels.values()):
        raise EmptyAggregate("no points to plot")
    size, margin, top = 240.0, 50.0, 40.0
    lo, hi = SCORE_RANGE
    width = int(margin + len(panels) * (size + margin))
    height = int(top + size + 50)
    body = [f'<text x="{_f(width / 2)}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>']
    for pi, (name, pts) in enumerate(panels.items()):
        ox = margin + pi * (size + margin)

        def to_x(v, ox=ox):
            return ox + (v - lo) / (hi - lo) * size

        def to_y(v):
            return top + (hi - v) / (hi - lo) * size

        above, below, _ = diagonal_split(pts)
        body.append(f'<g class="panel" data-panel="{escape(str(name))}" data-above="{above}" data-below="{below}">')
        body.append(f'<rect x="{_f(ox)}" y="{_f(top)}" width="{_f(size)}" height="{_f(size)}" fill="none" stroke="black"/>')
        body.append(
            f'<line class="diagonal" x1="{_f(to_x(lo))}" y1="{_f(to_y(lo))}" x2="{_f(to_x(hi))}" '
            f'y2="{_f(to_y(hi))}" stroke="grey" stroke-dasharray="4 3"/>'
        )
        for tick in (1, 4, 7, 10):
            body.append(f'<text x="{_f(to_x(tick))}" y="{_f(top + size + 14)}" text-anchor="middle">{tick}</text>')
            body.append(f'<text x="{_f(ox - 6)}" y="{_f(to_y(tick) + 4)}" text-anchor="end">{tick}</text>')
        for x, y in pts:
            body.append(f'<circle cx="{_f(to_x(x))}" cy="{_f(to_y(y))}" r="3" fill="#4c72b0" fill-opacity="0.6"/>')
        body.append(f'<text class="above" x="{_f(ox + 6)}" y="{_f(top + 14)}">above: {above}</text>')
        body.append(
            f'<text class="below" x="{_f(ox + size - 6)}" y="{_f(top + size - 6)}" text-anchor="end">below: {below}</text>'
        )
        label = f"{name}: " if name else ""
        body.append(
            f'<text x="{_f(ox + size / 2)}" y="{_f(top + size + 32)}" text-anchor="middle">'
            f"{escape(label + x_label)} (x) vs {escape(y_label)} (y)</text>"
        )
        body.append("</g>")
    return _svg(width, height, body)


# -- run report --------------------------------------------------------------


def _read_csv(path: Path) -> list[list[str]]:
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def _md_table(rows: list[list[str]]) -> str:
    head, *rest = rows
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    lines += ["| " + " | ".join(r) + " |" for r in rest]
    return "\n".join(lines)


def _short(value: str) -> str:
    try:
        return f"{float(value):.4f}"
    except ValueError:
        return value


def _thumbnail(record, backgrounds: Mapping[str, Path], style: RenderStyle) -> Image.Image:
    layout = record.layout_obj()
    bg_path = backgrounds.get(record.sample_id)
    if bg_path is not None and Path(bg_path).is_file():
        with Image.open(bg_path) as img:
            bg = img.convert("RGBA").resize(THUMBNAIL_SIZE, Image.Resampling.BILINEAR)
    else:
        bg = Image.new("RGBA", THUMBNAIL_SIZE, (200, 200, 200, 255))
    if layout is None:
        return bg
    return render_layout(bg, scale_to(layout, *THUMBNAIL_SIZE), style)


def write_run_report(run_dir: Union[str, Path], backgrounds: Optional[Mapping[str, Path]] = None,
                     style: RenderStyle = DEFAULT_STYLE) -> Path:
    """Collect aggregate tables, judge charts and thumbnails into ``report.md``.

    ``backgrounds`` maps sample id to background image; when omitted the
    dataset named in ``run.toml`` is used if it can be found.
    """
    from .pipeline import collect_records, record_key

    run_dir = Path(run_dir)
    missing = [name for name in ("aggregate.csv", "violations.csv", "records") if not (run_dir / name).exists()]
    if missing:
        raise IncompleteRun(missing)
    if backgrounds is None:
        backgrounds = _backgrounds_from_config(run_dir)
    report_dir = run_dir / "report"
    report_dir.mkdir(exist_ok=True)

    lines = ["# Run report", "", "## Layout metrics", ""]
    agg = _read_csv(run_dir / "aggregate.csv")
    lines.append(_md_table([agg[0]] + [[r[0], *map(_short, r[1:])] for r in agg[1:]]))
    lines += ["", "## Constraint violations", "", _md_table(_read_csv(run_dir / "violations.csv")), ""]

    summary_path = run_dir / "judge_summary.json"
    lines += ["## Judge evaluation", ""]
    if summary_path.is_file():
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
        lines += _judge_section(summary, report_dir)
    else:
        lines += ["Judge data absent for this run (run `adlayout judge` to add it).", ""]

    lines += ["## Samples", ""]
    for cond, records in collect_records(run_dir).items():
        lines.append(f"### {cond}")
        lines.append("")
        for r in records:
            key = record_key(cond, r.sample_id, r.seed)
            thumb = save_png(_thumbnail(r, backgrounds, style), report_dir / "thumbs" / f"{key}.png")
            status = "failed: " + r.error if r.error else ("salvaged" if r.salvaged else "ok")
            lines.append(f"- ![{key}]({thumb.relative_to(run_dir).as_posix()}) `{r.sample_id}` ({status})")
        lines.append("")
    path = run_dir / "report.md"
    path.write_text("\n".join(lines).rstrip() + "\n", encoding="utf-8")
    return path


def _judge_section(summary: dict, report_dir: Path) -> list[str]:
    lines = []
    pairwise = summary.get("pairwise")
    if pairwise:
        rows = [["Criterion", pairwise["system_a"], pairwise["system_b"], "order disagreement (%)"]]
        for crit, p in pairwise["preference"].items():
            rows.append([crit, f"{p['A']:.1f}%", f"{p['B']:.1f}%", f"{pairwise['disagreement'][crit]:.1f}"])
        lines += ["### Pairwise preference", "", _md_table(rows), ""]
    else:
        lines += ["Pairwise judgements absent.", ""]
    absolute = summary.get("absolute")
    if absolute:
        series = {name: {c: v["scores"] for c, v in crits.items()} for name, crits in absolute.items()}
        (report_dir / "boxplot.svg").write_text(svg_boxplot(series, "Judge scores"), encoding="utf-8")
        lines += ["![judge score box plot](report/boxplot.svg)", ""]
    scatter = summary.get("scatter")
    if scatter:
        panels = {c: [tuple(p) for p in pts] for c, pts in scatter["pairs"].items()}
        svg = svg_scatter(panels, scatter["x"], scatter["y"], "Paired judge scores")
        (report_dir / "scatter.svg").write_text(svg, encoding="utf-8")
        lines += ["![paired judge scores](report/scatter.svg)", ""]
    return lines


def _backgrounds_from_config(run_dir: Path) -> dict[str, Path]:
    from .config import read_toml, resolve
    from .dataset import Manifest

    config_path = run_dir / "run.toml"
    if not config_path.is_file():
        return {}
    dataset = read_toml(config_path).get("dataset")
    if not dataset:
        return {}
    try:
        manifest = Manifest.load(resolve(dataset, "dataset"))
    except Exception as exc:  # report still works without backgrounds
        log.warning("backgrounds unavailable: %s", exc)
        return {}
    return {e.id: e.image for e in manifest.entries}
