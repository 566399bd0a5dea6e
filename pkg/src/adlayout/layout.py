"""Layout domain types, exact rectangle algebra and the layout HTML codec.

Layouts travel between the toolkit and the model as a tiny HTML subset::

    <html>
    <body>
    <div  class="canvas" style="left:0px; top:0px; width:102px; height:150px"></div>
    <div  class="text" style="left:2px; top:113px; width:95px; height:10px"></div>
    </body>
    </html>

All geometry is integer pixels; ratios are returned as ``Fraction``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .errors import (
    DegenerateIoU,
    InvalidLayout,
    MalformedDiv,
    MalformedStyle,
    NegativeDimension,
    NoCanvas,
    NoLayoutFound,
    UnknownCategory,
)

__all__ = [
    "Category",
    "Rect",
    "Element",
    "Layout",
    "ValidityReport",
    "DEFAULT_MIN_AREA_RATIO",
    "intersect_area",
    "contains",
    "iou",
    "parse_layout_html",
    "serialize_layout_html",
    "extract_html_block",
    "check_validity",
    "scale_layout",
    "round_half_up",
]

DEFAULT_MIN_AREA_RATIO = Fraction(1, 1000)


class Category(str, Enum):
    LOGO = "logo"
    TEXT = "text"
    UNDERLAY = "underlay"
    CANVAS = "canvas"

    @classmethod
    def parse(cls, name: str) -> "Category":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise UnknownCategory(f"unknown element class {name!r}") from None

    def __str__(self) -> str:
        return self.value


ELEMENT_CATEGORIES = (Category.LOGO, Category.TEXT, Category.UNDERLAY)


def round_half_up(value) -> int:
    """Round a number to the nearest integer, ties away from -inf."""
    return math.floor(Fraction(value) + Fraction(1, 2))


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            if not isinstance(getattr(self, name), int) or isinstance(getattr(self, name), bool):
                raise TypeError(f"Rect.{name} must be int, got {getattr(self, name)!r}")
        if self.w < 0 or self.h < 0:
            raise NegativeDimension(f"negative size in {self}")

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def right(self) -> int:
        return self.x + self.w

    @property
    def bottom(self) -> int:
        return self.y + self.h

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class Element:
    category: Category
    rect: Rect
    index: int

    def __post_init__(self):
        if not isinstance(self.category, Category):
            object.__setattr__(self, "category", Category.parse(self.category))
        if self.category is Category.CANVAS:
            raise InvalidLayout("canvas is not a layout element")
        if self.index < 0:
            raise InvalidLayout(f"negative element index {self.index}")

    @property
    def ref(self) -> tuple[Category, int]:
        return (self.category, self.index)

    @property
    def label(self) -> str:
        return f"{self.category.value} {self.index}"


@dataclass(frozen=True)
class Layout:
    """Canvas plus ordered elements.

    ``coerced`` is set by the parser when fractional coordinates had to be
    rounded; it does not take part in equality.
    """

    canvas: Rect
    elements: tuple[Element, ...] = ()
    coerced: bool = field(default=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        c = self.canvas
        if c.x != 0 or c.y != 0:
            raise InvalidLayout(f"canvas must sit at the origin, got {c}")
        if c.w <= 0 or c.h <= 0:
            raise InvalidLayout(f"canvas must have positive size, got {c}")
        seen = set()
        for el in self.elements:
            if el.index in seen:
                raise InvalidLayout(f"duplicate element index {el.index}")
            seen.add(el.index)

    @classmethod
    def build(cls, canvas_w: int, canvas_h: int, items: Iterable[tuple]) -> "Layout":
        """Construct from ``(category, x, y, w, h)`` tuples, indexing in order."""
        elements = [
            Element(Category.parse(cat) if isinstance(cat, str) else cat, Rect(x, y, w, h), i)
            for i, (cat, x, y, w, h) in enumerate(items)
        ]
        return cls(Rect(0, 0, canvas_w, canvas_h), tuple(elements))

    def of(self, *categories: Category) -> list[Element]:
        return [e for e in self.elements if e.category in categories]

    def categories(self) -> list[Category]:
        return [e.category for e in self.elements]

    def to_json(self) -> dict:
        return {
            "canvas": {"w": self.canvas.w, "h": self.canvas.h},
            "elements": [
                {
                    "category": e.category.value,
                    "index": e.index,
                    "x": e.rect.x,
                    "y": e.rect.y,
                    "w": e.rect.w,
                    "h": e.rect.h,
                }
                for e in self.elements
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Layout":
        canvas = Rect(0, 0, int(data["canvas"]["w"]), int(data["canvas"]["h"]))
        elements = tuple(
            Element(
                Category.parse(e["category"]),
                Rect(int(e["x"]), int(e["y"]), int(e["w"]), int(e["h"])),
                int(e["index"]),
            )
            for e in data["elements"]
        )
        return cls(canvas, elements)


@dataclass(frozen=True)
class ValidityReport:
    too_small: tuple[bool, ...]
    out_of_canvas: tuple[bool, ...]

    @property
    def total_count(self) -> int:
        return len(self.too_small)

    @property
    def valid_count(self) -> int:
        return sum(1 for s, o in zip(self.too_small, self.out_of_canvas) if not (s or o))

    @property
    def score(self) -> Fraction:
        if self.total_count == 0:
            return Fraction(1)
        return Fraction(self.valid_count, self.total_count)


# -- geometry ----------------------------------------------------------------


def intersect_area(a: Rect, b: Rect) -> int:
    dx = min(a.right, b.right) - max(a.x, b.x)
    dy = min(a.bottom, b.bottom) - max(a.y, b.y)
    if dx <= 0 or dy <= 0:
        return 0
    return dx * dy


def contains(outer: Rect, inner: Rect) -> bool:
    return (
        inner.x >= outer.x
        and inner.y >= outer.y
        and inner.right <= outer.right
        and inner.bottom <= outer.bottom
    )


def iou(a: Rect, b: Rect) -> Fraction:
    if a.area == 0 and b.area == 0:
        raise DegenerateIoU(f"IoU undefined for two empty rects {a}, {b}")
    inter = intersect_area(a, b)
    return Fraction(inter, a.area + b.area - inter)


# -- codec -------------------------------------------------------------------

_DIV_OPEN = re.compile(r"<\s*div\b", re.IGNORECASE)
_DIV = re.compile(r"<\s*div\b(?P<attrs>[^<>]*?)/?\s*>(?:\s*<\s*/\s*div\s*>)?", re.IGNORECASE)
_ATTR = re.compile(r"""([A-Za-z_:][-A-Za-z0-9_:.]*)\s*=\s*(?:"([^"]*)"|'([^']*)')""")
_NUMBER = re.compile(r"^([-+]?(?:\d+(?:\.\d*)?|\.\d+))\s*(?:px)?$", re.IGNORECASE)
_STYLE_KEYS = ("left", "top", "width", "height")


def _parse_attrs(text: str) -> dict[str, str]:
    attrs: dict[str, str] = {}
    pos = 0
    for m in _ATTR.finditer(text):
        if text[pos:m.start()].strip():
            raise MalformedDiv(f"unexpected text in div tag: {text[pos:m.start()].strip()!r}")
        name = m.group(1).lower()
        if name in attrs:
            raise MalformedDiv(f"duplicate attribute {name!r}")
        attrs[name] = m.group(2) if m.group(2) is not None else m.group(3)
        pos = m.end()
    if text[pos:].strip():
        raise MalformedDiv(f"unexpected text in div tag: {text[pos:].strip()!r}")
    return attrs


def _parse_style(style: str) -> tuple[dict[str, int], bool]:
    values: dict[str, int] = {}
    coerced = False
    for decl in style.split(";"):
        if not decl.strip():
            continue
        if ":" not in decl:
            raise MalformedStyle(f"style declaration without ':' in {decl!r}")
        key, raw = (part.strip() for part in decl.split(":", 1))
        key = key.lower()
        if key not in _STYLE_KEYS:
            # other CSS properties are tolerated and ignored
            continue
        if key in values:
            raise MalformedStyle(f"duplicate style property {key!r}")
        m = _NUMBER.match(raw)
        if not m:
            raise MalformedStyle(f"unparsable value for {key}: {raw!r}")
        number = Fraction(m.group(1))
        if number.denominator != 1:
            coerced = True
        values[key] = round_half_up(number)
    missing = [k for k in _STYLE_KEYS if k not in values]
    if missing:
        raise MalformedStyle(f"style is missing {', '.join(missing)}: {style!r}")
    return values, coerced


def _rect_from_style(values: dict[str, int]) -> Rect:
    if values["width"] < 0 or values["height"] < 0:
        raise NegativeDimension(f"negative width/height in {values}")
    return Rect(values["left"], values["top"], values["width"], values["height"])


def iter_div_tags(text: str):
    """Yield ``(attrs_text, span)`` for each div in ``text``.

    Raises ``MalformedDiv`` for a ``<div`` that is not a complete tag.
    """
    for opening in _DIV_OPEN.finditer(text):
        m = _DIV.match(text, opening.start())
        if not m:
            raise MalformedDiv(f"incomplete div tag at offset {opening.start()}")
        yield m.group("attrs"), m.span()


def parse_layout_html(text: str, expected_canvas: Optional[Rect] = None) -> Layout:
    """Parse the layout HTML subset.

    Elements are indexed by document order, so ``text, text, underlay``
    becomes ``text 0, text 1, underlay 2``.
    """
    canvas: Optional[Rect] = None
    items: list[tuple[Category, Rect]] = []
    coerced = False
    for attrs_text, _ in iter_div_tags(text):
        attrs = _parse_attrs(attrs_text)
        if "class" not in attrs:
            raise UnknownCategory("div without class attribute")
        category = Category.parse(attrs["class"])
        if "style" not in attrs:
            raise MalformedStyle(f"{category.value} div has no style attribute")
        values, was_coerced = _parse_style(attrs["style"])
        coerced = coerced or was_coerced
        rect = _rect_from_style(values)
        if category is Category.CANVAS:
            if canvas is not None:
                raise InvalidLayout("more than one canvas div")
            canvas = rect
        else:
            items.append((category, rect))
    if canvas is None:
        canvas = expected_canvas
    if canvas is None:
        raise NoCanvas("no canvas div and no expected canvas given")
    elements = tuple(Element(cat, rect, i) for i, (cat, rect) in enumerate(items))
    return Layout(canvas, elements, coerced=coerced)


def _div_line(category: str, r: Rect) -> str:
    return (
        f'<div  class="{category}" style="left:{r.x}px; top:{r.y}px; '
        f'width:{r.w}px; height:{r.h}px"></div>'
    )


def serialize_layout_html(layout: Layout) -> str:
    lines = ["<html>", "<body>", _div_line("canvas", layout.canvas)]
    lines.extend(_div_line(e.category.value, e.rect) for e in layout.elements)
    lines.extend(["</body>", "</html>"])
    return "\n".join(lines)


_HTML_OPEN = re.compile(r"<\s*html\b[^>]*>", re.IGNORECASE)
_HTML_CLOSE = re.compile(r"<\s*/\s*html\s*>", re.IGNORECASE)
_DIV_LINE = re.compile(r"^<\s*div\b.*<\s*/\s*div\s*>$", re.IGNORECASE)


def extract_html_block(model_output: str) -> str:
    """Pull the layout HTML out of a free-form model answer."""
    opening = _HTML_OPEN.search(model_output)
    if opening:
        closing = _HTML_CLOSE.search(model_output, opening.end())
        if closing:
            return model_output[opening.start():closing.end()]
    best: list[str] = []
    run: list[str] = []
    for line in model_output.splitlines() + [""]:
        stripped = line.strip()
        if _DIV_LINE.match(stripped):
            run.append(stripped)
            continue
        if len(run) > len(best):
            best = run
        run = []
    if not best:
        raise NoLayoutFound("model output contains neither an <html> block nor div lines")
    return "\n".join(best)


# -- validity & scaling ------------------------------------------------------


def check_validity(layout: Layout, min_area_ratio=DEFAULT_MIN_AREA_RATIO) -> ValidityReport:
    threshold = Fraction(min_area_ratio) * layout.canvas.area
    too_small = tuple(e.rect.area < threshold for e in layout.elements)
    outside = tuple(intersect_area(e.rect, layout.canvas) < e.rect.area for e in layout.elements)
    return ValidityReport(too_small, outside)


def scale_layout(layout: Layout, sx, sy) -> Layout:
    sx, sy = Fraction(sx), Fraction(sy)
    if sx <= 0 or sy <= 0:
        raise ValueError("scale factors must be positive")

    def scale(r: Rect) -> Rect:
        return Rect(
            round_half_up(r.x * sx),
            round_half_up(r.y * sy),
            round_half_up(r.w * sx),
            round_half_up(r.h * sy),
        )

    return Layout(
        scale(layout.canvas),
        tuple(Element(e.category, scale(e.rect), e.index) for e in layout.elements),
    )


def scale_to(layout: Layout, width: int, height: int) -> Layout:
    """Scale a layout so its canvas becomes ``width`` x ``height``."""
    return scale_layout(layout, Fraction(width, layout.canvas.w), Fraction(height, layout.canvas.h))


def category_counts(categories: Sequence[Category]) -> dict[Category, int]:
    counts: dict[Category, int] = {}
    for c in categories:
        counts[c] = counts.get(c, 0) + 1
    return counts
