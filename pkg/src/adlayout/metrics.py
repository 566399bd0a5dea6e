"""Rule-based layout metrics and the constraint-violation checker.

Metric columns follow the usual poster-layout table order::

    Val  Ove  Ali  Und_l  Und_s  Uti  Occ  Rea

Each metric is a pure function of the layout plus (for the pixel metrics)
a saliency map or background on the same pixel grid as the layout canvas.
Use :func:`score_layout` to scale a prompt-canvas layout onto the image grid
and compute every column at once.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from itertools import combinations
from typing import TYPE_CHECKING, Iterable, Optional, Sequence

import numpy as np

from .errors import EmptyAggregate, GridMismatch
from .layout import (
    DEFAULT_MIN_AREA_RATIO,
    Category,
    Layout,
    category_counts,
    check_validity,
    contains,
    intersect_area,
    iou,
    scale_to,
)
from .saliency import DEFAULT_THRESHOLD, BinaryMask, GrayImage, SaliencyMap, threshold_mask

if TYPE_CHECKING:
    from .prompting import ElementConstraint

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("Val", "Ove", "Ali", "Und_l", "Und_s", "Uti", "Occ", "Rea")
_FIELD_FOR_COLUMN = {
    "Val": "validity",
    "Ove": "overlap",
    "Ali": "alignment",
    "Und_l": "underlay_loose",
    "Und_s": "underlay_strict",
    "Uti": "utility",
    "Occ": "occlusion",
    "Rea": "unreadability",
}
ALIGNMENT_CLAMP = 1 - 1e-6
UTILITY_DENOMINATORS = ("non-salient", "element-area")


@dataclass(frozen=True)
class MetricReport:
    validity: Optional[float] = None
    overlap: Optional[float] = None
    alignment: Optional[float] = None
    underlay_loose: Optional[float] = None
    underlay_strict: Optional[float] = None
    utility: Optional[float] = None
    occlusion: Optional[float] = None
    unreadability: Optional[float] = None
    saliency_source: Optional[str] = None
    theta: Optional[float] = None
    min_area_ratio: Optional[float] = None
    utility_denominator: str = "non-salient"

    def column(self, name: str) -> Optional[float]:
        return getattr(self, _FIELD_FOR_COLUMN[name])

    def columns(self) -> dict[str, Optional[float]]:
        return {c: self.column(c) for c in METRIC_COLUMNS}

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "MetricReport":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass(frozen=True)
class ViolationReport:
    constraint_mismatch: bool
    orphan_underlays: tuple[int, ...] = ()

    @property
    def has_violation(self) -> bool:
        return self.constraint_mismatch or bool(self.orphan_underlays)

    def to_json(self) -> dict:
        return {
            "constraint_mismatch": self.constraint_mismatch,
            "orphan_underlays": list(self.orphan_underlays),
            "has_violation": self.has_violation,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ViolationReport":
        return cls(bool(data["constraint_mismatch"]), tuple(data["orphan_underlays"]))


# -- geometry-only metrics ---------------------------------------------------


def metric_validity(layout: Layout, min_area_ratio=DEFAULT_MIN_AREA_RATIO) -> float:
    return float(check_validity(layout, min_area_ratio).score)


def metric_overlap(layout: Layout) -> float:
    """Mean pairwise IoU over non-underlay elements."""
    boxes = [e.rect for e in layout.elements if e.category is not Category.UNDERLAY]
    if len(boxes) < 2:
        return 0.0
    total = Fraction(0)
    pairs = 0
    for a, b in combinations(boxes, 2):
        pairs += 1
        if a.area or b.area:
            total += iou(a, b)
    return float(total / pairs)


def _axes(r) -> tuple[Fraction, ...]:
    return (
        Fraction(r.x),
        Fraction(2 * r.x + r.w, 2),
        Fraction(r.right),
        Fraction(r.y),
        Fraction(2 * r.y + r.h, 2),
        Fraction(r.bottom),
    )


def metric_alignment(layout: Layout) -> float:
    """Mean of -ln(1 - d) where d is each element's nearest same-axis gap / canvas width.

    Axes are left, x-centre, right, top, y-centre and bottom; an element is
    only compared like-for-like (left with left, and so on).
    """
    els = layout.elements
    if len(els) < 2:
        return 0.0
    axes = [_axes(e.rect) for e in els]
    total = 0.0
    for i, ai in enumerate(axes):
        best = min(
            abs(ai[k] - aj[k])
            for j, aj in enumerate(axes)
            if j != i
            for k in range(6)
        )
        delta = min(float(best / layout.canvas.w), ALIGNMENT_CLAMP)
        total += -math.log1p(-delta)
    return total / len(els)


def metric_underlay(layout: Layout) -> tuple[Optional[float], Optional[float]]:
    underlays = layout.of(Category.UNDERLAY)
    if not underlays:
        return None, None
    others = [e for e in layout.elements if e.category is not Category.UNDERLAY]
    usable = []
    for e in others:
        if e.rect.area == 0:
            log.debug("skipping zero-area %s in underlay score", e.label)
            continue
        usable.append(e)
    loose_sum = Fraction(0)
    strict_sum = 0
    for u in underlays:
        loose_sum += max((Fraction(intersect_area(u.rect, e.rect), e.rect.area) for e in usable), default=Fraction(0))
        strict_sum += any(contains(u.rect, e.rect) for e in usable)
    n = len(underlays)
    return float(loose_sum / n), strict_sum / n


# -- pixel metrics -----------------------------------------------------------


def _check_grid(layout: Layout, width: int, height: int, what: str) -> None:
    if (layout.canvas.w, layout.canvas.h) != (width, height):
        raise GridMismatch(
            f"layout canvas {layout.canvas.w}x{layout.canvas.h} does not match "
            f"{what} grid {width}x{height}"
        )


def rasterize(layout: Layout, categories: Optional[Iterable[Category]] = None) -> np.ndarray:
    """Boolean union of element rectangles, clipped to the canvas."""
    grid = np.zeros((layout.canvas.h, layout.canvas.w), dtype=bool)
    wanted = None if categories is None else set(categories)
    for e in layout.elements:
        if wanted is not None and e.category not in wanted:
            continue
        r = e.rect
        x0, y0 = max(r.x, 0), max(r.y, 0)
        x1, y1 = min(r.right, layout.canvas.w), min(r.bottom, layout.canvas.h)
        if x1 > x0 and y1 > y0:
            grid[y0:y1, x0:x1] = True
    return grid


def metric_utility(layout: Layout, mask: BinaryMask, denominator: str = "non-salient") -> Optional[float]:
    """Share of free (non-salient) space taken by elements.

    With ``denominator="element-area"`` the share of element pixels that fall
    on non-salient space is returned instead.
    """
    _check_grid(layout, mask.width, mask.height, "mask")
    if denominator not in UTILITY_DENOMINATORS:
        raise ValueError(f"unknown utility denominator {denominator!r}")
    free = ~mask.bits
    covered = rasterize(layout)
    used = int(np.count_nonzero(covered & free))
    if denominator == "non-salient":
        n_free = int(np.count_nonzero(free))
        return None if n_free == 0 else used / n_free
    n_covered = int(np.count_nonzero(covered))
    return None if n_covered == 0 else used / n_covered


def metric_occlusion(layout: Layout, saliency: SaliencyMap) -> float:
    _check_grid(layout, saliency.width, saliency.height, "saliency")
    covered = rasterize(layout)
    if not covered.any():
        return 0.0
    return float(saliency.values[covered].mean())


def gradient_magnitude(background: GrayImage) -> np.ndarray:
    """Central-difference gradient norm scaled into [0, 1]."""
    v = background.values
    gy = np.gradient(v, axis=0) if v.shape[0] > 1 else np.zeros_like(v)
    gx = np.gradient(v, axis=1) if v.shape[1] > 1 else np.zeros_like(v)
    return np.minimum(1.0, np.hypot(gx, gy) / math.sqrt(2.0))


def metric_unreadability(layout: Layout, background: GrayImage) -> float:
    _check_grid(layout, background.width, background.height, "background")
    exposed = rasterize(layout, [Category.TEXT]) & ~rasterize(layout, [Category.UNDERLAY])
    if not exposed.any():
        return 0.0
    return float(gradient_magnitude(background)[exposed].mean())


# -- constraint checking -----------------------------------------------------


def check_violations(layout: Layout, constraint: "ElementConstraint") -> ViolationReport:
    """Compare requested vs produced element types and find orphan underlays.

    Element indices are positional, so the constraint is matched as a
    category multiset.
    """
    wanted = category_counts([c for c, _ in constraint.items])
    got = category_counts(layout.categories())
    supported = layout.of(Category.TEXT, Category.LOGO)
    orphans = tuple(
        u.index
        for u in layout.of(Category.UNDERLAY)
        if not any(contains(u.rect, e.rect) for e in supported)
    )
    return ViolationReport(wanted != got, orphans)


# -- full scoring and aggregation --------------------------------------------


def score_layout(
    layout: Layout,
    saliency: Optional[SaliencyMap] = None,
    background: Optional[GrayImage] = None,
    *,
    theta=DEFAULT_THRESHOLD,
    min_area_ratio=DEFAULT_MIN_AREA_RATIO,
    saliency_source: Optional[str] = None,
    utility_denominator: str = "non-salient",
) -> MetricReport:
    """Compute every metric; pixel metrics run on the saliency/background grid."""
    loose, strict = metric_underlay(layout)
    utility = occlusion = unreadability = None
    if saliency is not None:
        grid_layout = scale_to(layout, saliency.width, saliency.height)
        utility = metric_utility(grid_layout, threshold_mask(saliency, theta), utility_denominator)
        occlusion = metric_occlusion(grid_layout, saliency)
    if background is not None:
        grid_layout = scale_to(layout, background.width, background.height)
        unreadability = metric_unreadability(grid_layout, background)
    return MetricReport(
        validity=metric_validity(layout, min_area_ratio),
        overlap=metric_overlap(layout),
        alignment=metric_alignment(layout),
        underlay_loose=loose,
        underlay_strict=None if strict is None else float(strict),
        utility=utility,
        occlusion=occlusion,
        unreadability=unreadability,
        saliency_source=saliency_source,
        theta=float(theta),
        min_area_ratio=float(min_area_ratio),
        utility_denominator=utility_denominator,
    )


def failed_report(**provenance) -> MetricReport:
    """Report for a sample whose generation failed: validity 0, rest absent."""
    return MetricReport(validity=0.0, **provenance)


_SCORE_FIELDS = tuple(_FIELD_FOR_COLUMN.values())


def aggregate(reports: Sequence[MetricReport]) -> MetricReport:
    if not reports:
        raise EmptyAggregate("cannot aggregate an empty list of reports")
    means = {}
    for name in _SCORE_FIELDS:
        present = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        means[name] = math.fsum(present) / len(present) if present else None

    def shared(attr):
        values = {getattr(r, attr) for r in reports}
        return values.pop() if len(values) == 1 else None

    return MetricReport(
        **means,
        saliency_source=shared("saliency_source") if len({r.saliency_source for r in reports}) == 1 else "mixed",
        theta=shared("theta"),
        min_area_ratio=shared("min_area_ratio"),
        utility_denominator=shared("utility_denominator") or "mixed",
    )


def violation_rate(reports: Sequence[ViolationReport]) -> float:
    """Percentage of layouts with at least one violation."""
    if not reports:
        raise EmptyAggregate("cannot compute a violation rate over zero layouts")
    return 100.0 * sum(r.has_violation for r in reports) / len(reports)


def format_metric(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))
