"""Dataset import and the normalized ``manifest.json``.

Two source layouts are understood:

``pku-posterlayout``
    ``<src>/images/*.png`` (inpainted backgrounds), an annotation CSV with
    columns ``poster_path, cls_elem, box_elem`` where ``cls_elem`` is
    1=text, 2=logo, 3=underlay and ``box_elem`` is ``[x1, y1, x2, y2]`` in
    native pixels, one element per row; optional ``<src>/saliency/``.
``generic``
    ``<src>/images/``, ``<src>/annotations.csv`` with columns
    ``image_id, category, x, y, w, h`` (native pixels, one element per row)
    and optional ``<src>/saliency/``.

Ground-truth boxes are scaled into the prompt canvas (102x150 by default);
the native size is kept so metrics can run on the full-resolution grid.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from PIL import Image

from .errors import DatasetError, MalformedAnnotation, MissingImage, UnknownCategory
from .layout import Category, Element, Layout, Rect, round_half_up, scale_to
from .prompting import PROMPT_CANVAS

MANIFEST_VERSION = 1
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
SALIENCY_SUFFIXES = (".png", ".pgm")
PKU_CLASSES = {1: Category.TEXT, 2: Category.LOGO, 3: Category.UNDERLAY}
KINDS = ("pku-posterlayout", "generic")


@dataclass(frozen=True)
class DatasetEntry:
    id: str
    image: Path
    width: int
    height: int
    saliency: Optional[Path] = None
    layout: Optional[Layout] = None


@dataclass
class Manifest:
    entries: list[DatasetEntry]
    canvas: tuple[int, int] = PROMPT_CANVAS
    root: Optional[Path] = None
    missing_images: list[str] = field(default_factory=list)
    malformed_rows: list[str] = field(default_factory=list)

    def get(self, entry_id: str) -> DatasetEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise KeyError(entry_id)

    def to_json(self, base: Path) -> dict:
        def rel(p: Optional[Path]):
            if p is None:
                return None
            try:
                return Path(p).resolve().relative_to(base.resolve()).as_posix()
            except ValueError:
                return str(Path(p).resolve())

        return {
            "version": MANIFEST_VERSION,
            "canvas": list(self.canvas),
            "entries": [
                {
                    "id": e.id,
                    "image": rel(e.image),
                    "width": e.width,
                    "height": e.height,
                    "saliency": rel(e.saliency),
                    "layout": e.layout.to_json() if e.layout else None,
                }
                for e in self.entries
            ],
            "problems": {"missing_images": self.missing_images, "malformed_rows": self.malformed_rows},
        }

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(path.parent), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Manifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise DatasetError(f"cannot read dataset manifest {path}: {exc}") from None
        if data.get("version") != MANIFEST_VERSION:
            raise DatasetError(f"{path}: unsupported manifest version {data.get('version')!r}")
        base = path.parent
        entries = [
            DatasetEntry(
                e["id"],
                base / e["image"],
                int(e["width"]),
                int(e["height"]),
                base / e["saliency"] if e.get("saliency") else None,
                Layout.from_json(e["layout"]) if e.get("layout") else None,
            )
            for e in data["entries"]
        ]
        problems = data.get("problems", {})
        return cls(
            entries,
            tuple(data.get("canvas", PROMPT_CANVAS)),
            base,
            problems.get("missing_images", []),
            problems.get("malformed_rows", []),
        )


def _find(directory: Path, stem: str, suffixes) -> Optional[Path]:
    for suffix in suffixes:
        p = directory / f"{stem}{suffix}"
        if p.is_file():
            return p
    return None


def _read_rows(path: Path) -> list[dict]:
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


_BOX = re.compile(r"^\s*\[?\s*([-\d.]+)\s*,\s*([-\d.]+)\s*,\s*([-\d.]+)\s*,\s*([-\d.]+)\s*\]?\s*$")


def _pku_row(row: dict) -> tuple[str, Category, Rect]:
    image_id = Path(row["poster_path"].strip()).stem
    category = PKU_CLASSES[int(float(row["cls_elem"]))]
    m = _BOX.match(row["box_elem"])
    if not m:
        raise ValueError(f"bad box {row['box_elem']!r}")
    x1, y1, x2, y2 = (round_half_up(v) for v in m.groups())
    return image_id, category, Rect(x1, y1, x2 - x1, y2 - y1)


def _generic_row(row: dict) -> tuple[str, Category, Rect]:
    image_id = Path(row["image_id"].strip()).stem
    category = Category.parse(row["category"])
    if category is Category.CANVAS:
        raise ValueError("canvas is not an annotation category")
    x, y, w, h = (round_half_up(row[k]) for k in ("x", "y", "w", "h"))
    return image_id, category, Rect(x, y, w, h)


def import_dataset(
    source: Union[str, Path],
    kind: str = "generic",
    *,
    annotations: Optional[Union[str, Path]] = None,
    canvas: tuple[int, int] = PROMPT_CANVAS,
    strict: bool = False,
) -> Manifest:
    """Normalize a dataset directory into a :class:`Manifest`.

    Rows pointing at absent images and unreadable rows are collected.  They
    raise only when ``strict`` is set or nothing usable remains.
    """
    if kind not in KINDS:
        raise DatasetError(f"dataset kind must be one of {', '.join(KINDS)}, got {kind!r}")
    source = Path(source)
    images_dir = source / "images"
    saliency_dir = source / "saliency"
    if annotations is None:
        candidates = sorted(source.glob("*.csv")) if kind == "pku-posterlayout" else [source / "annotations.csv"]
        annotations = next((p for p in candidates if p.is_file()), None)
    rows = _read_rows(Path(annotations)) if annotations else []
    row_parser = _pku_row if kind == "pku-posterlayout" else _generic_row

    boxes: dict[str, list[tuple[Category, Rect]]] = {}
    malformed: list[str] = []
    for n, row in enumerate(rows, 2):
        try:
            image_id, category, rect = row_parser(row)
        except (KeyError, ValueError, TypeError, AttributeError, UnknownCategory) as exc:
            malformed.append(f"row {n}: {exc}")
            continue
        boxes.setdefault(image_id, []).append((category, rect))

    images = {}
    if images_dir.is_dir():
        for p in sorted(images_dir.iterdir()):
            if p.suffix.lower() in IMAGE_SUFFIXES:
                images.setdefault(p.stem, p)
    missing = sorted(i for i in boxes if i not in images)

    entries = []
    for image_id, path in sorted(images.items()):
        try:
            with Image.open(path) as img:
                width, height = img.size
        except OSError as exc:
            malformed.append(f"image {path.name}: {exc}")
            continue
        layout = None
        if image_id in boxes:
            native = Layout(
                Rect(0, 0, width, height),
                tuple(Element(c, r, i) for i, (c, r) in enumerate(boxes[image_id])),
            )
            layout = scale_to(native, *canvas)
        saliency = _find(saliency_dir, image_id, SALIENCY_SUFFIXES) if saliency_dir.is_dir() else None
        entries.append(DatasetEntry(image_id, path, width, height, saliency, layout))

    if missing and (strict or not entries):
        raise MissingImage(missing)
    if malformed and (strict or not entries):
        raise MalformedAnnotation(malformed)
    if not entries:
        raise MissingImage(sorted(boxes) or ["<no images found>"])
    return Manifest(entries, canvas, source, missing, malformed)
