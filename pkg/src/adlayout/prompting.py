"""Prompt construction for plan generation, plan-conditioned layout generation
and the one-step variants.

Prompts are rendered as a single text transcript in which ``<image>`` marks
where an image goes; :class:`PromptBundle` splits that transcript into the
interleaved text/image message parts sent to the model.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from string import Template
from typing import Optional, Sequence, Union

from .errors import (
    DuplicateDirective,
    EmptyAnnotationSet,
    ExemplarInvalid,
    ExemplarMissingPlan,
    InvalidConstraint,
    MissingDirective,
    PlanConstraintMismatch,
    UnknownCategory,
    UnknownElementRef,
)
from .layout import ELEMENT_CATEGORIES, Category, Layout, serialize_layout_html

DEFAULT_TEMPLATE_VERSION = "v1"
PROMPT_CANVAS = (102, 150)
IMAGE_MARK = "<image>"
MAX_SHOTS = 16


@lru_cache(maxsize=None)
def load_template(name: str, version: str = DEFAULT_TEMPLATE_VERSION) -> str:
    path = resources.files("adlayout") / "prompts" / version / f"{name}.txt"
    try:
        return path.read_text(encoding="utf-8").rstrip("\n")
    except FileNotFoundError:
        raise FileNotFoundError(f"no prompt template {name!r} for version {version!r}") from None


def render_template(name: str, version: str = DEFAULT_TEMPLATE_VERSION, **values) -> str:
    return Template(load_template(name, version)).substitute(**values)


# -- constraints and plans ---------------------------------------------------


@dataclass(frozen=True)
class ElementConstraint:
    """Requested elements, e.g. ``text 0 | text 1 | underlay 2``."""

    items: tuple[tuple[Category, int], ...]

    def __post_init__(self):
        items = tuple((Category(c) if not isinstance(c, Category) else c, int(i)) for c, i in self.items)
        for pos, (cat, idx) in enumerate(items):
            if cat not in ELEMENT_CATEGORIES:
                raise InvalidConstraint(f"{cat.value} cannot be requested as an element")
            if idx != pos:
                raise InvalidConstraint(f"constraint indices must run 0..N-1 in order, got {idx} at {pos}")
        object.__setattr__(self, "items", items)

    @classmethod
    def parse(cls, text: str) -> "ElementConstraint":
        items = []
        for chunk in text.split("|"):
            chunk = chunk.strip()
            if not chunk:
                continue
            parts = chunk.split()
            if len(parts) != 2 or not parts[1].isdigit():
                raise InvalidConstraint(f"cannot read constraint entry {chunk!r}")
            try:
                items.append((Category.parse(parts[0]), int(parts[1])))
            except UnknownCategory as exc:
                raise InvalidConstraint(str(exc)) from None
        return cls(tuple(items))

    @classmethod
    def from_categories(cls, categories: Sequence[Category]) -> "ElementConstraint":
        return cls(tuple((Category(c), i) for i, c in enumerate(categories)))

    @classmethod
    def from_layout(cls, layout: Layout) -> "ElementConstraint":
        return cls.from_categories(layout.categories())

    def __str__(self) -> str:
        return " | ".join(f"{c.value} {i}" for c, i in self.items)

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class Directive:
    category: Category
    index: int
    text: str
    line: str = ""

    @property
    def ref(self) -> tuple[Category, int]:
        return (self.category, self.index)

    def render(self) -> str:
        return self.line or f"- {self.category.value.capitalize()} {self.index} : {self.text}"


@dataclass(frozen=True)
class PlacementPlan:
    directives: tuple[Directive, ...]
    preamble: str = ""

    def render(self) -> str:
        lines = [self.preamble] if self.preamble else []
        seen = set()
        for d in self.directives:
            line = d.render()
            if line not in seen:
                seen.add(line)
                lines.append(line)
        return "\n".join(lines)

    def covers(self, constraint: ElementConstraint) -> bool:
        return {d.ref for d in self.directives} == set(constraint.items)

    def to_json(self) -> dict:
        return {
            "preamble": self.preamble,
            "directives": [
                {"category": d.category.value, "index": d.index, "text": d.text} for d in self.directives
            ],
        }


_DIRECTIVE = re.compile(
    r"""^\s*(?:[-*•]\s*|\d+[.)]\s*)?(?:\*\*)?
    (?P<cat>logo|text|underlay)\s*
    (?P<refs>\d+(?:\s*(?:,|&|and)\s*(?:(?:logo|text|underlay)\s*)?\d+)*)
    \s*(?:\*\*)?\s*:(?:\*\*)?\s*(?P<text>.*?)\s*$""",
    re.IGNORECASE | re.VERBOSE,
)
_REF_IN_LIST = re.compile(r"(?:(logo|text|underlay)\s*)?(\d+)", re.IGNORECASE)
_PLAN_HEADER = re.compile(r"^\s*(?:\*\*)?placement plan(?:\*\*)?\s*:?\s*(?:\*\*)?\s*$", re.IGNORECASE)


def _refs(first_cat: str, ref_list: str) -> list[tuple[Category, int]]:
    refs = []
    cat = Category.parse(first_cat)
    for m in _REF_IN_LIST.finditer(ref_list):
        if m.group(1):
            cat = Category.parse(m.group(1))
        refs.append((cat, int(m.group(2))))
    return refs


def parse_plan(model_output: str, constraint: ElementConstraint) -> PlacementPlan:
    """Read ``- Text 0 : ...`` style directive lines from a model answer.

    Prose before the first directive becomes the preamble.  A line may name
    several elements (``- Text 1, 2, 3: ...``).
    """
    wanted = set(constraint.items)
    directives: list[Directive] = []
    preamble: list[str] = []
    seen: set[tuple[Category, int]] = set()
    for raw in model_output.splitlines():
        m = _DIRECTIVE.match(raw)
        if not m:
            if not directives and raw.strip() and not _PLAN_HEADER.match(raw):
                preamble.append(raw.strip())
            continue
        for ref in _refs(m.group("cat"), m.group("refs")):
            if ref not in wanted:
                raise UnknownElementRef(f"plan mentions {ref[0].value} {ref[1]}, not in constraint {constraint}")
            if ref in seen:
                raise DuplicateDirective(f"more than one directive for {ref[0].value} {ref[1]}")
            seen.add(ref)
            directives.append(Directive(ref[0], ref[1], m.group("text"), raw.strip()))
    missing = [ref for ref in constraint.items if ref not in seen]
    if missing:
        raise MissingDirective((c.value, i) for c, i in missing)
    return PlacementPlan(tuple(directives), " ".join(preamble))


def sample_constraint(training_annotations: Sequence, rng_seed) -> ElementConstraint:
    """Draw one training layout and return its element types as a constraint."""
    if not training_annotations:
        raise EmptyAnnotationSet("no training annotations to sample from")
    pick = random.Random(rng_seed).choice(list(training_annotations))
    categories = pick.categories() if isinstance(pick, Layout) else [Category(c) for c in pick]
    return ElementConstraint.from_categories(categories)


# -- exemplars ---------------------------------------------------------------


@dataclass(frozen=True)
class Exemplar:
    id: str
    image: Path
    constraint: ElementConstraint
    plan: Optional[PlacementPlan]
    layout: Layout


@dataclass(frozen=True)
class ExemplarStore:
    exemplars: tuple[Exemplar, ...]
    root: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.exemplars)

    def take(self, shots: int, shuffle_seed: Optional[int] = None) -> list[Exemplar]:
        if shots > len(self.exemplars):
            raise ValueError(f"store has {len(self.exemplars)} exemplars, {shots} requested")
        pool = list(self.exemplars)
        if shuffle_seed is not None:
            random.Random(shuffle_seed).shuffle(pool)
        return pool[:shots]

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "ExemplarStore":
        """Load ``manifest.json`` from ``directory`` and validate every exemplar."""
        from .metrics import check_violations

        directory = Path(directory)
        data = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
        exemplars = []
        for entry in data["exemplars"]:
            constraint = ElementConstraint.parse(entry["constraint"])
            layout = Layout.from_json(entry["layout"])
            plan_text = entry.get("plan")
            plan = parse_plan(plan_text, constraint) if plan_text else None
            report = check_violations(layout, constraint)
            if report.has_violation:
                raise ExemplarInvalid(f"exemplar {entry['id']} violates its constraint: {report.to_json()}")
            image = directory / entry["image"]
            if not image.is_file():
                raise ExemplarInvalid(f"exemplar {entry['id']} image {image} is missing")
            exemplars.append(Exemplar(entry["id"], image, constraint, plan, layout))
        return cls(tuple(exemplars), directory)


# -- bundles -----------------------------------------------------------------


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    path: Path


@dataclass(frozen=True)
class Message:
    role: str
    parts: tuple[Union[TextPart, ImagePart], ...]

    def transcript(self) -> str:
        return "".join(p.text if isinstance(p, TextPart) else IMAGE_MARK for p in self.parts)


@dataclass(frozen=True)
class PromptBundle:
    messages: tuple[Message, ...]
    condition: str = ""
    shots: int = 0

    @classmethod
    def from_transcript(cls, text: str, images: Sequence[Path], condition: str = "", shots: int = 0) -> "PromptBundle":
        chunks = text.split(IMAGE_MARK)
        if len(chunks) - 1 != len(images):
            raise ValueError(f"{len(chunks) - 1} image marks but {len(images)} images")
        parts: list = []
        for i, chunk in enumerate(chunks):
            if chunk:
                parts.append(TextPart(chunk))
            if i < len(images):
                parts.append(ImagePart(Path(images[i])))
        return cls((Message("user", tuple(parts)),), condition, shots)

    def transcript(self) -> str:
        return "\n\n".join(m.transcript() for m in self.messages)

    def image_paths(self) -> list[Path]:
        return [p.path for m in self.messages for p in m.parts if isinstance(p, ImagePart)]

    def followup(self, assistant_text: str, user_text: str) -> "PromptBundle":
        extra = (Message("assistant", (TextPart(assistant_text),)), Message("user", (TextPart(user_text),)))
        return replace(self, messages=self.messages + extra)

    def to_json(self) -> dict:
        return {
            "condition": self.condition,
            "shots": self.shots,
            "messages": [{"role": m.role, "text": m.transcript()} for m in self.messages],
        }


def _check_shots(exemplars: Sequence[Exemplar]) -> None:
    if len(exemplars) > MAX_SHOTS:
        raise ValueError(f"at most {MAX_SHOTS} exemplars are supported, got {len(exemplars)}")


def _plan_block(plan: PlacementPlan) -> str:
    return "Placement Plan:\n" + plan.render()


def build_plan_prompt(
    exemplars: Sequence[Exemplar],
    test_image: Path,
    constraint: ElementConstraint,
    *,
    version: str = DEFAULT_TEMPLATE_VERSION,
    condition: str = "",
) -> PromptBundle:
    _check_shots(exemplars)
    blocks = [load_template("plan_header", version)]
    images = []
    for n, ex in enumerate(exemplars, 1):
        if ex.plan is None:
            raise ExemplarMissingPlan(f"exemplar {ex.id} has no placement plan")
        blocks.append(
            f"Example {n}\n{IMAGE_MARK}\nElement Type Constraint: {ex.constraint}\n\n"
            f"Example Output {n}\n{_plan_block(ex.plan)}"
        )
        images.append(ex.image)
    blocks.append(f"Test Sample\n{IMAGE_MARK}\nElement Type Constraint: {constraint}")
    images.append(test_image)
    return PromptBundle.from_transcript("\n\n".join(blocks), images, condition, len(exemplars))


def _layout_header(canvas, version) -> str:
    w, h = canvas
    return render_template("layout_header", version, canvas_w=w, canvas_h=h)


def build_layout_prompt(
    exemplars: Sequence[Exemplar],
    test_image: Path,
    constraint: ElementConstraint,
    plan: PlacementPlan,
    *,
    canvas: tuple[int, int] = PROMPT_CANVAS,
    version: str = DEFAULT_TEMPLATE_VERSION,
    condition: str = "",
) -> PromptBundle:
    _check_shots(exemplars)
    if not plan.directives:
        raise PlanConstraintMismatch("placement plan is empty")
    if not plan.covers(constraint):
        raise PlanConstraintMismatch(f"plan directives do not match constraint {constraint}")
    blocks = [_layout_header(canvas, version)]
    images = []
    for n, ex in enumerate(exemplars, 1):
        if ex.plan is None:
            raise ExemplarMissingPlan(f"exemplar {ex.id} has no placement plan")
        blocks.append(
            f"Example {n}\n{IMAGE_MARK}\nElement Type Constraint: {ex.constraint}\n{_plan_block(ex.plan)}\n\n"
            f"Example Output {n}\n{serialize_layout_html(ex.layout)}"
        )
        images.append(ex.image)
    blocks.append(f"Test Sample\n{IMAGE_MARK}\nElement Type Constraint: {constraint}\n{_plan_block(plan)}")
    images.append(test_image)
    return PromptBundle.from_transcript("\n\n".join(blocks), images, condition, len(exemplars))


def build_one_step_prompt(
    exemplars: Sequence[Exemplar],
    test_image: Path,
    constraint: ElementConstraint,
    cot: bool,
    *,
    canvas: tuple[int, int] = PROMPT_CANVAS,
    version: str = DEFAULT_TEMPLATE_VERSION,
    condition: str = "",
) -> PromptBundle:
    _check_shots(exemplars)
    instruction = load_template("onestep_cot" if cot else "onestep_nocot", version)
    blocks = [_layout_header(canvas, version) + "\n" + instruction]
    images = []
    for n, ex in enumerate(exemplars, 1):
        if cot and ex.plan is None:
            raise ExemplarMissingPlan(f"exemplar {ex.id} has no placement plan")
        output = serialize_layout_html(ex.layout)
        if cot:
            output = f"{_plan_block(ex.plan)}\n{output}"
        blocks.append(
            f"Example {n}\n{IMAGE_MARK}\nElement Type Constraint: {ex.constraint}\n\n"
            f"Example Output {n}\n{output}"
        )
        images.append(ex.image)
    blocks.append(f"Test Sample\n{IMAGE_MARK}\nElement Type Constraint: {constraint}")
    images.append(test_image)
    return PromptBundle.from_transcript("\n\n".join(blocks), images, condition, len(exemplars))
