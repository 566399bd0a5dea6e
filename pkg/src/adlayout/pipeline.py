"""Generation runs: two-step, one-step and the seven ablation conditions.

A run directory looks like::

    run.toml          resolved configuration
    records/*.json    one write-once GenerationRecord per (condition, sample, seed)
    timings/*.json    wall-clock sidecars (kept out of records for determinism)
    aggregate.csv     per-condition metric means, Val..Rea column order
    aggregate.json    same, plus counts and provenance
    violations.csv    per-condition constraint-violation rate (%)
    cassette.jsonl    model exchanges, when recording
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import random
import re
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

from .client import DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE, DEFAULT_TOP_P, ModelRequest, encode_image
from .config import dumps as config_dumps
from .dataset import DatasetEntry, Manifest
from .errors import (
    AuthMissing,
    ClientError,
    ConfigError,
    LayoutParseFailed,
    LayoutSyntaxError,
    PipelineError,
    PlanParseError,
    PlanParseFailed,
    RecordMismatch,
    TransportError,
)
from .layout import (
    Category,
    Element,
    Layout,
    Rect,
    category_counts,
    extract_html_block,
    parse_layout_html,
)
from .metrics import (
    METRIC_COLUMNS,
    MetricReport,
    ViolationReport,
    aggregate,
    check_violations,
    failed_report,
    format_metric,
    score_layout,
    violation_rate,
)
from .prompting import (
    DEFAULT_TEMPLATE_VERSION,
    PROMPT_CANVAS,
    ElementConstraint,
    ExemplarStore,
    PlacementPlan,
    PromptBundle,
    build_layout_prompt,
    build_one_step_prompt,
    build_plan_prompt,
    parse_plan,
    render_template,
    sample_constraint,
)
from .saliency import DEFAULT_THRESHOLD, GrayImage, SaliencyMap, load_gray_image, load_saliency_map, spectral_residual

log = logging.getLogger(__name__)

RECORD_VERSION = 1
MAX_REPAIR_ATTEMPTS = 2


# -- conditions --------------------------------------------------------------


@dataclass(frozen=True)
class Condition:
    name: str
    steps: int
    shots: int
    cot: bool

    def to_json(self) -> dict:
        return asdict(self)


NAMED_CONDITIONS = {
    c.name: c
    for c in (
        Condition("baseline_0shot_nocot", 1, 0, False),
        Condition("onestep_0shot", 1, 0, True),
        Condition("twostep_0shot", 2, 0, True),
        Condition("onestep_5shot", 1, 5, True),
        Condition("onestep_10shot", 1, 10, True),
        Condition("twostep_5shot", 2, 5, True),
        Condition("twostep_10shot", 2, 10, True),
    )
}
ALL_CONDITIONS = tuple(NAMED_CONDITIONS)

_CUSTOM = re.compile(r"^custom\(\s*([12])\s*,\s*(\d+)\s*,\s*(true|false|1|0)\s*\)$", re.IGNORECASE)


def parse_condition(name: str) -> Condition:
    """Named condition or ``custom(steps, shots, cot)``."""
    name = name.strip()
    if name in NAMED_CONDITIONS:
        return NAMED_CONDITIONS[name]
    m = _CUSTOM.match(name)
    if m:
        steps, shots, cot = int(m.group(1)), int(m.group(2)), m.group(3).lower() in ("true", "1")
        if steps == 2 and not cot:
            raise ConfigError("two-step generation always plans first; cot=false is only valid with steps=1")
        return Condition(f"custom_{steps}step_{shots}shot_{'cot' if cot else 'nocot'}", steps, shots, cot)
    raise ConfigError(
        f"unknown condition {name!r}; valid names: {', '.join(ALL_CONDITIONS)} or custom(steps, shots, cot)"
    )


# -- records -----------------------------------------------------------------


@dataclass(frozen=True)
class GenerationRecord:
    run_id: str
    condition: Condition
    sample_id: str
    seed: int
    image_digest: str
    constraint: str
    model: str
    sampling: dict
    template_version: str
    exchanges: tuple[dict, ...]
    plan: Optional[dict] = None
    plan_text: Optional[str] = None
    layout: Optional[dict] = None
    repair_attempts: int = 0
    salvaged: bool = False
    error: Optional[str] = None
    metrics: Optional[dict] = None
    violations: Optional[dict] = None

    def to_json(self) -> dict:
        data = asdict(self)
        data["version"] = RECORD_VERSION
        data["exchanges"] = list(self.exchanges)
        return data

    @classmethod
    def from_json(cls, data: dict) -> "GenerationRecord":
        data = dict(data)
        data.pop("version", None)
        data["condition"] = Condition(**data["condition"])
        data["exchanges"] = tuple(data["exchanges"])
        return cls(**data)

    def layout_obj(self) -> Optional[Layout]:
        return Layout.from_json(self.layout) if self.layout else None

    def metric_report(self) -> Optional[MetricReport]:
        return MetricReport.from_json(self.metrics) if self.metrics else None

    def violation_report(self) -> Optional[ViolationReport]:
        return ViolationReport.from_json(self.violations) if self.violations else None


@dataclass(frozen=True)
class GenerationSettings:
    canvas: tuple[int, int] = PROMPT_CANVAS
    template_version: str = DEFAULT_TEMPLATE_VERSION
    temperature: float = DEFAULT_TEMPERATURE
    top_p: float = DEFAULT_TOP_P
    max_tokens: int = DEFAULT_MAX_TOKENS
    max_repair_attempts: int = MAX_REPAIR_ATTEMPTS
    shuffle_seed: Optional[int] = None

    def sampling(self) -> dict:
        return {"temperature": self.temperature, "top_p": self.top_p, "max_tokens": self.max_tokens}


class _Session:
    """Sends prompts for one generation and keeps the exchange log."""

    def __init__(self, client, settings: GenerationSettings):
        self.client = client
        self.settings = settings
        self.model = getattr(client, "model", "unknown")
        self.exchanges: list[dict] = []

    def ask(self, step: str, bundle: PromptBundle) -> str:
        request = ModelRequest(self.model, bundle, **self.settings.sampling())
        response = self.client.chat(request)
        self.exchanges.append(
            {
                "step": step,
                "prompt": bundle.to_json(),
                "images": [encode_image(p).digest for p in bundle.image_paths()],
                "response": response.text,
            }
        )
        return response.text


class ConstraintDrift(LayoutSyntaxError):
    """Parsed layout does not contain the requested element types."""


def _parse_checked(text: str, constraint: ElementConstraint, canvas: tuple[int, int]) -> Layout:
    layout = parse_layout_html(extract_html_block(text), expected_canvas=Rect(0, 0, *canvas))
    want = category_counts([c for c, _ in constraint.items])
    got = category_counts(layout.categories())
    if want != got:
        raise ConstraintDrift(
            f"layout has {_describe(got)} but the constraint asks for {_describe(want)} ({constraint})"
        )
    return layout


def _describe(counts: dict) -> str:
    return ", ".join(f"{n} {c.value}" for c, n in sorted(counts.items(), key=lambda kv: kv[0].value)) or "no elements"


_SALVAGE_PROP = re.compile(r"(left|top|width|height)\s*:\s*(-?\d+(?:\.\d+)?)", re.IGNORECASE)
_SALVAGE_CLASS = re.compile(r"""class\s*=\s*["']?\s*([A-Za-z]+)""", re.IGNORECASE)
_SALVAGE_DIV = re.compile(r"<\s*div\b[^>]*>", re.IGNORECASE)


def salvage_layout(text: str, canvas: tuple[int, int] = PROMPT_CANVAS) -> Layout:
    """Best-effort layout from a broken answer.

    Unknown classes and divs without all four numbers are dropped;
    rectangles are clipped to the canvas and dropped when nothing remains.
    """
    cw, ch = canvas
    found_canvas = None
    items = []
    for tag in _SALVAGE_DIV.findall(text):
        cls = _SALVAGE_CLASS.search(tag)
        props = {k.lower(): float(v) for k, v in _SALVAGE_PROP.findall(tag)}
        if not cls or len(props) < 4:
            continue
        name = cls.group(1).lower()
        if name == "canvas":
            if found_canvas is None and props["width"] >= 1 and props["height"] >= 1:
                found_canvas = (int(props["width"] + 0.5), int(props["height"] + 0.5))
            continue
        if name not in ("logo", "text", "underlay"):
            continue
        items.append((Category(name), props))
    if found_canvas:
        cw, ch = found_canvas
    elements = []
    for category, p in items:
        if p["width"] <= 0 or p["height"] <= 0:
            continue
        x0 = min(max(int(p["left"] + 0.5), 0), cw)
        y0 = min(max(int(p["top"] + 0.5), 0), ch)
        x1 = min(max(int(p["left"] + p["width"] + 0.5), 0), cw)
        y1 = min(max(int(p["top"] + p["height"] + 0.5), 0), ch)
        if x1 > x0 and y1 > y0:
            elements.append(Element(category, Rect(x0, y0, x1 - x0, y1 - y0), len(elements)))
    return Layout(Rect(0, 0, cw, ch), tuple(elements))


@dataclass(frozen=True)
class RepairResult:
    layout: Layout
    attempts: int
    salvaged: bool


def repair_layout(
    raw_output: str,
    constraint: ElementConstraint,
    client,
    bundle: PromptBundle,
    max_attempts: int = MAX_REPAIR_ATTEMPTS,
    *,
    settings: Optional[GenerationSettings] = None,
    session: Optional[_Session] = None,
    step: str = "layout",
) -> RepairResult:
    """Re-prompt with the parse error, then fall back to salvage."""
    settings = settings or GenerationSettings()
    session = session or _Session(client, settings)
    canvas = settings.canvas
    outputs = [raw_output]
    try:
        return RepairResult(_parse_checked(raw_output, constraint, canvas), 0, False)
    except LayoutSyntaxError as exc:
        error = str(exc)
    conversation = bundle
    last = raw_output
    for attempt in range(1, max_attempts + 1):
        note = render_template(
            "repair",
            settings.template_version,
            error=error,
            constraint=str(constraint),
            canvas_w=canvas[0],
            canvas_h=canvas[1],
        )
        conversation = conversation.followup(last, note)
        last = session.ask(f"{step}-repair-{attempt}", conversation)
        outputs.append(last)
        try:
            return RepairResult(_parse_checked(last, constraint, canvas), attempt, False)
        except LayoutSyntaxError as exc:
            error = str(exc)
    want = category_counts([c for c, _ in constraint.items])
    salvaged = [salvage_layout(text, canvas) for text in reversed(outputs)]
    for layout in salvaged:
        if layout.elements and category_counts(layout.categories()) == want:
            return RepairResult(layout, max_attempts, True)
    for layout in salvaged:
        if layout.elements:
            return RepairResult(layout, max_attempts, True)
    raise LayoutParseFailed(f"no usable layout after {max_attempts} repair attempt(s): {error}")


def _fail(exc_type, message: str, session: _Session):
    exc = exc_type(message)
    exc.exchanges = list(session.exchanges)
    return exc


def _record(
    session: _Session,
    condition: Condition,
    image: Path,
    constraint: ElementConstraint,
    seed: int,
    sample_id: str,
    **fields,
) -> GenerationRecord:
    return GenerationRecord(
        run_id=f"{condition.name}:{sample_id}:{seed}",
        condition=condition,
        sample_id=sample_id,
        seed=seed,
        image_digest=encode_image(image).digest,
        constraint=str(constraint),
        model=session.model,
        sampling=session.settings.sampling(),
        template_version=session.settings.template_version,
        exchanges=tuple(session.exchanges),
        **fields,
    )


def _ask_plan(session, bundle, constraint, settings) -> PlacementPlan:
    text = session.ask("plan", bundle)
    conversation = bundle
    for attempt in range(settings.max_repair_attempts + 1):
        try:
            return parse_plan(text, constraint)
        except PlanParseError as exc:
            error = str(exc)
        if attempt == settings.max_repair_attempts:
            break
        note = render_template("plan_repair", settings.template_version, error=error, constraint=str(constraint))
        conversation = conversation.followup(text, note)
        text = session.ask(f"plan-repair-{attempt + 1}", conversation)
    raise _fail(PlanParseFailed, f"placement plan unusable: {error}", session)


def generate_two_step(
    image: Union[str, Path],
    constraint: ElementConstraint,
    shots: int,
    store: ExemplarStore,
    client,
    *,
    settings: Optional[GenerationSettings] = None,
    condition: Optional[Condition] = None,
    sample_id: str = "",
    seed: int = 0,
) -> GenerationRecord:
    settings = settings or GenerationSettings()
    condition = condition or Condition(f"twostep_{shots}shot", 2, shots, True)
    image = Path(image)
    exemplars = store.take(shots, settings.shuffle_seed)
    session = _Session(client, settings)
    plan_bundle = build_plan_prompt(
        exemplars, image, constraint, version=settings.template_version, condition=condition.name
    )
    plan = _ask_plan(session, plan_bundle, constraint, settings)
    layout_bundle = build_layout_prompt(
        exemplars,
        image,
        constraint,
        plan,
        canvas=settings.canvas,
        version=settings.template_version,
        condition=condition.name,
    )
    raw = session.ask("layout", layout_bundle)
    try:
        result = repair_layout(
            raw, constraint, client, layout_bundle, settings.max_repair_attempts, settings=settings, session=session
        )
    except LayoutParseFailed as exc:
        raise _fail(LayoutParseFailed, str(exc), session) from None
    return _record(
        session,
        condition,
        image,
        constraint,
        seed,
        sample_id,
        plan=plan.to_json(),
        plan_text=plan.render(),
        layout=result.layout.to_json(),
        repair_attempts=result.attempts,
        salvaged=result.salvaged,
    )


def _strip_html(text: str) -> Optional[str]:
    try:
        block = extract_html_block(text)
    except LayoutSyntaxError:
        return text.strip() or None
    rest = text.replace(block, "\n", 1)
    rest = re.sub(r"```[a-zA-Z]*", "", rest)
    rest = "\n".join(line.rstrip() for line in rest.splitlines()).strip()
    return rest or None


def generate_one_step(
    image: Union[str, Path],
    constraint: ElementConstraint,
    shots: int,
    cot: bool,
    store: ExemplarStore,
    client,
    *,
    settings: Optional[GenerationSettings] = None,
    condition: Optional[Condition] = None,
    sample_id: str = "",
    seed: int = 0,
) -> GenerationRecord:
    settings = settings or GenerationSettings()
    condition = condition or Condition(f"onestep_{shots}shot", 1, shots, cot)
    image = Path(image)
    exemplars = store.take(shots, settings.shuffle_seed)
    session = _Session(client, settings)
    bundle = build_one_step_prompt(
        exemplars,
        image,
        constraint,
        cot,
        canvas=settings.canvas,
        version=settings.template_version,
        condition=condition.name,
    )
    raw = session.ask("layout", bundle)
    try:
        result = repair_layout(
            raw, constraint, client, bundle, settings.max_repair_attempts, settings=settings, session=session
        )
    except LayoutParseFailed as exc:
        raise _fail(LayoutParseFailed, str(exc), session) from None
    prose = _strip_html(raw)
    plan = None
    if cot and prose:
        try:
            plan = parse_plan(prose, constraint).to_json()
        except PlanParseError:
            plan = None
    return _record(
        session,
        condition,
        image,
        constraint,
        seed,
        sample_id,
        plan=plan,
        plan_text=prose,
        layout=result.layout.to_json(),
        repair_attempts=result.attempts,
        salvaged=result.salvaged,
    )


def generate(condition: Condition, image, constraint, store, client, **kwargs) -> GenerationRecord:
    if condition.steps == 2:
        return generate_two_step(image, constraint, condition.shots, store, client, condition=condition, **kwargs)
    return generate_one_step(
        image, constraint, condition.shots, condition.cot, store, client, condition=condition, **kwargs
    )


# -- scoring -----------------------------------------------------------------


@dataclass(frozen=True)
class ScoringOptions:
    theta: float = float(DEFAULT_THRESHOLD)
    utility_denominator: str = "non-salient"


class ImageCache:
    """Per-run cache of background luminance and saliency maps."""

    def __init__(self):
        self._lock = threading.Lock()
        self._data: dict[str, tuple[GrayImage, SaliencyMap, str]] = {}

    def get(self, entry: DatasetEntry) -> tuple[GrayImage, SaliencyMap, str]:
        with self._lock:
            if entry.id in self._data:
                return self._data[entry.id]
        background = load_gray_image(entry.image)
        if entry.saliency is not None:
            saliency = load_saliency_map(entry.saliency, background.width, background.height)
            source = "dataset"
        else:
            saliency = spectral_residual(background)
            source = "spectral-residual"
        with self._lock:
            self._data[entry.id] = (background, saliency, source)
        return background, saliency, source


def score_record(
    record: GenerationRecord, entry: DatasetEntry, cache: ImageCache, options: ScoringOptions
) -> tuple[MetricReport, ViolationReport]:
    constraint = ElementConstraint.parse(record.constraint)
    layout = record.layout_obj()
    background, saliency, source = cache.get(entry)
    if layout is None:
        return (
            failed_report(saliency_source=source, theta=options.theta, utility_denominator=options.utility_denominator),
            ViolationReport(True, ()),
        )
    metrics = score_layout(
        layout,
        saliency,
        background,
        theta=options.theta,
        saliency_source=source,
        utility_denominator=options.utility_denominator,
    )
    return metrics, check_violations(layout, constraint)


# -- run directory -----------------------------------------------------------


def _dump(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def record_key(condition: str, sample_id: str, seed: int) -> str:
    return f"{condition}__{sample_id}__s{seed}"


def load_record(path: Path, *, condition: Optional[str] = None, sample_id: Optional[str] = None,
                seed: Optional[int] = None) -> GenerationRecord:
    record = GenerationRecord.from_json(json.loads(path.read_text(encoding="utf-8")))
    expected = {"condition": condition, "sample_id": sample_id, "seed": seed}
    actual = {"condition": record.condition.name, "sample_id": record.sample_id, "seed": record.seed}
    for key, want in expected.items():
        if want is not None and actual[key] != want:
            raise RecordMismatch(f"{path} holds {key}={actual[key]!r}, expected {want!r}")
    return record


def select_samples(manifest: Manifest, n_samples: int, seed: int) -> list[DatasetEntry]:
    pool = sorted(manifest.entries, key=lambda e: e.id)
    chosen = random.Random(seed).sample(pool, min(n_samples, len(pool)))
    return sorted(chosen, key=lambda e: e.id)


def constraint_for(entry: DatasetEntry, manifest: Manifest, mode: str, seed: int) -> ElementConstraint:
    if mode == "ground-truth" and entry.layout is not None and entry.layout.elements:
        return ElementConstraint.from_layout(entry.layout)
    pool = [e.layout for e in manifest.entries if e.layout is not None and e.layout.elements]
    return sample_constraint(pool, f"{seed}:{entry.id}")


@dataclass
class RunResult:
    run_dir: Path
    records: int = 0
    generated: int = 0
    reused: int = 0
    failed: list[str] = field(default_factory=list)
    aborted: dict[str, str] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        if self.aborted:
            return 4
        if self.failed:
            return 3
        return 0


def run_experiment(
    manifest: Manifest,
    conditions: Sequence[Condition],
    n_samples: int,
    seed: int,
    client,
    run_dir: Union[str, Path],
    store: ExemplarStore,
    *,
    settings: Optional[GenerationSettings] = None,
    scoring: Optional[ScoringOptions] = None,
    constraint_mode: str = "ground-truth",
    config: Optional[dict] = None,
) -> RunResult:
    """Generate, score and aggregate every (condition, sample) pair.

    Existing record files are reused, so an interrupted run can be resumed.
    """
    settings = settings or GenerationSettings()
    scoring = scoring or ScoringOptions()
    run_dir = Path(run_dir)
    (run_dir / "records").mkdir(parents=True, exist_ok=True)
    if config is not None:
        write_atomic(run_dir / "run.toml", config_dumps(config))
    for cond in conditions:
        if cond.shots > len(store):
            raise ConfigError(f"condition {cond.name} needs {cond.shots} exemplars, store has {len(store)}")
    samples = select_samples(manifest, n_samples, seed)
    cache = ImageCache()
    result = RunResult(run_dir)
    lock = threading.Lock()

    def one(cond: Condition, entry: DatasetEntry, abort: threading.Event) -> None:
        key = record_key(cond.name, entry.id, seed)
        path = run_dir / "records" / f"{key}.json"
        if path.exists():
            load_record(path, condition=cond.name, sample_id=entry.id, seed=seed)
            with lock:
                result.reused += 1
            return
        if abort.is_set():
            return
        constraint = constraint_for(entry, manifest, constraint_mode, seed)
        started = time.time()
        error = None
        try:
            record = generate(cond, entry.image, constraint, store, client,
                              settings=settings, sample_id=entry.id, seed=seed)
        except (TransportError, AuthMissing) as exc:
            abort.set()
            with lock:
                result.aborted.setdefault(cond.name, f"{type(exc).__name__}: {exc}")
            return
        except (PipelineError, ClientError) as exc:
            error = f"{type(exc).__name__}: {exc}"
            session = _Session(client, settings)
            session.exchanges = getattr(exc, "exchanges", [])
            record = _record(session, cond, entry.image, constraint, seed, entry.id, error=error)
        metrics, violations = score_record(record, entry, cache, scoring)
        record = GenerationRecord(**{**record.__dict__, "metrics": metrics.to_json(),
                                     "violations": violations.to_json()})
        write_atomic(path, _dump(record.to_json()))
        write_atomic(
            run_dir / "timings" / f"{key}.json",
            _dump({"started": started, "elapsed_s": round(time.time() - started, 3)}),
        )
        with lock:
            result.generated += 1
            if error:
                result.failed.append(key)

    workers = max(1, getattr(client, "concurrency", 1))
    for cond in conditions:
        abort = threading.Event()
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for future in [pool.submit(one, cond, entry, abort) for entry in samples]:
                future.result()
        if cond.name in result.aborted:
            log.error("condition %s aborted: %s", cond.name, result.aborted[cond.name])

    records = collect_records(run_dir, [c.name for c in conditions], [e.id for e in samples], seed)
    result.records = sum(len(v) for v in records.values())
    result.failed = sorted(set(result.failed) | {
        record_key(r.condition.name, r.sample_id, r.seed) for rs in records.values() for r in rs if r.error
    })
    write_aggregates(run_dir, records)
    return result


def collect_records(run_dir: Path, conditions: Optional[Sequence[str]] = None,
                    sample_ids: Optional[Sequence[str]] = None,
                    seed: Optional[int] = None) -> dict[str, list[GenerationRecord]]:
    """Records grouped by condition, in condition order then sample-id order."""
    run_dir = Path(run_dir)
    found: dict[str, list[GenerationRecord]] = {}
    if conditions is not None and sample_ids is not None and seed is not None:
        for cond in conditions:
            for sid in sample_ids:
                path = run_dir / "records" / f"{record_key(cond, sid, seed)}.json"
                if path.exists():
                    found.setdefault(cond, []).append(load_record(path, condition=cond, sample_id=sid, seed=seed))
        return found
    for path in sorted((run_dir / "records").glob("*.json")):
        record = load_record(path)
        if conditions is None or record.condition.name in conditions:
            found.setdefault(record.condition.name, []).append(record)
    if conditions is not None:
        found = {c: found[c] for c in conditions if c in found}
    return found


def condition_order(name: str) -> tuple:
    """Named conditions in their fixed order, then custom ones by name."""
    if name in NAMED_CONDITIONS:
        return (0, ALL_CONDITIONS.index(name), "")
    return (1, 0, name)


def aggregate_rows(records: dict[str, list[GenerationRecord]]) -> list[tuple[str, int, MetricReport, float]]:
    rows = []
    for cond in sorted(records, key=condition_order):
        recs = records[cond]
        reports = [r.metric_report() for r in recs if r.metrics]
        violations = [r.violation_report() for r in recs if r.violations]
        if not reports:
            continue
        rows.append((cond, len(reports), aggregate(reports), violation_rate(violations)))
    return rows


def aggregate_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["condition", *METRIC_COLUMNS])
    for cond, _, report, _ in rows:
        writer.writerow([cond, *(format_metric(report.column(c)) for c in METRIC_COLUMNS)])
    return buf.getvalue()


def violations_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["Method", "Violation Rate (%)"])
    for cond, _, _, rate in rows:
        writer.writerow([cond, f"{rate:.2f}"])
    return buf.getvalue()


def write_aggregates(run_dir: Path, records: dict[str, list[GenerationRecord]]) -> list:
    rows = aggregate_rows(records)
    write_atomic(run_dir / "aggregate.csv", aggregate_csv(rows))
    write_atomic(run_dir / "violations.csv", violations_csv(rows))
    write_atomic(
        run_dir / "aggregate.json",
        _dump(
            {
                cond: {"n": n, "metrics": report.to_json(), "violation_rate": rate}
                for cond, n, report, rate in rows
            }
        ),
    )
    return rows


def rescore_run(run_dir: Union[str, Path], manifest: Manifest, scoring: ScoringOptions) -> list:
    """Recompute metrics for every record and rewrite the aggregate files only."""
    run_dir = Path(run_dir)
    records = collect_records(run_dir)
    cache = ImageCache()
    rescored: dict[str, list[GenerationRecord]] = {}
    for cond, recs in records.items():
        for r in recs:
            metrics, violations = score_record(r, manifest.get(r.sample_id), cache, scoring)
            rescored.setdefault(cond, []).append(
                GenerationRecord(**{**r.__dict__, "metrics": metrics.to_json(), "violations": violations.to_json()})
            )
    return write_aggregates(run_dir, rescored)
