"""VLM-as-judge: absolute 1-10 scores and pairwise preferences over rendered layouts."""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .client import ModelRequest
from .errors import EmptyAggregate, JudgeParseFailed
from .pipeline import GenerationRecord, GenerationSettings, _dump, collect_records, record_key, write_atomic
from .prompting import DEFAULT_TEMPLATE_VERSION, IMAGE_MARK, PromptBundle, load_template, render_template
from .render import diagonal_split, five_number, render_on_background, save_png

log = logging.getLogger(__name__)

CRITERIA = ("alignment", "overlap", "white_space")
_NAMES = {"alignment": "alignment", "overlap": "overlap", "white space": "white_space",
          "whitespace": "white_space", "white_space": "white_space"}


def _check_score(criterion: str, value) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise JudgeParseFailed(f"{criterion} score {value!r} is not a number") from None
    if not 1.0 <= v <= 10.0:
        raise JudgeParseFailed(f"{criterion} score {v} is outside 1-10")
    if (v * 2) != int(v * 2):
        raise JudgeParseFailed(f"{criterion} score {v} is not a whole or half point")
    return v


@dataclass(frozen=True)
class AbsoluteScore:
    alignment: float
    overlap: float
    white_space: float
    explanations: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for c in CRITERIA:
            object.__setattr__(self, c, _check_score(c, getattr(self, c)))
            if not str(self.explanations.get(c, "")).strip():
                raise JudgeParseFailed(f"no explanation for {c}")

    def score(self, criterion: str) -> float:
        return getattr(self, criterion)

    def to_json(self) -> dict:
        return {c: self.score(c) for c in CRITERIA} | {"explanations": {c: self.explanations[c] for c in CRITERIA}}

    def render(self) -> str:
        """Answer text in the format the judge is asked to produce."""
        return "```json\n" + json.dumps(self.to_json(), sort_keys=True) + "\n```"


@dataclass(frozen=True)
class PairwiseVerdict:
    """Winners are in terms of the caller's A/B, whatever order was shown."""

    alignment: str
    overlap: str
    white_space: str
    justification: str
    swapped: bool = False

    def __post_init__(self):
        for c in CRITERIA:
            if getattr(self, c) not in ("A", "B"):
                raise JudgeParseFailed(f"{c} winner must be A or B, got {getattr(self, c)!r}")

    def winner(self, criterion: str) -> str:
        return getattr(self, criterion)

    def to_json(self) -> dict:
        return {c: self.winner(c) for c in CRITERIA} | {"justification": self.justification, "swapped": self.swapped}


# -- parsing -----------------------------------------------------------------

_FENCE = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.DOTALL)
_BARE = re.compile(r"\{.*\}", re.DOTALL)


def _json_block(text: str) -> Optional[dict]:
    candidates = _FENCE.findall(text)
    if not candidates:
        candidates = _BARE.findall(text)
    for blob in reversed(candidates):
        try:
            data = json.loads(blob)
        except ValueError:
            continue
        if isinstance(data, dict):
            return data
    return None


def _prose(text: str) -> str:
    return _FENCE.sub("", text).strip()


def _criterion_of(label: str) -> Optional[str]:
    label = label.strip().strip("*#-_ ").lower().replace("-", " ")
    return _NAMES.get(label)


def _scan_scores(text: str) -> dict[str, tuple[float, str]]:
    """Find "Overlap score: 3.0" style lines; returns criterion -> (value, line)."""
    found = {}
    for raw in text.splitlines():
        line = raw.replace("*", "").strip()
        lower = line.lower()
        if "score" not in lower or ":" not in line:
            continue
        head, _, tail = line.partition(":")
        head_l = head.lower()
        if not head_l.rstrip().endswith("score"):
            continue
        crit = _criterion_of(head_l.rstrip()[: -len("score")])
        if crit is None or crit in found:
            continue
        token = tail.strip().split()[0] if tail.strip() else ""
        token = token.split("/")[0].rstrip(".,;")
        found[crit] = (token, line)
    return found


def parse_absolute(text: str) -> AbsoluteScore:
    data = _json_block(text)
    if data is not None and all(c in data for c in CRITERIA):
        explanations = data.get("explanations") or {}
        if not isinstance(explanations, dict):
            explanations = {}
        prose = _prose(text) or "(explanation not given)"
        return AbsoluteScore(
            *(data[c] for c in CRITERIA),
            explanations={c: str(explanations.get(c) or prose) for c in CRITERIA},
        )
    scanned = _scan_scores(text)
    missing = [c for c in CRITERIA if c not in scanned]
    if missing:
        raise JudgeParseFailed(f"no score found for {', '.join(missing)}")
    return AbsoluteScore(
        *(scanned[c][0] for c in CRITERIA),
        explanations={c: _explanation_near(text, scanned[c][1]) for c in CRITERIA},
    )


def _explanation_near(text: str, score_line: str) -> str:
    """The paragraph holding a score line; the line itself if it stands alone."""
    for para in re.split(r"\n\s*\n", text):
        if score_line in para.replace("*", ""):
            return para.strip()
    return score_line


def _scan_winners(text: str) -> dict[str, str]:
    found = {}
    for raw in text.splitlines():
        line = raw.replace("*", "").strip()
        if ":" not in line:
            continue
        head, _, tail = line.partition(":")
        head = head.lower().replace("winner", "").replace("better", "")
        crit = _criterion_of(head)
        if crit is None or crit in found:
            continue
        words = tail.replace(".", " ").replace(",", " ").split()
        picks = [w for w in words if w in ("A", "B")]
        if picks:
            found[crit] = picks[0]
    return found


def parse_pairwise(text: str) -> tuple[dict[str, str], str]:
    """Winners as shown to the judge, plus the justification text."""
    data = _json_block(text)
    if data is not None and all(c in data for c in CRITERIA):
        winners = {c: str(data[c]).strip().upper().replace("LAYOUT ", "") for c in CRITERIA}
        justification = str(data.get("justification") or _prose(text))
    else:
        winners = _scan_winners(text)
        missing = [c for c in CRITERIA if c not in winners]
        if missing:
            raise JudgeParseFailed(f"no winner found for {', '.join(missing)}")
        justification = text.strip()
    for c, w in winners.items():
        if w not in ("A", "B"):
            raise JudgeParseFailed(f"{c} winner must be A or B, got {w!r}")
    return winners, justification or "(no justification given)"


# -- querying ----------------------------------------------------------------


def _ask(client, bundle: PromptBundle, settings: GenerationSettings, parse, version: str):
    model = getattr(client, "model", "unknown")
    text = client.chat(ModelRequest(model, bundle, **settings.sampling())).text
    try:
        return parse(text), [text]
    except JudgeParseFailed as exc:
        reminder = render_template("judge_reminder", version, error=str(exc))
        retry = client.chat(ModelRequest(model, bundle.followup(text, reminder), **settings.sampling())).text
        try:
            return parse(retry), [text, retry]
        except JudgeParseFailed as exc2:
            raise JudgeParseFailed(f"judge answer unusable after a format reminder: {exc2}") from None


def judge_absolute(rendered_image: Union[str, Path], client, *, version: str = DEFAULT_TEMPLATE_VERSION,
                   settings: Optional[GenerationSettings] = None) -> AbsoluteScore:
    settings = settings or GenerationSettings()
    bundle = PromptBundle.from_transcript(
        load_template("judge_absolute", version) + "\n" + IMAGE_MARK, [Path(rendered_image)], "judge-absolute"
    )
    score, _ = _ask(client, bundle, settings, parse_absolute, version)
    return score


def judge_pairwise(image_a: Union[str, Path], image_b: Union[str, Path], client, swap: bool = False, *,
                   version: str = DEFAULT_TEMPLATE_VERSION,
                   settings: Optional[GenerationSettings] = None) -> PairwiseVerdict:
    """Ask which layout is better; with ``swap`` B is shown first and the answer relabelled."""
    settings = settings or GenerationSettings()
    first, second = (image_b, image_a) if swap else (image_a, image_b)
    transcript = (
        load_template("judge_pairwise", version)
        + f"\nLayout A\n{IMAGE_MARK}\nLayout B\n{IMAGE_MARK}"
    )
    bundle = PromptBundle.from_transcript(transcript, [Path(first), Path(second)], "judge-pairwise")
    (winners, justification), _ = _ask(client, bundle, settings, parse_pairwise, version)
    if swap:
        winners = {c: "B" if w == "A" else "A" for c, w in winners.items()}
    return PairwiseVerdict(*(winners[c] for c in CRITERIA), justification=justification, swapped=swap)


# -- summaries ---------------------------------------------------------------


def preference_percentages(verdicts: Sequence[PairwiseVerdict]) -> dict[str, dict[str, float]]:
    """Share of verdicts won by A and B per criterion; each row sums to exactly 100."""
    if not verdicts:
        raise EmptyAggregate("no pairwise verdicts")
    out = {}
    for c in CRITERIA:
        a = round(100.0 * sum(v.winner(c) == "A" for v in verdicts) / len(verdicts), 1)
        out[c] = {"A": a, "B": round(100.0 - a, 1)}
    return out


@dataclass(frozen=True)
class JudgementSummary:
    boxes: dict  # system -> criterion -> five-number summary
    scatter: dict  # criterion -> {"pairs", "above", "below", "on"}
    preference: Optional[dict]

    def to_json(self) -> dict:
        return {"boxes": self.boxes, "scatter": self.scatter, "preference": self.preference}


def summarize_judgement(scores_a: Sequence[AbsoluteScore], scores_b: Sequence[AbsoluteScore],
                        verdicts: Sequence[PairwiseVerdict] = (), names: tuple[str, str] = ("A", "B")
                        ) -> JudgementSummary:
    """Box-plot data per system, paired scatter data (x = B, y = A) and preferences.

    ``scores_a[i]`` and ``scores_b[i]`` must belong to the same sample.
    """
    if not scores_a or not scores_b:
        raise EmptyAggregate("need scores for both systems")
    if len(scores_a) != len(scores_b):
        raise ValueError("score lists must be paired sample by sample")
    boxes = {
        names[0]: {c: five_number([s.score(c) for s in scores_a]) for c in CRITERIA},
        names[1]: {c: five_number([s.score(c) for s in scores_b]) for c in CRITERIA},
    }
    scatter = {}
    for c in CRITERIA:
        pairs = [(b.score(c), a.score(c)) for a, b in zip(scores_a, scores_b)]
        above, below, on = diagonal_split(pairs)
        scatter[c] = {"pairs": [list(p) for p in pairs], "above": above, "below": below, "on": on}
    return JudgementSummary(boxes, scatter, preference_percentages(verdicts) if verdicts else None)


# -- run-level driver --------------------------------------------------------


def _render_record(record: GenerationRecord, background: Path, out_dir: Path) -> Optional[Path]:
    layout = record.layout_obj()
    if layout is None:
        return None
    path = out_dir / f"{record_key(record.condition.name, record.sample_id, record.seed)}.png"
    if not path.exists():
        save_png(render_on_background(background, layout), path)
    return path


def judge_run(run_dir: Union[str, Path], client, backgrounds: Mapping[str, Path], *,
              conditions: Optional[Sequence[str]] = None,
              compare: Optional[tuple[str, str]] = None,
              against: Optional[Union[str, Path]] = None,
              absolute: bool = True,
              version: str = DEFAULT_TEMPLATE_VERSION,
              settings: Optional[GenerationSettings] = None) -> dict:
    """Judge every record of a run; writes judgement.csv, pairwise.csv and judge_summary.json.

    ``compare=(a, b)`` runs both-order pairwise judging of condition ``a``
    against condition ``b`` (from ``against`` when given, else the same run).
    """
    run_dir = Path(run_dir)
    settings = settings or GenerationSettings()
    renders = run_dir / "renders"
    records = collect_records(run_dir, conditions)
    other = records
    if compare and against is not None:
        other = collect_records(Path(against), [compare[1]])
    workers = max(1, getattr(client, "concurrency", 1))
    summary: dict = {}
    errors = []

    scores: dict[str, dict[str, AbsoluteScore]] = {}
    if absolute:
        jobs = [(cond, r) for cond, recs in records.items() for r in recs]
        if compare and against is not None:
            jobs += [(compare[1], r) for r in other.get(compare[1], [])]

        def score_one(job):
            cond, r = job
            image = _render_record(r, backgrounds[r.sample_id], renders)
            if image is None:
                return cond, r, None, r.error or "no layout"
            try:
                return cond, r, judge_absolute(image, client, version=version, settings=settings), None
            except JudgeParseFailed as exc:
                return cond, r, None, str(exc)

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["condition", "sample_id", "seed", *CRITERIA, "error"])
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for cond, r, s, err in pool.map(score_one, jobs):
                if s is not None:
                    scores.setdefault(cond, {})[r.sample_id] = s
                    writer.writerow([cond, r.sample_id, r.seed, *(s.score(c) for c in CRITERIA), ""])
                else:
                    errors.append(f"{cond}/{r.sample_id}: {err}")
                    writer.writerow([cond, r.sample_id, r.seed, "", "", "", err])
        write_atomic(run_dir / "judgement.csv", buf.getvalue())
        summary["absolute"] = {
            cond: {c: {"scores": [by_id[k].score(c) for k in sorted(by_id)],
                       **five_number([by_id[k].score(c) for k in sorted(by_id)])} for c in CRITERIA}
            for cond, by_id in scores.items()
        }

    if compare:
        a_name, b_name = compare
        a_recs = {r.sample_id: r for r in records.get(a_name, [])}
        b_recs = {r.sample_id: r for r in other.get(b_name, [])}
        shared = sorted(set(a_recs) & set(b_recs))
        jobs = [(sid, swap) for sid in shared for swap in (False, True)]

        def pair_one(job):
            sid, swap = job
            ia = _render_record(a_recs[sid], backgrounds[sid], renders)
            ib = _render_record(b_recs[sid], backgrounds[sid], renders / "against" if against else renders)
            if ia is None or ib is None:
                return sid, swap, None, "missing layout"
            try:
                return sid, swap, judge_pairwise(ia, ib, client, swap, version=version, settings=settings), None
            except JudgeParseFailed as exc:
                return sid, swap, None, str(exc)

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["system_a", "system_b", "sample_id", "order", *CRITERIA, "justification", "error"])
        verdicts: dict[str, dict[bool, PairwiseVerdict]] = {}
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for sid, swap, v, err in pool.map(pair_one, jobs):
                order = "BA" if swap else "AB"
                if v is None:
                    errors.append(f"pair {sid} {order}: {err}")
                    writer.writerow([a_name, b_name, sid, order, "", "", "", "", err])
                    continue
                verdicts.setdefault(sid, {})[swap] = v
                writer.writerow([a_name, b_name, sid, order, *(v.winner(c) for c in CRITERIA), v.justification, ""])
        write_atomic(run_dir / "pairwise.csv", buf.getvalue())
        flat = [v for sid in sorted(verdicts) for _, v in sorted(verdicts[sid].items())]
        if flat:
            both = [d for d in verdicts.values() if len(d) == 2]
            summary["pairwise"] = {
                "system_a": a_name,
                "system_b": b_name,
                "n_verdicts": len(flat),
                "preference": preference_percentages(flat),
                "disagreement": {
                    c: round(100.0 * sum(d[False].winner(c) != d[True].winner(c) for d in both) / len(both), 1)
                    if both else 0.0
                    for c in CRITERIA
                },
            }
        sa, sb = scores.get(a_name, {}), scores.get(b_name, {})
        paired = sorted(set(sa) & set(sb))
        if paired:
            s = summarize_judgement([sa[k] for k in paired], [sb[k] for k in paired], names=(a_name, b_name))
            summary["scatter"] = {
                "x": b_name,
                "y": a_name,
                "pairs": {c: s.scatter[c]["pairs"] for c in CRITERIA},
                "above": {c: s.scatter[c]["above"] for c in CRITERIA},
                "below": {c: s.scatter[c]["below"] for c in CRITERIA},
            }
    summary["errors"] = sorted(errors)
    write_atomic(run_dir / "judge_summary.json", _dump(summary))
    return summary
