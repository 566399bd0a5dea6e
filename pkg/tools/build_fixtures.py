"""Regenerate the fixtures shipped under ``src/adlayout/data``.

Everything is deterministic: synthetic backgrounds are closed-form images,
and the cassettes are recorded through the real client against an
in-process scripted responder (an ``httpx.MockTransport``), so replaying
them exercises exactly the code path a live endpoint would.

    python3 tools/build_fixtures.py
"""

from __future__ import annotations

import csv
import hashlib
import json
import re
import shutil
import sys
from pathlib import Path

import httpx
import numpy as np
from PIL import Image

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from adlayout.client import VLMClient  # noqa: E402
from adlayout.dataset import import_dataset  # noqa: E402
from adlayout.judge import judge_run  # noqa: E402
from adlayout.layout import Category, Element, Layout, Rect, serialize_layout_html  # noqa: E402
from adlayout.pipeline import ALL_CONDITIONS, parse_condition, run_experiment  # noqa: E402
from adlayout.prompting import ElementConstraint, ExemplarStore  # noqa: E402

DATA = ROOT / "src" / "adlayout" / "data"
SIZE = (204, 300)
CANVAS = (102, 150)

# -- backgrounds -------------------------------------------------------------


def background(seed: int, subject: tuple[float, float, float, float], top=(70, 110, 160), bottom=(230, 220, 200)):
    """Vertical gradient, a faint horizontal ripple and one bright elliptical subject."""
    w, h = SIZE
    t = np.linspace(0.0, 1.0, h)[:, None, None]
    img = (1 - t) * np.array(top, float) + t * np.array(bottom, float)
    img = np.broadcast_to(img, (h, w, 3)).copy()
    img += 6.0 * np.sin(np.arange(w) / 9.0 + seed)[None, :, None]
    cx, cy, rx, ry = subject
    yy, xx = np.mgrid[0:h, 0:w]
    inside = ((xx - cx * w) / (rx * w)) ** 2 + ((yy - cy * h) / (ry * h)) ** 2 <= 1.0
    img[inside] = np.array((250, 240, 90))
    return Image.fromarray(np.clip(img, 0, 255).astype(np.uint8), "RGB"), inside


def save(img: Image.Image, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG", optimize=False, compress_level=6)


# -- exemplar store ----------------------------------------------------------

TABLE_PLAN = (
    "- Text 0 : Bottom center to ensure it dose not overlap above the waist of man and woman.\n"
    "- Text 1 : Under Text 0, aligned with Text 0.\n"
    "- Underlay 2 : Behind Text 0 and Text 1 to avoid overlapping humans as possible."
)

EXEMPLARS = [
    ("ex01", (0.5, 0.4, 0.3, 0.25), "text 0 | text 1 | underlay 2", TABLE_PLAN,
     [("text", 2, 113, 95, 10), ("text", 2, 124, 95, 9), ("underlay", 0, 111, 102, 24)]),
    ("ex02", (0.6, 0.45, 0.28, 0.3), "logo 0 | text 1 | text 2",
     "- Logo 0 : Top left corner, away from the product.\n"
     "- Text 1 : Lower left, below the product.\n"
     "- Text 2 : Under Text 1, aligned with Text 1 on the left.",
     [("logo", 4, 4, 28, 12), ("text", 6, 112, 70, 12), ("text", 6, 126, 56, 8)]),
    ("ex03", (0.5, 0.65, 0.35, 0.2), "text 0 | underlay 1",
     "- Text 0 : Top center, above the subject in the empty sky.\n"
     "- Underlay 1 : Behind Text 0 for contrast.",
     [("text", 10, 14, 82, 14), ("underlay", 6, 10, 90, 22)]),
    ("ex04", (0.35, 0.5, 0.25, 0.3), "logo 0 | text 1 | underlay 2",
     "- Logo 0 : Top right, clear of the subject.\n"
     "- Text 1 : Bottom right, next to the subject but not on it.\n"
     "- Underlay 2 : Behind Text 1.",
     [("logo", 70, 6, 26, 12), ("text", 52, 118, 44, 12), ("underlay", 48, 114, 52, 20)]),
    ("ex05", (0.5, 0.35, 0.3, 0.22), "text 0 | text 1 | text 2 | underlay 3",
     "- Text 0 : Lower third, centered under the subject.\n"
     "- Text 1 : Under Text 0, same width.\n"
     "- Text 2 : Under Text 1, shorter, centered.\n"
     "- Underlay 3 : Behind Text 0, Text 1 and Text 2.",
     [("text", 8, 100, 86, 12), ("text", 8, 114, 86, 10), ("text", 26, 126, 50, 8), ("underlay", 4, 96, 94, 42)]),
    ("ex06", (0.45, 0.55, 0.3, 0.3), "logo 0 | text 1",
     "- Logo 0 : Top left corner.\n"
     "- Text 1 : Top, right of the logo, avoiding the subject below.",
     [("logo", 4, 4, 24, 12), ("text", 32, 6, 64, 10)]),
    ("ex07", (0.5, 0.3, 0.32, 0.2), "text 0 | text 1 | underlay 2 | underlay 3",
     "- Text 0 : Bottom left, below the subject.\n"
     "- Text 1 : Bottom right, level with Text 0.\n"
     "- Underlay 2 : Behind Text 0.\n"
     "- Underlay 3 : Behind Text 1.",
     [("text", 6, 124, 40, 10), ("text", 56, 124, 40, 10), ("underlay", 4, 121, 44, 16), ("underlay", 54, 121, 44, 16)]),
    ("ex08", (0.55, 0.5, 0.3, 0.35), "logo 0 | text 1 | text 2 | underlay 3",
     "- Logo 0 : Top center, above the subject.\n"
     "- Text 1 : Bottom center, below the subject.\n"
     "- Text 2 : Under Text 1, aligned with Text 1.\n"
     "- Underlay 3 : Behind Text 1 and Text 2.",
     [("logo", 38, 4, 26, 12), ("text", 10, 120, 82, 10), ("text", 10, 132, 82, 8), ("underlay", 6, 117, 90, 26)]),
    ("ex09", (0.4, 0.6, 0.3, 0.25), "text 0",
     "- Text 0 : Top left in the empty area, away from the subject.",
     [("text", 6, 10, 60, 14)]),
    ("ex10", (0.5, 0.5, 0.2, 0.2), "logo 0 | text 1 | underlay 2 | text 3",
     "- Logo 0 : Top left corner.\n"
     "- Text 1 : Bottom center, below the subject.\n"
     "- Underlay 2 : Behind Text 1.\n"
     "- Text 3 : Top right, level with Logo 0.",
     [("logo", 4, 4, 24, 12), ("text", 12, 124, 78, 12), ("underlay", 8, 120, 86, 20), ("text", 40, 6, 56, 8)]),
]


def build_exemplars() -> None:
    out = DATA / "exemplars"
    shutil.rmtree(out, ignore_errors=True)
    entries = []
    for n, (ex_id, subject, constraint, plan, boxes) in enumerate(EXEMPLARS):
        img, _ = background(100 + n, subject)
        save(img, out / "images" / f"{ex_id}.png")
        layout = Layout.build(*CANVAS, boxes)
        entries.append({"id": ex_id, "image": f"images/{ex_id}.png", "constraint": constraint,
                        "plan": plan, "layout": layout.to_json()})
    (out / "manifest.json").write_text(json.dumps({"exemplars": entries}, indent=2) + "\n", encoding="utf-8")


# -- dataset -----------------------------------------------------------------

SAMPLES = [
    ("s001", (0.5, 0.38, 0.3, 0.24), [("text", 4, 226, 190, 20), ("text", 4, 248, 190, 18), ("underlay", 0, 222, 204, 48)]),
    ("s002", (0.5, 0.45, 0.22, 0.3), [("logo", 8, 8, 50, 24), ("text", 120, 10, 76, 20), ("text", 10, 240, 90, 16),
                                      ("text", 110, 240, 84, 16), ("underlay", 6, 234, 192, 28)]),
    ("s003", (0.45, 0.6, 0.3, 0.2), [("logo", 150, 8, 45, 25), ("text", 20, 30, 160, 21), ("underlay", 14, 24, 172, 33)]),
]


def build_dataset() -> None:
    out = DATA / "dataset"
    shutil.rmtree(out, ignore_errors=True)
    src = out / "source"
    rows = []
    for n, (sid, subject, boxes) in enumerate(SAMPLES):
        img, inside = background(200 + n, subject)
        save(img, src / "images" / f"{sid}.png")
        if n == 0:
            sal = Image.fromarray((inside * 255).astype(np.uint8), "L")
            save(sal, src / "saliency" / f"{sid}.png")
        rows += [{"image_id": sid, "category": c, "x": x, "y": y, "w": w, "h": h} for c, x, y, w, h in boxes]
    with (src / "annotations.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, ["image_id", "category", "x", "y", "w", "h"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    import_dataset(src, "generic", strict=True).save(out / "manifest.json")


# -- scripted responder ------------------------------------------------------

_CONSTRAINT = re.compile(r"Element Type Constraint: (.+)")


def _texts(payload: dict) -> tuple[str, list[str], list[dict]]:
    first = payload["messages"][0]["content"]
    text = "".join(p["text"] for p in first if p["type"] == "text")
    images = [p["image_url"]["url"] for p in first if p["type"] == "image_url"]
    return text, images, payload["messages"]


def _variant(*parts) -> int:
    return int(hashlib.sha256("|".join(map(str, parts)).encode()).hexdigest(), 16)


def _plan_lines(constraint: ElementConstraint) -> list[str]:
    texts = [i for c, i in constraint.items if c is Category.TEXT]
    lines = []
    for c, i in constraint.items:
        if c is Category.LOGO:
            lines.append(f"- Logo {i} : Top left, avoiding the main subject.")
        elif c is Category.TEXT:
            where = "Bottom center, below the main subject." if i == texts[0] else f"Under Text {texts[texts.index(i) - 1]}, aligned with it."
            lines.append(f"- Text {i} : {where}")
        else:
            behind = " and ".join(f"text {t}" for t in texts) or "the logo"
            lines.append(f"- Underlay {i} : Behind {behind}, not to overlap the subject.")
    return lines


def _layout(constraint: ElementConstraint, v: int, orphan: bool = False, drop_underlay: bool = False) -> Layout:
    shift = v % 4
    items = []
    texts = [i for c, i in constraint.items if c is Category.TEXT]
    logos = [i for c, i in constraint.items if c is Category.LOGO]
    under = [i for c, i in constraint.items if c is Category.UNDERLAY]
    rects = {}
    for k, i in enumerate(logos):
        rects[i] = (Category.LOGO, Rect(4 + k * 30 + shift, 4, 26, 12))
    top = 150 - 8 - 12 * len(texts) - 4 * shift
    for k, i in enumerate(texts):
        rects[i] = (Category.TEXT, Rect(6 + shift + k * ((v >> 3) % 3), top + 12 * k, 88 - 2 * shift - 6 * (k % 2), 10))
    for k, i in enumerate(under):
        covered = [rects[t][1] for t in texts] or [rects[g][1] for g in logos]
        if len(under) > 1 and k < len(covered):
            covered = [covered[k]]
        x0 = min(r.x for r in covered) - 2
        y0 = min(r.y for r in covered) - 2
        x1 = max(r.right for r in covered) + 2
        y1 = max(r.bottom for r in covered) + 2
        if orphan:
            y0, y1 = 2, 2 + (y1 - y0)
        rects[i] = (Category.UNDERLAY, Rect(max(x0, 0), max(y0, 0), min(x1, 102) - max(x0, 0), y1 - max(y0, 0)))
    for _, i in constraint.items:
        cat, r = rects[i]
        if drop_underlay and cat is Category.UNDERLAY:
            continue
        items.append((cat, r))
    return Layout(Rect(0, 0, *CANVAS), tuple(Element(c, r, n) for n, (c, r) in enumerate(items)))


def respond(payload: dict) -> str:
    text, images, messages = _texts(payload)
    constraint = ElementConstraint.parse(_CONSTRAINT.findall(text)[-1]) if "Element Type Constraint" in text else None
    repair_round = (len(messages) - 1) // 2
    v = _variant(images[-1][-64:], len(images), text[-300:])

    if "Rate the layout" in text:
        score = lambda k: 4 + (v >> (4 * k)) % 6  # noqa: E731
        if v % 5 == 0 and repair_round == 0:
            return ("Explanation:\nThe boxes sit on the quiet part of the image.\n"
                    f"Alignment score: {score(0)}\nOverlap score: {score(1)}.0\nWhite Space score: {score(2)}")
        body = {"alignment": score(0), "overlap": score(1), "white_space": score(2),
                "explanations": {"alignment": "Left edges of the text boxes line up.",
                                 "overlap": "Text sits on its underlay and clear of the subject.",
                                 "white_space": "Margins are even on both sides."}}
        return "The layout keeps the subject visible.\n```json\n" + json.dumps(body) + "\n```"
    if "which layout is better" in text:
        pick = lambda k: "AB"[(v >> k) % 3 == 0]  # noqa: E731
        body = {"alignment": pick(1), "overlap": pick(3), "white_space": pick(5),
                "justification": "One layout keeps its text blocks aligned and off the subject."}
        return "```json\n" + json.dumps(body) + "\n```"

    if text.startswith("Instruction\nPlease tell me"):
        lines = _plan_lines(constraint)
        if repair_round == 0 and v % 3 == 0:
            lines = lines[:-1]  # incomplete plan, fixed on the re-prompt
        return "The subject occupies the upper middle of the image. Keep the lower area for the copy.\n" + "\n".join(lines)

    nocot = "Answer with the layout as HTML code only." in text
    onestep = nocot or "Answer in a single response." in text
    drop = onestep and repair_round == 0 and v % 4 == 1
    orphan = nocot and v % 2 == 0
    html = serialize_layout_html(_layout(constraint, v, orphan=orphan, drop_underlay=drop))
    if repair_round > 0:
        return html
    if nocot:
        return "```html\n" + html + "\n```"
    if onestep:
        plan = "\n".join(_plan_lines(constraint))
        return ("Below is the HTML layout with elements placed to avoid overlapping the main subject.\n"
                + html + "\n" + plan)
    return html


def _handler(request: httpx.Request) -> httpx.Response:
    payload = json.loads(request.content)
    content = respond(payload)
    return httpx.Response(200, json={
        "id": "fixture",
        "object": "chat.completion",
        "model": payload["model"],
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 0, "completion_tokens": len(content.split()), "total_tokens": 0},
    })


def _client(cassette: Path) -> VLMClient:
    return VLMClient("record", cassette=cassette, api_base="http://fixture.invalid/v1", api_key="fixture",
                     transport=httpx.MockTransport(_handler), concurrency=1)


def build_cassettes(tmp: Path) -> None:
    from adlayout.dataset import Manifest

    out = DATA / "cassettes"
    shutil.rmtree(out, ignore_errors=True)
    out.mkdir(parents=True)
    manifest = Manifest.load(DATA / "dataset")
    store = ExemplarStore.load(DATA / "exemplars")
    run_dir = tmp / "fixture-run"
    shutil.rmtree(run_dir, ignore_errors=True)
    client = _client(out / "generation.jsonl")
    result = run_experiment(manifest, [parse_condition(c) for c in ALL_CONDITIONS], 3, 0, client, run_dir, store)
    print(f"generation: {result.records} records, {len(client.cassette)} cassette entries, failed={result.failed}")
    judge_client = _client(out / "judge.jsonl")
    summary = judge_run(run_dir, judge_client, {e.id: e.image for e in manifest.entries},
                        compare=("twostep_10shot", "baseline_0shot_nocot"))
    print(f"judge: {len(judge_client.cassette)} cassette entries, errors={summary['errors']}")


if __name__ == "__main__":
    import tempfile

    build_exemplars()
    build_dataset()
    with tempfile.TemporaryDirectory() as tmp:
        build_cassettes(Path(tmp))
