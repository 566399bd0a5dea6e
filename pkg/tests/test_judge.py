import csv
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from golden import JUDGE_FALLBACK_ANSWER
from scripted import Scripted
from adlayout.client import VLMClient
from adlayout.config import fixture_path
from adlayout.errors import EmptyAggregate, JudgeParseFailed
from adlayout.judge import (
    CRITERIA,
    AbsoluteScore,
    PairwiseVerdict,
    judge_absolute,
    judge_pairwise,
    judge_run,
    parse_absolute,
    parse_pairwise,
    preference_percentages,
    summarize_judgement,
)
from adlayout.pipeline import parse_condition, run_experiment
from adlayout.prompting import load_template

EXPLAIN = {c: f"{c} reasoning" for c in CRITERIA}


def score(a, o, w):
    return AbsoluteScore(a, o, w, EXPLAIN)


def absolute_answer(a, o, w):
    return f"Looks tidy.\n```json\n{json.dumps({'alignment': a, 'overlap': o, 'white_space': w, 'explanations': EXPLAIN})}\n```"


def pairwise_answer(a, o, w):
    return f"```json\n{json.dumps({'alignment': a, 'overlap': o, 'white_space': w, 'justification': 'because'})}\n```"


# -- parsing -----------------------------------------------------------------


def test_parse_structured_block():
    s = parse_absolute(absolute_answer(7, 3, 6))
    assert (s.alignment, s.overlap, s.white_space) == (7, 3, 6)
    assert s.explanations["overlap"] == "overlap reasoning"


def test_parse_block_without_explanations_uses_prose():
    s = parse_absolute('The boxes crowd the top.\n```json\n{"alignment": 4, "overlap": 5.5, "white_space": 2}\n```')
    assert s.overlap == 5.5 and s.explanations["alignment"] == "The boxes crowd the top."


def test_parse_fallback_score_lines():
    s = parse_absolute(JUDGE_FALLBACK_ANSWER)
    assert (s.alignment, s.overlap, s.white_space) == (6, 3.0, 5.5)
    assert all(s.explanations[c] for c in CRITERIA)


@pytest.mark.parametrize(
    "text",
    [
        absolute_answer(11, 3, 6),
        absolute_answer(0, 3, 6),
        absolute_answer(7.25, 3, 6),
        "Alignment score: 7\nOverlap score: high\nWhite Space score: 5",
        "Alignment score: 7\nWhite Space score: 5",
        "no scores at all",
    ],
)
def test_parse_rejects(text):
    with pytest.raises(JudgeParseFailed):
        parse_absolute(text)


@given(*(st.integers(2, 20).map(lambda n: n / 2) for _ in CRITERIA),
       st.dictionaries(st.sampled_from(CRITERIA), st.text(min_size=1).filter(str.strip)))
def test_render_parse_identity(a, o, w, notes):
    s = AbsoluteScore(a, o, w, {c: notes.get(c, "fine") for c in CRITERIA})
    assert parse_absolute(s.render()) == s


def test_parse_pairwise_forms():
    assert parse_pairwise(pairwise_answer("A", "B", "Layout A"))[0] == {"alignment": "A", "overlap": "B", "white_space": "A"}
    lines = "Alignment: Layout B is steadier.\nOverlap winner: A\nWhite space: B, more margin."
    winners, why = parse_pairwise(lines)
    assert winners == {"alignment": "B", "overlap": "A", "white_space": "B"}
    assert why.startswith("Alignment")
    with pytest.raises(JudgeParseFailed):
        parse_pairwise(pairwise_answer("A", "C", "B"))
    with pytest.raises(JudgeParseFailed):
        parse_pairwise("Alignment: A")


# -- querying ----------------------------------------------------------------


def test_judge_prompt_mentions_box_format(png):
    client = Scripted(absolute_answer(7, 3, 6))
    judge_absolute(png(), client)
    text = client.requests[0].bundle.transcript()
    assert "represented in box format" in text
    assert text == load_template("judge_absolute") + "\n<image>"


def test_judge_retries_once_with_reminder(png):
    client = Scripted("I like it.", absolute_answer(8, 8, 8))
    assert judge_absolute(png(), client).alignment == 8
    assert [m.role for m in client.requests[1].bundle.messages] == ["user", "assistant", "user"]
    with pytest.raises(JudgeParseFailed):
        judge_absolute(png(), Scripted("no", "still no"))


def test_pairwise_unswaps(png):
    a, b = png("a.png"), png("b.png", color=(1, 2, 3))
    client = Scripted(pairwise_answer("A", "A", "A"), pairwise_answer("B", "B", "A"))
    straight = judge_pairwise(a, b, client)
    assert (straight.alignment, straight.overlap, straight.white_space) == ("A", "A", "A")
    swapped = judge_pairwise(a, b, client, swap=True)
    assert (swapped.alignment, swapped.overlap, swapped.white_space) == ("A", "A", "B")
    assert swapped.swapped
    assert client.requests[1].bundle.image_paths() == [b, a]


# -- summaries ---------------------------------------------------------------


def verdict(*winners):
    return PairwiseVerdict(*winners, justification="x")


def test_preference_percentages():
    table = preference_percentages([verdict("A", "A", "B"), verdict("A", "A", "A"), verdict("B", "B", "A")])
    assert table["overlap"] == {"A": 66.7, "B": 33.3}
    assert table["alignment"] == {"A": 66.7, "B": 33.3}
    assert all(row["A"] + row["B"] == 100.0 for row in table.values())
    assert preference_percentages([verdict("A", "B", "A"), verdict("B", "B", "A")])["alignment"] == {"A": 50.0, "B": 50.0}
    with pytest.raises(EmptyAggregate):
        preference_percentages([])


@given(st.lists(st.tuples(*(st.sampled_from("AB") for _ in CRITERIA)), min_size=1, max_size=40))
def test_preferences_always_sum_to_100(winners):
    table = preference_percentages([verdict(*w) for w in winners])
    for row in table.values():
        assert row["A"] + row["B"] == 100.0


def test_summarize_examples():
    same = [score(5, 6, 7), score(8, 2, 4)]
    summary = summarize_judgement(same, same)
    for c in CRITERIA:
        assert summary.boxes["A"][c]["median"] == summary.boxes["B"][c]["median"]
        assert (summary.scatter[c]["above"], summary.scatter[c]["below"]) == (0, 0)
    higher = [score(6, 7, 8), score(9, 3, 5)]
    lifted = summarize_judgement(higher, same)
    assert all(lifted.scatter[c]["above"] == 2 for c in CRITERIA)
    with pytest.raises(EmptyAggregate):
        summarize_judgement([], same)


# -- run-level, offline ------------------------------------------------------


def test_judge_run_from_cassettes(tmp_path, manifest, store):
    gen = VLMClient("replay", cassette=fixture_path("cassettes", "generation.jsonl"))
    conditions = [parse_condition(c) for c in ("baseline_0shot_nocot", "twostep_10shot")]
    run_experiment(manifest, conditions, 3, 0, gen, tmp_path, store)
    judge = VLMClient("replay", cassette=fixture_path("cassettes", "judge.jsonl"))
    backgrounds = {e.id: e.image for e in manifest.entries}
    summary = judge_run(tmp_path, judge, backgrounds, compare=("twostep_10shot", "baseline_0shot_nocot"))
    assert summary["errors"] == []
    assert set(summary["absolute"]) == {"baseline_0shot_nocot", "twostep_10shot"}
    pref = summary["pairwise"]["preference"]
    assert all(pref[c]["A"] + pref[c]["B"] == 100.0 for c in CRITERIA)
    assert summary["pairwise"]["n_verdicts"] == 6
    rows = list(csv.DictReader((tmp_path / "pairwise.csv").open()))
    assert sorted(r["order"] for r in rows) == ["AB"] * 3 + ["BA"] * 3
    assert len(list(csv.DictReader((tmp_path / "judgement.csv").open()))) == 6
    assert json.loads((tmp_path / "judge_summary.json").read_text()) == summary
