import json
import random

import pytest

from garmentdiff.evalkit import EvalReport, StudyResponse, emit_report, human_scores
from garmentdiff.evalkit.report import ReportError, parse_csv
from garmentdiff.evalkit.study import StudyError, rank_weight


def _resp(rankings, aspect="identity"):
    return [StudyResponse(str(i), aspect, tuple(r)) for i, r in enumerate(rankings)]


def test_hand_worked_example():
    pref, scores = human_scores(_resp([("A", "B", "C"), ("A", "B", "C"), ("B", "A", "C")]), ["A", "B", "C"])
    assert scores["identity"]["A"] == 8 / 3
    assert pref["identity"]["A"] == pytest.approx(200 / 3)
    assert scores["identity"]["C"] == 1.0


def test_unanimous():
    methods = list("VWXYZ")
    pref, scores = human_scores(_resp([("X", "V", "W", "Y", "Z")] * 7), methods)
    assert pref["identity"]["X"] == 100.0 and scores["identity"]["X"] == 5.0


def test_properties():
    rng = random.Random(0)
    methods = list("ABCD")
    resps = []
    for i in range(30):
        r = methods[:]
        rng.shuffle(r)
        resps.append(StudyResponse(str(i), rng.choice(["identity", "quality", "preservation"]), tuple(r)))
    pref, scores = human_scores(resps, methods)
    for aspect, p in pref.items():
        assert sum(p.values()) == pytest.approx(100.0)
    shuffled = resps[:]
    rng.shuffle(shuffled)
    assert human_scores(shuffled, methods) == (pref, scores)
    assert rank_weight(1, 4, "inverse") == 4.0 and rank_weight(4, 4) == 1.0
    with pytest.raises(StudyError):
        human_scores(_resp([("A", "A", "B")]), ["A", "B", "C"])
    with pytest.raises(StudyError):
        human_scores([StudyResponse("1", "speed", ("A",))], ["A"])


def test_fid_bold_and_kid_scaled():
    rep = EvalReport(["Ours", "StableVITON"], {"Ours": {"fid": 7.98, "kid": 0.0013},
                                               "StableVITON": {"fid": 8.19, "kid": 0.0021}})
    md = emit_report(rep)
    assert "**7.98**" in md and "<u>8.19</u>" in md
    assert "**0.130**" in md and "multiplied by 100" in md


def test_three_method_marks_and_single_row():
    rep = EvalReport(["a", "b", "c"], {"a": {"ssim": 0.8}, "b": {"ssim": 0.9}, "c": {"ssim": 0.7}})
    md = emit_report(rep)
    assert "**0.900**" in md and "<u>0.800</u>" in md and "| c | 0.700 |" in md
    one = emit_report(EvalReport(["only"], {"only": {"fid": 3.0}}))
    rows = [l for l in one.splitlines() if l.startswith("| only")]
    assert len(rows) == 1


def test_table5_layout():
    resps = _resp([("A", "B"), ("B", "A")], "identity") + _resp([("A", "B")], "quality") + \
        _resp([("A", "B")], "preservation")
    pref, scores = human_scores(resps, ["A", "B"])
    md = emit_report(EvalReport(["A", "B"], preference=pref, scores=scores))
    lines = md.splitlines()
    assert "Human Preference(%)↑" in lines[0] and "Human Scores↑" in lines[0]
    assert lines[2] == "| **Model** | Identity | Quality | Preservation | Identity | Quality | Preservation |"


def test_csv_and_json_roundtrip():
    rep = EvalReport(["x", "y"], {"x": {"fid": 1.2345678901, "kid": 0.00123}, "y": {"fid": 2.5}}, metadata={"k": 1})
    parsed = parse_csv(emit_report(rep, "csv"))
    assert parsed["x"]["fid"] == 1.2345678901
    assert parsed["x"]["kid"] == 0.00123 * 100
    assert "kid" not in parsed["y"]
    assert json.loads(emit_report(rep, "json"))["metrics"]["x"]["fid"] == 1.2345678901
    with pytest.raises(ReportError):
        emit_report(rep, "xml")
    with pytest.raises(ReportError):
        emit_report(EvalReport(["x"], {"x": {"fid": float("nan")}}))
