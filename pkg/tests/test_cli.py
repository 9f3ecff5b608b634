import json

import pytest

import xmodal.pipeline
from xmodal.cli import main
from xmodal.scene_io import load_descriptions, load_matches, read_json


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--seed", "5", "--n-scenes", "3", "--profile", "heavy", "--out", str(out)]) == 0
    return out


def test_synth_writes_index(dataset):
    index = read_json(dataset / "index.json")
    assert index["dataset_id"] == "synth-heavy-seed5"
    assert len(index["scenes"]) == 3


def test_run_structural(dataset, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--dataset", str(dataset), "--out", str(out), "--matcher", "structural"]) == 0
    text = capsys.readouterr().out
    assert "Model" in text and "AER" in text
    report = read_json(out / "report.json")
    assert report["matcher"] == "structural" and report["failures"] == []
    assert 0 <= report["aer"] <= 1
    for name in ("graph_rgb.txt", "graph_thermal.txt", "descriptions.json", "matches.json", "fused.json"):
        assert (out / "scenes" / "scene_000" / name).is_file()
    assert (out / "scene_000.svg").is_file()


def test_run_with_debate_writes_transcripts(dataset, tmp_path):
    out = tmp_path / "run"
    rc = main(["run", "--dataset", str(dataset), "--out", str(out), "--debate", "--hallucination", "0.3"])
    assert rc == 0
    doc = read_json(out / "scenes" / "scene_000" / "debate.json")
    assert doc["scene_id"] == "scene_000" and doc["transcripts"]
    assert read_json(out / "report.json")["debate"] is True


def test_overlap_never_builds_providers(dataset, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("providers requested")

    monkeypatch.setattr(xmodal.pipeline, "build_providers", boom)
    out = tmp_path / "run"
    assert main(["run", "--dataset", str(dataset), "--out", str(out), "--matcher", "overlap"]) == 0
    assert not (out / "scenes" / "scene_000" / "descriptions.json").exists()


def test_llm_matcher_with_mock(dataset, tmp_path):
    out = tmp_path / "run"
    assert main(["run", "--dataset", str(dataset), "--out", str(out), "--matcher", "llm"]) == 0
    m = load_matches(out / "scenes" / "scene_001" / "matches.json")
    assert m.scene_id == "scene_001"


def test_single_scene_commands(dataset, tmp_path, capsys):
    scene = str(dataset / "scene_000.json")
    g = tmp_path / "graphs"
    assert main(["graph", "--scene", scene, "--out", str(g)]) == 0
    assert (g / "graph_rgb.txt").read_text().startswith("NODE ")

    desc = tmp_path / "desc.json"
    assert main(["describe", "--scene", scene, "--out", str(desc), "--all-providers", "--hallucination", "0.4"]) == 0
    cache = load_descriptions(desc)
    assert {r.provenance for r in cache.records} == {"gpt4", "gemini", "claude2"}

    resolved = tmp_path / "resolved.json"
    assert main(["debate", "--scene", scene, "--descriptions", str(desc), "--out", str(resolved)]) == 0
    assert (tmp_path / "resolved.debate.json").is_file()

    matches = tmp_path / "matches.json"
    assert main(["match", "--scene", scene, "--descriptions", str(resolved), "--out", str(matches)]) == 0
    fused = tmp_path / "fused.json"
    assert main(["fuse", "--scene", scene, "--matches", str(matches), "--out", str(fused)]) == 0
    assert read_json(fused)["frame"] == "THERMAL"
    svg = tmp_path / "o.svg"
    assert main(["render", "--scene", scene, "--matches", str(matches), "--out", str(svg)]) == 0
    assert svg.read_text().startswith("<svg")


def test_eval_over_run_artifacts(dataset, tmp_path):
    run = tmp_path / "run"
    assert main(["run", "--dataset", str(dataset), "--out", str(run)]) == 0
    ev = tmp_path / "eval"
    args = ["eval", "--dataset", str(dataset), "--artifacts", str(run), "--label", "structural", "--out", str(ev)]
    assert main(args) == 0
    a, b = read_json(run / "report.json"), read_json(ev / "report.json")
    assert (a["aer"], a["ap"]) == (b["aer"], b["ap"])


def test_record_then_replay(dataset, tmp_path):
    rec = tmp_path / "fixtures"
    r1, r2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["run", "--dataset", str(dataset), "--out", str(r1), "--record", str(rec)]) == 0
    assert any(rec.rglob("*.json"))
    assert main(["run", "--dataset", str(dataset), "--out", str(r2), "--replay", str(rec)]) == 0
    assert (r1 / "report.json").read_bytes() == (r2 / "report.json").read_bytes()
    # describe misses are kept as partial-cache failures
    empty = tmp_path / "empty"
    empty.mkdir()
    r3 = tmp_path / "r3"
    assert main(["run", "--dataset", str(dataset), "--out", str(r3), "--replay", str(empty)]) == 0
    cache = load_descriptions(r3 / "scenes" / "scene_000" / "descriptions.json")
    assert cache.records == [] and "replay miss" in cache.failures[0]["error"]
    # a miss on the match call fails the scene
    r4 = tmp_path / "r4"
    assert main(["run", "--dataset", str(dataset), "--out", str(r4), "--replay", str(empty), "--matcher", "llm"]) == 1
    failures = read_json(r4 / "report.json")["failures"]
    assert len(failures) == 3 and "replay miss" in failures[0]["error"]


@pytest.mark.parametrize(
    "extra",
    [
        ["--judge", "nobody"],
        ["--max-rounds", "0"],
        ["--debate", "--providers", "gpt4"],
        ["--record", "a", "--replay", "b"],
        ["--w-pos", "0", "--w-attr", "0"],
    ],
)
def test_config_errors_exit_2(dataset, tmp_path, extra):
    assert main(["run", "--dataset", str(dataset), "--out", str(tmp_path / "o"), *extra]) == 2


def test_ini_config(dataset, tmp_path):
    ini = tmp_path / "x.ini"
    ini.write_text("[pipeline]\nmatcher = overlap\n\n[matcher]\niou_thresh = 0.3\n")
    out = tmp_path / "o"
    assert main(["run", "--dataset", str(dataset), "--out", str(out), "--config", str(ini)]) == 0
    assert read_json(out / "report.json")["matcher"] == "overlap"


@pytest.mark.parametrize(
    "body",
    [
        "[providers]\nroster = gpt4, gemini\n\n[providers.gpt4]\napi_key = sk-123\n",
        "[pipeline]\ntoken = abc\n",
        "[pipeline]\nmatcher = fancy\n",
        "[pipeline]\nunknown = 1\n",
        "[matcher]\ntau = many\n",
    ],
)
def test_bad_ini_exit_2(dataset, tmp_path, body):
    ini = tmp_path / "bad.ini"
    ini.write_text(body)
    assert main(["run", "--dataset", str(dataset), "--out", str(tmp_path / "o"), "--config", str(ini)]) == 2


def test_missing_and_malformed_inputs(tmp_path):
    assert main(["graph", "--scene", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["graph", "--scene", str(bad), "--out", str(tmp_path)]) == 1
    bad.write_text(json.dumps({"schema": 1, "scene_id": "x"}))
    assert main(["graph", "--scene", str(bad), "--out", str(tmp_path)]) == 1
