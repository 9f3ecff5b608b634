import itertools
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xmodal.evaluation import compute_aer
from xmodal.matcher import (
    FORMAT_STANZA,
    REPROMPT_SUFFIX,
    CostMatrix,
    MatchParseError,
    attribute_dissimilarity,
    build_match_prompt,
    llm_match,
    overlap_match,
    parse_match_reply,
    render_match_reply,
    solve_assignment,
    structural_cost_matrix,
    structural_match,
)
from xmodal.mock import MockProvider
from xmodal.posgraph import build_graph, serialize_graph
from xmodal.providers import ScriptedProvider
from xmodal.scene_io import AppearanceRecord, BBox, Detection, Modality, ScenePair

from conftest import brute_force_assignment, det


def _graphs(scene):
    return (
        build_graph(scene.rgb_detections, scene.image_size_rgb),
        build_graph(scene.thermal_detections, scene.image_size_thermal),
    )


# -- prompt ------------------------------------------------------------------


def test_prompt_contains_nodes_and_format(two_by_two_scene):
    g_r, g_t = _graphs(two_by_two_scene)
    tr, tt = serialize_graph(g_r), serialize_graph(g_t)
    p = build_match_prompt(tr, tt)
    assert p == build_match_prompt(tr, tt)
    assert p.endswith(FORMAT_STANZA)
    for line in (tr + "\n" + tt).splitlines():
        assert line in p
    assert "Matching result: (RGB_person1 : T_person1" in p


@pytest.mark.parametrize("a,b", [("", "NODE T1 pos=(0.1,0.1)"), ("NODE R1 pos=(0.1,0.1)", "  ")])
def test_prompt_requires_both_graphs(a, b):
    with pytest.raises(ValueError):
        build_match_prompt(a, b)


# -- parser --------------------------------------------------------------------

RIDS, TIDS = ["R1", "R2", "R3"], ["T1", "T2", "T3"]


def test_parse_canonical_reply():
    text = "Rationale: nearest ordering.\nMatching result: (RGB_person1 : T_person2, RGB_person2 : T_person1)"
    rationale, pairs = parse_match_reply(text, RIDS, TIDS)
    assert rationale == "nearest ordering."
    assert set(pairs) == {("R1", "T2"), ("R2", "T1")}


@pytest.mark.parametrize(
    "text,expected",
    [
        ("Matching result: (R1 : T3)", [("R1", "T3")]),
        ("Matching result:(rgb_person3:t_person1 ,R2:T2)", [("R3", "T1"), ("R2", "T2")]),
        ("  Matching   result :  ( RGB_person2  :  T3 )", [("R2", "T3")]),
        ("Matching result: ()", []),
        ("**Matching result:** (R1 : T1)", [("R1", "T1")]),
    ],
)
def test_parse_whitespace_and_label_forms(text, expected):
    assert parse_match_reply(text, RIDS, TIDS)[1] == expected


@pytest.mark.parametrize(
    "text,needle",
    [
        ("Rationale: I think R1 is T1.", "missing"),
        ("Matching result: (RGB_person1 : T_person1, RGB_person1 : T_person2)", "duplicate RGB id"),
        ("Matching result: (R1 : T1, R2 : T1)", "duplicate thermal id"),
        ("Matching result: (R9 : T1)", "unknown RGB id"),
        ("Matching result: (R1 : T_person7)", "unknown thermal id"),
        ("Matching result: (R1 T1)", "malformed pair"),
    ],
)
def test_parse_rejections_carry_diagnostics(text, needle):
    with pytest.raises(MatchParseError) as info:
        parse_match_reply(text, RIDS, TIDS)
    assert needle in str(info.value)
    assert "line" in str(info.value)


def test_parse_error_position():
    text = "Rationale: x\nMatching result: (R1 : T1, R1 : T2)"
    with pytest.raises(MatchParseError) as info:
        parse_match_reply(text, RIDS, TIDS)
    assert info.value.line == 2 and info.value.column > 0


def _random_bijection(rng):
    n_r, n_t = rng.randint(0, 20), rng.randint(0, 20)
    rids = [f"R{i + 1}" for i in range(n_r)]
    tids = [f"T{i + 1}" for i in range(n_t)]
    k = rng.randint(0, min(n_r, n_t))
    pairs = list(zip(rng.sample(rids, k), rng.sample(tids, k)))
    return rids, tids, pairs


def test_render_parse_round_trip_fuzz():
    rng = random.Random(7)
    for _ in range(1000):
        rids, tids, pairs = _random_bijection(rng)
        text = render_match_reply(pairs, rids, tids, "fuzz")
        assert parse_match_reply(text, rids, tids) == ("fuzz", pairs)


@settings(max_examples=50)
@given(st.permutations(list(range(6))), st.booleans())
def test_raw_id_rendering_round_trips(perm, spaces):
    rids = [f"R{i}" for i in range(6)]
    tids = [f"T{i}" for i in range(6)]
    sep = " : " if spaces else ":"
    body = ", ".join(f"{rids[i]}{sep}{tids[p]}" for i, p in enumerate(perm))
    _, pairs = parse_match_reply(f"Matching result: ({body})", rids, tids)
    assert pairs == [(rids[i], tids[p]) for i, p in enumerate(perm)]


# -- llm_match -----------------------------------------------------------------


def test_llm_match_valid_reply(two_by_two_scene):
    g_r, g_t = _graphs(two_by_two_scene)
    provider = ScriptedProvider("gpt4", ["Rationale: swapped.\nMatching result: (RGB_person1 : T_person2)"])
    m = llm_match(two_by_two_scene, g_r, g_t, None, None, provider)
    assert m.pairs == [("R1", "T2")]
    assert m.rationale == "swapped."
    assert m.unmatched_rgb == ["R2"] and m.unmatched_thermal == ["T1"]
    assert len(provider.requests) == 1


def test_llm_match_reprompts_then_succeeds(two_by_two_scene):
    g_r, g_t = _graphs(two_by_two_scene)
    provider = ScriptedProvider("gpt4", ["no idea", "Matching result: (R1 : T1, R2 : T2)"])
    m = llm_match(two_by_two_scene, g_r, g_t, None, None, provider)
    assert m.pairs == [("R1", "T1"), ("R2", "T2")]
    assert provider.requests[1].text.endswith(REPROMPT_SUFFIX)


def test_llm_match_falls_back_to_structural(two_by_two_scene):
    g_r, g_t = _graphs(two_by_two_scene)
    provider = ScriptedProvider("gpt4", lambda r: "Matching result: (R1 : T1, R1 : T2)")
    m = llm_match(two_by_two_scene, g_r, g_t, None, None, provider)
    assert len(provider.requests) == 3
    assert m.rationale.startswith("fallback to structural matcher")
    assert m.pairs == structural_match(g_r, g_t).pairs


def test_llm_match_no_thermal_makes_no_call(two_by_two_scene):
    scene = two_by_two_scene
    scene.thermal_detections = []
    scene.gt_pairs = []
    g_r, g_t = _graphs(scene)
    provider = ScriptedProvider("gpt4", [])
    m = llm_match(scene, g_r, g_t, None, None, provider)
    assert m.pairs == [] and m.unmatched_rgb == ["R1", "R2"]
    assert provider.requests == []


def test_mock_match_provider_follows_structural(two_by_two_scene):
    g_r, g_t = _graphs(two_by_two_scene)
    m = llm_match(two_by_two_scene, g_r, g_t, None, None, MockProvider("gpt4"))
    assert m.pairs == [("R1", "T1"), ("R2", "T2")]


# -- structural ----------------------------------------------------------------


def _random_scene(rng, n, size=(640, 480)):
    rgb = [det(f"R{i + 1}", rng.uniform(0, 600), rng.uniform(0, 440), gt=f"p{i}") for i in range(n)]
    th = [
        Detection(f"T{i + 1}", Modality.THERMAL, d.bbox, d.confidence, d.gt_identity) for i, d in enumerate(rgb)
    ]
    return ScenePair("rand", size, size, rgb, th, gt_pairs=[(f"R{i + 1}", f"T{i + 1}") for i in range(n)])


@pytest.mark.parametrize("seed", range(10))
def test_identical_scenes_give_identity(seed):
    scene = _random_scene(random.Random(seed), 6)
    g_r, g_t = _graphs(scene)
    m = structural_match(g_r, g_t)
    assert sorted(m.pairs) == sorted(scene.gt_pairs)
    assert compute_aer(scene.gt_pairs, m)[0] == 0.0


def test_diagonal_dominance():
    cm = CostMatrix(["R1", "R2"], ["T1", "T2"], [[0.1, 0.9], [0.9, 0.1]])
    assert solve_assignment(cm) == [("R1", "T1"), ("R2", "T2")]
    assert solve_assignment(cm, tau=0.05) == []


def test_tau_leaves_expensive_pairs_unmatched():
    cm = CostMatrix(["R1", "R2"], ["T1"], [[0.2], [3.0]])
    assert solve_assignment(cm, tau=1.5) == [("R1", "T1")]
    cm = CostMatrix(["R1"], ["T1", "T2"], [[2.0, 1.8]])
    assert solve_assignment(cm, tau=1.5) == []


@pytest.mark.parametrize("seed", range(100))
def test_assignment_matches_brute_force_5x5(seed):
    rng = np.random.default_rng(seed)
    cost = rng.random((5, 5))
    cm = CostMatrix([f"R{i}" for i in range(5)], [f"T{j}" for j in range(5)], cost)
    pairs = solve_assignment(cm)
    assert len(pairs) == 5
    assert math.isclose(cm.total(pairs), brute_force_assignment(cost.tolist()), rel_tol=0, abs_tol=1e-12)


@pytest.mark.parametrize("seed", range(30))
def test_structural_total_cost_is_optimal(seed):
    rng = random.Random(seed)
    n_r, n_t = rng.randint(1, 7), rng.randint(1, 7)
    rgb = [det(f"R{i}", rng.uniform(0, 600), rng.uniform(0, 440)) for i in range(n_r)]
    th = [det(f"T{i}", rng.uniform(0, 600), rng.uniform(0, 490), modality=Modality.THERMAL) for i in range(n_t)]
    g_r, g_t = build_graph(rgb, (640, 480)), build_graph(th, (640, 512))
    cm = structural_cost_matrix(g_r, g_t)
    m = structural_match(g_r, g_t, tau=math.inf)
    assert len(m.pairs) == min(n_r, n_t)
    cost = cm.cost if n_r <= n_t else cm.cost.T
    assert math.isclose(cm.total(m.pairs), brute_force_assignment(cost.tolist()), abs_tol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_weight_scaling_keeps_assignment(seed, k):
    rng = random.Random(seed)
    n = rng.randint(1, 6)
    rgb = [det(f"R{i}", rng.uniform(0, 600), rng.uniform(0, 440)) for i in range(n)]
    th = [det(f"T{i}", rng.uniform(0, 600), rng.uniform(0, 440), modality=Modality.THERMAL) for i in range(n)]
    g_r, g_t = build_graph(rgb, (640, 480)), build_graph(th, (640, 480))
    base = CostMatrix(*_ids(g_r, g_t), structural_cost_matrix(g_r, g_t, w_pos=1.0, w_attr=0.5).cost)
    scaled = structural_cost_matrix(g_r, g_t, w_pos=k, w_attr=0.5 * k)
    a = structural_match(g_r, g_t, w_pos=1.0, w_attr=0.5, tau=math.inf).pairs
    b = structural_match(g_r, g_t, w_pos=k, w_attr=0.5 * k, tau=math.inf).pairs
    # equal-cost optima may differ in the chosen pairs but never in the total
    assert a == b or math.isclose(base.total(a), base.total(b), abs_tol=1e-9)
    assert np.allclose(scaled.cost, k * base.cost)


def _ids(g_r, g_t):
    return [n.det_id for n in g_r.nodes], [n.det_id for n in g_t.nodes]


def test_attributes_break_positional_ties():
    # two people at mirrored positions; only attributes tell them apart
    rgb = [det("R1", 100, 100), det("R2", 100, 300)]
    th = [det("T1", 100, 100, modality=Modality.THERMAL), det("T2", 100, 300, modality=Modality.THERMAL)]
    g_r, g_t = build_graph(rgb, (640, 480)), build_graph(th, (640, 480))
    rd = {d: AppearanceRecord(d, Modality.RGB, c, {"clothing": c}, "m") for d, c in (("R1", "red"), ("R2", "blue"))}
    td = {d: AppearanceRecord(d, Modality.THERMAL, c, {"clothing": c}, "m") for d, c in (("T1", "blue"), ("T2", "red"))}
    m = structural_match(g_r, g_t, rd, td, w_pos=0.01, w_attr=1.0)
    assert sorted(m.pairs) == [("R1", "T2"), ("R2", "T1")]


@pytest.mark.parametrize(
    "a,b,expected",
    [
        ({"clothing": "red"}, {"clothing": "Red "}, 0.0),
        ({"clothing": "red", "hairstyle": "long"}, {"clothing": "red", "hairstyle": "short"}, 0.5),
        ({"clothing": "red"}, {"hairstyle": "short"}, 1.0),
        ({}, {"clothing": "red"}, 0.0),
        (None, None, 0.0),
    ],
)
def test_attribute_dissimilarity(a, b, expected):
    assert attribute_dissimilarity(a, b) == expected


def test_structural_empty_inputs():
    g = build_graph([], (640, 480))
    g2 = build_graph([det("T1", 1, 1)], (640, 480))
    m = structural_match(g, g2)
    assert m.pairs == [] and m.unmatched_thermal == ["T1"]


def test_invalid_weights():
    g = build_graph([det("R1", 1, 1)], (640, 480))
    with pytest.raises(ValueError):
        structural_match(g, g, w_pos=0, w_attr=0)
    with pytest.raises(ValueError):
        structural_match(g, g, w_pos=-1)


# -- overlap -------------------------------------------------------------------


def _scene(rgb, th, size=(100, 100)):
    return ScenePair("o", size, size, rgb, th)


def test_overlap_identical_boxes():
    rgb = [det("R1", 0, 0), det("R2", 50, 50)]
    th = [det("T1", 50, 50), det("T2", 0, 0)]
    assert sorted(overlap_match(_scene(rgb, th)).pairs) == [("R1", "T2"), ("R2", "T1")]


def test_overlap_disjoint_boxes():
    m = overlap_match(_scene([det("R1", 0, 0)], [det("T1", 60, 60)]))
    assert m.pairs == [] and m.unmatched_rgb == ["R1"] and m.unmatched_thermal == ["T1"]


def test_overlap_greedy_prefers_higher_iou():
    t = Detection("T1", Modality.THERMAL, BBox(0, 0, 10, 10), 0.9)
    # IoU with T1: 8/10 = 0.8 and 6/10 = 0.6
    r_hi = Detection("R1", Modality.RGB, BBox(0, 0, 10, 8), 0.9)
    r_lo = Detection("R2", Modality.RGB, BBox(0, 0, 10, 6), 0.9)
    m = overlap_match(_scene([r_lo, r_hi], [t]))
    assert m.pairs == [("R1", "T1")] and m.unmatched_rgb == ["R2"]


def test_overlap_maps_thermal_frame():
    r = Detection("R1", Modality.RGB, BBox(64, 48, 64, 48), 0.9)
    t = Detection("T1", Modality.THERMAL, BBox(32, 32, 32, 32), 0.9)
    scene = ScenePair("o", (640, 480), (320, 320), [r], [t])
    assert overlap_match(scene).pairs == [("R1", "T1")]


@pytest.mark.parametrize("thr", [0.0, 1.0, -0.2])
def test_overlap_threshold_range(thr):
    with pytest.raises(ValueError):
        overlap_match(_scene([], []), thr)
