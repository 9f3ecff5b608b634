import re

import pytest

from xmodal.render import PALETTE, UNMATCHED, render_svg, render_to_file
from xmodal.scene_io import MatchResult, ScenePair

from conftest import det


def _scene():
    return ScenePair(
        "r", (640, 480), (640, 512),
        [det("R1", 10, 10), det("R2", 100, 100), det("R3", 200, 50)],
        [det("T1", 20, 20), det("T2", 110, 90)],
    )


def _rects(svg, cls):
    return re.findall(rf'<rect class="{cls}"[^>]*stroke="([^"]+)"', svg)


def test_two_pairs_two_colors():
    scene = _scene()
    svg = render_svg(scene, MatchResult.from_pairs(scene, [("R1", "T2"), ("R2", "T1")]))
    matched = _rects(svg, "matched")
    assert len(matched) == 4
    assert set(matched) == set(PALETTE[:2])
    assert _rects(svg, "unmatched") == [UNMATCHED]
    # each pair shares one color across panels
    assert svg.count(f'stroke="{PALETTE[0]}"') == 2


def test_no_matches_all_gray():
    scene = _scene()
    svg = render_svg(scene, MatchResult.from_pairs(scene, []))
    assert _rects(svg, "matched") == []
    assert _rects(svg, "unmatched") == [UNMATCHED] * 5
    for label in ("R1", "R2", "R3", "T1", "T2"):
        assert f">{label}</text>" in svg


def test_deterministic_file_output(tmp_path):
    scene = _scene()
    m = MatchResult.from_pairs(scene, [("R3", "T1")])
    render_to_file(scene, m, tmp_path / "a.svg")
    render_to_file(scene, m, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    assert (tmp_path / "a.svg").read_text().startswith("<svg")


def test_dangling_pair_rejected():
    scene = _scene()
    with pytest.raises(KeyError):
        render_svg(scene, MatchResult("r", [("R1", "T9")], "", [], []))
