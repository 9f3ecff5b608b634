"""Side-by-side SVG overlay of a scene's matches: one color per matched identity."""

from __future__ import annotations

import os
from xml.sax.saxutils import escape, quoteattr

from .scene_io import MatchResult, ScenePair, write_text_atomic

PALETTE = [
    "#e6194b",  # red
    "#3cb44b",  # green
    "#4363d8",  # blue
    "#f58231",  # orange
    "#911eb4",  # purple
    "#42d4f4",  # cyan
    "#f032e6",  # magenta
    "#bfef45",  # lime
    "#ffe119",  # yellow
    "#469990",  # teal
]
UNMATCHED = "#9e9e9e"
GAP = 20
TITLE_H = 24


def render_svg(scene: ScenePair, matches: MatchResult) -> str:
    rgb_ids = {d.det_id for d in scene.rgb_detections}
    th_ids = {d.det_id for d in scene.thermal_detections}
    colors_r: dict[str, str] = {}
    colors_t: dict[str, str] = {}
    for i, (r, t) in enumerate(matches.pairs):
        if r not in rgb_ids or t not in th_ids:
            raise KeyError(f"dangling pair ({r}, {t}) for scene {scene.scene_id}")
        colors_r[r] = colors_t[t] = PALETTE[i % len(PALETTE)]

    wr, hr = scene.image_size_rgb
    wt, ht = scene.image_size_thermal
    width, height = wr + GAP + wt, max(hr, ht) + TITLE_H
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
        f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f"<title>{escape(scene.scene_id)}</title>",
    ]
    panels = (
        ("RGB", 0, wr, hr, scene.rgb_image, scene.rgb_detections, colors_r, "#f4f4f4"),
        ("Thermal", wr + GAP, wt, ht, scene.thermal_image, scene.thermal_detections, colors_t, "#2b2b2b"),
    )
    for label, ox, pw, ph, image, dets, colors, bg in panels:
        out.append(f'<g transform="translate({ox},{TITLE_H})">')
        out.append(f'<rect x="0" y="0" width="{pw}" height="{ph}" fill="{bg}"/>')
        if image:
            out.append(f'<image x="0" y="0" width="{pw}" height="{ph}" xlink:href={quoteattr(image)}/>')
        for det in dets:
            b = det.bbox
            color = colors.get(det.det_id)
            style = (
                f'stroke="{color}" stroke-width="3"'
                if color
                else f'stroke="{UNMATCHED}" stroke-width="2" stroke-dasharray="6,4"'
            )
            out.append(
                f'<rect class="{"matched" if color else "unmatched"}" x="{b.x:.2f}" y="{b.y:.2f}" '
                f'width="{b.w:.2f}" height="{b.h:.2f}" fill="none" {style}/>'
            )
            out.append(
                f'<text x="{b.x + 2:.2f}" y="{max(b.y - 4, 12):.2f}" font-family="monospace" '
                f'font-size="12" fill="{color or UNMATCHED}">{escape(det.det_id)}</text>'
            )
        out.append("</g>")
        out.append(
            f'<text x="{ox + 4}" y="17" font-family="sans-serif" font-size="14" fill="#000">{label}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_to_file(scene: ScenePair, matches: MatchResult, out_svg: str | os.PathLike) -> None:
    write_text_atomic(out_svg, render_svg(scene, matches))
