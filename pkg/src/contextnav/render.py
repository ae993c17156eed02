"""Static map renders: layer graymaps, an SVG overlay and a JSON sidecar."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .mapping import GridStack, export_maps

SCALE = 4  # SVG pixels per grid cell
ROOM_TINTS = ("#f4d9a6", "#bfe3c0", "#bcd4f0", "#f0c4d8", "#e0d4f4", "#d4ecec", "#f4ecb8", "#dcdcdc")
VERDICT_COLORS = {"target": "#1a9850", "distractor": "#d73027", "off-target": "#fc8d59", "time-out": "#4575b4"}
HEAT_LEVELS = 8


def _runs(mask: np.ndarray):
    """Horizontal runs of True per row: (row, start, length)."""
    for r in range(mask.shape[0]):
        row = mask[r].astype(np.int8)
        d = np.diff(np.concatenate([[0], row, [0]]))
        starts = np.flatnonzero(d == 1)
        ends = np.flatnonzero(d == -1)
        for a, b in zip(starts, ends):
            yield r, int(a), int(b - a)


def _heat(level: int) -> str:
    t = level / (HEAT_LEVELS - 1)
    r = int(round(255 * min(1.0, 2 * t)))
    g = int(round(255 * (1 - abs(2 * t - 1)) * 0.8))
    b = int(round(255 * max(0.0, 1 - 2 * t)))
    return f"#{r:02x}{g:02x}{b:02x}"


def render_svg(grids: GridStack, trajectory: Sequence[Sequence[float]], verdict: str | None) -> str:
    nx, ny = grids.shape
    xmin, ymin, xmax, ymax = grids.extent
    r = grids.resolution
    w, h = nx * SCALE, ny * SCALE

    def px(x: float, y: float) -> tuple[str, str]:
        return f"{(x - xmin) / r * SCALE:.2f}", f"{(ymax - y) / r * SCALE:.2f}"

    # image rows run top to bottom, i.e. decreasing y
    def img(layer: np.ndarray) -> np.ndarray:
        return np.flipud(layer.T)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
           f'<rect width="{w}" height="{h}" fill="#808080"/>']
    known = img(grids.seen & ~grids.hit)
    out.append('<g id="free" fill="#ffffff">')
    out += [f'<rect x="{c * SCALE}" y="{row * SCALE}" width="{n * SCALE}" height="{SCALE}"/>' for row, c, n in _runs(known)]
    out.append("</g>")
    rooms = img(grids.room)
    out.append('<g id="rooms" fill-opacity="0.6">')
    for lab in sorted(int(v) for v in np.unique(rooms) if v > 0):
        tint = ROOM_TINTS[(lab - 1) % len(ROOM_TINTS)]
        out += [f'<rect x="{c * SCALE}" y="{row * SCALE}" width="{n * SCALE}" height="{SCALE}" fill="{tint}"/>'
                for row, c, n in _runs(rooms == lab)]
    out.append("</g>")
    conf = img(grids.confidence) > 0
    levels = np.clip(np.floor(img(grids.value) * HEAT_LEVELS), 0, HEAT_LEVELS - 1).astype(int)
    out.append('<g id="value" fill-opacity="0.45">')
    for lv in range(HEAT_LEVELS):
        out += [f'<rect x="{c * SCALE}" y="{row * SCALE}" width="{n * SCALE}" height="{SCALE}" fill="{_heat(lv)}"/>'
                for row, c, n in _runs(conf & (levels == lv))]
    out.append("</g>")
    out.append('<g id="obstacles" fill="#505050">')
    out += [f'<rect x="{c * SCALE}" y="{row * SCALE}" width="{n * SCALE}" height="{SCALE}"/>'
            for row, c, n in _runs(img(grids.hit & ~grids.wall))]
    out.append("</g>")
    out.append('<g id="walls" fill="#000000">')
    out += [f'<rect x="{c * SCALE}" y="{row * SCALE}" width="{n * SCALE}" height="{SCALE}"/>'
            for row, c, n in _runs(img(grids.wall))]
    out.append("</g>")
    pts = [px(p[0], p[1]) for p in trajectory]
    if len(pts) > 1:
        coords = " ".join(f"{a},{b}" for a, b in pts)
        out.append(f'<polyline id="trajectory" points="{coords}" fill="none" stroke="#1f4e9c" stroke-width="2"/>')
    if pts:
        x, y = pts[-1]
        color = VERDICT_COLORS.get(verdict or "", "#000000")
        label = verdict or "end"
        out.append(f'<g id="stop"><circle cx="{x}" cy="{y}" r="{2 * SCALE}" fill="{color}" stroke="#000000"/>'
                   f'<text x="{x}" y="{y}" dx="{3 * SCALE}" font-family="sans-serif" font-size="{4 * SCALE}">{label}</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export_map_render(grids: GridStack, trajectory: Sequence[Sequence[float]], out_path: str | Path,
                      verdict: str | None = None, stem: str = "episode") -> list[Path]:
    """Write ``<stem>_{occupancy,wall,room,value}.pgm``, ``<stem>.svg`` and ``<stem>.json``."""
    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    svg = out / f"{stem}.svg"
    svg.write_text(render_svg(grids, trajectory, verdict))
    traj = [[round(float(v), 4) for v in p[:2]] for p in trajectory]
    paths = export_maps(grids, out, prefix=stem, extra={
        "svg": svg.name,
        "verdict": verdict,
        "stop": traj[-1] if traj else None,
        "trajectory": traj,
    })
    return paths[:-1] + [svg, paths[-1]]
