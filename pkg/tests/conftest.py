import math

import numpy as np
import pytest

from contextnav.scene import load_scene


def box_room(x0=0.0, y0=0.0, x1=4.0, y1=4.0, height=2.6):
    return [
        {"x1": x0, "y1": y0, "x2": x1, "y2": y0, "height": height},
        {"x1": x1, "y1": y0, "x2": x1, "y2": y1, "height": height},
        {"x1": x1, "y1": y1, "x2": x0, "y2": y1, "height": height},
        {"x1": x0, "y1": y1, "x2": x0, "y2": y0, "height": height},
    ]


def square(cx, cy, half):
    return [[cx - half, cy - half], [cx + half, cy - half], [cx + half, cy + half], [cx - half, cy + half]]


def scene_doc(instances=(), walls=None, spawn=(1.0, 1.0, 0.0), bounds=(0.0, 0.0, 4.0, 4.0)):
    return {
        "bounds": dict(zip(("xmin", "ymin", "xmax", "ymax"), bounds)),
        "walls": box_room(*bounds) if walls is None else walls,
        "instances": list(instances),
        "spawn": {"x": spawn[0], "y": spawn[1], "heading_deg": spawn[2]},
    }


def inst(iid, category, cx, cy, half=0.3, base=0.0, top=0.8, **attrs):
    return {"id": iid, "category": category, "attributes": attrs, "footprint": square(cx, cy, half),
            "base_z": base, "top_z": top}


@pytest.fixture
def one_room():
    return load_scene(scene_doc([inst("bed1", "bed", 3.0, 3.0, 0.4, top=0.6, color="white")]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def angle_close(a, b, tol=1e-9):
    return abs(math.remainder(a - b, 2 * math.pi)) <= tol


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
