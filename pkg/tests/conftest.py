import math
import sys
from datetime import datetime
from pathlib import Path
from zoneinfo import ZoneInfo

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from triplink.core import BERLIN_BBOX, Trip

M_PER_DEG = 111_320.0
ORIGIN = (52.45, 13.35)  # well inside the Berlin box
BERLIN = ZoneInfo("Europe/Berlin")


def offset(north_m: float, east_m: float, origin=ORIGIN):
    lat = origin[0] + north_m / M_PER_DEG
    lon = origin[1] + east_m / (M_PER_DEG * math.cos(math.radians(origin[0])))
    return lat, lon


def local_ts(hour: float, day: int = 1, month: int = 11, year: int = 2022) -> float:
    h = int(hour)
    m = int(round((hour - h) * 60))
    return datetime(year, month, day, h, m, tzinfo=BERLIN).timestamp()


def make_trip(tid, coords_m, t0=0.0, dt=60.0, origin=ORIGIN) -> Trip:
    """Trip through local (north, east) offsets in meters, one fix every ``dt`` seconds."""
    pts = [offset(n, e, origin) for n, e in coords_m]
    return Trip(tid, [p[0] for p in pts], [p[1] for p in pts], [t0 + k * dt for k in range(len(pts))])


def segment(tid, a_m, b_m, t_start, t_end, n=2, origin=ORIGIN) -> Trip:
    """Straight trip from ``a_m`` to ``b_m`` between two timestamps."""
    fr = np.linspace(0, 1, n)
    coords = [(a_m[0] + (b_m[0] - a_m[0]) * f, a_m[1] + (b_m[1] - a_m[1]) * f) for f in fr]
    pts = [offset(nn, ee, origin) for nn, ee in coords]
    return Trip(tid, [p[0] for p in pts], [p[1] for p in pts], list(np.linspace(t_start, t_end, n)))


@pytest.fixture
def bbox():
    return BERLIN_BBOX


ACCEPTANCE_LINES = []


def record_acceptance(number: int, title: str, ok, detail: str = "") -> None:
    """Remember one acceptance verdict and echo it; ``ok`` may be None for a skip."""
    verdict = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    line = f"[{verdict}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
