import numpy as np
import pytest

from uavlpm.citymap import BuildingPrism, CityMap, Region

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


def point_in_polygon(poly, x, y):
    """Plain crossing-number test, written independently of the package."""
    inside = np.zeros(np.shape(x), dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        cond = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= cond & (x < xc)
    return inside


def sampled_blocked(city, a, b, n=10_000):
    """Brute-force occlusion: sample n interior points of the segment."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    t = (np.arange(n) + 0.5) / n
    pts = a + t[:, None] * (b - a)
    for bld in city.buildings:
        fp = bld.footprint
        inside = point_in_polygon(fp, pts[:, 0], pts[:, 1])
        inside &= (pts[:, 2] > 0) & (pts[:, 2] < bld.height)
        if inside.any():
            return True
    return False


def random_footprint(rng, center, size):
    """Rotated rectangle or L-shape around ``center``."""
    w, h = size
    if rng.random() < 0.5:
        local = np.array([[-w, -h], [w, -h], [w, h], [-w, h]]) / 2
    else:
        local = np.array([[-w, -h], [w, -h], [w, 0], [0, 0], [0, h], [-w, h]]) / 2
    ang = rng.uniform(0, np.pi)
    rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    return local @ rot.T + center


def random_city(rng, n_buildings, extent=100.0, z_top=60.0, cell=10.0, h_range=(5.0, 50.0)):
    region = Region([0.0, 0.0, 0.0], [extent, extent, z_top], [cell, cell, cell])
    buildings = []
    for _ in range(n_buildings):
        size = rng.uniform(0.05, 0.15, 2) * extent
        center = rng.uniform(0.15, 0.85, 2) * extent
        buildings.append(BuildingPrism(random_footprint(rng, center, size), rng.uniform(*h_range)))
    return CityMap(region, buildings)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def box_region():
    return Region([0.0, 0.0, 0.0], [100.0, 100.0, 100.0], [10.0, 10.0, 10.0])


@pytest.fixture
def one_building_city():
    region = Region([-10.0, -50.0, 0.0], [150.0, 50.0, 100.0], [10.0, 10.0, 10.0])
    tower = BuildingPrism([[40, -10], [60, -10], [60, 10], [40, 10]], 50.0)
    return CityMap(region, [tower])
