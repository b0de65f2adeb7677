import shapely
from shapely.geometry import box
import pytest

from urbandiff.osm import Feature, FeatureCollection
from urbandiff.synthetic import make_micro_city
from urbandiff.tiles import TileId, tile_to_bbox

TILE = TileId(16, 16815, 24357)
CHICAGO = (-87.6298, 41.8781)


def unit_box(tile, u0, v0, u1, v1):
    """Mercator rectangle in tile units (u east, v south, 0..1 spans the tile)."""
    x0, y0, x1, y1 = tile_to_bbox(tile).mercator_bounds()
    w, h = x1 - x0, y1 - y0
    return box(x0 + u0 * w, y1 - v1 * h, x0 + u1 * w, y1 - v0 * h)


def unit_line(tile, pts):
    x0, y0, x1, y1 = tile_to_bbox(tile).mercator_bounds()
    return shapely.LineString([(x0 + u * (x1 - x0), y1 - v * (y1 - y0)) for u, v in pts])


def fc(layer, *items):
    """FeatureCollection from (geometry, tags) pairs."""
    return FeatureCollection(layer, [Feature(g, dict(t)) for g, t in items])


@pytest.fixture
def micro_city(tmp_path):
    root = tmp_path / "data"
    tiles = make_micro_city(root, "testville", TILE)
    return root, tiles


def write_config(path, data_root, out_root, seed=7, multiplier=3, extra=""):
    path.write_text(
        f'seed = {seed}\n[paths]\ndata_root = "{data_root}"\noutput_root = "{out_root}"\n'
        f"[cities.testville]\nmultiplier = {multiplier}\n"
        "[dataset]\nraster_size = 128\nval_fraction = 0.3\n"
        "[model]\nimage_size = 16\nbase_steps = 20\nsteps = 20\n" + extra
    )
    return path


# acceptance criteria record here; the lines are repeated after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
