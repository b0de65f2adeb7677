"""Synthetic micro-city fixtures: per-layer GeoJSON plus per-tile imagery.

Land use is laid out in full-width horizontal bands in tile units, so every
share is known exactly; profiles alternate between tiles that pass and fail
the coverage filter.
"""
import json
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .tiles import TileId, mercator_to_lonlat, tile_to_bbox

# (landuse tags, fraction of tile height) bands from the top, then (parking fraction)
PROFILES = (
    {"bands": [({"landuse": "residential"}, 0.55), ({"landuse": "commercial"}, 0.15),
               ({"landuse": "industrial"}, 0.20)], "parking": 0.0, "houses": "house"},
    {"bands": [({"landuse": "residential"}, 0.45), ({"leisure": "park"}, 0.30),
               ({"fclass": "forest"}, 0.10)], "parking": 0.0, "houses": "apartments"},
    {"bands": [({"landuse": "residential"}, 0.40), ({"landuse": "farmland"}, 0.20)],
     "parking": 0.0, "houses": "terrace"},
    {"bands": [({"landuse": "retail"}, 0.50), ({"landuse": "residential"}, 0.30)],
     "parking": 0.10, "houses": "house"},
    {"bands": [({"landuse": "commercial"}, 0.30)], "parking": 0.0, "houses": None},
)

IMAGERY_COLORS = {
    "residential": (170, 150, 130), "commercial": (120, 120, 150), "retail": (120, 120, 150),
    "industrial": (140, 120, 140), "park": (80, 140, 70), "forest": (40, 90, 40),
    "farmland": (180, 170, 110),
}


def tile_point(tile: TileId, u: float, v: float) -> list:
    """Lon/lat of tile-unit coords (u east, v south), linear in Mercator."""
    b = tile_to_bbox(tile)
    x0, y0, x1, y1 = b.mercator_bounds()
    lon, lat = mercator_to_lonlat(x0 + u * (x1 - x0), y1 - v * (y1 - y0))
    return [lon, lat]


def _rect(tile, u0, v0, u1, v1) -> dict:
    ring = [tile_point(tile, u, v) for u, v in ((u0, v0), (u1, v0), (u1, v1), (u0, v1), (u0, v0))]
    return {"type": "Polygon", "coordinates": [ring]}


def _line(tile, pts) -> dict:
    return {"type": "LineString", "coordinates": [tile_point(tile, u, v) for u, v in pts]}


def _feature(geom, props) -> dict:
    return {"type": "Feature", "geometry": geom, "properties": props}


def _fc(features) -> dict:
    return {"type": "FeatureCollection", "features": features}


def profile_for(tile: TileId, origin: TileId) -> dict:
    i = (tile.x - origin.x) + 3 * (tile.y - origin.y)
    return PROFILES[i % len(PROFILES)]


def make_micro_city(root, city: str, origin: TileId, nx: int = 3, ny: int = 2, imagery_px: int = 64,
                    seed: int = 0) -> list:
    """Write ``root/city/{layer}.geojson`` and ``root/city/imagery/{z}_{x}_{y}.png``; returns the tiles."""
    out = Path(root) / city
    (out / "imagery").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    tiles = [TileId(origin.zoom, origin.x + i, origin.y + j) for j in range(ny) for i in range(nx)]
    layers = {k: [] for k in ("landuse", "roads", "railways", "waterways", "buildings", "places", "traffic")}

    for t in tiles:
        prof = profile_for(t, origin)
        v = 0.0
        bands = []
        for tags, frac in prof["bands"]:
            layers["landuse"].append(_feature(_rect(t, 0.0, v, 1.0, v + frac), dict(tags)))
            bands.append((tags, v, v + frac))
            v += frac
        if prof["parking"]:
            layers["traffic"].append(_feature(_rect(t, 0.0, v, 1.0, v + prof["parking"]), {"fclass": "parking"}))
        for tags, v0, v1 in bands:
            if "residential" not in tags.values() or prof["houses"] is None:
                continue
            # a grid of footprints, one third of the band's area
            for i in range(6):
                for j in range(2):
                    bu0 = i / 6 + 0.02
                    bv0 = v0 + (v1 - v0) * (j / 2 + 0.1)
                    layers["buildings"].append(_feature(
                        _rect(t, bu0, bv0, bu0 + 1 / 6 * 0.58, bv0 + (v1 - v0) * 0.29),
                        {"building": prof["houses"]}))
        layers["roads"].append(_feature(_line(t, [(0.0, 0.5), (1.0, 0.5)]), {"fclass": "residential"}))

    z = origin.zoom
    west = TileId(z, origin.x, origin.y)
    east = TileId(z, origin.x + nx - 1, origin.y + ny - 1)
    layers["roads"].append(_feature(
        {"type": "LineString", "coordinates": [tile_point(west, 0.0, 0.25), tile_point(east, 1.0, -ny + 1.25)]},
        {"highway": "primary"}))
    layers["roads"].append(_feature(
        {"type": "LineString", "coordinates": [tile_point(west, 0.5, 0.0), tile_point(west, 0.5, ny)]},
        {"fclass": "secondary"}))
    layers["railways"].append(_feature(
        {"type": "LineString", "coordinates": [tile_point(west, 0.0, 0.0), tile_point(east, 1.0, 1.0)]},
        {"fclass": "rail"}))
    layers["waterways"].append(_feature(
        {"type": "LineString", "coordinates": [tile_point(west, 0.0, 0.9), tile_point(west, 0.7, 1.2),
                                               tile_point(east, 1.0, 0.8)]},
        {"fclass": "river"}))
    layers["places"].append(_feature(
        {"type": "Polygon", "coordinates": [[tile_point(west, 0, 0), tile_point(east, 1, -ny + 1),
                                              tile_point(east, 1, 1), tile_point(west, 0, ny),
                                              tile_point(west, 0, 0)]]},
        {"fclass": "city", "name": city}))

    for name, feats in layers.items():
        (out / f"{name}.geojson").write_text(json.dumps(_fc(feats)))

    for t in tiles:
        img = Image.new("RGB", (imagery_px, imagery_px), (60, 60, 60))
        d = ImageDraw.Draw(img)
        v = 0.0
        for tags, frac in profile_for(t, origin)["bands"]:
            color = IMAGERY_COLORS[next(iter(tags.values()))]
            d.rectangle((0, round(v * imagery_px), imagery_px - 1, round((v + frac) * imagery_px) - 1), fill=color)
            v += frac
        d.line((0, imagery_px // 2, imagery_px, imagery_px // 2), fill=(200, 200, 200), width=2)
        arr = np.asarray(img, dtype=np.int16) + rng.integers(-12, 13, (imagery_px, imagery_px, 3))
        Image.fromarray(np.clip(arr, 0, 255).astype(np.uint8)).save(out / "imagery" / f"{t.key}.png")
    return tiles
