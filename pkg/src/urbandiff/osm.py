"""Per-layer OSM vector data: GeoJSON loading, tile clipping and tile semantics.

Geometries are reprojected to Web-Mercator metres on load; every area below is
in square metres of that projection (distortion is uniform inside one tile).
"""
import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import shapely
from scipy import ndimage
from shapely.geometry import box, shape
from shapely.ops import unary_union

from .raster import polygon_mask
from .rng import PCG32
from .tiles import EARTH_RADIUS, GeoBBox, TileId, tile_to_bbox

log = logging.getLogger(__name__)

LAYERS = ("landuse", "roads", "railways", "waterways", "buildings", "places", "traffic")
CATEGORIES = (
    "residential", "commercial", "industrial", "recreational",
    "farmland", "forest", "water", "parking",
)
# specific uses claim overlapping ground before generic zoning
PRECEDENCE = (
    "parking", "water", "forest", "recreational", "farmland",
    "industrial", "commercial", "residential",
)
SETTLEMENT_TYPES = ("city", "town", "village")
RESIDENTIAL_TYPES = ("apartment complexes", "single-family homes", "townhouses")
DENSITY_THRESHOLDS = (("high", 0.30), ("medium", 0.15), ("low", 0.03))
SECONDARY_SETTLEMENT_MIN = 0.35
RESIDENTIAL_TYPE_MIN_SHARE = 0.10
DESIGNATION_RANGE = (0.10, 0.40)
CONCENTRATION_MIN = 0.60
SLIVER_FRACTION = 1e-6

_POLY = ("Polygon", "MultiPolygon")
_LINE = ("LineString", "MultiLineString")
GEOMETRY_KINDS = {
    "landuse": _POLY,
    "roads": _LINE,
    "railways": _LINE,
    "waterways": _LINE + _POLY,
    "buildings": _POLY,
    "places": _POLY,
    "traffic": _POLY,
}
# buildings may be untagged and still count towards footprint coverage
REQUIRES_TAGS = {name: name != "buildings" for name in LAYERS}

DESIGNATION_COLORS = {
    "residential": "red",
    "commercial": "blue",
    "industrial": "purple",
    "recreational": "green",
    "parking": "olive",
    "farmland": "brown",
    "forest": "dark green",
}


class GeoJSONError(ValueError):
    pass


@lru_cache(maxsize=None)
def _default_tag_map() -> dict:
    text = resources.files("urbandiff").joinpath("data/tag_map.json").read_text()
    return json.loads(text)


def load_tag_map(path=None) -> dict:
    if path is None:
        return _default_tag_map()
    with open(path) as fh:
        return json.load(fh)


def tag_lookup(tags: dict, spec: dict, table: str = "values") -> Optional[str]:
    """Map a feature's tags to a canonical class via the first recognised key."""
    values = spec[table]
    for key in spec["keys"]:
        v = tags.get(key)
        if v is not None and str(v) in values:
            return values[str(v)]
    return None


def has_any_key(tags: dict, spec: dict) -> bool:
    return any(tags.get(k) not in (None, "") for k in spec["keys"])


@dataclass
class Feature:
    geometry: object  # shapely geometry, Mercator metres
    tags: dict


@dataclass
class LoadReport:
    loaded: int = 0
    dropped_kind: int = 0
    dropped_tags: int = 0
    dropped_unclosed: int = 0
    dropped_invalid: int = 0
    repaired: int = 0

    @property
    def dropped(self) -> int:
        return self.dropped_kind + self.dropped_tags + self.dropped_unclosed + self.dropped_invalid


@dataclass
class FeatureCollection:
    layer: str
    features: list
    report: LoadReport = field(default_factory=LoadReport)

    def __len__(self):
        return len(self.features)

    def union(self):
        return unary_union([f.geometry for f in self.features]) if self.features else shapely.Polygon()


def _to_mercator(coords: np.ndarray) -> np.ndarray:
    lon = np.radians(coords[:, 0])
    lat = np.radians(np.clip(coords[:, 1], -85.05112878, 85.05112878))
    return np.column_stack([lon * EARTH_RADIUS, np.arcsinh(np.tan(lat)) * EARTH_RADIUS])


def _rings(geom_json) -> list:
    t = geom_json.get("type")
    c = geom_json.get("coordinates") or []
    if t == "Polygon":
        return list(c)
    if t == "MultiPolygon":
        return [ring for poly in c for ring in poly]
    return []


def _ring_closed(ring) -> bool:
    return len(ring) >= 4 and list(ring[0][:2]) == list(ring[-1][:2])


def load_layer(path, layer: str, close_rings: bool = False) -> FeatureCollection:
    """Read one layer's GeoJSON FeatureCollection.

    Features with the wrong geometry kind for the layer, missing required tags,
    or an unclosed ring are dropped and counted in ``report``. With
    ``close_rings`` an unclosed ring is closed instead of dropped.
    """
    if layer not in LAYERS:
        raise ValueError(f"unknown layer {layer!r}; expected one of {LAYERS}")
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        line = text.splitlines()[e.lineno - 1] if e.lineno - 1 < len(text.splitlines()) else ""
        raise GeoJSONError(f"{path}:{e.lineno}:{e.colno}: {e.msg}: {line.strip()[:80]!r}") from None
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise GeoJSONError(f"{path}: not a GeoJSON FeatureCollection")

    spec = load_tag_map().get(layer)
    kinds = GEOMETRY_KINDS[layer]
    report = LoadReport()
    features = []
    for raw in doc.get("features") or []:
        gj = raw.get("geometry") or {}
        tags = {k: str(v) for k, v in (raw.get("properties") or {}).items() if v is not None}
        if gj.get("type") not in kinds:
            report.dropped_kind += 1
            continue
        if REQUIRES_TAGS[layer] and spec is not None and not has_any_key(tags, spec):
            report.dropped_tags += 1
            continue
        rings = _rings(gj)
        if any(not _ring_closed(r) for r in rings):
            if not close_rings or any(len(r) < 3 for r in rings):
                report.dropped_unclosed += 1
                continue
            report.repaired += 1
        try:
            geom = shape(gj)
        except Exception:
            report.dropped_invalid += 1
            continue
        geom = shapely.transform(geom, _to_mercator)
        if gj["type"] in _POLY and not geom.is_valid:
            geom = _polygonal(shapely.make_valid(geom))
            report.repaired += 1
        if geom.is_empty:
            report.dropped_invalid += 1
            continue
        features.append(Feature(geom, tags))
    report.loaded = len(features)
    if report.dropped:
        log.warning("%s: dropped %d feature(s) from layer %s: %s", path, report.dropped, layer, report)
    if not features:
        log.warning("%s: layer %s is empty", path, layer)
    return FeatureCollection(layer, features, report)


def load_city_layers(city_dir) -> dict:
    city_dir = Path(city_dir)
    layers = {}
    for name in LAYERS:
        p = city_dir / f"{name}.geojson"
        if not p.exists():
            raise FileNotFoundError(f"missing layer file: {p}")
        layers[name] = load_layer(p, name)
    return layers


def _polygonal(geom):
    parts = [g for g in _flatten(geom) if g.geom_type == "Polygon" and not g.is_empty]
    if not parts:
        return shapely.Polygon()
    return parts[0] if len(parts) == 1 else shapely.MultiPolygon(parts)


def _lineal(geom):
    parts = [g for g in _flatten(geom) if g.geom_type == "LineString" and not g.is_empty]
    if not parts:
        return shapely.LineString()
    return parts[0] if len(parts) == 1 else shapely.MultiLineString(parts)


def _flatten(geom):
    if hasattr(geom, "geoms"):
        for g in geom.geoms:
            yield from _flatten(g)
    else:
        yield geom


def bbox_polygon(bbox: GeoBBox):
    return box(*bbox.mercator_bounds())


def bbox_area(bbox: GeoBBox) -> float:
    return bbox_polygon(bbox).area


def clip_to_bbox(fc: FeatureCollection, bbox: GeoBBox) -> FeatureCollection:
    window = bbox_polygon(bbox)
    min_area = SLIVER_FRACTION * window.area
    out = []
    for f in fc.features:
        g = f.geometry
        if window.contains(g):
            out.append(f)
            continue
        clipped = g.intersection(window)
        if g.geom_type in _POLY:
            clipped = _polygonal(clipped)
            if clipped.is_empty or clipped.area < min_area:
                continue
        else:
            clipped = _lineal(clipped)
            if clipped.is_empty or clipped.length == 0:
                continue
        out.append(Feature(clipped, f.tags))
    return FeatureCollection(fc.layer, out, fc.report)


@dataclass
class CompositionTable:
    """Per-category share of tile area.

    ``geometries`` holds the disjoint Mercator geometry behind each share;
    ``unknown`` counts features whose tag values map to no category.
    """

    proportions: dict
    geometries: dict = field(default_factory=dict, repr=False)
    tile_area: float = 0.0
    unknown: int = 0

    @property
    def coverage(self) -> float:
        return min(1.0, sum(self.proportions.values()))

    def covered_geometry(self):
        geoms = [g for g in self.geometries.values() if not g.is_empty]
        return unary_union(geoms) if geoms else shapely.Polygon()


def _disjoint_by_precedence(raw: dict) -> dict:
    claimed = shapely.Polygon()
    out = {}
    for cat in PRECEDENCE:
        g = raw.get(cat)
        if g is None or g.is_empty:
            out[cat] = shapely.Polygon()
            continue
        g = _polygonal(g.difference(claimed)) if not claimed.is_empty else g
        out[cat] = g
        claimed = unary_union([claimed, g])
    return out


def _table(geoms: dict, window, unknown: int) -> CompositionTable:
    area = window.area
    props = {c: min(1.0, max(0.0, geoms[c].area / area)) for c in CATEGORIES}
    return CompositionTable(props, {c: geoms[c] for c in CATEGORIES}, area, unknown)


def landuse_composition(landuse: FeatureCollection, traffic: FeatureCollection, bbox: GeoBBox,
                        tag_map=None) -> CompositionTable:
    """Unioned area share of each canonical category.

    Same-category polygons are unioned before measuring. Where categories
    overlap the area goes to the earlier entry of PRECEDENCE, so shares sum
    to at most one. Parking comes only from the traffic layer.
    """
    tag_map = tag_map or load_tag_map()
    window = bbox_polygon(bbox)
    buckets = {c: [] for c in CATEGORIES}
    unknown = 0
    for f in landuse.features:
        cat = tag_lookup(f.tags, tag_map["landuse"])
        if cat is None or cat == "parking":
            unknown += cat is None
            continue
        buckets[cat].append(f.geometry)
    for f in traffic.features:
        if tag_lookup(f.tags, tag_map["traffic"]) == "parking":
            buckets["parking"].append(f.geometry)
    raw = {c: _polygonal(unary_union(gs).intersection(window)) for c, gs in buckets.items() if gs}
    return _table(_disjoint_by_precedence(raw), window, unknown)


def landuse_fallback_from_buildings(composition: CompositionTable, buildings: FeatureCollection,
                                    bbox: GeoBBox, tag_map=None) -> CompositionTable:
    """Credit classifiable building footprints on land the landuse layer leaves untagged."""
    tag_map = tag_map or load_tag_map()
    window = bbox_polygon(bbox)
    untagged = window.difference(composition.covered_geometry())
    if untagged.area < SLIVER_FRACTION * window.area:
        return composition
    buckets = {}
    for f in buildings.features:
        cat = tag_lookup(f.tags, tag_map["buildings"], "category")
        if cat is not None:
            buckets.setdefault(cat, []).append(f.geometry)
    if not buckets:
        return composition
    extra = {c: _polygonal(unary_union(gs).intersection(untagged)) for c, gs in buckets.items()}
    extra = _disjoint_by_precedence(extra)
    merged = {}
    for c in CATEGORIES:
        base = composition.geometries.get(c, shapely.Polygon())
        add = extra.get(c, shapely.Polygon())
        merged[c] = base if add.is_empty else _polygonal(unary_union([base, add]))
    return _table(merged, window, composition.unknown)


def density_bin(coverage: float) -> str:
    for name, lo in DENSITY_THRESHOLDS:
        if coverage >= lo:
            return name
    return "none"


@dataclass
class BuildingMetrics:
    coverage: float
    density_bin: str
    residential_types: list


def building_metrics(buildings: FeatureCollection, bbox: GeoBBox, tag_map=None) -> BuildingMetrics:
    tag_map = tag_map or load_tag_map()
    window = bbox_polygon(bbox)
    fp = buildings.union().intersection(window) if buildings.features else shapely.Polygon()
    coverage = min(1.0, fp.area / window.area)
    typed = {}
    for f in buildings.features:
        kind = tag_lookup(f.tags, tag_map["buildings"], "residential_type")
        if kind is not None:
            typed.setdefault(kind, []).append(f.geometry)
    areas = {k: unary_union(v).intersection(window).area for k, v in typed.items()}
    total = sum(areas.values())
    ranked = sorted((k for k, a in areas.items() if a > 0), key=lambda k: (-areas[k], k))
    ranked = [k for i, k in enumerate(ranked) if i == 0 or areas[k] >= RESIDENTIAL_TYPE_MIN_SHARE * total]
    return BuildingMetrics(coverage, density_bin(coverage), ranked)


@dataclass
class Settlement:
    primary: str
    secondary: list
    fallback: bool = False


def settlement_type(places: FeatureCollection, bbox: GeoBBox, default: str = "city",
                    tag_map=None) -> Settlement:
    tag_map = tag_map or load_tag_map()
    window = bbox_polygon(bbox)
    groups = {}
    for f in places.features:
        kind = tag_lookup(f.tags, tag_map["places"])
        if kind in SETTLEMENT_TYPES:
            groups.setdefault(kind, []).append(f.geometry)
    shares = {k: unary_union(v).intersection(window).area / window.area for k, v in groups.items()}
    shares = {k: s for k, s in shares.items() if s > 0}
    if not shares:
        return Settlement(default, [], True)
    order = sorted(shares, key=lambda k: (-shares[k], k))
    secondary = [k for k in order[1:] if shares[k] > SECONDARY_SETTLEMENT_MIN]
    return Settlement(order[0], secondary)


@dataclass
class DesignationRegion:
    category: str
    share: float
    centroid_h: str
    centroid_v: str
    geometry: object = field(repr=False, default=None)
    color: str = ""

    @property
    def position(self) -> str:
        if self.centroid_h == "central" and self.centroid_v == "mid":
            return "center"
        return f"{self.centroid_v} {self.centroid_h}"

    def to_dict(self) -> dict:
        return {"category": self.category, "share": self.share, "centroid_h": self.centroid_h,
                "centroid_v": self.centroid_v, "color": self.color}


def _thirds(v: float, names) -> str:
    return names[0] if v < 1 / 3 else names[1] if v < 2 / 3 else names[2]


def is_concentrated(geom, bounds, size: int = 256) -> bool:
    """Largest 4-connected blob holds at least CONCENTRATION_MIN of the category's pixels."""
    mask = polygon_mask(geom, bounds, size)
    total = int(mask.sum())
    if total == 0:
        return False
    labels, n = ndimage.label(mask)  # default structure is 4-connectivity
    largest = np.bincount(labels.ravel())[1:].max() if n else 0
    return largest >= CONCENTRATION_MIN * total


def designation_candidate(composition: CompositionTable, bbox: GeoBBox, seed: int,
                          raster_size: int = 256) -> Optional[DesignationRegion]:
    lo, hi = DESIGNATION_RANGE
    bounds = bbox.mercator_bounds()
    eligible = []
    for cat in sorted(DESIGNATION_COLORS):
        share = composition.proportions.get(cat, 0.0)
        if lo <= share <= hi and is_concentrated(composition.geometries[cat], bounds, raster_size):
            eligible.append(cat)
    if not eligible:
        return None
    cat = PCG32(seed).choice(eligible)
    geom = composition.geometries[cat]
    c = geom.centroid
    x0, y0, x1, y1 = bounds
    h = _thirds((c.x - x0) / (x1 - x0), ("left", "central", "right"))
    v = _thirds((c.y - y0) / (y1 - y0), ("lower", "mid", "upper"))
    return DesignationRegion(cat, composition.proportions[cat], h, v, geom, DESIGNATION_COLORS[cat])


@dataclass
class TileFeatures:
    tile: TileId
    city: str
    composition: dict
    coverage: float
    building_coverage: float
    density_bin: str
    residential_types: list
    settlement_primary: str
    settlement_secondary: list
    settlement_fallback: bool = False
    designation: Optional[DesignationRegion] = None
    unknown_tags: int = 0

    def to_dict(self) -> dict:
        return {
            "tile": self.tile.to_dict(),
            "city": self.city,
            "composition": {c: self.composition.get(c, 0.0) for c in CATEGORIES},
            "coverage": self.coverage,
            "building_coverage": self.building_coverage,
            "density_bin": self.density_bin,
            "residential_types": list(self.residential_types),
            "settlement_primary": self.settlement_primary,
            "settlement_secondary": list(self.settlement_secondary),
            "settlement_fallback": self.settlement_fallback,
            "designation": self.designation.to_dict() if self.designation else None,
            "unknown_tags": self.unknown_tags,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TileFeatures":
        des = d.get("designation")
        return cls(
            tile=TileId.from_dict(d["tile"]),
            city=d["city"],
            composition=dict(d["composition"]),
            coverage=d["coverage"],
            building_coverage=d["building_coverage"],
            density_bin=d["density_bin"],
            residential_types=list(d["residential_types"]),
            settlement_primary=d["settlement_primary"],
            settlement_secondary=list(d["settlement_secondary"]),
            settlement_fallback=d.get("settlement_fallback", False),
            designation=DesignationRegion(**des) if des else None,
            unknown_tags=d.get("unknown_tags", 0),
        )

    @classmethod
    def empty(cls, tile: TileId, city: str) -> "TileFeatures":
        return cls(tile, city, {c: 0.0 for c in CATEGORIES}, 0.0, 0.0, "none", [], "city", [], True)


def _empty(layer):
    return FeatureCollection(layer, [])


def assemble_tile_features(layers: dict, tile: TileId, city: str, seed: int = 0,
                           bbox: Optional[GeoBBox] = None, tag_map=None) -> TileFeatures:
    """All tile semantics from (unclipped) layers; ``bbox`` overrides the tile window for shifted copies."""
    tag_map = tag_map or load_tag_map()
    bbox = bbox or tile_to_bbox(tile)
    clipped = {name: clip_to_bbox(layers.get(name) or _empty(name), bbox) for name in LAYERS}
    comp = landuse_composition(clipped["landuse"], clipped["traffic"], bbox, tag_map)
    comp = landuse_fallback_from_buildings(comp, clipped["buildings"], bbox, tag_map)
    bm = building_metrics(clipped["buildings"], bbox, tag_map)
    st = settlement_type(clipped["places"], bbox, tag_map=tag_map)
    des = designation_candidate(comp, bbox, seed)
    return TileFeatures(
        tile=tile,
        city=city,
        composition=dict(comp.proportions),
        coverage=comp.coverage,
        building_coverage=bm.coverage,
        density_bin=bm.density_bin,
        residential_types=bm.residential_types,
        settlement_primary=st.primary,
        settlement_secondary=st.secondary,
        settlement_fallback=st.fallback,
        designation=des,
        unknown_tags=comp.unknown,
    )
