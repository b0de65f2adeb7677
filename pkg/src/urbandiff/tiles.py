"""Web-Mercator slippy-tile arithmetic."""
import math
from dataclasses import dataclass

MAX_LAT = 85.05112878  # atan(sinh(pi)) in degrees
MAX_ZOOM = 22
EARTH_CIRCUMFERENCE = 40075016.686
EARTH_RADIUS = 6378137.0
MERC_HALF = math.pi * EARTH_RADIUS


@dataclass(frozen=True, order=True)
class TileId:
    zoom: int
    x: int
    y: int

    def __post_init__(self):
        if not 0 <= self.zoom <= MAX_ZOOM:
            raise ValueError(f"zoom {self.zoom} outside [0, {MAX_ZOOM}]")
        n = 1 << self.zoom
        if not (0 <= self.x < n and 0 <= self.y < n):
            raise ValueError(f"tile ({self.x}, {self.y}) outside 0..{n - 1} at zoom {self.zoom}")

    @property
    def key(self) -> str:
        return f"{self.zoom}_{self.x}_{self.y}"

    def to_dict(self) -> dict:
        return {"zoom": self.zoom, "x": self.x, "y": self.y}

    @classmethod
    def from_dict(cls, d) -> "TileId":
        return cls(int(d["zoom"]), int(d["x"]), int(d["y"]))


@dataclass(frozen=True)
class GeoBBox:
    west: float
    south: float
    east: float
    north: float

    def __post_init__(self):
        if not (self.west < self.east and self.south < self.north):
            raise ValueError(f"degenerate bbox {self}")
        if max(abs(self.south), abs(self.north)) > MAX_LAT + 1e-9:
            raise ValueError(f"bbox {self} exceeds the Mercator latitude limit")

    def contains(self, lon: float, lat: float) -> bool:
        return self.west <= lon <= self.east and self.south <= lat <= self.north

    @property
    def center(self) -> tuple:
        # Mercator center, so that it maps back to the same tile
        mx0, my0 = lonlat_to_mercator(self.west, self.south)
        mx1, my1 = lonlat_to_mercator(self.east, self.north)
        return mercator_to_lonlat((mx0 + mx1) / 2, (my0 + my1) / 2)

    def mercator_bounds(self) -> tuple:
        mx0, my0 = lonlat_to_mercator(self.west, self.south)
        mx1, my1 = lonlat_to_mercator(self.east, self.north)
        return mx0, my0, mx1, my1


def lonlat_to_mercator(lon: float, lat: float) -> tuple:
    """EPSG:3857 metres."""
    x = math.radians(lon) * EARTH_RADIUS
    y = math.asinh(math.tan(math.radians(lat))) * EARTH_RADIUS
    return x, y


def mercator_to_lonlat(x: float, y: float) -> tuple:
    lon = math.degrees(x / EARTH_RADIUS)
    lat = math.degrees(math.atan(math.sinh(y / EARTH_RADIUS)))
    return lon, lat


def _check_latlon(lon: float, lat: float):
    if not math.isfinite(lat) or abs(lat) > MAX_LAT:
        raise ValueError(f"latitude {lat} outside +/-{MAX_LAT}")
    if not math.isfinite(lon) or not -180.0 <= lon <= 180.0:
        raise ValueError(f"longitude {lon} outside [-180, 180]")


def lonlat_to_tile(lon: float, lat: float, zoom: int) -> TileId:
    _check_latlon(lon, lat)
    if lon == 180.0:
        lon = -180.0
    n = 1 << zoom
    x = math.floor((lon + 180.0) / 360.0 * n)
    y = math.floor((1.0 - math.asinh(math.tan(math.radians(lat))) / math.pi) / 2.0 * n)
    # the clamp latitude itself lands on row n
    x, y = min(max(x, 0), n - 1), min(max(y, 0), n - 1)
    # rounding can put a point within an ulp of an edge into the neighbour
    if x > 0 and lon < _tile_edge_lon(x, zoom):
        x -= 1
    elif x < n - 1 and lon > _tile_edge_lon(x + 1, zoom):
        x += 1
    if y > 0 and lat > _tile_edge_lat(y, zoom):
        y -= 1
    elif y < n - 1 and lat < _tile_edge_lat(y + 1, zoom):
        y += 1
    return TileId(zoom, x, y)


def _tile_edge_lon(x: float, zoom: int) -> float:
    return x / (1 << zoom) * 360.0 - 180.0


def _tile_edge_lat(y: float, zoom: int) -> float:
    return math.degrees(math.atan(math.sinh(math.pi * (1.0 - 2.0 * y / (1 << zoom)))))


def tile_to_bbox(t: TileId) -> GeoBBox:
    return GeoBBox(
        west=_tile_edge_lon(t.x, t.zoom),
        south=_tile_edge_lat(t.y + 1, t.zoom),
        east=_tile_edge_lon(t.x + 1, t.zoom),
        north=_tile_edge_lat(t.y, t.zoom),
    )


def tile_span_meters(t: TileId) -> float:
    """East-west ground span at the tile's centre latitude."""
    lat = _tile_edge_lat(t.y + 0.5, t.zoom)
    return EARTH_CIRCUMFERENCE / (1 << t.zoom) * math.cos(math.radians(lat))


def shifted_bbox(t: TileId, fx: float, fy: float) -> GeoBBox:
    """Tile window translated by (fx, fy) tile widths.

    fx grows east and fy grows south, i.e. along the tile x/y indices.
    """
    if not (-1.0 < fx < 1.0 and -1.0 < fy < 1.0):
        raise ValueError(f"shift ({fx}, {fy}) must lie strictly inside (-1, 1)")
    n = 1 << t.zoom
    x0, y0 = t.x + fx, t.y + fy
    if x0 < 0 or x0 + 1 > n or y0 < 0 or y0 + 1 > n:
        raise ValueError(f"shift ({fx}, {fy}) of {t} leaves the world bounds")
    if fx == 0 and fy == 0:
        return tile_to_bbox(t)
    return GeoBBox(
        west=_tile_edge_lon(x0, t.zoom),
        south=_tile_edge_lat(y0 + 1, t.zoom),
        east=_tile_edge_lon(x0 + 1, t.zoom),
        north=_tile_edge_lat(y0, t.zoom),
    )


def tiles_covering(bbox: GeoBBox, zoom: int) -> list:
    """All tiles intersecting bbox, row-major from the north-west."""
    lo = lonlat_to_tile(bbox.west, bbox.north, zoom)
    hi = lonlat_to_tile(min(bbox.east, 180.0 - 1e-12), bbox.south, zoom)
    return [TileId(zoom, x, y) for y in range(lo.y, hi.y + 1) for x in range(lo.x, hi.x + 1)]
