"""Constraint (control) images: roads, railways, waterways and an optional shaded land-use block."""
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image, ImageDraw

from .osm import LAYERS, DesignationRegion, FeatureCollection, clip_to_bbox, load_tag_map, tag_lookup
from .raster import PixelFrame, draw_lines, fill_polygons
from .tiles import GeoBBox, TileId

BACKGROUND = (0, 0, 0)

PALETTE = {
    "water": (74, 144, 217),
    "railway": (128, 128, 128),
    "primary": (255, 140, 0),
    "secondary": (255, 200, 0),
    "tertiary": (200, 200, 0),
    "residential_road": (150, 150, 150),
    "landuse:residential": (220, 60, 60),
    "landuse:commercial": (60, 60, 220),
    "landuse:industrial": (150, 60, 150),
    "landuse:recreational": (60, 180, 60),
    "landuse:parking": (110, 110, 60),
    "landuse:farmland": (180, 140, 60),
    "landuse:forest": (20, 120, 20),
}
_ALIASES = {
    "waterway": "water",
    "waterways": "water",
    "railways": "railway",
    "primary road": "primary",
    "secondary road": "secondary",
    "tertiary road": "tertiary",
    "residential road": "residential_road",
    "landuse:park": "landuse:recreational",
}

BASE_WIDTHS = {"primary": 5, "secondary": 4, "tertiary": 3, "residential_road": 2, "railway": 2, "water": 3}
ROAD_ORDER = ("residential_road", "tertiary", "secondary", "primary")
DRAW_ORDER = ("designation", "water", "railway") + ROAD_ORDER


def palette_lookup(name: str) -> tuple:
    key = _ALIASES.get(name, name)
    if key not in PALETTE:
        raise KeyError(f"unknown palette class {name!r}; known: {sorted(PALETTE)}")
    return PALETTE[key]


@dataclass
class RenderSpec:
    raster_size: int = 512
    palette: dict = field(default_factory=lambda: dict(PALETTE))
    widths: dict = field(default_factory=lambda: dict(BASE_WIDTHS))
    draw_order: tuple = DRAW_ORDER

    def __post_init__(self):
        colors = list(self.palette.values())
        if len(set(colors)) != len(colors) or BACKGROUND in colors:
            raise ValueError("palette colours must be distinct and non-black")

    def width(self, cls: str) -> int:
        """Stroke width scaled linearly from its 512 px reference."""
        return max(1, round(self.widths[cls] * self.raster_size / 512))


@dataclass
class ControlImage:
    pixels: np.ndarray  # (size, size, 3) uint8
    variant: str
    tile: Optional[TileId] = None

    def to_png(self) -> bytes:
        buf = io.BytesIO()
        # fixed encoder settings; no timestamp or text chunks
        Image.fromarray(self.pixels, "RGB").save(buf, format="PNG", optimize=False, compress_level=6)
        return buf.getvalue()

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_png())


def control_filename(city: str, tile: TileId, variant: str, shift_tag: str = "") -> str:
    suffix = f"_{shift_tag}" if shift_tag else ""
    return f"{city}_{tile.zoom}_{tile.x}_{tile.y}_{variant}{suffix}.png"


def _classify_lines(layers: dict, tag_map: dict) -> dict:
    out = {k: [] for k in ("water", "railway") + ROAD_ORDER}
    water_polys = []
    for f in layers["waterways"].features:
        if f.geometry.geom_type in ("Polygon", "MultiPolygon"):
            water_polys.append(f.geometry)
        else:
            out["water"].append(f.geometry)
    for f in layers["railways"].features:
        if tag_lookup(f.tags, tag_map["railways"]) is not None:
            out["railway"].append(f.geometry)
    for f in layers["roads"].features:
        cls = tag_lookup(f.tags, tag_map["roads"])
        if cls == "residential":
            cls = "residential_road"
        if cls in out:
            out[cls].append(f.geometry)
    return out, water_polys


def render_control(layers: dict, bbox: GeoBBox, spec: Optional[RenderSpec] = None,
                   designation: Optional[DesignationRegion] = None, tile: Optional[TileId] = None,
                   clipped: bool = False, variant: Optional[str] = None) -> ControlImage:
    """Draw constraint layers back to front per ``spec.draw_order``.

    ``layers`` maps layer names to collections (unclipped unless ``clipped``);
    the variant defaults to "landuse" when a designation is given.
    """
    spec = spec or RenderSpec()
    tag_map = load_tag_map()
    layers = {n: layers.get(n) or FeatureCollection(n, []) for n in LAYERS}
    if not clipped:
        layers = {n: clip_to_bbox(fc, bbox) if fc.features else fc for n, fc in layers.items()}
    bounds = bbox.mercator_bounds()
    window = (bounds[0] - 1e-6, bounds[1] - 1e-6, bounds[2] + 1e-6, bounds[3] + 1e-6)
    for fc in layers.values():
        for f in fc.features:
            gx0, gy0, gx1, gy1 = f.geometry.bounds
            assert gx0 >= window[0] and gy0 >= window[1] and gx1 <= window[2] and gy1 <= window[3], \
                "geometry outside the render window; clip before rendering"

    size = spec.raster_size
    frame = PixelFrame(bounds, size)
    img = Image.new("RGB", (size, size), BACKGROUND)
    draw = ImageDraw.Draw(img)
    lines, water_polys = _classify_lines(layers, tag_map)
    for step in spec.draw_order:
        if step == "designation":
            if designation is not None and designation.geometry is not None:
                color = spec.palette[f"landuse:{designation.category}"]
                fill_polygons(draw, designation.geometry, frame, color)
        elif step == "water":
            for g in water_polys:
                fill_polygons(draw, g, frame, spec.palette["water"])
            for g in lines["water"]:
                draw_lines(draw, g, frame, spec.palette["water"], spec.width("water"))
        else:
            for g in lines[step]:
                draw_lines(draw, g, frame, spec.palette[step], spec.width(step))
    variant = variant or ("landuse" if designation is not None else "base")
    return ControlImage(np.asarray(img, dtype=np.uint8).copy(), variant, tile)


def load_control(path, size: Optional[int] = None) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.NEAREST)
    return np.asarray(img, dtype=np.uint8)
