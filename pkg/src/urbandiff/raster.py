"""Mercator-metre geometry to pixel grids (no anti-aliasing)."""
import numpy as np
from PIL import Image, ImageDraw
from shapely.geometry import LineString, Polygon
from shapely.geometry.base import BaseGeometry


class PixelFrame:
    """Affine map from a Mercator window to a size x size raster, north up.

    Integer pixel coordinates address pixel centres, as PIL draws them.
    """

    def __init__(self, bounds, size: int):
        self.x0, self.y0, self.x1, self.y1 = bounds
        self.size = int(size)
        self.sx = self.size / (self.x1 - self.x0)
        self.sy = self.size / (self.y1 - self.y0)

    def to_pixels(self, coords) -> list:
        c = np.asarray(coords, dtype=float)[:, :2]
        px = (c[:, 0] - self.x0) * self.sx - 0.5
        py = (self.y1 - c[:, 1]) * self.sy - 0.5
        return list(zip(px.tolist(), py.tolist()))


def iter_polygons(geom: BaseGeometry):
    if geom is None or geom.is_empty:
        return
    if isinstance(geom, Polygon):
        yield geom
    elif hasattr(geom, "geoms"):
        for g in geom.geoms:
            yield from iter_polygons(g)


def iter_lines(geom: BaseGeometry):
    if geom is None or geom.is_empty:
        return
    if isinstance(geom, LineString):
        yield geom
    elif isinstance(geom, Polygon):
        yield LineString(geom.exterior.coords)
    elif hasattr(geom, "geoms"):
        for g in geom.geoms:
            yield from iter_lines(g)


def fill_polygons(draw: ImageDraw.ImageDraw, geom, frame: PixelFrame, fill):
    """Fill polygonal parts of geom, honouring holes.

    Each part is rasterised on its own mask first, so a hole in one part never
    erases an island of another.
    """
    size = frame.size
    for poly in iter_polygons(geom):
        mask = Image.new("1", (size, size), 0)
        md = ImageDraw.Draw(mask)
        md.polygon(frame.to_pixels(poly.exterior.coords), fill=1)
        for ring in poly.interiors:
            md.polygon(frame.to_pixels(ring.coords), fill=0)
        draw.bitmap((0, 0), mask, fill=fill)


def polygon_mask(geom, bounds, size: int) -> np.ndarray:
    frame = PixelFrame(bounds, size)
    img = Image.new("L", (size, size), 0)
    fill_polygons(ImageDraw.Draw(img), geom, frame, 255)
    return np.asarray(img) > 0


def draw_lines(draw: ImageDraw.ImageDraw, geom, frame: PixelFrame, fill, width: int):
    for line in iter_lines(geom):
        pts = frame.to_pixels(line.coords)
        if len(pts) >= 2:
            draw.line(pts, fill=fill, width=int(width))
            if width > 2:
                # round joints so bends leave no gaps
                r = (width - 1) / 2
                for x, y in pts:
                    draw.ellipse((x - r, y - r, x + r, y + r), fill=fill)

