"""TileFeatures behind the three reference prompt examples (LA, Dallas, Chicago)."""
from urbandiff.osm import CATEGORIES, TileFeatures, density_bin
from urbandiff.rng import PCG32
from urbandiff.tiles import TileId


def features(city, composition, building_coverage, types, tile=TileId(16, 0, 0)):
    comp = {c: composition.get(c, 0.0) for c in CATEGORIES}
    return TileFeatures(tile, city, comp, sum(comp.values()), building_coverage,
                        density_bin(building_coverage), list(types), "city", [])


def la():
    return features("LA", {"residential": 0.85, "commercial": 0.10}, 0.20, ["single-family homes"])


def dallas():
    return features("Dallas", {"residential": 0.45, "commercial": 0.20, "forest": 0.15, "water": 0.03}, 0.18,
                    ["apartment complexes", "townhouses"])


def chicago():
    # recreational edges out commercial before rounding, as the reference order implies
    return features("Chicago", {"residential": 0.35, "parking": 0.15, "recreational": 0.102,
                                "commercial": 0.098, "forest": 0.05}, 0.34,
                    ["apartment complexes", "single-family homes"])


LA_MINIMAL = ("Satellite image in a city in la. Landuse include: 85% residential, commercial (10%). "
              "Medium building density. Residential type is mainly single-family homes.")
DALLAS_MINIMAL = ("Satellite image in a city in dallas. Landuse include: 45% residential, commercial (20%), "
                  "forest (15%). Medium building density. Residential type is mainly apartment complexes, "
                  "with townhouses.")
DALLAS_STRUCTURED_OPENING = "This is a satellite image of dallas where the city forms the core."
# percentages in the reference prompts, in order of appearance
REFERENCE_NUMBERS = {
    "la": ["85%", "10%"],
    "dallas": ["45%", "20%", "15%"],
    "chicago": ["35%", "15%", "10%", "10%", "5%"],
}
REFERENCE_CATEGORY_ORDER = {
    "la": ["residential", "commercial"],
    "dallas": ["residential", "commercial", "forest"],
    "chicago": ["residential", "parking", "recreational", "commercial", "forest"],
}


def seed_with_first_choice(n, want, start=0):
    """Smallest seed >= start whose first bounded draw below(n) equals want."""
    s = start
    while PCG32(s).below(n) != want:
        s += 1
    return s
