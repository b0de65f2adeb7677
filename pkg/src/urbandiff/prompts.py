"""Design-description prompts in three styles: minimal, structured and elaborate."""
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional

from .osm import CATEGORIES, TileFeatures
from .rng import PCG32
from .tiles import TileId

STYLES = ("minimal", "structured", "elaborate")
MENTION_THRESHOLD = 0.05

# Sentence templates for the structured style.
SETTLEMENT_TEMPLATES = (
    "The area shown in the satellite image of {city} falls within the {type}",
    "This is a satellite image of {type} in {city}",
    "This is a satellite image of {city} where the {type} forms the core",
)
SETTLEMENT_CONNECTORS = (
    ", with some {types} mixed in",
    ", alongside portions of {types}",
    ", blending into {types} areas",
    ", adjacent to {types} zones",
)
LANDUSE_TEMPLATES = (
    "This area is dominated by {name} ({pct}%)",
    "The landscape is primarily {name} ({pct}%)",
    "{name} areas ({pct}%) prevail here",
    "You'll find mostly {name} ({pct}%) in this zone",
)
LANDUSE_CONNECTORS = (
    ", complemented by {names}",
    ", with pockets of {names}",
    ", alongside some {names}",
    ", interspersed with {names}",
)
RESIDENTIAL_TEMPLATES = (
    "The residential buildings are mainly {type}",
    "Housing consists primarily of {type}",
    "{type} structures dominate the residential areas",
    "You'll find mostly {type} here",
)
RESIDENTIAL_CONNECTORS = (
    ", with some {types} interspersed",
    ", complemented by {types}",
    ", alongside {types} dwellings",
    ", mixed with {types} residences",
)
DENSITY_TEMPLATES = (
    "Building density is {level} in this area",
    "This area has a {level} building density",
)
DESIGNATION_TEMPLATES = (
    "The {landuse} area is concentrated in the {position} of the image in shaded {color}",
    "A {landuse} patch appears in the {position} region of the image in shaded {color}",
    "{landuse} areas cluster in the {position} portion of the image in shaded {color}",
    "The main {landuse} zone is located toward the {position} in shaded {color}",
)

ENRICH_INSTRUCTION = """### Task:
Enrich this satellite image description while:
1. Keeping ALL original numbers/percentages EXACTLY as given, and in numerical form
2. Adding only qualitative details (no new stats)
3. Maintaining professional urban planner tone
4. Be succinct, keep output under 100 words
### Original:
{description}
### Enriched:"""

_PCT_RE = re.compile(r"\d+(?:\.\d+)?%")


@dataclass
class PromptRecord:
    style: str
    text: str
    seed: int
    tile: Optional[TileId] = None
    numbers: list = field(default_factory=list)
    fallback: bool = False

    def __post_init__(self):
        if self.style not in STYLES:
            raise ValueError(f"unknown prompt style {self.style!r}")
        if not self.numbers:
            self.numbers = extract_numbers(self.text)

    def to_dict(self) -> dict:
        return {
            "style": self.style,
            "text": self.text,
            "numbers": list(self.numbers),
            "seed": self.seed,
            "tile": self.tile.to_dict() if self.tile else None,
            "fallback": self.fallback,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PromptRecord":
        tile = TileId.from_dict(d["tile"]) if d.get("tile") else None
        return cls(d["style"], d["text"], d["seed"], tile, list(d.get("numbers") or []), d.get("fallback", False))


def extract_numbers(text: str) -> list:
    return _PCT_RE.findall(text)


def percent(fraction: float) -> int:
    """Half-up integer percentage of a fraction."""
    return int(Decimal(repr(fraction * 100)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def mentioned_categories(f: TileFeatures) -> list:
    """(category, pct) at or above the mention threshold, largest share first."""
    items = [(c, f.composition.get(c, 0.0)) for c in CATEGORIES]
    items = [(c, v) for c, v in items if v >= MENTION_THRESHOLD]
    items.sort(key=lambda cv: (-cv[1], cv[0]))
    return [(c, percent(v)) for c, v in items]


def _capitalize(s: str) -> str:
    return s[:1].upper() + s[1:] if s else s


def _join(items) -> str:
    items = list(items)
    if len(items) <= 1:
        return "".join(items)
    return ", ".join(items[:-1]) + " and " + items[-1]


def _has_residential(f: TileFeatures) -> bool:
    # below the mention threshold the word "residential" would leak into the text
    return f.composition.get("residential", 0.0) >= MENTION_THRESHOLD and bool(f.residential_types)


def _city(f: TileFeatures) -> str:
    return f.city.lower()


def generate_minimal(f: TileFeatures, seed: int = 0) -> PromptRecord:
    parts = [f"Satellite image in a {f.settlement_primary} in {_city(f)}."]
    cats = mentioned_categories(f)
    if cats:
        head = f"{cats[0][1]}% {cats[0][0]}"
        rest = [f"{c} ({p}%)" for c, p in cats[1:]]
        parts.append("Landuse include: " + ", ".join([head] + rest) + ".")
    if f.density_bin != "none":
        parts.append(f"{_capitalize(f.density_bin)} building density.")
    if _has_residential(f):
        types = f.residential_types
        s = f"Residential type is mainly {types[0]}"
        if len(types) > 1:
            s += f", with {_join(types[1:])}"
        parts.append(s + ".")
    if f.designation is not None:
        d = f.designation
        parts.append(DESIGNATION_TEMPLATES[0].format(
            landuse=d.category, position=d.position, color=d.color) + ".")
    return PromptRecord("minimal", " ".join(parts), seed, f.tile)


def generate_structured(f: TileFeatures, seed: int) -> PromptRecord:
    """Templated prose; each component draws one phrase variant from a PCG32 stream.

    Draw order is fixed (settlement, settlement connector, land use, land-use
    connector, density, residential, residential connector, designation) and
    a draw happens only when its component is present.
    """
    rng = PCG32(seed)
    sentences = []

    s = rng.choice(SETTLEMENT_TEMPLATES).format(city=_city(f), type=f.settlement_primary)
    if f.settlement_secondary:
        s += rng.choice(SETTLEMENT_CONNECTORS).format(types=_join(f.settlement_secondary))
    sentences.append(s)

    cats = mentioned_categories(f)
    if cats:
        name, pct = cats[0]
        s = rng.choice(LANDUSE_TEMPLATES).format(name=name, pct=pct)
        if len(cats) > 1:
            names = ", ".join(f"{c} ({p}%)" for c, p in cats[1:])
            s += rng.choice(LANDUSE_CONNECTORS).format(names=names)
        sentences.append(s)

    if f.density_bin != "none":
        sentences.append(rng.choice(DENSITY_TEMPLATES).format(level=f.density_bin))

    if _has_residential(f):
        types = f.residential_types
        s = rng.choice(RESIDENTIAL_TEMPLATES).format(type=types[0])
        if len(types) > 1:
            s += rng.choice(RESIDENTIAL_CONNECTORS).format(types=_join(types[1:]))
        sentences.append(s)

    if f.designation is not None:
        d = f.designation
        sentences.append(rng.choice(DESIGNATION_TEMPLATES).format(
            landuse=d.category, position=d.position, color=d.color))

    text = " ".join(_capitalize(s) + "." for s in sentences)
    return PromptRecord("structured", text, seed, f.tile)


@dataclass
class NumberReport:
    missing: list
    extraneous: list

    @property
    def ok(self) -> bool:
        return not self.missing and not self.extraneous


def validate_numbers(p: PromptRecord, f: TileFeatures) -> NumberReport:
    """Every mentioned composition percentage verbatim, and nothing else."""
    expected = [f"{pct}%" for _, pct in mentioned_categories(f)]
    found = extract_numbers(p.text)
    missing = [e for e in expected if e not in found]
    extraneous = [n for n in found if n not in expected]
    return NumberReport(missing, extraneous)


def generate(f: TileFeatures, style: str, seed: int, llm_config=None) -> PromptRecord:
    if style == "minimal":
        return generate_minimal(f, seed)
    if style == "structured":
        return generate_structured(f, seed)
    if style == "elaborate":
        from .llm import enrich_elaborate
        return enrich_elaborate(generate_minimal(f, seed), f, llm_config)
    raise ValueError(f"unknown prompt style {style!r}; expected one of {STYLES}")
