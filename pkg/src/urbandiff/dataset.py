"""Coverage filter, shift augmentation, leakage-free splits and the JSON-lines manifest."""
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

from .osm import TileFeatures, density_bin
from .prompts import PromptRecord
from .rng import PCG32, derive_seed
from .tiles import TileId

MANIFEST_VERSION = 1
COVERAGE_THRESHOLD = 0.70
DEFAULT_SHIFT_STEPS = (-0.5, 0.5)


def shift_set(steps=DEFAULT_SHIFT_STEPS) -> list:
    """Non-zero (fx, fy) shifts on the grid {-s.., 0, ..s}^2, in a fixed order."""
    axis = sorted(set([0.0, *map(float, steps)]))
    return [(fx, fy) for fy in axis for fx in axis if (fx, fy) != (0.0, 0.0)]


def shift_tag(shift) -> str:
    fx, fy = shift
    if fx == 0 and fy == 0:
        return ""
    return f"{round(fx * 100):+d}_{round(fy * 100):+d}"


@dataclass
class TileSample:
    sample_id: str
    tile: TileId
    city: str
    shift: tuple = (0.0, 0.0)
    features: Optional[TileFeatures] = None
    prompt: Optional[PromptRecord] = None
    control_path: Optional[str] = None
    target_path: Optional[str] = None
    split: str = ""

    @property
    def base_key(self) -> tuple:
        return (self.city, self.tile)

    @property
    def is_original(self) -> bool:
        return tuple(self.shift) == (0.0, 0.0)

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "tile": self.tile.to_dict(),
            "city": self.city,
            "shift": [float(self.shift[0]), float(self.shift[1])],
            "split": self.split,
            "control_path": self.control_path,
            "target_path": self.target_path,
            "features": self.features.to_dict() if self.features else None,
            "prompt": self.prompt.to_dict() if self.prompt else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TileSample":
        return cls(
            sample_id=d["sample_id"],
            tile=TileId.from_dict(d["tile"]),
            city=d["city"],
            shift=tuple(float(v) for v in d["shift"]),
            features=TileFeatures.from_dict(d["features"]) if d.get("features") else None,
            prompt=PromptRecord.from_dict(d["prompt"]) if d.get("prompt") else None,
            control_path=d.get("control_path"),
            target_path=d.get("target_path"),
            split=d.get("split", ""),
        )


def make_sample_id(city: str, tile: TileId, shift=(0.0, 0.0)) -> str:
    tag = shift_tag(shift)
    return f"{city}_{tile.key}" + (f"_{tag}" if tag else "")


@dataclass
class DatasetManifest:
    version: int
    seed: int
    cities: dict  # city -> {"base": n, "multiplier": m, "samples": k, "train": a, "val": b}
    samples: list = field(default_factory=list)
    variant: str = "base"
    config_hash: str = ""

    def header(self) -> dict:
        return {"version": self.version, "seed": self.seed, "variant": self.variant,
                "config_hash": self.config_hash, "cities": self.cities}

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(s.to_dict(), sort_keys=True) for s in self.samples]
        return "\n".join(lines) + "\n"

    def write(self, path):
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "DatasetManifest":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty manifest")
        h = json.loads(lines[0])
        samples = [TileSample.from_dict(json.loads(ln)) for ln in lines[1:]]
        return cls(h["version"], h["seed"], h["cities"], samples, h.get("variant", "base"), h.get("config_hash", ""))

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        return cls.from_jsonl(Path(path).read_text())


def filter_tiles(features: list, threshold: float = COVERAGE_THRESHOLD) -> list:
    """Keep tiles whose land-use coverage is strictly above the threshold."""
    return [f for f in features if f.coverage > threshold]


def _copy_with_shift(sample: TileSample, shift) -> TileSample:
    return replace(sample, shift=tuple(shift), sample_id=make_sample_id(sample.city, sample.tile, shift))


def augment(samples: list, city_plan: dict, seed: int, shifts=None,
            derive: Callable = _copy_with_shift) -> list:
    """Expand each original into ``multiplier`` samples: itself plus distinct shifted copies.

    Shifts per tile are drawn without replacement from ``shifts`` with a
    PCG32 stream keyed by the tile; ``derive(sample, shift)`` builds each copy.
    """
    shifts = shift_set() if shifts is None else list(shifts)
    out = []
    for s in samples:
        m = int(city_plan.get(s.city, 1))
        if m < 1:
            raise ValueError(f"multiplier for {s.city} must be >= 1, got {m}")
        if m - 1 > len(shifts):
            raise ValueError(f"multiplier {m} for {s.city} needs {m - 1} distinct shifts, only {len(shifts)} available")
        out.append(s)
        if m > 1:
            rng = PCG32(derive_seed(seed, "augment", s.city, s.tile.key))
            for sh in rng.sample(shifts, m - 1):
                out.append(derive(s, sh))
    return out


def split(samples: list, val_fraction: float, seed: int, city_plan: Optional[dict] = None,
          variant: str = "base", config_hash: str = "") -> DatasetManifest:
    """Assign train/val by base tile, stratified per city; every copy follows its original."""
    if not 0 < val_fraction < 1:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    bases = sorted({s.base_key for s in samples}, key=lambda k: (k[0], k[1]))
    if len(bases) < 2:
        raise ValueError(f"need at least 2 base tiles to split, got {len(bases)}")
    val = set()
    by_city = {}
    for key in bases:
        by_city.setdefault(key[0], []).append(key)
    for city, keys in sorted(by_city.items()):
        n_val = min(len(keys) - 1, int(round(val_fraction * len(keys))))
        if n_val > 0:
            val.update(PCG32(derive_seed(seed, "split", city)).sample(keys, n_val))
    if not val:
        largest = max(sorted(by_city), key=lambda c: len(by_city[c]))
        val.add(PCG32(derive_seed(seed, "split", largest)).choice(by_city[largest]))

    ordered = sorted(samples, key=lambda s: (s.city, s.tile, s.shift))
    out = [replace(s, split="val" if s.base_key in val else "train") for s in ordered]
    cities = {}
    for s in out:
        c = cities.setdefault(s.city, {"base": 0, "multiplier": int((city_plan or {}).get(s.city, 1)),
                                       "samples": 0, "train": 0, "val": 0})
        c["samples"] += 1
        c["base"] += s.is_original
        c[s.split] += 1
    return DatasetManifest(MANIFEST_VERSION, seed, cities, out, variant, config_hash)


def validate_manifest(manifest: DatasetManifest, root=None, allowed_shifts=None) -> dict:
    """Machine-readable list of violations; an empty list means the manifest is sound."""
    root = Path(root) if root is not None else None
    allowed = {(0.0, 0.0), *(allowed_shifts or shift_set())}
    violations = []

    def add(kind, sid, detail):
        violations.append({"kind": kind, "sample_id": sid, "detail": detail})

    seen = set()
    splits = {}
    counts = {}
    for s in manifest.samples:
        if s.sample_id in seen:
            add("duplicate_id", s.sample_id, "sample id appears more than once")
        seen.add(s.sample_id)
        for label, p in (("control_path", s.control_path), ("target_path", s.target_path)):
            if p is None:
                continue
            path = Path(p) if root is None or Path(p).is_absolute() else root / p
            if not path.exists():
                add("missing_path", s.sample_id, f"{label} {p} does not exist")
        if tuple(s.shift) not in allowed:
            add("bad_shift", s.sample_id, f"shift {s.shift} not in the allowed set")
        if s.split not in ("train", "val"):
            add("bad_split", s.sample_id, f"split {s.split!r}")
        splits.setdefault(s.base_key, set()).add(s.split)
        c = counts.setdefault(s.city, [0, 0])
        c[0] += 1
        c[1] += s.is_original
        f = s.features
        if f is not None:
            if f.density_bin != density_bin(f.building_coverage):
                add("density_bin", s.sample_id, f"{f.density_bin} inconsistent with coverage {f.building_coverage}")
            if not 0 <= f.coverage <= 1 + 1e-12 or any(v > f.coverage + 1e-9 for v in f.composition.values()):
                add("coverage", s.sample_id, "coverage outside [0, 1] or below a category share")
    for key, sp in splits.items():
        if len(sp) > 1:
            add("split_leak", f"{key[0]}_{key[1].key}", f"copies of one tile in splits {sorted(sp)}")
    for city, info in manifest.cities.items():
        total, base = counts.get(city, (0, 0))
        if info.get("samples") != total or info.get("base") != base:
            add("count", city, f"header says {info.get('samples')}/{info.get('base')}, found {total}/{base}")
        if total != info.get("multiplier", 1) * base:
            add("count", city, f"{total} samples != multiplier {info.get('multiplier')} x {base} base tiles")
    return {"ok": not violations, "violations": violations}
