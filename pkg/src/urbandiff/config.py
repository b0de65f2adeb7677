"""Run configuration: one TOML file plus command-line overrides."""
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    data_root: str = "data"
    output_root: str = "out"


@dataclass
class DatasetConfig:
    zoom: int = 16
    raster_size: int = 512
    variant: str = "landuse"
    prompt_style: str = "structured"
    val_fraction: float = 0.07
    coverage_threshold: float = 0.70
    shift_steps: list = field(default_factory=lambda: [-0.5, 0.5])


@dataclass
class ModelConfig:
    image_size: int = 64
    channels: int = 3
    cond_dim: int = 64
    base_channels: int = 16
    T: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02
    lr: float = 0.05
    base_steps: int = 300
    control_lr: float = 0.1
    steps: int = 500
    batch_size: int = 8
    epochs_reference: int = 10  # reference run length in epochs; recorded only


@dataclass
class MetricsConfig:
    feature_source: str = "builtin"
    kid_subsets: int = 0
    feature_seed: int = 0


@dataclass
class LLMConfig:
    endpoint: str = ""
    model: str = "deepseek-llm-7b-chat"
    timeout: float = 30.0
    max_retries: int = 2
    max_concurrency: int = 4


@dataclass
class RunConfig:
    seed: int
    paths: PathsConfig = field(default_factory=PathsConfig)
    cities: dict = field(default_factory=dict)  # name -> multiplier
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    llm: LLMConfig = field(default_factory=LLMConfig)
    base_dir: str = "."

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def data_root(self) -> Path:
        return self.resolve(self.paths.data_root)

    @property
    def output_root(self) -> Path:
        return self.resolve(self.paths.output_root)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def hash(self) -> str:
        # where files live is not part of what they contain
        d = self.to_dict()
        d.pop("paths")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self):
        if self.dataset.variant not in ("base", "landuse"):
            raise ConfigError(f"dataset.variant must be base or landuse, got {self.dataset.variant!r}")
        for city, m in self.cities.items():
            if int(m) < 1:
                raise ConfigError(f"multiplier for {city} must be >= 1")
        if not 0 < self.dataset.val_fraction < 1:
            raise ConfigError("dataset.val_fraction must be in (0, 1)")
        return self


def _section(cls, raw: dict, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    return cls(**raw)


def from_dict(raw: dict, base_dir=".") -> RunConfig:
    raw = dict(raw)
    if "seed" not in raw:
        raise ConfigError("config must set a seed")
    cities = {}
    for name, spec in (raw.pop("cities", {}) or {}).items():
        cities[name] = int(spec.get("multiplier", 1)) if isinstance(spec, dict) else int(spec)
    cfg = RunConfig(
        seed=int(raw.pop("seed")),
        paths=_section(PathsConfig, raw.pop("paths", {}), "paths"),
        cities=cities,
        dataset=_section(DatasetConfig, raw.pop("dataset", {}), "dataset"),
        model=_section(ModelConfig, raw.pop("model", {}), "model"),
        metrics=_section(MetricsConfig, raw.pop("metrics", {}), "metrics"),
        llm=_section(LLMConfig, raw.pop("llm", {}), "llm"),
        base_dir=str(base_dir),
    )
    if raw:
        raise ConfigError(f"unknown top-level keys: {sorted(raw)}")
    return cfg.validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return from_dict(raw, path.parent)
