"""End-to-end stages: dataset building, training, sampling and evaluation."""
import csv
import json
import logging
import platform
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import __version__
from .checkpoint import load_controlnet, save_controlnet
from .config import RunConfig
from .controlnet import ControlNetModel, control_tensor
from .dataset import (DatasetManifest, TileSample, augment, filter_tiles, make_sample_id, shift_set,
                      shift_tag, split)
from .diffusion import DiffusionModel
from .llm import LLMClientConfig
from .metrics import evaluate_run
from .osm import assemble_tile_features, load_city_layers
from .prompts import generate
from .render import RenderSpec, control_filename, render_control
from .rng import derive_seed
from .text import TextEmbedder
from .tiles import GeoBBox, TileId, mercator_to_lonlat, shifted_bbox, tile_to_bbox, tiles_covering

log = logging.getLogger(__name__)


def city_tiles(city_dir: Path, zoom: int, layers: dict) -> list:
    """Tiles with imagery on disk, else every tile touching the land-use extent."""
    img_dir = city_dir / "imagery"
    if img_dir.is_dir():
        tiles = []
        for p in sorted(img_dir.glob("*.png")):
            z, x, y = (int(v) for v in p.stem.split("_"))
            if z == zoom:
                tiles.append(TileId(z, x, y))
        return sorted(tiles)
    lu = layers["landuse"]
    if not lu.features:
        return []
    x0, y0, x1, y1 = lu.union().bounds
    w, s = mercator_to_lonlat(x0, y0)
    e, n = mercator_to_lonlat(x1, y1)
    return sorted(tiles_covering(GeoBBox(w, s, e, n), zoom))


def shifted_target(city_dir: Path, tile: TileId, shift) -> tuple:
    """Crop of the neighbour mosaic under a shifted window; missing neighbours stay black.

    Returns (image or None, number of missing neighbour tiles).
    """
    img_dir = city_dir / "imagery"
    base = img_dir / f"{tile.key}.png"
    if not base.exists():
        return None, 0
    first = Image.open(base).convert("RGB")
    px = first.size[0]
    fx, fy = shift
    if fx == 0 and fy == 0:
        return first, 0
    mosaic = Image.new("RGB", (3 * px, 3 * px), (0, 0, 0))
    missing = 0
    sx = (fx > 0) - (fx < 0)
    sy = (fy > 0) - (fy < 0)
    for dy in sorted({0, sy}):
        for dx in sorted({0, sx}):
            p = img_dir / f"{tile.zoom}_{tile.x + dx}_{tile.y + dy}.png"
            if p.exists():
                mosaic.paste(Image.open(p).convert("RGB"), ((dx + 1) * px, (dy + 1) * px))
            else:
                missing += 1
    ox, oy = round((1 + fx) * px), round((1 + fy) * px)
    return mosaic.crop((ox, oy, ox + px, oy + px)), missing


class _Builder:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = cfg.output_root
        self.spec = RenderSpec(raster_size=cfg.dataset.raster_size)
        llm = cfg.llm
        self.llm = LLMClientConfig(llm.endpoint or None, llm.model, llm.timeout, llm.max_retries,
                                   max_concurrency=llm.max_concurrency)
        self.layers = {}
        self.missing_neighbours = 0

    def features(self, city, tile, shift):
        bbox = tile_to_bbox(tile) if shift == (0.0, 0.0) else shifted_bbox(tile, *shift)
        seed = derive_seed(self.cfg.seed, "designation", city, tile.key, *shift)
        f = assemble_tile_features(self.layers[city], tile, city, seed, bbox)
        if self.cfg.dataset.variant == "base":
            f.designation = None
        return f, bbox

    def materialise(self, sample: TileSample, bbox) -> TileSample:
        cfg = self.cfg
        f = sample.features
        prompt_seed = derive_seed(cfg.seed, "prompt", sample.sample_id) & 0xFFFFFFFF
        prompt = generate(f, cfg.dataset.prompt_style, prompt_seed, self.llm)
        variant = cfg.dataset.variant
        img = render_control(self.layers[sample.city], bbox, self.spec, f.designation, sample.tile,
                             variant=variant)
        name = control_filename(sample.city, sample.tile, variant, shift_tag(sample.shift))
        (self.out / "controls").mkdir(parents=True, exist_ok=True)
        img.save(self.out / "controls" / name)
        target_rel = None
        target, missing = shifted_target(cfg.data_root / sample.city, sample.tile, sample.shift)
        self.missing_neighbours += missing
        if target is not None:
            (self.out / "targets").mkdir(parents=True, exist_ok=True)
            tname = name.replace(f"_{variant}", "", 1)
            target.save(self.out / "targets" / tname, format="PNG", compress_level=6)
            target_rel = f"targets/{tname}"
        return replace(sample, prompt=prompt, control_path=f"controls/{name}", target_path=target_rel)

    def derive(self, sample: TileSample, shift) -> TileSample:
        f, bbox = self.features(sample.city, sample.tile, shift)
        s = TileSample(make_sample_id(sample.city, sample.tile, shift), sample.tile, sample.city, tuple(shift), f)
        return self.materialise(s, bbox)


def build_dataset(cfg: RunConfig, cities=None) -> tuple:
    """Run ingestion -> features -> filter -> augment -> render/prompt -> split.

    Writes manifest.jsonl, prompts.jsonl, controls/ and targets/ under the
    output root; returns (manifest, summary).
    """
    cities = sorted(cities or cfg.cities)
    if not cities:
        raise ValueError("no cities configured")
    b = _Builder(cfg)
    b.out.mkdir(parents=True, exist_ok=True)
    summary = {"cities": {}, "rejected": {}}
    originals = []
    for city in cities:
        city_dir = cfg.data_root / city
        if not city_dir.is_dir():
            raise FileNotFoundError(f"missing city directory: {city_dir}")
        b.layers[city] = load_city_layers(city_dir)
        tiles = city_tiles(city_dir, cfg.dataset.zoom, b.layers[city])
        feats = {}
        for t in tiles:
            feats[t], _ = b.features(city, t, (0.0, 0.0))
        kept = filter_tiles(list(feats.values()), cfg.dataset.coverage_threshold)
        summary["rejected"][city] = {"low_coverage": len(tiles) - len(kept)}
        for f in kept:
            s = TileSample(make_sample_id(city, f.tile), f.tile, city, (0.0, 0.0), f)
            originals.append(b.materialise(s, tile_to_bbox(f.tile)))
    plan = {c: cfg.cities.get(c, 1) for c in cities}
    shifts = shift_set(cfg.dataset.shift_steps)
    samples = augment(originals, plan, cfg.seed, shifts, derive=b.derive)
    manifest = split(samples, cfg.dataset.val_fraction, cfg.seed, plan, cfg.dataset.variant, cfg.hash())
    manifest.write(b.out / "manifest.jsonl")
    with open(b.out / "prompts.jsonl", "w") as fh:
        for s in manifest.samples:
            fh.write(json.dumps({"sample_id": s.sample_id, **s.prompt.to_dict()}, sort_keys=True) + "\n")
    summary["cities"] = manifest.cities
    summary["missing_neighbour_tiles"] = b.missing_neighbours
    return manifest, summary


def _load_rgb(path, size) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    if img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 127.5 - 1.0


def to_png(image: np.ndarray) -> Image.Image:
    arr = np.clip((np.asarray(image).transpose(1, 2, 0) + 1.0) * 127.5, 0, 255).round().astype(np.uint8)
    return Image.fromarray(arr)


def training_arrays(manifest: DatasetManifest, root: Path, image_size: int, embedder: TextEmbedder,
                    split_name: str = "train") -> tuple:
    rows = [s for s in manifest.samples if s.split == split_name and s.target_path]
    if not rows:
        raise ValueError(f"no {split_name} samples with target images in the manifest")
    X = np.stack([_load_rgb(root / s.target_path, image_size) for s in rows])
    C = np.stack([control_tensor(np.asarray(Image.open(root / s.control_path).convert("RGB")), image_size)
                  for s in rows])
    cond = embedder.transform([s.prompt.text for s in rows])
    return X, cond, C


def _write_curve(path, losses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])


def run_metadata(cfg: RunConfig, stage: str, **extra) -> dict:
    return {"stage": stage, "config_hash": cfg.hash(), "seed": cfg.seed, "urbandiff": __version__,
            "torch": torch.__version__, "numpy": np.__version__, "python": platform.python_version(), **extra}


def train_models(cfg: RunConfig, variant: str = None, manifest_path=None, out_dir=None) -> dict:
    """Fit the base denoiser, then the ControlNet branch; writes checkpoint, loss CSVs and metadata."""
    torch.set_num_threads(1)
    out = Path(out_dir) if out_dir else cfg.output_root / "run"
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = Path(manifest_path) if manifest_path else cfg.output_root / "manifest.jsonl"
    manifest = DatasetManifest.read(manifest_path)
    variant = variant or manifest.variant
    if variant != manifest.variant:
        raise ValueError(f"manifest holds {manifest.variant!r} controls; cannot train variant {variant!r}")
    m = cfg.model
    embedder = TextEmbedder(dim=m.cond_dim, seed=cfg.seed).fit()
    X, cond, C = training_arrays(manifest, manifest_path.parent, m.image_size, embedder)
    base = DiffusionModel(image_size=m.image_size, channels=m.channels, cond_dim=m.cond_dim,
                          base_channels=m.base_channels, T=m.T, beta_start=m.beta_start, beta_end=m.beta_end,
                          lr=m.lr, steps=m.base_steps, batch_size=m.batch_size, seed=cfg.seed).build()
    if m.base_steps:
        base.fit(X, cond)
    cn = ControlNetModel(base=base, control_channels=3, lr=m.control_lr, steps=m.steps,
                         batch_size=m.batch_size, seed=cfg.seed).fit(X, cond, C)
    meta = run_metadata(cfg, "train", variant=variant, schedule={"T": m.T, "beta_start": m.beta_start,
                                                                   "beta_end": m.beta_end},
                        image_size=m.image_size, n_train=len(X))
    save_controlnet(out / "controlnet.ckpt", cn.net_, meta)
    _write_curve(out / "base_loss.csv", base.loss_curve_)
    _write_curve(out / "controlnet_loss.csv", cn.loss_curve_)
    (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return {"checkpoint": str(out / "controlnet.ckpt"), "base_loss": base.loss_curve_,
            "controlnet_loss": cn.loss_curve_}


def sample_images(cfg: RunConfig, checkpoint, control_path, prompt: str, seed: int, num: int = 4,
                  out_path=None) -> np.ndarray:
    from .controlnet import sample_controlled
    from .diffusion import make_schedule

    torch.set_num_threads(1)
    net, meta = load_controlnet(checkpoint)
    size = meta["image_size"]
    sched = make_schedule(**meta["schedule"])
    embedder = TextEmbedder(dim=net.locked.config["cond_dim"], seed=meta["seed"]).fit()
    cond = np.repeat(embedder.transform([prompt]), num, axis=0)
    ctrl = control_tensor(np.asarray(Image.open(control_path).convert("RGB")), size)
    ctrl = np.repeat(ctrl[None], num, axis=0)
    imgs = sample_controlled(net, torch.as_tensor(cond, dtype=torch.float32),
                             torch.as_tensor(ctrl, dtype=torch.float32), sched, seed,
                             (num, net.locked.config["channels"], size, size)).numpy()
    if out_path is not None:
        grid = Image.new("RGB", (size * num, size))
        for i, im in enumerate(imgs):
            grid.paste(to_png(im), (i * size, 0))
        grid.save(out_path)
    return imgs


def evaluate(cfg: RunConfig, real, gen, out_path=None) -> dict:
    report = evaluate_run(real, gen, cfg.metrics.feature_source, cfg.metrics.feature_seed,
                          cfg.model.image_size, kid_subsets=cfg.metrics.kid_subsets)
    report["meta"] = run_metadata(cfg, "evaluate")
    if out_path is not None:
        Path(out_path).write_text(json.dumps(report, indent=2, sort_keys=True))
    return report

