"""Command-line entry point.

Exit codes: 0 success, 1 validation failure, 2 missing input, 3 numerical failure.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config

EXIT_OK, EXIT_INVALID, EXIT_MISSING, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("urbandiff")


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_build_dataset(args) -> int:
    from .pipeline import build_dataset

    cfg = _config(args)
    if args.val_frac is not None:
        cfg.dataset.val_fraction = args.val_frac
    if args.variant:
        cfg.dataset.variant = args.variant
    if args.prompt_style:
        cfg.dataset.prompt_style = args.prompt_style
    if args.out:
        cfg.paths.output_root = str(Path(args.out).resolve())
    cfg.validate()
    manifest, summary = build_dataset(cfg, args.cities or None)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_render_control(args) -> int:
    from .osm import assemble_tile_features, load_city_layers
    from .render import RenderSpec, render_control
    from .rng import derive_seed
    from .tiles import TileId, shifted_bbox

    cfg = _config(args)
    z, x, y = (int(v) for v in args.tile.split("/"))
    tile = TileId(z, x, y)
    layers = load_city_layers(cfg.data_root / args.city)
    bbox = shifted_bbox(tile, args.fx, args.fy)
    des = None
    if args.variant == "landuse":
        seed = derive_seed(cfg.seed, "designation", args.city, tile.key, args.fx, args.fy)
        des = assemble_tile_features(layers, tile, args.city, seed, bbox).designation
    img = render_control(layers, bbox, RenderSpec(raster_size=cfg.dataset.raster_size), des, tile,
                         variant=args.variant)
    img.save(args.out)
    print(args.out)
    return EXIT_OK


def cmd_gen_prompts(args) -> int:
    from .dataset import DatasetManifest
    from .llm import LLMClientConfig
    from .prompts import generate
    from .rng import derive_seed

    cfg = _config(args)
    manifest = DatasetManifest.read(args.manifest or cfg.output_root / "manifest.jsonl")
    llm = LLMClientConfig(cfg.llm.endpoint or None, cfg.llm.model, cfg.llm.timeout, cfg.llm.max_retries,
                          max_concurrency=cfg.llm.max_concurrency)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for s in manifest.samples:
            seed = derive_seed(cfg.seed, "prompt", s.sample_id) & 0xFFFFFFFF
            rec = generate(s.features, args.style, seed, llm)
            out.write(json.dumps({"sample_id": s.sample_id, **rec.to_dict()}, sort_keys=True) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline import train_models

    cfg = _config(args)
    if args.steps is not None:
        cfg.model.steps = args.steps
    if args.base_steps is not None:
        cfg.model.base_steps = args.base_steps
    res = train_models(cfg, args.variant, args.manifest, args.out)
    print(json.dumps({"checkpoint": res["checkpoint"], "final_base_loss": res["base_loss"][-1:],
                      "final_controlnet_loss": res["controlnet_loss"][-1:]}))
    return EXIT_OK


def cmd_sample(args) -> int:
    from .dataset import DatasetManifest
    from .pipeline import sample_images
    from .prompts import generate
    from .rng import derive_seed

    cfg = _config(args)
    prompt = args.prompt
    if prompt is None:
        manifest_path = Path(args.manifest or cfg.output_root / "manifest.jsonl")
        manifest = DatasetManifest.read(manifest_path)
        name = Path(args.control).name
        match = [s for s in manifest.samples if s.control_path and Path(s.control_path).name == name]
        if not match:
            raise ConfigError(f"no manifest sample uses control {name}; pass --prompt")
        s = match[0]
        seed = derive_seed(cfg.seed, "prompt", s.sample_id) & 0xFFFFFFFF
        prompt = generate(s.features, args.prompt_style, seed).text
    if not Path(args.control).exists():
        raise FileNotFoundError(f"control image not found: {args.control}")
    sample_images(cfg, args.checkpoint, args.control, prompt, args.seed or 0, args.num, args.out)
    print(args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .pipeline import evaluate

    cfg = _config(args)
    if args.features:
        cfg.metrics.feature_source = "jsonl"
    for p in (args.real, args.gen):
        if not Path(p).exists():
            raise FileNotFoundError(f"input not found: {p}")
    report = evaluate(cfg, args.real, args.gen, args.out)
    print(json.dumps({k: report[k] for k in ("overall", "per_city", "skipped")}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_validate(args) -> int:
    from .dataset import DatasetManifest, validate_manifest

    path = Path(args.manifest)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    report = validate_manifest(DatasetManifest.read(path), path.parent)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK if report["ok"] else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="urbandiff", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", required=True, help="run configuration (TOML)")
        sp.add_argument("--seed", type=int)
        return sp

    sp = with_config(sub.add_parser("build-dataset", help="features, controls, prompts and manifest"))
    sp.add_argument("--cities", nargs="*")
    sp.add_argument("--val-frac", type=float)
    sp.add_argument("--variant", choices=("base", "landuse"))
    sp.add_argument("--prompt-style", choices=("minimal", "structured", "elaborate"))
    sp.add_argument("--out", help="output root (overrides paths.output_root)")
    sp.set_defaults(func=cmd_build_dataset)

    sp = with_config(sub.add_parser("render-control", help="render one tile's control image"))
    sp.add_argument("--city", required=True)
    sp.add_argument("--tile", required=True, help="z/x/y")
    sp.add_argument("--variant", choices=("base", "landuse"), default="base")
    sp.add_argument("--fx", type=float, default=0.0)
    sp.add_argument("--fy", type=float, default=0.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_render_control)

    sp = with_config(sub.add_parser("gen-prompts", help="prompts for every manifest sample"))
    sp.add_argument("--style", choices=("minimal", "structured", "elaborate"), required=True)
    sp.add_argument("--manifest")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_gen_prompts)

    sp = with_config(sub.add_parser("train", help="fit the base denoiser and the ControlNet branch"))
    sp.add_argument("--variant", choices=("base", "landuse"))
    sp.add_argument("--manifest")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--base-steps", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_train)

    sp = with_config(sub.add_parser("sample", help="generate images for a control image"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--control", required=True)
    sp.add_argument("--prompt")
    sp.add_argument("--prompt-style", choices=("minimal", "structured", "elaborate"), default="structured")
    sp.add_argument("--manifest")
    sp.add_argument("--num", type=int, default=4)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sample)

    sp = with_config(sub.add_parser("evaluate", help="FID/KID between real and generated sets"))
    sp.add_argument("--real", required=True)
    sp.add_argument("--gen", required=True)
    sp.add_argument("--features", action="store_true", help="inputs are feature JSON-lines files")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("validate", help="check a dataset manifest")
    sp.add_argument("manifest")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    from .diffusion import NumericalError
    from .osm import GeoJSONError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, GeoJSONError, ValueError, KeyError) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
