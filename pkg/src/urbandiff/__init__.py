"""Generative urban-design pipeline: map tiles, OSM semantics, control images,
prompts, a desk-scale diffusion model with a ControlNet branch, and FID/KID."""

__version__ = "0.1.0"
