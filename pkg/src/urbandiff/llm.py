"""Chat-completion client that enriches minimal prompts into elaborate prose.

Any reply that drops or invents a percentage is rejected; after the retries
run out the record falls back to the structured style, flagged.
"""
import json
import logging
import os
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

from .osm import TileFeatures
from .prompts import ENRICH_INSTRUCTION, PromptRecord, generate_structured, validate_numbers

log = logging.getLogger(__name__)

API_KEY_ENV = "URBANDIFF_LLM_API_KEY"


@dataclass
class LLMClientConfig:
    endpoint: Optional[str] = None  # None means offline
    model: str = "deepseek-llm-7b-chat"
    timeout: float = 30.0
    max_retries: int = 2
    instruction: str = ENRICH_INSTRUCTION
    max_concurrency: int = 4

    def __post_init__(self):
        if "{description}" not in self.instruction:
            raise ValueError("instruction template needs a {description} slot")


class LLMClient:
    def __init__(self, cfg: LLMClientConfig):
        self.cfg = cfg

    def request_body(self, description: str) -> dict:
        content = self.cfg.instruction.format(description=description)
        return {"model": self.cfg.model, "messages": [{"role": "user", "content": content}]}

    def complete(self, description: str) -> str:
        data = json.dumps(self.request_body(description)).encode()
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        req = urllib.request.Request(self.cfg.endpoint, data=data, headers=headers, method="POST")
        with urllib.request.urlopen(req, timeout=self.cfg.timeout) as resp:
            payload = json.loads(resp.read().decode())
        return payload["choices"][0]["message"]["content"].strip()


def _fallback(minimal: PromptRecord, features: TileFeatures, reason: str) -> PromptRecord:
    log.info("elaborate prompt for %s falls back to structured: %s", minimal.tile, reason)
    rec = generate_structured(features, minimal.seed)
    rec.fallback = True
    return rec


def enrich_elaborate(minimal: PromptRecord, features: TileFeatures,
                     cfg: Optional[LLMClientConfig] = None) -> PromptRecord:
    if cfg is None or not cfg.endpoint:
        return _fallback(minimal, features, "offline")
    client = LLMClient(cfg)
    reason = ""
    for attempt in range(cfg.max_retries + 1):
        try:
            text = client.complete(minimal.text)
        except (urllib.error.URLError, OSError, KeyError, IndexError, ValueError) as e:
            reason = f"request failed: {e}"
            log.warning("LLM attempt %d for %s: %s", attempt + 1, minimal.tile, reason)
            continue
        rec = PromptRecord("elaborate", text, minimal.seed, minimal.tile)
        report = validate_numbers(rec, features)
        if report.ok:
            return rec
        reason = f"number mismatch (missing={report.missing}, extra={report.extraneous})"
        log.warning("LLM attempt %d for %s: %s", attempt + 1, minimal.tile, reason)
    return _fallback(minimal, features, reason)


def enrich_many(minimals: list, features: list, cfg: Optional[LLMClientConfig] = None) -> list:
    """Bounded-concurrency enrichment; results keep input order."""
    workers = max(1, cfg.max_concurrency if cfg else 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda mf: enrich_elaborate(mf[0], mf[1], cfg), zip(minimals, features)))
