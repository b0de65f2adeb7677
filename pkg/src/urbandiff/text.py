"""Prompt tokenisation, 77-token chunking and chunk-averaged conditioning vectors."""
import hashlib
import json
import re

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

MAX_TOKENS = 77
DEFAULT_DIM = 64

_TOKEN_RE = re.compile(r"\d+(?:\.\d+)?%|[^\W_]+")


def tokenize(text: str) -> list:
    """Lowercase, split on whitespace and punctuation; "85%" stays one token."""
    return _TOKEN_RE.findall(text.lower())


def chunk(tokens: list, max_len: int = MAX_TOKENS) -> list:
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    return [tokens[i:i + max_len] for i in range(0, len(tokens), max_len)]


class HashProjectionEncoder:
    """Deterministic toy text encoder.

    Each token maps to a fixed Gaussian vector seeded by a hash of (seed, token);
    a sequence embeds to the sum of its token vectors scaled by 1/sqrt(len).
    """

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        self.dim = int(dim)
        self.seed = int(seed)
        self._cache = {}

    def token_vector(self, token: str) -> np.ndarray:
        v = self._cache.get(token)
        if v is None:
            digest = hashlib.blake2b(f"{self.seed}\x1f{token}".encode(), digest_size=8).digest()
            rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
            v = rng.standard_normal(self.dim) / np.sqrt(self.dim)
            v.setflags(write=False)
            self._cache[token] = v
        return v

    def embed(self, tokens: list) -> np.ndarray:
        if not tokens:
            return np.zeros(self.dim)
        total = np.zeros(self.dim)
        for tok in tokens:
            total += self.token_vector(tok)
        return total / np.sqrt(len(tokens))


def embed(tokens: list, encoder: HashProjectionEncoder) -> np.ndarray:
    return encoder.embed(tokens)


def embed_chunked(text: str, encoder: HashProjectionEncoder, max_len: int = MAX_TOKENS) -> np.ndarray:
    """Unweighted mean of per-chunk embeddings."""
    chunks = chunk(tokenize(text), max_len)
    if not chunks:
        return encoder.embed([])
    if len(chunks) == 1:
        return encoder.embed(chunks[0])
    return np.mean([encoder.embed(c) for c in chunks], axis=0)


def load_external_embeddings(path) -> dict:
    """prompt_id -> conditioning vector from JSON lines ``{prompt_id, chunks: [[...], ...]}``."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            chunks = np.asarray(rec["chunks"], dtype=float)
            if chunks.ndim != 2 or len(chunks) == 0:
                raise ValueError(f"{path}:{lineno}: chunks must be a non-empty list of vectors")
            out[str(rec["prompt_id"])] = chunks.mean(axis=0)
    return out


class TextEmbedder(BaseEstimator, TransformerMixin):
    """Texts -> (n, dim) conditioning matrix.

    With ``external`` (a path to chunk-embedding JSON lines) texts are looked
    up by prompt id instead of encoded, so precomputed CLIP embeddings drop in.
    """

    def __init__(self, dim=DEFAULT_DIM, seed=0, max_tokens=MAX_TOKENS, external=None):
        self.dim = dim
        self.seed = seed
        self.max_tokens = max_tokens
        self.external = external

    def fit(self, X=None, y=None):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be at least 1")
        self.encoder_ = HashProjectionEncoder(self.dim, self.seed)
        self.external_ = load_external_embeddings(self.external) if self.external else None
        if self.external_:
            dims = {len(v) for v in self.external_.values()}
            if dims != {self.dim}:
                raise ValueError(f"external embeddings have dims {sorted(dims)}, expected {self.dim}")
        return self

    def transform(self, X):
        if not hasattr(self, "encoder_"):
            self.fit()
        texts = [X] if isinstance(X, str) else list(X)
        if self.external_ is not None:
            missing = [t for t in texts if t not in self.external_]
            if missing:
                raise KeyError(f"no external embedding for prompt ids {missing[:5]}")
            return np.stack([self.external_[t] for t in texts]) if texts else np.zeros((0, self.dim))
        if not texts:
            return np.zeros((0, self.dim))
        return np.stack([embed_chunked(t, self.encoder_, self.max_tokens) for t in texts])
