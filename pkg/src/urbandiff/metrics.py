"""FID and unbiased KID over image feature vectors."""
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_features, check_images

log = logging.getLogger(__name__)

FEATURE_DIM = 64
POOL_GRID = 8


@dataclass
class FeatureSet:
    vectors: np.ndarray
    source: str = ""
    ids: tuple = ()

    def __post_init__(self):
        self.vectors = check_features(self.vectors, min_rows=1)

    def __len__(self):
        return len(self.vectors)


@dataclass
class FeatureStats:
    mu: np.ndarray
    sigma: np.ndarray


def builtin_features(images, seed: int = 0, dim: int = FEATURE_DIM) -> FeatureSet:
    """8x8 average pool per channel, flatten, then a fixed seeded Gaussian projection (no bias)."""
    images = list(images) if not isinstance(images, np.ndarray) else images
    if len(images) == 0:
        raise ValueError("no images to featurise")
    X = check_images(np.asarray(images))
    n, c, h, w = X.shape
    if h % POOL_GRID or w % POOL_GRID:
        raise ValueError(f"image size {h}x{w} is not divisible by {POOL_GRID}")
    pooled = X.reshape(n, c, POOL_GRID, h // POOL_GRID, POOL_GRID, w // POOL_GRID).mean(axis=(3, 5))
    flat = pooled.reshape(n, -1)
    rng = np.random.Generator(np.random.PCG64(seed))
    proj = rng.standard_normal((flat.shape[1], dim)) / np.sqrt(flat.shape[1])
    return FeatureSet(flat @ proj, "builtin")


class FeatureExtractor(BaseEstimator, TransformerMixin):
    """Images (N, C, H, W) -> (N, dim) built-in features."""

    def __init__(self, dim=FEATURE_DIM, seed=0):
        self.dim = dim
        self.seed = seed

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return builtin_features(X, self.seed, self.dim).vectors


def feature_stats(fs) -> FeatureStats:
    X = fs.vectors if isinstance(fs, FeatureSet) else check_features(fs, min_rows=1)
    if len(X) < 2:
        raise ValueError(f"need at least 2 feature vectors for statistics, got {len(X)}")
    mu = X.mean(axis=0)
    sigma = np.cov(X, rowvar=False, ddof=1).reshape(X.shape[1], X.shape[1])
    return FeatureStats(mu, (sigma + sigma.T) / 2)


def _sqrtm_psd(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def fid(a: FeatureStats, b: FeatureStats) -> float:
    """Frechet distance between two Gaussians.

    Tr((Sa Sb)^(1/2)) is taken as Tr((Sa^(1/2) Sb Sa^(1/2))^(1/2)), which stays
    symmetric; negative eigenvalues are clamped to zero.
    """
    if a.mu.shape != b.mu.shape or a.sigma.shape != b.sigma.shape:
        raise ValueError(f"dimension mismatch: {a.mu.shape} vs {b.mu.shape}")
    if np.array_equal(a.mu, b.mu) and np.array_equal(a.sigma, b.sigma):
        return 0.0
    diff = a.mu - b.mu
    ra = _sqrtm_psd(a.sigma)
    m = ra @ b.sigma @ ra
    w = np.linalg.eigvalsh((m + m.T) / 2)
    tr_covmean = np.sqrt(np.clip(w, 0, None)).sum()
    value = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * tr_covmean)
    return max(value, 0.0)


def polynomial_kernel(x: np.ndarray, y: np.ndarray, degree: int = 3) -> np.ndarray:
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** degree


def _mmd2_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    kxx = polynomial_kernel(x, x)
    kyy = polynomial_kernel(y, y)
    kxy = polynomial_kernel(x, y)
    # a shared offset cancels in the estimator and keeps constant kernels exactly at zero
    ref = kxy.flat[0]
    kxx, kyy, kxy = kxx - ref, kyy - ref, kxy - ref
    m, n = len(x), len(y)
    sxx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(sxx + syy - 2.0 * kxy.mean())


def kid(x, y, subsets: int = 0, subset_size: int = 1000, seed: int = 0) -> float:
    """Unbiased squared MMD with kernel (u.v/d + 1)^3.

    ``subsets=0`` uses the full sets; otherwise the mean over that many random
    subsets of size min(subset_size, N).
    """
    x = x.vectors if isinstance(x, FeatureSet) else check_features(x)
    y = y.vectors if isinstance(y, FeatureSet) else check_features(y)
    if len(x) < 2 or len(y) < 2:
        raise ValueError("KID needs at least 2 vectors per set")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    if not subsets:
        return _mmd2_unbiased(x, y)
    rng = np.random.Generator(np.random.PCG64(seed))
    m = min(subset_size, len(x), len(y))
    vals = [_mmd2_unbiased(x[rng.choice(len(x), m, replace=False)], y[rng.choice(len(y), m, replace=False)])
            for _ in range(subsets)]
    return float(np.mean(vals))


def _city_of(name: str) -> str:
    return name.split("_", 1)[0]


def load_image_dir(path, size: int = 64) -> tuple:
    """PNG files -> (ids, (N, 3, size, size) array in [-1, 1]), sorted by name."""
    files = sorted(Path(path).glob("*.png"))
    ids, arrs = [], []
    for f in files:
        img = Image.open(f).convert("RGB")
        if img.size != (size, size):
            img = img.resize((size, size), Image.BILINEAR)
        arrs.append(np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 127.5 - 1.0)
        ids.append(f.stem)
    return ids, (np.stack(arrs) if arrs else np.zeros((0, 3, size, size)))


def load_features_jsonl(path) -> FeatureSet:
    ids, vecs = [], []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                ids.append(str(rec["id"]))
                vecs.append(rec["vec"])
    return FeatureSet(np.asarray(vecs, dtype=float), str(path), tuple(ids))


def save_features_jsonl(fs: FeatureSet, path):
    ids = fs.ids or tuple(str(i) for i in range(len(fs)))
    with open(path, "w") as fh:
        for i, v in zip(ids, fs.vectors):
            fh.write(json.dumps({"id": i, "vec": [float(x) for x in v]}) + "\n")


def _features_for(source, feature_source: str, seed: int, size: int) -> FeatureSet:
    p = Path(source)
    if feature_source == "builtin":
        ids, imgs = load_image_dir(p, size)
        if not ids:
            raise ValueError(f"no PNG images in {p}")
        fs = builtin_features(imgs, seed)
        return FeatureSet(fs.vectors, "builtin", tuple(ids))
    if feature_source == "jsonl":
        return load_features_jsonl(p)
    raise ValueError(f"unknown feature source {feature_source!r}")


def _pair_metrics(a: np.ndarray, b: np.ndarray, identical: bool, kid_subsets: int) -> dict:
    raw_kid = kid(a, b, subsets=kid_subsets)
    out = {"fid": fid(feature_stats(a), feature_stats(b)), "kid": 0.0 if identical else raw_kid,
           "kid_raw": raw_kid, "n_real": len(a), "n_gen": len(b)}
    if identical:
        out["identical_sets"] = True
    return out


def evaluate_run(real, gen, feature_source: str = "builtin", seed: int = 0, size: int = 64,
                 city_of=_city_of, kid_subsets: int = 0) -> dict:
    """Overall and per-city FID/KID between real and generated sets.

    ``real``/``gen`` are image directories (builtin features) or feature
    JSON-lines files. When both sets hold identical vectors the unbiased KID
    is still reported as ``kid_raw`` while ``kid`` is 0 and the pair is flagged.
    """
    fr = _features_for(real, feature_source, seed, size)
    fg = _features_for(gen, feature_source, seed, size)
    if len(fr) < 2 or len(fg) < 2:
        raise ValueError("each set needs at least 2 items")
    same = fr.vectors.shape == fg.vectors.shape and np.array_equal(fr.vectors, fg.vectors)
    report = {"overall": _pair_metrics(fr.vectors, fg.vectors, same, kid_subsets), "per_city": {}, "skipped": []}
    report["overall"]["n"] = len(fr) + len(fg)
    rc = np.array([city_of(i) for i in fr.ids])
    gc = np.array([city_of(i) for i in fg.ids])
    for city in sorted(set(rc) | set(gc)):
        a, b = fr.vectors[rc == city], fg.vectors[gc == city]
        if len(a) < 2 or len(b) < 2:
            log.warning("city %s skipped: %d real / %d generated items", city, len(a), len(b))
            report["skipped"].append(city)
            continue
        report["per_city"][city] = _pair_metrics(a, b, a.shape == b.shape and np.array_equal(a, b), kid_subsets)
    return report
