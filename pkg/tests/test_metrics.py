import json

import numpy as np
import pytest
import scipy.linalg
from PIL import Image

from urbandiff.metrics import (
    FeatureExtractor, FeatureSet, FeatureStats, builtin_features, evaluate_run, feature_stats, fid, kid,
    load_features_jsonl, polynomial_kernel, save_features_jsonl,
)


def stats(mu, sigma):
    return FeatureStats(np.asarray(mu, float), np.asarray(sigma, float))


def scipy_fid(a, b):
    covmean = scipy.linalg.sqrtm(a.sigma @ b.sigma).real
    d = a.mu - b.mu
    return float(d @ d + np.trace(a.sigma + b.sigma - 2 * covmean))


def loop_kid(x, y):
    # textbook unbiased MMD^2 written out pair by pair
    d = x.shape[1]
    k = lambda u, v: (u @ v / d + 1) ** 3
    m, n = len(x), len(y)
    sxx = sum(k(x[i], x[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    syy = sum(k(y[i], y[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    sxy = sum(k(x[i], y[j]) for i in range(m) for j in range(n)) / (m * n)
    return sxx + syy - 2 * sxy


# features


def test_builtin_features_conventions():
    rng = np.random.default_rng(0)
    img = rng.uniform(-1, 1, (3, 16, 16))
    other = img.copy()
    other[0, 3, 3] += 0.5
    f = builtin_features(np.stack([img, img, other, np.zeros((3, 16, 16))])).vectors
    assert f.shape == (4, 64)
    assert np.array_equal(f[0], f[1])
    assert not np.array_equal(f[0], f[2])
    assert not f[3].any()


def test_builtin_features_match_direct_computation():
    rng = np.random.default_rng(1)
    img = rng.uniform(-1, 1, (1, 3, 8, 8))
    # 8x8 pool on an 8x8 image is the identity; projection is the seeded Gaussian matrix
    proj = np.random.Generator(np.random.PCG64(0)).standard_normal((192, 64)) / np.sqrt(192)
    assert np.allclose(builtin_features(img).vectors[0], img.reshape(-1) @ proj, atol=1e-12)


def test_feature_extractor_estimator():
    X = np.zeros((2, 3, 16, 16))
    assert FeatureExtractor(dim=8).fit().transform(X).shape == (2, 8)
    with pytest.raises(ValueError):
        builtin_features(np.zeros((1, 3, 12, 12)))


# statistics


def test_feature_stats_hand_example():
    s = feature_stats(np.array([[0.0, 0.0], [2.0, 0.0]]))
    assert np.array_equal(s.mu, [1.0, 0.0])
    assert np.array_equal(s.sigma, [[2.0, 0.0], [0.0, 0.0]])
    assert not feature_stats(np.ones((2, 3))).sigma.any()
    with pytest.raises(ValueError):
        feature_stats(np.ones((1, 3)))


def test_feature_stats_monte_carlo():
    n = 20000
    s = feature_stats(np.random.default_rng(2).standard_normal((n, 4)))
    assert np.abs(s.sigma - np.eye(4)).max() < 3 / np.sqrt(n) * 2


# FID


def test_fid_closed_forms():
    d = 5
    a = stats(np.zeros(d), np.eye(d))
    assert fid(a, a) == 0.0
    mu = np.zeros(d)
    mu[0] = 1
    assert fid(a, stats(mu, np.eye(d))) == pytest.approx(1.0, abs=1e-6)
    assert fid(stats(np.zeros(3), 4 * np.eye(3)), stats(np.zeros(3), np.eye(3))) == pytest.approx(3.0, abs=1e-6)
    diag_a, diag_b = np.array([1.0, 4.0, 9.0]), np.array([0.25, 1.0, 16.0])
    expected = float(((np.sqrt(diag_a) - np.sqrt(diag_b)) ** 2).sum())
    assert fid(stats(np.zeros(3), np.diag(diag_a)), stats(np.zeros(3), np.diag(diag_b))) == pytest.approx(
        expected, abs=1e-6)


def test_fid_general_matches_scipy_and_is_symmetric():
    rng = np.random.default_rng(3)
    xa, xb = rng.standard_normal((200, 6)), rng.standard_normal((150, 6)) @ rng.standard_normal((6, 6)) + 0.5
    a, b = feature_stats(xa), feature_stats(xb)
    assert fid(a, b) == pytest.approx(scipy_fid(a, b), abs=1e-6)
    assert abs(fid(a, b) - fid(b, a)) < 1e-8


def test_fid_grows_with_mean_gap():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((500, 4))
    values = [fid(feature_stats(x), feature_stats(x + shift)) for shift in (0.5, 1.0, 2.0, 4.0)]
    assert values == sorted(values)
    assert values[-1] == pytest.approx(4 * 16, rel=1e-9)


def test_fid_rank_deficient_is_finite():
    x = np.random.default_rng(5).standard_normal((3, 10))  # N < d
    v = fid(feature_stats(x), feature_stats(x[::-1] + 1))
    assert np.isfinite(v) and v >= 0


def test_fid_dimension_mismatch():
    with pytest.raises(ValueError):
        fid(stats(np.zeros(2), np.eye(2)), stats(np.zeros(3), np.eye(3)))


# KID


def test_kernel_unit_example():
    u = np.ones((1, 3))
    assert polynomial_kernel(u, u)[0, 0] == 8.0


def test_kid_repeated_vectors_exactly_zero():
    v = np.random.default_rng(6).standard_normal(7)
    x = np.tile(v, (5, 1))
    assert kid(x, np.tile(v, (9, 1))) == 0.0


def test_kid_matches_pairwise_formula():
    rng = np.random.default_rng(7)
    x, y = rng.standard_normal((12, 4)), rng.standard_normal((9, 4)) + 0.3
    assert kid(x, y) == pytest.approx(loop_kid(x, y), abs=1e-10)


def test_kid_unbiased_monte_carlo():
    rng = np.random.default_rng(8)
    vals = np.array([kid(rng.standard_normal((100, 8)), rng.standard_normal((100, 8))) for _ in range(50)])
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean()) <= 3 * se


def test_kid_subsets_and_validation():
    rng = np.random.default_rng(9)
    x, y = rng.standard_normal((50, 3)), rng.standard_normal((40, 3)) + 2
    assert kid(x, y, subsets=5, subset_size=20, seed=1) == kid(x, y, subsets=5, subset_size=20, seed=1)
    assert kid(x, y, subsets=5, subset_size=20) > 0
    with pytest.raises(ValueError):
        kid(x[:1], y)
    with pytest.raises(ValueError):
        kid(x, y[:, :2])


# run evaluation


def write_images(d, names, seed):
    d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for n in names:
        Image.fromarray(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)).save(d / f"{n}.png")


def test_evaluate_identical_sets(tmp_path):
    write_images(tmp_path / "real", [f"la_{i}" for i in range(4)], 0)
    report = evaluate_run(tmp_path / "real", tmp_path / "real", size=16)
    o = report["overall"]
    assert o["fid"] == 0.0 and o["kid"] == 0.0 and o["identical_sets"]
    assert np.isfinite(o["kid_raw"])


def test_evaluate_per_city_and_skips(tmp_path):
    write_images(tmp_path / "real", [f"la_{i}" for i in range(4)] + ["dallas_0"], 1)
    write_images(tmp_path / "gen", [f"la_{i}" for i in range(3)] + ["dallas_0", "dallas_1"], 2)
    report = evaluate_run(tmp_path / "real", tmp_path / "gen", size=16)
    assert set(report["per_city"]) == {"la"} and report["skipped"] == ["dallas"]
    assert report["overall"]["n_real"] == 5 and report["overall"]["n_gen"] == 5
    assert all(np.isfinite(report["overall"][k]) for k in ("fid", "kid"))
    json.dumps(report)


def test_feature_jsonl_round_trip_and_eval(tmp_path):
    rng = np.random.default_rng(10)
    a = FeatureSet(rng.standard_normal((6, 4)), ids=tuple(f"la_{i}" for i in range(6)))
    b = FeatureSet(rng.standard_normal((6, 4)) + 3, ids=tuple(f"la_{i}" for i in range(6)))
    save_features_jsonl(a, tmp_path / "a.jsonl")
    save_features_jsonl(b, tmp_path / "b.jsonl")
    back = load_features_jsonl(tmp_path / "a.jsonl")
    assert np.array_equal(back.vectors, a.vectors) and back.ids == a.ids
    report = evaluate_run(tmp_path / "a.jsonl", tmp_path / "b.jsonl", feature_source="jsonl")
    assert report["overall"]["fid"] == pytest.approx(fid(feature_stats(a), feature_stats(b)))


def test_evaluate_rejects_unknown_source(tmp_path):
    with pytest.raises(ValueError):
        evaluate_run(tmp_path, tmp_path, feature_source="inception")
