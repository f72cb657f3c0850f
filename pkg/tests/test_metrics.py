import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import sqrtm

from ratgan.data import make_dataset, make_text_encoder, encode_text
from ratgan.discriminator import make_frozen_encoder
from ratgan.errors import ShapeError, UsageError
from ratgan.metrics import (
    CSV_HEADER,
    SHRINKAGE,
    FeatureStats,
    MetricsWriter,
    clip_score,
    feature_stats,
    frechet_distance,
    read_metrics,
    toy_clip_score,
    toy_fid,
)
from ratgan.tensor import Tensor


def test_identical_vectors_give_shrinkage_only():
    s = feature_stats(np.tile([1.0, -2.0, 3.0], (5, 1)))
    assert np.array_equal(s.mean, [1.0, -2.0, 3.0])
    assert np.allclose(s.cov, SHRINKAGE * np.eye(3), atol=1e-18)


def test_two_point_set():
    v = np.array([0.5, -1.0, 2.0])
    s = feature_stats(np.stack([-v, v]))
    assert np.array_equal(s.mean, np.zeros(3))
    assert np.allclose(s.cov, np.outer(v, v) + SHRINKAGE * np.eye(3), atol=1e-15)


def test_feature_stats_two_pass_oracle():
    x = np.random.default_rng(0).normal(size=(40, 4))
    n, m = x.shape
    mu = [sum(x[i, j] for i in range(n)) / n for j in range(m)]
    cov = [[sum((x[i, a] - mu[a]) * (x[i, b] - mu[b]) for i in range(n)) / n for b in range(m)] for a in range(m)]
    s = feature_stats(x)
    assert np.allclose(s.mean, mu, atol=1e-14)
    assert np.allclose(s.cov, np.array(cov) + SHRINKAGE * np.eye(m), atol=1e-14)
    assert np.array_equal(s.cov, s.cov.T)
    assert np.linalg.eigvalsh(s.cov).min() >= -1e-8


def test_feature_stats_rejects_empty():
    with pytest.raises(UsageError):
        feature_stats(np.zeros((0, 3)))


def test_frechet_identical_is_zero():
    s = feature_stats(np.random.default_rng(1).normal(size=(50, 6)))
    assert abs(frechet_distance(s, s)) < 1e-8


def test_frechet_one_dimensional_closed_form():
    a = FeatureStats(np.array([0.0]), np.array([[1.0]]))
    b = FeatureStats(np.array([1.0]), np.array([[1.0]]))
    assert abs(frechet_distance(a, b) - 1.0) < 1e-9
    c = FeatureStats(np.array([1.0]), np.array([[4.0]]))
    assert abs(frechet_distance(a, c) - 2.0) < 1e-9  # 1 + (1 - 2)^2


@pytest.mark.parametrize("seed", range(5))
def test_frechet_diagonal_closed_form(seed):
    rng = np.random.default_rng(seed)
    mu_a, mu_b = rng.normal(size=3), rng.normal(size=3)
    va, vb = rng.uniform(0.1, 3, 3), rng.uniform(0.1, 3, 3)
    got = frechet_distance(FeatureStats(mu_a, np.diag(va)), FeatureStats(mu_b, np.diag(vb)))
    ref = sum((mu_a[i] - mu_b[i]) ** 2 + (va[i] ** 0.5 - vb[i] ** 0.5) ** 2 for i in range(3))
    assert got == pytest.approx(ref, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_frechet_symmetric_non_negative_and_matches_sqrtm(seed):
    rng = np.random.default_rng(seed)
    a = feature_stats(rng.normal(size=(12, 5)))
    b = feature_stats(rng.normal(1.0, 2.0, size=(9, 5)))
    dab, dba = frechet_distance(a, b), frechet_distance(b, a)
    assert dab >= 0 and abs(dab - dba) < 1e-8
    diff = a.mean - b.mean
    ref = diff @ diff + np.trace(a.cov + b.cov - 2 * sqrtm(a.cov @ b.cov).real)
    assert dab == pytest.approx(ref, rel=1e-6, abs=1e-8)


def test_frechet_errors():
    with pytest.raises(ShapeError):
        frechet_distance(FeatureStats(np.zeros(2), np.eye(2)), FeatureStats(np.zeros(3), np.eye(3)))
    bad = FeatureStats(np.zeros(2), np.diag([1.0, -1.0]))
    with pytest.raises(FloatingPointError):
        frechet_distance(bad, FeatureStats(np.zeros(2), np.eye(2)))


def test_clip_score_cases():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(6, 4))
    assert clip_score(v, v) == pytest.approx(100.0, abs=1e-12)
    assert clip_score(v, -v) == pytest.approx(-100.0, abs=1e-12)
    w = rng.normal(size=(6, 4))
    perm = rng.permutation(6)
    assert clip_score(v[perm], w[perm]) == pytest.approx(clip_score(v, w), abs=1e-12)
    with pytest.raises(ShapeError):
        clip_score(v, w[:5])


def test_toy_metrics_on_real_images():
    enc = make_frozen_encoder(0, 32)
    ds = make_dataset(8, seed=0, size=16)
    text = make_text_encoder(0)
    Ts = Tensor(np.stack([encode_text(c, text).data for c in ds.captions()]))
    imgs = Tensor(ds.images)
    cs = toy_clip_score(imgs, Ts, enc)
    assert -100 <= cs <= 100
    perm = np.random.default_rng(0).permutation(8)
    assert toy_clip_score(Tensor(ds.images[perm]), Tensor(Ts.data[perm]), enc) == pytest.approx(cs, abs=1e-10)
    assert abs(toy_fid(imgs, imgs, enc)) < 1e-8
    with pytest.raises(ShapeError):
        toy_clip_score(imgs, Tensor(Ts.data[:7]), enc)


def test_metrics_csv(tmp_path):
    path = tmp_path / "metrics.csv"
    w = MetricsWriter(path)
    w.write({"run_id": "r", "step": 10, "toy_fid": 1.5, "toy_cs": 2.0, "l_d": 0.1, "l_g": -0.2, "penalty": 0.0, "sim": 0.3})
    MetricsWriter(path, append=True).write(
        {"run_id": "r", "step": 20, "toy_fid": 1.0, "toy_cs": 3.0, "l_d": 0.1, "l_g": -0.2, "penalty": 0.0, "sim": 0.3}
    )
    assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    assert CSV_HEADER[:4] == ("run_id", "step", "toy_fid", "toy_cs")
    rows = read_metrics(path)
    assert [r["step"] for r in rows] == ["10", "20"] and float(rows[0]["toy_fid"]) == 1.5
