"""Fréchet distance and CLIP-style similarity score on stub-encoder features."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .discriminator import FrozenEncoder, frozen_encode, image_embedding
from .errors import ShapeError, UsageError
from .functional import global_avg_pool
from .tensor import Tensor, no_grad

SHRINKAGE = 1e-6
PSD_TOL = 1e-8

CSV_HEADER = ("run_id", "step", "toy_fid", "toy_cs", "l_d", "l_g", "penalty", "sim")


@dataclass
class FeatureStats:
    mean: np.ndarray  # m
    cov: np.ndarray  # m × m


def feature_stats(features) -> FeatureStats:
    """Mean and (population) covariance plus ε·I shrinkage."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise UsageError(f"feature_stats needs a non-empty n×m array, got shape {x.shape}")
    mu = x.mean(axis=0)
    centered = x - mu
    cov = centered.T @ centered / x.shape[0]
    return FeatureStats(mu, cov + SHRINKAGE * np.eye(x.shape[1]))


def _psd_sqrt(a: np.ndarray, name: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    if vals.min() < -PSD_TOL:
        raise FloatingPointError(f"{name} is not positive semi-definite (min eigenvalue {vals.min():.3e})")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """‖μa − μb‖² + Tr(Σa + Σb − 2(ΣaΣb)^½).

    The trace of (ΣaΣb)^½ is taken from the symmetric PSD matrix
    Σa^½ Σb Σa^½, which has the same eigenvalues, so no complex
    arithmetic is needed.
    """
    if a.mean.shape != b.mean.shape:
        raise ShapeError(f"frechet_distance: dimensions {a.mean.shape} and {b.mean.shape} differ")
    root_a = _psd_sqrt(a.cov, "covariance a")
    _psd_sqrt(b.cov, "covariance b")
    inner = root_a @ b.cov @ root_a
    vals = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    if vals.min() < -PSD_TOL:
        raise FloatingPointError(f"Σa^½ Σb Σa^½ is not PSD (min eigenvalue {vals.min():.3e})")
    tr_covmean = float(np.sqrt(np.clip(vals, 0.0, None)).sum())
    diff = a.mean - b.mean
    d = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_covmean)
    return max(d, 0.0)


def pooled_features(images: Tensor, enc: FrozenEncoder, batch: int = 64) -> np.ndarray:
    """Globally pooled stub-encoder features, one row per image."""
    rows = []
    with no_grad():
        for i in range(0, images.shape[0], batch):
            rows.append(global_avg_pool(frozen_encode(Tensor(images.data[i : i + batch]), enc)).data)
    return np.concatenate(rows, axis=0)


def embeddings(images: Tensor, enc: FrozenEncoder, batch: int = 64) -> np.ndarray:
    rows = []
    with no_grad():
        for i in range(0, images.shape[0], batch):
            rows.append(image_embedding(frozen_encode(Tensor(images.data[i : i + batch]), enc), enc).data)
    return np.concatenate(rows, axis=0)


def clip_score(image_emb, Ts) -> float:
    """100 × mean cosine similarity between paired rows."""
    a = np.asarray(image_emb, dtype=np.float64)
    b = np.asarray(Ts, dtype=np.float64)
    if a.shape[0] == 0 or a.shape != b.shape:
        raise ShapeError(f"clip_score: {a.shape} embeddings vs {b.shape} sentences")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ZeroDivisionError("cosine similarity is undefined for a zero vector")
    return float(np.mean(np.sum(a * b, axis=1) / (na * nb)) * 100.0)


def toy_clip_score(images: Tensor, Ts: Tensor, enc: FrozenEncoder) -> float:
    if images.shape[0] != Ts.shape[0]:
        raise ShapeError(f"toy_clip_score: {images.shape[0]} images vs {Ts.shape[0]} sentences")
    return clip_score(embeddings(images, enc), Ts.data)


def toy_fid(real: Tensor, fake: Tensor, enc: FrozenEncoder) -> float:
    return frechet_distance(feature_stats(pooled_features(real, enc)), feature_stats(pooled_features(fake, enc)))


class MetricsWriter:
    """Append-only CSV of evaluation rows."""

    def __init__(self, path, append: bool = False):
        self.path = Path(path)
        if not append or not self.path.exists():
            with self.path.open("w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(CSV_HEADER)

    def write(self, row: dict) -> None:
        with self.path.open("a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(
                [row[k] if k in ("run_id", "step") else repr(float(row[k])) for k in CSV_HEADER]
            )


def read_metrics(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
