"""Procedural caption -> image data and the frozen stub text encoder.

Scenes are single colored shapes on a gray background, described by
templated captions. Everything is a pure function of integer seeds.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ShapeError, VocabularyError
from .tensor import Tensor

SHAPES = ("circle", "square", "triangle")
COLORS = ("red", "green", "blue", "yellow", "purple")
SIZES = ("small", "large")
POSITIONS = ("top", "bottom", "left", "right", "center")

RGB = {
    "red": (1.0, -1.0, -1.0),
    "green": (-1.0, 1.0, -1.0),
    "blue": (-1.0, -1.0, 1.0),
    "yellow": (1.0, 1.0, -1.0),
    "purple": (0.4, -1.0, 0.8),
}
BACKGROUND = 0.0
RADIUS = {"small": 0.17, "large": 0.3}
CENTERS = {  # (x, y) as fractions of the image side
    "top": (0.5, 0.28),
    "bottom": (0.5, 0.72),
    "left": (0.28, 0.5),
    "right": (0.72, 0.5),
    "center": (0.5, 0.5),
}
JITTER = 0.012
SUPERSAMPLE = 4

TEMPLATES = (
    "a {size} {color} {shape} at the {position}",
    "there is a {size} {color} {shape} at the {position}",
    "the {color} {shape} is {size} and at the {position}",
    "a {color} {shape} of {size} size in the {position}",
    "the image shows a {size} {color} {shape} in the {position}",
    "a {shape} that is {color} and {size} at the {position}",
    "in the {position} there is a {size} {color} {shape}",
    "the {shape} in the {position} is {size} and {color}",
    "a {size} {shape} in {color} at the {position}",
    "at the {position} is a {color} {shape} of {size} size",
)

GLUE = ("a", "at", "the", "there", "is", "and", "of", "size", "in", "image", "shows", "that")
VOCABULARY = SHAPES + COLORS + SIZES + POSITIONS + GLUE


@dataclass(frozen=True)
class Scene:
    shape: str
    color: str
    size: str
    position: str
    seed: int

    def __post_init__(self):
        for value, allowed in ((self.shape, SHAPES), (self.color, COLORS), (self.size, SIZES), (self.position, POSITIONS)):
            if value not in allowed:
                raise ConfigError(f"scene attribute {value!r} not in {allowed}")


@dataclass(frozen=True)
class Caption:
    tokens: tuple

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def __str__(self):
        return self.text


def tokenize(text: str) -> Caption:
    return Caption(tuple(text.lower().split()))


def sample_scene(rng: np.random.Generator) -> Scene:
    return Scene(
        SHAPES[int(rng.integers(len(SHAPES)))],
        COLORS[int(rng.integers(len(COLORS)))],
        SIZES[int(rng.integers(len(SIZES)))],
        POSITIONS[int(rng.integers(len(POSITIONS)))],
        int(rng.integers(2**31)),
    )


def _inside(shape: str, dx: np.ndarray, dy: np.ndarray, r: float) -> np.ndarray:
    if shape == "circle":
        return dx * dx + dy * dy <= r * r
    if shape == "square":
        half = 0.85 * r
        return (np.abs(dx) <= half) & (np.abs(dy) <= half)
    # upward triangle, symmetric about the vertical axis
    top, bottom = -r, 0.5 * r
    t = (dy - top) / (bottom - top)
    return (dy >= top) & (dy <= bottom) & (np.abs(dx) <= t * 0.866 * r)


def render_scene(scene: Scene, size: int = 32) -> Tensor:
    """Anti-aliased 3×size×size raster in [-1, 1] (4× supersampled, box filtered)."""
    if size < 16:
        raise ConfigError(f"render size must be >= 16, got {size}")
    jitter = np.random.default_rng(scene.seed).uniform(-JITTER, JITTER, 2)
    cx, cy = CENTERS[scene.position]
    cx = (cx + jitter[0]) * size
    cy = (cy + jitter[1]) * size
    r = RADIUS[scene.size] * size
    n = size * SUPERSAMPLE
    coords = (np.arange(n) + 0.5) / SUPERSAMPLE
    xs, ys = np.meshgrid(coords, coords)
    cover = _inside(scene.shape, xs - cx, ys - cy, r).astype(np.float64)
    cover = cover.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(1, 3))
    color = np.asarray(RGB[scene.color])[:, None, None]
    return Tensor(BACKGROUND + cover[None] * (color - BACKGROUND))


def caption_of(scene: Scene, template_id: int) -> Caption:
    if not 0 <= template_id < len(TEMPLATES):
        raise ConfigError(f"template_id must be in [0, {len(TEMPLATES) - 1}], got {template_id}")
    text = TEMPLATES[template_id].format(shape=scene.shape, color=scene.color, size=scene.size, position=scene.position)
    return tokenize(text)


@dataclass
class TextEncoder:
    """Frozen random word-embedding table; sentences are normalized mean embeddings."""

    table: Tensor  # vocab × d
    vocabulary: tuple
    seed: int

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def fingerprint(self) -> str:
        return hashlib.sha256(self.table.data.tobytes()).hexdigest()


def make_text_encoder(seed: int, dim: int = 32) -> TextEncoder:
    rng = np.random.default_rng([seed, 0x545854])
    return TextEncoder(Tensor(rng.normal(0.0, 1.0, (len(VOCABULARY), dim))), VOCABULARY, seed)


def encode_text(caption: Caption | str, enc: TextEncoder) -> Tensor:
    """Sentence vector T (unit norm) for a caption."""
    if isinstance(caption, str):
        caption = tokenize(caption)
    index = {w: i for i, w in enumerate(enc.vocabulary)}
    unknown = [w for w in caption.tokens if w not in index]
    if unknown or not caption.tokens:
        raise VocabularyError(f"unknown tokens {unknown or ['<empty>']}; vocabulary: {' '.join(enc.vocabulary)}")
    rows = enc.table.data[[index[w] for w in caption.tokens]]
    v = rows.mean(axis=0)
    return Tensor(v / np.linalg.norm(v))


@dataclass
class Batch:
    images: Tensor  # n×3×S×S
    T: Tensor  # n×d, matched captions
    T_mis: Tensor  # n×d, another sample's caption
    scenes: list
    captions: list
    mismatch: np.ndarray  # index of the caption used for each T_mis row

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.images.data, self.T.data, self.T_mis.data):
            h.update(a.tobytes())
        return h.hexdigest()


def make_batch(n: int, rng: np.random.Generator, enc: TextEncoder, size: int = 32) -> Batch:
    """Render n scenes with matched and deranged (mismatched) sentence vectors."""
    if n < 2:
        raise ShapeError(f"make_batch needs n >= 2 for a mismatched pairing, got {n}")
    seeds = rng.integers(2**63, size=n)
    scenes, captions = [], []
    for s in seeds:
        sub = np.random.default_rng(int(s))
        scene = sample_scene(sub)
        scenes.append(scene)
        captions.append(caption_of(scene, int(sub.integers(len(TEMPLATES)))))
    # a random cyclic derangement: follow a random ordering one step forward
    order = rng.permutation(n)
    mismatch = np.empty(n, dtype=np.int64)
    mismatch[order] = np.roll(order, -1)
    images = np.stack([render_scene(s, size).data for s in scenes])
    T = np.stack([encode_text(c, enc).data for c in captions])
    return Batch(Tensor(images), Tensor(T), Tensor(T[mismatch]), scenes, captions, mismatch)


# ----------------------------------------------------------------------
# dataset file: b"RATD", version, count, image size, then per sample
# (shape, color, size, position, template, seed) + float64 raster
# ----------------------------------------------------------------------

DATASET_MAGIC = b"RATD"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sBIH")
_RECORD = struct.Struct("<BBBBBQ")


@dataclass
class Dataset:
    scenes: list
    template_ids: list
    images: np.ndarray  # n×3×S×S

    def captions(self) -> list:
        return [caption_of(s, t) for s, t in zip(self.scenes, self.template_ids)]


def make_dataset(n: int, seed: int, size: int = 32) -> Dataset:
    rng = np.random.default_rng([seed, 0x444154])
    scenes, templates = [], []
    for s in rng.integers(2**63, size=n):
        sub = np.random.default_rng(int(s))
        scenes.append(sample_scene(sub))
        templates.append(int(sub.integers(len(TEMPLATES))))
    images = np.stack([render_scene(s, size).data for s in scenes]) if n else np.zeros((0, 3, size, size))
    return Dataset(scenes, templates, images)


def dump_dataset(path, ds: Dataset) -> None:
    n = len(ds.scenes)
    size = ds.images.shape[-1] if n else 0
    parts = [_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, size)]
    for scene, tid, img in zip(ds.scenes, ds.template_ids, ds.images):
        parts.append(
            _RECORD.pack(
                SHAPES.index(scene.shape),
                COLORS.index(scene.color),
                SIZES.index(scene.size),
                POSITIONS.index(scene.position),
                tid,
                scene.seed,
            )
        )
        parts.append(np.ascontiguousarray(img, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated dataset header")
    magic, version, n, size = _HEADER.unpack_from(raw, 0)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {DATASET_MAGIC!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    raster = 3 * size * size * 8
    expected = _HEADER.size + n * (_RECORD.size + raster)
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    scenes, templates, images = [], [], []
    off = _HEADER.size
    try:
        for _ in range(n):
            si, ci, zi, pi, tid, seed = _RECORD.unpack_from(raw, off)
            off += _RECORD.size
            scenes.append(Scene(SHAPES[si], COLORS[ci], SIZES[zi], POSITIONS[pi], seed))
            if tid >= len(TEMPLATES):
                raise FormatError(f"{path}: template id {tid} out of range")
            templates.append(tid)
            images.append(np.frombuffer(raw, dtype="<f8", count=3 * size * size, offset=off).reshape(3, size, size))
            off += raster
    except (IndexError, ConfigError) as exc:
        raise FormatError(f"{path}: corrupt scene record ({exc})") from exc
    arr = np.stack(images).astype(np.float64) if n else np.zeros((0, 3, size, size))
    return Dataset(scenes, templates, arr)
