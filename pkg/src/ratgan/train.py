"""Adversarial training loop, run directories and resumption."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, check_shapes, load_checkpoint, save_checkpoint
from .config import TrainConfig, format_config
from .data import TextEncoder, encode_text, make_batch, make_dataset, make_text_encoder
from .discriminator import (
    DiscriminatorWeights,
    FrozenEncoder,
    critic,
    frozen_encode,
    image_embedding,
    init_discriminator,
    make_frozen_encoder,
)
from .errors import NonFiniteError
from .generator import GeneratorWeights, generate, init_generator
from .losses import cosine_similarity, generator_loss, gradient_penalty, hinge_d_terms
from .metrics import MetricsWriter, clip_score, embeddings, feature_stats, frechet_distance, pooled_features
from .nn import named_parameters
from .optim import AdamState, adam_step
from .ppm import tile, write_ppm
from .tensor import Tensor, grad, no_grad

log = logging.getLogger(__name__)


class TrainingAborted(NonFiniteError):
    """A loss or gradient went non-finite; carries the last good checkpoint."""

    def __init__(self, message: str, checkpoint: Path | None):
        super().__init__(f"{message}; last good checkpoint: {checkpoint or 'none'}")
        self.checkpoint = checkpoint


@dataclass
class Models:
    gen: GeneratorWeights
    disc: DiscriminatorWeights
    image_enc: FrozenEncoder
    text_enc: TextEncoder
    opt_g: AdamState
    opt_d: AdamState

    def gen_params(self) -> list[Tensor]:
        return [t for _, t in named_parameters(self.gen)]

    def disc_params(self) -> list[Tensor]:
        return [t for _, t in named_parameters(self.disc)]

    def frozen_fingerprint(self) -> str:
        return self.image_enc.fingerprint() + self.text_enc.fingerprint()


def build_models(cfg: TrainConfig) -> Models:
    rng = np.random.default_rng([cfg.seed, 0x4D4F44])
    gcfg = cfg.generator
    gen = init_generator(gcfg, rng)
    image_enc = make_frozen_encoder(cfg.encoder_seed, gcfg.sentence_dim)
    disc = init_discriminator(rng, image_enc.feature_dim, gcfg.sentence_dim, cfg.disc_width)
    text_enc = make_text_encoder(cfg.encoder_seed, gcfg.sentence_dim)
    gp = [t for _, t in named_parameters(gen)]
    dp = [t for _, t in named_parameters(disc)]
    return Models(gen, disc, image_enc, text_enc, AdamState.zeros_like(gp), AdamState.zeros_like(dp))


# ----------------------------------------------------------------------
# one optimization step
# ----------------------------------------------------------------------


def step_rng(cfg: TrainConfig, step: int, stream: int) -> np.random.Generator:
    """Randomness for ``step`` depends only on (seed, step, stream)."""
    return np.random.default_rng([cfg.seed, step, stream])


def train_step(batch, z: Tensor, models: Models, cfg: TrainConfig) -> dict:
    """One critic update (hinge + penalty) then one generator update.

    Returns the loss components as floats.
    """
    gcfg, hp = cfg.generator, cfg.loss
    gp, dp = models.gen_params(), models.disc_params()
    enc = models.image_enc

    fake = generate(z, batch.T, models.gen, gcfg)
    real_feats = frozen_encode(batch.images, enc)
    with no_grad():
        fake_feats = frozen_encode(Tensor(fake.data), enc)

    def score(f, t):
        return critic(f, t, models.disc)

    for _ in range(cfg.d_steps):
        s_real = score(real_feats, batch.T)
        s_fake = score(fake_feats, batch.T)
        s_mis = score(real_feats, batch.T_mis)
        penalty = gradient_penalty(real_feats, batch.T, score, hp)
        l_d = hinge_d_terms(s_real, s_fake, s_mis) + penalty
        _check_finite("critic loss", l_d)
        adam_step(dp, [g.data for g in grad(l_d, dp)], models.opt_d, cfg.lr_d, cfg.betas)

    feats = frozen_encode(fake, enc)
    s_gen = score(feats, batch.T)
    sim = cosine_similarity(image_embedding(feats, enc), batch.T)
    l_g = generator_loss(s_gen, sim, hp)
    _check_finite("generator loss", l_g)
    adam_step(gp, [g.data for g in grad(l_g, gp)], models.opt_g, cfg.lr_g, cfg.betas)
    return {"l_d": l_d.item(), "l_g": l_g.item(), "penalty": penalty.item(), "sim": sim.mean().item()}


def _check_finite(name: str, t: Tensor) -> None:
    if not np.isfinite(t.data).all():
        raise NonFiniteError(f"{name} is not finite")


# ----------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------


@dataclass
class EvalSet:
    images: Tensor
    T: Tensor
    T_shuffled: Tensor
    z: Tensor
    real_stats: object = None


def make_eval_set(cfg: TrainConfig, text_enc: TextEncoder, image_enc: FrozenEncoder) -> EvalSet:
    """Held-out scenes and noise, fixed by ``encoder_seed`` so every run sees the same set."""
    ds = make_dataset(cfg.n_eval, seed=cfg.encoder_seed + 7919, size=cfg.generator.image_size)
    T = np.stack([encode_text(c, text_enc).data for c in ds.captions()])
    z = np.random.default_rng([cfg.encoder_seed, 0x5A]).normal(size=(cfg.n_eval, cfg.generator.noise_dim))
    images = Tensor(ds.images)
    stats = feature_stats(pooled_features(images, image_enc))
    return EvalSet(images, Tensor(T), Tensor(np.roll(T, 1, axis=0)), Tensor(z), stats)


def generate_batched(z: Tensor, T: Tensor, gen: GeneratorWeights, cfg, batch: int = 64) -> Tensor:
    out = []
    with no_grad():
        for i in range(0, z.shape[0], batch):
            out.append(generate(Tensor(z.data[i : i + batch]), Tensor(T.data[i : i + batch]), gen, cfg).data)
    return Tensor(np.concatenate(out, axis=0))


def evaluate(models: Models, ev: EvalSet, cfg: TrainConfig) -> dict:
    fake = generate_batched(ev.z, ev.T, models.gen, cfg.generator)
    emb = embeddings(fake, models.image_enc)
    fake_stats = feature_stats(pooled_features(fake, models.image_enc))
    return {
        "toy_fid": frechet_distance(ev.real_stats, fake_stats),
        "toy_cs": clip_score(emb, ev.T.data),
        "toy_cs_shuffled": clip_score(emb, ev.T_shuffled.data),
        "images": fake,
    }


# ----------------------------------------------------------------------
# checkpoint <-> models
# ----------------------------------------------------------------------


def model_tensors(models: Models) -> dict:
    out = {}
    for prefix, tree in (("gen", models.gen), ("disc", models.disc)):
        for name, t in named_parameters(tree):
            out[f"{prefix}.{name}"] = t.data
    for prefix, tree, opt in (("opt_g", models.gen, models.opt_g), ("opt_d", models.disc, models.opt_d)):
        names = [n for n, _ in named_parameters(tree)]
        for name, m in zip(names, opt.m):
            out[f"{prefix}.m.{name}"] = m
        for name, v in zip(names, opt.v):
            out[f"{prefix}.v.{name}"] = v
        out[f"{prefix}.step"] = np.array([float(opt.step)])
    return out


def expected_shapes(cfg: TrainConfig) -> dict:
    return {k: v.shape for k, v in model_tensors(build_models(cfg)).items()}


def to_checkpoint(models: Models, cfg: TrainConfig, step: int) -> Checkpoint:
    tensors = {k: np.array(v, copy=True) for k, v in model_tensors(models).items()}
    rng_state = step_rng(cfg, step, 0).bit_generator.state
    return Checkpoint(cfg, tensors, step, _jsonable(rng_state))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def restore_models(ckpt: Checkpoint, cfg: TrainConfig | None = None) -> Models:
    """Models for ``cfg`` (default: the checkpoint's own) loaded from ``ckpt``."""
    cfg = ckpt.config if cfg is None else cfg
    models = build_models(cfg)
    table = model_tensors(models)
    check_shapes(ckpt, {k: v.shape for k, v in table.items()})
    for prefix, tree in (("gen", models.gen), ("disc", models.disc)):
        for name, t in named_parameters(tree):
            t.data = np.array(ckpt.tensors[f"{prefix}.{name}"], copy=True)
    for prefix, tree, opt in (("opt_g", models.gen, models.opt_g), ("opt_d", models.disc, models.opt_d)):
        names = [n for n, _ in named_parameters(tree)]
        opt.m = [np.array(ckpt.tensors[f"{prefix}.m.{n}"], copy=True) for n in names]
        opt.v = [np.array(ckpt.tensors[f"{prefix}.v.{n}"], copy=True) for n in names]
        opt.step = int(ckpt.tensors[f"{prefix}.step"][0])
    return models


# ----------------------------------------------------------------------
# full runs
# ----------------------------------------------------------------------


@dataclass
class RunResult:
    run_dir: Path
    step: int
    final_metrics: dict = field(default_factory=dict)
    data_hash: str = ""
    frozen_fingerprint: str = ""


def _seeded_batch(cfg: TrainConfig, step: int, text_enc: TextEncoder):
    batch = make_batch(cfg.batch_size, step_rng(cfg, step, 1), text_enc, cfg.generator.image_size)
    z = Tensor(step_rng(cfg, step, 2).normal(size=(cfg.batch_size, cfg.generator.noise_dim)))
    return batch, z


def train(cfg: TrainConfig, run_dir, resume=None, stop_at: int | None = None) -> RunResult:
    """Train for ``cfg.steps`` steps, writing checkpoints, metrics and samples.

    ``stop_at`` ends the run early (after that many total steps) while
    keeping the schedule of ``cfg`` - used to produce resumable prefixes.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        ckpt = load_checkpoint(resume)
        models = restore_models(ckpt, cfg)
        start = ckpt.step
    else:
        models = build_models(cfg)
        start = 0
        (run_dir / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    metrics = MetricsWriter(run_dir / "metrics.csv", append=resume is not None)
    trace_path = run_dir / "trace.csv"
    if resume is None or not trace_path.exists():
        trace_path.write_text("step,l_d,l_g,penalty,sim\n")
    ev = make_eval_set(cfg, models.text_enc, models.image_enc)
    frozen = models.frozen_fingerprint()
    data_hash = hashlib.sha256()
    end = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
    last_ckpt = Path(resume) if resume is not None else None
    final = {}
    losses = {}
    for step in range(start + 1, end + 1):
        batch, z = _seeded_batch(cfg, step, models.text_enc)
        data_hash.update(batch.digest().encode())
        try:
            losses = train_step(batch, z, models, cfg)
        except NonFiniteError as exc:
            raise TrainingAborted(f"step {step}: {exc}", last_ckpt) from exc
        if models.frozen_fingerprint() != frozen:
            raise RuntimeError(f"step {step}: frozen encoder weights changed")
        with trace_path.open("a") as fh:
            fh.write(f"{step},{losses['l_d']!r},{losses['l_g']!r},{losses['penalty']!r},{losses['sim']!r}\n")
        if step % cfg.eval_interval == 0:
            result = evaluate(models, ev, cfg)
            final = {k: v for k, v in result.items() if k != "images"}
            metrics.write({"run_id": cfg.run_id, "step": step, **final, **losses})
            log.info("%s step %d fid %.4f cs %.3f (shuffled %.3f)", cfg.run_id, step, final["toy_fid"], final["toy_cs"], final["toy_cs_shuffled"])
            if step % cfg.image_interval == 0:
                write_ppm(run_dir / f"samples_{step:06d}.ppm", tile(result["images"].data[:32]))
        if step % cfg.checkpoint_interval == 0 or step == end:
            last_ckpt = run_dir / "checkpoint.ratc"
            save_checkpoint(last_ckpt, to_checkpoint(models, cfg, step))
    if end == start:
        save_checkpoint(run_dir / "checkpoint.ratc", to_checkpoint(models, cfg, end))
    return RunResult(run_dir, end, final, data_hash.hexdigest(), frozen)
