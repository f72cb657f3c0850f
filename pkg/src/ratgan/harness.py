"""Experiment harnesses built on :func:`train`: ablation, hidden-size sweep, sampling, evaluation."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import TrainConfig
from .data import encode_text, load_dataset
from .generator import GeneratorConfig, count_parameters, init_generator
from .metrics import clip_score, embeddings, feature_stats, frechet_distance, pooled_features
from .ppm import write_ppm
from .tensor import Tensor
from .train import build_models, generate_batched, restore_models, train

ARMS = ("CAT", "RAT", "RAT+SA")


def generator_parameter_count(cfg: GeneratorConfig) -> int:
    return count_parameters(init_generator(cfg, np.random.default_rng(0)))


def recurrent_parameter_formula(cfg: GeneratorConfig) -> int:
    """Closed-form count of the parameters a hidden size D adds over D = 0.

    LSTM gates 4D(d+D)+4D, the (h0, c0) projections of z 2(dz·D+D), and a
    γ/β predictor per block 2(D·C+C).
    """
    if cfg.conditioning_mode == "CAT" or cfg.num_rat_blocks == 0 or cfg.hidden_dim == 0:
        return 0
    D, d, dz, C = cfg.hidden_dim, cfg.sentence_dim, cfg.noise_dim, cfg.base_channels
    lstm = 4 * D * (d + D) + 4 * D
    init = 2 * (dz * D + D)
    predictors = cfg.num_rat_blocks * 2 * (D * C + C)
    return lstm + init + predictors


# ----------------------------------------------------------------------
# ablation
# ----------------------------------------------------------------------


@dataclass
class RunRow:
    arm: str
    seed: int
    toy_cs: float
    toy_fid: float
    toy_cs_shuffled: float
    params: int
    data_hash: str
    frozen_fingerprint: str
    finite: bool = True


@dataclass
class AblationReport:
    rows: list = field(default_factory=list)

    def arm_rows(self, arm: str) -> list[RunRow]:
        return [r for r in self.rows if r.arm == arm]

    def summary(self, arm: str, key: str) -> tuple[float, float]:
        vals = [getattr(r, key) for r in self.arm_rows(arm)]
        sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
        return statistics.fmean(vals), sd

    @property
    def verdict(self) -> str:
        sa, _ = self.summary("RAT+SA", "toy_cs")
        cat, _ = self.summary("CAT", "toy_cs")
        rat, _ = self.summary("RAT", "toy_cs")
        trend = "holds" if sa >= cat - 0.5 else "does not hold"
        return (
            f"RAT+SA vs CAT toy_cs {sa:.3f} vs {cat:.3f} (soft gate >= CAT - 0.5: {trend}); "
            f"RAT+SA vs RAT {sa:.3f} vs {rat:.3f} ({'>=' if sa >= rat else '<'})"
        )

    def format(self) -> str:
        lines = ["arm,seed,toy_cs,toy_fid,toy_cs_shuffled,params,data_hash"]
        for r in self.rows:
            lines.append(f"{r.arm},{r.seed},{r.toy_cs!r},{r.toy_fid!r},{r.toy_cs_shuffled!r},{r.params},{r.data_hash}")
        lines.append("")
        for arm in ARMS:
            if self.arm_rows(arm):
                cs, cs_sd = self.summary(arm, "toy_cs")
                fid, fid_sd = self.summary(arm, "toy_fid")
                lines.append(f"{arm}: toy_cs {cs:.3f} ± {cs_sd:.3f}  toy_fid {fid:.4f} ± {fid_sd:.4f}")
        lines.append(self.verdict)
        return "\n".join(lines) + "\n"


def _run_row(arm: str, seed: int, cfg: TrainConfig, run_dir: Path) -> RunRow:
    res = train(cfg, run_dir)
    m = res.final_metrics
    finite = all(np.isfinite(v) for v in m.values())
    return RunRow(
        arm, seed, m["toy_cs"], m["toy_fid"], m["toy_cs_shuffled"],
        generator_parameter_count(cfg.generator), res.data_hash, res.frozen_fingerprint, finite,
    )


def ablate(base_cfg: TrainConfig, root, seeds: int = 3, arms=ARMS) -> AblationReport:
    """Train every arm for each of ``seeds`` seeds on identical data streams."""
    root = Path(root)
    report = AblationReport()
    for s in range(seeds):
        seed = base_cfg.seed + s
        for arm in arms:
            tag = f"{arm.replace('+', '_')}-s{seed}"
            cfg = base_cfg.replace(conditioning_mode=arm, seed=seed, run_id=tag)
            if cfg.eval_interval > cfg.steps:
                cfg = cfg.replace(eval_interval=max(cfg.steps, 1))
            report.rows.append(_run_row(arm, seed, cfg, root / tag))
    (root / "ablation.txt").write_text(report.format(), encoding="utf-8")
    return report


# ----------------------------------------------------------------------
# hidden-size sweep
# ----------------------------------------------------------------------


@dataclass
class SweepRow:
    hidden_dim: int
    params: int
    formula_delta: int
    toy_cs: float
    toy_fid: float


def sweep_hidden(base_cfg: TrainConfig, dims, root) -> list[SweepRow]:
    """Train the base arm (RAT if the base is CAT) at each hidden size.

    D = 0 removes the LSTM and its predictors but keeps the block layout.
    """
    dims = [int(d) for d in dims]
    if not dims:
        raise ValueError("sweep_hidden needs at least one hidden size")
    root = Path(root)
    rows = []
    for D in dims:
        cfg = base_cfg.replace(hidden_dim=D, run_id=f"hidden-{D}")
        if cfg.conditioning_mode == "CAT":
            cfg = cfg.replace(conditioning_mode="RAT")
        if cfg.eval_interval > cfg.steps:
            cfg = cfg.replace(eval_interval=max(cfg.steps, 1))
        m = train(cfg, root / f"hidden-{D}").final_metrics
        rows.append(
            SweepRow(D, generator_parameter_count(cfg.generator), recurrent_parameter_formula(cfg.generator), m["toy_cs"], m["toy_fid"])
        )
    lines = ["hidden_dim,params,formula_delta,toy_cs,toy_fid"]
    lines += [f"{r.hidden_dim},{r.params},{r.formula_delta},{r.toy_cs!r},{r.toy_fid!r}" for r in rows]
    (root / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows


# ----------------------------------------------------------------------
# sampling and evaluation from checkpoints
# ----------------------------------------------------------------------


def sample(ckpt_path, caption: str, n: int, out_dir, seed: int = 0) -> list[Path]:
    """Write ``n`` images for one caption, each from its own noise draw."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    ckpt = load_checkpoint(ckpt_path)
    models, cfg = restore_models(ckpt), ckpt.config
    T = encode_text(caption, models.text_enc)
    z = np.random.default_rng(seed).normal(size=(n, cfg.generator.noise_dim))
    images = generate_batched(Tensor(z), Tensor(np.tile(T.data, (n, 1))), models.gen, cfg.generator)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n):
        path = out_dir / f"sample_{i:04d}.ppm"
        write_ppm(path, images.data[i])
        paths.append(path)
    return paths


def evaluate_checkpoint(ckpt_path, dataset_path) -> dict:
    """toy_fid and toy_cs of a checkpoint against a dumped dataset."""
    ckpt = load_checkpoint(ckpt_path)
    models = restore_models(ckpt)
    cfg = ckpt.config
    ds = load_dataset(dataset_path)
    if ds.images.shape[-1] != cfg.generator.image_size:
        raise ValueError(f"dataset images are {ds.images.shape[-1]}px, checkpoint generates {cfg.generator.image_size}px")
    T = np.stack([encode_text(c, models.text_enc).data for c in ds.captions()])
    z = np.random.default_rng([cfg.encoder_seed, 0x5A]).normal(size=(len(T), cfg.generator.noise_dim))
    fake = generate_batched(Tensor(z), Tensor(T), models.gen, cfg.generator)
    real_stats = feature_stats(pooled_features(Tensor(ds.images), models.image_enc))
    fake_stats = feature_stats(pooled_features(fake, models.image_enc))
    emb = embeddings(fake, models.image_enc)
    return {
        "step": ckpt.step,
        "toy_fid": frechet_distance(real_stats, fake_stats),
        "toy_cs": clip_score(emb, T),
        "toy_cs_shuffled": clip_score(emb, np.roll(T, 1, axis=0)),
    }


__all__ = [
    "ARMS", "AblationReport", "RunRow", "SweepRow", "ablate", "build_models", "evaluate_checkpoint",
    "generator_parameter_count", "recurrent_parameter_formula", "sample", "sweep_hidden",
]
