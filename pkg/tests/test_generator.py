import dataclasses

import numpy as np
import pytest

from ratgan import functional as F
from ratgan.conditioning import shuffle_attention_forward
from ratgan.errors import ConfigError, ShapeError
from ratgan.generator import (
    GeneratorConfig,
    count_parameters,
    generate,
    image_g_forward,
    init_generator,
    rat_bridge_forward,
)
from ratgan.harness import generator_parameter_count, recurrent_parameter_formula
from ratgan.nn import named_parameters, parameters
from ratgan.tensor import Tensor, leaky_relu

SMALL = GeneratorConfig(noise_dim=6, sentence_dim=5, hidden_dim=4, num_rat_blocks=2, base_channels=8, image_size=16, sa_groups=2)


def inputs(cfg, seed=0, n=None):
    rng = np.random.default_rng(seed)
    lead = () if n is None else (n,)
    return Tensor(rng.normal(size=lead + (cfg.noise_dim,))), Tensor(rng.normal(size=lead + (cfg.sentence_dim,)))


@pytest.mark.parametrize(
    "changes",
    [{}, {"num_rat_blocks": 0}, {"num_rat_blocks": 4, "image_size": 32}, {"conditioning_mode": "CAT"},
     {"conditioning_mode": "RAT", "hidden_dim": 0}, {"sa_placement": "after_first"}, {"image_size": 64}],
)
def test_shapes(changes):
    cfg = dataclasses.replace(SMALL, **changes)
    w = init_generator(cfg, np.random.default_rng(0))
    z, T = inputs(cfg)
    assert rat_bridge_forward(z, T, w.bridge, cfg).shape == cfg.bridge_shape
    img = generate(z, T, w, cfg)
    assert img.shape == (3, cfg.image_size, cfg.image_size)
    zb, Tb = inputs(cfg, n=3)
    assert generate(zb, Tb, w, cfg).shape == (3, 3, cfg.image_size, cfg.image_size)


def test_batched_matches_unbatched():
    w = init_generator(SMALL, np.random.default_rng(0))
    zb, Tb = inputs(SMALL, n=3)
    batched = generate(zb, Tb, w, SMALL).data
    for i in range(3):
        one = generate(Tensor(zb.data[i]), Tensor(Tb.data[i]), w, SMALL).data
        assert np.allclose(batched[i], one, atol=1e-13)


def test_deterministic():
    w = init_generator(SMALL, np.random.default_rng(0))
    z, T = inputs(SMALL)
    assert np.array_equal(generate(z, T, w, SMALL).data, generate(z, T, w, SMALL).data)
    w2 = init_generator(SMALL, np.random.default_rng(0))
    assert np.array_equal(generate(z, T, w2, SMALL).data, generate(z, T, w, SMALL).data)


@pytest.mark.parametrize("mode", ["RAT", "RAT+SA"])
def test_bridge_with_neutral_conditioning_is_the_plain_path(mode):
    cfg = dataclasses.replace(SMALL, conditioning_mode=mode)
    rng = np.random.default_rng(1)
    w = init_generator(cfg, rng)
    b = w.bridge
    for p in parameters([b.lstm, b.lstm_init]) + parameters([blk.predictor for blk in b.blocks]):
        p.data = np.zeros(p.shape)
    for blk in b.blocks:
        blk.predictor.gamma.bias.data = np.ones(cfg.base_channels)
        blk.conv.weight.data = rng.normal(0, 0.2, blk.conv.weight.shape)
    z, T = inputs(cfg, 2)
    x = b.seed(z).reshape((cfg.base_channels, 4, 4))
    for blk in b.blocks:
        x = blk.conv(leaky_relu(x))
    if b.saconvs:
        x = b.saconvs[0].conv(shuffle_attention_forward(x, cfg.sa_groups, b.saconvs[0].attention))
    x = F.nearest_upsample(x, 2)
    assert np.max(np.abs(rat_bridge_forward(z, T, b, cfg).data - x.data)) < 1e-14


def test_sa_placement_changes_the_graph():
    base = dataclasses.replace(SMALL, conditioning_mode="RAT+SA")
    rng = np.random.default_rng(0)
    w = init_generator(base, rng)
    for p in parameters(w):
        p.data = p.data + rng.normal(0, 0.3, p.shape)
    z, T = inputs(base)
    other = dataclasses.replace(base, sa_placement="after_first")
    assert not np.allclose(generate(z, T, w, base).data, generate(z, T, w, other).data)


def test_image_g_range_and_zero_output_conv():
    rng = np.random.default_rng(0)
    w = init_generator(SMALL, rng)
    for p in parameters(w.image_g):
        p.data = rng.normal(0, 2.0, p.shape)
    z, T = inputs(SMALL)
    f = Tensor(rng.normal(0, 3.0, SMALL.bridge_shape))
    img = image_g_forward(f, z, T, w.image_g, SMALL.image_size).data
    assert img.shape == (3, 16, 16) and np.abs(img).max() <= 1.0
    w.image_g.conv_out.weight.data[:] = 0.0
    w.image_g.conv_out.bias.data[:] = 0.0
    assert np.array_equal(image_g_forward(f, z, T, w.image_g, 16).data, np.zeros((3, 16, 16)))


@pytest.mark.parametrize("seed", range(10))
def test_text_changes_output(seed):
    w = init_generator(SMALL, np.random.default_rng(seed))
    z, T1 = inputs(SMALL, seed)
    T2 = Tensor(np.random.default_rng(seed + 100).normal(size=SMALL.sentence_dim))
    assert np.linalg.norm(generate(z, T1, w, SMALL).data - generate(z, T2, w, SMALL).data) > 0


def test_input_validation():
    w = init_generator(SMALL, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        generate(Tensor(np.zeros(3)), Tensor(np.zeros(5)), w, SMALL)
    for bad in [{"num_rat_blocks": 3}, {"image_size": 24}, {"base_channels": 6, "sa_groups": 2},
                {"conditioning_mode": "FiLM"}, {"sa_placement": "everywhere"}, {"num_rat_blocks": 6, "image_size": 16}]:
        with pytest.raises(ConfigError):
            dataclasses.replace(SMALL, **bad)


# ---------------------------------------------------------------- parameter counts


def test_zero_block_bridge_is_seed_only():
    cfg = dataclasses.replace(SMALL, num_rat_blocks=0)
    w = init_generator(cfg, np.random.default_rng(0))
    assert count_parameters(w.bridge) == cfg.noise_dim * cfg.base_channels * 16 + cfg.base_channels * 16


def _shape_sum(cfg: GeneratorConfig) -> int:
    """Independent count from the architecture description."""
    C, D, d, dz, n = cfg.base_channels, cfg.hidden_dim, cfg.sentence_dim, cfg.noise_dim, cfg.num_rat_blocks
    conv = lambda ci, co: co * ci * 9 + co
    total = dz * C * 16 + C * 16  # seed
    if cfg.conditioning_mode == "CAT":
        total += n * (2 * ((d * C + C) + (C * C + C)) + conv(C, C))
    else:
        if D:
            total += 2 * (dz * D + D) + 4 * D * (d + D) + 4 * D
            total += n * 2 * (D * C + C)
        total += n * conv(C, C)
    if cfg.conditioning_mode == "RAT+SA":
        total += (n // 2) * (4 * (C // (2 * cfg.sa_groups)) + conv(C, C))
    cond = dz + d
    total += 2 * ((cond * C + C) + (C * C + C)) + conv(C, C // 2) + conv(C // 2, 3)
    return total


@pytest.mark.parametrize("mode", ["CAT", "RAT", "RAT+SA"])
@pytest.mark.parametrize("D", [0, 4, 64])
def test_count_matches_shape_sum(mode, D):
    cfg = GeneratorConfig(conditioning_mode=mode, hidden_dim=D)
    assert generator_parameter_count(cfg) == _shape_sum(cfg)


def test_count_monotone_in_hidden_dim_and_formula():
    base = GeneratorConfig(conditioning_mode="RAT")
    counts = [generator_parameter_count(dataclasses.replace(base, hidden_dim=D)) for D in (0, 4, 8, 16, 32, 64, 128)]
    assert all(a < b for a, b in zip(counts, counts[1:]))
    for D, c in zip((4, 8, 16, 32, 64, 128), counts[1:]):
        assert c - counts[0] == recurrent_parameter_formula(dataclasses.replace(base, hidden_dim=D))


def test_cat_has_fewer_parameters_than_rat():
    assert generator_parameter_count(GeneratorConfig(conditioning_mode="CAT")) < generator_parameter_count(
        GeneratorConfig(conditioning_mode="RAT")
    )


def test_parameter_names_are_unique():
    names = [n for n, _ in named_parameters(init_generator(GeneratorConfig(), np.random.default_rng(0)))]
    assert len(names) == len(set(names))
