import pytest

from ratgan.config import TrainConfig


def tiny_config(**changes) -> TrainConfig:
    """A seconds-scale training setup exercising every code path."""
    base = dict(
        noise_dim=8, hidden_dim=8, num_rat_blocks=2, base_channels=8, image_size=16, sa_groups=2,
        batch_size=4, steps=20, eval_interval=5, image_interval=10, checkpoint_interval=10,
        n_eval=8, disc_width=8, run_id="tiny",
    )
    base.update(changes)
    return TrainConfig().replace(**base)


@pytest.fixture
def tiny_cfg():
    return tiny_config()
