import pytest

from grasp_quality import model as gq_model
from grasp_quality.data import split
from grasp_quality.evaluation import accuracy, predict
from grasp_quality.experiments import (
    REFERENCE_ACCURACIES,
    ablation_grid,
    split_comparison,
    standard_ablation_rows,
    standard_split_settings,
)
from grasp_quality.optim import input_stats
from utils.data_models import AugmentConfig, SplitKind, SplitSpec, TrainConfig


def test_standard_rows_add_one_stage_at_a_time():
    rows = [row.flags() for row in standard_ablation_rows()]
    assert len(rows) == len(REFERENCE_ACCURACIES)
    assert rows[0] == {
        "normalize": True,
        "symmetrize": False,
        "mult_pixels": False,
        "mult_adjust_z": False,
        "gp_noise": False,
    }
    assert all(rows[-1].values())
    assert [sum(row.values()) for row in rows] == [1, 3, 4, 5]


def test_split_settings_cover_both_extremes():
    settings = standard_split_settings()
    assert set(settings) == {"no_augmentation", "all_augmentations"}
    assert all(settings["all_augmentations"].flags().values())


def test_untrained_row_matches_untrained_model(small_dataset, tiny32_config):
    cfg = TrainConfig(epochs=0, seed=4)
    (row,) = ablation_grid(small_dataset, [AugmentConfig()], cfg, tiny32_config)

    train_ids, val_ids = split(small_dataset, SplitSpec(seed=4))
    stats = input_stats(small_dataset, train_ids, AugmentConfig())
    probs = predict(gq_model.build(tiny32_config), small_dataset, val_ids, stats)
    expected = accuracy(probs, small_dataset.labels[small_dataset.positions(val_ids)])
    assert row.val_accuracy == pytest.approx(expected)
    assert row.seed == 4


def test_duplicate_rows_agree(small_dataset, tiny32_config):
    cfg = TrainConfig(epochs=1, batch_size=16, base_lr=1e-3, seed=2)
    aug = standard_ablation_rows()[-1]
    first, second = ablation_grid(small_dataset, [aug, aug], cfg, tiny32_config, workers=2)
    assert first == second


def test_split_comparison_covers_every_protocol(small_dataset, tiny32_config):
    cfg = TrainConfig(epochs=0, seed=1)
    rows = split_comparison(small_dataset, {"plain": AugmentConfig()}, cfg, tiny32_config)
    assert [row.split for row in rows] == list(SplitKind)
    assert {row.setting for row in rows} == {"plain"}
    assert all(0 <= row.val_accuracy <= 100 for row in rows)
