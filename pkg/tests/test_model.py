import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from grasp_quality import model as gq_model
from grasp_quality.errors import CheckpointIOError, ConfigError, DimensionError, FormatError
from grasp_quality.gradcheck import grad_check_parameters
from grasp_quality.layers import softmax_cross_entropy
from utils.data_models import LayerSpec, Mode, ModelConfig, NormStats


def inputs(rng, n, size):
    return rng.normal(size=(n, 1, size, size)), rng.uniform(0.0, 0.1, size=n)


class TestArchitecture:
    def test_default_parameter_count(self):
        assert gq_model.build(ModelConfig.default()).parameter_count() == 9_180_738

    def test_default_forward_gives_one_probability_per_example(self, rng):
        network = gq_model.build(ModelConfig.default())
        images, z = inputs(rng, 2, 32)
        probs = gq_model.forward(network, images, z, Mode.EVAL).data
        assert probs.shape == (2,)
        assert np.all((probs > 0) & (probs < 1))

    def test_parameter_names_follow_layer_plan(self, tiny_config):
        names = list(gq_model.build(tiny_config).named_parameters())
        assert names[:3] == ["tower.conv1.kernels", "tower.conv1.bn.scale", "tower.conv1.bn.shift"]
        assert "merge.conv.kernels" in names
        assert names[-2:] == ["head.dense2.weights", "head.dense2.bias"]

    def test_merge_widens_channels_by_depth_planes(self, tiny_config):
        network = gq_model.build(tiny_config)
        assert network.parameters["merge.conv.kernels"].shape == (2, 3, 3, 3)

    def test_init_is_seeded(self, tiny_config):
        first = gq_model.build(tiny_config).state_arrays()
        second = gq_model.build(tiny_config).state_arrays()
        for name in first:
            assert_array_equal(first[name], second[name])

    def test_head_must_end_in_two_logits(self):
        data = ModelConfig.tiny().model_dump()
        data["head"] = [3, 4]
        with pytest.raises(ConfigError, match="2 logits"):
            gq_model.build(data)

    def test_tower_must_end_with_pool(self):
        data = ModelConfig.tiny().model_dump()
        data["image_tower"] = [LayerSpec.conv(2, 3).model_dump()]
        with pytest.raises(ConfigError, match="max-pool"):
            gq_model.validate_config(data)

    def test_pool_window_larger_than_extent(self):
        data = ModelConfig.tiny(image_size=4).model_dump()
        data["image_tower"] = [
            LayerSpec.conv(2, 3).model_dump(),
            LayerSpec.maxpool(8, 8).model_dump(),
        ]
        with pytest.raises(ConfigError):
            gq_model.validate_config(data)


class TestForward:
    def test_image_shape_is_checked(self, tiny_config, rng):
        network = gq_model.build(tiny_config)
        with pytest.raises(DimensionError):
            gq_model.forward(network, rng.normal(size=(2, 1, 9, 9)), np.zeros(2), Mode.EVAL)

    def test_depth_shape_is_checked(self, tiny_config, rng):
        network = gq_model.build(tiny_config)
        images, _ = inputs(rng, 2, 8)
        with pytest.raises(DimensionError):
            gq_model.forward(network, images, np.zeros(3), Mode.EVAL)

    def test_eval_mode_is_pure(self, tiny_config, rng):
        network = gq_model.build(tiny_config)
        images, z = inputs(rng, 3, 8)
        before = {k: v.copy() for k, v in network.state_arrays().items()}
        first = gq_model.forward(network, images, z, Mode.EVAL).data
        second = gq_model.forward(network, images, z, Mode.EVAL).data
        assert_array_equal(first, second)
        for name, array in network.state_arrays().items():
            assert_array_equal(array, before[name])

    def test_train_mode_moves_running_stats(self, tiny_config, rng):
        network = gq_model.build(tiny_config)
        images, z = inputs(rng, 3, 8)
        gq_model.forward(network, images, z, Mode.TRAIN)
        assert not np.allclose(network.batchnorms["tower.conv1"].running_mean, 0.0)

    def test_grasp_depth_changes_the_prediction(self, tiny_config, rng):
        network = gq_model.build(tiny_config, dtype=np.float64)
        images, _ = inputs(rng, 2, 8)
        low = gq_model.forward(network, images, np.zeros(2), Mode.EVAL).data
        high = gq_model.forward(network, images, np.full(2, 5.0), Mode.EVAL).data
        assert not np.allclose(low, high)

    def test_eval_rows_follow_batch_order(self, tiny_config, rng):
        network = gq_model.build(tiny_config, dtype=np.float64)
        images, z = inputs(rng, 5, 8)
        order = np.array([3, 0, 4, 1, 2])
        plain = gq_model.forward(network, images, z, Mode.EVAL).data
        shuffled = gq_model.forward(network, images[order], z[order], Mode.EVAL).data
        assert_allclose(shuffled, plain[order], rtol=1e-12)

    def test_depth_change_stays_in_its_row(self, tiny_config, rng):
        network = gq_model.build(tiny_config, dtype=np.float64)
        images, z = inputs(rng, 4, 8)
        before = gq_model.forward(network, images, z, Mode.EVAL).data
        z[2] += 3.0
        after = gq_model.forward(network, images, z, Mode.EVAL).data
        assert_allclose(after[[0, 1, 3]], before[[0, 1, 3]], rtol=1e-12)
        assert after[2] != before[2]

    def test_identical_rows_give_identical_outputs(self, tiny_config, rng):
        network = gq_model.build(tiny_config, dtype=np.float64)
        images, z = inputs(rng, 1, 8)
        out = gq_model.forward(
            network, np.repeat(images, 2, axis=0), np.repeat(z, 2), Mode.EVAL
        ).data
        assert out[0] == out[1]

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_saturated_logits_stay_inside_the_unit_interval(self, tiny_config, rng, dtype):
        network = gq_model.build(tiny_config, dtype=dtype)
        images, z = inputs(rng, 4, 8)
        for bias in ([-50.0, 50.0], [50.0, -50.0]):
            network.parameters["head.dense2.bias"].data = np.array(bias, dtype=dtype)
            probs = gq_model.forward(network, images, z, Mode.EVAL).data
            assert ((probs > 0.0) & (probs < 1.0)).all()


def test_tiny_model_gradients_match_finite_differences(tiny_config, rng):
    network = gq_model.build(tiny_config, dtype=np.float64)
    images, z = inputs(rng, 4, 8)
    labels = np.array([0, 1, 1, 0])

    def loss():
        logits = gq_model.forward_logits(network, images, z, Mode.TRAIN)
        return softmax_cross_entropy(logits, labels)

    errors = grad_check_parameters(loss, network.named_parameters(), epsilon=1e-8)
    worst = max(errors, key=errors.get)
    assert errors[worst] < 1e-4, worst


class TestCheckpoint:
    def test_round_trip(self, tiny_config, rng, tmp_path):
        network = gq_model.build(tiny_config)
        images, z = inputs(rng, 3, 8)
        gq_model.forward(network, images, z, Mode.TRAIN)
        network.norm_stats = NormStats(mean=0.012, std=0.02)
        gq_model.save(network, tmp_path / "m.gfm")

        loaded = gq_model.load(tmp_path / "m.gfm")
        assert loaded.config == network.config
        assert loaded.norm_stats == network.norm_stats
        for name, array in network.state_arrays().items():
            assert_array_equal(loaded.state_arrays()[name], array)
        assert_allclose(
            gq_model.forward(loaded, images, z, Mode.EVAL).data,
            gq_model.forward(network, images, z, Mode.EVAL).data,
        )

    def test_save_is_byte_stable(self, tiny_config, tmp_path):
        gq_model.save(gq_model.build(tiny_config), tmp_path / "a.gfm")
        gq_model.save(gq_model.build(tiny_config), tmp_path / "b.gfm")
        assert (tmp_path / "a.gfm").read_bytes() == (tmp_path / "b.gfm").read_bytes()

    def test_truncated_checkpoint(self, tiny_config, tmp_path):
        gq_model.save(gq_model.build(tiny_config), tmp_path / "m.gfm")
        data = (tmp_path / "m.gfm").read_bytes()
        (tmp_path / "m.gfm").write_bytes(data[:-7])
        with pytest.raises(CheckpointIOError):
            gq_model.load(tmp_path / "m.gfm")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "m.gfm").write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(FormatError):
            gq_model.load(tmp_path / "m.gfm")

    def test_missing_tensor_names(self, tiny_config, tmp_path):
        network = gq_model.build(tiny_config)
        del network.parameters["head.dense2.bias"]
        gq_model.save(network, tmp_path / "m.gfm")
        with pytest.raises(FormatError, match="head.dense2.bias"):
            gq_model.load(tmp_path / "m.gfm")

    def test_stored_shape_disagrees_with_config(self, tiny_config, tmp_path):
        network = gq_model.build(tiny_config)
        network.parameters["head.dense2.bias"].data = np.zeros(5, dtype=np.float32)
        gq_model.save(network, tmp_path / "m.gfm")
        with pytest.raises(DimensionError):
            gq_model.load(tmp_path / "m.gfm")

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointIOError):
            gq_model.load(tmp_path / "absent.gfm")

    def test_config_line_without_separator(self, tiny_config, tmp_path):
        gq_model.save(gq_model.build(tiny_config), tmp_path / "m.gfm")
        data = bytearray((tmp_path / "m.gfm").read_bytes())
        data[data.index(b"=", 10)] = ord(" ")
        (tmp_path / "m.gfm").write_bytes(bytes(data))
        with pytest.raises(FormatError, match="offset 10"):
            gq_model.load(tmp_path / "m.gfm")

    def test_normalization_flag_survives(self, tiny_config, tmp_path):
        network = gq_model.build(tiny_config)
        assert network.normalized is None
        network.normalized = False
        gq_model.save(network, tmp_path / "m.gfm")
        loaded = gq_model.load(tmp_path / "m.gfm")
        assert loaded.normalized is False
        assert loaded.norm_stats is None

    def test_empty_file(self, tmp_path):
        (tmp_path / "m.gfm").write_bytes(b"")
        with pytest.raises(FormatError):
            gq_model.load(tmp_path / "m.gfm")


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(100))
def test_gradients_over_many_initializations(seed):
    network = gq_model.build(ModelConfig.tiny(init_seed=seed), dtype=np.float64)
    rng = np.random.default_rng(seed)
    images, z = inputs(rng, 4, 8)
    labels = rng.integers(0, 2, size=4)

    def loss():
        logits = gq_model.forward_logits(network, images, z, Mode.TRAIN)
        return softmax_cross_entropy(logits, labels)

    errors = grad_check_parameters(loss, network.named_parameters(), epsilon=1e-8)
    assert max(errors.values()) < 1e-4
