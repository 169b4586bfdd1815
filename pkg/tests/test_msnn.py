"""
Tests for Multi-Stream Network Module
"""

import numpy as np
import pytest

from crowdmap.density_core import DensityMap, gen_fixed
from crowdmap.exceptions import CheckpointError, NonFiniteLossError, ShapeError, ValidationError
from crowdmap.metrics import EvalRecord, mae
from crowdmap.msnn import (
    LayerSpec,
    MultiStreamNetwork,
    NetworkSpec,
    StreamSpec,
    TrainConfig,
    load_checkpoint,
    load_network_spec,
    loss,
    preset,
    save_checkpoint,
    train,
)
from crowdmap.synthetic import DotDatasetSpec, dataset_samples, make_dot_dataset


def layer_strings(stream):
    return [str(layer) for layer in stream.layers]


@pytest.fixture
def toy_network():
    return MultiStreamNetwork(preset(2).shrink(4), seed=3, init_std=0.1)


@pytest.fixture
def toy_samples():
    rng = np.random.default_rng(0)
    return [(rng.uniform(0, 1, size=(16, 16)), DensityMap(rng.uniform(0, 0.05, size=(16, 16)))) for _ in range(6)]


class TestPresets:
    def test_single_stream(self):
        spec = preset(1)
        assert layer_strings(spec.streams[0]) == [
            'conv(3,24)', 'conv(3,48)', 'pool2', 'conv(3,24)', 'pool2', 'conv(3,12)']
        assert spec.fusion_in_channels == 12

    def test_second_stream(self):
        assert layer_strings(preset(2).streams[1]) == [
            'conv(7,20)', 'conv(5,40)', 'pool2', 'conv(5,20)', 'pool2', 'conv(5,10)']

    @pytest.mark.parametrize('streams,channels', [(1, 12), (2, 22), (3, 30), (4, 72)])
    def test_fusion_channels(self, streams, channels):
        assert preset(streams).fusion_in_channels == channels

    def test_four_streams_end_at_pool(self):
        spec = preset(4)
        assert all(stream.layers[-1].kind == 'pool2' for stream in spec.streams)
        assert preset(4, append_final_conv=True).fusion_in_channels == 12 + 10 + 8 + 6

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            preset(5)

    def test_removing_a_stream_gives_smaller_preset(self):
        assert preset(3).without_stream(2) == preset(2)
        assert preset(2).without_stream(1) == preset(1)
        assert preset(4, append_final_conv=True).without_stream(3) == preset(3)

    def test_stream_needs_two_pools(self):
        with pytest.raises(ValidationError):
            StreamSpec((LayerSpec.conv(3, 4), LayerSpec.pool()))

    def test_yaml_loader(self, tmp_path):
        path = tmp_path / 'net.yaml'
        path.write_text(
            "in_channels: 1\n"
            "streams:\n"
            "  - [conv(3,24), conv(3,48), pool2, conv(3,24), pool2, conv(3,12)]\n"
            "fusion: conv(1,1)\n",
            encoding='utf-8',
        )
        assert load_network_spec(path) == preset(1)

    def test_dict_round_trip(self):
        spec = preset(3).shrink(2)
        assert NetworkSpec.from_dict(spec.to_dict()) == spec


class TestForward:
    def test_quarter_resolution(self):
        network = MultiStreamNetwork(preset(1))
        assert network.forward(np.zeros((256, 256))).shape == (1, 1, 64, 64)

    @pytest.mark.slow
    @pytest.mark.parametrize('streams', [2, 3, 4])
    def test_quarter_resolution_all_presets(self, streams):
        network = MultiStreamNetwork(preset(streams))
        assert network.forward(np.zeros((256, 256))).shape == (1, 1, 64, 64)

    def test_odd_sizes_round_up(self, toy_network):
        assert toy_network.forward(np.zeros((30, 37))).shape == (1, 1, 8, 10)

    def test_too_small(self, toy_network):
        with pytest.raises(ShapeError):
            toy_network.forward(np.zeros((5, 5)))

    def test_zero_network(self):
        network = MultiStreamNetwork(preset(2).shrink(4), init_std=0.0)
        image = np.random.default_rng(0).uniform(size=(20, 20))
        assert not network.predict_maps(image).any()
        assert network.predict_count(image) == 0.0

    def test_batching_is_transparent(self, toy_network):
        images = np.random.default_rng(1).uniform(size=(3, 1, 16, 16))
        together = toy_network.predict_counts(images)
        alone = [toy_network.predict_count(image[0]) for image in images]
        np.testing.assert_allclose(together, alone, rtol=1e-12, atol=1e-15)

    def test_predictions_are_clamped(self, toy_network):
        image = np.random.default_rng(2).uniform(size=(16, 16))
        assert toy_network.predict_maps(image).min() >= 0


class TestLoss:
    def test_perfect_prediction(self):
        target = np.random.default_rng(0).uniform(size=(2, 4, 4))
        assert loss(target, target) == 0.0

    def test_worked_example(self):
        prediction = np.zeros((1, 4, 4))
        prediction[0, 0, 0], prediction[0, 2, 3] = 1.0, 2.0
        assert loss(prediction, np.zeros((1, 4, 4))) == pytest.approx(2.5)

    def test_duplicated_batch(self):
        rng = np.random.default_rng(1)
        prediction, target = rng.normal(size=(2, 3, 4, 4))
        doubled = loss(np.concatenate([prediction, prediction]), np.concatenate([target, target]))
        assert doubled == pytest.approx(loss(prediction, target))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            loss(np.zeros((1, 4, 4)), np.zeros((1, 4, 5)))


class TestTraining:
    def test_zero_learning_rate_keeps_parameters(self, toy_network, toy_samples):
        before = [t.values.copy() for t in toy_network.parameters()]
        train(toy_network, toy_samples, TrainConfig(learning_rate=0.0, batch_size=4, epochs=3), progress=False)
        for old, tensor in zip(before, toy_network.parameters()):
            np.testing.assert_array_equal(old, tensor.values)

    def test_deterministic(self, toy_samples, tmp_path):
        logs, blobs = [], []
        for run in range(2):
            network = MultiStreamNetwork(preset(2).shrink(4), seed=7, init_std=0.1)
            result = train(network, toy_samples, TrainConfig(1e-3, batch_size=4, epochs=2, seed=7), progress=False)
            logs.append(result.to_frame())
            blobs.append(save_checkpoint(network, tmp_path / f'run{run}.msnw').read_bytes())
        assert logs[0].equals(logs[1])
        assert blobs[0] == blobs[1]

    def test_step_budget(self, toy_network, toy_samples):
        result = train(toy_network, toy_samples, TrainConfig(1e-3, batch_size=4, epochs=10, max_steps=3),
                       progress=False)
        assert result.steps == 3
        assert len(result.log) == 2

    def test_log_columns(self, toy_network, toy_samples):
        frame = train(toy_network, toy_samples, TrainConfig(1e-3, batch_size=4, epochs=2), progress=False).to_frame()
        assert list(frame.columns) == ['epoch', 'mean_loss', 'train_mae', 'steps']
        assert frame['steps'].tolist() == [2, 4]

    def test_mixed_sizes_rejected(self, toy_network, toy_samples):
        odd = (np.zeros((20, 20)), DensityMap.zeros((20, 20)))
        with pytest.raises(ShapeError):
            train(toy_network, toy_samples + [odd], TrainConfig(), progress=False)

    def test_non_finite_loss(self, toy_network):
        bad = DensityMap(np.full((16, 16), np.inf))
        with pytest.raises(NonFiniteLossError):
            train(toy_network, [(np.zeros((16, 16)), bad)], TrainConfig(batch_size=1, epochs=1), progress=False)

    def test_invalid_config(self):
        with pytest.raises(ValidationError):
            TrainConfig(batch_size=0)


class TestCheckpoint:
    def test_round_trip_predictions(self, toy_network, tmp_path):
        path = save_checkpoint(toy_network, tmp_path / 'model.msnw')
        restored = load_checkpoint(path, expected=toy_network.spec)
        image = np.random.default_rng(4).uniform(size=(16, 16))
        assert restored.predict_count(image) == toy_network.predict_count(image)

    def test_spec_mismatch(self, toy_network, tmp_path):
        path = save_checkpoint(toy_network, tmp_path / 'model.msnw')
        with pytest.raises(CheckpointError):
            load_checkpoint(path, expected=preset(1).shrink(4))

    def test_truncated(self, toy_network, tmp_path):
        path = save_checkpoint(toy_network, tmp_path / 'model.msnw')
        path.write_bytes(path.read_bytes()[:-1])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


@pytest.mark.slow
class TestSyntheticEndToEnd:
    def test_dot_counting_learns(self):
        items = make_dot_dataset(DotDatasetSpec(count=250, size=64, min_people=5, max_people=25, seed=0))
        train_items, held_out = items[:200], items[200:]
        network = MultiStreamNetwork(preset(2).shrink(4), seed=0)
        cfg = TrainConfig(learning_rate=1e-4, batch_size=16, epochs=1000, seed=0, max_steps=2000)
        result = train(network, dataset_samples(train_items, sigma=2.0), cfg, progress=False)

        assert result.steps <= 2000
        assert result.log[-1].mean_loss <= 0.5 * result.log[0].mean_loss

        baseline = float(np.mean([ann.count for ann, _ in train_items]))
        predicted = [EvalRecord(ann.image_id, ann.count, network.predict_count(pixels / 255.0))
                     for ann, pixels in held_out]
        constant = [EvalRecord(ann.image_id, ann.count, baseline) for ann, _ in held_out]
        assert mae(predicted) < mae(constant)

    def test_ground_truth_sums(self):
        items = make_dot_dataset(DotDatasetSpec(count=5, seed=1))
        for ann, _ in items:
            assert gen_fixed(ann, 2.0).values.sum() == pytest.approx(ann.count, abs=1e-9)
