import numpy as np
import pytest

from app.datasets import synthetic_dataset
from app.exceptions import EmptyDatasetError, ShapeMismatchError, TrainingDivergedError
from app.models import TrainConfig
from app.services import clean_accuracy
from app.trainer import learning_rate_at, linear_classifier, reference_cnn, sgd_step, train
from tests.conftest import LINEAR_RECIPE, SYNTHETIC_SHAPE
from tests.factories import dataset_from


def _params(value):
    return [{"w": np.array([value])}]


class TestSgdStep:
    def test_plain_step(self):
        params, _ = sgd_step(_params(1.0), _params(0.5), lr=0.1)
        assert params[0]["w"][0] == pytest.approx(0.95)

    def test_zero_gradient_keeps_weights(self):
        params, _ = sgd_step(_params(1.0), _params(0.0), lr=0.1)
        assert params[0]["w"][0] == 1.0

    def test_momentum_accumulates(self):
        params, velocity = sgd_step(_params(1.0), _params(1.0), lr=0.1, momentum=0.9)
        assert params[0]["w"][0] == pytest.approx(0.9)
        params, velocity = sgd_step(params, _params(1.0), lr=0.1, velocity=velocity, momentum=0.9)
        assert velocity[0]["w"][0] == pytest.approx(1.9)
        assert params[0]["w"][0] == pytest.approx(0.71)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            sgd_step([{"w": np.zeros(2)}], [{"w": np.zeros(3)}], lr=0.1)

    def test_missing_gradient(self):
        with pytest.raises(ShapeMismatchError):
            sgd_step([{"w": np.zeros(2)}], [{}], lr=0.1)


class TestTrain:
    """Mini-batch SGD on the synthetic blobs."""

    def test_zero_learning_rate_leaves_weights(self, synthetic_data):
        network = linear_classifier(SYNTHETIC_SHAPE, 10, seed=2, dtype=np.float64)
        result = train(network, synthetic_data, TrainConfig(epochs=2, learning_rate=0.0))
        for before, after in zip(network.parameters(), result.network.parameters()):
            for name in before:
                np.testing.assert_array_equal(before[name], after[name])

    def test_same_seed_same_weights(self, synthetic_data):
        config = LINEAR_RECIPE.model_copy(update={"epochs": 3})
        network = linear_classifier(SYNTHETIC_SHAPE, 10, seed=0, dtype=np.float64)
        first = train(network, synthetic_data, config)
        second = train(network, synthetic_data, config)
        for a, b in zip(first.network.parameters(), second.network.parameters()):
            for name in a:
                np.testing.assert_array_equal(a[name], b[name])
        assert first.loss_curve == second.loss_curve

    def test_two_blobs_are_learned(self):
        data = synthetic_dataset(seed=7, n=200, num_classes=2, shape=SYNTHETIC_SHAPE, dtype=np.float64)
        network = linear_classifier(SYNTHETIC_SHAPE, 2, seed=0, dtype=np.float64)
        result = train(network, data, LINEAR_RECIPE)
        assert clean_accuracy(result.network, None, data) >= 0.99

    def test_ten_blobs_are_learned(self, trained_linear, synthetic_data):
        assert clean_accuracy(trained_linear, None, synthetic_data) >= 0.95

    def test_loss_curve_decreases(self, synthetic_data):
        network = linear_classifier(SYNTHETIC_SHAPE, 10, seed=0, dtype=np.float64)
        result = train(network, synthetic_data, LINEAR_RECIPE.model_copy(update={"epochs": 5}))
        assert len(result.loss_curve) == 5
        assert result.loss_curve[-1] < result.loss_curve[0]

    def test_trains_through_transform(self, synthetic_data, standardize):
        network = linear_classifier(SYNTHETIC_SHAPE, 10, seed=0, dtype=np.float64)
        result = train(network, synthetic_data, LINEAR_RECIPE, transform=standardize)
        assert clean_accuracy(result.network, standardize, synthetic_data) >= 0.9

    def test_non_finite_input_diverges(self):
        images = np.full((8,) + SYNTHETIC_SHAPE, np.nan)
        network = linear_classifier(SYNTHETIC_SHAPE, 2, dtype=np.float64)
        with pytest.raises(TrainingDivergedError) as exc_info:
            train(network, dataset_from(images, [0, 1] * 4), TrainConfig(epochs=1))
        assert exc_info.value.epoch == 0

    def test_empty_dataset(self):
        network = linear_classifier(SYNTHETIC_SHAPE, 2)
        with pytest.raises(EmptyDatasetError):
            train(network, dataset_from(np.zeros((0,) + SYNTHETIC_SHAPE), []), TrainConfig())

    def test_zero_learning_rate_warns(self, caplog):
        TrainConfig(learning_rate=0.0)
        assert "will not change" in caplog.text


class TestSchedules:
    def test_constant(self):
        assert learning_rate_at(TrainConfig(learning_rate=0.1), 7) == 0.1

    def test_step(self):
        config = TrainConfig(learning_rate=0.1, lr_schedule="step", decay_every=10, decay_factor=0.1)
        assert learning_rate_at(config, 9) == pytest.approx(0.1)
        assert learning_rate_at(config, 10) == pytest.approx(0.01)

    def test_cosine(self):
        config = TrainConfig(learning_rate=0.1, lr_schedule="cosine", epochs=10)
        assert learning_rate_at(config, 0) == pytest.approx(0.1)
        assert learning_rate_at(config, 5) == pytest.approx(0.05)


class TestArchitectures:
    def test_reference_cnn_on_cifar_shape(self):
        network = reference_cnn()
        # 448 + 4640 + 262272 + 1290
        assert network.parameter_count() == 268650
        assert network.dtype == np.float32
        assert network.layer_shapes[-1] == (10,)

    def test_init_is_seeded(self):
        a = reference_cnn(seed=1, widths=(2, 2, 4), input_shape=(3, 8, 8))
        b = reference_cnn(seed=1, widths=(2, 2, 4), input_shape=(3, 8, 8))
        np.testing.assert_array_equal(a.layers[0].params["weight"], b.layers[0].params["weight"])

    def test_input_too_small(self):
        with pytest.raises(ShapeMismatchError):
            reference_cnn(input_shape=(3, 2, 2))
