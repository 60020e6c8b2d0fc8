import numpy as np
import pytest

from app.datasets import synthetic_dataset
from app.model_store import Provenance, save_model
from app.models import TrainConfig
from app.preprocessing import PreprocessTransform
from app.trainer import linear_classifier, train

# Separable blobs small enough for second-scale training and attacks
SYNTHETIC_SHAPE = (3, 4, 4)
LINEAR_RECIPE = TrainConfig(epochs=20, batch_size=16, learning_rate=0.02, momentum=0.9, seed=0, init="xavier")


@pytest.fixture(scope="session")
def synthetic_data():
    """
    200 samples, 10 balanced classes, float64.
    """
    return synthetic_dataset(seed=1, n=200, num_classes=10, shape=SYNTHETIC_SHAPE, dtype=np.float64)


@pytest.fixture(scope="session")
def trained_linear(synthetic_data):
    """
    Linear classifier trained on the synthetic blobs; shared by the evaluation tests.
    """
    network = linear_classifier(SYNTHETIC_SHAPE, 10, seed=0, dtype=np.float64)
    return train(network, synthetic_data, LINEAR_RECIPE).network


@pytest.fixture
def standardize():
    """Per-channel normalization with std 0.25, i.e. a 4x amplification factor."""
    return PreprocessTransform.per_channel_normalize([0.5, 0.5, 0.5], [0.25, 0.25, 0.25])


@pytest.fixture
def model_file(tmp_path, trained_linear):
    """
    The trained linear classifier saved to a temporary model file.
    """
    provenance = Provenance(architecture="linear", training_seed=0, epochs=LINEAR_RECIPE.epochs)
    return save_model(trained_linear, None, tmp_path / "linear.rkm", provenance)
