"""Shared fixtures: seeded generators, double precision, tiny configs and IDX fixtures."""
import numpy as np
import pytest

from data.idx import LabeledSet, write_labeled_set
from tensor.core import default_dtype

TOY_DOCUMENT = {
    "model": {
        "variant": "digit3conv",
        "widths": [8, 16, 16],
        "fc_hidden": 32,
        "dida": {"reduction": 4, "dilations": [1, 2]},
    },
    "data": {
        "sources": [{"name": "toy-source", "toy_count": 32, "toy_test_count": 20}],
        "target": {"name": "toy-target", "recipe": "invert", "toy_seed": 1, "toy_count": 32, "toy_test_count": 20},
        "cache_dir": None,
    },
    "train": {"epochs": 1, "steps_per_epoch": 2, "batch_size": 8, "eval_batch_size": 16, "base_lr": 0.001},
}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def float64():
    with default_dtype(np.float64):
        yield


@pytest.fixture
def toy_document():
    import copy
    return copy.deepcopy(TOY_DOCUMENT)


@pytest.fixture
def toy_config_path(tmp_path, toy_document):
    import yaml
    path = tmp_path / "toy.yaml"
    path.write_text(yaml.safe_dump(toy_document))
    return str(path)


@pytest.fixture
def idx_fixture(tmp_path):
    """Four 28x28 images with labels 0..3 written as an IDX pair."""
    rng = np.random.default_rng(7)
    images = rng.integers(0, 256, size=(4, 28, 28), dtype=np.uint8)
    data = LabeledSet(images=images, labels=np.arange(4), domain="fixture")
    images_path, labels_path = write_labeled_set(str(tmp_path / "fixture"), data)
    return {"images": images, "labels": np.arange(4), "images_path": images_path, "labels_path": labels_path}
