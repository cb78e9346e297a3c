"""Shared fixtures: trained artifact models for the acceptance tests.

The acceptance criteria run against genuinely trained models. Training is
deterministic but takes a few minutes, so the weights are shipped in
artifacts/ (regenerate with scripts/train_artifacts.py). If the directory is
missing the session fixture retrains it in place.
"""

import sys
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
ARTIFACTS = REPO_ROOT / "artifacts"

_WEIGHT_FILES = (
    "vanilla/generator.ddw",
    "vanilla/discriminator.ddw",
    "adv_g/generator.ddw",
    "adv_gd/generator.ddw",
    "identity/generator.ddw",
)


@pytest.fixture(scope="session")
def artifacts_dir():
    if not all((ARTIFACTS / f).exists() for f in _WEIGHT_FILES):
        sys.path.insert(0, str(REPO_ROOT / "scripts"))
        from train_artifacts import train_artifacts

        train_artifacts(ARTIFACTS)
    return ARTIFACTS


@pytest.fixture(scope="session")
def vanilla_generator(artifacts_dir):
    from disruptkit.model import ConditionalGenerator, GeneratorConfig, load_weights

    g = ConditionalGenerator(GeneratorConfig())
    load_weights(artifacts_dir / "vanilla" / "generator.ddw", g)
    return g


@pytest.fixture(scope="session")
def adv_g_generator(artifacts_dir):
    from disruptkit.model import ConditionalGenerator, GeneratorConfig, load_weights

    g = ConditionalGenerator(GeneratorConfig())
    load_weights(artifacts_dir / "adv_g" / "generator.ddw", g)
    return g


@pytest.fixture(scope="session")
def adv_gd_generator(artifacts_dir):
    from disruptkit.model import ConditionalGenerator, GeneratorConfig, load_weights

    g = ConditionalGenerator(GeneratorConfig())
    load_weights(artifacts_dir / "adv_gd" / "generator.ddw", g)
    return g


@pytest.fixture(scope="session")
def identity_generator(artifacts_dir):
    """Attention-variant model for the identity-target experiments."""
    import sys

    from disruptkit.model import ConditionalGenerator, load_weights

    sys.path.insert(0, str(REPO_ROOT / "scripts"))
    from train_artifacts import IDENTITY_MODEL

    g = ConditionalGenerator(IDENTITY_MODEL)
    load_weights(artifacts_dir / "identity" / "generator.ddw", g)
    return g


@pytest.fixture(scope="session")
def identity_samples():
    """Test split of the 5-class identity-experiment dataset."""
    import sys

    from disruptkit.data import dataset_split, generate_sample

    sys.path.insert(0, str(REPO_ROOT / "scripts"))
    from train_artifacts import IDENTITY_DATASET

    _, test_idx = dataset_split(IDENTITY_DATASET)
    return [(i, generate_sample(IDENTITY_DATASET, i)) for i in test_idx]


@pytest.fixture(scope="session")
def test_samples():
    """The 50-image held-out test split of the default dataset."""
    from disruptkit.data import DatasetConfig, dataset_split, generate_sample

    cfg = DatasetConfig()
    _, test_idx = dataset_split(cfg)
    return [(i, generate_sample(cfg, i)) for i in test_idx]
