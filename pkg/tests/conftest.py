import hashlib
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from corvid.classifier import train
from corvid.identity import ColorTable
from corvid.synth import SynthConfig, gen_ring_crop, generate_dataset

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def table() -> ColorTable:
    return ColorTable.default()


@pytest.fixture(scope="session")
def clean_model(table):
    """Prototype model fit on noiseless crops, one per class."""
    rng = np.random.default_rng(11)
    samples = [(gen_ring_crop(code, 0.0, rng, table), code) for code in table.codes]
    return train(samples, table)


@pytest.fixture(scope="session")
def dataset(tmp_path_factory, table):
    """Small shared dataset: 30 birds, 6 clips, 2 videos, no noise."""
    out = tmp_path_factory.mktemp("dataset")
    config = SynthConfig(seed=7, n_birds=30, n_clips=6, n_videos=2, video_length_frames=750)
    return config, generate_dataset(config, out, table)


def tree_digest(root: Path) -> str:
    """Content hash of a directory tree (relative names + bytes)."""
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            digest.update(str(path.relative_to(root)).encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()
