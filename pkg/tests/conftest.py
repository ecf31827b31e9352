# planemorph/tests/conftest.py
import os
import sys

import numpy as np
import pytest


@pytest.fixture(scope="session", autouse=True)
def configure_pythonpath_for_tests():
    """
    Ensures that the 'src' directory is on sys.path when pytest runs,
    so that `from planemorph import ...` works without an installed package.
    """
    src_dir = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'src'))
    if src_dir not in sys.path:
        sys.path.insert(0, src_dir)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """EM-11, stride 2 with d=2 merge, C=8: bottleneck factor 8."""
    from planemorph.common.schemas import ModelConfig
    return ModelConfig(variant="EM-11", stride=2, embed_dim=8, merge_d=2, n_heads=2, seed=0)


@pytest.fixture
def phantom_pair():
    """16^3 phantom and its copy warped by a smooth field, with labels and landmarks."""
    from planemorph.data.phantoms import gen_phantom, gen_smooth_field
    from planemorph.data.volume import LandmarkSet, RegistrationPair
    from planemorph.registration.field_ops import preimage_points, warp, warp_labels

    fixed, seg, landmarks = gen_phantom(3, (16, 16, 16), n_labels=2)
    field = gen_smooth_field(4, (16, 16, 16), max_disp=1.5, sigma=3.0)
    moving_landmarks = LandmarkSet(points=preimage_points(field, landmarks.points), ids=landmarks.ids)
    return RegistrationPair(
        name="phantom",
        fixed=fixed,
        moving=warp(fixed, field),
        seg_fixed=seg,
        seg_moving=warp_labels(seg, field),
        landmarks_fixed=landmarks,
        landmarks_moving=moving_landmarks,
    )


@pytest.fixture
def synthetic_dir(tmp_path):
    """A 3-pair 16^3 dataset directory written by the gen-data path."""
    from planemorph.cli.commands import generate_dataset
    out = tmp_path / "data"
    generate_dataset(str(out), n=3, size=16, labels=2, max_disp=1.5, sigma=3.0, seed=0)
    return str(out)
