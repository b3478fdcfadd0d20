"""Shared fixtures: canonical calibrations and a small synthetic dataset."""

from __future__ import annotations

import numpy as np
import pytest

from clicklift.geometry import CameraCalibration
from clicklift.synthetic import generate_synthetic_sequence


@pytest.fixture
def simple_calibration() -> CameraCalibration:
    """f=100, principal point (320, 240), identity extrinsic, 640x480."""
    return CameraCalibration(
        intrinsic=np.array(
            [[100.0, 0.0, 320.0, 0.0], [0.0, 100.0, 240.0, 0.0], [0.0, 0.0, 1.0, 0.0]]
        ),
        extrinsic=np.eye(4),
        image_width=640,
        image_height=480,
    )


@pytest.fixture(scope="session")
def small_synthetic(tmp_path_factory):
    """A 3-frame 160x120 sequence: fast enough for per-test pipeline runs."""
    root = tmp_path_factory.mktemp("synthetic-small")
    manifest = generate_synthetic_sequence(
        root, num_frames=3, width=160, height=120, pad_pixels=8
    )
    return manifest
