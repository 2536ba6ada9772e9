"""Shared fixtures: fresh images in a temporary directory."""

from pathlib import Path

import pytest

from snapkit.config import load_profile
from snapkit.core.geometry import DeviceGeometry
from snapkit.core.volume import Volume


@pytest.fixture
def image_path(tmp_path: Path) -> Path:
    return tmp_path / "disk.img"


@pytest.fixture
def volume(image_path: Path):
    """Default-profile volume (256 B x 128 blocks, first-fit)."""
    vol = Volume.format(image_path, DeviceGeometry.build(256, 128))
    yield vol
    vol.close()


@pytest.fixture
def trace_volume(image_path: Path):
    """Volume with the pinned worked-example layout."""
    profile = load_profile("trace")
    vol = Volume.format(image_path, profile.geometry(), profile.allocator)
    yield vol
    vol.close()
