"""Tests for the superblock codec."""

import pytest

from snapkit.core.errors import ImageError
from snapkit.core.geometry import DeviceGeometry
from snapkit.core.superblock import (
    FIXED_SIZE,
    MAGIC,
    SnapshotEntry,
    Superblock,
    max_snapshots,
)


@pytest.fixture
def geometry():
    return DeviceGeometry.build(256, 128)


class TestSuperblock:
    def test_fixed_size(self):
        assert FIXED_SIZE == 124

    def test_max_snapshots(self):
        assert max_snapshots(256) == 5
        assert max_snapshots(4096) == 165
        assert max_snapshots(64) == 0

    def test_pack_is_one_block(self, geometry):
        raw = Superblock(geometry=geometry, free_blocks=120).pack()
        assert len(raw) == 256
        assert raw[:4] == MAGIC

    def test_unpack_restores_fields(self, geometry):
        entries = [SnapshotEntry(126, 1, 127), SnapshotEntry(124, 2, 125)]
        raw = Superblock(geometry=geometry, free_blocks=100, snapshots=entries).pack()

        decoded = Superblock.unpack(raw)

        assert decoded.geometry == geometry
        assert decoded.free_blocks == 100
        assert decoded.snapshots == entries

    def test_too_many_snapshots(self, geometry):
        entries = [SnapshotEntry(100 + i, i + 1, 110 + i) for i in range(6)]
        with pytest.raises(ImageError, match="do not fit"):
            Superblock(geometry=geometry, free_blocks=0, snapshots=entries).pack()

    def test_bad_magic(self, geometry):
        raw = bytearray(Superblock(geometry=geometry, free_blocks=120).pack())
        raw[:4] = b"XXXX"
        with pytest.raises(ImageError, match="magic"):
            Superblock.unpack(bytes(raw))

    def test_corrupt_region_table(self, geometry):
        raw = bytearray(Superblock(geometry=geometry, free_blocks=120).pack())
        # first region entry (superblock start) follows the 26-byte header
        raw[26] = 5
        with pytest.raises(ImageError, match="region"):
            Superblock.unpack(bytes(raw))

    def test_truncated_data(self):
        with pytest.raises(ImageError):
            Superblock.unpack(b"NXS4")
