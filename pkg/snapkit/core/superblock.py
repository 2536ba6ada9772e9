"""Bit-exact superblock codec (block 0 of every image).

Layout, all integers little-endian, zero padded to the block end:

    magic            4s   b"NXS4"
    version          u16
    block_size       u32
    total_blocks     u64
    free_blocks      u64
    region table     6 x {start u64, len u64}   (RegionKind order)
    snapshot count   u16
    snapshots        count x {inode_no u64, epoch u64, cow_bitmap_block u64}
"""

import struct
from dataclasses import dataclass, field

from snapkit.core.errors import ImageError
from snapkit.core.geometry import REGION_ORDER, DeviceGeometry, Region

MAGIC = b"NXS4"
FORMAT_VERSION = 1

HEADER = struct.Struct("<4sHIQQ")
REGION = struct.Struct("<QQ")
COUNT = struct.Struct("<H")
SNAPSHOT = struct.Struct("<QQQ")

FIXED_SIZE = HEADER.size + REGION.size * len(REGION_ORDER) + COUNT.size


def max_snapshots(block_size: int) -> int:
    """Snapshot entries that fit in the superblock."""
    return max(0, (block_size - FIXED_SIZE) // SNAPSHOT.size)


@dataclass(frozen=True)
class SnapshotEntry:
    """One registered snapshot."""

    inode_no: int
    epoch: int
    cow_bitmap_block: int


@dataclass
class Superblock:
    """Decoded superblock."""

    geometry: DeviceGeometry
    free_blocks: int
    snapshots: list[SnapshotEntry] = field(default_factory=list)
    version: int = FORMAT_VERSION

    def pack(self) -> bytes:
        """Serialize to exactly one block.

        Raises:
            ImageError: if the snapshot list does not fit
        """
        geo = self.geometry
        if len(self.snapshots) > max_snapshots(geo.block_size):
            raise ImageError(
                f"{len(self.snapshots)} snapshots do not fit a {geo.block_size}-byte superblock"
            )
        parts = [
            HEADER.pack(MAGIC, self.version, geo.block_size, geo.total_blocks, self.free_blocks)
        ]
        for kind in REGION_ORDER:
            region = geo.regions[kind]
            parts.append(REGION.pack(region.start, region.length))
        parts.append(COUNT.pack(len(self.snapshots)))
        for entry in self.snapshots:
            parts.append(SNAPSHOT.pack(entry.inode_no, entry.epoch, entry.cow_bitmap_block))
        raw = b"".join(parts)
        return raw.ljust(geo.block_size, b"\0")

    @classmethod
    def unpack(cls, data: bytes) -> "Superblock":
        """Decode a superblock.

        Raises:
            ImageError: on bad magic, unknown version or inconsistent geometry
        """
        if len(data) < FIXED_SIZE:
            raise ImageError("Image too small to hold a superblock")
        magic, version, block_size, total_blocks, free_blocks = HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise ImageError(f"Bad magic {magic!r}, not a snapkit image")
        if version != FORMAT_VERSION:
            raise ImageError(f"Unsupported format version {version}")

        offset = HEADER.size
        regions: dict = {}
        for kind in REGION_ORDER:
            start, length = REGION.unpack_from(data, offset)
            regions[kind] = Region(start=start, length=length)
            offset += REGION.size

        try:
            geometry = DeviceGeometry(
                block_size=block_size, total_blocks=total_blocks, regions=regions
            )
        except ValueError as e:
            raise ImageError(f"Corrupt region table: {e}")

        (count,) = COUNT.unpack_from(data, offset)
        offset += COUNT.size
        if offset + count * SNAPSHOT.size > len(data):
            raise ImageError(f"Snapshot list of {count} entries overruns the superblock")
        snapshots = []
        for _ in range(count):
            inode_no, epoch, cow_bitmap_block = SNAPSHOT.unpack_from(data, offset)
            snapshots.append(SnapshotEntry(inode_no, epoch, cow_bitmap_block))
            offset += SNAPSHOT.size

        return cls(geometry=geometry, free_blocks=free_blocks, snapshots=snapshots, version=version)
