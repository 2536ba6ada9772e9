"""Device geometry and allocator policy models.

A geometry is the block size, the block count and a region table that splits
[0, total_blocks) into six disjoint ranges:

    superblock | block bitmap | exclude bitmap | inode table | namespace | data

The region *table* always lists regions in that order; their physical
placement may differ (the namespace may sit in front of the inode table).
"""

from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field, field_validator, model_validator

# Smallest size that holds the 124-byte superblock header and a 128-byte inode slot
MIN_BLOCK_SIZE = 128
MAX_BLOCK_SIZE = 4096


class RegionKind(str, Enum):
    """Region table entries, in superblock order."""

    SUPERBLOCK = "superblock"
    BLOCK_BITMAP = "block_bitmap"
    EXCLUDE_BITMAP = "exclude_bitmap"
    INODE_TABLE = "inode_table"
    NAMESPACE = "namespace"
    DATA = "data"


REGION_ORDER: tuple[RegionKind, ...] = tuple(RegionKind)


class Region(BaseModel):
    """Half-open block range [start, start + length)."""

    model_config = {"frozen": True}

    start: int = Field(..., ge=0)
    length: int = Field(..., ge=0)

    @property
    def end(self) -> int:
        return self.start + self.length

    def __contains__(self, addr: object) -> bool:
        return isinstance(addr, int) and self.start <= addr < self.end

    def blocks(self) -> range:
        return range(self.start, self.end)


def bitmap_blocks(total_blocks: int, block_size: int) -> int:
    """Blocks needed for a one-bit-per-block bitmap."""
    nbytes = (total_blocks + 7) // 8
    return max(1, (nbytes + block_size - 1) // block_size)


class DeviceGeometry(BaseModel):
    """Validated block size, block count and region table.

    Examples:
        Desk-scale default:
            DeviceGeometry.build(block_size=256, total_blocks=128)

        Pinned layout of the worked example (namespace at 3..9, inode table at 10..11):
            DeviceGeometry.build(256, 100, namespace_blocks=7, inode_table_blocks=2)
    """

    model_config = {"frozen": True}

    block_size: int = Field(..., description="Bytes per block (power of two)")
    total_blocks: int = Field(..., ge=1, description="Blocks on the device")
    regions: dict[RegionKind, Region] = Field(..., description="Region table")

    @field_validator("block_size")
    @classmethod
    def validate_block_size(cls, v: int) -> int:
        if v < MIN_BLOCK_SIZE or v > MAX_BLOCK_SIZE or v & (v - 1):
            raise ValueError(
                f"block_size must be a power of two in "
                f"[{MIN_BLOCK_SIZE}, {MAX_BLOCK_SIZE}], got {v}"
            )
        return v

    @model_validator(mode="after")
    def validate_regions(self) -> "DeviceGeometry":
        """Regions must be present, disjoint and cover the device exactly once."""
        missing = [kind.value for kind in REGION_ORDER if kind not in self.regions]
        if missing:
            raise ValueError(f"Region table missing: {', '.join(missing)}")

        spans = sorted(self.regions.items(), key=lambda item: item[1].start)
        cursor = 0
        for kind, region in spans:
            if region.length == 0:
                continue
            if region.start != cursor:
                raise ValueError(
                    f"Region {kind.value} starts at {region.start}, expected {cursor} "
                    "(regions must be disjoint and contiguous)"
                )
            cursor = region.end
        if cursor != self.total_blocks:
            raise ValueError(
                f"Regions cover {cursor} blocks, device has {self.total_blocks}"
            )

        for kind in (
            RegionKind.SUPERBLOCK,
            RegionKind.INODE_TABLE,
            RegionKind.NAMESPACE,
            RegionKind.DATA,
        ):
            if self.regions[kind].length == 0:
                raise ValueError(f"Region {kind.value} must not be empty")
        if self.regions[RegionKind.SUPERBLOCK].length != 1:
            raise ValueError("Superblock region must be exactly one block")

        needed = bitmap_blocks(self.total_blocks, self.block_size)
        for kind in (RegionKind.BLOCK_BITMAP, RegionKind.EXCLUDE_BITMAP):
            if self.regions[kind].length < needed:
                raise ValueError(f"Region {kind.value} needs {needed} blocks")
        return self

    @classmethod
    def build(
        cls,
        block_size: int,
        total_blocks: int,
        namespace_blocks: int = 1,
        inode_table_blocks: int = 4,
    ) -> "DeviceGeometry":
        """Lay regions out in physical order: superblock, bitmaps, namespace, inode table, data.

        Raises:
            pydantic.ValidationError: if the layout does not fit the device
        """
        bm = bitmap_blocks(total_blocks, block_size) if block_size > 0 else 1
        cursor = 0

        def take(length: int) -> Region:
            nonlocal cursor
            region = Region(start=cursor, length=max(0, length))
            cursor += max(0, length)
            return region

        superblock = take(1)
        block_bitmap = take(bm)
        exclude_bitmap = take(bm)
        namespace = take(namespace_blocks)
        inode_table = take(inode_table_blocks)
        data = Region(start=cursor, length=max(0, total_blocks - cursor))

        return cls(
            block_size=block_size,
            total_blocks=total_blocks,
            regions={
                RegionKind.SUPERBLOCK: superblock,
                RegionKind.BLOCK_BITMAP: block_bitmap,
                RegionKind.EXCLUDE_BITMAP: exclude_bitmap,
                RegionKind.INODE_TABLE: inode_table,
                RegionKind.NAMESPACE: namespace,
                RegionKind.DATA: data,
            },
        )

    def region(self, kind: RegionKind) -> Region:
        return self.regions[kind]

    @property
    def data(self) -> Region:
        return self.regions[RegionKind.DATA]

    @property
    def image_size(self) -> int:
        return self.block_size * self.total_blocks

    @property
    def metadata_blocks(self) -> int:
        """Blocks permanently allocated to fixed metadata regions."""
        return self.total_blocks - self.data.length

    def is_metadata(self, addr: int) -> bool:
        return 0 <= addr < self.total_blocks and addr not in self.data

    def is_protected_metadata(self, addr: int) -> bool:
        """Inode table and namespace blocks: fixed-location metadata under COW."""
        return (
            addr in self.regions[RegionKind.INODE_TABLE]
            or addr in self.regions[RegionKind.NAMESPACE]
        )


class AllocatorPolicy(BaseModel):
    """Block placement policy.

    Not persisted in the image: the same policy must be supplied every time an
    image is opened for block numbers to replay identically.

    Examples:
        First-fit, no alignment (default):
            AllocatorPolicy()

        Worked-example layout (goals aligned to 10, first data at 40):
            AllocatorPolicy(stride=10, data_goal=40)
    """

    stride: int = Field(1, ge=1, description="Allocation goals are rounded up to this alignment")
    data_goal: Optional[int] = Field(
        None, ge=0, description="Goal for a file's first data block (default: data region start)"
    )
    snapshot_meta_from_top: bool = Field(
        True, description="Place snapshot metadata from the top of the device downward"
    )

    def align_up(self, addr: int) -> int:
        return -(-addr // self.stride) * self.stride

    def align_down(self, addr: int) -> int:
        return (addr // self.stride) * self.stride
