"""Extent-mapped inode layer.

Regular files and snapshot files share one representation: a sorted list of
(logical, physical, length) extents, the first four stored inline in the
inode slot and the rest in a single index block.

Everything here is pure data manipulation over caller-owned inodes. Callers
persist the result; the only side effect this module can request is an index
block, through the ``allocate_index`` callback of :func:`insert_extent`.
"""

import bisect
import struct
from dataclasses import dataclass, field, replace
from enum import IntFlag
from typing import Callable, Optional

from snapkit.core.errors import ExtentOverflowError, ImageError, IntegrityError

INLINE_EXTENTS = 4
SLOT_SIZE = 128

# flags u16, reserved u16, size_blocks u32, extent_count u16, index_block u64
SLOT_HEADER = struct.Struct("<HHIHQ")
# logical u32, physical u64, length u32
EXTENT_RECORD = struct.Struct("<IQI")
INDEX_COUNT = struct.Struct("<H")

HOLE = None


class InodeFlags(IntFlag):
    """Inode type flags. A zero flag word marks a free slot."""

    REGULAR = 0x1
    SNAPSHOT = 0x2


@dataclass(frozen=True, order=True)
class Extent:
    """Contiguous mapping of ``length`` logical blocks onto physical blocks."""

    logical: int
    physical: int
    length: int

    def __post_init__(self) -> None:
        if self.length < 1:
            raise IntegrityError(f"Extent length must be >= 1, got {self.length}")
        if self.logical < 0 or self.physical < 0:
            raise IntegrityError(f"Negative extent address: {self}")

    @property
    def end(self) -> int:
        """Logical end (exclusive)."""
        return self.logical + self.length

    @property
    def physical_end(self) -> int:
        return self.physical + self.length

    def covers(self, logical: int) -> bool:
        return self.logical <= logical < self.end

    def physical_of(self, logical: int) -> int:
        return self.physical + (logical - self.logical)

    def slice(self, start: int, end: int) -> "Extent":
        """Sub-extent covering logical [start, end) intersected with this extent."""
        start = max(start, self.logical)
        end = min(end, self.end)
        return Extent(start, self.physical_of(start), end - start)

    def pairs(self) -> list[tuple[int, int]]:
        """(logical, physical) for every block of the extent."""
        return [(self.logical + i, self.physical + i) for i in range(self.length)]

    def __str__(self) -> str:
        return f"L{self.logical}->P{self.physical}+{self.length}"


@dataclass
class Inode:
    """In-memory inode: type flags, logical size and the full extent list."""

    inode_no: int
    flags: InodeFlags = InodeFlags.REGULAR
    size_blocks: int = 0
    extents: list[Extent] = field(default_factory=list)
    index_block: int = 0

    @property
    def is_snapshot(self) -> bool:
        return bool(self.flags & InodeFlags.SNAPSHOT)

    @property
    def needs_index(self) -> bool:
        return len(self.extents) > INLINE_EXTENTS

    def mapped_blocks(self) -> int:
        return sum(e.length for e in self.extents)

    def copy(self) -> "Inode":
        return replace(self, extents=list(self.extents))


def index_capacity(block_size: int) -> int:
    """Extent records one index block holds."""
    return (block_size - INDEX_COUNT.size) // EXTENT_RECORD.size


def max_extents(block_size: int) -> int:
    return INLINE_EXTENTS + index_capacity(block_size)


def _starts(inode: Inode) -> list[int]:
    return [e.logical for e in inode.extents]


def lookup(inode: Inode, logical: int) -> Optional[int]:
    """Physical block for ``logical``, or HOLE.

    Raises:
        IntegrityError: if the extents around ``logical`` overlap
    """
    if logical < 0:
        raise ValueError(f"Negative logical block {logical}")
    extents = inode.extents
    i = bisect.bisect_right(_starts(inode), logical) - 1
    if i < 0:
        return HOLE
    ext = extents[i]
    if i > 0 and extents[i - 1].end > ext.logical:
        raise IntegrityError(
            f"Inode {inode.inode_no}: extents {extents[i - 1]} and {ext} overlap"
        )
    if ext.covers(logical):
        return ext.physical_of(logical)
    return HOLE


def check_extents(inode: Inode, total_blocks: Optional[int] = None) -> list[str]:
    """Problems with the extent list: ordering, overlap, bounds."""
    problems = []
    prev: Optional[Extent] = None
    for ext in inode.extents:
        if prev is not None:
            if ext.logical < prev.logical:
                problems.append(f"inode {inode.inode_no}: {ext} sorted before {prev}")
            elif ext.logical < prev.end:
                problems.append(f"inode {inode.inode_no}: {prev} overlaps {ext}")
        if total_blocks is not None and ext.physical_end > total_blocks:
            problems.append(f"inode {inode.inode_no}: {ext} beyond device end {total_blocks}")
        prev = ext
    return problems


def _can_merge(left: Extent, right: Extent) -> bool:
    return left.end == right.logical and left.physical_end == right.physical


def insert_extent(
    inode: Inode,
    extent: Extent,
    allocate_index: Optional[Callable[[], int]] = None,
    capacity: Optional[int] = None,
) -> Inode:
    """Insert ``extent`` in sorted position, coalescing with contiguous neighbours.

    Args:
        inode: Inode to update (mutated and returned)
        extent: Extent logically disjoint from existing ones
        allocate_index: Called once when the list first spills past the inline slots
        capacity: Maximum extent count (inline + index block)

    Raises:
        IntegrityError: if ``extent`` overlaps an existing extent
        ExtentOverflowError: if the inode would exceed ``capacity``
    """
    extents = inode.extents
    i = bisect.bisect_left(_starts(inode), extent.logical)
    if i > 0 and extents[i - 1].end > extent.logical:
        raise IntegrityError(f"Inode {inode.inode_no}: {extent} overlaps {extents[i - 1]}")
    if i < len(extents) and extents[i].logical < extent.end:
        raise IntegrityError(f"Inode {inode.inode_no}: {extent} overlaps {extents[i]}")

    merged = extent
    lo, hi = i, i
    if i > 0 and _can_merge(extents[i - 1], merged):
        left = extents[i - 1]
        merged = Extent(left.logical, left.physical, left.length + merged.length)
        lo = i - 1
    if i < len(extents) and _can_merge(merged, extents[i]):
        right = extents[i]
        merged = Extent(merged.logical, merged.physical, merged.length + right.length)
        hi = i + 1

    new_count = len(extents) - (hi - lo) + 1
    if capacity is not None and new_count > capacity:
        raise ExtentOverflowError(
            f"Inode {inode.inode_no} would need {new_count} extents, capacity is {capacity}"
        )
    if new_count > INLINE_EXTENTS and not inode.index_block and allocate_index is not None:
        inode.index_block = allocate_index()

    extents[lo:hi] = [merged]
    inode.size_blocks = max(inode.size_blocks, merged.end)
    return inode


def coalesce(inode: Inode) -> Inode:
    """Merge neighbouring extents that are contiguous both logically and physically."""
    merged: list[Extent] = []
    for ext in inode.extents:
        if merged and _can_merge(merged[-1], ext):
            last = merged[-1]
            merged[-1] = Extent(last.logical, last.physical, last.length + ext.length)
        else:
            merged.append(ext)
    inode.extents = merged
    return inode


def split_for_overwrite(inode: Inode, start: int, end: int) -> tuple[list[Extent], list[Extent]]:
    """Break extents at ``start`` and ``end`` so [start, end) is covered by whole extents.

    The logical-to-physical function is unchanged; only extent boundaries move.

    Returns:
        (extents covering the range, remainder pieces split off the range edges)

    Raises:
        IntegrityError: if any block of the range is a hole
    """
    if start >= end:
        return [], []
    covered = 0
    result: list[Extent] = []
    covering: list[Extent] = []
    remainder: list[Extent] = []
    for ext in inode.extents:
        if ext.end <= start or ext.logical >= end:
            result.append(ext)
            continue
        if ext.logical < start:
            piece = ext.slice(ext.logical, start)
            result.append(piece)
            remainder.append(piece)
        middle = ext.slice(start, end)
        result.append(middle)
        covering.append(middle)
        covered += middle.length
        if ext.end > end:
            piece = ext.slice(end, ext.end)
            result.append(piece)
            remainder.append(piece)
    if covered != end - start:
        raise IntegrityError(
            f"Inode {inode.inode_no}: range [{start}, {end}) is not fully mapped"
        )
    inode.extents = result
    return covering, remainder


def remove_range(inode: Inode, start: int, end: int) -> list[Extent]:
    """Unmap logical [start, end); unmapped parts are ignored.

    Removing a tail (``end >= size_blocks``) shrinks ``size_blocks`` to ``start``.

    Returns:
        Released runs with their original (logical, physical) mapping
    """
    if start >= end:
        return []
    released: list[Extent] = []
    kept: list[Extent] = []
    for ext in inode.extents:
        if ext.end <= start or ext.logical >= end:
            kept.append(ext)
            continue
        if ext.logical < start:
            kept.append(ext.slice(ext.logical, start))
        released.append(ext.slice(start, end))
        if ext.end > end:
            kept.append(ext.slice(end, ext.end))
    inode.extents = kept
    if end >= inode.size_blocks:
        inode.size_blocks = min(inode.size_blocks, start)
    return released


def iter_pairs(inode: Inode):
    """Yield (logical, physical) for every mapped block, in logical order."""
    for ext in inode.extents:
        yield from ext.pairs()


# -- serialization ---------------------------------------------------------


def pack_slot(inode: Inode) -> bytes:
    """Inode slot bytes (inline extents only)."""
    parts = [
        SLOT_HEADER.pack(
            int(inode.flags), 0, inode.size_blocks, len(inode.extents), inode.index_block
        )
    ]
    for ext in inode.extents[:INLINE_EXTENTS]:
        parts.append(EXTENT_RECORD.pack(ext.logical, ext.physical, ext.length))
    return b"".join(parts).ljust(SLOT_SIZE, b"\0")


def unpack_slot(inode_no: int, data: bytes) -> tuple[Inode, int]:
    """Decode a slot.

    Returns:
        (inode with inline extents loaded, total extent count including the index block)
    """
    flags, _reserved, size_blocks, count, index_block = SLOT_HEADER.unpack_from(data, 0)
    extents = []
    offset = SLOT_HEADER.size
    for _ in range(min(count, INLINE_EXTENTS)):
        logical, physical, length = EXTENT_RECORD.unpack_from(data, offset)
        offset += EXTENT_RECORD.size
        extents.append(Extent(logical, physical, length))
    inode = Inode(
        inode_no=inode_no,
        flags=InodeFlags(flags),
        size_blocks=size_blocks,
        extents=extents,
        index_block=index_block,
    )
    return inode, count


def is_free_slot(data: bytes) -> bool:
    return SLOT_HEADER.unpack_from(data, 0)[0] == 0


def pack_index(extents: list[Extent], block_size: int) -> bytes:
    """Index block bytes for the extents beyond the inline slots."""
    if len(extents) > index_capacity(block_size):
        raise ExtentOverflowError(
            f"{len(extents)} extents exceed index capacity {index_capacity(block_size)}"
        )
    parts = [INDEX_COUNT.pack(len(extents))]
    for ext in extents:
        parts.append(EXTENT_RECORD.pack(ext.logical, ext.physical, ext.length))
    return b"".join(parts).ljust(block_size, b"\0")


def unpack_index(data: bytes, expected: int) -> list[Extent]:
    """Decode an index block holding ``expected`` extents.

    Raises:
        ImageError: if the stored count disagrees with the slot
    """
    (count,) = INDEX_COUNT.unpack_from(data, 0)
    if count != expected:
        raise ImageError(f"Index block holds {count} extents, inode expects {expected}")
    extents = []
    offset = INDEX_COUNT.size
    for _ in range(count):
        logical, physical, length = EXTENT_RECORD.unpack_from(data, offset)
        offset += EXTENT_RECORD.size
        extents.append(Extent(logical, physical, length))
    return extents


def load_inode(inode_no: int, slot: bytes, read_block: Callable[[int], bytes]) -> Inode:
    """Decode a slot and, when it spills, its index block via ``read_block``."""
    inode, count = unpack_slot(inode_no, slot)
    if count > INLINE_EXTENTS:
        if not inode.index_block:
            raise ImageError(f"Inode {inode_no} has {count} extents but no index block")
        inode.extents.extend(unpack_index(read_block(inode.index_block), count - INLINE_EXTENTS))
    return inode
