"""Snapshot lifecycle: listing, point-in-time file views, deletion with merge."""

import logging
from typing import Optional

from pydantic import BaseModel, Field

from snapkit.core.blockdev import BlockDevice
from snapkit.core.errors import ImageError, NotFoundError
from snapkit.core.extents import SLOT_SIZE, is_free_slot, load_inode, lookup
from snapkit.core.fs import FileSystem, inode_location, unpack_namespace_block
from snapkit.core.geometry import RegionKind
from snapkit.core.snapcore import SnapshotCore, SnapshotRecord

logger = logging.getLogger(__name__)


class SnapshotStats(BaseModel):
    """Space accounting of one snapshot file."""

    id: int = Field(..., description="Snapshot id (epoch)")
    inode_no: int = Field(..., description="Block holding the snapshot inode")
    created_at: int = 0
    mapped: int = Field(0, description="Blocks the snapshot file maps")
    identity: int = Field(0, description="Mappings L->L (handed over by MOW)")
    copies: int = Field(0, description="Mappings L->P, P != L (copied by COW)")
    overhead_blocks: int = Field(0, description="Inode, index and COW bitmap blocks")
    active: bool = False


class DeviceStats(BaseModel):
    total_blocks: int
    free_blocks: int
    allocated_blocks: int
    excluded_blocks: int
    snapshots: list[SnapshotStats] = Field(default_factory=list)

    @property
    def snapshot_overhead(self) -> int:
        """Blocks held only because snapshots exist."""
        return sum(s.mapped + s.overhead_blocks for s in self.snapshots)


class SnapshotManager:
    def __init__(self, device: BlockDevice, core: SnapshotCore, fs: FileSystem):
        self.dev = device
        self.core = core
        self.fs = fs

    # -- listing -----------------------------------------------------------

    def _stats_of(self, record: SnapshotRecord) -> SnapshotStats:
        pairs = self.core.mapped_pairs(record)
        identity = sum(1 for logical, physical in pairs if logical == physical)
        return SnapshotStats(
            id=record.snapshot_id,
            inode_no=record.inode_block,
            created_at=record.created_at,
            mapped=len(pairs),
            identity=identity,
            copies=len(pairs) - identity,
            overhead_blocks=len(record.metadata_blocks()),
            active=record is self.core.active,
        )

    def snapshot_list(self) -> list[SnapshotStats]:
        """Snapshots oldest first, with their space accounting."""
        return [self._stats_of(record) for record in self.core.records]

    def stats(self) -> DeviceStats:
        dev = self.dev
        return DeviceStats(
            total_blocks=dev.total_blocks,
            free_blocks=dev.free_count,
            allocated_blocks=dev.allocated_count,
            excluded_blocks=dev.excluded_count,
            snapshots=self.snapshot_list(),
        )

    # -- point-in-time views ----------------------------------------------

    def _view_names(self, snapshot_id: int) -> dict[str, int]:
        names: dict[str, int] = {}
        for block in self.dev.geometry.region(RegionKind.NAMESPACE).blocks():
            for name, inode_no in unpack_namespace_block(
                self.core.snapshot_read_block(snapshot_id, block)
            ):
                names[name] = inode_no
        return names

    def files_at(self, snapshot_id: int) -> list[str]:
        """File names present when the snapshot was taken."""
        return sorted(self._view_names(snapshot_id))

    def read_file_at(self, snapshot_id: int, name: str) -> bytes:
        """File content as of the snapshot, resolved block by block through the snapshot.

        Raises:
            NotFoundError: if the snapshot is unknown or the file did not exist then
        """
        self.core.get(snapshot_id)
        names = self._view_names(snapshot_id)
        if name not in names:
            raise NotFoundError(f"No file {name} in snapshot {snapshot_id}")

        def read(addr: int) -> bytes:
            return self.core.snapshot_read_block(snapshot_id, addr)

        inode_no = names[name]
        block, offset = inode_location(
            inode_no,
            self.dev.geometry.region(RegionKind.INODE_TABLE).start,
            self.dev.block_size,
        )
        slot = read(block)[offset : offset + SLOT_SIZE]
        if is_free_slot(slot):
            raise ImageError(f"Snapshot {snapshot_id}: {name} points at free inode {inode_no}")
        inode = load_inode(inode_no, slot, read)

        zero = self.dev.zero_block()
        parts = []
        for logical in range(inode.size_blocks):
            physical = lookup(inode, logical)
            parts.append(zero if physical is None else read(physical))
        return b"".join(parts)

    # -- deletion ----------------------------------------------------------

    def snapshot_delete(self, snapshot_id: int) -> int:
        """Delete a snapshot, merging what older views still need into the next older one.

        A mapping L -> P moves to the previous snapshot iff that snapshot has a
        hole at L and L was in use when it was taken; everything else is freed.

        Returns:
            Number of blocks returned to the free pool

        Raises:
            NotFoundError: if the snapshot is unknown
        """
        record = self.core.get(snapshot_id)
        previous = self.core.previous(record)
        before = self.dev.allocated_count

        transfers: list[tuple[int, int]] = []
        freed: list[int] = []
        for logical, physical in self.core.mapped_pairs(record):
            if (
                previous is not None
                and lookup(previous.inode, logical) is None
                and previous.cow_bitmap[logical]
            ):
                transfers.append((logical, physical))
            else:
                freed.append(physical)

        self.core.drop(record)
        self.dev.unexclude(freed)
        self.dev.free_blocks(freed)

        if previous is not None:
            for logical, physical, length in _runs(transfers):
                self.core.map_run(previous, logical, physical, length)

        released = before - self.dev.allocated_count
        logger.info(
            f"Snapshot {snapshot_id} deleted: {len(transfers)} mappings merged, "
            f"{released} blocks freed"
        )
        return released

    # -- rollback ----------------------------------------------------------

    def restore_file(self, snapshot_id: int, name: str, target: Optional[str] = None) -> None:
        """Rewrite a live file (``target``, default ``name``) with its content at a snapshot.

        Holes of the snapshot version come back as zero-filled blocks.
        """
        content = self.read_file_at(snapshot_id, name)
        target = target or name
        if self.fs.exists(target):
            self.fs.truncate_file(target, 0)
        else:
            self.fs.create_file(target)
        if content:
            self.fs.write_file(target, 0, content)
        logger.info(f"Restored {target} from snapshot {snapshot_id}:{name}")

    # -- rendering ---------------------------------------------------------

    def dump_lines(self) -> list[str]:
        """Figure-style state dump: device counters, file extents, per-snapshot L→P tables."""
        dev = self.dev
        lines = [
            f"device blocks={dev.total_blocks} block_size={dev.block_size} "
            f"free={dev.free_count} allocated={dev.allocated_count} "
            f"excluded={dev.excluded_count}",
            f"bitmap {_bit_runs(dev.block_bitmap())}",
            f"exclude {_bit_runs(dev.exclude_bitmap())}",
        ]
        for info in self.fs.list_files():
            inode = self.fs.inode_of(info.name)
            extents = " ".join(str(e) for e in inode.extents) or "-"
            lines.append(
                f"file {info.name} inode={info.inode_no} size={info.size_blocks} {extents}"
            )
        for stats in self.snapshot_list():
            record = self.core.get(stats.id)
            lines.append(
                f"snapshot {stats.id} inode={stats.inode_no} "
                f"cow_bitmap={record.cow_bitmap_block} mapped={stats.mapped} "
                f"identity={stats.identity} copies={stats.copies}"
                + (" active" if stats.active else "")
            )
            for logical, physical in self.core.mapped_pairs(record):
                lines.append(f"  {logical}→{physical}")
        return lines


def _runs(pairs: list[tuple[int, int]]) -> list[tuple[int, int, int]]:
    """Group (logical, physical) pairs into (logical, physical, length) runs."""
    runs: list[tuple[int, int, int]] = []
    for logical, physical in pairs:
        if runs:
            l0, p0, n = runs[-1]
            if l0 + n == logical and p0 + n == physical:
                runs[-1] = (l0, p0, n + 1)
                continue
        runs.append((logical, physical, 1))
    return runs


def _bit_runs(bits) -> str:
    parts = []
    pos, total = 0, len(bits)
    while pos < total:
        if not bits[pos]:
            pos += 1
            continue
        start = pos
        while pos < total and bits[pos]:
            pos += 1
        parts.append(f"{start}" if pos - start == 1 else f"{start}-{pos - 1}")
    return ",".join(parts) or "-"
