"""Snapshot files, the COW/MOW gates and chain-resolved snapshot reads.

Every snapshot is a sparse extent-mapped file whose logical block L stands
for device block L. A mapping L -> P means "this snapshot's version of block
L lives in P"; a hole means "same as the next newer snapshot, or live".

Only the newest (active) snapshot is ever written. Blocks it must preserve
are those set in its COW bitmap (in use, not snapshot-owned, at creation)
that it does not map yet:

* fixed-location metadata is copied aside before an in-place rewrite (COW);
* data is left where it is and handed to the snapshot (MOW), the new
  version going to a fresh block.

Every block a snapshot file maps, plus its own inode/index/bitmap blocks, is
set in the exclude bitmap and therefore never preserved again.
"""

import logging
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

from bitarray import bitarray

from snapkit.core.blockdev import BlockDevice
from snapkit.core.errors import ImageError, IntegrityError, NotFoundError, SnapshotLimitError
from snapkit.core.extents import (
    INLINE_EXTENTS,
    SLOT_SIZE,
    Extent,
    Inode,
    InodeFlags,
    insert_extent,
    iter_pairs,
    load_inode,
    lookup,
    max_extents,
    pack_index,
    pack_slot,
)
from snapkit.core.geometry import bitmap_blocks
from snapkit.core.monitor import GateMonitor, PreservationKind
from snapkit.core.superblock import SnapshotEntry, max_snapshots

logger = logging.getLogger(__name__)

# created_at u64, stored right after the inode slot in a snapshot inode block
TRAILER = struct.Struct("<Q")


class GateDecision(str, Enum):
    PRESERVED = "preserved"
    FREE_OK = "free-ok"


class ReleaseReason(str, Enum):
    REWRITE = "rewrite"
    DELETE = "delete"


@dataclass
class SnapshotRecord:
    """In-memory state of one snapshot."""

    snapshot_id: int
    inode: Inode
    cow_bitmap: bitarray
    cow_bitmap_block: int
    cow_bitmap_len: int
    created_at: int = 0

    @property
    def inode_block(self) -> int:
        return self.inode.inode_no

    def metadata_blocks(self) -> list[int]:
        """Blocks holding the snapshot file's own metadata."""
        blocks = [self.inode_block]
        blocks.extend(range(self.cow_bitmap_block, self.cow_bitmap_block + self.cow_bitmap_len))
        if self.inode.index_block:
            blocks.append(self.inode.index_block)
        return blocks

    def entry(self) -> SnapshotEntry:
        return SnapshotEntry(self.inode_block, self.snapshot_id, self.cow_bitmap_block)


class SnapshotCore:
    """Snapshot chain of one device, oldest first; the last one is active."""

    def __init__(
        self,
        device: BlockDevice,
        monitor: Optional[GateMonitor] = None,
        clock: Optional[Callable[[], int]] = None,
    ):
        self.dev = device
        self.monitor = monitor or GateMonitor()
        self.clock = clock or (lambda: 0)
        self.records: list[SnapshotRecord] = []
        self._capacity = max_extents(device.block_size)
        self.load()

    # -- persistence -------------------------------------------------------

    def load(self) -> None:
        """(Re)build the chain from the superblock snapshot list."""
        dev = self.dev
        nbm = bitmap_blocks(dev.total_blocks, dev.block_size)
        records = []
        for entry in dev.snapshot_entries:
            raw = dev.read_block(entry.inode_no)
            inode = load_inode(entry.inode_no, raw[:SLOT_SIZE], dev.read_block)
            if not inode.is_snapshot:
                raise ImageError(f"Block {entry.inode_no} does not hold a snapshot inode")
            (created_at,) = TRAILER.unpack_from(raw, SLOT_SIZE)
            payload = b"".join(
                dev.read_block(b)
                for b in range(entry.cow_bitmap_block, entry.cow_bitmap_block + nbm)
            )
            cow = bitarray(endian="little")
            cow.frombytes(payload[: (dev.total_blocks + 7) // 8])
            del cow[dev.total_blocks :]
            records.append(
                SnapshotRecord(
                    snapshot_id=entry.epoch,
                    inode=inode,
                    cow_bitmap=cow,
                    cow_bitmap_block=entry.cow_bitmap_block,
                    cow_bitmap_len=nbm,
                    created_at=created_at,
                )
            )
        self.records = records

    def persist_inode(self, record: SnapshotRecord) -> None:
        """Write the snapshot inode (and index block) back; drop an index block no longer needed."""
        dev = self.dev
        inode = record.inode
        if inode.index_block and not inode.needs_index:
            dev.unexclude([inode.index_block])
            dev.free_blocks([inode.index_block])
            inode.index_block = 0
        if inode.needs_index:
            dev.write_block(
                inode.index_block, pack_index(inode.extents[INLINE_EXTENTS:], dev.block_size)
            )
        raw = pack_slot(inode) + TRAILER.pack(record.created_at)
        dev.write_block(inode.inode_no, raw.ljust(dev.block_size, b"\0"))

    def persist_cow_bitmap(self, record: SnapshotRecord) -> None:
        dev = self.dev
        payload = record.cow_bitmap.tobytes().ljust(record.cow_bitmap_len * dev.block_size, b"\0")
        for i in range(record.cow_bitmap_len):
            chunk = payload[i * dev.block_size : (i + 1) * dev.block_size]
            dev.write_block(record.cow_bitmap_block + i, chunk)

    def flush(self) -> None:
        for record in self.records:
            self.persist_cow_bitmap(record)
        self.dev.snapshot_entries = [r.entry() for r in self.records]

    # -- chain access ------------------------------------------------------

    @property
    def active(self) -> Optional[SnapshotRecord]:
        return self.records[-1] if self.records else None

    def get(self, snapshot_id: int) -> SnapshotRecord:
        for record in self.records:
            if record.snapshot_id == snapshot_id:
                return record
        raise NotFoundError(f"Unknown snapshot {snapshot_id}")

    def position(self, snapshot_id: int) -> int:
        for i, record in enumerate(self.records):
            if record.snapshot_id == snapshot_id:
                return i
        raise NotFoundError(f"Unknown snapshot {snapshot_id}")

    def previous(self, record: SnapshotRecord) -> Optional[SnapshotRecord]:
        i = self.position(record.snapshot_id)
        return self.records[i - 1] if i > 0 else None

    # -- snapshot take -----------------------------------------------------

    def take(self) -> int:
        """Create a new, all-holes snapshot and make it active.

        Raises:
            SnapshotLimitError: if the superblock list is full
            OutOfSpaceError: if the snapshot metadata cannot be allocated
        """
        dev = self.dev
        limit = max_snapshots(dev.block_size)
        if len(self.records) >= limit:
            raise SnapshotLimitError(f"Superblock holds at most {limit} snapshots")

        nbm = bitmap_blocks(dev.total_blocks, dev.block_size)
        blocks = dev.alloc_blocks(
            1 + nbm, reverse=dev.policy.snapshot_meta_from_top, contiguous=True
        )
        dev.exclude(blocks)
        cow = dev.block_bitmap() & ~dev.exclude_bitmap()

        snapshot_id = max((r.snapshot_id for r in self.records), default=0) + 1
        record = SnapshotRecord(
            snapshot_id=snapshot_id,
            inode=Inode(
                inode_no=blocks[0], flags=InodeFlags.SNAPSHOT, size_blocks=dev.total_blocks
            ),
            cow_bitmap=cow,
            cow_bitmap_block=blocks[1],
            cow_bitmap_len=nbm,
            created_at=self.clock(),
        )
        self.persist_inode(record)
        self.persist_cow_bitmap(record)
        self.records.append(record)
        dev.snapshot_entries = [r.entry() for r in self.records]
        logger.info(
            f"Snapshot {snapshot_id} taken: inode {record.inode_block}, "
            f"{cow.count(1)} blocks under COW"
        )
        return snapshot_id

    # -- mapping -----------------------------------------------------------

    def _alloc_index(self) -> int:
        (block,) = self.dev.alloc_blocks(1, reverse=self.dev.policy.snapshot_meta_from_top)
        self.dev.exclude([block])
        return block

    def map_run(self, record: SnapshotRecord, logical: int, physical: int, length: int) -> None:
        """Map logical [logical, logical+length) of a snapshot file and persist it."""
        insert_extent(
            record.inode,
            Extent(logical, physical, length),
            allocate_index=self._alloc_index,
            capacity=self._capacity,
        )
        self.persist_inode(record)

    def needs_preservation(self, addr: int) -> bool:
        """Gate trigger: active snapshot exists, COW bit set, no mapping yet."""
        active = self.active
        return (
            active is not None
            and bool(active.cow_bitmap[addr])
            and lookup(active.inode, addr) is None
        )

    # -- gates -------------------------------------------------------------

    def cow_gate(self, addr: int, new_content: bytes) -> None:
        """Rewrite a fixed-location metadata block in place, copying its old content aside first.

        Raises:
            IntegrityError: if ``addr`` belongs to a snapshot file
            OutOfSpaceError: if the copy block cannot be allocated
        """
        dev = self.dev
        if dev.is_excluded(addr):
            raise IntegrityError(f"cow_gate on snapshot-owned block {addr}")
        if self.needs_preservation(addr):
            active = self.active
            assert active is not None
            (copy,) = dev.alloc_blocks(1, hint=addr + 1)
            try:
                self.map_run(active, addr, copy, 1)
            except Exception:
                dev.free_blocks([copy])
                raise
            dev.write_block(copy, dev.read_block(addr))
            dev.exclude([copy])
            active.cow_bitmap[addr] = 0
            self.persist_cow_bitmap(active)
            self.monitor.record_preservation(
                active.snapshot_id, addr, PreservationKind.COW, op=self.clock()
            )
            logger.debug(f"COW block {addr} -> {copy} for snapshot {active.snapshot_id}")
        dev.write_block(addr, new_content)

    def mow_gate(self, physical: int, length: int, reason: ReleaseReason) -> list[GateDecision]:
        """Decide, per block of a run leaving a live file, whether the active snapshot keeps it.

        Preserved blocks are handed over in place (identity mapping, exclude bit
        set, COW bit cleared) and stay allocated. The caller frees or overwrites
        the FREE_OK ones.

        Raises:
            IntegrityError: if a block of the run is snapshot-owned
        """
        dev = self.dev
        decisions = []
        for addr in range(physical, physical + length):
            if dev.is_excluded(addr):
                raise IntegrityError(f"mow_gate on snapshot-owned block {addr}")
            decisions.append(
                GateDecision.PRESERVED if self.needs_preservation(addr) else GateDecision.FREE_OK
            )

        active = self.active
        if active is None or GateDecision.PRESERVED not in decisions:
            return decisions

        i = 0
        while i < length:
            if decisions[i] is not GateDecision.PRESERVED:
                i += 1
                continue
            j = i
            while j < length and decisions[j] is GateDecision.PRESERVED:
                j += 1
            start, run = physical + i, j - i
            self.map_run(active, start, start, run)
            dev.exclude(range(start, start + run))
            active.cow_bitmap[start : start + run] = 0
            for addr in range(start, start + run):
                self.monitor.record_preservation(
                    active.snapshot_id, addr, PreservationKind.MOW, op=self.clock()
                )
            logger.debug(
                f"MOW ({reason.value}) blocks {start}-{start + run - 1} "
                f"to snapshot {active.snapshot_id}"
            )
            i = j
        self.persist_cow_bitmap(active)
        return decisions

    # -- reads -------------------------------------------------------------

    def resolve(self, snapshot_id: int, addr: int) -> int:
        """Physical block holding ``addr`` as seen by a snapshot.

        Walks from the snapshot towards the newest; the first mapping wins,
        otherwise the live block itself.
        """
        start = self.position(snapshot_id)
        for record in self.records[start:]:
            physical = lookup(record.inode, addr)
            if physical is not None:
                return physical
        return addr

    def snapshot_read_block(self, snapshot_id: int, addr: int) -> bytes:
        """Block ``addr`` as it was when the snapshot was taken.

        Blocks that were free or snapshot-owned at that time read as zeros.
        """
        record = self.get(snapshot_id)
        self.dev.check_addr(addr)
        physical = lookup(record.inode, addr)
        if physical is None:
            if not record.cow_bitmap[addr]:
                return self.dev.zero_block()
            physical = self.resolve(snapshot_id, addr)
        return self.dev.read_block(physical)

    # -- removal -----------------------------------------------------------

    def drop(self, record: SnapshotRecord) -> list[int]:
        """Unregister a snapshot and free its own metadata blocks.

        Returns:
            The freed metadata blocks
        """
        blocks = record.metadata_blocks()
        self.records.remove(record)
        self.dev.unexclude(blocks)
        self.dev.free_blocks(blocks)
        self.dev.snapshot_entries = [r.entry() for r in self.records]
        self.monitor.forget_epoch(record.snapshot_id)
        return blocks

    def mapped_pairs(self, record: SnapshotRecord) -> list[tuple[int, int]]:
        return list(iter_pairs(record.inode))
