"""Whole-volume invariant checks.

:func:`verify_volume` recomputes every structural invariant from the device
state and returns the violations found; an empty list means the image is
consistent.
"""

import logging
from collections import Counter
from dataclasses import dataclass

from snapkit.core.blockdev import BlockDevice
from snapkit.core.extents import InodeFlags, check_extents
from snapkit.core.fs import FileSystem
from snapkit.core.geometry import RegionKind
from snapkit.core.snapcore import SnapshotCore

logger = logging.getLogger(__name__)


def _set_bits(bits) -> list[int]:
    return [i for i, bit in enumerate(bits) if bit]


@dataclass(frozen=True)
class Violation:
    check: str
    detail: str

    def __str__(self) -> str:
        return f"[{self.check}] {self.detail}"


def verify_volume(dev: BlockDevice, core: SnapshotCore, fs: FileSystem) -> list[Violation]:
    violations: list[Violation] = []

    def fail(check: str, detail: str) -> None:
        violations.append(Violation(check, detail))

    geo = dev.geometry
    bitmap = dev.block_bitmap()
    exclude = dev.exclude_bitmap()

    # bitmap conservation
    if dev.free_count != dev.total_blocks - bitmap.count(1):
        fail(
            "conservation",
            f"free counter {dev.free_count} != {dev.total_blocks} - {bitmap.count(1)} allocated",
        )

    metadata = set()
    for kind, region in geo.regions.items():
        if kind is RegionKind.DATA:
            continue
        metadata.update(region.blocks())
    for addr in sorted(metadata):
        if not bitmap[addr]:
            fail("metadata", f"metadata block {addr} not allocated")

    if (exclude & ~bitmap).any():
        fail("exclude-subset", f"excluded but free: {_set_bits(exclude & ~bitmap)}")

    # snapshot files: ownership and closure
    owners: Counter[int] = Counter()
    ids = [r.snapshot_id for r in core.records]
    if len(set(ids)) != len(ids):
        fail("snapshot-list", f"duplicate snapshot ids {ids}")
    for record in core.records:
        inode = record.inode
        if not inode.flags & InodeFlags.SNAPSHOT:
            fail("snapshot-flag", f"snapshot {record.snapshot_id} inode not flagged snapshot")
        for problem in check_extents(inode, dev.total_blocks):
            fail("extents", f"snapshot {record.snapshot_id}: {problem}")
        for ext in inode.extents:
            if ext.end > dev.total_blocks:
                fail("extents", f"snapshot {record.snapshot_id}: {ext} maps past device end")
        for _, physical in core.mapped_pairs(record):
            owners[physical] += 1
        for block in record.metadata_blocks():
            owners[block] += 1

    for block, count in owners.items():
        if count > 1:
            fail("ownership", f"block {block} owned {count} times by snapshot files")
        if block >= dev.total_blocks:
            continue
        if not exclude[block]:
            fail("exclude-closure", f"snapshot-owned block {block} not excluded")
    for block in _set_bits(exclude):
        if block not in owners:
            fail("exclude-closure", f"excluded block {block} owned by no snapshot file")

    # regular files
    live: Counter[int] = Counter()
    for inode_no, inode in fs.inodes().items():
        if inode.flags != InodeFlags.REGULAR:
            fail("inode-flag", f"inode {inode_no} in the table has flags {inode.flags!r}")
        for problem in check_extents(inode, dev.total_blocks):
            fail("extents", problem)
        blocks = [p for ext in inode.extents for p in range(ext.physical, ext.physical_end)]
        if inode.index_block:
            blocks.append(inode.index_block)
        if inode.needs_index and not inode.index_block:
            fail("index", f"inode {inode_no} spills past inline slots without index block")
        for block in blocks:
            live[block] += 1
            if block >= dev.total_blocks:
                continue
            if not bitmap[block]:
                fail("live-block", f"inode {inode_no} maps free block {block}")
            if exclude[block]:
                fail("live-block", f"inode {inode_no} maps snapshot-owned block {block}")
            if block in metadata:
                fail("live-block", f"inode {inode_no} maps metadata block {block}")
    for block, count in live.items():
        if count > 1:
            fail("live-block", f"block {block} mapped {count} times by live files")

    accounted = metadata | set(live) | set(owners)
    for block in _set_bits(bitmap):
        if block not in accounted:
            fail("leak", f"block {block} allocated but referenced by nothing")

    # namespace
    inodes = fs.inodes()
    seen: set[str] = set()
    for block, entries in fs.namespace_blocks().items():
        for name, inode_no in entries:
            if name in seen:
                fail("namespace", f"duplicate name {name!r}")
            seen.add(name)
            if inode_no not in inodes:
                fail("namespace", f"{name!r} points at free inode {inode_no}")
    referenced = Counter(i for entries in fs.namespace_blocks().values() for _, i in entries)
    for inode_no in inodes:
        if referenced[inode_no] != 1:
            fail("namespace", f"inode {inode_no} named {referenced[inode_no]} times")

    if violations:
        logger.warning(f"verify: {len(violations)} violations")
    return violations
