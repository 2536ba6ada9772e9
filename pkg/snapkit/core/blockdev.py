"""Fixed-block virtual disk over one image file.

The device owns the block bitmap, the exclude bitmap, the free counter and the
superblock snapshot list. It knows nothing about COW or MOW: writes are raw
and the snapshot layer decides what must be preserved before calling them.

Usage:
    dev = BlockDevice.format(Path("disk.img"), DeviceGeometry.build(256, 128))
    blocks = dev.alloc_blocks(4)
    dev.write_block(blocks[0], b"HEAD".ljust(256, b"\\0"))
    dev.flush()
    dev.close()
"""

import fcntl
import logging
import mmap
import os
from pathlib import Path
from typing import Iterable, Optional

from bitarray import bitarray

from snapkit.core.errors import (
    AllocationError,
    BlockAddressError,
    DoubleFreeError,
    ImageError,
    ImageLockedError,
    IntegrityError,
    OutOfSpaceError,
    ProtectedBlockError,
)
from snapkit.core.geometry import AllocatorPolicy, DeviceGeometry, Region, RegionKind
from snapkit.core.superblock import SnapshotEntry, Superblock

logger = logging.getLogger(__name__)


def _new_bitmap(total_blocks: int) -> bitarray:
    bits = bitarray(total_blocks, endian="little")
    bits.setall(0)
    return bits


def _bitmap_from_bytes(data: bytes, total_blocks: int) -> bitarray:
    bits = bitarray(endian="little")
    bits.frombytes(data[: (total_blocks + 7) // 8])
    del bits[total_blocks:]
    return bits


class BlockDevice:
    """Open image: raw block I/O, bitmaps and the allocator.

    One exclusive owner per image, enforced with an advisory ``flock``.
    """

    def __init__(
        self,
        path: Path,
        fd: int,
        superblock: Superblock,
        block_bitmap: bitarray,
        exclude_bitmap: bitarray,
        policy: Optional[AllocatorPolicy] = None,
    ):
        """Use :meth:`format` or :meth:`open` instead."""
        self.path = path
        self.geometry: DeviceGeometry = superblock.geometry
        self.policy = policy or AllocatorPolicy()
        self.snapshot_entries: list[SnapshotEntry] = list(superblock.snapshots)
        self._fd = fd
        self._map = mmap.mmap(fd, self.geometry.image_size)
        self._bitmap = block_bitmap
        self._exclude = exclude_bitmap
        self._free = superblock.free_blocks
        self._closed = False
        self._undo: Optional[dict[int, bytes]] = None
        self._saved: Optional[tuple[bitarray, bitarray, int, list[SnapshotEntry]]] = None

    # -- lifecycle ---------------------------------------------------------

    @staticmethod
    def _lock(fd: int, path: Path) -> None:
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            os.close(fd)
            raise ImageLockedError(f"Image {path} is in use by another process")

    @classmethod
    def format(
        cls,
        path: Path,
        geometry: DeviceGeometry,
        policy: Optional[AllocatorPolicy] = None,
    ) -> "BlockDevice":
        """Create (or overwrite) an image and return it opened.

        Raises:
            ImageError: on I/O failure
        """
        path = Path(path)
        try:
            fd = os.open(path, os.O_RDWR | os.O_CREAT, 0o644)
        except OSError as e:
            raise ImageError(f"Cannot create {path}: {e}")
        cls._lock(fd, path)
        try:
            os.ftruncate(fd, 0)
            os.ftruncate(fd, geometry.image_size)
        except OSError as e:
            os.close(fd)
            raise ImageError(f"Cannot size {path}: {e}")

        bitmap = _new_bitmap(geometry.total_blocks)
        for kind, region in geometry.regions.items():
            if kind is not RegionKind.DATA:
                bitmap[region.start : region.end] = 1
        superblock = Superblock(
            geometry=geometry, free_blocks=geometry.total_blocks - bitmap.count(1)
        )
        dev = cls(path, fd, superblock, bitmap, _new_bitmap(geometry.total_blocks), policy)
        dev.flush()
        logger.info(
            f"Formatted {path}: {geometry.total_blocks} x {geometry.block_size} B, "
            f"{dev.free_count} free"
        )
        return dev

    @classmethod
    def open(cls, path: Path, policy: Optional[AllocatorPolicy] = None) -> "BlockDevice":
        """Open an existing image exclusively.

        Raises:
            ImageLockedError: if another owner holds the image
            ImageError: if the file is missing or not a valid image
        """
        path = Path(path)
        try:
            fd = os.open(path, os.O_RDWR)
        except OSError as e:
            raise ImageError(f"Cannot open {path}: {e}")
        cls._lock(fd, path)
        try:
            head = os.pread(fd, 4096, 0)
            superblock = Superblock.unpack(head)
            geo = superblock.geometry
            size = os.fstat(fd).st_size
            if size != geo.image_size:
                raise ImageError(f"Image is {size} bytes, geometry says {geo.image_size}")
            bb = geo.regions[RegionKind.BLOCK_BITMAP]
            eb = geo.regions[RegionKind.EXCLUDE_BITMAP]
            block_bitmap = _bitmap_from_bytes(
                os.pread(fd, bb.length * geo.block_size, bb.start * geo.block_size),
                geo.total_blocks,
            )
            exclude_bitmap = _bitmap_from_bytes(
                os.pread(fd, eb.length * geo.block_size, eb.start * geo.block_size),
                geo.total_blocks,
            )
        except Exception:
            os.close(fd)
            raise
        logger.debug(f"Opened {path}: {len(superblock.snapshots)} snapshots")
        return cls(path, fd, superblock, block_bitmap, exclude_bitmap, policy)

    def flush(self) -> None:
        """Persist bitmaps and superblock."""
        self._write_region(RegionKind.BLOCK_BITMAP, self._bitmap.tobytes())
        self._write_region(RegionKind.EXCLUDE_BITMAP, self._exclude.tobytes())
        superblock = Superblock(
            geometry=self.geometry, free_blocks=self._free, snapshots=self.snapshot_entries
        )
        self._map[0 : self.block_size] = superblock.pack()
        self._map.flush()

    def close(self) -> None:
        if self._closed:
            return
        self._map.close()
        fcntl.flock(self._fd, fcntl.LOCK_UN)
        os.close(self._fd)
        self._closed = True

    def __enter__(self) -> "BlockDevice":
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        self.close()

    def _write_region(self, kind: RegionKind, payload: bytes) -> None:
        region = self.geometry.regions[kind]
        raw = payload.ljust(region.length * self.block_size, b"\0")
        offset = region.start * self.block_size
        self._map[offset : offset + len(raw)] = raw

    # -- undo log ----------------------------------------------------------

    @property
    def in_transaction(self) -> bool:
        return self._undo is not None

    def begin(self) -> None:
        """Start recording block writes and bitmap state so a failed operation can be undone."""
        if self._undo is not None:
            raise IntegrityError("Nested device transaction")
        self._undo = {}
        self._saved = (
            self._bitmap.copy(),
            self._exclude.copy(),
            self._free,
            list(self.snapshot_entries),
        )

    def commit(self) -> None:
        self._undo = None
        self._saved = None

    def rollback(self) -> None:
        """Restore every block written and the bitmaps as they were at :meth:`begin`."""
        if self._undo is None or self._saved is None:
            return
        for addr, data in self._undo.items():
            offset = addr * self.block_size
            self._map[offset : offset + self.block_size] = data
        self._bitmap, self._exclude, self._free, self.snapshot_entries = self._saved
        logger.debug(f"Rolled back {len(self._undo)} block writes")
        self._undo = None
        self._saved = None

    # -- geometry shortcuts ------------------------------------------------

    @property
    def block_size(self) -> int:
        return self.geometry.block_size

    @property
    def total_blocks(self) -> int:
        return self.geometry.total_blocks

    @property
    def free_count(self) -> int:
        """Free-block counter (as persisted in the superblock)."""
        return self._free

    @property
    def allocated_count(self) -> int:
        return self._bitmap.count(1)

    @property
    def excluded_count(self) -> int:
        return self._exclude.count(1)

    def block_bitmap(self) -> bitarray:
        """Copy of the block bitmap."""
        return self._bitmap.copy()

    def exclude_bitmap(self) -> bitarray:
        """Copy of the exclude bitmap."""
        return self._exclude.copy()

    def check_addr(self, addr: int) -> None:
        if not 0 <= addr < self.total_blocks:
            raise BlockAddressError(f"Block {addr} outside device of {self.total_blocks} blocks")

    # -- raw I/O -----------------------------------------------------------

    def read_block(self, addr: int) -> bytes:
        self.check_addr(addr)
        offset = addr * self.block_size
        return bytes(self._map[offset : offset + self.block_size])

    def write_block(self, addr: int, data: bytes) -> None:
        self.check_addr(addr)
        if len(data) != self.block_size:
            raise ValueError(f"Write of {len(data)} bytes, block size is {self.block_size}")
        offset = addr * self.block_size
        if self._undo is not None and addr not in self._undo:
            self._undo[addr] = bytes(self._map[offset : offset + self.block_size])
        self._map[offset : offset + self.block_size] = data

    def zero_block(self) -> bytes:
        return bytes(self.block_size)

    # -- bitmaps -----------------------------------------------------------

    def is_allocated(self, addr: int) -> bool:
        self.check_addr(addr)
        return bool(self._bitmap[addr])

    def is_excluded(self, addr: int) -> bool:
        self.check_addr(addr)
        return bool(self._exclude[addr])

    def exclude(self, addrs: Iterable[int]) -> None:
        """Mark blocks as owned by a snapshot file.

        Raises:
            IntegrityError: if a block is not allocated
        """
        for addr in addrs:
            self.check_addr(addr)
            if not self._bitmap[addr]:
                raise IntegrityError(f"Cannot exclude free block {addr}")
            self._exclude[addr] = 1

    def unexclude(self, addrs: Iterable[int]) -> None:
        for addr in addrs:
            self.check_addr(addr)
            self._exclude[addr] = 0

    # -- allocator ---------------------------------------------------------

    def default_goal(self) -> int:
        data = self.geometry.data
        goal = self.policy.data_goal
        if goal is None or goal not in data:
            return data.start
        return goal

    def alloc_blocks(
        self,
        count: int,
        hint: Optional[int] = None,
        *,
        reverse: bool = False,
        contiguous: bool = False,
    ) -> list[int]:
        """Allocate ``count`` data-region blocks, first-fit from ``hint``.

        The search wraps around the data region and prefers one contiguous run,
        with candidate starts aligned to the policy stride. Without a fitting run
        the longest free runs are taken in turn (unless ``contiguous``).

        Raises:
            AllocationError: if ``count`` < 1
            OutOfSpaceError: if fewer than ``count`` blocks are free
        """
        if count < 1:
            raise AllocationError(f"Cannot allocate {count} blocks")
        if self._free < count:
            raise OutOfSpaceError(f"Need {count} blocks, {self._free} free")

        data = self.geometry.data
        if hint is None:
            hint = data.end - 1 if reverse else self.default_goal()
        hint = min(max(hint, data.start), data.end - 1)

        start = self._find_run(count, hint, reverse, self.policy.stride)
        if start is None and self.policy.stride > 1:
            start = self._find_run(count, hint, reverse, 1)
        if start is not None:
            blocks = list(range(start, start + count))
        elif contiguous:
            raise OutOfSpaceError(f"No contiguous run of {count} free blocks")
        else:
            blocks = self._gather(count, hint)

        for addr in blocks:
            self._bitmap[addr] = 1
        self._free -= len(blocks)
        logger.debug(f"alloc {count} (hint {hint}, reverse={reverse}) -> {_runs(blocks)}")
        return blocks

    def _candidates(self, count: int, hint: int, reverse: bool, stride: int) -> list[int]:
        data = self.geometry.data
        lowest = -(-data.start // stride) * stride
        highest = ((data.end - count) // stride) * stride
        if highest < lowest:
            return []
        if reverse:
            first = min((hint // stride) * stride, highest)
            first = max(first, lowest)
            return list(range(first, lowest - 1, -stride)) + list(
                range(highest, first, -stride)
            )
        first = max(-(-hint // stride) * stride, lowest)
        if first > highest:
            first = lowest
        return list(range(first, highest + 1, stride)) + list(range(lowest, first, stride))

    def _find_run(self, count: int, hint: int, reverse: bool, stride: int) -> Optional[int]:
        bitmap = self._bitmap
        for pos in self._candidates(count, hint, reverse, stride):
            if not bitmap[pos : pos + count].any():
                return pos
        return None

    def _free_runs(self, region: Region) -> list[tuple[int, int]]:
        runs = []
        bitmap = self._bitmap
        pos = region.start
        while pos < region.end:
            if bitmap[pos]:
                pos += 1
                continue
            run_start = pos
            while pos < region.end and not bitmap[pos]:
                pos += 1
            runs.append((run_start, pos - run_start))
        return runs

    def _gather(self, count: int, hint: int) -> list[int]:
        data = self.geometry.data
        size = data.length

        def scan_order(run: tuple[int, int]) -> int:
            return (run[0] - hint) % size

        runs = sorted(self._free_runs(data), key=scan_order)
        blocks: list[int] = []
        while len(blocks) < count:
            best = max(runs, key=lambda r: (r[1], -scan_order(r)))
            runs.remove(best)
            take = min(best[1], count - len(blocks))
            blocks.extend(range(best[0], best[0] + take))
        return blocks

    def free_blocks(self, addrs: Iterable[int]) -> None:
        """Return blocks to the free pool.

        Raises:
            DoubleFreeError: if a block is already free (or listed twice)
            ProtectedBlockError: if a block is excluded or lies in a metadata region
        """
        addrs = list(addrs)
        seen = set()
        for addr in addrs:
            self.check_addr(addr)
            if addr in seen or not self._bitmap[addr]:
                raise DoubleFreeError(f"Block {addr} is already free")
            if self._exclude[addr]:
                raise ProtectedBlockError(f"Block {addr} is owned by a snapshot file")
            if self.geometry.is_metadata(addr):
                raise ProtectedBlockError(f"Block {addr} is in a fixed metadata region")
            seen.add(addr)
        for addr in addrs:
            self._bitmap[addr] = 0
        self._free += len(addrs)
        if addrs:
            logger.debug(f"free {_runs(addrs)}")


def _runs(blocks: list[int]) -> str:
    """Compact 'a-b,c' rendering of a block list for log lines."""
    if not blocks:
        return "-"
    parts = []
    start = prev = blocks[0]
    for addr in blocks[1:]:
        if addr == prev + 1:
            prev = addr
            continue
        parts.append(f"{start}-{prev}" if prev != start else f"{start}")
        start = prev = addr
    parts.append(f"{start}-{prev}" if prev != start else f"{start}")
    return ",".join(parts)
