"""Flat-namespace file layer on top of the snapshot gates.

Namespace and inode table live in fixed metadata regions and are rewritten in
place through :meth:`SnapshotCore.cow_gate`. File data goes through
:meth:`SnapshotCore.mow_gate` whenever a mapped block is rewritten or released.
Writes to unmapped blocks are plain allocations.
"""

import logging
import struct
from dataclasses import dataclass
from typing import Optional

from snapkit.core.blockdev import BlockDevice
from snapkit.core.errors import (
    DuplicateNameError,
    ExtentOverflowError,
    ImageError,
    InodeTableFullError,
    InvalidRequestError,
    NamespaceFullError,
    NotFoundError,
)
from snapkit.core.extents import (
    INLINE_EXTENTS,
    SLOT_SIZE,
    Extent,
    Inode,
    InodeFlags,
    coalesce,
    insert_extent,
    is_free_slot,
    load_inode,
    lookup,
    max_extents,
    pack_index,
    pack_slot,
    remove_range,
    split_for_overwrite,
)
from snapkit.core.geometry import RegionKind
from snapkit.core.snapcore import GateDecision, ReleaseReason, SnapshotCore

logger = logging.getLogger(__name__)

MAX_NAME_BYTES = 64

NS_COUNT = struct.Struct("<H")
NS_NAME_LEN = struct.Struct("<B")
NS_INODE = struct.Struct("<Q")


@dataclass(frozen=True)
class FileInfo:
    name: str
    inode_no: int
    size_blocks: int
    extent_count: int


def encode_name(name: str) -> bytes:
    """UTF-8 bytes of a file name.

    Raises:
        InvalidRequestError: if the name is empty or longer than 64 bytes
    """
    raw = name.encode("utf-8")
    if not raw or len(raw) > MAX_NAME_BYTES:
        raise InvalidRequestError(
            f"File name must be 1..{MAX_NAME_BYTES} UTF-8 bytes, got {len(raw)}"
        )
    return raw


def entry_size(name: str) -> int:
    return NS_NAME_LEN.size + len(name.encode("utf-8")) + NS_INODE.size


def pack_namespace_block(entries: list[tuple[str, int]], block_size: int) -> bytes:
    parts = [NS_COUNT.pack(len(entries))]
    for name, inode_no in entries:
        raw = name.encode("utf-8")
        parts.append(NS_NAME_LEN.pack(len(raw)) + raw + NS_INODE.pack(inode_no))
    data = b"".join(parts)
    if len(data) > block_size:
        raise NamespaceFullError(f"Namespace block overflow: {len(data)} bytes")
    return data.ljust(block_size, b"\0")


def unpack_namespace_block(data: bytes) -> list[tuple[str, int]]:
    """Decode one namespace block.

    Raises:
        ImageError: if an entry runs past the block end
    """
    (count,) = NS_COUNT.unpack_from(data, 0)
    entries = []
    offset = NS_COUNT.size
    for _ in range(count):
        if offset + NS_NAME_LEN.size > len(data):
            raise ImageError("Namespace entry runs past block end")
        (name_len,) = NS_NAME_LEN.unpack_from(data, offset)
        offset += NS_NAME_LEN.size
        if offset + name_len + NS_INODE.size > len(data):
            raise ImageError("Namespace entry runs past block end")
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (inode_no,) = NS_INODE.unpack_from(data, offset)
        offset += NS_INODE.size
        entries.append((name, inode_no))
    return entries


def inode_location(inode_no: int, inode_table_start: int, block_size: int) -> tuple[int, int]:
    """(block, byte offset) of a regular inode slot; inode numbers start at 1."""
    per_block = block_size // SLOT_SIZE
    index = inode_no - 1
    return inode_table_start + index // per_block, (index % per_block) * SLOT_SIZE


class FileSystem:
    """Name -> inode namespace and block-granular file I/O."""

    def __init__(self, device: BlockDevice, core: SnapshotCore):
        self.dev = device
        self.core = core
        geo = device.geometry
        self._ns_region = geo.region(RegionKind.NAMESPACE)
        self._it_region = geo.region(RegionKind.INODE_TABLE)
        self.max_inodes = self._it_region.length * (device.block_size // SLOT_SIZE)
        self._capacity = max_extents(device.block_size)
        self._ns_blocks: dict[int, list[tuple[str, int]]] = {}
        self._names: dict[str, int] = {}
        self._inodes: dict[int, Inode] = {}
        self.load()

    def load(self) -> None:
        """(Re)read namespace and inode table from the device."""
        dev = self.dev
        self._ns_blocks = {}
        self._names = {}
        for block in self._ns_region.blocks():
            entries = unpack_namespace_block(dev.read_block(block))
            self._ns_blocks[block] = entries
            for name, inode_no in entries:
                self._names[name] = inode_no

        self._inodes = {}
        for inode_no in range(1, self.max_inodes + 1):
            block, offset = self._location(inode_no)
            slot = dev.read_block(block)[offset : offset + SLOT_SIZE]
            if is_free_slot(slot):
                continue
            self._inodes[inode_no] = load_inode(inode_no, slot, dev.read_block)

    def _location(self, inode_no: int) -> tuple[int, int]:
        return inode_location(inode_no, self._it_region.start, self.dev.block_size)

    # -- lookups -----------------------------------------------------------

    def inode_of(self, name: str) -> Inode:
        inode_no = self._names.get(name)
        if inode_no is None:
            raise NotFoundError(f"No such file: {name}")
        inode = self._inodes.get(inode_no)
        if inode is None:
            raise ImageError(f"Namespace entry {name} points at free inode {inode_no}")
        return inode

    def exists(self, name: str) -> bool:
        return name in self._names

    def names(self) -> dict[str, int]:
        return dict(self._names)

    def inodes(self) -> dict[int, Inode]:
        return dict(self._inodes)

    def namespace_blocks(self) -> dict[int, list[tuple[str, int]]]:
        return {block: list(entries) for block, entries in self._ns_blocks.items()}

    def list_files(self) -> list[FileInfo]:
        files = []
        for name in sorted(self._names):
            inode = self.inode_of(name)
            files.append(FileInfo(name, inode.inode_no, inode.size_blocks, len(inode.extents)))
        return files

    # -- metadata persistence ---------------------------------------------

    def _write_namespace(self, block: int) -> None:
        payload = pack_namespace_block(self._ns_blocks[block], self.dev.block_size)
        self.core.cow_gate(block, payload)

    def _write_slot(self, inode_no: int, slot: bytes) -> None:
        block, offset = self._location(inode_no)
        raw = bytearray(self.dev.read_block(block))
        raw[offset : offset + SLOT_SIZE] = slot
        self.core.cow_gate(block, bytes(raw))

    def _alloc_index(self) -> int:
        (block,) = self.dev.alloc_blocks(1, hint=self.dev.default_goal())
        return block

    def _store_inode(self, inode: Inode) -> None:
        """Write index block (if any) and slot; release an index block no longer needed.

        Raises:
            ExtentOverflowError: if the extent list exceeds inline slots plus one index block
        """
        coalesce(inode)
        if len(inode.extents) > self._capacity:
            raise ExtentOverflowError(
                f"Inode {inode.inode_no} needs {len(inode.extents)} extents, "
                f"capacity is {self._capacity}"
            )
        if inode.needs_index and not inode.index_block:
            inode.index_block = self._alloc_index()
        if inode.index_block and not inode.needs_index:
            self._release([Extent(0, inode.index_block, 1)], ReleaseReason.DELETE)
            inode.index_block = 0
        if inode.needs_index:
            self.core.cow_gate(
                inode.index_block,
                pack_index(inode.extents[INLINE_EXTENTS:], self.dev.block_size),
            )
        self._write_slot(inode.inode_no, pack_slot(inode))

    def _release(self, runs: list[Extent], reason: ReleaseReason) -> None:
        """Hand released physical runs to the active snapshot or free them."""
        freed = []
        for run in runs:
            decisions = self.core.mow_gate(run.physical, run.length, reason)
            freed.extend(
                run.physical + i
                for i, decision in enumerate(decisions)
                if decision is GateDecision.FREE_OK
            )
        self.dev.free_blocks(freed)

    # -- namespace operations ---------------------------------------------

    def create_file(self, name: str) -> int:
        """Create an empty file.

        Raises:
            InvalidRequestError: if the name is not 1..64 UTF-8 bytes
            DuplicateNameError: if the name is taken
            InodeTableFullError: if every inode slot is in use
            NamespaceFullError: if no namespace block has room for the entry
        """
        encode_name(name)
        if name in self._names:
            raise DuplicateNameError(f"File exists: {name}")
        inode_no = next(
            (n for n in range(1, self.max_inodes + 1) if n not in self._inodes), None
        )
        if inode_no is None:
            raise InodeTableFullError(f"All {self.max_inodes} inode slots in use")

        needed = entry_size(name)
        target: Optional[int] = None
        for block, entries in self._ns_blocks.items():
            used = NS_COUNT.size + sum(entry_size(n) for n, _ in entries)
            if used + needed <= self.dev.block_size:
                target = block
                break
        if target is None:
            raise NamespaceFullError(f"No namespace block has room for {name!r}")

        inode = Inode(inode_no=inode_no, flags=InodeFlags.REGULAR)
        self._write_slot(inode_no, pack_slot(inode))
        self._inodes[inode_no] = inode
        self._ns_blocks[target].append((name, inode_no))
        self._names[name] = inode_no
        self._write_namespace(target)
        logger.debug(f"Created {name} as inode {inode_no} (namespace block {target})")
        return inode_no

    def delete_file(self, name: str) -> None:
        """Remove a file; released blocks go to the active snapshot or the free pool."""
        inode = self.inode_of(name)
        self.truncate_file(name, 0)
        self._write_slot(inode.inode_no, bytes(SLOT_SIZE))
        del self._inodes[inode.inode_no]

        for block, entries in self._ns_blocks.items():
            if any(n == name for n, _ in entries):
                self._ns_blocks[block] = [(n, i) for n, i in entries if n != name]
                self._write_namespace(block)
                break
        del self._names[name]
        logger.debug(f"Deleted {name} (inode {inode.inode_no})")

    # -- data operations --------------------------------------------------

    def _goal(self, inode: Inode, logical: int) -> int:
        if logical > 0:
            previous = lookup(inode, logical - 1)
            if previous is not None and previous + 1 < self.dev.total_blocks:
                return previous + 1
        return self.dev.default_goal()

    def _read_logical(self, inode: Inode, logical: int) -> bytes:
        physical = lookup(inode, logical)
        if physical is None:
            return self.dev.zero_block()
        return self.dev.read_block(physical)

    def _place(self, inode: Inode, start: int, chunks: list[bytes]) -> None:
        """Write chunks for logical [start, start+len) into freshly allocated blocks."""
        blocks = self.dev.alloc_blocks(len(chunks), hint=self._goal(inode, start))
        for physical, chunk in zip(blocks, chunks):
            self.dev.write_block(physical, chunk)
        run_start = 0
        for i in range(1, len(blocks) + 1):
            if i == len(blocks) or blocks[i] != blocks[i - 1] + 1:
                insert_extent(
                    inode,
                    Extent(start + run_start, blocks[run_start], i - run_start),
                )
                run_start = i

    def write_file(self, name: str, offset: int, payload: bytes) -> None:
        """Write ``payload`` at logical block ``offset``.

        A trailing partial block is merged with the block's current content.

        Raises:
            NotFoundError: if the file does not exist
            InvalidRequestError: if the payload is empty or the offset negative
            OutOfSpaceError: if new blocks cannot be allocated
        """
        if not payload:
            raise InvalidRequestError("Empty write payload")
        if offset < 0:
            raise InvalidRequestError(f"Negative block offset {offset}")
        inode = self.inode_of(name)
        bs = self.dev.block_size
        count = -(-len(payload) // bs)
        end = offset + count

        chunks: dict[int, bytes] = {}
        for i in range(count):
            chunk = payload[i * bs : (i + 1) * bs]
            if len(chunk) < bs:
                current = self._read_logical(inode, offset + i)
                chunk = chunk + current[len(chunk) :]
            chunks[offset + i] = chunk

        old_size = inode.size_blocks
        logical = offset
        while logical < end:
            mapped = lookup(inode, logical) is not None
            seg_end = logical + 1
            while seg_end < end and (lookup(inode, seg_end) is not None) == mapped:
                seg_end += 1
            if mapped:
                self._rewrite(inode, logical, seg_end, chunks)
            else:
                self._place(inode, logical, [chunks[l] for l in range(logical, seg_end)])
            logical = seg_end

        inode.size_blocks = max(old_size, end, inode.size_blocks)
        self._store_inode(inode)
        logger.debug(f"Wrote {name} blocks [{offset}, {end})")

    def _rewrite(self, inode: Inode, start: int, end: int, chunks: dict[int, bytes]) -> None:
        covering, _ = split_for_overwrite(inode, start, end)
        preserved: list[int] = []
        for ext in covering:
            decisions = self.core.mow_gate(ext.physical, ext.length, ReleaseReason.REWRITE)
            for i, decision in enumerate(decisions):
                if decision is GateDecision.PRESERVED:
                    preserved.append(ext.logical + i)
                else:
                    self.dev.write_block(ext.physical + i, chunks[ext.logical + i])

        i = 0
        while i < len(preserved):
            j = i + 1
            while j < len(preserved) and preserved[j] == preserved[j - 1] + 1:
                j += 1
            run_start, run_end = preserved[i], preserved[j - 1] + 1
            remove_range(inode, run_start, run_end)
            self._place(inode, run_start, [chunks[l] for l in range(run_start, run_end)])
            i = j

    def read_file(self, name: str, start: int = 0, end: Optional[int] = None) -> bytes:
        """Contents of logical blocks [start, end); holes read as zeros.

        ``end`` defaults to the file size.
        """
        inode = self.inode_of(name)
        if end is None:
            end = inode.size_blocks
        return b"".join(self._read_logical(inode, logical) for logical in range(start, end))

    def truncate_file(self, name: str, size_blocks: int) -> None:
        """Set the file size; blocks past the new end are released.

        Raises:
            InvalidRequestError: if ``size_blocks`` is negative
        """
        if size_blocks < 0:
            raise InvalidRequestError(f"Negative file size {size_blocks}")
        inode = self.inode_of(name)
        released = remove_range(inode, size_blocks, max(inode.size_blocks, size_blocks))
        self._release(released, ReleaseReason.DELETE)
        inode.size_blocks = size_blocks
        self._store_inode(inode)
        logger.debug(f"Truncated {name} to {size_blocks} blocks")
