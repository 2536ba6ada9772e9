"""Shadow oracle: a literal point-in-time copy of the volume.

:func:`capture` copies the namespace, every file's content and every in-use,
non-snapshot-owned raw block. :func:`assert_matches` later compares a
snapshot's view against that copy. Nothing here goes through the snapshot
resolution code it is meant to check; capture reads the live state only.
"""

import base64
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from snapkit.core.errors import SnapkitError
from snapkit.core.geometry import RegionKind
from snapkit.core.volume import Volume

logger = logging.getLogger(__name__)

# Not snapshot-protected: rewritten on every flush
UNPROTECTED = (RegionKind.SUPERBLOCK, RegionKind.BLOCK_BITMAP, RegionKind.EXCLUDE_BITMAP)


@dataclass(frozen=True)
class Mismatch:
    kind: str  # "file" or "block"
    key: str
    detail: str

    def __str__(self) -> str:
        return f"{self.kind} {self.key}: {self.detail}"


@dataclass
class OracleImage:
    namespace: dict[str, int] = field(default_factory=dict)
    files: dict[str, bytes] = field(default_factory=dict)
    extents: dict[str, list[tuple[int, int, int]]] = field(default_factory=dict)
    blocks: dict[int, bytes] = field(default_factory=dict)
    captured_at: int = 0

    def self_check(self) -> list[str]:
        """Rebuild every file from the copied raw blocks and extents; list disagreements."""
        problems = []
        block_size = len(next(iter(self.blocks.values()), b"")) or 1
        for name, content in self.files.items():
            rebuilt = bytearray(len(content))
            missing = False
            for logical, physical, length in self.extents.get(name, []):
                for i in range(length):
                    offset = (logical + i) * block_size
                    if offset >= len(content):
                        continue
                    raw = self.blocks.get(physical + i)
                    if raw is None:
                        problems.append(f"{name}: block {physical + i} not captured")
                        missing = True
                        continue
                    rebuilt[offset : offset + block_size] = raw
            if not missing and bytes(rebuilt) != content:
                problems.append(f"{name}: content not derivable from captured blocks")
        return problems

    def save(self, path: Path) -> None:
        """Write a JSON sidecar (block payloads base64-encoded)."""
        doc = {
            "captured_at": self.captured_at,
            "namespace": self.namespace,
            "files": {k: base64.b64encode(v).decode("ascii") for k, v in self.files.items()},
            "extents": self.extents,
            "blocks": {
                str(k): base64.b64encode(v).decode("ascii") for k, v in self.blocks.items()
            },
        }
        Path(path).write_text(json.dumps(doc, indent=2))

    @classmethod
    def load(cls, path: Path) -> "OracleImage":
        doc = json.loads(Path(path).read_text())
        return cls(
            namespace=dict(doc["namespace"]),
            files={k: base64.b64decode(v) for k, v in doc["files"].items()},
            extents={k: [tuple(e) for e in v] for k, v in doc["extents"].items()},
            blocks={int(k): base64.b64decode(v) for k, v in doc["blocks"].items()},
            captured_at=doc["captured_at"],
        )


def capture(volume: Volume) -> OracleImage:
    """Deep copy of the live logical state; no mutation."""
    dev = volume.dev
    geo = dev.geometry
    skip = set()
    for kind in UNPROTECTED:
        skip.update(geo.region(kind).blocks())

    bitmap = dev.block_bitmap()
    exclude = dev.exclude_bitmap()
    blocks = {
        addr: dev.read_block(addr)
        for addr in range(dev.total_blocks)
        if bitmap[addr] and not exclude[addr] and addr not in skip
    }
    namespace = volume.fs.names()
    files = {name: volume.fs.read_file(name) for name in namespace}
    extents = {
        name: [(e.logical, e.physical, e.length) for e in volume.fs.inode_of(name).extents]
        for name in namespace
    }
    return OracleImage(
        namespace=namespace,
        files=files,
        extents=extents,
        blocks=blocks,
        captured_at=volume.mutations,
    )


def assert_matches(volume: Volume, snapshot_id: int, oracle: OracleImage) -> list[Mismatch]:
    """Compare a snapshot's view with the oracle captured when it was taken.

    Returns:
        Every differing file and raw block; empty iff bitwise identical
    """
    mismatches = []
    for name, expected in oracle.files.items():
        try:
            actual = volume.read_file_at(snapshot_id, name)
        except SnapkitError as e:
            mismatches.append(Mismatch("file", name, f"unreadable: {e}"))
            continue
        if actual != expected:
            mismatches.append(
                Mismatch("file", name, f"{len(actual)} bytes differ from {len(expected)} expected")
            )
    for addr, expected in oracle.blocks.items():
        actual = volume.snapshot_read_block(snapshot_id, addr)
        if actual != expected:
            mismatches.append(Mismatch("block", str(addr), "content differs"))
    if mismatches:
        logger.warning(f"Snapshot {snapshot_id}: {len(mismatches)} oracle mismatches")
    return mismatches
