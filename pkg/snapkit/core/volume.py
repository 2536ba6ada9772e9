"""One open image with its file layer and snapshot chain.

:class:`Volume` is the library entry point. Every mutating operation runs in
a transaction: on any error the touched blocks, bitmaps and snapshot list are
restored and in-memory state is reloaded, so a failed operation leaves the
image as it was.

Usage:
    with Volume.format(Path("disk.img"), DeviceGeometry.build(256, 128)) as vol:
        vol.create_file("f")
        vol.write_file("f", 0, b"HEAD")
        snap = vol.snapshot_take()
        vol.read_file_at(snap, "f")
"""

import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

from snapkit.core.blockdev import BlockDevice
from snapkit.core.fs import FileInfo, FileSystem
from snapkit.core.geometry import AllocatorPolicy, DeviceGeometry
from snapkit.core.monitor import GateMonitor
from snapkit.core.snapcore import SnapshotCore
from snapkit.core.snapmgr import DeviceStats, SnapshotManager, SnapshotStats
from snapkit.core.verify import Violation, verify_volume

logger = logging.getLogger(__name__)


class Volume:
    def __init__(self, device: BlockDevice, monitor: Optional[GateMonitor] = None):
        self.dev = device
        self.monitor = monitor or GateMonitor()
        self.mutations = 0
        self.core = SnapshotCore(device, self.monitor, clock=lambda: self.mutations)
        self.fs = FileSystem(device, self.core)
        self.manager = SnapshotManager(device, self.core, self.fs)

    @classmethod
    def format(
        cls,
        path: Path,
        geometry: DeviceGeometry,
        policy: Optional[AllocatorPolicy] = None,
        monitor: Optional[GateMonitor] = None,
    ) -> "Volume":
        return cls(BlockDevice.format(Path(path), geometry, policy), monitor)

    @classmethod
    def open(
        cls,
        path: Path,
        policy: Optional[AllocatorPolicy] = None,
        monitor: Optional[GateMonitor] = None,
    ) -> "Volume":
        return cls(BlockDevice.open(Path(path), policy), monitor)

    def flush(self) -> None:
        self.core.flush()
        self.dev.flush()

    def close(self, flush: bool = True) -> None:
        if flush:
            self.flush()
        self.dev.close()

    def __enter__(self) -> "Volume":
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        self.close()

    @contextmanager
    def transaction(self) -> Iterator[None]:
        """Run a mutation atomically with respect to errors."""
        self.dev.begin()
        self.monitor.begin()
        try:
            yield
        except Exception:
            self.dev.rollback()
            self.monitor.discard()
            self.core.load()
            self.fs.load()
            logger.debug("Operation rolled back")
            raise
        self.dev.commit()
        self.monitor.commit()
        self.mutations += 1

    # -- files -------------------------------------------------------------

    def create_file(self, name: str) -> int:
        with self.transaction():
            return self.fs.create_file(name)

    def write_file(self, name: str, offset: int, payload: bytes) -> None:
        with self.transaction():
            self.fs.write_file(name, offset, payload)

    def truncate_file(self, name: str, size_blocks: int) -> None:
        with self.transaction():
            self.fs.truncate_file(name, size_blocks)

    def delete_file(self, name: str) -> None:
        with self.transaction():
            self.fs.delete_file(name)

    def read_file(self, name: str, start: int = 0, end: Optional[int] = None) -> bytes:
        return self.fs.read_file(name, start, end)

    def list_files(self) -> list[FileInfo]:
        return self.fs.list_files()

    # -- snapshots ---------------------------------------------------------

    def snapshot_take(self) -> int:
        with self.transaction():
            return self.core.take()

    def snapshot_delete(self, snapshot_id: int) -> int:
        with self.transaction():
            return self.manager.snapshot_delete(snapshot_id)

    def restore_file(self, snapshot_id: int, name: str, target: Optional[str] = None) -> None:
        with self.transaction():
            self.manager.restore_file(snapshot_id, name, target)

    def snapshot_list(self) -> list[SnapshotStats]:
        return self.manager.snapshot_list()

    def snapshot_read_block(self, snapshot_id: int, addr: int) -> bytes:
        return self.core.snapshot_read_block(snapshot_id, addr)

    def resolve(self, snapshot_id: int, addr: int) -> int:
        return self.core.resolve(snapshot_id, addr)

    def read_file_at(self, snapshot_id: int, name: str) -> bytes:
        return self.manager.read_file_at(snapshot_id, name)

    def stats(self) -> DeviceStats:
        return self.manager.stats()

    def dump_lines(self) -> list[str]:
        return self.manager.dump_lines()

    def verify(self) -> list[Violation]:
        return verify_volume(self.dev, self.core, self.fs)
