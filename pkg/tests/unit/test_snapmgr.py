"""Tests for snapshot listing, point-in-time reads, deletion with merge and restore."""

import pytest

from snapkit.core.errors import NotFoundError
from snapkit.core.extents import Extent, lookup
from tests.helpers import blocks_of


@pytest.fixture
def two_snapshots(trace_volume):
    """The full worked example: S1 before SNAP, S2 before FS, then truncate to 6."""
    vol = trace_volume
    vol.create_file("f")
    vol.write_file("f", 0, blocks_of("HEAD"))
    vol.write_file("f", 4, blocks_of("SHOT"))
    s1 = vol.snapshot_take()
    vol.write_file("f", 0, blocks_of("SNAP"))
    s2 = vol.snapshot_take()
    vol.write_file("f", 4, blocks_of("FS"))
    vol.truncate_file("f", 6)
    return vol, s1, s2


class TestListing:
    def test_empty(self, volume):
        assert volume.snapshot_list() == []
        assert volume.stats().snapshot_overhead == 0

    def test_accounting(self, two_snapshots):
        vol, s1, s2 = two_snapshots
        first, second = vol.snapshot_list()

        assert (first.id, first.inode_no, first.active) == (s1, 90, False)
        assert (second.id, second.inode_no, second.active) == (s2, 80, True)
        assert (first.mapped, first.identity, first.copies) == (5, 4, 1)
        assert (second.mapped, second.identity, second.copies) == (5, 4, 1)
        assert first.overhead_blocks == 2
        assert first.created_at < second.created_at

    def test_device_stats(self, two_snapshots):
        vol, _, _ = two_snapshots
        stats = vol.stats()

        assert stats.total_blocks == 100
        assert stats.free_blocks + stats.allocated_blocks == 100
        # 2 x (inode + bitmap) + 2 copies of block 10 + 8 handed-over data blocks
        assert stats.excluded_blocks == 14
        assert stats.snapshot_overhead == 14


class TestPointInTime:
    def test_read_file_at(self, two_snapshots):
        vol, s1, s2 = two_snapshots

        assert vol.read_file_at(s1, "f") == blocks_of("HEADSHOT")
        assert vol.read_file_at(s2, "f") == blocks_of("SNAPSHOT")
        assert vol.read_file("f") == blocks_of("SNAPFS")

    def test_file_created_later_is_absent(self, two_snapshots):
        vol, s1, _ = two_snapshots
        vol.create_file("g")

        with pytest.raises(NotFoundError):
            vol.read_file_at(s1, "g")
        assert vol.manager.files_at(s1) == ["f"]

    def test_deleted_file_still_readable(self, trace_volume):
        trace_volume.create_file("f")
        trace_volume.write_file("f", 0, blocks_of("HEAD"))
        snap = trace_volume.snapshot_take()
        trace_volume.delete_file("f")

        assert trace_volume.list_files() == []
        assert trace_volume.read_file_at(snap, "f") == blocks_of("HEAD")
        assert trace_volume.verify() == []

    def test_unknown_snapshot(self, volume):
        with pytest.raises(NotFoundError):
            volume.read_file_at(3, "f")


class TestDelete:
    def test_delete_newest_merges_into_previous(self, two_snapshots):
        vol, s1, s2 = two_snapshots

        # 30 (S1 already holds block 10) plus S2's inode and bitmap
        assert vol.snapshot_delete(s2) == 3

        record = vol.core.get(s1)
        assert record.inode.extents == [
            Extent(10, 20, 1),
            Extent(40, 40, 4),
            Extent(50, 50, 4),
        ]
        assert vol.read_file_at(s1, "f") == blocks_of("HEADSHOT")
        assert vol.read_file("f") == blocks_of("SNAPFS")
        assert not any(vol.dev.is_allocated(b) for b in (30, 80, 81))
        assert vol.verify() == []

    def test_delete_oldest_frees_everything_it_owns(self, two_snapshots):
        vol, s1, s2 = two_snapshots

        # 20, 40-43, inode 90, bitmap 91
        assert vol.snapshot_delete(s1) == 7
        assert vol.read_file_at(s2, "f") == blocks_of("SNAPSHOT")
        assert [s.id for s in vol.snapshot_list()] == [s2]
        assert vol.verify() == []

    def test_delete_all_returns_to_snapshot_free_footprint(self, two_snapshots):
        vol, s1, s2 = two_snapshots
        vol.snapshot_delete(s2)
        vol.snapshot_delete(s1)

        assert vol.dev.excluded_count == 0
        # metadata (12) + SNAPFS data
        assert vol.dev.allocated_count == 12 + 6
        assert vol.verify() == []

    def test_merge_skips_blocks_free_at_previous(self, trace_volume):
        vol = trace_volume
        vol.create_file("f")
        vol.write_file("f", 0, blocks_of("AB"))
        s1 = vol.snapshot_take()
        vol.create_file("g")
        vol.write_file("g", 0, blocks_of("CD"))
        s2 = vol.snapshot_take()
        vol.delete_file("g")
        (g_run,) = [e for e in vol.core.get(s2).inode.extents if e.logical == e.physical]
        assert (g_run.physical, g_run.length) == (50, 2)

        # g's data did not exist when S1 was taken: freed rather than merged,
        # and S1 already holds its own copies of blocks 3 and 10
        assert vol.snapshot_delete(s2) == 6
        assert [e.logical for e in vol.core.get(s1).inode.extents] == [3, 10]
        assert lookup(vol.core.get(s1).inode, 50) is None
        assert vol.read_file_at(s1, "f") == blocks_of("AB")
        assert vol.verify() == []

    def test_unknown(self, volume):
        with pytest.raises(NotFoundError):
            volume.snapshot_delete(1)

    def test_deleted_newest_id_is_reused(self, volume):
        volume.snapshot_take()
        second = volume.snapshot_take()
        volume.snapshot_delete(second)
        assert volume.snapshot_take() == second


class TestRestore:
    def test_restore_in_place(self, two_snapshots):
        vol, s1, _ = two_snapshots
        vol.restore_file(s1, "f")

        assert vol.read_file("f") == blocks_of("HEADSHOT")
        assert vol.read_file_at(s1, "f") == blocks_of("HEADSHOT")
        assert vol.verify() == []

    def test_restore_to_new_name(self, two_snapshots):
        vol, s1, _ = two_snapshots
        vol.restore_file(s1, "f", target="old")

        assert vol.read_file("old") == blocks_of("HEADSHOT")
        assert vol.read_file("f") == blocks_of("SNAPFS")

    def test_restore_deleted_file(self, trace_volume):
        trace_volume.create_file("f")
        trace_volume.write_file("f", 0, blocks_of("HEAD"))
        snap = trace_volume.snapshot_take()
        trace_volume.delete_file("f")
        trace_volume.restore_file(snap, "f")

        assert trace_volume.read_file("f") == blocks_of("HEAD")


class TestDump:
    def test_dump_lines(self, two_snapshots):
        vol, _, _ = two_snapshots
        lines = vol.dump_lines()

        assert lines[0].startswith("device blocks=100 block_size=256")
        assert "file f inode=1 size=6 L0->P60+4 L4->P70+2" in lines
        assert any(line.startswith("snapshot 1 inode=90 cow_bitmap=91") for line in lines)
        (active,) = [line for line in lines if line.endswith(" active")]
        assert active.startswith("snapshot 2 inode=80")
        assert "  10→30" in lines
        assert "  52→52" in lines
