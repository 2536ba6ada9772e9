"""Tests for the block device: image lifecycle, raw I/O and the allocator."""

import random

import pytest
from pydantic import ValidationError

from snapkit.core.blockdev import BlockDevice
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
from snapkit.core.geometry import AllocatorPolicy, DeviceGeometry


@pytest.fixture
def device(image_path):
    dev = BlockDevice.format(image_path, DeviceGeometry.build(256, 128))
    yield dev
    dev.close()


TRACE_POLICY = AllocatorPolicy(stride=10, data_goal=40)


@pytest.fixture
def trace_device(image_path):
    geometry = DeviceGeometry.build(256, 100, namespace_blocks=7, inode_table_blocks=2)
    dev = BlockDevice.format(image_path, geometry, TRACE_POLICY)
    yield dev
    dev.close()


class TestLifecycle:
    def test_format_marks_metadata_allocated(self, device):
        assert device.free_count == 120
        assert device.allocated_count == 8
        assert device.excluded_count == 0
        assert all(device.is_allocated(b) for b in range(8))
        assert not device.is_allocated(8)

    def test_fresh_image_reads_zeros(self, device):
        assert device.read_block(50) == bytes(256)

    def test_reopen_preserves_state(self, image_path):
        dev = BlockDevice.format(image_path, DeviceGeometry.build(256, 128))
        blocks = dev.alloc_blocks(3)
        dev.write_block(blocks[0], b"x" * 256)
        dev.flush()
        dev.close()

        with BlockDevice.open(image_path) as reopened:
            assert reopened.free_count == 117
            assert reopened.block_bitmap() == dev.block_bitmap()
            assert reopened.read_block(blocks[0]) == b"x" * 256

    def test_second_open_is_locked(self, device, image_path):
        with pytest.raises(ImageLockedError):
            BlockDevice.open(image_path)

    def test_open_missing_file(self, tmp_path):
        with pytest.raises(ImageError):
            BlockDevice.open(tmp_path / "missing.img")

    def test_open_garbage_file(self, tmp_path):
        path = tmp_path / "junk.img"
        path.write_bytes(b"\1" * 4096)
        with pytest.raises(ImageError, match="magic"):
            BlockDevice.open(path)

    def test_block_size_too_small_for_superblock(self):
        with pytest.raises(ValidationError, match="block_size"):
            DeviceGeometry.build(64, 64, inode_table_blocks=2)


class TestRawIO:
    def test_write_then_read(self, device):
        data = bytes(range(256))
        device.write_block(100, data)
        assert device.read_block(100) == data

    def test_address_out_of_range(self, device):
        with pytest.raises(BlockAddressError):
            device.read_block(128)
        with pytest.raises(BlockAddressError):
            device.write_block(-1, bytes(256))

    def test_wrong_length(self, device):
        with pytest.raises(ValueError):
            device.write_block(10, b"short")

    @pytest.mark.parametrize("block_size", [128, 256, 512, 1024, 2048, 4096])
    def test_random_writes_read_back_last_value(self, image_path, block_size):
        rng = random.Random(block_size)
        model: dict[int, bytes] = {}
        with BlockDevice.format(image_path, DeviceGeometry.build(block_size, 64)) as dev:
            data = range(dev.geometry.data.start, dev.total_blocks)
            for _ in range(1000):
                addr = rng.choice(data)
                if rng.random() < 0.5:
                    payload = rng.randbytes(block_size)
                    dev.write_block(addr, payload)
                    model[addr] = payload
                else:
                    assert dev.read_block(addr) == model.get(addr, bytes(block_size))
            for addr, payload in model.items():
                assert dev.read_block(addr) == payload


class TestAllocator:
    """Test alloc_blocks / free_blocks."""

    def test_hint_is_honoured(self, image_path):
        geometry = DeviceGeometry.build(256, 128, namespace_blocks=5, inode_table_blocks=32)
        with BlockDevice.format(image_path, geometry) as dev:
            assert dev.alloc_blocks(4, hint=40) == [40, 41, 42, 43]

    def test_first_fit_from_data_start(self, device):
        assert device.alloc_blocks(2) == [8, 9]
        assert device.alloc_blocks(1) == [10]

    def test_zero_count(self, device):
        with pytest.raises(AllocationError):
            device.alloc_blocks(0)

    def test_out_of_space(self, device):
        device.alloc_blocks(120)
        assert device.free_count == 0
        bitmap = device.block_bitmap()
        with pytest.raises(OutOfSpaceError):
            device.alloc_blocks(1)
        assert device.block_bitmap() == bitmap
        assert device.free_count == 0

    def test_oversized_request_leaves_bitmap_unchanged(self, device):
        device.alloc_blocks(100)
        bitmap = device.block_bitmap()
        with pytest.raises(OutOfSpaceError):
            device.alloc_blocks(21)
        assert device.block_bitmap() == bitmap
        assert device.free_count == 20

    def test_fragmented_fallback(self, device):
        blocks = device.alloc_blocks(120)
        # free every other block: no run of 2 exists
        device.free_blocks(blocks[::2])
        got = device.alloc_blocks(3)
        assert len(got) == 3
        assert len(set(got)) == 3

    def test_contiguous_request_fails_instead_of_fragmenting(self, device):
        blocks = device.alloc_blocks(120)
        device.free_blocks(blocks[::2])
        with pytest.raises(OutOfSpaceError):
            device.alloc_blocks(2, contiguous=True)

    def test_reverse_allocation_from_top(self, device):
        assert device.alloc_blocks(2, reverse=True) == [126, 127]
        assert device.alloc_blocks(2, reverse=True) == [124, 125]

    def test_double_free(self, device):
        (block,) = device.alloc_blocks(1)
        device.free_blocks([block])
        with pytest.raises(DoubleFreeError):
            device.free_blocks([block])

    def test_duplicate_in_one_call(self, device):
        (block,) = device.alloc_blocks(1)
        with pytest.raises(DoubleFreeError):
            device.free_blocks([block, block])
        assert device.is_allocated(block)

    def test_free_metadata_block_rejected(self, device):
        with pytest.raises(ProtectedBlockError):
            device.free_blocks([3])

    def test_free_excluded_block_rejected(self, device):
        (block,) = device.alloc_blocks(1)
        device.exclude([block])
        with pytest.raises(ProtectedBlockError):
            device.free_blocks([block])
        device.unexclude([block])
        device.free_blocks([block])
        assert not device.is_allocated(block)

    def test_exclude_free_block_is_integrity_error(self, device):
        with pytest.raises(IntegrityError):
            device.exclude([50])

    def test_random_alloc_free_matches_model(self, device):
        rng = random.Random(7)
        owned: set[int] = set()
        for _ in range(500):
            if owned and rng.random() < 0.45:
                victims = rng.sample(sorted(owned), rng.randint(1, min(4, len(owned))))
                device.free_blocks(victims)
                owned.difference_update(victims)
            else:
                count = rng.randint(1, 6)
                if count > device.free_count:
                    with pytest.raises(OutOfSpaceError):
                        device.alloc_blocks(count)
                    continue
                got = device.alloc_blocks(count, hint=rng.randrange(128))
                assert len(got) == count
                assert not owned.intersection(got)
                assert all(8 <= b < 128 for b in got)
                owned.update(got)
            assert device.free_count == 120 - len(owned)
            assert device.allocated_count == 8 + len(owned)


class TestTraceAllocator:
    """Block numbers of the worked example under stride 10, data goal 40."""

    def test_file_data_goals(self, trace_device):
        assert trace_device.alloc_blocks(4) == [40, 41, 42, 43]
        assert trace_device.alloc_blocks(4, hint=44) == [50, 51, 52, 53]

    def test_copy_goal_after_inode_table(self, trace_device):
        trace_device.alloc_blocks(4)
        trace_device.alloc_blocks(4, hint=44)
        assert trace_device.alloc_blocks(1, hint=11) == [20]
        assert trace_device.alloc_blocks(1, hint=11) == [30]

    def test_snapshot_metadata_from_top(self, trace_device):
        assert trace_device.alloc_blocks(2, reverse=True, contiguous=True) == [90, 91]
        assert trace_device.alloc_blocks(2, reverse=True, contiguous=True) == [80, 81]
