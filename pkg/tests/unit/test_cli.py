"""Tests for the snapkit command line."""

import json

import pytest
from click.testing import CliRunner

from snapkit.cli.main import cli as app
from snapkit.core.blockdev import BlockDevice
from snapkit.core.errors import EXIT_DOMAIN, EXIT_IMAGE, EXIT_INTEGRITY, EXIT_USAGE

runner = CliRunner()


@pytest.fixture
def image(tmp_path):
    path = tmp_path / "disk.img"
    result = runner.invoke(app, ["mkfs", str(path)])
    assert result.exit_code == 0
    return path


@pytest.fixture
def trace_image(tmp_path):
    """Image holding the worked example up to the truncate."""
    path = tmp_path / "trace.img"
    steps = [
        ["mkfs", str(path)],
        ["write", str(path), "f", "--data", "HEAD"],
        ["write", str(path), "f", "--data", "SHOT", "--offset", "4"],
        ["snap-create", str(path)],
        ["write", str(path), "f", "--data", "SNAP"],
        ["snap-create", str(path)],
        ["write", str(path), "f", "--data", "FS", "--offset", "4"],
        ["truncate", str(path), "f", "6"],
    ]
    for step in steps:
        result = runner.invoke(app, ["--profile", "trace", *step])
        assert result.exit_code == 0, result.output
    return path


def invoke(*args: str):
    return runner.invoke(app, ["--profile", "trace", *args])


class TestImageCommands:
    def test_mkfs_reports_free_blocks(self, tmp_path):
        path = tmp_path / "x.img"
        result = runner.invoke(app, ["mkfs", str(path), "--blocks", "64", "--block-size", "512"])

        assert result.exit_code == 0
        assert "64 blocks x 512 B" in " ".join(result.output.split())
        assert path.stat().st_size == 64 * 512

    def test_mkfs_invalid_geometry(self, tmp_path):
        result = runner.invoke(app, ["mkfs", str(tmp_path / "x.img"), "--block-size", "300"])

        assert result.exit_code == EXIT_IMAGE
        assert "Invalid geometry" in result.output

    def test_mkfs_rejects_blocks_below_superblock_size(self, tmp_path):
        result = runner.invoke(app, ["mkfs", str(tmp_path / "x.img"), "--block-size", "64"])

        assert result.exit_code == EXIT_IMAGE
        assert "Invalid geometry" in result.output

    def test_mkfs_warns_when_snapshots_impossible(self, tmp_path):
        path = tmp_path / "x.img"
        result = runner.invoke(app, ["mkfs", str(path), "--block-size", "128"])

        assert result.exit_code == 0
        assert "cannot take snapshots" in " ".join(result.output.split())
        assert runner.invoke(app, ["snap-create", str(path)]).exit_code == EXIT_DOMAIN

    def test_verify_clean(self, trace_image):
        result = invoke("verify", str(trace_image))

        assert result.exit_code == 0
        assert "0 violations" in result.output

    def test_verify_corrupted(self, image):
        raw = bytearray(image.read_bytes())
        # mark block 50 allocated in the on-disk block bitmap (block 1)
        raw[256 + 50 // 8] |= 1 << (50 % 8)
        image.write_bytes(bytes(raw))

        result = runner.invoke(app, ["verify", str(image)])

        assert result.exit_code == EXIT_INTEGRITY
        assert "[leak]" in result.output

    def test_stats_json(self, trace_image):
        result = invoke("stats", str(trace_image), "--json")
        doc = json.loads(result.output)

        assert result.exit_code == 0
        assert doc["total_blocks"] == 100
        assert doc["excluded_blocks"] == 14
        assert [s["id"] for s in doc["snapshots"]] == [1, 2]
        assert set(doc["snapshots"][0]) == {
            "id",
            "mapped",
            "identity",
            "copies",
            "overhead_blocks",
            "free_blocks",
        }

    def test_dump(self, trace_image):
        result = invoke("dump", str(trace_image))

        assert result.exit_code == 0
        assert "file f inode=1 size=6 L0->P60+4 L4->P70+2" in result.output
        assert "10→20" in result.output

    def test_dump_json(self, trace_image):
        doc = json.loads(invoke("dump", str(trace_image), "--json").output)

        assert doc["files"][0]["extents"] == [[0, 60, 4], [4, 70, 2]]
        assert [10, 30] in doc["snapshots"][1]["pairs"]

    def test_profiles(self):
        result = runner.invoke(app, ["profiles"])

        assert result.exit_code == 0
        assert "trace" in result.output


class TestFileCommands:
    def test_write_read(self, image):
        assert runner.invoke(app, ["write", str(image), "f", "--data", "HEADSHOT"]).exit_code == 0

        result = runner.invoke(app, ["read", str(image), "f"])
        assert result.output.strip() == "HEADSHOT"

    @pytest.mark.filterwarnings("error::DeprecationWarning")
    def test_write_from_stdin_and_raw_read(self, image):
        payload = bytes(range(256)) * 2
        result = runner.invoke(app, ["write", str(image), "blob"], input=payload)
        assert result.exit_code == 0

        result = runner.invoke(app, ["read", str(image), "blob", "--raw"])
        assert result.stdout_bytes == payload

    @pytest.mark.filterwarnings("error::DeprecationWarning")
    def test_raw_snapshot_read(self, image):
        before = bytes(range(256))
        runner.invoke(app, ["write", str(image), "blob"], input=before)
        snap = runner.invoke(app, ["snap-create", str(image)]).output.strip()
        runner.invoke(app, ["write", str(image), "blob"], input=bytes(256))

        result = runner.invoke(app, ["snap-read", str(image), "blob", "--snap", snap, "--raw"])
        assert result.exit_code == 0
        assert result.stdout_bytes == before

    def test_ls_and_rm(self, image):
        runner.invoke(app, ["write", str(image), "f", "--data", "AB"])
        runner.invoke(app, ["write", str(image), "g", "--data", "C"])

        lines = runner.invoke(app, ["ls", str(image)]).output.splitlines()
        assert lines == ["f\t1\t2\t1", "g\t2\t1\t1"]

        assert runner.invoke(app, ["rm", str(image), "f"]).exit_code == 0
        assert runner.invoke(app, ["ls", str(image)]).output.splitlines() == ["g\t2\t1\t1"]

    def test_unknown_file(self, image):
        result = runner.invoke(app, ["read", str(image), "nope"])

        assert result.exit_code == EXIT_DOMAIN
        assert "nope" in result.output

    def test_out_of_space_leaves_image_consistent(self, image):
        result = runner.invoke(app, ["write", str(image), "f", "--data", "x" * 200])
        assert result.exit_code == EXIT_DOMAIN

        assert runner.invoke(app, ["verify", str(image)]).exit_code == 0
        # the file is created by its own committed step; the failed write left it empty
        assert runner.invoke(app, ["ls", str(image)]).output.splitlines() == ["f\t1\t0\t0"]


class TestSnapshotCommands:
    def test_worked_example(self, trace_image):
        assert invoke("read", str(trace_image), "f").output.strip() == "SNAPFS"
        assert invoke("snap-read", str(trace_image), "f", "--snap", "1").output.strip() == (
            "HEADSHOT"
        )
        assert invoke("snap-read", str(trace_image), "f", "--snap", "2").output.strip() == (
            "SNAPSHOT"
        )

        result = invoke("snap-delete", str(trace_image), "2")
        assert result.exit_code == 0
        assert "Deleted snapshot 2: 3 blocks freed" in result.output

        assert invoke("snap-read", str(trace_image), "f", "--snap", "1").output.strip() == (
            "HEADSHOT"
        )
        assert invoke("verify", str(trace_image)).exit_code == 0

    def test_snap_create_prints_id(self, image):
        assert runner.invoke(app, ["snap-create", str(image)]).output.strip() == "1"
        assert runner.invoke(app, ["snap-create", str(image)]).output.strip() == "2"

    def test_snap_list_json(self, trace_image):
        rows = json.loads(invoke("snap-list", str(trace_image), "--json").output)

        assert [(r["id"], r["mapped"], r["identity"], r["copies"]) for r in rows] == [
            (1, 5, 4, 1),
            (2, 5, 4, 1),
        ]

    def test_restore(self, trace_image):
        result = invoke("restore", str(trace_image), "f", "--snap", "1", "--to", "old")

        assert result.exit_code == 0
        assert invoke("read", str(trace_image), "old").output.strip() == "HEADSHOT"

    def test_unknown_snapshot(self, image):
        result = runner.invoke(app, ["snap-delete", str(image), "7"])
        assert result.exit_code == EXIT_DOMAIN


class TestExitCodes:
    def test_unknown_command(self):
        assert runner.invoke(app, ["frobnicate"]).exit_code == EXIT_USAGE

    def test_missing_argument(self, image):
        assert runner.invoke(app, ["snap-read", str(image), "f"]).exit_code == EXIT_USAGE

    def test_missing_image(self, tmp_path):
        result = runner.invoke(app, ["ls", str(tmp_path / "missing.img")])
        assert result.exit_code == EXIT_IMAGE

    def test_locked_image(self, image):
        with BlockDevice.open(image):
            result = runner.invoke(app, ["ls", str(image)])
        assert result.exit_code == EXIT_IMAGE

    def test_version(self):
        result = runner.invoke(app, ["--version"])

        assert result.exit_code == 0
        assert "snapkit" in result.output
