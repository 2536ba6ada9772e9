"""Helpers shared by the command modules."""

import json
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator

import click
from rich.console import Console

from snapkit.config import DeviceProfile, load_profile
from snapkit.core.snapmgr import SnapshotStats
from snapkit.core.volume import Volume

console = Console(highlight=False)
err_console = Console(stderr=True, highlight=False)

# Stable per-snapshot field set of the --json outputs
JSON_FIELDS = ("id", "mapped", "identity", "copies", "overhead_blocks", "free_blocks")


def current_profile() -> DeviceProfile:
    ctx = click.get_current_context()
    obj = ctx.find_object(dict)
    if obj is None:
        return load_profile("default")
    if "profile" not in obj:
        obj["profile"] = load_profile(obj.get("profile_name") or "default")
    return obj["profile"]


@contextmanager
def open_volume(image: Path, mutating: bool = False) -> Iterator[Volume]:
    """Open an image under the selected profile's allocator policy.

    Mutating verbs flush even after an error: a failed operation has already
    been rolled back, so the image holds exactly the committed ones.
    """
    volume = Volume.open(image, policy=current_profile().allocator)
    try:
        yield volume
    finally:
        volume.close(flush=mutating)


def snapshot_row(stats: SnapshotStats, free_blocks: int) -> dict[str, Any]:
    row = stats.model_dump()
    row["free_blocks"] = free_blocks
    return {key: row[key] for key in JSON_FIELDS}


def echo_json(data: Any) -> None:
    click.echo(json.dumps(data, indent=2, sort_keys=False))


def encode_tokens(data: str, block_size: int) -> bytes:
    """One block per character: each character's UTF-8 bytes, NUL-padded to a block."""
    blocks = []
    for char in data:
        raw = char.encode("utf-8")
        blocks.append(raw.ljust(block_size, b"\0"))
    return b"".join(blocks)


def decode_tokens(content: bytes, block_size: int) -> str:
    """Inverse of :func:`encode_tokens`: strip NUL padding of every block."""
    parts = []
    for offset in range(0, len(content), block_size):
        parts.append(content[offset : offset + block_size].rstrip(b"\0"))
    return b"".join(parts).decode("utf-8", errors="replace")
