"""Snapshot lifecycle commands."""

from pathlib import Path
from typing import Optional

import click

from snapkit.cli.common import (
    console,
    decode_tokens,
    echo_json,
    open_volume,
    snapshot_row,
)

IMAGE = click.argument("image", type=click.Path(dir_okay=False, path_type=Path))
SNAP = click.option("--snap", "snapshot_id", type=int, required=True, help="Snapshot id")


@click.command("snap-create")
@IMAGE
def snap_create(image: Path) -> None:
    """Take a snapshot of IMAGE and print its id."""
    with open_volume(image, mutating=True) as volume:
        snapshot_id = volume.snapshot_take()
    click.echo(str(snapshot_id))


@click.command("snap-list")
@IMAGE
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output")
def snap_list(image: Path, as_json: bool) -> None:
    """List snapshots, oldest first."""
    with open_volume(image) as volume:
        snapshots = volume.snapshot_list()
        free = volume.dev.free_count
    if as_json:
        echo_json([snapshot_row(s, free) for s in snapshots])
        return
    for s in snapshots:
        click.echo(
            f"{s.id}\tinode={s.inode_no}\tmapped={s.mapped}\tidentity={s.identity}\t"
            f"copies={s.copies}\toverhead={s.overhead_blocks}" + ("\tactive" if s.active else "")
        )


@click.command("snap-delete")
@IMAGE
@click.argument("snapshot_id", type=int)
def snap_delete(image: Path, snapshot_id: int) -> None:
    """Delete a snapshot, merging what older snapshots need."""
    with open_volume(image, mutating=True) as volume:
        freed = volume.snapshot_delete(snapshot_id)
    console.print(f"Deleted snapshot {snapshot_id}: {freed} blocks freed")


@click.command("snap-read")
@IMAGE
@click.argument("name")
@SNAP
@click.option("--raw", is_flag=True, help="Write the blocks unmodified to stdout")
def snap_read(image: Path, name: str, snapshot_id: int, raw: bool) -> None:
    """Print file NAME as it was when the snapshot was taken."""
    with open_volume(image) as volume:
        content = volume.read_file_at(snapshot_id, name)
        block_size = volume.dev.block_size
    if raw:
        click.echo(content, nl=False)
        return
    click.echo(decode_tokens(content, block_size))


@click.command()
@IMAGE
@click.argument("name")
@SNAP
@click.option("--to", "target", help="Restore into this file instead of NAME")
def restore(image: Path, name: str, snapshot_id: int, target: Optional[str]) -> None:
    """Roll file NAME back to its content at a snapshot."""
    with open_volume(image, mutating=True) as volume:
        volume.restore_file(snapshot_id, name, target)
    console.print(f"Restored {target or name} from snapshot {snapshot_id}")
