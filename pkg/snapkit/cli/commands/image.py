"""Image-level commands: format, verify, statistics, dumps, profiles."""

from pathlib import Path
from typing import Optional

import click
from pydantic import ValidationError

from snapkit.cli.common import (
    console,
    current_profile,
    echo_json,
    open_volume,
    snapshot_row,
)
from snapkit.config import list_profiles
from snapkit.core.errors import EXIT_INTEGRITY, GeometryError
from snapkit.core.superblock import max_snapshots
from snapkit.core.volume import Volume

IMAGE = click.argument("image", type=click.Path(dir_okay=False, path_type=Path))


@click.command()
@IMAGE
@click.option("--blocks", type=int, help="Device size in blocks (default: from profile)")
@click.option("--block-size", type=int, help="Bytes per block, 128-4096 (default: from profile)")
@click.option("--namespace-blocks", type=int, help="Namespace region size in blocks")
@click.option("--inode-blocks", type=int, help="Inode table size in blocks")
def mkfs(
    image: Path,
    blocks: Optional[int],
    block_size: Optional[int],
    namespace_blocks: Optional[int],
    inode_blocks: Optional[int],
) -> None:
    """Format IMAGE (overwrites an existing file).

    Examples:
        snapkit mkfs disk.img --blocks 128 --block-size 256
        snapkit --profile trace mkfs disk.img
    """
    profile = current_profile()
    try:
        geometry = profile.geometry(
            block_size=block_size,
            total_blocks=blocks,
            namespace_blocks=namespace_blocks,
            inode_table_blocks=inode_blocks,
        )
    except ValidationError as e:
        raise GeometryError(f"Invalid geometry: {e.errors()[0]['msg']}") from e

    volume = Volume.format(image, geometry, profile.allocator)
    free = volume.dev.free_count
    volume.close()
    console.print(
        f"Formatted {image}: {geometry.total_blocks} blocks x {geometry.block_size} B, "
        f"{free} free"
    )
    if max_snapshots(geometry.block_size) == 0:
        console.print(
            f"[yellow]Warning:[/yellow] {geometry.block_size} B blocks leave no room for "
            "a snapshot list; this image cannot take snapshots"
        )


@click.command()
@IMAGE
@click.pass_context
def verify(ctx: click.Context, image: Path) -> None:
    """Recompute every structural invariant of IMAGE.

    Exits with status 4 when any violation is found.
    """
    with open_volume(image) as volume:
        violations = volume.verify()
    for violation in violations:
        click.echo(str(violation))
    click.echo(f"{len(violations)} violations")
    if violations:
        ctx.exit(EXIT_INTEGRITY)


@click.command()
@IMAGE
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output")
def stats(image: Path, as_json: bool) -> None:
    """Device counters and per-snapshot space accounting."""
    with open_volume(image) as volume:
        device = volume.stats()

    if as_json:
        echo_json(
            {
                "total_blocks": device.total_blocks,
                "free_blocks": device.free_blocks,
                "allocated_blocks": device.allocated_blocks,
                "excluded_blocks": device.excluded_blocks,
                "snapshots": [snapshot_row(s, device.free_blocks) for s in device.snapshots],
            }
        )
        return

    click.echo(
        f"blocks={device.total_blocks} free={device.free_blocks} "
        f"allocated={device.allocated_blocks} excluded={device.excluded_blocks} "
        f"snapshot_overhead={device.snapshot_overhead}"
    )
    for s in device.snapshots:
        click.echo(
            f"snapshot {s.id}: mapped={s.mapped} identity={s.identity} copies={s.copies} "
            f"overhead={s.overhead_blocks}"
        )


@click.command()
@IMAGE
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output")
def dump(image: Path, as_json: bool) -> None:
    """Bitmaps, file extents and per-snapshot L→P tables."""
    with open_volume(image) as volume:
        if not as_json:
            lines = volume.dump_lines()
        else:
            device = volume.stats()
            doc = {
                "free_blocks": device.free_blocks,
                "allocated_blocks": device.allocated_blocks,
                "excluded_blocks": device.excluded_blocks,
                "files": [
                    {
                        "name": f.name,
                        "inode_no": f.inode_no,
                        "size_blocks": f.size_blocks,
                        "extents": [
                            [e.logical, e.physical, e.length]
                            for e in volume.fs.inode_of(f.name).extents
                        ],
                    }
                    for f in volume.list_files()
                ],
                "snapshots": [
                    {
                        **snapshot_row(s, device.free_blocks),
                        "pairs": [
                            list(pair)
                            for pair in volume.core.mapped_pairs(volume.core.get(s.id))
                        ],
                    }
                    for s in device.snapshots
                ],
            }
    if as_json:
        echo_json(doc)
        return
    for line in lines:
        click.echo(line)


@click.command()
def profiles() -> None:
    """List available device profiles."""
    for info in list_profiles():
        click.echo(f"{info.name}\t{info.description}")
