"""Live file commands."""

import sys
from pathlib import Path
from typing import Optional

import click

from snapkit.cli.common import decode_tokens, encode_tokens, open_volume

IMAGE = click.argument("image", type=click.Path(dir_okay=False, path_type=Path))


@click.command()
@IMAGE
@click.argument("name")
@click.option("--data", help="One block per character; raw bytes from stdin when omitted")
@click.option("--offset", type=int, default=0, show_default=True, help="First block to write")
def write(image: Path, name: str, data: Optional[str], offset: int) -> None:
    """Write to file NAME, creating it if needed.

    Scattered rewrites after a snapshot fragment the file. With 256 B blocks a
    file holds at most 19 extents; use --profile fuzz for heavy rewriting.

    Examples:
        snapkit write disk.img f --data HEADSHOT
        snapkit write disk.img f --data FS --offset 4
        cat blob.bin | snapkit write disk.img blob
    """
    with open_volume(image, mutating=True) as volume:
        if data is not None:
            payload = encode_tokens(data, volume.dev.block_size)
        else:
            payload = sys.stdin.buffer.read()
        if not volume.fs.exists(name):
            volume.create_file(name)
        volume.write_file(name, offset, payload)


@click.command()
@IMAGE
@click.argument("name")
@click.option("--raw", is_flag=True, help="Write the blocks unmodified to stdout")
def read(image: Path, name: str, raw: bool) -> None:
    """Print the live content of file NAME."""
    with open_volume(image) as volume:
        content = volume.read_file(name)
        block_size = volume.dev.block_size
    if raw:
        click.echo(content, nl=False)
        return
    click.echo(decode_tokens(content, block_size))


@click.command()
@IMAGE
@click.argument("name")
def rm(image: Path, name: str) -> None:
    """Delete file NAME; blocks a snapshot still needs are handed to it."""
    with open_volume(image, mutating=True) as volume:
        volume.delete_file(name)


@click.command()
@IMAGE
@click.argument("name")
@click.argument("size", type=click.IntRange(min=0))
def truncate(image: Path, name: str, size: int) -> None:
    """Cut file NAME down to SIZE blocks."""
    with open_volume(image, mutating=True) as volume:
        volume.truncate_file(name, size)


@click.command()
@IMAGE
def ls(image: Path) -> None:
    """List live files: name, inode, size in blocks, extent count."""
    with open_volume(image) as volume:
        files = volume.list_files()
    for info in files:
        click.echo(f"{info.name}\t{info.inode_no}\t{info.size_blocks}\t{info.extent_count}")
