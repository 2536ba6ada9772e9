"""snapkit CLI - snapshot-capable block store in one image file.

Usage:
    snapkit mkfs disk.img --blocks 128 --block-size 256
    snapkit write disk.img f --data HEADSHOT
    snapkit snap-create disk.img
    snapkit write disk.img f --data SNAP
    snapkit read disk.img f
    snapkit snap-read disk.img f --snap 1
    snapkit snap-list disk.img --json
    snapkit snap-delete disk.img 1
    snapkit verify disk.img
    snapkit dump disk.img
    snapkit --profile trace mkfs disk.img

Exit codes: 0 success, 1 usage error, 2 image/format error,
3 domain error (unknown file or snapshot, out of space), 4 integrity violation.
"""

import logging
import sys
from typing import Any, Optional

import click
from rich.logging import RichHandler

from snapkit import __version__
from snapkit.cli.commands import (
    dump,
    ls,
    mkfs,
    profiles,
    read,
    restore,
    rm,
    snap_create,
    snap_delete,
    snap_list,
    snap_read,
    stats,
    truncate,
    verify,
    write,
)
from snapkit.cli.common import err_console
from snapkit.core.errors import EXIT_USAGE, SnapkitError


class SnapkitGroup(click.Group):
    """Click group that maps failures onto the documented exit codes."""

    def main(
        self,
        args: Optional[Any] = None,
        prog_name: Optional[str] = None,
        complete_var: Optional[str] = None,
        standalone_mode: bool = True,
        **extra: Any,
    ) -> Any:
        try:
            rv = super().main(
                args=args,
                prog_name=prog_name,
                complete_var=complete_var,
                standalone_mode=False,
                **extra,
            )
        except click.ClickException as e:
            e.show()
            code = EXIT_USAGE
        except click.exceptions.Abort:
            err_console.print("Aborted")
            code = EXIT_USAGE
        except SnapkitError as e:
            err_console.print(f"[red]Error:[/red] {e}")
            code = e.exit_code
        else:
            code = rv if isinstance(rv, int) else 0
        if not standalone_mode:
            return code
        sys.exit(code)


@click.group(cls=SnapkitGroup)
@click.version_option(__version__, "--version", prog_name="snapkit")
@click.option(
    "--profile",
    "profile_name",
    envvar="SNAPKIT_PROFILE",
    default="default",
    show_default=True,
    help="Device profile (geometry defaults and allocator policy)",
)
@click.option("--verbose", "-v", is_flag=True, help="Log allocator and gate decisions to stderr")
@click.pass_context
def cli(ctx: click.Context, profile_name: str, verbose: bool) -> None:
    """snapkit - snapshots of a toy block filesystem.

    Snapshots are sparse files mapping device blocks to preserved copies;
    metadata is copied on write, data is moved on write.
    """
    ctx.ensure_object(dict)
    ctx.obj["profile_name"] = profile_name
    if verbose:
        logging.basicConfig(
            level=logging.DEBUG,
            format="%(message)s",
            handlers=[RichHandler(console=err_console, show_time=False, show_path=False)],
            force=True,
        )


# Image commands
cli.add_command(mkfs)
cli.add_command(verify)
cli.add_command(stats)
cli.add_command(dump)
cli.add_command(profiles)

# File commands
cli.add_command(write)
cli.add_command(read)
cli.add_command(rm)
cli.add_command(truncate)
cli.add_command(ls)

# Snapshot commands
cli.add_command(snap_create)
cli.add_command(snap_list)
cli.add_command(snap_delete)
cli.add_command(snap_read)
cli.add_command(restore)


def main() -> None:
    """Entry point for the CLI."""
    cli()


if __name__ == "__main__":
    main()
