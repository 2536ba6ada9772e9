"""CLI commands package."""

from snapkit.cli.commands.files import ls, read, rm, truncate, write
from snapkit.cli.commands.image import dump, mkfs, profiles, stats, verify
from snapkit.cli.commands.snapshots import (
    restore,
    snap_create,
    snap_delete,
    snap_list,
    snap_read,
)

__all__ = [
    "dump",
    "ls",
    "mkfs",
    "profiles",
    "read",
    "restore",
    "rm",
    "snap_create",
    "snap_delete",
    "snap_list",
    "snap_read",
    "stats",
    "truncate",
    "verify",
    "write",
]
