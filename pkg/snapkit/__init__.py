"""SnapKit - Snapshot-capable block store.

Sparse snapshot files, copy-on-write for metadata and move-on-write for data,
over a single fixed-block image file.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
