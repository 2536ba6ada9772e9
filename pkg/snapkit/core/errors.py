"""Exception hierarchy for snapkit.

Every error carries the CLI exit code it maps to, so the command layer can
translate failures without knowing about individual operations.
"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IMAGE = 2
EXIT_DOMAIN = 3
EXIT_INTEGRITY = 4


class SnapkitError(Exception):
    """Base class for all snapkit errors."""

    exit_code: int = EXIT_IMAGE


class ImageError(SnapkitError):
    """Image file cannot be read, written or parsed."""

    exit_code = EXIT_IMAGE


class ImageLockedError(ImageError):
    """Another process holds the image lock."""


class GeometryError(ImageError, ValueError):
    """Invalid device geometry (block size, region layout)."""


class DomainError(SnapkitError):
    """Request is well formed but not satisfiable in the current state."""

    exit_code = EXIT_DOMAIN


class NotFoundError(DomainError):
    """Unknown file or snapshot."""


class DuplicateNameError(DomainError):
    """File name already in use."""


class OutOfSpaceError(DomainError):
    """Not enough free blocks for the request."""


class InodeTableFullError(OutOfSpaceError):
    """No free inode slot."""


class NamespaceFullError(OutOfSpaceError):
    """No namespace block has room for another entry."""


class SnapshotLimitError(OutOfSpaceError):
    """Superblock snapshot list is full."""


class ExtentOverflowError(OutOfSpaceError):
    """Inode would need more extents than its inline slots plus one index block hold."""


class InvalidRequestError(DomainError, ValueError):
    """Malformed request (empty payload, bad file name)."""


class AllocationError(DomainError, ValueError):
    """Malformed allocation request (e.g. zero blocks)."""


class BlockAddressError(DomainError, IndexError):
    """Block address outside the device."""


class DoubleFreeError(DomainError):
    """Block freed while already free."""


class ProtectedBlockError(DomainError):
    """Attempt to free or move a block owned by a snapshot file."""


class IntegrityError(SnapkitError):
    """On-image structures violate an invariant."""

    exit_code = EXIT_INTEGRITY
