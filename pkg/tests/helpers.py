"""Test helpers."""


def blocks_of(text: str, block_size: int = 256) -> bytes:
    """One NUL-padded block per character."""
    return b"".join(c.encode("utf-8").ljust(block_size, b"\0") for c in text)
