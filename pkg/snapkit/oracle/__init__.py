"""Full-copy reference model used to check snapshot views."""

from snapkit.oracle.shadow import Mismatch, OracleImage, assert_matches, capture

__all__ = ["Mismatch", "OracleImage", "assert_matches", "capture"]
