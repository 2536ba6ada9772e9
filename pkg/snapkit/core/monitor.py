"""Gate instrumentation.

Counts every preservation the COW and MOW gates perform, keyed by
(snapshot epoch, block). A block may be preserved at most once per epoch;
:meth:`GateMonitor.cow_once_violations` lists the keys that were not.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

logger = logging.getLogger(__name__)


class PreservationKind(str, Enum):
    COW = "cow"
    MOW = "mow"


@dataclass
class PreservationRecord:
    """Usage of one (epoch, block) key."""

    epoch: int
    block: int
    kind: PreservationKind
    applied_count: int = 0
    first_op: Optional[int] = None
    last_op: Optional[int] = None

    def record_application(self, op: int) -> None:
        self.applied_count += 1
        self.last_op = op
        if self.first_op is None:
            self.first_op = op


class GateMonitor:
    """Track preservations across a volume session.

    Examples:
        >>> monitor = GateMonitor()
        >>> monitor.record_preservation(1, 10, PreservationKind.COW, op=3)
        >>> monitor.count(PreservationKind.COW)
        1
        >>> monitor.cow_once_violations()
        []
    """

    def __init__(self):
        self._usage: dict[int, dict[int, PreservationRecord]] = defaultdict(dict)
        self._enabled = True
        self._pending: Optional[list[Callable[[], None]]] = None

    def begin(self) -> None:
        """Buffer preservations and epoch drops until :meth:`commit`; :meth:`discard` drops them."""
        self._pending = []

    def commit(self) -> None:
        pending, self._pending = self._pending or [], None
        for action in pending:
            action()

    def discard(self) -> None:
        self._pending = None

    def record_preservation(
        self, epoch: int, block: int, kind: PreservationKind, op: int = 0
    ) -> None:
        if not self._enabled:
            return
        if self._pending is not None:
            self._pending.append(lambda: self._apply(epoch, block, kind, op))
            return
        self._apply(epoch, block, kind, op)

    def _apply(self, epoch: int, block: int, kind: PreservationKind, op: int) -> None:
        record = self._usage[epoch].get(block)
        if record is None:
            record = PreservationRecord(epoch=epoch, block=block, kind=kind)
            self._usage[epoch][block] = record
        record.record_application(op)
        logger.debug(
            f"{kind.value.upper()} epoch {epoch} block {block} (count: {record.applied_count})"
        )

    def get_statistics(self) -> dict[int, dict[int, PreservationRecord]]:
        """Nested dict: epoch -> block -> PreservationRecord."""
        return {epoch: dict(blocks) for epoch, blocks in self._usage.items()}

    def records(self, epoch: Optional[int] = None) -> list[PreservationRecord]:
        if epoch is not None:
            return list(self._usage.get(epoch, {}).values())
        return [r for blocks in self._usage.values() for r in blocks.values()]

    def count(self, kind: Optional[PreservationKind] = None, epoch: Optional[int] = None) -> int:
        """Number of distinct preserved (epoch, block) keys."""
        return sum(1 for r in self.records(epoch) if kind is None or r.kind is kind)

    def cow_once_violations(self) -> list[PreservationRecord]:
        """Keys preserved more than once."""
        return [r for r in self.records() if r.applied_count > 1]

    def forget_epoch(self, epoch: int) -> None:
        """Drop counters of a deleted snapshot (its epoch id may be reused)."""
        if self._pending is not None:
            self._pending.append(lambda: self._usage.pop(epoch, None))
            return
        self._usage.pop(epoch, None)

    def reset(self) -> None:
        self._usage.clear()
        logger.debug("Gate monitor statistics reset")

    def disable(self) -> None:
        self._enabled = False

    def enable(self) -> None:
        self._enabled = True
