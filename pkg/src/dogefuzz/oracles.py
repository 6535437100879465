"""Bug detection over instrumented execution traces.

Each rule inspects the events of a single transaction and reports at most
one finding per fine-grained class, anchored at the first event that
satisfies the rule.  Campaign-level bookkeeping collapses repeats of the
same (class, pc) pair down to their earliest occurrence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, TypeVar

from .evm import EventKind, ExecutionEvent, ExecutionTrace, TxStatus

logger = logging.getLogger(__name__)


class FineBugClass(str, Enum):
    REENTRANCY = "Reentrancy"
    DANGEROUS_DELEGATE_CALL = "DangerousDelegateCall"
    GASLESS_SEND = "GaslessSend"
    EXCEPTION_DISORDER = "ExceptionDisorder"
    TIMESTAMP_DEPENDENCY = "TimestampDependency"
    NUMBER_DEPENDENCY = "NumberDependency"


class CoarseClass(str, Enum):
    """Report-level grouping labels."""

    RE = "RE"
    ME = "ME"
    BD = "BD"


# fine class -> (weakness registry id, coarse report label)
CLASSIFICATION: dict[FineBugClass, tuple[str, CoarseClass]] = {
    FineBugClass.REENTRANCY: ("SWC-107", CoarseClass.RE),
    FineBugClass.DANGEROUS_DELEGATE_CALL: ("SWC-112", CoarseClass.ME),
    FineBugClass.GASLESS_SEND: ("SWC-104", CoarseClass.ME),
    FineBugClass.EXCEPTION_DISORDER: ("SWC-104", CoarseClass.ME),
    FineBugClass.TIMESTAMP_DEPENDENCY: ("SWC-120", CoarseClass.BD),
    FineBugClass.NUMBER_DEPENDENCY: ("SWC-120", CoarseClass.BD),
}


@dataclass(frozen=True)
class TransactionSnapshot:
    """The slice of a trace the detection rules look at."""

    status: TxStatus
    events: tuple[ExecutionEvent, ...]

    @classmethod
    def from_trace(cls, trace: ExecutionTrace) -> "TransactionSnapshot":
        return cls(status=trace.status, events=tuple(trace.events))


@dataclass(frozen=True)
class BugFinding:
    fine: FineBugClass
    swc: str
    coarse: CoarseClass
    pc: int


def _finding(fine: FineBugClass, pc: int) -> BugFinding:
    swc, coarse = CLASSIFICATION[fine]
    return BugFinding(fine=fine, swc=swc, coarse=coarse, pc=pc)


# --- detection rules ------------------------------------------------------

def detect(snapshot: TransactionSnapshot) -> list[BugFinding]:
    """All findings for one transaction, at most one per fine class."""
    events = snapshot.events
    succeeded = snapshot.status is TxStatus.SUCCESS
    findings: list[BugFinding] = []

    def first(kind: EventKind) -> ExecutionEvent | None:
        return next((e for e in events if e.kind is kind), None)

    # a frame was entered twice and the nested execution moved money or
    # rewrote storage at or below the re-entered depth
    for event in events:
        if event.kind is not EventKind.REENTRANCY:
            continue
        deep = any(
            e.kind in (EventKind.ETHER_TRANSFER, EventKind.STORAGE_CHANGED)
            and e.depth >= event.depth
            for e in events)
        if deep:
            findings.append(_finding(FineBugClass.REENTRANCY, event.pc))
            break

    delegate = first(EventKind.DELEGATE)
    if delegate is not None:
        findings.append(
            _finding(FineBugClass.DANGEROUS_DELEGATE_CALL, delegate.pc))

    if succeeded:
        gasless = first(EventKind.GASLESS_SEND)
        if gasless is not None:
            findings.append(_finding(FineBugClass.GASLESS_SEND, gasless.pc))
        disorder = first(EventKind.EXCEPTION_DISORDER)
        if disorder is not None:
            findings.append(
                _finding(FineBugClass.EXCEPTION_DISORDER, disorder.pc))

    transferred = any(e.kind is EventKind.ETHER_TRANSFER for e in events)
    if transferred:
        stamp = first(EventKind.TIMESTAMP)
        if stamp is not None:
            findings.append(
                _finding(FineBugClass.TIMESTAMP_DEPENDENCY, stamp.pc))
        number = first(EventKind.BLOCK_NUMBER)
        if number is not None:
            findings.append(
                _finding(FineBugClass.NUMBER_DEPENDENCY, number.pc))

    if findings:
        logger.debug("detected %s", [f.fine.value for f in findings])
    return findings


def detect_trace(trace: ExecutionTrace) -> list[BugFinding]:
    return detect(TransactionSnapshot.from_trace(trace))


# --- campaign aggregation -------------------------------------------------

RowT = TypeVar("RowT", bound=tuple)


def dedupe_findings(found: Iterable[RowT]) -> list[RowT]:
    """Collapse repeats of one (fine class, pc) site to the earliest hit.

    Rows start with (iteration, finding); trailing items such as a
    reproducing transaction ride along untouched.  Output is sorted by
    iteration, then class, then pc, to keep reports stable.
    """
    best: dict[tuple[FineBugClass, int], RowT] = {}
    for row in found:
        iteration, finding = row[0], row[1]
        key = (finding.fine, finding.pc)
        kept = best.get(key)
        if kept is None or iteration < kept[0]:
            best[key] = row
    return sorted(best.values(),
                  key=lambda row: (row[0], row[1].fine.value, row[1].pc))
