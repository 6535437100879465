"""Detection rules: synthetic event streams plus live interpreter traces."""

from __future__ import annotations

import pytest

from dogefuzz import opcodes as op
from dogefuzz.asm import Assembler
from dogefuzz.evm import (
    AGENT_ADDRESS,
    AgentPolicy,
    EventKind,
    ExecutionEvent,
    PolicyKind,
    Transaction,
    TxStatus,
    execute_transaction,
)
from dogefuzz.oracles import (
    CLASSIFICATION,
    BugFinding,
    CoarseClass,
    FineBugClass,
    TransactionSnapshot,
    dedupe_findings,
    detect,
    detect_trace,
)

from evm_utils import run
from test_evm_exec import WITHDRAW, deploy_vault


def ev(kind: EventKind, pc: int = 0, depth: int = 1) -> ExecutionEvent:
    return ExecutionEvent(kind=kind, pc=pc, depth=depth)


def snap(*events: ExecutionEvent,
         status: TxStatus = TxStatus.SUCCESS) -> TransactionSnapshot:
    return TransactionSnapshot(status=status, events=events)


def classes(findings: list[BugFinding]) -> set[FineBugClass]:
    return {f.fine for f in findings}


# --- classification table -------------------------------------------------

def test_every_fine_class_is_classified() -> None:
    assert set(CLASSIFICATION) == set(FineBugClass)


@pytest.mark.parametrize("fine,swc,coarse", [
    (FineBugClass.REENTRANCY, "SWC-107", CoarseClass.RE),
    (FineBugClass.DANGEROUS_DELEGATE_CALL, "SWC-112", CoarseClass.ME),
    (FineBugClass.GASLESS_SEND, "SWC-104", CoarseClass.ME),
    (FineBugClass.EXCEPTION_DISORDER, "SWC-104", CoarseClass.ME),
    (FineBugClass.TIMESTAMP_DEPENDENCY, "SWC-120", CoarseClass.BD),
    (FineBugClass.NUMBER_DEPENDENCY, "SWC-120", CoarseClass.BD),
])
def test_classification_table(fine, swc, coarse) -> None:
    assert CLASSIFICATION[fine] == (swc, coarse)


# --- rule: re-entered frame with deep effects -----------------------------

def test_reentrancy_needs_deep_transfer_or_write() -> None:
    qualifying = snap(ev(EventKind.REENTRANCY, depth=3),
                      ev(EventKind.ETHER_TRANSFER, pc=9, depth=3))
    assert classes(detect(qualifying)) == {FineBugClass.REENTRANCY}

    shallow = snap(ev(EventKind.REENTRANCY, depth=3),
                   ev(EventKind.ETHER_TRANSFER, pc=9, depth=2))
    assert detect(shallow) == []

    via_write = snap(ev(EventKind.REENTRANCY, depth=3),
                     ev(EventKind.STORAGE_CHANGED, pc=4, depth=4))
    assert classes(detect(via_write)) == {FineBugClass.REENTRANCY}


def test_reentrancy_anchors_first_qualifying_event() -> None:
    snapshot = snap(
        ev(EventKind.REENTRANCY, pc=11, depth=9),   # nothing at depth >= 9
        ev(EventKind.REENTRANCY, pc=22, depth=3),
        ev(EventKind.ETHER_TRANSFER, pc=30, depth=4),
    )
    findings = detect(snapshot)
    assert [f.pc for f in findings if f.fine is FineBugClass.REENTRANCY] == [22]


def test_reentrancy_alone_is_silent() -> None:
    assert detect(snap(ev(EventKind.REENTRANCY, depth=2))) == []


# --- rule: delegate target from the outside -------------------------------

def test_delegate_fires_regardless_of_status() -> None:
    for status in TxStatus:
        findings = detect(snap(ev(EventKind.DELEGATE, pc=17), status=status))
        assert classes(findings) == {FineBugClass.DANGEROUS_DELEGATE_CALL}
        assert findings[0].pc == 17


# --- rules gated on success -----------------------------------------------

def test_gasless_send_requires_success() -> None:
    hit = detect(snap(ev(EventKind.GASLESS_SEND, pc=33)))
    assert classes(hit) == {FineBugClass.GASLESS_SEND}
    assert hit[0].pc == 33
    assert detect(snap(ev(EventKind.GASLESS_SEND, pc=33),
                       status=TxStatus.REVERTED)) == []


def test_exception_disorder_requires_success() -> None:
    hit = detect(snap(ev(EventKind.EXCEPTION_DISORDER, pc=40)))
    assert classes(hit) == {FineBugClass.EXCEPTION_DISORDER}
    assert detect(snap(ev(EventKind.EXCEPTION_DISORDER, pc=40),
                       status=TxStatus.OUT_OF_GAS)) == []


# --- rules: block field reads plus a transfer -----------------------------

def test_timestamp_dependency_needs_transfer() -> None:
    assert detect(snap(ev(EventKind.TIMESTAMP, pc=2))) == []
    findings = detect(snap(ev(EventKind.TIMESTAMP, pc=2),
                           ev(EventKind.TIMESTAMP, pc=8),
                           ev(EventKind.ETHER_TRANSFER, pc=20)))
    assert [(f.fine, f.pc) for f in findings] == [
        (FineBugClass.TIMESTAMP_DEPENDENCY, 2)]


def test_number_dependency_needs_transfer() -> None:
    assert detect(snap(ev(EventKind.BLOCK_NUMBER, pc=5))) == []
    findings = detect(snap(ev(EventKind.BLOCK_NUMBER, pc=5),
                           ev(EventKind.ETHER_TRANSFER, pc=9)))
    assert classes(findings) == {FineBugClass.NUMBER_DEPENDENCY}


def test_multiple_classes_one_snapshot() -> None:
    snapshot = snap(
        ev(EventKind.DELEGATE, pc=3),
        ev(EventKind.GASLESS_SEND, pc=10),
        ev(EventKind.GASLESS_SEND, pc=50),
        ev(EventKind.TIMESTAMP, pc=1),
        ev(EventKind.ETHER_TRANSFER, pc=12),
    )
    findings = detect(snapshot)
    assert classes(findings) == {
        FineBugClass.DANGEROUS_DELEGATE_CALL,
        FineBugClass.GASLESS_SEND,
        FineBugClass.TIMESTAMP_DEPENDENCY,
    }
    gasless = [f for f in findings if f.fine is FineBugClass.GASLESS_SEND]
    assert [f.pc for f in gasless] == [10]


# --- deduplication --------------------------------------------------------

def _f(fine: FineBugClass, pc: int) -> BugFinding:
    swc, coarse = CLASSIFICATION[fine]
    return BugFinding(fine, swc, coarse, pc)


def test_dedupe_keeps_earliest_iteration() -> None:
    a = _f(FineBugClass.GASLESS_SEND, 12)
    merged = dedupe_findings([(5, a), (2, a), (9, a)])
    assert merged == [(2, a)]


def test_dedupe_distinguishes_sites_and_classes() -> None:
    near = _f(FineBugClass.GASLESS_SEND, 12)
    far = _f(FineBugClass.GASLESS_SEND, 90)
    other = _f(FineBugClass.EXCEPTION_DISORDER, 12)
    merged = dedupe_findings([(4, far), (1, near), (3, other)])
    assert merged == [(1, near), (3, other), (4, far)]


# --- live traces ----------------------------------------------------------

def test_vault_drain_detected_as_reentrancy() -> None:
    state, vault = deploy_vault()
    execute_transaction(state, Transaction(target=vault, value=100))
    trace = execute_transaction(
        state, Transaction(target=vault, calldata=WITHDRAW,
                           agent_policy=AgentPolicy(PolicyKind.REENTRANT)))
    findings = detect_trace(trace)
    assert FineBugClass.REENTRANCY in classes(findings)


def test_stipend_send_to_contract_detected_as_gasless() -> None:
    a = Assembler()
    a.push(0).push(0).push(0).push(0).push(1)
    a.push_address(AGENT_ADDRESS).push(0).op("CALL", "POP", "STOP")
    trace, _, _ = run(a.assemble(), endowment=5)
    findings = detect_trace(trace)
    # an ignored out-of-gas send is simultaneously a swallowed exception
    assert classes(findings) == {FineBugClass.GASLESS_SEND,
                                 FineBugClass.EXCEPTION_DISORDER}
    send_pc = {f.pc for f in findings}
    assert len(send_pc) == 1, "both findings anchor at the call site"


def test_timestamp_gated_send_detected() -> None:
    sink = b"\x00" * 19 + b"\x09"
    a = Assembler()
    a.op("TIMESTAMP", "POP")
    a.push(0).push(0).push(0).push(0).push(1)
    a.push_address(sink).push(0).op("CALL", "POP", "STOP")
    trace, _, _ = run(a.assemble(), endowment=5)
    findings = detect_trace(trace)
    assert classes(findings) == {FineBugClass.TIMESTAMP_DEPENDENCY}
    (finding,) = findings
    assert finding.pc == 0
    assert finding.swc == "SWC-120" and finding.coarse is CoarseClass.BD
