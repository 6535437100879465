"""Bytecode interpreter with execution instrumentation for fuzzing.

Implements an Istanbul-era stack machine over a journaled world state and
records, besides coverage (executed offsets and dynamic edges), the nine
event kinds the bug oracles consume: Delegate, GaslessSend, SendOp,
ExceptionDisorder, BlockNumber, Timestamp, Reentrancy, StorageChanged,
EtherTransfer.

Transactions originate from a built-in agent account whose behavior on being
called back is driven by a per-transaction policy (accept, re-enter the
caller, or throw). Every plain call into the agent pays a fixed storage-write
scale fee first, modelling a logging fallback: a 2300-gas stipend send to the
agent therefore always runs out of gas.
"""

from __future__ import annotations

import logging
import sys
from dataclasses import dataclass, field
from enum import Enum

from . import opcodes as op
from .keccak import keccak256

logger = logging.getLogger(__name__)

# frame recursion consumes a few Python frames per EVM frame; the default
# interpreter limit is below the 1024 EVM depth cap
sys.setrecursionlimit(max(sys.getrecursionlimit(), 15000))

UINT256_MASK = (1 << 256) - 1
SIGN_BIT = 1 << 255
ADDRESS_MASK = (1 << 160) - 1
CALL_DEPTH_LIMIT = 1024
STACK_LIMIT = 1024
DEFAULT_TX_GAS = 1_000_000

# cost of the agent's virtual logging fallback on any plain call into it
AGENT_CALL_GAS = 20_000


def _addr(tag: int) -> bytes:
    return bytes([tag]) * 20

ZERO_ADDRESS = b"\x00" * 20
AGENT_ADDRESS = _addr(0xAA)
DEPLOYER_ADDRESS = _addr(0xD1)
EOA_ADDRESS = _addr(0x5E)
COINBASE_ADDRESS = _addr(0xC0)


# --- domain types ---------------------------------------------------------

class TxStatus(str, Enum):
    SUCCESS = "Success"
    REVERTED = "Reverted"
    OUT_OF_GAS = "OutOfGas"
    INVALID_OPCODE = "InvalidOpcode"
    DEPTH_EXCEEDED = "DepthExceeded"


class EventKind(str, Enum):
    DELEGATE = "Delegate"
    GASLESS_SEND = "GaslessSend"
    SEND_OP = "SendOp"
    EXCEPTION_DISORDER = "ExceptionDisorder"
    BLOCK_NUMBER = "BlockNumber"
    TIMESTAMP = "Timestamp"
    REENTRANCY = "Reentrancy"
    STORAGE_CHANGED = "StorageChanged"
    ETHER_TRANSFER = "EtherTransfer"


class PolicyKind(str, Enum):
    BENIGN = "Benign"
    REENTRANT = "Reentrant"
    THROWER = "Thrower"


@dataclass(frozen=True)
class AgentPolicy:
    """Behavior of the agent account when a contract calls it back."""

    kind: PolicyKind = PolicyKind.BENIGN
    max_reentries: int = 1


@dataclass(frozen=True)
class BlockContext:
    number: int = 1_000_000
    timestamp: int = 1_600_000_000
    gas_limit: int = 8_000_000


DEFAULT_BLOCK = BlockContext()


@dataclass(frozen=True)
class Transaction:
    target: bytes
    calldata: bytes = b""
    value: int = 0
    sender: bytes = AGENT_ADDRESS
    gas_limit: int = DEFAULT_TX_GAS
    agent_policy: AgentPolicy = AgentPolicy()
    block: BlockContext = DEFAULT_BLOCK


@dataclass(frozen=True)
class ExecutionEvent:
    kind: EventKind
    pc: int
    depth: int
    data: tuple = ()


@dataclass
class ExecutionTrace:
    status: TxStatus
    gas_used: int
    executed_pcs: dict[bytes, set[int]]
    dynamic_edges: set[tuple[int, int]]
    events: list[ExecutionEvent]
    storage_diff: list[tuple[bytes, int, int, int]]
    return_data: bytes = b""


@dataclass
class Account:
    balance: int = 0
    code: bytes = b""
    storage: dict[int, int] = field(default_factory=dict)
    nonce: int = 0

    def copy(self) -> "Account":
        return Account(self.balance, self.code, dict(self.storage), self.nonce)


class WorldState:
    """Mutable account mapping; absent accounts read as empty."""

    __slots__ = ("accounts",)

    def __init__(self, accounts: dict[bytes, Account] | None = None) -> None:
        self.accounts: dict[bytes, Account] = accounts if accounts is not None else {}

    def account(self, address: bytes) -> Account:
        acct = self.accounts.get(address)
        if acct is None:
            acct = Account()
            self.accounts[address] = acct
        return acct

    def balance_of(self, address: bytes) -> int:
        acct = self.accounts.get(address)
        return acct.balance if acct is not None else 0

    def code_of(self, address: bytes) -> bytes:
        acct = self.accounts.get(address)
        return acct.code if acct is not None else b""

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WorldState):
            return NotImplemented
        mine = {a: (x.balance, x.code, x.storage, x.nonce) for a, x in self.accounts.items()}
        theirs = {a: (x.balance, x.code, x.storage, x.nonce) for a, x in other.accounts.items()}
        return mine == theirs


class DeploymentError(Exception):
    """Raised when contract creation fails (init code halted abnormally)."""


# --- state lifecycle ------------------------------------------------------

def snapshot_state(state: WorldState) -> WorldState:
    """Deep copy of the world state, reusable across many restores."""
    return WorldState({address: acct.copy() for address, acct in state.accounts.items()})


def restore_state(snapshot: WorldState) -> WorldState:
    """Fresh mutable state equal to the snapshot; the snapshot stays intact."""
    return snapshot_state(snapshot)


def contract_address(deployer: bytes, nonce: int) -> bytes:
    """Deterministic deployment address from deployer and nonce."""
    return keccak256(deployer + nonce.to_bytes(8, "big"))[12:]


# --- per-code static analysis cache ---------------------------------------

_CODE_INFO: dict[bytes, tuple[frozenset[int], dict[int, tuple[int, int]]]] = {}


def _code_info(code: bytes) -> tuple[frozenset[int], dict[int, tuple[int, int]]]:
    """(valid jump destinations, PUSH site -> (value, next pc)) for `code`."""
    cached = _CODE_INFO.get(code)
    if cached is not None:
        return cached
    jumpdests = set()
    pushes: dict[int, tuple[int, int]] = {}
    pc = 0
    n = len(code)
    while pc < n:
        byte = code[pc]
        if op.PUSH1 <= byte <= op.PUSH32:
            width = byte - op.PUSH1 + 1
            chunk = code[pc + 1:pc + 1 + width]
            # immediates truncated by end-of-code read as zero-padded
            value = int.from_bytes(chunk.ljust(width, b"\x00"), "big")
            pushes[pc] = (value, pc + 1 + width)
            pc += 1 + width
        else:
            if byte == op.JUMPDEST:
                jumpdests.add(pc)
            pc += 1
    if len(_CODE_INFO) > 4096:
        _CODE_INFO.clear()
    info = (frozenset(jumpdests), pushes)
    _CODE_INFO[code] = info
    return info


# --- interpreter ----------------------------------------------------------

class _OutOfGas(Exception):
    pass


class _InvalidOp(Exception):
    pass


def _signed(x: int) -> int:
    return x - (1 << 256) if x & SIGN_BIT else x


class _Machine:
    """One transaction's execution: frames, journal, instrumentation."""

    def __init__(self, state: WorldState, tx: Transaction, track: bytes | None) -> None:
        self.state = state
        self.tx = tx
        self.track = track
        self.journal: list[tuple] = []
        self.events: list[ExecutionEvent] = []
        self.executed: dict[bytes, set[int]] = {}
        self.edges: set[tuple[int, int]] = set()
        self.address_stack: list[bytes] = []
        self.reentries_used = 0

    # -- journaled state mutation --

    def checkpoint(self) -> int:
        return len(self.journal)

    def rollback(self, mark: int) -> None:
        accounts = self.state.accounts
        journal = self.journal
        while len(journal) > mark:
            entry = journal.pop()
            kind = entry[0]
            if kind == "storage":
                _, address, key, old = entry
                storage = accounts[address].storage
                if old:
                    storage[key] = old
                else:
                    storage.pop(key, None)
            elif kind == "balance":
                accounts[entry[1]].balance = entry[2]
            elif kind == "nonce":
                accounts[entry[1]].nonce = entry[2]
            elif kind == "code":
                accounts[entry[1]].code = entry[2]
            elif kind == "created":
                accounts.pop(entry[1], None)
            elif kind == "destroyed":
                _, address, acct = entry
                accounts[address] = acct

    def touch_account(self, address: bytes) -> Account:
        acct = self.state.accounts.get(address)
        if acct is None:
            acct = Account()
            self.state.accounts[address] = acct
            self.journal.append(("created", address))
        return acct

    def set_balance(self, address: bytes, value: int) -> None:
        acct = self.touch_account(address)
        self.journal.append(("balance", address, acct.balance))
        acct.balance = value

    def transfer(self, src: bytes, dst: bytes, value: int) -> bool:
        if value == 0:
            return True
        if self.state.balance_of(src) < value:
            return False
        self.set_balance(src, self.state.balance_of(src) - value)
        self.set_balance(dst, self.state.balance_of(dst) + value)
        return True

    def emit(self, kind: EventKind, pc: int, depth: int, data: tuple = ()) -> None:
        self.events.append(ExecutionEvent(kind, pc, depth, data))

    # -- frames --

    def run_frame(self, code: bytes, code_address: bytes, self_address: bytes,
                  caller: bytes, value: int, calldata: bytes, gas: int,
                  depth: int, static: bool) -> tuple[TxStatus, bytes, int]:
        """Execute one call frame; returns (status, return data, gas left)."""
        if depth > CALL_DEPTH_LIMIT:
            return TxStatus.DEPTH_EXCEEDED, b"", gas
        try:
            return self._dispatch_loop(code, code_address, self_address, caller,
                                       value, calldata, gas, depth, static)
        except _OutOfGas:
            return TxStatus.OUT_OF_GAS, b"", 0
        except (_InvalidOp, IndexError):
            return TxStatus.INVALID_OPCODE, b"", 0

    def _dispatch_loop(self, code: bytes, code_address: bytes, self_address: bytes,
                       caller: bytes, value: int, calldata: bytes, gas: int,
                       depth: int, static: bool) -> tuple[TxStatus, bytes, int]:
        state = self.state
        tx = self.tx
        base_gas = op.BASE_GAS
        jumpdests, pushes = _code_info(code)
        pcs = self.executed.setdefault(code_address, set())
        track_edges = code_address == self.track
        edges = self.edges

        stack: list[int] = []
        mem = bytearray()
        mem_words = 0
        returndata = b""
        swallowed: list[int] = []
        pc = 0
        prev = -1
        n = len(code)

        def touch(offset: int, size: int) -> None:
            nonlocal gas, mem_words
            if size == 0:
                return
            words = (offset + size + 31) >> 5
            if words > mem_words:
                gas -= op.GAS_MEMORY_WORD * (words - mem_words)
                if gas < 0:
                    raise _OutOfGas
                mem.extend(b"\x00" * ((words << 5) - len(mem)))
                mem_words = words

        def finish(status: TxStatus, ret: bytes) -> tuple[TxStatus, bytes, int]:
            if status is TxStatus.SUCCESS and swallowed:
                for site in swallowed:
                    self.emit(EventKind.EXCEPTION_DISORDER, site, depth)
            return status, ret, gas

        while True:
            if pc >= n:
                return finish(TxStatus.SUCCESS, b"")
            opcode = code[pc]
            pcs.add(pc)
            if track_edges:
                if prev >= 0:
                    edges.add((prev, pc))
                prev = pc
            gas -= base_gas[opcode]
            if gas < 0:
                raise _OutOfGas

            if opcode >= 0x60:
                if opcode <= 0x7F:  # PUSH1..PUSH32
                    if len(stack) >= STACK_LIMIT:
                        raise _InvalidOp
                    val, nxt = pushes[pc]
                    stack.append(val)
                    pc = nxt
                    continue
                if opcode <= 0x8F:  # DUP1..DUP16
                    if len(stack) >= STACK_LIMIT:
                        raise _InvalidOp
                    stack.append(stack[-(opcode - 0x7F)])
                elif opcode <= 0x9F:  # SWAP1..SWAP16
                    k = opcode - 0x8F
                    stack[-1], stack[-1 - k] = stack[-1 - k], stack[-1]
                elif opcode <= 0xA4:  # LOG0..LOG4
                    if static:
                        raise _InvalidOp
                    offset, size = stack.pop(), stack.pop()
                    touch(offset, size)
                    for _ in range(opcode - 0xA0):
                        stack.pop()
                elif opcode == op.RETURN:
                    offset, size = stack.pop(), stack.pop()
                    touch(offset, size)
                    return finish(TxStatus.SUCCESS, bytes(mem[offset:offset + size]))
                elif opcode == op.REVERT:
                    offset, size = stack.pop(), stack.pop()
                    touch(offset, size)
                    return TxStatus.REVERTED, bytes(mem[offset:offset + size]), gas
                elif opcode in (op.CALL, op.CALLCODE, op.DELEGATECALL, op.STATICCALL):
                    gas, returndata = self._do_call(
                        opcode, stack, mem, touch, gas, pc, depth, static,
                        code_address, self_address, caller, value, calldata,
                        swallowed)
                elif opcode == op.CREATE:
                    gas = self._do_create(stack, mem, touch, gas, pc, depth,
                                          static, self_address, swallowed)
                elif opcode == op.SELFDESTRUCT:
                    if static:
                        raise _InvalidOp
                    beneficiary = (stack.pop() & ADDRESS_MASK).to_bytes(20, "big")
                    held = state.balance_of(self_address)
                    if held > 0:
                        self.emit(EventKind.ETHER_TRANSFER, pc, depth,
                                  (self_address, beneficiary, held))
                        self.transfer(self_address, beneficiary, held)
                    acct = state.accounts.get(self_address)
                    if acct is not None:
                        self.journal.append(("destroyed", self_address, acct.copy()))
                        acct.code = b""
                        acct.storage = {}
                        acct.balance = 0
                    return finish(TxStatus.SUCCESS, b"")
                else:
                    gas = 0
                    raise _InvalidOp
                pc += 1
                continue

            # opcodes below 0x60
            if opcode == op.STOP:
                return finish(TxStatus.SUCCESS, b"")
            if opcode == op.ADD:
                stack.append((stack.pop() + stack.pop()) & UINT256_MASK)
            elif opcode == op.MUL:
                stack.append((stack.pop() * stack.pop()) & UINT256_MASK)
            elif opcode == op.SUB:
                a, b = stack.pop(), stack.pop()
                stack.append((a - b) & UINT256_MASK)
            elif opcode == op.DIV:
                a, b = stack.pop(), stack.pop()
                stack.append(a // b if b else 0)
            elif opcode == op.SDIV:
                a, b = _signed(stack.pop()), _signed(stack.pop())
                if b == 0:
                    stack.append(0)
                else:
                    q = abs(a) // abs(b)
                    stack.append((-q if (a < 0) != (b < 0) else q) & UINT256_MASK)
            elif opcode == op.MOD:
                a, b = stack.pop(), stack.pop()
                stack.append(a % b if b else 0)
            elif opcode == op.SMOD:
                a, b = _signed(stack.pop()), _signed(stack.pop())
                if b == 0:
                    stack.append(0)
                else:
                    r = abs(a) % abs(b)
                    stack.append((-r if a < 0 else r) & UINT256_MASK)
            elif opcode == op.ADDMOD:
                a, b, m = stack.pop(), stack.pop(), stack.pop()
                stack.append((a + b) % m if m else 0)
            elif opcode == op.MULMOD:
                a, b, m = stack.pop(), stack.pop(), stack.pop()
                stack.append((a * b) % m if m else 0)
            elif opcode == op.EXP:
                a, b = stack.pop(), stack.pop()
                stack.append(pow(a, b, 1 << 256))
            elif opcode == op.SIGNEXTEND:
                b, x = stack.pop(), stack.pop()
                if b > 31:
                    stack.append(x)
                else:
                    bit = 8 * b + 7
                    mask = (1 << (bit + 1)) - 1
                    if x & (1 << bit):
                        stack.append((x | ~mask) & UINT256_MASK)
                    else:
                        stack.append(x & mask)
            elif opcode == op.LT:
                a, b = stack.pop(), stack.pop()
                stack.append(1 if a < b else 0)
            elif opcode == op.GT:
                a, b = stack.pop(), stack.pop()
                stack.append(1 if a > b else 0)
            elif opcode == op.SLT:
                a, b = _signed(stack.pop()), _signed(stack.pop())
                stack.append(1 if a < b else 0)
            elif opcode == op.SGT:
                a, b = _signed(stack.pop()), _signed(stack.pop())
                stack.append(1 if a > b else 0)
            elif opcode == op.EQ:
                stack.append(1 if stack.pop() == stack.pop() else 0)
            elif opcode == op.ISZERO:
                stack.append(1 if stack.pop() == 0 else 0)
            elif opcode == op.AND:
                stack.append(stack.pop() & stack.pop())
            elif opcode == op.OR:
                stack.append(stack.pop() | stack.pop())
            elif opcode == op.XOR:
                stack.append(stack.pop() ^ stack.pop())
            elif opcode == op.NOT:
                stack.append(stack.pop() ^ UINT256_MASK)
            elif opcode == op.BYTE:
                i, x = stack.pop(), stack.pop()
                stack.append((x >> (8 * (31 - i))) & 0xFF if i < 32 else 0)
            elif opcode == op.SHL:
                shift, v = stack.pop(), stack.pop()
                stack.append((v << shift) & UINT256_MASK if shift < 256 else 0)
            elif opcode == op.SHR:
                shift, v = stack.pop(), stack.pop()
                stack.append(v >> shift if shift < 256 else 0)
            elif opcode == op.SAR:
                shift, v = stack.pop(), _signed(stack.pop())
                if shift > 255:
                    stack.append(0 if v >= 0 else UINT256_MASK)
                else:
                    stack.append((v >> shift) & UINT256_MASK)
            elif opcode == op.SHA3:
                offset, size = stack.pop(), stack.pop()
                gas -= op.GAS_SHA3_WORD * ((size + 31) >> 5)
                if gas < 0:
                    raise _OutOfGas
                touch(offset, size)
                stack.append(int.from_bytes(keccak256(bytes(mem[offset:offset + size])), "big"))
            elif opcode == op.ADDRESS:
                stack.append(int.from_bytes(self_address, "big"))
            elif opcode == op.BALANCE:
                stack.append(state.balance_of((stack.pop() & ADDRESS_MASK).to_bytes(20, "big")))
            elif opcode == op.ORIGIN:
                stack.append(int.from_bytes(tx.sender, "big"))
            elif opcode == op.CALLER:
                stack.append(int.from_bytes(caller, "big"))
            elif opcode == op.CALLVALUE:
                stack.append(value)
            elif opcode == op.CALLDATALOAD:
                offset = stack.pop()
                if offset >= len(calldata):
                    stack.append(0)
                else:
                    stack.append(int.from_bytes(calldata[offset:offset + 32].ljust(32, b"\x00"), "big"))
            elif opcode == op.CALLDATASIZE:
                stack.append(len(calldata))
            elif opcode == op.CALLDATACOPY:
                dst, src, size = stack.pop(), stack.pop(), stack.pop()
                touch(dst, size)
                if size:
                    chunk = calldata[src:src + size] if src < len(calldata) else b""
                    mem[dst:dst + size] = chunk.ljust(size, b"\x00")
            elif opcode == op.CODESIZE:
                stack.append(n)
            elif opcode == op.CODECOPY:
                dst, src, size = stack.pop(), stack.pop(), stack.pop()
                touch(dst, size)
                if size:
                    chunk = code[src:src + size] if src < n else b""
                    mem[dst:dst + size] = chunk.ljust(size, b"\x00")
            elif opcode == op.RETURNDATASIZE:
                stack.append(len(returndata))
            elif opcode == op.RETURNDATACOPY:
                dst, src, size = stack.pop(), stack.pop(), stack.pop()
                if src + size > len(returndata):
                    raise _InvalidOp
                touch(dst, size)
                if size:
                    mem[dst:dst + size] = returndata[src:src + size]
            elif opcode == op.COINBASE:
                stack.append(int.from_bytes(COINBASE_ADDRESS, "big"))
            elif opcode == op.TIMESTAMP:
                self.emit(EventKind.TIMESTAMP, pc, depth)
                stack.append(tx.block.timestamp)
            elif opcode == op.NUMBER:
                self.emit(EventKind.BLOCK_NUMBER, pc, depth)
                stack.append(tx.block.number)
            elif opcode == op.DIFFICULTY:
                stack.append(0)
            elif opcode == op.GASLIMIT:
                stack.append(tx.block.gas_limit)
            elif opcode == op.POP:
                stack.pop()
            elif opcode == op.MLOAD:
                offset = stack.pop()
                touch(offset, 32)
                stack.append(int.from_bytes(mem[offset:offset + 32], "big"))
            elif opcode == op.MSTORE:
                offset, val = stack.pop(), stack.pop()
                touch(offset, 32)
                mem[offset:offset + 32] = val.to_bytes(32, "big")
            elif opcode == op.MSTORE8:
                offset, val = stack.pop(), stack.pop()
                touch(offset, 1)
                mem[offset] = val & 0xFF
            elif opcode == op.SLOAD:
                key = stack.pop()
                acct = state.accounts.get(self_address)
                stack.append(acct.storage.get(key, 0) if acct is not None else 0)
            elif opcode == op.SSTORE:
                if static:
                    raise _InvalidOp
                key, val = stack.pop(), stack.pop()
                acct = self.touch_account(self_address)
                old = acct.storage.get(key, 0)
                gas -= op.GAS_SSTORE_FRESH if (old == 0 and val != 0) else op.GAS_SSTORE_UPDATE
                if gas < 0:
                    raise _OutOfGas
                if val != old:
                    self.journal.append(("storage", self_address, key, old))
                    if val:
                        acct.storage[key] = val
                    else:
                        del acct.storage[key]
                    self.emit(EventKind.STORAGE_CHANGED, pc, depth,
                              (self_address, key, old, val))
            elif opcode == op.JUMP:
                dest = stack.pop()
                if dest not in jumpdests:
                    raise _InvalidOp
                pc = dest
                continue
            elif opcode == op.JUMPI:
                dest, cond = stack.pop(), stack.pop()
                if cond:
                    if dest not in jumpdests:
                        raise _InvalidOp
                    pc = dest
                    continue
            elif opcode == op.PC:
                stack.append(pc)
            elif opcode == op.MSIZE:
                stack.append(mem_words << 5)
            elif opcode == op.GAS:
                stack.append(gas)
            elif opcode == op.JUMPDEST:
                pass
            else:
                gas = 0
                raise _InvalidOp
            pc += 1

    # -- call-family helper --

    def _do_call(self, opcode: int, stack: list[int], mem: bytearray, touch,
                 gas: int, pc: int, depth: int, static: bool,
                 code_address: bytes, self_address: bytes, caller: bytes,
                 value: int, calldata: bytes,
                 swallowed: list[int]) -> tuple[int, bytes]:
        """Shared handler for CALL/CALLCODE/DELEGATECALL/STATICCALL.

        Returns the caller's remaining gas and its new return-data buffer;
        pushes the success flag.
        """
        state = self.state
        has_value_slot = opcode in (op.CALL, op.CALLCODE)
        gas_req = stack.pop()
        target = (stack.pop() & ADDRESS_MASK).to_bytes(20, "big")
        call_value = stack.pop() if has_value_slot else 0
        in_off, in_size = stack.pop(), stack.pop()
        out_off, out_size = stack.pop(), stack.pop()
        if static and opcode == op.CALL and call_value > 0:
            raise _InvalidOp
        touch(in_off, in_size)
        touch(out_off, out_size)
        args = bytes(mem[in_off:in_off + in_size])

        if has_value_slot and call_value > 0:
            gas -= op.GAS_VALUE_SURCHARGE
            if gas < 0:
                raise _OutOfGas
        forwarded = gas_req if gas_req < gas else gas
        gas -= forwarded
        stipend = op.GAS_STIPEND if (has_value_slot and call_value > 0) else 0
        callee_gas = forwarded + stipend
        is_send = opcode == op.CALL and call_value > 0 and callee_gas == op.GAS_STIPEND

        # a delegated call whose target is spelled out in the transaction
        # input is attacker-controlled dispatch
        if opcode in (op.DELEGATECALL, op.CALLCODE) and target in self.tx.calldata:
            self.emit(EventKind.DELEGATE, pc, depth, (target,))

        if depth + 1 > CALL_DEPTH_LIMIT:
            stack.append(0)
            return gas + callee_gas, b""

        mark = self.checkpoint()
        if opcode == op.CALL and call_value > 0:
            if state.balance_of(self_address) < call_value:
                stack.append(0)
                return gas + forwarded, b""
            self.emit(EventKind.ETHER_TRANSFER, pc, depth,
                      (self_address, target, call_value))
            self.transfer(self_address, target, call_value)
        elif opcode == op.CALLCODE and call_value > 0:
            # value stays within the account; still an observable transfer op
            if state.balance_of(self_address) < call_value:
                stack.append(0)
                return gas + forwarded, b""
            self.emit(EventKind.ETHER_TRANSFER, pc, depth,
                      (self_address, self_address, call_value))
        if is_send:
            self.emit(EventKind.SEND_OP, pc, depth, (target,))

        if opcode == op.CALL:
            child_self = target
            child_caller = self_address
            child_value = call_value
            child_static = static
        elif opcode == op.CALLCODE:
            child_self = self_address
            child_caller = self_address
            child_value = call_value
            child_static = static
        elif opcode == op.DELEGATECALL:
            child_self = self_address
            child_caller = caller
            child_value = value
            child_static = static
        else:  # STATICCALL
            child_self = target
            child_caller = self_address
            child_value = 0
            child_static = True

        if opcode in (op.CALL, op.STATICCALL) and target == AGENT_ADDRESS:
            if opcode == op.CALL and target in self.address_stack:
                self.emit(EventKind.REENTRANCY, 0, depth + 1, (target,))
            status, ret, child_left = self._run_agent(
                callee_gas, depth + 1, self_address, calldata, child_static)
        else:
            child_code = state.code_of(target)
            if not child_code:
                status, ret, child_left = TxStatus.SUCCESS, b"", callee_gas
            else:
                if opcode == op.CALL and child_self in self.address_stack:
                    self.emit(EventKind.REENTRANCY, 0, depth + 1, (child_self,))
                self.address_stack.append(child_self)
                try:
                    status, ret, child_left = self.run_frame(
                        child_code, target, child_self, child_caller,
                        child_value, args, callee_gas, depth + 1, child_static)
                finally:
                    self.address_stack.pop()

        gas += child_left
        if status is TxStatus.SUCCESS:
            stack.append(1)
            if out_size:
                chunk = ret[:out_size]
                mem[out_off:out_off + len(chunk)] = chunk
            return gas, ret
        self.rollback(mark)
        swallowed.append(pc)
        if is_send and status is TxStatus.OUT_OF_GAS:
            self.emit(EventKind.GASLESS_SEND, pc, depth, (target,))
        stack.append(0)
        return gas, ret if status is TxStatus.REVERTED else b""

    def _run_agent(self, gas: int, depth: int, caller_address: bytes,
                   caller_calldata: bytes, static: bool) -> tuple[TxStatus, bytes, int]:
        """The agent's virtual fallback: charge the logging fee, then act."""
        policy = self.tx.agent_policy
        if policy.kind is PolicyKind.THROWER:
            # throws before doing any work
            if gas < 3:
                return TxStatus.OUT_OF_GAS, b"", 0
            return TxStatus.REVERTED, b"", gas - 3
        gas -= AGENT_CALL_GAS
        if gas < 0:
            return TxStatus.OUT_OF_GAS, b"", 0
        if (policy.kind is PolicyKind.REENTRANT and not static
                and self.reentries_used < policy.max_reentries
                and self.state.code_of(caller_address)):
            self.reentries_used += 1
            gas -= op.GAS_CALL_BASE
            if gas < 0:
                return TxStatus.OUT_OF_GAS, b"", 0
            self.address_stack.append(AGENT_ADDRESS)
            if caller_address in self.address_stack:
                self.emit(EventKind.REENTRANCY, 0, depth + 1, (caller_address,))
            self.address_stack.append(caller_address)
            mark = self.checkpoint()
            try:
                status, _, child_left = self.run_frame(
                    self.state.code_of(caller_address), caller_address,
                    caller_address, AGENT_ADDRESS, 0, caller_calldata,
                    gas, depth + 1, static)
            finally:
                self.address_stack.pop()
                self.address_stack.pop()
            if status is not TxStatus.SUCCESS:
                self.rollback(mark)
            gas = child_left
        return TxStatus.SUCCESS, b"", gas

    def _do_create(self, stack: list[int], mem: bytearray, touch, gas: int,
                   pc: int, depth: int, static: bool, self_address: bytes,
                   swallowed: list[int]) -> int:
        if static:
            raise _InvalidOp
        endowment, offset, size = stack.pop(), stack.pop(), stack.pop()
        touch(offset, size)
        init_code = bytes(mem[offset:offset + size])
        creator = self.touch_account(self_address)
        self.journal.append(("nonce", self_address, creator.nonce))
        new_address = contract_address(self_address, creator.nonce)
        creator.nonce += 1
        if depth + 1 > CALL_DEPTH_LIMIT or self.state.code_of(new_address):
            stack.append(0)
            return gas
        if endowment and self.state.balance_of(self_address) < endowment:
            stack.append(0)
            return gas
        mark = self.checkpoint()
        self.touch_account(new_address)
        self.transfer(self_address, new_address, endowment)
        forwarded = gas
        gas = 0
        self.address_stack.append(new_address)
        try:
            status, ret, child_left = self.run_frame(
                init_code, new_address, new_address, self_address, endowment,
                b"", forwarded, depth + 1, False)
        finally:
            self.address_stack.pop()
        gas += child_left
        if status is TxStatus.SUCCESS:
            acct = self.state.accounts[new_address]
            self.journal.append(("code", new_address, acct.code))
            acct.code = ret
            stack.append(int.from_bytes(new_address, "big"))
        else:
            self.rollback(mark)
            swallowed.append(pc)
            stack.append(0)
        return gas


# --- public operations ----------------------------------------------------

def execute_transaction(state: WorldState, tx: Transaction,
                        persist: bool = True) -> ExecutionTrace:
    """Run one transaction against `state` and return the instrumented trace.

    State changes are applied only when the transaction succeeds; pass
    `persist=False` to roll back unconditionally (the trace still reflects
    the run). Raises ValueError when the sender cannot cover `tx.value`.
    """
    if tx.value < 0:
        raise ValueError("negative transaction value")
    if state.balance_of(tx.sender) < tx.value:
        raise ValueError("sender balance below transaction value")

    machine = _Machine(state, tx, track=tx.target)
    mark = machine.checkpoint()
    if tx.value:
        machine.transfer(tx.sender, tx.target, tx.value)
    code = state.code_of(tx.target)
    if code:
        machine.address_stack.append(tx.target)
        status, ret, gas_left = machine.run_frame(
            code, tx.target, tx.target, tx.sender, tx.value, tx.calldata,
            tx.gas_limit, 1, False)
        machine.address_stack.pop()
    else:
        status, ret, gas_left = TxStatus.SUCCESS, b"", tx.gas_limit

    storage_diff: list[tuple[bytes, int, int, int]] = []
    if status is TxStatus.SUCCESS:
        first_old: dict[tuple[bytes, int], int] = {}
        for entry in machine.journal[mark:]:
            if entry[0] == "storage":
                first_old.setdefault((entry[1], entry[2]), entry[3])
        for (address, key), old in first_old.items():
            acct = state.accounts.get(address)
            new = acct.storage.get(key, 0) if acct is not None else 0
            if new != old:
                storage_diff.append((address, key, old, new))
        if not persist:
            machine.rollback(mark)
    else:
        machine.rollback(mark)

    return ExecutionTrace(
        status=status,
        gas_used=tx.gas_limit - gas_left,
        executed_pcs=machine.executed,
        dynamic_edges=machine.edges,
        events=machine.events,
        storage_diff=storage_diff,
        return_data=ret,
    )


def deploy_contract(state: WorldState, code: bytes, mode: str = "runtime",
                    constructor_args: bytes = b"", endowment: int = 0,
                    deployer: bytes = DEPLOYER_ADDRESS,
                    gas_limit: int = 5_000_000) -> bytes:
    """Install a contract and return its address.

    `mode` is "runtime" (bytes become the account code verbatim) or
    "creation" (bytes plus appended constructor args run as init code and the
    returned buffer becomes the account code). The address derives from the
    deployer's nonce. Raises DeploymentError when init code halts abnormally.
    """
    if mode not in ("runtime", "creation"):
        raise ValueError(f"unknown deployment mode {mode!r}")
    if endowment and state.balance_of(deployer) < endowment:
        raise ValueError("deployer balance below endowment")

    deployer_acct = state.account(deployer)
    address = contract_address(deployer, deployer_acct.nonce)
    deployer_acct.nonce += 1

    if mode == "runtime":
        acct = state.account(address)
        acct.code = code
        if endowment:
            state.account(deployer).balance -= endowment
            acct.balance = endowment
        return address

    tx = Transaction(target=address)
    machine = _Machine(state, tx, track=None)
    mark = machine.checkpoint()
    machine.touch_account(address)
    if endowment:
        machine.transfer(deployer, address, endowment)
    machine.address_stack.append(address)
    status, runtime, _ = machine.run_frame(
        code + constructor_args, address, address, deployer, endowment, b"",
        gas_limit, 1, False)
    machine.address_stack.pop()
    if status is not TxStatus.SUCCESS:
        machine.rollback(mark)
        state.account(deployer).nonce -= 1
        raise DeploymentError(f"init code halted with {status.value}")
    state.account(address).code = runtime
    return address
