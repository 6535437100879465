"""Istanbul-era opcode table and the simplified gas schedule.

The schedule keeps the magnitudes that matter for bug behavior (storage writes
dwarf the 2300 call stipend, value calls pay a surcharge) and flattens
everything else: base ops cost 3 to 10, memory grows linearly at 3 per word,
no refunds, no cold/warm distinction, no 1/64 forwarding rule.
"""

from __future__ import annotations

# --- opcode bytes ---------------------------------------------------------

STOP = 0x00
ADD = 0x01
MUL = 0x02
SUB = 0x03
DIV = 0x04
SDIV = 0x05
MOD = 0x06
SMOD = 0x07
ADDMOD = 0x08
MULMOD = 0x09
EXP = 0x0A
SIGNEXTEND = 0x0B
LT = 0x10
GT = 0x11
SLT = 0x12
SGT = 0x13
EQ = 0x14
ISZERO = 0x15
AND = 0x16
OR = 0x17
XOR = 0x18
NOT = 0x19
BYTE = 0x1A
SHL = 0x1B
SHR = 0x1C
SAR = 0x1D
SHA3 = 0x20
ADDRESS = 0x30
BALANCE = 0x31
ORIGIN = 0x32
CALLER = 0x33
CALLVALUE = 0x34
CALLDATALOAD = 0x35
CALLDATASIZE = 0x36
CALLDATACOPY = 0x37
CODESIZE = 0x38
CODECOPY = 0x39
RETURNDATASIZE = 0x3D
RETURNDATACOPY = 0x3E
COINBASE = 0x41
TIMESTAMP = 0x42
NUMBER = 0x43
DIFFICULTY = 0x44
GASLIMIT = 0x45
POP = 0x50
MLOAD = 0x51
MSTORE = 0x52
MSTORE8 = 0x53
SLOAD = 0x54
SSTORE = 0x55
JUMP = 0x56
JUMPI = 0x57
PC = 0x58
MSIZE = 0x59
GAS = 0x5A
JUMPDEST = 0x5B
PUSH1 = 0x60
PUSH32 = 0x7F
DUP1 = 0x80
DUP16 = 0x8F
SWAP1 = 0x90
SWAP16 = 0x9F
LOG0 = 0xA0
LOG1 = 0xA1
LOG2 = 0xA2
LOG3 = 0xA3
LOG4 = 0xA4
CREATE = 0xF0
CALL = 0xF1
CALLCODE = 0xF2
RETURN = 0xF3
DELEGATECALL = 0xF4
STATICCALL = 0xFA
REVERT = 0xFD
INVALID = 0xFE
SELFDESTRUCT = 0xFF

# --- mnemonic table -------------------------------------------------------

MNEMONICS: dict[int, str] = {
    STOP: "STOP", ADD: "ADD", MUL: "MUL", SUB: "SUB", DIV: "DIV", SDIV: "SDIV",
    MOD: "MOD", SMOD: "SMOD", ADDMOD: "ADDMOD", MULMOD: "MULMOD", EXP: "EXP",
    SIGNEXTEND: "SIGNEXTEND", LT: "LT", GT: "GT", SLT: "SLT", SGT: "SGT",
    EQ: "EQ", ISZERO: "ISZERO", AND: "AND", OR: "OR", XOR: "XOR", NOT: "NOT",
    BYTE: "BYTE", SHL: "SHL", SHR: "SHR", SAR: "SAR", SHA3: "SHA3",
    ADDRESS: "ADDRESS", BALANCE: "BALANCE", ORIGIN: "ORIGIN", CALLER: "CALLER",
    CALLVALUE: "CALLVALUE", CALLDATALOAD: "CALLDATALOAD",
    CALLDATASIZE: "CALLDATASIZE", CALLDATACOPY: "CALLDATACOPY",
    CODESIZE: "CODESIZE", CODECOPY: "CODECOPY",
    RETURNDATASIZE: "RETURNDATASIZE", RETURNDATACOPY: "RETURNDATACOPY",
    COINBASE: "COINBASE", TIMESTAMP: "TIMESTAMP", NUMBER: "NUMBER",
    DIFFICULTY: "DIFFICULTY", GASLIMIT: "GASLIMIT", POP: "POP",
    MLOAD: "MLOAD", MSTORE: "MSTORE", MSTORE8: "MSTORE8", SLOAD: "SLOAD",
    SSTORE: "SSTORE", JUMP: "JUMP", JUMPI: "JUMPI", PC: "PC", MSIZE: "MSIZE",
    GAS: "GAS", JUMPDEST: "JUMPDEST", CREATE: "CREATE", CALL: "CALL",
    CALLCODE: "CALLCODE", RETURN: "RETURN", DELEGATECALL: "DELEGATECALL",
    STATICCALL: "STATICCALL", REVERT: "REVERT", INVALID: "INVALID",
    SELFDESTRUCT: "SELFDESTRUCT",
}
for _i in range(32):
    MNEMONICS[PUSH1 + _i] = f"PUSH{_i + 1}"
for _i in range(16):
    MNEMONICS[DUP1 + _i] = f"DUP{_i + 1}"
    MNEMONICS[SWAP1 + _i] = f"SWAP{_i + 1}"
for _i in range(5):
    MNEMONICS[LOG0 + _i] = f"LOG{_i}"

OPCODES: dict[str, int] = {name: byte for byte, name in MNEMONICS.items()}


def is_push(op: int) -> bool:
    return PUSH1 <= op <= PUSH32


def push_size(op: int) -> int:
    """Immediate width in bytes of a PUSH opcode, 0 for anything else."""
    return op - PUSH1 + 1 if is_push(op) else 0


# --- gas schedule ---------------------------------------------------------

GAS_STIPEND = 2300
GAS_VALUE_SURCHARGE = 9000
GAS_MEMORY_WORD = 3
GAS_SHA3_WORD = 6
GAS_SSTORE_FRESH = 20000
GAS_SSTORE_UPDATE = 5000
GAS_CALL_BASE = 700

_BASE_GAS: dict[int, int] = {
    STOP: 0, RETURN: 0, REVERT: 0, JUMPDEST: 1,
    POP: 2, PC: 2, MSIZE: 2, GAS: 2,
    MUL: 5, DIV: 5, SDIV: 5, MOD: 5, SMOD: 5, SIGNEXTEND: 5,
    ADDMOD: 8, MULMOD: 8, EXP: 10,
    BALANCE: 10,
    SHA3: 30,
    SLOAD: 200,
    SSTORE: 0,          # charged dynamically (fresh vs update)
    JUMP: 8, JUMPI: 10,
    LOG0: 8, LOG1: 8, LOG2: 8, LOG3: 8, LOG4: 8,
    CREATE: 32000,
    CALL: GAS_CALL_BASE, CALLCODE: GAS_CALL_BASE,
    DELEGATECALL: GAS_CALL_BASE, STATICCALL: GAS_CALL_BASE,
    SELFDESTRUCT: 5000,
    INVALID: 0,         # consumes all remaining gas in the interpreter
}

BASE_GAS: list[int] = [3] * 256
for _op, _cost in _BASE_GAS.items():
    BASE_GAS[_op] = _cost

# --- classification used by the CFG and the fuzzer ------------------------

# instructions that end a basic block unconditionally
HALTING = frozenset({STOP, RETURN, REVERT, INVALID, SELFDESTRUCT})

# the four instruction kinds treated as critical targets for directed fuzzing
CRITICAL = frozenset({CALL, CALLCODE, DELEGATECALL, SELFDESTRUCT})
