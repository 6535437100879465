"""Keccak-256 as used by EVM contracts (selectors, SHA3 opcode, address derivation).

This is the original Keccak submission with multi-rate padding (0x01 domain
byte), not the later standardized variant shipped in hashlib, which pads with
0x06 and therefore produces different digests. No package on the index
provides it, so the permutation lives here. Known-answer vectors are pinned in
the test suite against an independently written reference.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1

# Precomputed iota round constants for keccak-f[1600] (24 rounds).
_ROUND_CONSTANTS = (
    0x0000000000000001, 0x0000000000008082, 0x800000000000808A, 0x8000000080008000,
    0x000000000000808B, 0x0000000080000001, 0x8000000080008081, 0x8000000000008009,
    0x000000000000008A, 0x0000000000000088, 0x0000000080008009, 0x000000008000000A,
    0x000000008000808B, 0x800000000000008B, 0x8000000000008089, 0x8000000000008003,
    0x8000000000008002, 0x8000000000000080, 0x000000000000800A, 0x800000008000000A,
    0x8000000080008081, 0x8000000000008080, 0x0000000080000001, 0x8000000080008008,
)

# Rho rotation offsets, flat layout index = x + 5*y.
_ROTATIONS = (
    0, 1, 62, 28, 27,
    36, 44, 6, 55, 20,
    3, 10, 43, 25, 39,
    41, 45, 15, 21, 8,
    18, 2, 61, 56, 14,
)

_RATE = 136  # bytes; capacity 512 bits fixes the 256-bit security level


def _keccak_f1600(state: list[int]) -> None:
    """Apply the 24-round permutation in place. Lanes are 64-bit ints, index x + 5*y."""
    for rc in _ROUND_CONSTANTS:
        # theta
        c = [state[x] ^ state[x + 5] ^ state[x + 10] ^ state[x + 15] ^ state[x + 20]
             for x in range(5)]
        for x in range(5):
            cx = c[(x + 1) % 5]
            d = c[(x - 1) % 5] ^ (((cx << 1) | (cx >> 63)) & _MASK)
            for y in range(0, 25, 5):
                state[x + y] ^= d
        # rho and pi combined: B[y, 2x+3y] = rotl(A[x, y])
        b = [0] * 25
        for x in range(5):
            for y5 in range(0, 25, 5):
                lane = state[x + y5]
                n = _ROTATIONS[x + y5]
                b[(y5 // 5) + 5 * ((2 * x + 3 * (y5 // 5)) % 5)] = (
                    ((lane << n) | (lane >> (64 - n))) & _MASK if n else lane
                )
        # chi
        for y5 in range(0, 25, 5):
            t0, t1, t2, t3, t4 = b[y5:y5 + 5]
            state[y5] = t0 ^ (~t1 & t2) & _MASK
            state[y5 + 1] = t1 ^ (~t2 & t3) & _MASK
            state[y5 + 2] = t2 ^ (~t3 & t4) & _MASK
            state[y5 + 3] = t3 ^ (~t4 & t0) & _MASK
            state[y5 + 4] = t4 ^ (~t0 & t1) & _MASK
        # iota
        state[0] ^= rc


def keccak256(data: bytes) -> bytes:
    """Return the 32-byte Keccak-256 digest of `data`."""
    state = [0] * 25
    # pad10*1 with the 0x01 domain byte, then absorb rate-sized blocks
    padded = bytearray(data)
    pad_len = _RATE - (len(padded) % _RATE)
    padded.extend(b"\x00" * pad_len)
    padded[len(data)] ^= 0x01
    padded[-1] ^= 0x80
    for block_start in range(0, len(padded), _RATE):
        block = padded[block_start:block_start + _RATE]
        for i in range(17):
            state[i] ^= int.from_bytes(block[8 * i:8 * i + 8], "little")
        _keccak_f1600(state)
    return b"".join(state[i].to_bytes(8, "little") for i in range(4))
