"""Disassembly, block recovery, edge resolution, and distance maps."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dogefuzz import opcodes as op
from dogefuzz.asm import Assembler
from dogefuzz.cfg import (
    Terminator,
    augment_edges,
    build_cfg,
    count_critical,
    critical_sites,
    disassemble,
    distance_map,
    reassemble,
    to_dot,
)

from cfg_oracle import distance_fixpoint, random_block_graph
from evm_utils import code


P1 = op.PUSH1


# --- disassembly ----------------------------------------------------------

def test_disassemble_simple_sequence() -> None:
    instructions = disassemble(code(P1, 7, op.POP, op.STOP))
    assert [(i.pc, i.mnemonic) for i in instructions] == [
        (0, "PUSH1"), (2, "POP"), (3, "STOP")]
    assert instructions[0].immediate == b"\x07"
    assert instructions[0].push_value == 7


def test_truncated_push_keeps_partial_bytes_and_pads_value() -> None:
    instructions = disassemble(code(op.PUSH1 + 3, 0xAB, 0xCD))
    (ins,) = instructions
    assert ins.truncated
    assert ins.immediate == b"\xab\xcd"
    assert ins.push_value == 0xABCD0000
    assert ins.size == 3


def test_unknown_byte_gets_placeholder_mnemonic() -> None:
    (ins,) = disassemble(b"\x0c")
    assert ins.mnemonic == "UNKNOWN_0x0c"
    assert ins.immediate is None


@settings(max_examples=200, deadline=None)
@given(st.binary(min_size=0, max_size=300))
def test_disassembly_round_trips(raw: bytes) -> None:
    instructions = disassemble(raw)
    assert reassemble(instructions) == raw
    pcs = [i.pc for i in instructions]
    assert pcs == sorted(set(pcs))
    if instructions:
        last = instructions[-1]
        assert last.pc + last.size == len(raw)


# --- block partition ------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.binary(min_size=0, max_size=300))
def test_blocks_tile_the_instruction_stream(raw: bytes) -> None:
    cfg = build_cfg(raw)
    flattened = [ins for block in cfg.blocks for ins in block.instructions]
    assert flattened == disassemble(raw)
    for block in cfg.blocks:
        assert block.instructions, "blocks are never empty"
        assert block.start == block.instructions[0].pc
    for block in cfg.blocks:
        for ins in block.instructions[:-1]:
            assert ins.opcode != op.JUMPDEST or ins.pc == block.start
    for src, dst in cfg.edges:
        assert src in cfg.block_starts and dst in cfg.block_starts


def test_leaders_at_jumpdest_and_after_terminators() -> None:
    cfg = build_cfg(code(P1, 1, op.POP, op.STOP, op.JUMPDEST, op.STOP,
                         0x0C, P1, 2))
    assert [b.start for b in cfg.blocks] == [0, 4, 6, 7]
    assert [b.terminator for b in cfg.blocks] == [
        Terminator.HALT, Terminator.HALT, Terminator.HALT, Terminator.HALT]


def test_fallthrough_into_jumpdest_block() -> None:
    cfg = build_cfg(code(P1, 9, op.POP, op.JUMPDEST, op.STOP))
    assert [b.terminator for b in cfg.blocks] == [
        Terminator.FALLTHROUGH, Terminator.HALT]
    assert cfg.edges == {(0, 3)}


# --- jump resolution ------------------------------------------------------

def test_static_jump_resolves_to_edge() -> None:
    a = Assembler()
    a.push_label("done").op("JUMP")
    a.op("STOP")
    a.dest("done").op("STOP")
    cfg = build_cfg(a.assemble())
    starts = [b.start for b in cfg.blocks]
    assert cfg.blocks[0].terminator is Terminator.JUMP
    assert cfg.edges == {(0, starts[2])}
    assert not cfg.unresolved


def test_jumpi_gets_both_edges() -> None:
    a = Assembler()
    a.op("CALLVALUE").push_label("yes").op("JUMPI")
    a.op("STOP")
    a.dest("yes").op("STOP")
    cfg = build_cfg(a.assemble())
    fallthrough = cfg.blocks[1].start
    taken = cfg.blocks[2].start
    assert cfg.blocks[0].terminator is Terminator.JUMPI
    assert cfg.edges == {(0, fallthrough), (0, taken)}


def test_resolved_but_invalid_target_has_no_edge() -> None:
    cfg = build_cfg(code(P1, 3, op.JUMP, op.STOP))
    assert cfg.blocks[0].terminator is Terminator.JUMP
    assert cfg.edges == set()
    assert not cfg.unresolved


def test_dynamic_target_is_unresolved() -> None:
    cfg = build_cfg(code(P1, 0, op.CALLDATALOAD, op.JUMP, op.JUMPDEST, op.STOP))
    assert cfg.blocks[0].terminator is Terminator.UNRESOLVED
    assert cfg.unresolved == {0}
    assert cfg.edges == set()


def test_unresolved_jumpi_keeps_fallthrough() -> None:
    cfg = build_cfg(code(P1, 0, op.CALLDATALOAD, op.DUP1, op.JUMPI,
                         op.STOP, op.JUMPDEST, op.STOP))
    assert cfg.blocks[0].terminator is Terminator.JUMPI
    assert 0 in cfg.unresolved
    assert (0, cfg.blocks[1].start) in cfg.edges


def test_constants_survive_dup_and_swap() -> None:
    a = Assembler()
    a.push(0).push_label("out").op("SWAP1", "POP", "JUMP")
    a.dest("out").op("STOP")
    cfg = build_cfg(a.assemble())
    assert cfg.edges == {(0, cfg.blocks[1].start)}

    b = Assembler()
    b.push_label("out").op("DUP1", "POP", "JUMP")
    b.dest("out").op("STOP")
    cfg2 = build_cfg(b.assemble())
    assert cfg2.edges == {(0, cfg2.blocks[1].start)}


def test_simulation_depth_is_bounded() -> None:
    a = Assembler()
    a.push_label("out")
    for _ in range(35):
        a.push(0)
    for _ in range(35):
        a.op("POP")
    a.op("JUMP")
    a.dest("out").op("STOP")
    cfg = build_cfg(a.assemble())
    # the target constant fell out of the bounded window
    assert cfg.blocks[0].terminator is Terminator.UNRESOLVED
    assert cfg.edges == set()


# --- critical sites -------------------------------------------------------

def _dispatcher_with_call() -> bytes:
    a = Assembler()
    a.push(0).op("CALLDATALOAD").push_label("go").op("JUMPI")
    a.push(0).push(0).op("REVERT")
    a.dest("go")
    for _ in range(7):
        a.push(0)
    a.op("CALL", "POP", "STOP")
    return a.assemble()


def test_critical_sites_ascending_with_counts() -> None:
    a = Assembler()
    for _ in range(7):
        a.push(0)
    a.op("CALL", "POP")
    for _ in range(6):
        a.push(0)
    a.op("DELEGATECALL", "POP")
    a.push(0).op("SELFDESTRUCT")
    cfg = build_cfg(a.assemble())
    sites = critical_sites(cfg)
    assert sites == sorted(sites)
    assert len(sites) == 3
    assert count_critical(cfg) == {"CALL": 1, "DELEGATECALL": 1, "SELFDESTRUCT": 1}


def test_no_critical_sites_yields_empty_dict() -> None:
    cfg = build_cfg(code(P1, 1, op.POP, op.STOP))
    assert critical_sites(cfg) == []
    assert count_critical(cfg) == {}


# --- distances ------------------------------------------------------------

def test_distance_map_block_granularity() -> None:
    cfg = build_cfg(_dispatcher_with_call())
    sites = critical_sites(cfg)
    assert len(sites) == 1
    distances = distance_map(cfg, sites)
    call_block = cfg.block_at(sites[0])
    # all pcs of the site block score zero, including ones before the site
    assert all(distances[pc] == 0 for pc in call_block.pcs)
    assert distances[0] == 1
    # the revert block cannot reach the call and is omitted
    revert_start = cfg.blocks[1].start
    assert revert_start not in distances


def test_distance_map_empty_without_sites() -> None:
    cfg = build_cfg(_dispatcher_with_call())
    assert distance_map(cfg, []) == {}


@pytest.mark.parametrize("seed", range(6))
def test_distance_map_matches_fixpoint_oracle(seed: int) -> None:
    rng = random.Random(seed)
    cfg = build_cfg(random_block_graph(rng))
    assert not cfg.unresolved
    pcs = sorted(cfg.pcs)
    sites = rng.sample(pcs, k=min(3, len(pcs)))
    distances = distance_map(cfg, sites)

    site_starts = {cfg.block_at(pc).start for pc in sites}
    expected = distance_fixpoint(set(cfg.edges), set(cfg.block_starts), site_starts)
    for block in cfg.blocks:
        block_values = {distances.get(pc) for pc in block.pcs}
        assert len(block_values) == 1, "distance is uniform within a block"
        (value,) = block_values
        assert value == expected.get(block.start)


# --- dynamic augmentation -------------------------------------------------

def _unresolved_cfg() -> tuple[bytes, int, int]:
    raw = code(P1, 0, op.CALLDATALOAD, op.JUMP, op.JUMPDEST, op.STOP)
    return raw, 3, 4  # jump pc, jumpdest pc


def test_augment_adds_observed_jump_edge() -> None:
    raw, jump_pc, dest_pc = _unresolved_cfg()
    cfg = build_cfg(raw)
    updated = augment_edges(cfg, [(jump_pc, dest_pc)])
    assert updated is not cfg
    assert (0, dest_pc) in updated.edges
    assert cfg.edges == frozenset(), "augmentation does not mutate the input"


def test_augment_rejects_non_jump_pairs() -> None:
    raw, jump_pc, dest_pc = _unresolved_cfg()
    cfg = build_cfg(raw)
    noise = [(0, dest_pc), (jump_pc, 1), (jump_pc, 99), (dest_pc, dest_pc)]
    assert augment_edges(cfg, noise) is cfg


def test_augment_is_idempotent() -> None:
    raw, jump_pc, dest_pc = _unresolved_cfg()
    cfg = build_cfg(raw)
    once = augment_edges(cfg, [(jump_pc, dest_pc)])
    assert augment_edges(once, [(jump_pc, dest_pc)]) is once


def test_augmented_edges_extend_distances() -> None:
    raw, jump_pc, dest_pc = _unresolved_cfg()
    cfg = build_cfg(raw)
    assert distance_map(cfg, [dest_pc]) == {dest_pc: 0, dest_pc + 1: 0}
    updated = augment_edges(cfg, [(jump_pc, dest_pc)])
    distances = distance_map(updated, [dest_pc])
    assert distances[0] == 1


# --- export ---------------------------------------------------------------

def test_dot_output_lists_blocks_and_edges() -> None:
    cfg = build_cfg(_dispatcher_with_call())
    rendered = to_dot(cfg, highlight=critical_sites(cfg))
    assert rendered.startswith("digraph cfg {")
    for block in cfg.blocks:
        assert f"b{block.start} [" in rendered
    for src, dst in cfg.edges:
        assert f"b{src} -> b{dst};" in rendered
    assert "color=red" in rendered
