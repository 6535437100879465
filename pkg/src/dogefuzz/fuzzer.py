"""Mutation-based fuzzing campaigns over a deployed contract.

Three strategies share one loop.  BlackBox draws fresh random inputs every
cycle.  GreyBox keeps a seed queue, assigns each executed input an energy
of one plus the number of previously unseen edges it exercised, admits a
mutant only when it strictly out-scores its parent, and picks parents with
probability proportional to energy.  DirectedGreyBox adds a proximity
bonus of ``10 / (1 + d)`` where ``d`` is the seed's closest block distance
to a money- or control-transferring instruction, recomputed as run-time
jumps refine the static graph.

Each cycle executes eight mutants against the unchanged base state plus a
ninth whose effects are kept when it succeeds, so storage-dependent bugs
stay reachable without giving up reproducibility.
"""

from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass, replace
from enum import Enum

from .abi import (
    FunctionSpec,
    ValuePools,
    encode_call,
    generate_value,
    mutate_value,
)
from .cfg import Cfg, augment_edges, critical_sites, distance_map
from .evm import (
    AgentPolicy,
    BlockContext,
    PolicyKind,
    Transaction,
    WorldState,
    execute_transaction,
    restore_state,
    snapshot_state,
)
from .oracles import BugFinding, FineBugClass, dedupe_findings, detect_trace

logger = logging.getLogger(__name__)

DIRECTED_BONUS_WEIGHT = 10.0
TIMESTAMP_OFFSETS = (-86_400, -3_600, -1, 1, 3_600, 86_400)
NUMBER_OFFSETS = (-256, -1, 1, 256)
SEEDS_PER_FUNCTION = 2

_POLICY_CYCLE = (PolicyKind.BENIGN, PolicyKind.REENTRANT, PolicyKind.THROWER)


class Strategy(str, Enum):
    BLACKBOX = "BlackBox"
    GREYBOX = "GreyBox"
    DIRECTED = "DirectedGreyBox"


@dataclass
class Seed:
    """One input point: function, arguments, and transaction context."""

    spec: FunctionSpec
    args: tuple = ()
    raw_calldata: bytes = b""       # used by fallback seeds instead of args
    value: int = 0
    policy: PolicyKind = PolicyKind.BENIGN
    block: BlockContext = BlockContext()
    # filled in after execution
    new_edges: int = 0
    d_min: int | None = None

    def calldata(self) -> bytes:
        if self.spec.is_fallback:
            return self.raw_calldata
        return encode_call(self.spec, list(self.args))


@dataclass(frozen=True)
class FuzzTarget:
    """Everything a campaign needs about one deployed contract."""

    name: str
    address: bytes
    state: WorldState
    specs: tuple[FunctionSpec, ...]
    cfg: Cfg
    pools: ValuePools

    def eligible_specs(self) -> tuple[FunctionSpec, ...]:
        return tuple(s for s in self.specs if not s.is_view)


@dataclass
class CampaignConfig:
    strategy: Strategy = Strategy.GREYBOX
    budget: int | None = 1000           # execution count
    seconds: float | None = None        # wall-clock alternative
    rng_seed: int = 0
    mutants_per_cycle: int = 8
    coverage_sample_interval: int = 50
    max_reentries: int = 1
    stop_classes: frozenset[FineBugClass] = frozenset()


@dataclass(frozen=True)
class Reproducer:
    """The transaction that first exposed a finding, replayable as-is."""

    function: str
    calldata: bytes
    value: int
    policy: PolicyKind
    block: BlockContext


@dataclass
class CampaignResult:
    strategy: Strategy
    executions: int
    # (first hit tick, finding, reproducing transaction)
    findings: list[tuple[int, BugFinding, Reproducer]]
    coverage_curve: list[tuple[int, float]]     # (tick, covered fraction)
    admitted_seeds: int
    final_coverage: float
    elapsed: float


# --- seed construction ----------------------------------------------------

def score_seed(strategy: Strategy, seed: Seed) -> float:
    if strategy is Strategy.BLACKBOX:
        return 1.0
    energy = 1.0 + seed.new_edges
    if strategy is Strategy.DIRECTED and seed.d_min is not None:
        energy += DIRECTED_BONUS_WEIGHT / (1.0 + seed.d_min)
    return energy


def generate_seed(rng: random.Random, spec: FunctionSpec, pools: ValuePools,
                  ordinal: int = 0) -> Seed:
    """Fresh input for `spec`; ordinal 1 favors a value-carrying variant."""
    if spec.is_fallback:
        raw = rng.randbytes(8) if ordinal else b""
        return Seed(spec=spec, raw_calldata=raw,
                    value=ordinal if spec.is_payable else 0)
    args = tuple(generate_value(rng, t, pools) for t in spec.inputs)
    value = ordinal if spec.is_payable else 0
    return Seed(spec=spec, args=args, value=value)


def initial_corpus(rng: random.Random, target: FuzzTarget) -> list[Seed]:
    """Two seeds per state-changing function, in interface order."""
    eligible = target.eligible_specs()
    if not eligible:
        raise ValueError(f"{target.name}: no state-changing entry points")
    return [generate_seed(rng, spec, target.pools, ordinal)
            for spec in eligible
            for ordinal in range(SEEDS_PER_FUNCTION)]


def _mutate_blob_bytes(rng: random.Random, raw: bytes) -> bytes:
    moves = ["grow"] + (["flip", "shrink"] if raw else [])
    move = rng.choice(moves)
    if move == "grow":
        return raw + rng.randbytes(1)
    if move == "shrink":
        return raw[:-1]
    index = rng.randrange(len(raw))
    return raw[:index] + bytes([raw[index] ^ rng.randrange(1, 256)]) \
        + raw[index + 1:]


def mutate_seed(rng: random.Random, seed: Seed, pools: ValuePools) -> Seed:
    """Change exactly one dimension of the input."""
    dims: list[object] = []
    if seed.spec.is_fallback:
        dims.append("raw")
    else:
        dims.extend(("arg", i) for i in range(len(seed.args)))
    if seed.spec.is_payable:
        dims.append("value")
    dims.extend(("policy", "block"))
    choice = rng.choice(dims)

    child = Seed(spec=seed.spec, args=seed.args, raw_calldata=seed.raw_calldata,
                 value=seed.value, policy=seed.policy, block=seed.block)
    if choice == "raw":
        child.raw_calldata = _mutate_blob_bytes(rng, seed.raw_calldata)
    elif choice == "value":
        child.value = rng.choice([0, 1, 2, seed.value + 1,
                                  max(seed.value - 1, 0), seed.value * 2])
    elif choice == "policy":
        index = _POLICY_CYCLE.index(seed.policy)
        child.policy = _POLICY_CYCLE[(index + 1) % len(_POLICY_CYCLE)]
    elif choice == "block":
        if rng.random() < 0.5:
            offset = rng.choice(TIMESTAMP_OFFSETS)
            child.block = replace(seed.block, timestamp=max(
                0, seed.block.timestamp + offset))
        else:
            offset = rng.choice(NUMBER_OFFSETS)
            child.block = replace(seed.block, number=max(
                0, seed.block.number + offset))
    else:
        _, index = choice
        args = list(seed.args)
        args[index] = mutate_value(rng, seed.spec.inputs[index], args[index],
                                   pools)
        child.args = tuple(args)
    return child


def select_seed(rng: random.Random, strategy: Strategy,
                queue: list[Seed]) -> Seed:
    """Energy-proportional draw, scanning newest entries first."""
    total = sum(score_seed(strategy, seed) for seed in queue)
    point = rng.uniform(0.0, total)
    for seed in reversed(queue):
        point -= score_seed(strategy, seed)
        if point <= 0.0:
            return seed
    return queue[0]


# --- campaign loop --------------------------------------------------------

class _Campaign:
    def __init__(self, target: FuzzTarget, config: CampaignConfig) -> None:
        if config.budget is None and config.seconds is None:
            raise ValueError("campaign needs an execution or time budget")
        self.target = target
        self.config = config
        self.rng = random.Random(config.rng_seed)
        self.base_state = restore_state(snapshot_state(target.state))
        self.cfg = target.cfg
        self.sites = tuple(critical_sites(target.cfg))
        self.distances = distance_map(target.cfg, self.sites)
        self.covered_pcs: set[int] = set()
        self.covered_edges: set[tuple[int, int]] = set()
        self.executions = 0
        self.admitted = 0
        self.raw_findings: list[tuple[int, BugFinding, Reproducer]] = []
        self.coverage_rows: list[tuple[int, float]] = []
        self.started = time.monotonic()
        self.last_second_sampled = -1
        self.stop = False

    # -- bookkeeping -------------------------------------------------------

    def _coverage_fraction(self) -> float:
        total = len(self.cfg.pcs)
        return len(self.covered_pcs) / total if total else 0.0

    def _within_budget(self) -> bool:
        if self.stop:
            return False
        if self.config.budget is not None:
            if self.executions >= self.config.budget:
                return False
        if self.config.seconds is not None:
            if time.monotonic() - self.started >= self.config.seconds:
                return False
        return True

    def _sample_coverage(self) -> None:
        tick = self.executions
        if self.config.seconds is not None:
            second = int(time.monotonic() - self.started)
            if second > self.last_second_sampled:
                self.last_second_sampled = second
                self.coverage_rows.append((second, self._coverage_fraction()))
            return
        interval = self.config.coverage_sample_interval
        due = tick % interval == 0 or tick == self.config.budget
        already = self.coverage_rows and self.coverage_rows[-1][0] == tick
        if due and not already:
            self.coverage_rows.append((tick, self._coverage_fraction()))

    def _execute(self, seed: Seed, persist: bool) -> None:
        tx = Transaction(
            target=self.target.address,
            calldata=seed.calldata(),
            value=seed.value,
            agent_policy=AgentPolicy(seed.policy,
                                     max_reentries=self.config.max_reentries),
            block=seed.block,
        )
        trace = execute_transaction(self.base_state, tx, persist=persist)
        self.executions += 1

        pcs = trace.executed_pcs.get(self.target.address, set())
        fresh_edges = trace.dynamic_edges - self.covered_edges
        seed.new_edges = len(fresh_edges)
        self.covered_pcs |= pcs
        self.covered_edges |= trace.dynamic_edges

        if self.config.strategy is Strategy.DIRECTED:
            refined = augment_edges(self.cfg, trace.dynamic_edges)
            if refined is not self.cfg:
                self.cfg = refined
                self.distances = distance_map(refined, self.sites)
            reached = [self.distances[pc] for pc in pcs if pc in self.distances]
            seed.d_min = min(reached) if reached else None

        tick = self.executions
        detected = detect_trace(trace)
        if detected:
            repro = Reproducer(
                function=seed.spec.signature,
                calldata=tx.calldata,
                value=seed.value,
                policy=seed.policy,
                block=seed.block,
            )
            for finding in detected:
                self.raw_findings.append((tick, finding, repro))
                if finding.fine in self.config.stop_classes:
                    self.stop = True
        self._sample_coverage()

    # -- cycles ------------------------------------------------------------

    def _maybe_admit(self, parent: Seed, child: Seed,
                     queue: list[Seed]) -> None:
        strategy = self.config.strategy
        if strategy is Strategy.BLACKBOX:
            return
        if score_seed(strategy, child) > score_seed(strategy, parent):
            queue.append(child)
            self.admitted += 1

    def run(self) -> CampaignResult:
        rng = self.rng
        queue = initial_corpus(rng, self.target)
        for seed in queue:
            if not self._within_budget():
                break
            self._execute(seed, persist=False)

        eligible = self.target.eligible_specs()
        while self._within_budget():
            blind = self.config.strategy is Strategy.BLACKBOX
            parent = None if blind else select_seed(
                rng, self.config.strategy, queue)
            for lane in range(self.config.mutants_per_cycle + 1):
                if not self._within_budget():
                    break
                persist = lane == self.config.mutants_per_cycle
                if blind:
                    child = generate_seed(rng, rng.choice(eligible),
                                          self.target.pools,
                                          ordinal=rng.randrange(2))
                else:
                    child = mutate_seed(rng, parent, self.target.pools)
                self._execute(child, persist=persist)
                if not blind:
                    self._maybe_admit(parent, child, queue)

        return CampaignResult(
            strategy=self.config.strategy,
            executions=self.executions,
            findings=dedupe_findings(self.raw_findings),
            coverage_curve=self.coverage_rows,
            admitted_seeds=self.admitted,
            final_coverage=self._coverage_fraction(),
            elapsed=time.monotonic() - self.started,
        )


def run_campaign(target: FuzzTarget, config: CampaignConfig) -> CampaignResult:
    """Fuzz one contract; deterministic for a fixed config and target."""
    result = _Campaign(target, config).run()
    logger.info(
        "%s on %s: %d executions, %.1f%% coverage, %d finding sites",
        config.strategy.value, target.name, result.executions,
        100.0 * result.final_coverage, len(result.findings))
    return result
