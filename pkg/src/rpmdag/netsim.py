"""Discrete-event simulation of block creation and propagation.

One network-wide Poisson process creates blocks; each block is minted by a
uniformly chosen node on top of that node's current local view and reaches
every other node after a fixed delay (complete graph). Two consensus modes
are compared: blockdag (every tip becomes a parent, GHOSTDAG orders the
result) and longest_chain (single parent, first-received tie-breaking,
off-chain blocks are wasted).

Runs are deterministic: identical (config, seed) reproduce the exact
trace, block ids, and metrics.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field, replace

from .dag import Block, BlockDag, BlockId, genesis_block
from .errors import DuplicateBlock, IncompleteTrace, InvalidConfig, MissingParent
from .ghostdag import GhostdagParams, ghostdag_run
from .hashing import digest, encode_str

MODE_BLOCKDAG = "blockdag"
MODE_LONGEST_CHAIN = "longest_chain"
MODES = (MODE_BLOCKDAG, MODE_LONGEST_CHAIN)


@dataclass(frozen=True)
class SimConfig:
    nodes: int
    rate_lambda: float
    delay_d: float
    duration: float
    k: int
    txs_per_block: int = 0
    seed: int = 0
    mode: str = MODE_BLOCKDAG

    def __post_init__(self):
        if not isinstance(self.nodes, int) or self.nodes < 1:
            raise InvalidConfig(f"nodes must be a positive integer, got {self.nodes!r}")
        if not self.rate_lambda > 0:
            raise InvalidConfig(f"rate_lambda must be positive, got {self.rate_lambda!r}")
        if self.delay_d < 0:
            raise InvalidConfig(f"delay_d must be nonnegative, got {self.delay_d!r}")
        if not self.duration > 0:
            raise InvalidConfig(f"duration must be positive, got {self.duration!r}")
        if not isinstance(self.k, int) or self.k < 0:
            raise InvalidConfig(f"k must be a nonnegative integer, got {self.k!r}")
        if not isinstance(self.txs_per_block, int) or self.txs_per_block < 0:
            raise InvalidConfig(f"txs_per_block must be nonnegative, got {self.txs_per_block!r}")
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class SimEvent:
    time: float
    node: int
    kind: str  # "created" | "received"
    block: BlockId


@dataclass
class SimTrace:
    config: SimConfig
    genesis: BlockId
    events: list[SimEvent]
    blocks: dict[BlockId, Block]
    views: dict[int, frozenset[BlockId]]
    completed: bool


@dataclass(frozen=True)
class SimMetrics:
    blocks_created: int
    blocks_in_order: int
    included_ratio: float
    effective_tps: float
    max_observed_anticone: int
    converged: bool

    def to_json(self) -> dict:
        return {
            "blocks_created": self.blocks_created,
            "blocks_in_order": self.blocks_in_order,
            "included_ratio": self.included_ratio,
            "effective_tps": self.effective_tps,
            "max_observed_anticone": self.max_observed_anticone,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class SweepRow:
    rate_lambda: float
    mode: str
    included_ratio: float
    effective_tps: float


@dataclass(frozen=True)
class _SimTx:
    """Synthetic filler transaction; only its id matters to the simulation."""

    id: bytes


@dataclass
class _NodeState:
    idx: int
    view: BlockDag
    heights: dict[BlockId, int]  # shared across nodes; height never differs
    best_tip: BlockId
    orphans: dict[BlockId, Block] = field(default_factory=dict)

    def mining_parents(self, mode: str) -> tuple[BlockId, ...]:
        if mode == MODE_LONGEST_CHAIN:
            return (self.best_tip,)
        return tuple(sorted(self.view.tips))

    def receive(self, block: Block) -> bool:
        """Add a block, buffering it while parents are still in flight."""
        if block.id in self.view:
            return False
        if any(p not in self.view for p in block.parents):
            self.orphans[block.id] = block
            return False
        self._add(block)
        # a newly added block may unblock buffered orphans, cascading
        progress = True
        while progress and self.orphans:
            progress = False
            for bid in sorted(self.orphans):
                pend = self.orphans[bid]
                if all(p in self.view for p in pend.parents):
                    del self.orphans[bid]
                    self._add(pend)
                    progress = True
        return True

    def _add(self, block: Block):
        self.view.add(block)
        if block.id not in self.heights:
            parent_h = max((self.heights[p] for p in block.parents), default=-1)
            self.heights[block.id] = parent_h + 1
        # strictly longer replaces; ties keep the first-received chain
        if self.heights[block.id] > self.heights[self.best_tip]:
            self.best_tip = block.id


def run(config: SimConfig) -> tuple[SimMetrics, SimTrace]:
    """Simulate until quiescence (duration + delay) and measure."""
    rng = random.Random(config.seed)
    genesis = genesis_block()
    heights = {genesis.id: 0}
    nodes = [
        _NodeState(i, BlockDag().add(genesis), heights, genesis.id)
        for i in range(config.nodes)
    ]
    events: list[SimEvent] = []
    blocks: dict[BlockId, Block] = {genesis.id: genesis}

    CREATE, DELIVER = 0, 1
    heap: list[tuple[float, int, int, object]] = []
    seq = itertools.count()
    tx_seq = itertools.count()

    first = rng.expovariate(config.rate_lambda)
    if first <= config.duration:
        heapq.heappush(heap, (first, next(seq), CREATE, None))

    created = 0
    while heap:
        t, _, kind, data = heapq.heappop(heap)
        if kind == CREATE:
            idx = rng.randrange(config.nodes)
            node = nodes[idx]
            payload = tuple(
                _SimTx(digest(b"simtx" + encode_str(str(config.seed)) + encode_str(str(next(tx_seq)))))
                for _ in range(config.txs_per_block)
            )
            block = Block.create(node.mining_parents(config.mode), payload, t, f"n{idx}")
            blocks[block.id] = block
            node.receive(block)
            events.append(SimEvent(t, idx, "created", block.id))
            created += 1
            for other in nodes:
                if other.idx != idx:
                    heapq.heappush(heap, (t + config.delay_d, next(seq), DELIVER, (other.idx, block)))
            nxt = t + rng.expovariate(config.rate_lambda)
            if nxt <= config.duration:
                heapq.heappush(heap, (nxt, next(seq), CREATE, None))
        else:
            idx, block = data
            nodes[idx].receive(block)
            events.append(SimEvent(t, idx, "received", block.id))

    trace = SimTrace(
        config=config,
        genesis=genesis.id,
        events=events,
        blocks=blocks,
        views={n.idx: frozenset(n.view.blocks) for n in nodes},
        completed=True,
    )
    metrics = _measure(config, nodes, created)
    return metrics, trace


def _measure(config: SimConfig, nodes: list[_NodeState], created: int) -> SimMetrics:
    view = nodes[0].view
    if config.mode == MODE_BLOCKDAG:
        ordered = ghostdag_run(view, GhostdagParams(config.k))
        in_order = len(ordered.order) - 1  # genesis was not created during the run
    else:
        in_order = nodes[0].heights[nodes[0].best_tip]

    view_sets = {frozenset(n.view.blocks) for n in nodes}
    converged = len(view_sets) == 1 and all(not n.orphans for n in nodes)
    if config.mode == MODE_LONGEST_CHAIN:
        converged = converged and len({n.best_tip for n in nodes}) == 1

    return SimMetrics(
        blocks_created=created,
        blocks_in_order=in_order,
        included_ratio=(in_order / created) if created else 1.0,
        effective_tps=in_order * config.txs_per_block / config.duration,
        max_observed_anticone=_max_anticone(view),
        converged=converged,
    )


def _max_anticone(dag: BlockDag) -> int:
    """Largest anticone over the final view, via past/future bitmasks."""
    ids = dag.topological_order()
    n = len(ids)
    if n == 0:
        return 0
    index = {bid: i for i, bid in enumerate(ids)}
    past = [0] * n
    for i, bid in enumerate(ids):
        m = 0
        for p in dag.blocks[bid].parents:
            j = index[p]
            m |= past[j] | (1 << j)
        past[i] = m
    future = [0] * n
    for i in range(n - 1, -1, -1):
        m = 0
        for c in dag.children[ids[i]]:
            j = index[c]
            m |= future[j] | (1 << j)
        future[i] = m
    return max(n - 1 - past[i].bit_count() - future[i].bit_count() for i in range(n))


def compare_modes(config: SimConfig, lambda_sweep) -> list[SweepRow]:
    """Run both modes at each rate with identical seeds; one row per run."""
    rows = []
    for lam in lambda_sweep:
        for mode in MODES:
            metrics, _ = run(replace(config, rate_lambda=lam, mode=mode))
            rows.append(
                SweepRow(
                    rate_lambda=lam,
                    mode=mode,
                    included_ratio=metrics.included_ratio,
                    effective_tps=metrics.effective_tps,
                )
            )
    return rows


def check_convergence(trace: SimTrace, k: int) -> bool:
    """Replay the trace per node and verify all views and orders agree.

    Works from the event log rather than the recorded views, so a
    truncated trace (missing deliveries) fails the check.
    """
    if not trace.completed:
        raise IncompleteTrace("trace does not cover a finished run")
    params = GhostdagParams(k)
    replayed: list[BlockDag] = []
    for idx in range(trace.config.nodes):
        dag = BlockDag().add(trace.blocks[trace.genesis])
        for ev in trace.events:
            if ev.node != idx:
                continue
            block = trace.blocks.get(ev.block)
            if block is None:
                return False
            try:
                dag.add(block)
            except (MissingParent, DuplicateBlock):
                return False
        replayed.append(dag)
    if len({frozenset(d.blocks) for d in replayed}) != 1:
        return False
    orders = {tuple(ghostdag_run(d, params).order) for d in replayed}
    return len(orders) == 1


def trace_to_jsonl(trace: SimTrace) -> str:
    """One JSON object per event, in processing order."""
    import json

    lines = [
        json.dumps(
            {"time": ev.time, "node": ev.node, "event": ev.kind, "block": ev.block.hex()},
            sort_keys=True,
        )
        for ev in trace.events
    ]
    return "\n".join(lines) + ("\n" if lines else "")
