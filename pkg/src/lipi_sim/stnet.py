"""Slot-level simulator for synchronous-transmission flooding.

Two primitives are modelled:

* ``glossy_flood``: one payload spreads from an initiator.  A slot is one
  time unit.  Every node holding the payload (and with transmit budget left)
  transmits; every node still waiting listens and receives if at least one
  transmitting neighbour's link draw succeeds.  Concurrent transmissions never
  collide.
* ``minicast_round``: all-to-all sharing.  A slot carries the whole chain
  ``header | one block per participant | trailer`` and costs ``len(chain)``
  units.  In every slot each live participant sends the blocks it holds and
  listens on the rest, so each block advances one hop per slot.

Both primitives stop at the first slot boundary where every live node holds
everything it can obtain, or when budgets (``ntx``) or ``max_hops`` run out.
All live nodes are released at that boundary, so a node's ``latency`` is the
primitive's duration; the moment its own delivery set became complete is kept
separately in ``complete_at``.
"""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping

import networkx as nx

from .errors import ConfigError, DomainError
from .modmath import TAG_LINK, derive_key

HEADER_UNITS = 1
TRAILER_UNITS = 1


class FailurePhase(enum.Enum):
    BEFORE_DFKE = "before_dfke"
    AFTER_DFKE_SILENT = "silent"
    MID_SHARE = "mid_share"


@dataclass(frozen=True)
class FailureEvent:
    node: int
    phase: FailurePhase
    after_k: int = 1  # MID_SHARE: chain transmissions completed before the crash
    round: int = 0

    def __post_init__(self):
        if self.phase is FailurePhase.MID_SHARE and self.after_k < 1:
            raise DomainError("a MID_SHARE failure needs after_k >= 1")
        if self.round < 0:
            raise DomainError("round index must be non-negative")

    @classmethod
    def parse(cls, text: str) -> "FailureEvent":
        """``<node>:<phase>[:<k>][@<round>]``, e.g. ``3:silent`` or ``4:mid_share:2@1``."""
        body, _, rnd = text.partition("@")
        parts = body.split(":")
        try:
            node = int(parts[0])
            phase = FailurePhase(parts[1])
            k = int(parts[2]) if len(parts) > 2 else 1
            return cls(node, phase, k, int(rnd) if rnd else 0)
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"bad failure event {text!r}: {exc}") from None

    def format(self) -> str:
        s = f"{self.node}:{self.phase.value}"
        if self.phase is FailurePhase.MID_SHARE:
            s += f":{self.after_k}"
        if self.round:
            s += f"@{self.round}"
        return s


@dataclass(frozen=True)
class SimConfig:
    ntx: int = 1
    rng_seed: int = 0
    max_hops: int = 64
    failure_plan: tuple[FailureEvent, ...] = ()

    def __post_init__(self):
        if self.ntx < 1:
            raise DomainError("ntx must be >= 1")
        if self.max_hops < 1:
            raise DomainError("max_hops must be >= 1")
        object.__setattr__(self, "failure_plan", tuple(self.failure_plan))

    def dead(self) -> set[int]:
        """Nodes that are off for the whole primitive."""
        return {e.node for e in self.failure_plan if e.phase is not FailurePhase.MID_SHARE}

    def mid_share(self) -> dict[int, int]:
        return {e.node: e.after_k for e in self.failure_plan if e.phase is FailurePhase.MID_SHARE}

    def with_failures(self, events: Iterable[FailureEvent]) -> "SimConfig":
        return replace(self, failure_plan=tuple(events))


# topology

@dataclass
class Topology:
    n: int
    edges: dict[frozenset, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("a topology needs at least one node")
        adj: dict[int, set[int]] = {v: set() for v in range(1, self.n + 1)}
        clean = {}
        for e, p in self.edges.items():
            e = frozenset(e)
            if len(e) != 2:
                raise DomainError(f"self-loop or malformed edge {sorted(e)}")
            u, v = sorted(e)
            if u < 1 or v > self.n:
                raise DomainError(f"edge ({u}, {v}) references a node outside 1..{self.n}")
            if not 0 < p <= 1:
                raise DomainError(f"link probability {p} outside (0, 1]")
            adj[u].add(v)
            adj[v].add(u)
            clean[e] = float(p)
        self.edges = clean
        self._adj = {v: frozenset(s) for v, s in adj.items()}

    @property
    def nodes(self) -> list[int]:
        return list(range(1, self.n + 1))

    def neighbors(self, v: int) -> frozenset:
        return self._adj[v]

    def prob(self, u: int, v: int) -> float:
        return self.edges[frozenset((u, v))]

    @property
    def lossless(self) -> bool:
        return all(p == 1.0 for p in self.edges.values())

    def graph(self, alive: Iterable[int] | None = None) -> nx.Graph:
        g = nx.Graph()
        keep = set(self.nodes if alive is None else alive)
        g.add_nodes_from(sorted(keep))
        g.add_edges_from(tuple(sorted(e)) for e in self.edges if e <= keep)
        return g

    def is_connected(self, alive: Iterable[int] | None = None) -> bool:
        g = self.graph(alive)
        return g.number_of_nodes() > 0 and nx.is_connected(g)

    def diameter(self, alive: Iterable[int] | None = None) -> int:
        g = self.graph(alive)
        if g.number_of_nodes() <= 1:
            return 0
        if not nx.is_connected(g):
            raise DomainError("diameter of a disconnected topology is undefined")
        return nx.diameter(g)

    def distances(self, source: int, alive: Iterable[int] | None = None, cutoff: int | None = None) -> dict[int, int]:
        return dict(nx.single_source_shortest_path_length(self.graph(alive), source, cutoff=cutoff))

    def neighborhood(self, v: int, hops: int, alive: Iterable[int] | None = None) -> set[int]:
        return {u for u, d in self.distances(v, alive, cutoff=hops).items() if 0 < d <= hops}

    def to_text(self) -> str:
        lines = [str(self.n)]
        for e in sorted(self.edges, key=sorted):
            u, v = sorted(e)
            p = self.edges[e]
            lines.append(f"{u} {v}" if p == 1.0 else f"{u} {v} {p!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Topology":
        rows = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
        rows = [r for r in rows if r]
        if not rows:
            raise ConfigError("empty topology file")
        try:
            n = int(rows[0])
            edges = {}
            for r in rows[1:]:
                parts = r.split()
                if len(parts) not in (2, 3):
                    raise ValueError(f"expected 'u v [prob]', got {r!r}")
                u, v = int(parts[0]), int(parts[1])
                edges[frozenset((u, v))] = float(parts[2]) if len(parts) == 3 else 1.0
            return cls(n, edges)
        except (ValueError, DomainError) as exc:
            raise ConfigError(f"malformed topology file: {exc}") from None


def line(n: int, prob: float = 1.0) -> Topology:
    return Topology(n, {frozenset((i, i + 1)): prob for i in range(1, n)})


def ring(n: int, prob: float = 1.0) -> Topology:
    if n < 3:
        raise DomainError("a ring needs at least 3 nodes")
    edges = {frozenset((i, i + 1)): prob for i in range(1, n)}
    edges[frozenset((n, 1))] = prob
    return Topology(n, edges)


def complete(n: int, prob: float = 1.0) -> Topology:
    return Topology(n, {frozenset((i, j)): prob for i in range(1, n + 1) for j in range(i + 1, n + 1)})


def random_geometric(n: int, side: float, radius: float = 100.0, seed: int = 0, prob: float = 1.0,
                     connected: bool = True, max_tries: int = 2000) -> Topology:
    """Nodes uniform in a ``side`` x ``side`` square (metres), linked within ``radius``."""
    for attempt in range(max_tries):
        rng = random.Random(derive_key(seed, n, attempt))
        pts = [(rng.uniform(0, side), rng.uniform(0, side)) for _ in range(n)]
        edges = {}
        for i in range(n):
            for j in range(i + 1, n):
                if math.dist(pts[i], pts[j]) <= radius:
                    edges[frozenset((i + 1, j + 1))] = prob
        topo = Topology(n, edges)
        if not connected or topo.is_connected():
            return topo
    raise ConfigError(f"no connected geometric topology for n={n}, side={side}, radius={radius} "
                      f"after {max_tries} draws")


def topology_from_spec(spec: str, seed: int = 0) -> Topology:
    """``line:N``, ``ring:N``, ``complete:N``, ``rgg:N:SIDE[:RADIUS]`` or ``file:PATH``."""
    kind, _, rest = spec.partition(":")
    try:
        if kind == "file":
            with open(rest, encoding="utf-8") as fh:
                return Topology.from_text(fh.read())
        args = rest.split(":") if rest else []
        if kind in ("line", "ring", "complete") and len(args) == 1:
            return {"line": line, "ring": ring, "complete": complete}[kind](int(args[0]))
        if kind == "rgg" and len(args) in (2, 3):
            radius = float(args[2]) if len(args) == 3 else 100.0
            return random_geometric(int(args[0]), float(args[1]), radius, seed=seed)
    except OSError as exc:
        raise ConfigError(f"cannot read topology file: {exc}") from None
    except (ValueError, DomainError) as exc:
        raise ConfigError(f"bad topology spec {spec!r}: {exc}") from None
    raise ConfigError(f"bad topology spec {spec!r}")


# metrics

@dataclass
class NetMetrics:
    latency: dict[int, int]
    radio_on: dict[int, int]
    delivery: dict[int, dict[int, Any]]
    complete_at: dict[int, int | None]
    duration: int = 0
    slots: int = 0
    chain_length: int = 1
    transmissions: dict[int, int] = field(default_factory=dict)


def _link_rng(config: SimConfig, stream: int) -> random.Random:
    return random.Random(derive_key(config.rng_seed, stream, TAG_LINK))


def glossy_flood(topo: Topology, config: SimConfig, initiator: int, payload: Any,
                 nodes: Iterable[int] | None = None, stream: int = 0) -> NetMetrics:
    alive = set(topo.nodes if nodes is None else nodes) - config.dead()
    if initiator not in alive:
        zero = {v: 0 for v in sorted(alive)}
        return NetMetrics(dict(zero), dict(zero), {}, {v: None for v in zero}, transmissions=dict(zero))
    reachable = set(topo.distances(initiator, alive))
    rng = _link_rng(config, stream)
    since = {initiator: 0}
    tx = {v: 0 for v in alive}
    radio = {v: 0 for v in alive}
    t = 0
    while len(since) < len(reachable) and t < config.max_hops:
        transmitters = {v for v in since if tx[v] < config.ntx}
        if not transmitters:
            break
        t += 1
        got = []
        for v in sorted(alive - since.keys()):
            radio[v] += 1
            for u in sorted(topo.neighbors(v) & transmitters):
                p = topo.prob(u, v)
                if p >= 1.0 or rng.random() < p:
                    got.append(v)
                    break
        for u in transmitters:
            tx[u] += 1
            radio[u] += 1
        for v in got:
            since[v] = t
    return NetMetrics(
        latency={v: t for v in sorted(alive)},
        radio_on=dict(sorted(radio.items())),
        delivery={v: {initiator: payload} for v in sorted(since)},
        complete_at={v: since.get(v) for v in sorted(alive)},
        duration=t,
        slots=t,
        chain_length=1,
        transmissions=dict(sorted(tx.items())),
    )


def minicast_round(topo: Topology, config: SimConfig, entries: Mapping[int, Any], participants: Iterable[int],
                   widths: Mapping[int, int] | None = None, hop_limit: int | None = None,
                   stream: int = 0) -> NetMetrics:
    """All-to-all sharing among ``participants``.

    ``entries`` maps an owner to the block it originates; participants with no
    entry keep their place in the chain but send nothing of their own.
    ``widths`` gives the number of sub-slots an owner's block occupies
    (default 1).  Blocks travel as a unit.  With ``hop_limit`` a block is not
    re-forwarded once it is ``hop_limit`` hops from its origin.
    """
    order = sorted(set(participants))
    if not order:
        raise DomainError("minicast needs at least one participant")
    if hop_limit is not None and hop_limit < 1:
        raise DomainError("hop_limit must be >= 1")
    limit = math.inf if hop_limit is None else hop_limit
    widths = {p: (widths or {}).get(p, 1) for p in order}
    chain = HEADER_UNITS + sum(widths.values()) + TRAILER_UNITS
    block_end = {}
    off = HEADER_UNITS
    for p in order:
        off += widths[p]
        block_end[p] = off

    dead = config.dead()
    crash_after = config.mid_share()
    alive = [v for v in order if v not in dead]
    held: dict[int, dict[int, int]] = {v: ({v: 0} if v in entries else {}) for v in alive}
    origins = [v for v in alive if v in entries]
    targets: dict[int, set[int]] = {v: set() for v in alive}
    for o in origins:
        reach = topo.distances(o, alive, cutoff=None if hop_limit is None else hop_limit)
        for v in reach:
            targets[v].add(o)

    rng = _link_rng(config, stream)
    radio = {v: 0 for v in alive}
    tx = {v: 0 for v in alive}
    complete_at: dict[int, int | None] = {v: (0 if targets[v] <= held[v].keys() else None) for v in alive}
    t = 0
    while True:
        live = [v for v in alive if v not in crash_after or tx[v] < crash_after[v]]
        if all(complete_at[v] is not None for v in live):
            break
        if t >= config.ntx or t >= config.max_hops:
            break
        t += 1
        live_set = set(live)
        offers = {u: {o: h for o, h in held[u].items() if h < limit} for u in live}
        incoming: dict[int, dict[int, int]] = {}
        for v in live:
            got: dict[int, int] = {}
            mine = held[v]
            for u in sorted(topo.neighbors(v) & live_set):
                p = topo.prob(u, v)
                for o, h in offers[u].items():
                    if o in mine or got.get(o, math.inf) <= h + 1:
                        continue
                    if p >= 1.0 or rng.random() < p:
                        got[o] = h + 1
            if got:
                incoming[v] = got
        for v in live:
            radio[v] += chain
            tx[v] += 1
        base = (t - 1) * chain
        for v, got in incoming.items():
            held[v].update(got)
            if complete_at[v] is None and targets[v] <= held[v].keys():
                complete_at[v] = base + max(block_end[o] for o in got)
    duration = t * chain
    latency = {}
    for v in alive:
        if v in crash_after and tx[v] >= crash_after[v]:
            latency[v] = min(duration, crash_after[v] * chain)
        else:
            latency[v] = duration
    return NetMetrics(
        latency=latency,
        radio_on=radio,
        delivery={v: {o: entries[o] for o in sorted(held[v])} for v in alive},
        complete_at=complete_at,
        duration=duration,
        slots=t,
        chain_length=chain,
        transmissions=tx,
    )


def restricted_minicast(topo: Topology, config: SimConfig, entries: Mapping[int, Any], participants: Iterable[int],
                        hop_limit: int, widths: Mapping[int, int] | None = None, stream: int = 0) -> NetMetrics:
    if hop_limit < 1:
        raise DomainError("hop_limit must be >= 1")
    return minicast_round(topo, config, entries, participants, widths=widths, hop_limit=hop_limit, stream=stream)


def crashed(metrics: NetMetrics, config: SimConfig) -> set[int]:
    """MID_SHARE nodes that made their last transmission during this primitive."""
    return {v for v, k in config.mid_share().items() if metrics.transmissions.get(v, 0) >= k}


# phase bookkeeping

@dataclass(frozen=True)
class PhaseRecord:
    name: str
    start: int
    end: int
    kind: str  # "flood" or "minicast"


@dataclass
class Timeline:
    phases: list[PhaseRecord] = field(default_factory=list)
    radio_on: dict[int, int] = field(default_factory=dict)

    @property
    def now(self) -> int:
        return self.phases[-1].end if self.phases else 0

    def add(self, name: str, metrics: NetMetrics, kind: str) -> None:
        start = self.now
        self.phases.append(PhaseRecord(name, start, start + metrics.duration, kind))
        for v, r in metrics.radio_on.items():
            self.radio_on[v] = self.radio_on.get(v, 0) + r

    def extend(self, other: "Timeline") -> None:
        offset = self.now
        for ph in other.phases:
            self.phases.append(PhaseRecord(ph.name, ph.start + offset, ph.end + offset, ph.kind))
        for v, r in other.radio_on.items():
            self.radio_on[v] = self.radio_on.get(v, 0) + r

    def minicasts(self, exclude_prefix: str = "DFKE") -> int:
        return sum(1 for ph in self.phases if ph.kind == "minicast" and not ph.name.startswith(exclude_prefix))
