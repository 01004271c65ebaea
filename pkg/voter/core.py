# voter/core.py
"""
Constrained voter model on a finite graph.

Every directed arrow x -> y of the graph carries an independent rate-one
Poisson clock. When the clock rings and |opinion(x) - opinion(y)| <= theta,
y adopts the opinion of x. The engine keeps three tallies that drive the
absorption check and the observers: the number of active discordant edges,
the number of blockade edges and the total edge charge sum |xi|.
"""
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from django.core.exceptions import ValidationError

from .choices import StopMode, StopReason, Topology

logger = logging.getLogger(__name__)

ACTIVE, BLOCKADE, PARTICLES = 0, 1, 2

LINEAR_TOPOLOGIES = (Topology.CYCLE, Topology.PATH)


@dataclass(frozen=True)
class Params:
    """Model parameters: F opinions on a line, confidence threshold theta."""
    F: int
    theta: int

    def __post_init__(self):
        if not isinstance(self.F, (int, np.integer)) or self.F < 2:
            raise ValidationError(f"F must be an integer >= 2, got {self.F!r}", code='invalid_params')
        if not isinstance(self.theta, (int, np.integer)) or self.theta < 1:
            raise ValidationError(f"theta must be an integer >= 1, got {self.theta!r}", code='invalid_params')

    @property
    def is_voter_reduction(self) -> bool:
        return self.F <= self.theta + 1

    @property
    def in_fluctuation_regime(self) -> bool:
        """F <= 2 theta + 1: some opinion is compatible with every other one."""
        return self.F <= 2 * self.theta + 1

    def centrist_opinions(self) -> Tuple[int, ...]:
        return tuple(sorted(centrist_set(self)))


def centrist_set(params: Params) -> frozenset:
    """Opinions within theta of every opinion 1..F."""
    opinions = range(1, params.F + 1)
    return frozenset(j for j in opinions if all(abs(i - j) <= params.theta for i in opinions))


@dataclass(frozen=True)
class DensityVector:
    """Initial opinion law (rho_1, ..., rho_F), kept exact."""
    rho: Tuple[Fraction, ...]
    require_positive: bool = False

    def __post_init__(self):
        values = tuple(Fraction(value) for value in self.rho)
        object.__setattr__(self, 'rho', values)
        if len(values) < 2:
            raise ValidationError("A density needs at least two opinions", code='invalid_density')
        if any(value < 0 for value in values):
            raise ValidationError("Density entries must be non-negative", code='invalid_density')
        if self.require_positive and any(value == 0 for value in values):
            raise ValidationError("Density entries must be strictly positive", code='invalid_density')
        if sum(values) != 1:
            raise ValidationError(f"Density must sum to 1, got {sum(values)}", code='invalid_density')

    @property
    def F(self) -> int:
        return len(self.rho)

    @classmethod
    def uniform(cls, F: int) -> 'DensityVector':
        return cls(tuple(Fraction(1, F) for _ in range(F)), require_positive=True)

    @classmethod
    def symmetric(cls, F: int, rho2) -> 'DensityVector':
        """rho_1 = rho_F, all interior opinions share rho2."""
        rho2 = Fraction(rho2)
        if F == 2:
            return cls((Fraction(1, 2), Fraction(1, 2)), require_positive=True)
        rho1 = (1 - (F - 2) * rho2) / 2
        if rho1 <= 0 or rho2 < 0:
            raise ValidationError(
                f"rho2={rho2} gives no symmetric density for F={F}", code='invalid_density'
            )
        return cls((rho1,) + (rho2,) * (F - 2) + (rho1,))

    @classmethod
    def point_mass(cls, F: int, opinion: int) -> 'DensityVector':
        if not 1 <= opinion <= F:
            raise ValidationError(f"Opinion {opinion} outside 1..{F}", code='invalid_density')
        return cls(tuple(Fraction(int(j == opinion)) for j in range(1, F + 1)))

    def cumulative(self) -> np.ndarray:
        table = np.cumsum([float(value) for value in self.rho])
        table[-1] = 1.0
        return table


def rho_c(params: Params, density: DensityVector) -> Fraction:
    """Initial density of the centrist opinions; 0 when there are none."""
    if density.F != params.F:
        raise ValidationError(f"Density has {density.F} entries but F={params.F}", code='invalid_density')
    return sum((density.rho[j - 1] for j in centrist_set(params)), Fraction(0))


@dataclass(frozen=True, eq=False)
class Graph:
    """
    Finite simple connected graph.

    Edges keep the orientation they were built with. On a cycle or a path
    edge k joins k and k + 1 (mod N) and arrow 2k points along the edge,
    arrow 2k + 1 against it.
    """
    n: int
    edges: Tuple[Tuple[int, int], ...]
    topology: str = Topology.CUSTOM

    def __post_init__(self):
        if self.n < 2:
            raise ValidationError(f"Graph needs at least 2 vertices, got {self.n}", code='invalid_graph')
        seen = set()
        for u, v in self.edges:
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValidationError(f"Edge ({u}, {v}) outside vertex range", code='invalid_graph')
            if u == v:
                raise ValidationError(f"Self-loop at vertex {u}", code='invalid_graph')
            key = frozenset((u, v))
            if key in seen:
                raise ValidationError(f"Duplicate edge ({u}, {v})", code='invalid_graph')
            seen.add(key)
        if not nx.is_connected(self.to_networkx()):
            raise ValidationError("Graph must be connected", code='invalid_graph')
        if self.topology == Topology.CYCLE:
            expected = tuple((k, (k + 1) % self.n) for k in range(self.n))
        elif self.topology == Topology.PATH:
            expected = tuple((k, k + 1) for k in range(self.n - 1))
        else:
            expected = self.edges
        if tuple(self.edges) != expected:
            raise ValidationError(f"{self.topology} edges must join k and k + 1", code='invalid_graph')

        edge_u = np.array([u for u, _ in self.edges], dtype=np.int64)
        edge_v = np.array([v for _, v in self.edges], dtype=np.int64)
        incident: List[List[int]] = [[] for _ in range(self.n)]
        for k, (u, v) in enumerate(self.edges):
            incident[u].append(k)
            incident[v].append(k)
        ptr = np.zeros(self.n + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(items) for items in incident])
        object.__setattr__(self, 'edge_u', edge_u)
        object.__setattr__(self, 'edge_v', edge_v)
        object.__setattr__(self, 'incident_ptr', ptr)
        object.__setattr__(self, 'incident_edges', np.array(
            [k for items in incident for k in items], dtype=np.int64
        ))
        object.__setattr__(self, '_adjacent', frozenset(seen))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_arrows(self) -> int:
        return 2 * len(self.edges)

    @property
    def is_linear(self) -> bool:
        return self.topology in LINEAR_TOPOLOGIES

    def has_edge(self, x: int, y: int) -> bool:
        return frozenset((x, y)) in self._adjacent

    def arrow(self, index: int) -> Tuple[int, int]:
        u, v = self.edges[index >> 1]
        return (u, v) if index & 1 == 0 else (v, u)

    def incident(self, vertex: int) -> np.ndarray:
        return self.incident_edges[self.incident_ptr[vertex]:self.incident_ptr[vertex + 1]]

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(self.edges)
        return graph

    def describe(self) -> str:
        return f"{self.topology}({self.n})"

    @classmethod
    def cycle(cls, n: int) -> 'Graph':
        if n < 3:
            raise ValidationError(f"Cycle needs at least 3 vertices, got {n}", code='invalid_graph')
        return cls(n, tuple((k, (k + 1) % n) for k in range(n)), Topology.CYCLE)

    @classmethod
    def path(cls, n: int) -> 'Graph':
        return cls(n, tuple((k, k + 1) for k in range(n - 1)), Topology.PATH)

    @classmethod
    def complete(cls, n: int) -> 'Graph':
        return cls(n, tuple(nx.complete_graph(n).edges()), Topology.COMPLETE)

    @classmethod
    def custom(cls, n: Optional[int], edges: Iterable[Tuple[int, int]]) -> 'Graph':
        edges = tuple((int(u), int(v)) for u, v in edges)
        if n is None:
            n = 1 + max((max(edge) for edge in edges), default=0)
        return cls(n, edges, Topology.CUSTOM)


def build_graph(topology: str, size: Optional[int], edges: Optional[Iterable[Tuple[int, int]]] = None) -> Graph:
    """Graph factory keyed by topology name."""
    if topology == Topology.CYCLE:
        return Graph.cycle(size)
    if topology == Topology.PATH:
        return Graph.path(size)
    if topology == Topology.COMPLETE:
        return Graph.complete(size)
    if topology == Topology.CUSTOM:
        if edges is None:
            raise ValidationError("Custom topology requires an edge list", code='invalid_graph')
        return Graph.custom(size, edges)
    raise ValidationError(f"Unknown topology {topology!r}", code='invalid_graph')


@dataclass(frozen=True, eq=False)
class Configuration:
    """Assignment of an opinion in 1..F to every vertex."""
    graph: Graph
    opinions: np.ndarray

    def __post_init__(self):
        opinions = np.asarray(self.opinions, dtype=np.int64)
        if opinions.shape != (self.graph.n,):
            raise ValidationError(
                f"Expected {self.graph.n} opinions, got shape {opinions.shape}", code='invalid_configuration'
            )
        if opinions.size and opinions.min() < 1:
            raise ValidationError("Opinions must be >= 1", code='invalid_configuration')
        object.__setattr__(self, 'opinions', opinions)

    def check_params(self, params: Params):
        if self.opinions.max() > params.F:
            raise ValidationError(
                f"Opinion {int(self.opinions.max())} exceeds F={params.F}", code='invalid_configuration'
            )

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.graph.edges == other.graph.edges and np.array_equal(self.opinions, other.opinions)

    __hash__ = None


@dataclass(frozen=True)
class ArrowEvent:
    time: float
    source: int
    target: int
    active: bool = False
    changed: bool = False


def _opinions_of(config: Union[Configuration, Sequence[int], np.ndarray]) -> np.ndarray:
    if isinstance(config, Configuration):
        return config.opinions
    return np.asarray(config, dtype=np.int64)


def replicate_generator(master_seed: int, replicate: int) -> np.random.Generator:
    """Counter-based stream for one replicate, independent of scheduling."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(master_seed), int(replicate)])))


def sample_initial(graph: Graph, density: DensityVector, rng: np.random.Generator) -> Configuration:
    """Independent opinions per vertex, opinion j with probability rho_j."""
    draws = rng.random(graph.n)
    opinions = np.searchsorted(density.cumulative(), draws, side='right') + 1
    return Configuration(graph, np.minimum(opinions, density.F).astype(np.int64))


def is_arrow_active(config: Configuration, x: int, y: int, theta: int) -> bool:
    if not config.graph.has_edge(x, y):
        raise ValidationError(f"Vertices {x} and {y} are not adjacent", code='non_adjacent')
    return abs(int(config.opinions[x]) - int(config.opinions[y])) <= theta


def apply_arrow(config: Configuration, x: int, y: int, theta: int) -> Configuration:
    """Apply arrow x -> y; returns the same configuration when nothing changes."""
    if not is_arrow_active(config, x, y, theta) or config.opinions[x] == config.opinions[y]:
        return config
    opinions = config.opinions.copy()
    opinions[y] = opinions[x]
    return Configuration(config.graph, opinions)


def is_absorbing(config: Configuration, theta: int) -> bool:
    """No edge joins two distinct opinions within distance theta."""
    opinions = config.opinions
    gaps = np.abs(opinions[config.graph.edge_u] - opinions[config.graph.edge_v])
    return not bool(np.any((gaps > 0) & (gaps <= theta)))


def is_consensus(config: Union[Configuration, Sequence[int], np.ndarray]) -> bool:
    opinions = _opinions_of(config)
    return bool(opinions.size) and bool(np.all(opinions == opinions[0]))


def compute_tallies(opinions: np.ndarray, graph: Graph, theta: int) -> np.ndarray:
    gaps = np.abs(opinions[graph.edge_u] - opinions[graph.edge_v])
    return np.array([
        int(np.count_nonzero((gaps > 0) & (gaps <= theta))),
        int(np.count_nonzero(gaps > theta)),
        int(gaps.sum()),
    ], dtype=np.int64)


class EventStream:
    """
    Pre-drawn event stream: exponential waiting times at total rate 2|E|
    and uniformly chosen arrows. Batches grow geometrically up to
    `batch_size` so that short runs do not pay for a full batch.
    """

    def __init__(self, rng: np.random.Generator, num_arrows: int, batch_size: int = 65536,
                 initial_batch: int = 256):
        self.rng = rng
        self.num_arrows = num_arrows
        self.batch_size = max(1, int(batch_size))
        self._next_size = max(1, min(int(initial_batch), self.batch_size))
        self.waits = np.empty(0, dtype=np.float64)
        self.arrows = np.empty(0, dtype=np.int64)
        self.cursor = 0

    def _refill(self):
        size = self._next_size
        self.waits = self.rng.standard_exponential(size) / self.num_arrows
        self.arrows = self.rng.integers(0, self.num_arrows, size=size, dtype=np.int64)
        self.cursor = 0
        self._next_size = min(2 * size, self.batch_size)

    def pending(self) -> Tuple[np.ndarray, np.ndarray, int]:
        if self.cursor >= self.waits.shape[0]:
            self._refill()
        return self.waits, self.arrows, self.cursor

    def peek(self) -> Tuple[float, int]:
        waits, arrows, cursor = self.pending()
        return float(waits[cursor]), int(arrows[cursor])

    def consume(self, count: int = 1):
        self.cursor += count


EventListener = Callable[['RunState', ArrowEvent], None]


@dataclass(eq=False)
class RunState:
    """
    Mutable simulation state. `clock` is the time of the last applied
    event, `time` the current observation time (never before `clock`).
    """
    params: Params
    graph: Graph
    opinions: np.ndarray
    stream: EventStream
    initial: np.ndarray = None
    time: float = 0.0
    clock: float = 0.0
    events_applied: int = 0
    flips: np.ndarray = None
    counts: np.ndarray = None
    tallies: np.ndarray = None
    check_particles: bool = False
    listeners: List[EventListener] = field(default_factory=list)

    def __post_init__(self):
        self.opinions = np.array(self.opinions, dtype=np.int64)
        Configuration(self.graph, self.opinions).check_params(self.params)
        if self.initial is None:
            self.initial = self.opinions.copy()
        if self.flips is None:
            self.flips = np.zeros(self.graph.n, dtype=np.int64)
        if self.counts is None:
            self.counts = np.bincount(self.opinions - 1, minlength=self.params.F).astype(np.int64)
        if self.tallies is None:
            self.tallies = compute_tallies(self.opinions, self.graph, self.params.theta)
        self.check_particles = bool(self.check_particles and self.graph.is_linear)

    @classmethod
    def start(cls, params: Params, graph: Graph, density: DensityVector, master_seed: int,
              replicate: int = 0, batch_size: int = 65536, check_particles: bool = False) -> 'RunState':
        if density.F != params.F:
            raise ValidationError(
                f"Density has {density.F} entries but F={params.F}", code='invalid_density'
            )
        rng = replicate_generator(master_seed, replicate)
        config = sample_initial(graph, density, rng)
        return cls(params, graph, config.opinions, EventStream(rng, graph.num_arrows, batch_size),
                   check_particles=check_particles)

    @classmethod
    def from_configuration(cls, params: Params, config: Configuration, rng: np.random.Generator,
                           batch_size: int = 65536, check_particles: bool = False) -> 'RunState':
        return cls(params, config.graph, config.opinions.copy(),
                   EventStream(rng, config.graph.num_arrows, batch_size), check_particles=check_particles)

    @property
    def configuration(self) -> Configuration:
        return Configuration(self.graph, self.opinions.copy())

    @property
    def is_absorbing(self) -> bool:
        return int(self.tallies[ACTIVE]) == 0

    @property
    def is_consensus(self) -> bool:
        return int(self.counts.max()) == self.graph.n

    def add_listener(self, listener: EventListener) -> 'RunState':
        self.listeners.append(listener)
        return self

    def _retarget(self, y: int, new: int):
        """Set opinion(y) = new while keeping counts and tallies current."""
        graph, theta = self.graph, self.params.theta
        old = int(self.opinions[y])
        before = 0
        for k in graph.incident(y):
            other = int(graph.edge_u[k] + graph.edge_v[k]) - y
            gap = abs(int(self.opinions[other]) - old)
            before += gap
            if 0 < gap <= theta:
                self.tallies[ACTIVE] -= 1
            elif gap > theta:
                self.tallies[BLOCKADE] -= 1
        self.opinions[y] = new
        after = 0
        for k in graph.incident(y):
            other = int(graph.edge_u[k] + graph.edge_v[k]) - y
            gap = abs(int(self.opinions[other]) - new)
            after += gap
            if 0 < gap <= theta:
                self.tallies[ACTIVE] += 1
            elif gap > theta:
                self.tallies[BLOCKADE] += 1
        self.tallies[PARTICLES] += after - before
        if self.check_particles and after > before:
            raise ValidationError(
                f"Edge charge total increased at vertex {y} (t={self.clock})", code='particle_increase'
            )
        self.flips[y] += 1
        self.counts[old - 1] -= 1
        self.counts[new - 1] += 1


def step(state: RunState) -> Tuple[RunState, ArrowEvent]:
    """Apply the next event of the stream. Mutates and returns the state."""
    wait, index = state.stream.peek()
    state.stream.consume()
    x, y = state.graph.arrow(index)
    state.clock += wait
    state.time = state.clock
    state.events_applied += 1
    source, target = int(state.opinions[x]), int(state.opinions[y])
    active = abs(source - target) <= state.params.theta
    changed = active and source != target
    if changed:
        state._retarget(y, source)
    event = ArrowEvent(state.clock, x, y, active, changed)
    for listener in state.listeners:
        listener(state, event)
    return state, event


@dataclass(frozen=True)
class StopCondition:
    mode: str = StopMode.ABSORPTION
    t_max: Optional[float] = None
    event_budget: int = 10 ** 9

    def __post_init__(self):
        if self.mode not in StopMode.values:
            raise ValidationError(f"Unknown stop mode {self.mode!r}", code='invalid_stop')
        if self.mode == StopMode.TIME and self.t_max is None:
            raise ValidationError("Time-horizon stop requires t_max", code='invalid_stop')
        if self.t_max is not None and self.t_max < 0:
            raise ValidationError("t_max must be non-negative", code='invalid_stop')
        if self.event_budget < 0:
            raise ValidationError("event_budget must be non-negative", code='invalid_stop')

    @property
    def horizon(self) -> float:
        return float('inf') if self.t_max is None else float(self.t_max)


# advance() outcomes shared with the batch kernel
REACHED, HIT_ABSORBING, HIT_CONSENSUS, HIT_BUDGET, BATCH_EXHAUSTED = 0, 1, 2, 3, 4


def _advance_stepwise(state: RunState, until: float, budget: int, stop_on_consensus: bool) -> int:
    applied = 0
    while True:
        if state.tallies[ACTIVE] == 0:
            return HIT_ABSORBING
        if applied >= budget:
            return HIT_BUDGET
        wait, _ = state.stream.peek()
        if state.clock + wait > until:
            return REACHED
        _, event = step(state)
        applied += 1
        if stop_on_consensus and event.changed and state.counts[state.opinions[event.target] - 1] == state.graph.n:
            return HIT_CONSENSUS


def advance(state: RunState, until: float, budget: int, stop_on_consensus: bool = False) -> int:
    """
    Apply events with time <= until. Stops early on absorption, on
    consensus when asked, or once `budget` events have been applied.
    Listeners force the per-event path, otherwise the batch kernel runs.
    """
    if state.listeners:
        outcome = _advance_stepwise(state, until, budget, stop_on_consensus)
    else:
        from .kernels import advance_batched
        outcome = advance_batched(state, until, budget, stop_on_consensus)
    if outcome in (REACHED, HIT_ABSORBING) and until != float('inf'):
        state.time = max(state.clock, until)
    else:
        state.time = state.clock
    return outcome


Quantity = Callable[[RunState], Any]


def _interface_density(state: RunState) -> float:
    return float(state.tallies[ACTIVE] + state.tallies[BLOCKADE]) / state.graph.num_edges


def _particle_density(state: RunState) -> float:
    return float(state.tallies[PARTICLES]) / state.graph.num_edges


def _blockade_density(state: RunState) -> float:
    return float(state.tallies[BLOCKADE]) / state.graph.num_edges


def _centrist_count(state: RunState) -> int:
    return int(sum(state.counts[j - 1] for j in state.params.centrist_opinions()))


QUANTITIES: Dict[str, Quantity] = {
    'interface_density': _interface_density,
    'particle_density': _particle_density,
    'blockade_density': _blockade_density,
    'centrist_count': _centrist_count,
    'opinion_counts': lambda state: state.counts.copy(),
    'median_flips': lambda state: float(np.median(state.flips)),
    'snapshot': lambda state: state.opinions.copy(),
}


@dataclass
class ObserverSchedule:
    """Quantities recorded at fixed sample times."""
    times: Sequence[float] = ()
    quantities: Dict[str, Quantity] = field(default_factory=dict)

    def __post_init__(self):
        self.times = tuple(sorted(float(t) for t in self.times))
        if any(t < 0 for t in self.times):
            raise ValidationError("Sample times must be non-negative", code='invalid_observers')

    @classmethod
    def named(cls, times: Sequence[float], names: Iterable[str]) -> 'ObserverSchedule':
        quantities = {}
        for name in names:
            if name not in QUANTITIES:
                raise ValidationError(f"Unknown observer {name!r}", code='invalid_observers')
            quantities[name] = QUANTITIES[name]
        return cls(times, quantities)


@dataclass
class RunResult:
    master_seed: int
    replicate: int
    stop_reason: str
    final_opinions: np.ndarray
    final_time: float
    events_applied: int
    flips: np.ndarray
    absorbed: bool
    consensus: bool
    sample_times: List[float] = field(default_factory=list)
    series: Dict[str, List[Any]] = field(default_factory=dict)

    @property
    def censored(self) -> bool:
        return self.stop_reason == StopReason.EVENT_BUDGET

    def final_configuration(self, graph: Graph) -> Configuration:
        return Configuration(graph, self.final_opinions)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'master_seed': self.master_seed,
            'replicate': self.replicate,
            'stop_reason': str(self.stop_reason),
            'final_time': self.final_time,
            'events_applied': self.events_applied,
            'absorbed': self.absorbed,
            'consensus': self.consensus,
            'mean_flips': float(self.flips.mean()) if self.flips.size else 0.0,
        }


def _record(state: RunState, schedule: ObserverSchedule, result: RunResult, at: float):
    result.sample_times.append(at)
    for name, quantity in schedule.quantities.items():
        result.series.setdefault(name, []).append(quantity(state))


def run(state: RunState, stop: StopCondition, observers: Optional[ObserverSchedule] = None,
        master_seed: int = 0, replicate: int = 0) -> RunResult:
    """
    Advance until the stop condition holds, recording observers on the way.

    Samples falling after an absorption repeat the frozen configuration.
    Samples that the event budget never reached are dropped.
    """
    schedule = observers or ObserverSchedule()
    horizon = stop.horizon
    stop_on_consensus = stop.mode == StopMode.CONSENSUS
    result = RunResult(master_seed, replicate, StopReason.TIME_HORIZON, state.opinions,
                       0.0, 0, state.flips, False, False)
    start_events = state.events_applied
    outcome = REACHED

    for at in schedule.times:
        if at > horizon:
            break
        if outcome == REACHED:
            budget = stop.event_budget - (state.events_applied - start_events)
            outcome = advance(state, at, budget, stop_on_consensus)
        if outcome == HIT_BUDGET:
            break
        _record(state, schedule, result, at)

    if outcome == REACHED:
        budget = stop.event_budget - (state.events_applied - start_events)
        outcome = advance(state, horizon, budget, stop_on_consensus)

    if outcome == HIT_BUDGET:
        # the budget is the requested stop in events mode, a cap otherwise
        reason = StopReason.EVENT_COUNT if stop.mode == StopMode.EVENTS else StopReason.EVENT_BUDGET
    elif outcome == HIT_CONSENSUS:
        reason = StopReason.CONSENSUS
    elif outcome == HIT_ABSORBING and stop.mode != StopMode.TIME:
        reason = StopReason.CONSENSUS if stop_on_consensus and state.is_consensus else StopReason.ABSORBED
    else:
        reason = StopReason.TIME_HORIZON
    if reason == StopReason.TIME_HORIZON and horizon != float('inf'):
        state.time = horizon
    else:
        state.time = state.clock

    result.stop_reason = reason
    result.final_opinions = state.opinions.copy()
    result.final_time = state.time
    result.events_applied = state.events_applied - start_events
    result.flips = state.flips.copy()
    result.absorbed = state.is_absorbing
    result.consensus = state.is_consensus
    logger.debug(
        f"Replicate {replicate} stopped: {reason} after {result.events_applied} events at t={result.final_time:.6g}"
    )
    return result


def simulate_replicate(params: Params, graph: Graph, density: DensityVector, stop: StopCondition,
                       master_seed: int, replicate: int, observers: Optional[ObserverSchedule] = None,
                       batch_size: int = 65536, check_particles: bool = False,
                       listeners: Iterable[Callable[[RunState], EventListener]] = ()) -> RunResult:
    """One full replicate: sample the initial configuration, then run."""
    state = RunState.start(params, graph, density, master_seed, replicate, batch_size, check_particles)
    for make_listener in listeners:
        state.add_listener(make_listener(state))
    return run(state, stop, observers, master_seed, replicate)
