# voter/particles.py
"""
Edge-charge view of a configuration on a cycle or path.

Edge k joins vertices k and k + 1 (mod N) and carries the pile
xi(k) = opinion(k + 1) - opinion(k). A pile is empty, active
(0 < |xi| <= theta) or a blockade (|xi| > theta).
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from django.core.exceptions import ValidationError

from .choices import PileKind, Topology
from .core import LINEAR_TOPOLOGIES, ArrowEvent, Configuration, Graph, Params, RunState

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EdgeConfiguration:
    topology: str
    xi: np.ndarray
    theta: int

    def __post_init__(self):
        if self.topology not in LINEAR_TOPOLOGIES:
            raise ValidationError(
                f"Edge piles are defined on cycles and paths, not {self.topology!r}", code='invalid_topology'
            )
        object.__setattr__(self, 'xi', np.asarray(self.xi, dtype=np.int64))

    @property
    def num_vertices(self) -> int:
        return self.xi.size if self.topology == Topology.CYCLE else self.xi.size + 1

    def __eq__(self, other):
        if not isinstance(other, EdgeConfiguration):
            return NotImplemented
        return (self.topology == other.topology and self.theta == other.theta
                and np.array_equal(self.xi, other.xi))

    __hash__ = None


@dataclass(frozen=True)
class PileClass:
    kind: str
    charge: int
    size: int


@dataclass(frozen=True)
class ParticleStats:
    total: int
    active: int
    frozen: int
    blockade_count: int
    density: float


def _require_linear(graph: Graph):
    if not graph.is_linear:
        raise ValidationError(
            f"Edge piles are defined on cycles and paths, not {graph.topology!r}", code='invalid_topology'
        )


def project_edges(config: Configuration, params: Params) -> EdgeConfiguration:
    """xi(k) = opinion(k + 1) - opinion(k) for every edge k."""
    graph = config.graph
    _require_linear(graph)
    opinions = config.opinions
    xi = opinions[graph.edge_v] - opinions[graph.edge_u]
    if np.any(np.abs(xi) > params.F - 1):
        raise ValidationError("Pile larger than F - 1", code='invalid_configuration')
    return EdgeConfiguration(graph.topology, xi, params.theta)


def classify_pile(value: int, theta: int) -> PileClass:
    size = abs(int(value))
    charge = int(np.sign(value))
    if size == 0:
        return PileClass(PileKind.EMPTY, 0, 0)
    if size <= theta:
        return PileClass(PileKind.ACTIVE, charge, size)
    return PileClass(PileKind.BLOCKADE, charge, size)


def _crossing_edges(topology: str, n: int, x: int, y: int) -> Tuple[int, Optional[int]]:
    """
    Edge crossed by arrow x -> y and the other edge at y, or None when
    y is a path endpoint.
    """
    if topology == Topology.CYCLE:
        left, right = (y - 1) % n, y
        if x == (y + 1) % n:
            return right, left
        if x == (y - 1) % n:
            return left, right
    else:
        left = y - 1 if y > 0 else None
        right = y if y < n - 1 else None
        if x == y + 1:
            return right, left
        if x == y - 1:
            return left, right
    raise ValidationError(f"Vertices {x} and {y} are not adjacent", code='non_adjacent')


def _apply_to_piles(xi: np.ndarray, topology: str, n: int, theta: int, x: int, y: int) -> bool:
    """In-place pile update. Returns whether the arrow was active."""
    cross, other = _crossing_edges(topology, n, x, y)
    moved = int(xi[cross])
    if abs(moved) > theta:
        return False
    if moved:
        if other is not None:
            xi[other] += moved
        xi[cross] = 0
    return True


def evolve_edges(edges: EdgeConfiguration, event: ArrowEvent) -> EdgeConfiguration:
    """
    Move the pile crossed by the event onto the other edge at the target,
    merging with what sits there. Blockades stay put. Opinions are never
    consulted.
    """
    xi = edges.xi.copy()
    _apply_to_piles(xi, edges.topology, edges.num_vertices, edges.theta, event.source, event.target)
    return EdgeConfiguration(edges.topology, xi, edges.theta)


def particle_stats(edges: EdgeConfiguration) -> ParticleStats:
    sizes = np.abs(edges.xi)
    active_mask = sizes <= edges.theta
    total = int(sizes.sum())
    active = int(sizes[active_mask].sum())
    return ParticleStats(
        total=total,
        active=active,
        frozen=total - active,
        blockade_count=int(np.count_nonzero(~active_mask)),
        density=total / sizes.size if sizes.size else 0.0,
    )


def blockade_density(edges: EdgeConfiguration) -> float:
    return particle_stats(edges).blockade_count / edges.xi.size


def zeta_projection(config: Configuration, params: Params) -> np.ndarray:
    """1 for extremists, 0 for opinions within theta of every other opinion."""
    centrists = np.array(params.centrist_opinions(), dtype=np.int64)
    return (~np.isin(config.opinions, centrists)).astype(np.int8)


@dataclass(frozen=True, eq=False)
class AncestryState:
    origin: np.ndarray

    @classmethod
    def initial(cls, n: int) -> 'AncestryState':
        return cls(np.arange(n, dtype=np.int64))

    def __eq__(self, other):
        if not isinstance(other, AncestryState):
            return NotImplemented
        return np.array_equal(self.origin, other.origin)

    __hash__ = None


def ancestry_update(ancestry: AncestryState, event: ArrowEvent, active: bool) -> AncestryState:
    """Active arrows pass the source's ancestor to the target."""
    if not active:
        return ancestry
    origin = ancestry.origin.copy()
    origin[event.target] = origin[event.source]
    return AncestryState(origin)


def descendant_sets(ancestry: AncestryState) -> List[np.ndarray]:
    n = ancestry.origin.size
    order = np.argsort(ancestry.origin, kind='stable')
    bounds = np.searchsorted(ancestry.origin[order], np.arange(n + 1))
    return [order[bounds[z]:bounds[z + 1]] for z in range(n)]


def is_interval(vertices: np.ndarray, n: int, topology: str) -> bool:
    """Contiguous run of vertices, cyclically on a cycle."""
    if vertices.size == 0 or vertices.size == n:
        return True
    marks = np.zeros(n, dtype=bool)
    marks[vertices] = True
    starts = marks & ~np.roll(marks, 1)
    if topology == Topology.CYCLE:
        return int(np.count_nonzero(starts)) == 1
    marks_shifted = np.concatenate(([False], marks[:-1]))
    return int(np.count_nonzero(marks & ~marks_shifted)) == 1


def check_ancestry(ancestry: AncestryState, opinions: np.ndarray, initial: np.ndarray,
                   topology: Optional[str] = None):
    if not np.array_equal(opinions, initial[ancestry.origin]):
        raise ValidationError("Opinion differs from its ancestor's initial opinion", code='ancestry_mismatch')
    if topology in LINEAR_TOPOLOGIES:
        n = opinions.size
        for z, members in enumerate(descendant_sets(ancestry)):
            if not is_interval(members, n, topology):
                raise ValidationError(f"Descendants of {z} do not form an interval", code='ancestry_mismatch')


class EdgeCouplingTracker:
    """
    Event listener evolving the pile configuration on its own and checking
    that it matches the projection of the opinions after every event.
    """

    def __init__(self, state: RunState):
        _require_linear(state.graph)
        self.params = state.params
        self.edges = project_edges(state.configuration, state.params)
        self.total = particle_stats(self.edges).total
        self.events = 0

    def __call__(self, state: RunState, event: ArrowEvent):
        before = self.edges
        cross, _ = _crossing_edges(before.topology, before.num_vertices, event.source, event.target)
        if classify_pile(before.xi[cross], self.params.theta).kind == PileKind.BLOCKADE and event.active:
            raise ValidationError("Arrow across a blockade was active", code='coupling_mismatch')
        self.edges = evolve_edges(before, event)
        self.events += 1
        projected = project_edges(state.configuration, self.params)
        if self.edges != projected:
            logger.error(f"Pile mismatch after event {self.events} at t={event.time}")
            raise ValidationError(
                f"Edge piles diverged from the opinion projection after {self.events} events",
                code='coupling_mismatch',
            )
        total = particle_stats(self.edges).total
        if total > self.total:
            raise ValidationError("Edge charge total increased", code='particle_increase')
        if state.graph.topology == Topology.CYCLE and (self.total - total) % 2:
            raise ValidationError("Edge charge total changed by an odd amount", code='particle_increase')
        self.total = total


class AncestryTracker:
    """Event listener following the ancestor of every vertex."""

    def __init__(self, state: RunState, check_intervals: bool = True):
        self.ancestry = AncestryState.initial(state.graph.n)
        self.topology = state.graph.topology if check_intervals else None

    def __call__(self, state: RunState, event: ArrowEvent):
        self.ancestry = ancestry_update(self.ancestry, event, event.active)
        check_ancestry(self.ancestry, state.opinions, state.initial, self.topology)


class VoterCouplingTracker:
    """
    Runs a two-opinion voter model on the same arrows, every arrow active,
    started from the centrist projection. Valid when F <= 2 theta + 1.
    """

    def __init__(self, state: RunState):
        if not state.params.in_fluctuation_regime:
            raise ValidationError("Voter coupling needs F <= 2 theta + 1", code='invalid_params')
        self.params = state.params
        self.zeta = zeta_projection(state.configuration, state.params)

    def __call__(self, state: RunState, event: ArrowEvent):
        self.zeta[event.target] = self.zeta[event.source]
        if not np.array_equal(self.zeta, zeta_projection(state.configuration, self.params)):
            raise ValidationError("Centrist projection left the voter coupling", code='coupling_mismatch')
