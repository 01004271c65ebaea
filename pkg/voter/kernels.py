# voter/kernels.py
from django.core.exceptions import ValidationError
from numba import njit

from .core import (
    ACTIVE, BLOCKADE, PARTICLES,
    BATCH_EXHAUSTED, HIT_ABSORBING, HIT_BUDGET, HIT_CONSENSUS, REACHED,
    RunState,
)


# -----------------------
# JIT kernels
# -----------------------

@njit(cache=True, nogil=True)
def _retarget_nb(opinions, y, new, edge_u, edge_v, inc_ptr, inc_edges, theta, tallies):
    """
    Set opinion(y) = new and patch the edge tallies of the edges touching y.
    Returns the change in the edge charge total.
    """
    old = opinions[y]
    before = 0
    for m in range(inc_ptr[y], inc_ptr[y + 1]):
        k = inc_edges[m]
        other = edge_u[k] + edge_v[k] - y
        gap = abs(opinions[other] - old)
        before += gap
        if gap > theta:
            tallies[BLOCKADE] -= 1
        elif gap > 0:
            tallies[ACTIVE] -= 1
    opinions[y] = new
    after = 0
    for m in range(inc_ptr[y], inc_ptr[y + 1]):
        k = inc_edges[m]
        other = edge_u[k] + edge_v[k] - y
        gap = abs(opinions[other] - new)
        after += gap
        if gap > theta:
            tallies[BLOCKADE] += 1
        elif gap > 0:
            tallies[ACTIVE] += 1
    tallies[PARTICLES] += after - before
    return after - before


@njit(cache=True, nogil=True)
def _advance_nb(opinions, flips, counts, tallies, edge_u, edge_v, inc_ptr, inc_edges,
                theta, n, waits, arrows, cursor, clock, until, budget, stop_on_consensus,
                check_particles):
    """
    Consume events from waits/arrows starting at cursor.
    Returns (cursor, clock, applied, outcome, increases).
    """
    applied = 0
    increases = 0
    outcome = BATCH_EXHAUSTED
    while cursor < waits.shape[0]:
        if tallies[ACTIVE] == 0:
            outcome = HIT_ABSORBING
            break
        if applied >= budget:
            outcome = HIT_BUDGET
            break
        t = clock + waits[cursor]
        if t > until:
            outcome = REACHED
            break
        a = arrows[cursor]
        k = a >> 1
        if a & 1 == 0:
            x = edge_u[k]
            y = edge_v[k]
        else:
            x = edge_v[k]
            y = edge_u[k]
        source = opinions[x]
        target = opinions[y]
        clock = t
        cursor += 1
        applied += 1
        if source != target and abs(source - target) <= theta:
            delta = _retarget_nb(opinions, y, source, edge_u, edge_v, inc_ptr, inc_edges, theta, tallies)
            if check_particles and delta > 0:
                increases += 1
            flips[y] += 1
            counts[target - 1] -= 1
            counts[source - 1] += 1
            if stop_on_consensus and counts[source - 1] == n:
                outcome = HIT_CONSENSUS
                break
    return cursor, clock, applied, outcome, increases


def advance_batched(state: RunState, until: float, budget: int, stop_on_consensus: bool) -> int:
    """Batch counterpart of the per-event loop; consumes the same stream."""
    graph = state.graph
    remaining = int(budget)
    while True:
        waits, arrows, cursor = state.stream.pending()
        cursor, clock, applied, outcome, increases = _advance_nb(
            state.opinions, state.flips, state.counts, state.tallies,
            graph.edge_u, graph.edge_v, graph.incident_ptr, graph.incident_edges,
            state.params.theta, graph.n, waits, arrows, cursor, state.clock, float(until),
            remaining, stop_on_consensus, state.check_particles,
        )
        state.stream.cursor = cursor
        state.clock = clock
        state.events_applied += applied
        remaining -= applied
        if increases:
            raise ValidationError(
                f"Edge charge total increased {increases} time(s) before t={clock}", code='particle_increase'
            )
        if outcome != BATCH_EXHAUSTED:
            return outcome
