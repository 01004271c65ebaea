# voter/tests/test_core.py
from fractions import Fraction
from itertools import product

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from voter.choices import StopMode, StopReason, Topology
from voter.core import (
    ACTIVE, HIT_ABSORBING, REACHED, Configuration, DensityVector, Graph, ObserverSchedule, Params,
    RunState, StopCondition, advance, apply_arrow, build_graph, centrist_set, compute_tallies,
    is_absorbing, is_arrow_active, is_consensus, replicate_generator, rho_c, run, sample_initial,
    simulate_replicate, step,
)


def _noop(state, event):
    pass


class ParamsTests(SimpleTestCase):

    def test_rejects_out_of_range_values(self):
        with self.assertRaises(ValidationError):
            Params(1, 1)
        with self.assertRaises(ValidationError):
            Params(3, 0)

    def test_derived_flags(self):
        self.assertTrue(Params(2, 1).is_voter_reduction)
        self.assertFalse(Params(3, 1).is_voter_reduction)
        self.assertTrue(Params(3, 1).in_fluctuation_regime)
        self.assertFalse(Params(4, 1).in_fluctuation_regime)
        self.assertTrue(Params(5, 2).in_fluctuation_regime)

    def test_centrist_set_examples(self):
        self.assertEqual(centrist_set(Params(3, 1)), {2})
        self.assertEqual(centrist_set(Params(2, 1)), {1, 2})
        self.assertEqual(centrist_set(Params(4, 1)), frozenset())
        self.assertEqual(centrist_set(Params(5, 2)), {3})
        self.assertEqual(centrist_set(Params(5, 3)), {2, 3, 4})

    def test_centrist_set_matches_interval_form(self):
        for F in range(2, 16):
            for theta in range(1, F + 2):
                interval = set(range(F - theta, theta + 2)) & set(range(1, F + 1))
                self.assertEqual(centrist_set(Params(F, theta)), interval, (F, theta))

    def test_rho_c_examples(self):
        self.assertEqual(rho_c(Params(3, 1), DensityVector.uniform(3)), Fraction(1, 3))
        self.assertEqual(rho_c(Params(5, 3), DensityVector.uniform(5)), Fraction(3, 5))
        self.assertEqual(rho_c(Params(4, 1), DensityVector.symmetric(4, Fraction(1, 20))), 0)


class DensityVectorTests(SimpleTestCase):

    def test_must_sum_to_one(self):
        with self.assertRaises(ValidationError):
            DensityVector((Fraction(1, 2), Fraction(1, 3)))

    def test_rejects_negative_entries(self):
        with self.assertRaises(ValidationError):
            DensityVector((Fraction(3, 2), Fraction(-1, 2)))

    def test_positive_entries_when_required(self):
        with self.assertRaises(ValidationError):
            DensityVector((Fraction(1), Fraction(0)), require_positive=True)

    def test_symmetric_family(self):
        density = DensityVector.symmetric(4, Fraction(1, 20))
        self.assertEqual(density.rho, (Fraction(9, 20), Fraction(1, 20), Fraction(1, 20), Fraction(9, 20)))
        self.assertEqual(DensityVector.symmetric(2, 0).rho, (Fraction(1, 2), Fraction(1, 2)))
        with self.assertRaises(ValidationError):
            DensityVector.symmetric(4, Fraction(1, 2))

    def test_cumulative_table_ends_at_one(self):
        table = DensityVector.uniform(3).cumulative()
        self.assertEqual(table[-1], 1.0)
        self.assertAlmostEqual(table[0], 1 / 3)


class GraphTests(SimpleTestCase):

    def test_edge_counts(self):
        self.assertEqual(build_graph(Topology.CYCLE, 5).num_edges, 5)
        self.assertEqual(build_graph(Topology.PATH, 2).edges, ((0, 1),))
        self.assertEqual(build_graph(Topology.COMPLETE, 6).num_edges, 15)

    def test_rejects_bad_graphs(self):
        with self.assertRaises(ValidationError):
            build_graph(Topology.CUSTOM, None, [(0, 1), (2, 3)])
        with self.assertRaises(ValidationError):
            Graph.custom(3, [(0, 1), (1, 1), (1, 2)])
        with self.assertRaises(ValidationError):
            Graph.custom(3, [(0, 1), (1, 0), (1, 2)])
        with self.assertRaises(ValidationError):
            build_graph(Topology.PATH, 1)
        with self.assertRaises(ValidationError):
            Graph(4, ((0, 1), (1, 2), (2, 3), (0, 2)), Topology.CYCLE)

    def test_arrow_indexing(self):
        graph = Graph.cycle(5)
        self.assertEqual(graph.arrow(0), (0, 1))
        self.assertEqual(graph.arrow(1), (1, 0))
        self.assertEqual(graph.arrow(8), (4, 0))
        self.assertEqual(graph.arrow(9), (0, 4))
        self.assertEqual(sorted(graph.incident(0).tolist()), [0, 4])

    def test_custom_graph_infers_size(self):
        graph = Graph.custom(None, [(0, 1), (1, 2), (2, 0), (2, 3)])
        self.assertEqual(graph.n, 4)
        self.assertTrue(graph.has_edge(3, 2))
        self.assertFalse(graph.has_edge(0, 3))


class SamplingTests(SimpleTestCase):

    def test_point_mass(self):
        config = sample_initial(Graph.cycle(10), DensityVector.point_mass(3, 1), replicate_generator(1, 0))
        self.assertTrue(np.all(config.opinions == 1))

    def test_uniform_frequencies(self):
        N = 10 ** 5
        config = sample_initial(Graph.path(N), DensityVector.uniform(4), replicate_generator(2024, 0))
        sigma = np.sqrt(0.25 * 0.75 / N)
        frequencies = np.bincount(config.opinions, minlength=5)[1:] / N
        for frequency in frequencies:
            self.assertLess(abs(frequency - 0.25), 5 * sigma)

    def test_same_seed_same_configuration(self):
        graph = Graph.cycle(50)
        first = sample_initial(graph, DensityVector.uniform(5), replicate_generator(7, 3))
        second = sample_initial(graph, DensityVector.uniform(5), replicate_generator(7, 3))
        other = sample_initial(graph, DensityVector.uniform(5), replicate_generator(7, 4))
        self.assertEqual(first, second)
        self.assertNotEqual(first, other)


class ArrowRuleTests(SimpleTestCase):

    def setUp(self):
        self.graph = Graph.path(2)

    def config(self, *opinions):
        return Configuration(Graph.path(len(opinions)), np.array(opinions))

    def test_activity_examples(self):
        self.assertFalse(is_arrow_active(self.config(2, 4), 0, 1, 1))
        self.assertTrue(is_arrow_active(self.config(3, 3), 0, 1, 1))
        self.assertFalse(is_arrow_active(self.config(1, 4), 0, 1, 2))
        self.assertTrue(is_arrow_active(self.config(1, 4), 0, 1, 3))

    def test_non_adjacent_arrow_is_rejected(self):
        with self.assertRaises(ValidationError) as context:
            is_arrow_active(self.config(1, 2, 3), 0, 2, 1)
        self.assertEqual(context.exception.code, 'non_adjacent')

    def test_activity_is_symmetric(self):
        rng = np.random.default_rng(5)
        graph = Graph.cycle(8)
        for _ in range(50):
            config = Configuration(graph, rng.integers(1, 6, size=8))
            for u, v in graph.edges:
                self.assertEqual(is_arrow_active(config, u, v, 2), is_arrow_active(config, v, u, 2))

    def test_apply_arrow_examples(self):
        active = apply_arrow(self.config(1, 2, 3, 1), 1, 2, 1)
        self.assertEqual(active.opinions.tolist(), [1, 2, 2, 1])
        blocked = self.config(1, 2, 4, 1)
        self.assertIs(apply_arrow(blocked, 1, 2, 1), blocked)
        equal = self.config(2, 2)
        self.assertIs(apply_arrow(equal, 0, 1, 1), equal)

    def test_voter_reduction_makes_every_arrow_active(self):
        rng = np.random.default_rng(11)
        graph = Graph.cycle(6)
        for _ in range(30):
            config = Configuration(graph, rng.integers(1, 4, size=6))
            self.assertTrue(all(is_arrow_active(config, u, v, 2) for u, v in graph.edges))

    def test_absorbing_and_consensus_examples(self):
        cycle = Graph.cycle(4)
        self.assertTrue(is_absorbing(Configuration(cycle, np.full(4, 2)), 1))
        self.assertTrue(is_absorbing(Configuration(cycle, np.array([1, 3, 1, 3])), 1))
        self.assertFalse(is_absorbing(Configuration(cycle, np.array([1, 2, 3, 3])), 1))
        self.assertTrue(is_consensus([2, 2, 2]))
        self.assertFalse(is_consensus([1, 1, 2]))
        self.assertTrue(is_consensus([4]))


class ExhaustiveAbsorptionTests(SimpleTestCase):
    """Every configuration on cycles of 3 to 6 vertices with F <= 5."""

    def test_absorbing_states(self):
        for N in range(3, 7):
            graph = Graph.cycle(N)
            for F in range(2, 6):
                for opinions in product(range(1, F + 1), repeat=N):
                    config = Configuration(graph, np.array(opinions))
                    for theta in range(1, F):
                        if not is_absorbing(config, theta):
                            continue
                        for u, v in graph.edges:
                            if opinions[u] != opinions[v]:
                                self.assertFalse(is_arrow_active(config, u, v, theta))
                        if F <= 2 * theta + 1:
                            centrists = centrist_set(Params(F, theta))
                            held = sum(1 for opinion in opinions if opinion in centrists)
                            # a centrist is within theta of everyone: all or none
                            self.assertIn(held, (0, N), (N, F, theta, opinions))
                            if held == N:
                                self.assertTrue(is_consensus(config), (N, F, theta, opinions))

    def test_extremist_absorbing_state_without_consensus(self):
        config = Configuration(Graph.cycle(4), np.array([1, 3, 1, 3]))
        self.assertTrue(is_absorbing(config, 1))
        self.assertFalse(is_consensus(config))


class StepTests(SimpleTestCase):

    def test_mean_waiting_time_on_two_vertices(self):
        state = RunState.from_configuration(Params(2, 1), Configuration(Graph.complete(2), np.array([1, 1])),
                                            replicate_generator(3, 0))
        waits = []
        previous = 0.0
        for _ in range(20000):
            _, event = step(state)
            waits.append(event.time - previous)
            previous = event.time
        sigma = 0.5 / np.sqrt(len(waits))
        self.assertLess(abs(np.mean(waits) - 0.5), 5 * sigma)

    def test_frozen_configuration_never_changes(self):
        config = Configuration(Graph.cycle(4), np.array([1, 3, 1, 3]))
        state = RunState.from_configuration(Params(4, 1), config, replicate_generator(4, 0))
        times = []
        for _ in range(200):
            _, event = step(state)
            self.assertFalse(event.changed)
            times.append(event.time)
        self.assertEqual(state.opinions.tolist(), [1, 3, 1, 3])
        self.assertTrue(all(b > a for a, b in zip(times, times[1:])))
        self.assertEqual(state.flips.sum(), 0)

    def test_flip_counts_and_tallies_stay_consistent(self):
        state = RunState.start(Params(5, 2), Graph.cycle(20), DensityVector.uniform(5), 99)
        changes = np.zeros(20, dtype=np.int64)
        for _ in range(3000):
            _, event = step(state)
            if event.changed:
                changes[event.target] += 1
        self.assertEqual(state.flips.tolist(), changes.tolist())
        self.assertEqual(state.tallies.tolist(), compute_tallies(state.opinions, state.graph, 2).tolist())
        self.assertEqual(state.counts.tolist(), np.bincount(state.opinions - 1, minlength=5).tolist())


class BatchKernelTests(SimpleTestCase):
    """The compiled kernel and the per-event path read the same event stream."""

    def pair(self, params, graph, seed, batch_size=512):
        density = DensityVector.uniform(params.F)
        fast = RunState.start(params, graph, density, seed, batch_size=batch_size)
        slow = RunState.start(params, graph, density, seed, batch_size=batch_size)
        slow.add_listener(_noop)
        return fast, slow

    def assertSameState(self, fast, slow):
        self.assertEqual(fast.opinions.tolist(), slow.opinions.tolist())
        self.assertEqual(fast.flips.tolist(), slow.flips.tolist())
        self.assertEqual(fast.tallies.tolist(), slow.tallies.tolist())
        self.assertEqual(fast.counts.tolist(), slow.counts.tolist())
        self.assertEqual(fast.events_applied, slow.events_applied)
        self.assertEqual(fast.clock, slow.clock)

    def test_pathwise_identical_to_time_horizon(self):
        for seed in range(5):
            fast, slow = self.pair(Params(4, 1), Graph.cycle(30), seed)
            self.assertEqual(advance(fast, 40.0, 10 ** 7), advance(slow, 40.0, 10 ** 7))
            self.assertSameState(fast, slow)
            self.assertEqual(fast.time, 40.0)

    def test_pathwise_identical_to_absorption(self):
        for seed in range(5):
            fast, slow = self.pair(Params(3, 1), Graph.cycle(12), seed, batch_size=64)
            outcome = advance(fast, float('inf'), 10 ** 8)
            self.assertEqual(outcome, HIT_ABSORBING)
            self.assertEqual(advance(slow, float('inf'), 10 ** 8), outcome)
            self.assertSameState(fast, slow)
            self.assertEqual(int(fast.tallies[ACTIVE]), 0)

    def test_pathwise_identical_on_complete_graph(self):
        fast, slow = self.pair(Params(6, 2), Graph.complete(9), 17)
        advance(fast, 5.0, 10 ** 6)
        advance(slow, 5.0, 10 ** 6)
        self.assertSameState(fast, slow)

    def test_split_advances_match_one_advance(self):
        density = DensityVector.uniform(4)
        whole = RunState.start(Params(4, 2), Graph.cycle(25), density, 8)
        split = RunState.start(Params(4, 2), Graph.cycle(25), density, 8)
        self.assertEqual(advance(whole, 12.0, 10 ** 6), REACHED)
        for until in (1.0, 2.5, 7.0, 12.0):
            advance(split, until, 10 ** 6)
        self.assertEqual(whole.opinions.tolist(), split.opinions.tolist())
        self.assertEqual(whole.events_applied, split.events_applied)


class RunTests(SimpleTestCase):

    def test_two_vertex_voter_model_reaches_consensus(self):
        stop = StopCondition(StopMode.ABSORPTION)
        for replicate in range(20):
            result = simulate_replicate(Params(2, 1), Graph.path(2), DensityVector.uniform(2), stop, 5, replicate)
            self.assertTrue(result.consensus)
            self.assertTrue(result.absorbed)
            self.assertEqual(len(set(result.final_opinions.tolist())), 1)

    def test_absorbing_start_applies_no_events(self):
        result = simulate_replicate(Params(3, 1), Graph.cycle(6), DensityVector.point_mass(3, 2),
                                    StopCondition(StopMode.ABSORPTION), 1, 0)
        self.assertEqual(result.events_applied, 0)
        self.assertEqual(result.stop_reason, StopReason.ABSORBED)
        self.assertEqual(result.flips.sum(), 0)

    def test_absorbing_state_is_never_left(self):
        config = Configuration(Graph.cycle(6), np.array([1, 3, 1, 3, 1, 3]))
        state = RunState.from_configuration(Params(4, 1), config, replicate_generator(2, 0))
        result = run(state, StopCondition(StopMode.TIME, t_max=50.0))
        self.assertEqual(result.final_opinions.tolist(), [1, 3, 1, 3, 1, 3])
        self.assertEqual(result.stop_reason, StopReason.TIME_HORIZON)
        self.assertEqual(result.final_time, 50.0)

    def test_same_seed_same_result(self):
        stop = StopCondition(StopMode.TIME, t_max=30.0)
        schedule = ObserverSchedule.named((0, 10, 20, 30), ['interface_density', 'opinion_counts'])
        args = (Params(4, 1), Graph.cycle(40), DensityVector.uniform(4), stop, 123, 6, schedule)
        first = simulate_replicate(*args)
        second = simulate_replicate(*args)
        self.assertEqual(first.to_dict(), second.to_dict())
        self.assertEqual(first.final_opinions.tolist(), second.final_opinions.tolist())
        self.assertEqual(first.series['interface_density'], second.series['interface_density'])

    def test_event_budget_is_reported_as_censoring(self):
        stop = StopCondition(StopMode.ABSORPTION, event_budget=5)
        result = simulate_replicate(Params(3, 1), Graph.cycle(200), DensityVector.uniform(3), stop, 9, 0)
        self.assertEqual(result.stop_reason, StopReason.EVENT_BUDGET)
        self.assertTrue(result.censored)
        self.assertEqual(result.events_applied, 5)

    def test_requested_event_count_is_not_censoring(self):
        stop = StopCondition(StopMode.EVENTS, event_budget=50)
        result = simulate_replicate(Params(3, 1), Graph.cycle(200), DensityVector.uniform(3), stop, 9, 0)
        self.assertEqual(result.stop_reason, StopReason.EVENT_COUNT)
        self.assertFalse(result.censored)
        self.assertEqual(result.events_applied, 50)

    def test_consensus_stop(self):
        stop = StopCondition(StopMode.CONSENSUS)
        result = simulate_replicate(Params(2, 1), Graph.path(5), DensityVector.uniform(2), stop, 4, 0)
        self.assertEqual(result.stop_reason, StopReason.CONSENSUS)
        self.assertTrue(result.consensus)

    def test_samples_after_absorption_repeat_the_frozen_state(self):
        schedule = ObserverSchedule.named((0, 1, 2), ['snapshot', 'interface_density'])
        result = simulate_replicate(Params(3, 1), Graph.cycle(5), DensityVector.point_mass(3, 1),
                                    StopCondition(StopMode.ABSORPTION), 1, 0, schedule)
        self.assertEqual(result.sample_times, [0.0, 1.0, 2.0])
        self.assertEqual(result.series['interface_density'], [0.0, 0.0, 0.0])
        for snapshot in result.series['snapshot']:
            self.assertEqual(snapshot.tolist(), [1] * 5)

    def test_stop_condition_validation(self):
        with self.assertRaises(ValidationError):
            StopCondition(StopMode.TIME)
        with self.assertRaises(ValidationError):
            StopCondition('forever')
        self.assertEqual(StopCondition().horizon, float('inf'))
