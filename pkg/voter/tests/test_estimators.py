# voter/tests/test_estimators.py
import math
from fractions import Fraction
from unittest import skipUnless

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from voter.choices import StopMode
from voter.core import Configuration, DensityVector, Graph, Params, StopCondition, replicate_generator, simulate_replicate
from voter.estimators import (
    FIXATION_PROXY_LABEL, changeover_deviation_probability, changeover_distribution, clopper_pearson,
    count_changeovers, count_edge_types, domain_length_stats, estimate_changeover_mean,
    estimate_consensus_probability, estimate_flip_growth, estimate_observable, estimate_pair_agreement,
    estimate_particle_density, flip_counts, interface_density, ld_decay_curve, martingale_check,
    nonpositive_window_fraction, proportion_estimate, run_replicates, summarize_observers,
    window_weight_sums, window_weight_sums_from_xi,
)
from voter.service import EngineSettings, ReplicateService, SimulationException

ACCEPTANCE = getattr(settings, 'CVM_ACCEPTANCE_TESTS', False)


def _service(**overrides):
    return ReplicateService(EngineSettings(**overrides))


class IntervalTests(SimpleTestCase):

    def test_proportion_estimate(self):
        estimate = proportion_estimate(50, 100, 0.99)
        self.assertEqual(estimate.point, 0.5)
        self.assertAlmostEqual(estimate.half_width, 2.5758293 * 0.05, places=6)
        self.assertTrue(estimate.contains(0.45))

    def test_proportion_needs_trials(self):
        with self.assertRaises(ValidationError):
            proportion_estimate(0, 0)

    def test_clopper_pearson_edges(self):
        self.assertEqual(clopper_pearson(0, 10)[0], 0.0)
        self.assertEqual(clopper_pearson(10, 10)[1], 1.0)
        lower, upper = clopper_pearson(5, 10)
        self.assertLess(lower, 0.5)
        self.assertGreater(upper, 0.5)


class ConsensusTests(SimpleTestCase):

    def test_two_opinions_always_reach_consensus(self):
        for graph in (Graph.cycle(12), Graph.complete(6), Graph.custom(None, [(0, 1), (1, 2), (1, 3), (3, 4)])):
            report = estimate_consensus_probability(Params(2, 1), DensityVector.uniform(2), graph, 200, seed=1)
            self.assertEqual(report.consensus, 200)
            self.assertEqual(report.estimate.point, 1.0)

    def test_three_opinions_meet_centrist_bound(self):
        report = estimate_consensus_probability(Params(3, 1), DensityVector.uniform(3), Graph.cycle(12), 2000, seed=2)
        self.assertEqual(report.rho_c, Fraction(1, 3))
        self.assertTrue(report.meets_lower_bound)
        self.assertEqual(report.censored, 0)

    def test_frozen_states_without_consensus(self):
        report = estimate_consensus_probability(Params(4, 1), DensityVector.uniform(4), Graph.cycle(12), 300, seed=3)
        self.assertGreater(report.non_consensus_absorbed, 0)
        self.assertEqual(report.replicates, 300)

    def test_censored_replicates_stay_in_denominator(self):
        report = estimate_consensus_probability(Params(3, 1), DensityVector.uniform(3), Graph.cycle(50), 40, seed=4,
                                                event_budget=5)
        self.assertGreater(report.censored, 0)
        self.assertEqual(report.consensus + report.non_consensus_absorbed + report.censored, 40)
        self.assertEqual(report.estimate.replicates, 40)

    def test_deterministic(self):
        first = estimate_consensus_probability(Params(3, 1), DensityVector.uniform(3), Graph.cycle(10), 100, seed=9)
        second = estimate_consensus_probability(Params(3, 1), DensityVector.uniform(3), Graph.cycle(10), 100, seed=9)
        self.assertEqual(first, second)

    @skipUnless(ACCEPTANCE, "full-size acceptance run")
    def test_three_opinions_full(self):
        report = estimate_consensus_probability(Params(3, 1), DensityVector.uniform(3), Graph.cycle(12), 20000, seed=2)
        self.assertTrue(report.meets_lower_bound)
        self.assertEqual(report.censored, 0)


class ReplicateOrderTests(SimpleTestCase):

    def test_threads_do_not_change_results(self):
        stop = StopCondition(StopMode.TIME, t_max=20.0)
        args = (Params(5, 2), Graph.cycle(30), DensityVector.uniform(5), stop, 77, 12)
        with _service(threads=1) as serial, _service(threads=2) as pooled:
            one = run_replicates(*args, service=serial)
            two = run_replicates(*args, service=pooled)
        self.assertEqual([r.replicate for r in two], list(range(12)))
        for a, b in zip(one, two):
            np.testing.assert_array_equal(a.final_opinions, b.final_opinions)
            self.assertEqual(a.events_applied, b.events_applied)
            self.assertEqual(a.final_time, b.final_time)

    def test_zero_replicates_rejected(self):
        stop = StopCondition(StopMode.TIME, t_max=1.0)
        with self.assertRaises(ValidationError):
            run_replicates(Params(3, 1), Graph.cycle(5), DensityVector.uniform(3), stop, 1, 0)


class ObservableTests(SimpleTestCase):

    def test_pair_agreement_at_start(self):
        n = 4000
        summaries = estimate_pair_agreement(Params(3, 1), DensityVector.uniform(3), 20, [(0, 5), (3, 3)],
                                            [0.0], n, seed=5)
        self.assertAlmostEqual(summaries[(0, 5)].means[0], 1 / 3, delta=4 * math.sqrt(2 / 9 / n))
        self.assertEqual(summaries[(3, 3)].means[0], 1.0)
        self.assertEqual(summaries[(3, 3)].half_widths[0], 0.0)

    def test_pair_outside_cycle(self):
        with self.assertRaises(ValidationError):
            estimate_pair_agreement(Params(3, 1), DensityVector.uniform(3), 10, [(0, 10)], [0.0], 5, seed=1)

    def test_adjacent_agreement_grows(self):
        summaries = estimate_pair_agreement(Params(3, 1), DensityVector.uniform(3), 100, [(10, 11)],
                                            [0.0, 500.0], 40, seed=6)
        means = summaries[(10, 11)].means
        self.assertGreater(means[1], means[0])

    def test_particle_density_at_start(self):
        summary = estimate_particle_density(Params(4, 1), DensityVector.uniform(4), 100, [0.0], 500, seed=7)
        self.assertAlmostEqual(summary.means[0], 10 / 8, delta=0.03)

    def test_particle_density_of_monochromatic_start(self):
        summary = estimate_particle_density(Params(4, 1), DensityVector.point_mass(4, 2), 30, [0.0, 5.0], 5, seed=7)
        np.testing.assert_array_equal(summary.means, [0.0, 0.0])

    def test_particle_density_decays_in_fluctuation_regime(self):
        summary = estimate_particle_density(Params(3, 1), DensityVector.uniform(3), 100, [0.0, 500.0], 20, seed=8)
        self.assertLess(summary.means[1], 0.25 * summary.means[0])

    @skipUnless(ACCEPTANCE, "full-size acceptance run")
    def test_particle_density_decay_full(self):
        summary = estimate_particle_density(Params(3, 1), DensityVector.uniform(3), 200, [0.0, 3000.0], 200, seed=8)
        self.assertLess(summary.means[1], 0.05 * summary.means[0])

    def test_vector_observers_split_by_opinion(self):
        times = (0.0, 1.0, 4.0)
        results = run_replicates(Params(3, 1), Graph.cycle(9), DensityVector.uniform(3),
                                 StopCondition(StopMode.TIME, t_max=4.0), 3, 20,
                                 names=('opinion_counts', 'interface_density'), times=times)
        summaries = summarize_observers(results, times, ('opinion_counts', 'interface_density'), 0.99)
        self.assertEqual(set(summaries),
                         {'opinion_counts[1]', 'opinion_counts[2]', 'opinion_counts[3]', 'interface_density'})
        totals = sum(summaries[f"opinion_counts[{j}]"].means for j in (1, 2, 3))
        np.testing.assert_allclose(totals, [9.0, 9.0, 9.0])

    def test_unknown_observer(self):
        with self.assertRaises(ValidationError):
            estimate_observable(Params(3, 1), DensityVector.uniform(3), Graph.cycle(5), 'nonsense', [0.0], 2, seed=1)

    def test_fully_censored_series_is_a_run_failure(self):
        results = run_replicates(Params(3, 1), Graph.cycle(40), DensityVector.uniform(3),
                                 StopCondition(StopMode.TIME, t_max=50.0, event_budget=1), 3, 4,
                                 names=('interface_density',), times=(0.0, 50.0))
        with self.assertRaises(SimulationException) as ctx:
            summarize_observers(results, (0.0, 50.0), ('interface_density',), 0.99)
        self.assertEqual(ctx.exception.code, 'no_data')


class RegimeContrastTests(SimpleTestCase):
    """
    Interfaces die out when a centrist opinion exists; blockades survive
    when it does not. Replicates run with the particle-count check on.
    """
    times = (0.0, 2000.0)

    def _interface_ratio(self, replicates, seed):
        summary = estimate_observable(Params(3, 1), DensityVector.uniform(3), Graph.cycle(1000),
                                      'interface_density', self.times, replicates, seed=seed)
        self.assertEqual(summary.censored, 0)
        return summary.means[1] / summary.means[0]

    def _blockade_ratio(self, replicates, seed):
        summary = estimate_observable(Params(4, 1), DensityVector.symmetric(4, Fraction(1, 20)), Graph.cycle(1000),
                                      'blockade_density', self.times, replicates, seed=seed)
        self.assertEqual(summary.censored, 0)
        self.assertGreater(summary.means[0], 0)
        return summary.means[1] / summary.means[0]

    def test_interfaces_decay_with_centrists(self):
        self.assertLess(self._interface_ratio(10, seed=16), 0.2)

    def test_blockades_persist_without_centrists(self):
        self.assertGreater(self._blockade_ratio(10, seed=17), 0.5)

    @skipUnless(ACCEPTANCE, "full-size acceptance run")
    def test_regime_contrast_full(self):
        self.assertLess(self._interface_ratio(200, seed=16), 0.2)
        self.assertGreater(self._blockade_ratio(200, seed=17), 0.5)


class MartingaleTests(SimpleTestCase):

    def test_counts_keep_their_mean(self):
        with _service(confidence_level=0.9999) as service:
            report = martingale_check(Params(3, 1), DensityVector.uniform(3), Graph.complete(10),
                                      [0, 1, 5, 25], 2000, seed=10, service=service)
        self.assertEqual(report.expected[2], Fraction(10, 3))
        self.assertTrue(report.holds, report.within_ci())
        for mean, half in zip(report.centrist.means, report.centrist.half_widths):
            self.assertLessEqual(abs(mean - float(report.expected_centrist)), half)

    @skipUnless(ACCEPTANCE, "full-size acceptance run")
    def test_counts_keep_their_mean_full(self):
        report = martingale_check(Params(3, 1), DensityVector.uniform(3), Graph.complete(10),
                                  [0, 1, 5, 25], 50000, seed=10)
        self.assertTrue(report.holds, report.within_ci())


class ChangeoverTests(SimpleTestCase):

    def test_count_changeovers(self):
        self.assertEqual(count_changeovers(list('HHHH')), 0)
        self.assertEqual(count_changeovers(['H', 'T', 'H', 'T']), 3)
        with self.assertRaises(ValidationError):
            count_changeovers([1])

    def test_count_edge_types(self):
        counts = count_edge_types([1, 2, 1], F=2)
        np.testing.assert_array_equal(counts, [[0, 1], [1, 0]])
        counts = count_edge_types([3, 3, 3, 3])
        self.assertEqual(int(counts.sum() - np.trace(counts)), 0)

    def test_edge_types_concentrate(self):
        N = 100000
        sequence = replicate_generator(12, 0).integers(1, 5, size=N + 1)
        counts = count_edge_types(sequence, F=4)
        sigma = math.sqrt(N * (1 / 16) * (15 / 16))
        for i in range(4):
            for j in range(4):
                if i != j:
                    self.assertLess(abs(counts[i, j] - N / 16), 5 * sigma)

    def test_distribution(self):
        distribution = changeover_distribution(0.3, 50)
        self.assertAlmostEqual(distribution.sum(), 1.0, places=12)
        self.assertAlmostEqual(float(np.dot(np.arange(51), distribution)), 2 * 50 * 0.3 * 0.7, places=9)

    def test_distribution_matches_paths(self):
        for length in range(2, 9):
            N = length - 1
            distribution = np.zeros(N + 1)
            for bits in range(2 ** length):
                path = [(bits >> k) & 1 for k in range(length)]
                heads = sum(path)
                distribution[count_changeovers(path)] += 0.3 ** heads * 0.7 ** (length - heads)
            np.testing.assert_allclose(changeover_distribution(0.3, N), distribution, atol=1e-12)

    def test_mean(self):
        estimate = estimate_changeover_mean(0.5, 100, 100000, seed=13)
        self.assertTrue(estimate.contains(50), estimate)

    def test_decay_curve(self):
        points = ld_decay_curve(0.5, 0.1, [100, 200, 400], 20000, seed=14)
        probabilities = [point.probability for point in points]
        self.assertGreater(probabilities[0], probabilities[1])
        self.assertGreater(probabilities[1], probabilities[2])
        first = points[0]
        sigma = math.sqrt(first.exact_probability * (1 - first.exact_probability) / first.replicates)
        self.assertLess(abs(first.probability - first.exact_probability), 5 * sigma)

    def test_impossible_deviation(self):
        self.assertEqual(changeover_deviation_probability(0.5, 1.0, 50), 0.0)
        point = ld_decay_curve(0.5, 1.5, [50], 100, seed=1)[0]
        self.assertEqual(point.deviations, 0)
        self.assertTrue(point.censored)
        self.assertEqual(point.log_probability, math.log(1 / 100))

    def test_invalid_arguments(self):
        with self.assertRaises(ValidationError):
            ld_decay_curve(1.0, 0.1, [10], 10, seed=1)
        with self.assertRaises(ValidationError):
            ld_decay_curve(0.5, 0.0, [10], 10, seed=1)


class WindowWeightTests(SimpleTestCase):

    def test_small_window(self):
        report = window_weight_sums_from_xi([-1, 3, -1], theta=1)
        np.testing.assert_array_equal(report.weights, [-1, 1, -1])
        np.testing.assert_array_equal(report.min_sums, [-1, 0, -1])
        self.assertTrue(report.any_nonpositive)

    def test_empty_piles(self):
        report = window_weight_sums([2, 2, 2, 2], theta=1)
        np.testing.assert_array_equal(report.min_sums, [0, 0, 0])
        self.assertTrue(report.any_nonpositive)

    def test_nonpositive_share_falls_with_length(self):
        opinions = replicate_generator(15, 0).integers(1, 11, size=200001)
        weights = window_weight_sums(opinions, theta=2).weights
        shares = [nonpositive_window_fraction(weights, length) for length in (10, 500, 5000)]
        self.assertGreater(shares[0], shares[1])
        self.assertGreater(shares[1], shares[2])

    def test_window_length_range(self):
        with self.assertRaises(ValidationError):
            nonpositive_window_fraction(np.array([1, 2]), 3)


class DomainTests(SimpleTestCase):

    def test_monochromatic_cycle(self):
        stats = domain_length_stats(Configuration(Graph.cycle(7), np.full(7, 2)))
        np.testing.assert_array_equal(stats.lengths, [7])

    def test_alternating_cycle(self):
        stats = domain_length_stats(Configuration(Graph.cycle(4), np.array([1, 3, 1, 3])))
        self.assertEqual(stats.histogram, {1: 4})
        self.assertEqual(interface_density(Configuration(Graph.cycle(4), np.array([1, 3, 1, 3]))), 1.0)

    def test_wrapping_domain(self):
        stats = domain_length_stats(Configuration(Graph.cycle(6), np.array([1, 1, 2, 2, 2, 1])))
        self.assertEqual(sorted(stats.lengths.tolist()), [3, 3])

    def test_path_domains(self):
        stats = domain_length_stats(Configuration(Graph.path(6), np.array([1, 1, 2, 2, 2, 3])))
        self.assertEqual(stats.lengths.tolist(), [2, 3, 1])
        self.assertEqual(stats.max, 3)

    def test_complete_graph_rejected(self):
        with self.assertRaises(ValidationError):
            domain_length_stats(Configuration(Graph.complete(3), np.array([1, 1, 2])))


class FlipCountTests(SimpleTestCase):

    def test_absorbing_start(self):
        result = simulate_replicate(Params(3, 1), Graph.cycle(20), DensityVector.point_mass(3, 2),
                                    StopCondition(StopMode.TIME, t_max=10.0), 1, 0)
        np.testing.assert_array_equal(flip_counts(result), np.zeros(20))

    def test_flips_grow_in_fluctuation_regime(self):
        summary = estimate_flip_growth(Params(3, 1), DensityVector.uniform(3), Graph.cycle(200), [50.0, 400.0],
                                       10, seed=16)
        self.assertEqual(summary.label, FIXATION_PROXY_LABEL)
        self.assertGreater(summary.means[1], summary.means[0])

    @skipUnless(ACCEPTANCE, "full-size acceptance run")
    def test_flips_stabilize_in_fixation_regime(self):
        density = DensityVector.symmetric(4, Fraction(1, 20))
        summary = estimate_flip_growth(Params(4, 1), density, Graph.cycle(1000), [500.0, 1000.0], 20, seed=17)
        self.assertLess(summary.means[1], 1.1 * summary.means[0])
