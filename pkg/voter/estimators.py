# voter/estimators.py
"""
Monte Carlo and combinatorial statistics on top of the engine.

Replicate results are merged in replicate-index order, so an estimate
depends only on (seed, inputs), never on thread scheduling.
"""
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from django.core.exceptions import ValidationError
from scipy import stats

from .analytics import WeightFunction
from .choices import StopMode, Topology
from .core import (
    Configuration, DensityVector, Graph, ObserverSchedule, Params, RunResult, StopCondition,
    replicate_generator, rho_c, simulate_replicate,
)
from .service import EngineSettings, ReplicateService, SimulationException

logger = logging.getLogger(__name__)

FIXATION_PROXY_LABEL = 'flip-count stabilization proxy (finite-horizon stand-in for fixation)'
TORUS_CAVEAT = 'cycle of finite size used as a proxy for the integer line'


def z_value(level: float) -> float:
    return float(stats.norm.ppf(0.5 + level / 2))


@dataclass(frozen=True)
class EstimateWithCI:
    point: float
    half_width: float
    level: float
    replicates: int

    @property
    def lower(self) -> float:
        return self.point - self.half_width

    @property
    def upper(self) -> float:
        return self.point + self.half_width

    def contains(self, value) -> bool:
        return self.lower <= float(value) <= self.upper


def proportion_estimate(successes: int, n: int, level: float = 0.99) -> EstimateWithCI:
    """Normal approximation, half-width z sqrt(p(1-p)/n)."""
    if n < 1:
        raise ValidationError("A proportion needs at least one trial", code='invalid_argument')
    p = successes / n
    return EstimateWithCI(p, z_value(level) * math.sqrt(p * (1 - p) / n), level, n)


def mean_estimate(values: Sequence[float], level: float = 0.99) -> EstimateWithCI:
    """Sample mean with half-width z s / sqrt(n)."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n < 1:
        raise ValidationError("A mean needs at least one value", code='invalid_argument')
    spread = float(values.std(ddof=1)) if n > 1 else 0.0
    return EstimateWithCI(float(values.mean()), z_value(level) * spread / math.sqrt(n), level, n)


def clopper_pearson(successes: int, n: int, level: float = 0.99) -> Tuple[float, float]:
    """Exact binomial interval from beta quantiles."""
    alpha = 1 - level
    lower = 0.0 if successes == 0 else float(stats.beta.ppf(alpha / 2, successes, n - successes + 1))
    upper = 1.0 if successes == n else float(stats.beta.ppf(1 - alpha / 2, successes + 1, n - successes))
    return lower, upper


@dataclass
class TimeSeriesSummary:
    times: Tuple[float, ...]
    means: np.ndarray
    half_widths: np.ndarray
    replicates: int
    label: str = ''
    censored: int = 0

    def rows(self) -> List[Tuple[float, float, float]]:
        return [(t, float(m), float(h)) for t, m, h in zip(self.times, self.means, self.half_widths)]


class SeriesAccumulator:
    """Running count, sum and sum of squares per sample time."""

    def __init__(self, times: Sequence[float], width: int = 1):
        self.times = tuple(times)
        shape = (len(self.times), width) if width > 1 else (len(self.times),)
        self.count = 0
        self.total = np.zeros(shape)
        self.total_sq = np.zeros(shape)

    def add(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.total.shape:
            raise ValidationError(f"Series shape {values.shape} differs from {self.total.shape}")
        self.count += 1
        self.total += values
        self.total_sq += values * values

    def summary(self, level: float, label: str = '', censored: int = 0, column: Optional[int] = None) -> TimeSeriesSummary:
        if self.count < 1:
            raise SimulationException(f"No complete series for {label or 'observable'}: every replicate was censored",
                                      code='no_data', details={'quantity': label, 'censored': censored})
        total = self.total if column is None else self.total[:, column]
        total_sq = self.total_sq if column is None else self.total_sq[:, column]
        mean = total / self.count
        if self.count > 1:
            variance = np.maximum(total_sq - self.count * mean * mean, 0.0) / (self.count - 1)
        else:
            variance = np.zeros_like(mean)
        half = z_value(level) * np.sqrt(variance / self.count)
        return TimeSeriesSummary(self.times, mean, half, self.count, label, censored)


def _replicate(params: Params, graph: Graph, density: DensityVector, stop: StopCondition, seed: int,
               names: Sequence[str], times: Sequence[float], batch_size: int, check_particles: bool,
               index: int) -> RunResult:
    schedule = ObserverSchedule.named(times, names) if names else None
    return simulate_replicate(params, graph, density, stop, seed, index, schedule,
                              batch_size=batch_size, check_particles=check_particles)


def run_replicates(params: Params, graph: Graph, density: DensityVector, stop: StopCondition, seed: int,
                   replicates: int, names: Sequence[str] = (), times: Sequence[float] = (),
                   service: Optional[ReplicateService] = None, check_particles: bool = True) -> List[RunResult]:
    """Independent replicates keyed by (seed, index), returned in index order."""
    own = service is None
    service = service or ReplicateService()
    task = partial(_replicate, params, graph, density, stop, seed, tuple(names), tuple(times),
                   service.config.batch_size, check_particles)
    try:
        return service.map_replicates(task, replicates)
    finally:
        if own:
            service.close()


def _settings(service: Optional[ReplicateService]) -> EngineSettings:
    return service.config if service is not None else EngineSettings.from_settings()


@dataclass
class ConsensusReport:
    params: Params
    graph: str
    n: int
    estimate: EstimateWithCI
    consensus: int
    non_consensus_absorbed: int
    censored: int
    rho_c: Fraction
    exact_interval: Tuple[float, float]

    @property
    def replicates(self) -> int:
        return self.consensus + self.non_consensus_absorbed + self.censored

    @property
    def meets_lower_bound(self) -> bool:
        return self.estimate.upper >= float(self.rho_c)


def estimate_consensus_probability(params: Params, density: DensityVector, graph: Graph, replicates: int,
                                   seed: int, event_budget: Optional[int] = None,
                                   service: Optional[ReplicateService] = None) -> ConsensusReport:
    """
    Fraction of replicates absorbed in consensus. Censored replicates stay
    in the denominator and are counted separately.
    """
    config = _settings(service)
    stop = StopCondition(StopMode.ABSORPTION, event_budget=event_budget or config.event_budget)
    results = run_replicates(params, graph, density, stop, seed, replicates, service=service)
    consensus = sum(1 for result in results if result.consensus and not result.censored)
    censored = sum(1 for result in results if result.censored)
    absorbed = replicates - consensus - censored
    if censored:
        logger.warning(f"{censored} of {replicates} replicates hit the event budget before absorbing")
    return ConsensusReport(
        params=params,
        graph=graph.describe(),
        n=graph.n,
        estimate=proportion_estimate(consensus, replicates, config.confidence_level),
        consensus=consensus,
        non_consensus_absorbed=absorbed,
        censored=censored,
        rho_c=rho_c(params, density),
        exact_interval=clopper_pearson(consensus, replicates, config.confidence_level),
    )


def _time_stop(times: Sequence[float], config: EngineSettings) -> StopCondition:
    if not times:
        raise ValidationError("At least one sample time is required", code='invalid_observers')
    return StopCondition(StopMode.TIME, t_max=max(times), event_budget=config.event_budget)


def _complete_series(results: List[RunResult], times: Sequence[float]) -> Tuple[List[RunResult], int]:
    complete = [result for result in results if len(result.sample_times) == len(times)]
    dropped = len(results) - len(complete)
    if dropped:
        logger.warning(f"{dropped} replicate(s) exhausted the event budget before the last sample time")
    return complete, dropped


def summarize_observers(results: List[RunResult], times: Sequence[float], names: Sequence[str],
                        level: float) -> Dict[str, TimeSeriesSummary]:
    """
    Per-quantity replicate means. Vector quantities (opinion_counts) are
    split into one series per component, keyed `name[j]` with j from 1.
    Snapshots are skipped.
    """
    complete, dropped = _complete_series(results, times)
    summaries = {}
    for name in names:
        if name == 'snapshot':
            continue
        rows = [np.asarray(result.series[name], dtype=np.float64) for result in complete]
        width = rows[0].shape[1] if rows and rows[0].ndim == 2 else 1
        accumulator = SeriesAccumulator(times, width=width)
        for values in rows:
            accumulator.add(values)
        if width > 1:
            for j in range(width):
                summaries[f"{name}[{j + 1}]"] = accumulator.summary(level, f"{name}[{j + 1}]", dropped, column=j)
        else:
            summaries[name] = accumulator.summary(level, name, dropped)
    return summaries


def summarize_agreement(results: List[RunResult], pairs: Sequence[Tuple[int, int]], times: Sequence[float],
                        level: float) -> Dict[Tuple[int, int], TimeSeriesSummary]:
    """Fraction of replicates with opinion(x) = opinion(y), from recorded snapshots."""
    complete, dropped = _complete_series(results, times)
    accumulator = SeriesAccumulator(times, width=max(2, len(pairs)))
    left = np.array([x for x, _ in pairs])
    right = np.array([y for _, y in pairs])
    for result in complete:
        agreement = np.zeros(accumulator.total.shape)
        for row, snapshot in enumerate(result.series['snapshot']):
            agreement[row, :len(pairs)] = snapshot[left] == snapshot[right]
        accumulator.add(agreement)
    return {
        pair: accumulator.summary(level, f"agreement{pair}", dropped, column=k)
        for k, pair in enumerate(pairs)
    }


def estimate_observable(params: Params, density: DensityVector, graph: Graph, quantity: str,
                        times: Sequence[float], replicates: int, seed: int,
                        service: Optional[ReplicateService] = None) -> TimeSeriesSummary:
    """Replicate mean of a scalar observer quantity at each sample time."""
    config = _settings(service)
    times = tuple(sorted(float(t) for t in times))
    results = run_replicates(params, graph, density, _time_stop(times, config), seed, replicates,
                             names=(quantity,), times=times, service=service)
    return summarize_observers(results, times, (quantity,), config.confidence_level)[quantity]


def estimate_pair_agreement(params: Params, density: DensityVector, size: int,
                            pairs: Sequence[Tuple[int, int]], times: Sequence[float], replicates: int,
                            seed: int, service: Optional[ReplicateService] = None
                            ) -> Dict[Tuple[int, int], TimeSeriesSummary]:
    """P(opinion(x) = opinion(y)) over time on cycle(size), one series per pair."""
    config = _settings(service)
    graph = Graph.cycle(size)
    pairs = [(int(x), int(y)) for x, y in pairs]
    for x, y in pairs:
        if not (0 <= x < size and 0 <= y < size):
            raise ValidationError(f"Pair ({x}, {y}) outside cycle({size})", code='invalid_argument')
    times = tuple(sorted(float(t) for t in times))
    results = run_replicates(params, graph, density, _time_stop(times, config), seed, replicates,
                             names=('snapshot',), times=times, service=service)
    return summarize_agreement(results, pairs, times, config.confidence_level)


def estimate_particle_density(params: Params, density: DensityVector, size: int, times: Sequence[float],
                              replicates: int, seed: int,
                              service: Optional[ReplicateService] = None) -> TimeSeriesSummary:
    """Mean |xi_t(e)| on cycle(size); each replicate asserts the total never grows."""
    return estimate_observable(params, density, Graph.cycle(size), 'particle_density', times,
                               replicates, seed, service)


@dataclass
class MartingaleReport:
    N: int
    expected: Dict[int, Fraction]
    per_opinion: Dict[int, TimeSeriesSummary]
    centrist: TimeSeriesSummary
    expected_centrist: Fraction

    def within_ci(self) -> Dict[int, List[bool]]:
        return {
            j: [abs(float(m) - float(self.expected[j])) <= float(h)
                for m, h in zip(summary.means, summary.half_widths)]
            for j, summary in self.per_opinion.items()
        }

    @property
    def holds(self) -> bool:
        return all(all(flags) for flags in self.within_ci().values())


def martingale_check(params: Params, density: DensityVector, graph: Graph, times: Sequence[float],
                     replicates: int, seed: int, service: Optional[ReplicateService] = None) -> MartingaleReport:
    """Replicate means of X_t(j) = #{x : opinion(x) = j}, expected to stay at N rho_j."""
    config = _settings(service)
    times = tuple(sorted(float(t) for t in times))
    results = run_replicates(params, graph, density, _time_stop(times, config), seed, replicates,
                             names=('opinion_counts', 'centrist_count'), times=times, service=service)
    complete, dropped = _complete_series(results, times)
    counts = SeriesAccumulator(times, width=max(2, params.F))
    centrist = SeriesAccumulator(times)
    for result in complete:
        counts.add(np.array(result.series['opinion_counts'], dtype=np.float64))
        centrist.add(result.series['centrist_count'])
    level = config.confidence_level
    return MartingaleReport(
        N=graph.n,
        expected={j: graph.n * density.rho[j - 1] for j in range(1, params.F + 1)},
        per_opinion={j: counts.summary(level, f"X({j})", dropped, column=j - 1) for j in range(1, params.F + 1)},
        centrist=centrist.summary(level, 'centrist_count', dropped),
        expected_centrist=graph.n * rho_c(params, density),
    )


def count_changeovers(sequence: Sequence) -> int:
    """Number of adjacent unequal pairs."""
    values = np.asarray(sequence)
    if values.size < 2:
        raise ValidationError("Changeovers need a sequence of length >= 2", code='invalid_argument')
    return int(np.count_nonzero(values[1:] != values[:-1]))


def count_edge_types(sequence: Sequence[int], F: Optional[int] = None) -> np.ndarray:
    """counts[i - 1, j - 1] = #{x : opinion(x) = i, opinion(x + 1) = j}."""
    values = np.asarray(sequence, dtype=np.int64)
    F = F or int(values.max())
    counts = np.zeros((F, F), dtype=np.int64)
    if values.size >= 2:
        np.add.at(counts, (values[:-1] - 1, values[1:] - 1), 1)
    return counts


def changeover_distribution(p: float, N: int) -> np.ndarray:
    """Exact law of Z_N for N + 1 i.i.d. Bernoulli(p) outcomes."""
    if not 0 < p < 1:
        raise ValidationError(f"p must lie in (0, 1), got {p}", code='invalid_argument')
    heads = np.zeros(N + 1)
    tails = np.zeros(N + 1)
    heads[0], tails[0] = p, 1 - p
    for _ in range(N):
        next_heads = heads * p
        next_heads[1:] += tails[:-1] * p
        next_tails = tails * (1 - p)
        next_tails[1:] += heads[:-1] * (1 - p)
        heads, tails = next_heads, next_tails
    return heads + tails


def changeover_deviation_probability(p: float, epsilon: float, N: int) -> float:
    distribution = changeover_distribution(p, N)
    z = np.arange(N + 1)
    return float(distribution[_deviates(z, p, epsilon, N)].sum())


def _deviates(z: np.ndarray, p: float, epsilon: float, N: int) -> np.ndarray:
    return np.abs(z - 2 * N * p * (1 - p)) >= epsilon * N - 1e-9


def sample_changeovers(p: float, N: int, replicates: int, rng: np.random.Generator,
                       chunk_cells: int = 10 ** 7) -> np.ndarray:
    """Z_N for `replicates` independent coin sequences of length N + 1."""
    rows = max(1, chunk_cells // (N + 1))
    out = np.empty(replicates, dtype=np.int64)
    for start in range(0, replicates, rows):
        stop = min(replicates, start + rows)
        flips = rng.random((stop - start, N + 1)) < p
        out[start:stop] = np.count_nonzero(flips[:, 1:] != flips[:, :-1], axis=1)
    return out


def estimate_changeover_mean(p: float, N: int, replicates: int, seed: int, level: float = 0.99,
                             stream: int = 0) -> EstimateWithCI:
    return mean_estimate(sample_changeovers(p, N, replicates, replicate_generator(seed, stream)), level)


@dataclass(frozen=True)
class LDPoint:
    N: int
    deviations: int
    replicates: int
    probability: float
    log_probability: float
    censored: bool
    exact_probability: float


def ld_decay_curve(p: float, epsilon: float, Ns: Sequence[int], replicates: int, seed: int) -> List[LDPoint]:
    """
    Empirical P(|Z_N - E Z_N| >= epsilon N) per N next to the exact value.
    Cells without a single deviation report log(1 / replicates) as a bound.
    """
    if not 0 < p < 1:
        raise ValidationError(f"p must lie in (0, 1), got {p}", code='invalid_argument')
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}", code='invalid_argument')
    points = []
    for k, N in enumerate(Ns):
        z = sample_changeovers(p, N, replicates, replicate_generator(seed, k))
        deviations = int(np.count_nonzero(_deviates(z, p, epsilon, N)))
        probability = deviations / replicates
        censored = deviations == 0
        points.append(LDPoint(
            N=N,
            deviations=deviations,
            replicates=replicates,
            probability=probability,
            log_probability=math.log(1 / replicates) if censored else math.log(probability),
            censored=censored,
            exact_probability=changeover_deviation_probability(p, epsilon, N),
        ))
        logger.debug(f"N={N}: {deviations}/{replicates} deviations")
    return points


@dataclass(frozen=True)
class WindowWeightReport:
    weights: np.ndarray
    min_sums: np.ndarray
    any_nonpositive: bool


def window_weight_sums_from_xi(xi: Sequence[int], theta: int) -> WindowWeightReport:
    """For each right end r, the minimum over l <= r of weights[l] + ... + weights[r]."""
    weight = WeightFunction(theta)
    weights = np.array([weight(abs(int(value))) for value in xi], dtype=np.int64)
    if weights.size == 0:
        return WindowWeightReport(weights, weights.copy(), True)
    prefix = np.concatenate(([0], np.cumsum(weights)))
    running_max = np.maximum.accumulate(prefix[:-1])
    min_sums = prefix[1:] - running_max
    any_nonpositive = bool(np.any(min_sums <= 0))
    return WindowWeightReport(weights, min_sums, any_nonpositive)


def window_weight_sums(opinions: Sequence[int], theta: int) -> WindowWeightReport:
    values = np.asarray(opinions, dtype=np.int64)
    return window_weight_sums_from_xi(values[1:] - values[:-1], theta)


def nonpositive_window_fraction(weights: np.ndarray, length: int) -> float:
    """Share of windows of exactly `length` edges whose weight sum is <= 0."""
    weights = np.asarray(weights, dtype=np.int64)
    if not 1 <= length <= weights.size:
        raise ValidationError(f"Window length {length} outside 1..{weights.size}", code='invalid_argument')
    prefix = np.concatenate(([0], np.cumsum(weights)))
    sums = prefix[length:] - prefix[:-length]
    return float(np.count_nonzero(sums <= 0)) / sums.size


@dataclass(frozen=True)
class DomainStats:
    lengths: np.ndarray
    mean: float
    max: int
    histogram: Dict[int, int] = field(default_factory=dict)


def domain_length_stats(config: Configuration) -> DomainStats:
    """Maximal monochromatic runs, taken cyclically on a cycle."""
    opinions = config.opinions
    L = opinions.size
    if config.graph.topology == Topology.CYCLE:
        boundaries = np.flatnonzero(opinions != np.roll(opinions, -1))
        if boundaries.size == 0:
            lengths = np.array([L])
        else:
            lengths = np.diff(np.append(boundaries, boundaries[0] + L))
    elif config.graph.topology == Topology.PATH:
        boundaries = np.flatnonzero(opinions[:-1] != opinions[1:])
        lengths = np.diff(np.concatenate(([-1], boundaries, [L - 1])))
    else:
        raise ValidationError("Domains are defined on cycles and paths", code='invalid_topology')
    values, counts = np.unique(lengths, return_counts=True)
    return DomainStats(lengths, float(lengths.mean()), int(lengths.max()),
                       {int(v): int(c) for v, c in zip(values, counts)})


def interface_density(config: Configuration) -> float:
    """Share of edges whose endpoints disagree."""
    graph = config.graph
    return float(np.count_nonzero(config.opinions[graph.edge_u] != config.opinions[graph.edge_v])) / graph.num_edges


def flip_counts(result: RunResult) -> np.ndarray:
    return result.flips.copy()


def estimate_flip_growth(params: Params, density: DensityVector, graph: Graph, horizons: Sequence[float],
                         replicates: int, seed: int,
                         service: Optional[ReplicateService] = None) -> TimeSeriesSummary:
    """Replicate mean of the median per-site flip count at each horizon."""
    summary = estimate_observable(params, density, graph, 'median_flips', horizons, replicates, seed, service)
    summary.label = FIXATION_PROXY_LABEL
    return summary
