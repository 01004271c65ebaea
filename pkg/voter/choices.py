# voter/choices.py
from django.db import models


class Topology(models.TextChoices):
    CYCLE = 'cycle', 'Cycle'
    PATH = 'path', 'Path'
    COMPLETE = 'complete', 'Complete'
    CUSTOM = 'custom', 'Custom edge list'


class StopMode(models.TextChoices):
    TIME = 'time', 'Time horizon'
    ABSORPTION = 'absorption', 'Absorption'
    CONSENSUS = 'consensus', 'Consensus'
    EVENTS = 'events', 'Event budget'


class StopReason(models.TextChoices):
    TIME_HORIZON = 'time_horizon', 'Time horizon reached'
    ABSORBED = 'absorbed', 'Absorbing state reached'
    CONSENSUS = 'consensus', 'Consensus reached'
    EVENT_BUDGET = 'event_budget', 'Event budget exhausted'
    EVENT_COUNT = 'event_count', 'Requested event count reached'


class PileKind(models.TextChoices):
    EMPTY = 'empty', 'Empty'
    ACTIVE = 'active', 'Active'
    BLOCKADE = 'blockade', 'Blockade'


class PhaseClass(models.TextChoices):
    FLUCTUATION = 'fluctuation', 'Fluctuation'
    FIXATION_PROVED = 'fixation-proved', 'Fixation proved'
    UNRESOLVED = 'unresolved', 'Unresolved'


class DensityKind(models.TextChoices):
    UNIFORM = 'uniform', 'Uniform'
    SYMMETRIC = 'symmetric', 'Symmetric'
    EXPLICIT = 'explicit', 'Explicit list'


class RunStatus(models.TextChoices):
    PENDING = 'pending', 'Pending'
    RUNNING = 'running', 'Running'
    COMPLETED = 'completed', 'Completed'
    FAILED = 'failed', 'Failed'


class Subcommand(models.TextChoices):
    SIMULATE = 'simulate', 'Simulate'
    CONSENSUS = 'consensus', 'Consensus probability'
    CLUSTER = 'cluster', 'Clustering'
    FIXATION = 'fixation', 'Fixation proxy'
    LD_CHECK = 'ld-check', 'Large deviation check'
    ANALYTICS = 'analytics', 'Analytics'
    PHASE_DIAGRAM = 'phase-diagram', 'Phase diagram'
    SPACETIME = 'spacetime', 'Space-time diagram'
