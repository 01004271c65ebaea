# voter/models.py
import uuid

from django.core.exceptions import ValidationError
from django.db import models
from django.utils import timezone

from .choices import RunStatus, Subcommand


class SimulationRun(models.Model):
    """One invocation of the cvm command and its outcome"""
    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    subcommand = models.CharField(max_length=20, choices=Subcommand.choices)

    # Reproduction record
    config = models.JSONField(default=dict, help_text="Canonical run configuration")
    config_hash = models.CharField(max_length=64, db_index=True, help_text="SHA-256 of the canonical config")
    master_seed = models.DecimalField(max_digits=20, decimal_places=0, null=True, blank=True)
    output_dir = models.CharField(max_length=500, blank=True)

    # Status and results
    status = models.CharField(max_length=20, choices=RunStatus.choices, default=RunStatus.PENDING)
    summary = models.JSONField(default=dict, blank=True)
    failure_reason = models.TextField(null=True, blank=True)

    # Timestamps
    started_at = models.DateTimeField(null=True, blank=True)
    completed_at = models.DateTimeField(null=True, blank=True)
    failed_at = models.DateTimeField(null=True, blank=True)

    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.subcommand} run {self.id} ({self.status})"

    def clean(self):
        if len(self.config_hash) != 64:
            raise ValidationError("config_hash must be a SHA-256 hex digest")
        if self.master_seed is not None and not 0 <= self.master_seed < 2 ** 64:
            raise ValidationError("master_seed must be a non-negative 64-bit integer")

    def mark_as_running(self):
        self.status = RunStatus.RUNNING
        self.started_at = timezone.now()
        self.save()

    def mark_as_completed(self, summary=None):
        """Mark run as completed"""
        self.status = RunStatus.COMPLETED
        self.completed_at = timezone.now()
        if summary:
            self.summary = summary
        self.save()

    def mark_as_failed(self, reason=None):
        """Mark run as failed"""
        self.status = RunStatus.FAILED
        self.failed_at = timezone.now()
        self.failure_reason = reason
        self.save()

    @property
    def duration(self):
        end = self.completed_at or self.failed_at
        if self.started_at and end:
            return end - self.started_at
        return None
