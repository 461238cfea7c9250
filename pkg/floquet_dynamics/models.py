from django.db import models
from django.utils import timezone

METHOD_CHOICES = [
    ("frsh", "Floquet surface hopping"),
    ("frqme", "Floquet quantum master equation"),
    ("compare", "Surface hopping vs. master equation"),
]

STATUS_CHOICES = [
    ("RUNNING", "Running"),
    ("SUCCEEDED", "Succeeded"),
    ("FAILED", "Failed"),
]


class SimulationRun(models.Model):
    """One invocation of the run_simulation command."""

    method = models.CharField(max_length=16, choices=METHOD_CHOICES)
    status = models.CharField(max_length=16, choices=STATUS_CHOICES, default="RUNNING")
    # decimal digits of an unsigned 64-bit seed
    master_seed = models.CharField(max_length=20)
    config = models.JSONField(default=dict)
    code_version = models.CharField(max_length=40, blank=True)
    output_path = models.CharField(max_length=500, blank=True)
    manifest_path = models.CharField(max_length=500, blank=True)
    wall_time = models.FloatField(null=True, blank=True)
    diagnostics = models.JSONField(default=dict, blank=True)
    error_message = models.TextField(blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ["-created_at"]
        verbose_name = "Simulation run"
        verbose_name_plural = "Simulation runs"

    def __str__(self) -> str:
        return f"{self.get_method_display()} #{self.pk} ({self.status})"

    def mark_finished(self, status: str, **fields) -> None:
        self.status = status
        self.finished_at = timezone.now()
        for name, value in fields.items():
            setattr(self, name, value)
        self.save()
