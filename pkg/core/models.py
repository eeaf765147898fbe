"""
Run registry: one row per training run and per evaluation.

Checkpoints and metrics files on disk are authoritative; rows are an index for
browsing runs in the admin.
"""
from django.db import models


class TrainingRun(models.Model):
    STATUS_CHOICES = [('RUNNING', 'Running'), ('COMPLETED', 'Completed'), ('FAILED', 'Failed')]

    run_name = models.CharField(max_length=255)
    config = models.JSONField(default=dict)
    status = models.CharField(max_length=10, choices=STATUS_CHOICES, default='RUNNING')
    epochs_completed = models.PositiveIntegerField(default=0)
    final_loss = models.FloatField(null=True, blank=True)
    best_loss = models.FloatField(null=True, blank=True)
    checkpoint_path = models.CharField(max_length=1024, blank=True)
    metrics_path = models.CharField(max_length=1024, blank=True)
    error = models.TextField(blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        db_table = 'training_runs'
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.run_name} ({self.status})"


class EvaluationRun(models.Model):
    MODE_CHOICES = [('probe', 'Linear probe'), ('finetune', 'Fine-tune')]

    training_run = models.ForeignKey(
        TrainingRun, on_delete=models.SET_NULL, null=True, blank=True, related_name='evaluations'
    )
    mode = models.CharField(max_length=10, choices=MODE_CHOICES)
    checkpoint_path = models.CharField(max_length=1024, blank=True)
    accuracy_mean = models.FloatField()
    accuracy_std = models.FloatField()
    num_seeds = models.PositiveSmallIntegerField()
    accuracies = models.JSONField(default=list)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        db_table = 'evaluation_runs'
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.mode} {self.accuracy_mean:.4f} +- {self.accuracy_std:.4f}"
