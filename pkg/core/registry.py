"""
Run registry writes.

The registry is never on the critical path: database failures are logged as
warnings and the pipeline carries on with its files on disk.
"""
import logging
from pathlib import Path

from django.conf import settings
from django.db import DatabaseError
from django.utils import timezone

from .models import EvaluationRun, TrainingRun

logger = logging.getLogger(__name__)


def registry_enabled():
    return getattr(settings, 'SCFA_REGISTRY', True)


def start_training_run(config):
    """Create a RUNNING row for a training config; None when unavailable."""
    if not registry_enabled():
        return None
    try:
        return TrainingRun.objects.create(run_name=str(config.output_dir), config=config.as_dict())
    except DatabaseError as e:
        logger.warning("Run registry unavailable, continuing without it: %s", e)
        return None


def finish_training_run(run, result):
    if run is None:
        return
    run.status = 'COMPLETED'
    run.epochs_completed = len(result.records)
    run.final_loss = result.final_loss
    run.best_loss = result.best_loss
    run.checkpoint_path = str(result.checkpoint_path or '')
    run.metrics_path = str(result.metrics_path or '')
    run.finished_at = timezone.now()
    _save(run)


def fail_training_run(run, error, epochs_completed=0):
    if run is None:
        return
    run.status = 'FAILED'
    run.epochs_completed = epochs_completed
    run.error = str(error)
    run.finished_at = timezone.now()
    _save(run)


def record_evaluation(report):
    """Store an AccuracyReport, linked to the training run whose output holds the checkpoint."""
    if not registry_enabled():
        return None
    try:
        training_run = None
        if report.checkpoint:
            training_run = (
                TrainingRun.objects.filter(run_name=str(Path(report.checkpoint).parent)).first()
            )
        return EvaluationRun.objects.create(
            training_run=training_run,
            mode=report.mode,
            checkpoint_path=report.checkpoint,
            accuracy_mean=report.mean,
            accuracy_std=report.std,
            num_seeds=len(report.seeds),
            accuracies=list(report.accuracies),
        )
    except DatabaseError as e:
        logger.warning("Could not record %s evaluation: %s", report.mode, e)
        return None


def _save(run):
    try:
        run.save()
    except DatabaseError as e:
        logger.warning("Could not update training run %s: %s", run.pk, e)
