"""
Contrastive pre-training loop.

Each step draws a dual-view batch, runs both views through the shared encoder and
projection head, and takes one Adam step on the SCFA loss under a cosine schedule.
"""
import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from contrastive.losses import EmbeddingBatch, scfa_loss_grad
from core import registry
from core.exceptions import InvalidInputError, TrainingDiverged
from encoder.checkpoint import save_checkpoint
from encoder.network import ForwardCache, backward, dual_forward, init_params, to_network_input
from frames.loading import load_dataset

from .batches import build_dual_batch, steps_per_epoch
from .optim import AdamState, adam_step, cosine_lr

logger = logging.getLogger(__name__)

METRICS_FIELDS = ['epoch', 'mean_loss', 'lr', 'wall_seconds']
FINAL_CHECKPOINT = 'final.ckpt'
BEST_CHECKPOINT = 'best.ckpt'
METRICS_FILE = 'metrics.csv'


@dataclass
class MetricsRecord:
    epoch: int
    mean_loss: float
    lr: float
    wall_seconds: float | None = None

    def as_row(self):
        wall = '' if self.wall_seconds is None else f"{self.wall_seconds:.3f}"
        return [self.epoch, repr(self.mean_loss), repr(self.lr), wall]


@dataclass
class TrainingResult:
    params: object
    encoder_config: object
    records: list = field(default_factory=list)
    checkpoint_path: Path | None = None
    best_checkpoint_path: Path | None = None
    metrics_path: Path | None = None

    @property
    def final_loss(self):
        return self.records[-1].mean_loss if self.records else None

    @property
    def best_loss(self):
        return min(r.mean_loss for r in self.records) if self.records else None


class MetricsWriter:
    """Append-only metrics CSV; the header is written when the run starts."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open('w', newline='') as fh:
            csv.writer(fh, lineterminator='\n').writerow(METRICS_FIELDS)

    def append(self, record):
        with self.path.open('a', newline='') as fh:
            csv.writer(fh, lineterminator='\n').writerow(record.as_row())


def contrastive_step(params, encoder_config, x1, x2, labels, video_ids, tau, supervised=True):
    """Loss and parameter gradients for one dual-view batch of uint8 canvases."""
    caches = (ForwardCache(), ForwardCache())
    dual_forward(
        to_network_input(x1, encoder_config),
        to_network_input(x2, encoder_config),
        params, encoder_config, caches,
    )
    batch = EmbeddingBatch.from_views(caches[0].projection, caches[1].projection, labels, video_ids)
    result = scfa_loss_grad(
        batch.Z, batch.labels, batch.video_ids, batch.view_ids, tau, use_labels=supervised
    )
    grads = backward(params, encoder_config, caches[0], grad_projection=result.grad[0::2])
    grads = grads.add(backward(params, encoder_config, caches[1], grad_projection=result.grad[1::2]))
    return result.value, grads


def train_contrastive(config, dataset=None):
    """
    Pre-train encoder and projection head; the classifier head is left at init.

    Writes metrics.csv, final.ckpt and best.ckpt (lowest epoch-mean loss) under
    config.output_dir. Identical configs give bit-identical files.
    """
    if dataset is None:
        if not config.manifest:
            raise InvalidInputError("training needs a dataset manifest")
        dataset = load_dataset(config.manifest)
    if config.batch_size < 2:
        raise InvalidInputError(f"batch size must be at least 2, got {config.batch_size}")
    if config.batch_size > len(dataset):
        raise InvalidInputError(
            f"batch size {config.batch_size} exceeds the {len(dataset)} videos in the dataset"
        )

    output_dir = Path(config.output_dir)
    encoder_config = config.encoder_config(dataset.num_classes)
    layout = config.layout
    plan = config.train_plan
    params = init_params(encoder_config, config.seed)
    trainable = [name for name in params if not name.startswith('head.')]
    state = AdamState.zeros_like(params)

    steps = steps_per_epoch(len(dataset), config.batch_size)
    total_steps = steps * config.epochs
    result = TrainingResult(params=params, encoder_config=encoder_config)
    writer = MetricsWriter(output_dir / METRICS_FILE)
    result.metrics_path = writer.path

    run = registry.start_training_run(config)
    logger.info(
        "Training on %d videos: %d epochs x %d steps, batch %d, tau=%g",
        len(dataset), config.epochs, steps, config.batch_size, config.tau,
    )

    global_step = 0
    best_loss = np.inf
    try:
        for epoch in range(config.epochs):
            started = time.perf_counter()
            epoch_lr = cosine_lr(global_step, total_steps, config.lr, config.lr_min)
            losses = []
            for step in range(steps):
                batch = build_dual_batch(dataset, config.batch_size, plan, epoch, step, layout)
                loss, grads = contrastive_step(
                    params, encoder_config, batch.x1, batch.x2,
                    batch.labels, batch.video_ids, config.tau, config.supervised,
                )
                if not np.isfinite(loss):
                    raise TrainingDiverged(epoch, step, grads.norms())
                lr = cosine_lr(global_step, total_steps, config.lr, config.lr_min)
                global_step += 1
                params, state = adam_step(
                    params, grads, state, global_step, lr,
                    beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps, names=trainable,
                )
                losses.append(loss)

            record = MetricsRecord(
                epoch=epoch + 1,
                mean_loss=float(np.mean(losses)),
                lr=epoch_lr,
                wall_seconds=time.perf_counter() - started if config.record_wall_time else None,
            )
            writer.append(record)
            result.records.append(record)
            logger.info("epoch %d/%d loss=%.6f lr=%.3e", record.epoch, config.epochs, record.mean_loss, epoch_lr)

            if record.mean_loss < best_loss:
                best_loss = record.mean_loss
                result.best_checkpoint_path = save_checkpoint(output_dir / BEST_CHECKPOINT, params)
    except Exception as e:
        registry.fail_training_run(run, e, epochs_completed=len(result.records))
        raise

    result.params = params
    result.checkpoint_path = save_checkpoint(output_dir / FINAL_CHECKPOINT, params)
    registry.finish_training_run(run, result)
    logger.info("Saved %s (best epoch-mean loss %.6f)", result.checkpoint_path, result.best_loss)
    return result
