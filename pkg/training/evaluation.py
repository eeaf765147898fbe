"""
Downstream evaluation: linear probe on frozen features, full fine-tuning, and
embedding geometry statistics.

Every evaluation repeats over several seeds; each seed draws its own stratified
train/test split and classifier initialization.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from core import registry
from core.exceptions import InvalidInputError, SplitError
from encoder.checkpoint import load_checkpoint
from encoder.network import (
    ForwardCache,
    ModelParams,
    backward,
    classifier_forward,
    encoder_forward,
    infer_encoder_config,
    init_head,
    init_params,
    projection_forward,
    reinit_head,
    softmax_cross_entropy,
    to_network_input,
)
from frames.sampling import UNIFORM, derive_draw_id

from .optim import AdamState, adam_step

logger = logging.getLogger(__name__)

PROBE = 'probe'
FINETUNE = 'finetune'
MAX_SPLIT_ATTEMPTS = 100
FEATURE_CHUNK = 64


@dataclass
class AccuracyReport:
    mode: str
    accuracies: list
    seeds: list
    checkpoint: str = ''

    @property
    def mean(self):
        return float(np.mean(self.accuracies))

    @property
    def std(self):
        # sample std over seeds; a single seed reports 0
        return float(np.std(self.accuracies, ddof=1)) if len(self.accuracies) > 1 else 0.0

    def summary(self):
        return f"{self.mode} accuracy={self.mean:.4f} +- {self.std:.4f} over {len(self.seeds)} seeds"


@dataclass
class EmbeddingStats:
    within_class: float
    cross_class: float
    sibling: float
    different_label: float

    @property
    def class_margin(self):
        return self.within_class - self.cross_class


def default_seeds(config):
    return [config.seed + i for i in range(config.eval_seeds)]


def stratified_split(labels, test_fraction, seed):
    """
    Seeded per-class shuffle into (train, test) index arrays.

    Each class sends count * test_fraction videos to test, the fractional part
    rounded at random. Splits that leave a class out of training, or an empty
    test side, are redrawn.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if not 0 < test_fraction < 1:
        raise InvalidInputError(f"test fraction must lie in (0, 1), got {test_fraction}")
    classes = np.unique(labels)
    for attempt in range(MAX_SPLIT_ATTEMPTS):
        rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), attempt, 0x5B17]))
        train, test = [], []
        for c in classes:
            members = rng.permutation(np.flatnonzero(labels == c))
            quota = len(members) * test_fraction
            n_test = int(np.floor(quota)) + int(rng.random() < quota - np.floor(quota))
            test.extend(members[:n_test])
            train.extend(members[n_test:])
        missing = sorted(set(classes.tolist()) - set(labels[train].tolist()))
        if not missing and test:
            return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(test, dtype=np.int64))
        logger.warning(
            "split seed=%d attempt=%d redrawn (classes missing from training: %s, test size %d)",
            seed, attempt, missing, len(test),
        )
    raise SplitError(f"no split with every class in training after {MAX_SPLIT_ATTEMPTS} draws (seed {seed})")


def aggregate_views(dataset, indices, plan, layout, tag):
    """uint8 canvases, one view per listed video."""
    images = []
    for index in indices:
        draw_id = 0 if plan.mode == UNIFORM else derive_draw_id(tag, dataset[index].video_id)
        images.append(dataset.aggregate(index, plan, layout, draw_id).pixels)
    return np.stack(images)


def extract_features(params, encoder_config, dataset, plan, layout, tag='eval'):
    """Encoder features of one view per video, in dataset order."""
    rows = []
    for start in range(0, len(dataset), FEATURE_CHUNK):
        indices = range(start, min(start + FEATURE_CHUNK, len(dataset)))
        x = to_network_input(aggregate_views(dataset, indices, plan, layout, tag), encoder_config)
        rows.append(encoder_forward(x, params, encoder_config))
    return np.concatenate(rows)


def _accuracy(logits, labels):
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def _check_labels(labels, num_classes):
    if labels.min() < 0 or labels.max() >= num_classes:
        raise InvalidInputError(
            f"labels span [{labels.min()}, {labels.max()}] but the classifier has {num_classes} classes"
        )


def probe_features(features, labels, seeds, epochs=300, lr=1e-2, test_fraction=0.2, num_classes=None):
    """
    Train a linear softmax classifier on fixed features with full-batch Adam
    and report held-out accuracy per seed.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = num_classes or max(int(labels.max()) + 1, 2)
    _check_labels(labels, num_classes)
    accuracies = []
    for seed in seeds:
        train, test = stratified_split(labels, test_fraction, seed)
        weight, bias = init_head(features.shape[1], num_classes, seed)
        head = ModelParams({'head.weight': weight, 'head.bias': bias})
        state = AdamState.zeros_like(head)
        r = features[train]
        for t in range(1, epochs + 1):
            _, dl = softmax_cross_entropy(r @ head['head.weight'] + head['head.bias'], labels[train])
            grads = ModelParams({'head.weight': r.T @ dl, 'head.bias': dl.sum(axis=0)})
            head, state = adam_step(head, grads, state, t, lr)
        logits = features[test] @ head['head.weight'] + head['head.bias']
        accuracies.append(_accuracy(logits, labels[test]))
        logger.debug("probe seed=%d accuracy=%.4f", seed, accuracies[-1])
    return AccuracyReport(mode=PROBE, accuracies=accuracies, seeds=list(seeds))


def load_encoder(checkpoint, dataset, config):
    """(params, encoder config) from a checkpoint path, or a random init for None."""
    layout = config.layout
    if checkpoint is None:
        encoder_config = config.encoder_config(dataset.num_classes)
        return init_params(encoder_config, config.seed), encoder_config
    params = checkpoint if isinstance(checkpoint, ModelParams) else load_checkpoint(checkpoint)
    encoder_config = infer_encoder_config(
        params, layout.canvas_h, layout.canvas_w,
        pixel_mean=config.pixel_mean, pixel_std=config.pixel_std,
    )
    params.validate(encoder_config)
    return params, encoder_config


def _checkpoint_label(checkpoint):
    return str(checkpoint) if isinstance(checkpoint, (str, Path)) else ''


def linear_probe(checkpoint, dataset, config, seeds=None):
    """Freeze the encoder, train only the classifier head, report accuracy over seeds."""
    seeds = default_seeds(config) if seeds is None else list(seeds)
    params, encoder_config = load_encoder(checkpoint, dataset, config)
    features = extract_features(params, encoder_config, dataset, config.eval_plan(), config.layout)
    report = probe_features(
        features, dataset.labels, seeds,
        epochs=config.probe_epochs, lr=config.probe_lr,
        test_fraction=config.test_fraction, num_classes=encoder_config.num_classes,
    )
    report.checkpoint = _checkpoint_label(checkpoint)
    logger.info(report.summary())
    registry.record_evaluation(report)
    return report


def finetune_classifier(checkpoint, dataset, config, seeds=None):
    """
    Train encoder and classifier head end-to-end with softmax cross-entropy.

    checkpoint=None starts from a random initialization (the supervised
    from-scratch baseline). Training views use the training sampling plan;
    test views use the evaluation plan, as in linear_probe.
    """
    seeds = default_seeds(config) if seeds is None else list(seeds)
    start, encoder_config = load_encoder(checkpoint, dataset, config)
    labels = dataset.labels
    _check_labels(labels, encoder_config.num_classes)
    layout = config.layout
    train_plan = config.train_plan
    trainable = [n for n in start if not n.startswith('proj.')]

    accuracies = []
    for seed in seeds:
        train, test = stratified_split(labels, config.test_fraction, seed)
        params = reinit_head(start, encoder_config, seed)
        state = AdamState.zeros_like(params)
        rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 0xF17E]))
        t = 0
        for epoch in range(config.finetune_epochs):
            order = train[rng.permutation(len(train))]
            for begin in range(0, len(order), config.finetune_batch_size):
                chunk = order[begin:begin + config.finetune_batch_size]
                pixels = aggregate_views(dataset, chunk, train_plan, layout, f'finetune/{seed}/{epoch}')
                cache = ForwardCache()
                features = encoder_forward(to_network_input(pixels, encoder_config), params, encoder_config, cache)
                _, dl = softmax_cross_entropy(classifier_forward(features, params, encoder_config), labels[chunk])
                grads = backward(params, encoder_config, cache, grad_logits=dl)
                t += 1
                params, state = adam_step(params, grads, state, t, config.finetune_lr, names=trainable)

        # whole-dataset features keep test rows identical to the linear probe path
        features = extract_features(params, encoder_config, dataset, config.eval_plan(), layout)[test]
        accuracies.append(_accuracy(classifier_forward(features, params, encoder_config), labels[test]))
        logger.debug("finetune seed=%d accuracy=%.4f", seed, accuracies[-1])

    report = AccuracyReport(
        mode=FINETUNE, accuracies=accuracies, seeds=seeds, checkpoint=_checkpoint_label(checkpoint)
    )
    logger.info(report.summary())
    registry.record_evaluation(report)
    return report


def embedding_statistics(params, encoder_config, dataset, plan, layout):
    """
    Cosine geometry of two sampled views per video.

    within_class / cross_class compare first views of distinct videos; sibling
    pairs the two views of each video; different_label pairs views of videos
    with different labels.
    """
    indices = range(len(dataset))
    z = []
    for view in (0, 1):
        x = to_network_input(aggregate_views(dataset, indices, plan, layout, f'stats/{view}'), encoder_config)
        z.append(projection_forward(encoder_forward(x, params, encoder_config), params, encoder_config))
    z1, z2 = z
    labels = dataset.labels
    same = labels[:, None] == labels[None, :]
    off_diagonal = ~np.eye(len(labels), dtype=bool)
    c11 = z1 @ z1.T
    c12 = z1 @ z2.T
    return EmbeddingStats(
        within_class=float(c11[same & off_diagonal].mean()) if (same & off_diagonal).any() else float('nan'),
        cross_class=float(c11[~same].mean()) if (~same).any() else float('nan'),
        sibling=float(np.mean(np.sum(z1 * z2, axis=1))),
        different_label=float(c12[~same].mean()) if (~same).any() else float('nan'),
    )

