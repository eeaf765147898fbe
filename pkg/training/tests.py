"""
Tests for pre-training and downstream evaluation.
Tests cover: Adam and cosine schedule, Dual-view batches, Config loading,
Contrastive training, Feature files, Linear probe and fine-tuning.
"""
import math
import os
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path
from unittest import mock

import numpy as np
from django.test import SimpleTestCase, override_settings

from contrastive.losses import uniform_similarity_loss
from core.exceptions import (
    CheckpointError,
    ConfigError,
    InvalidInputError,
    ShapeMismatchError,
    SplitError,
    TrainingDiverged,
)
from encoder.checkpoint import load_checkpoint, save_tensors
from encoder.network import ModelParams, init_params
from frames.loading import FrameSequence, VideoDataset
from frames.sampling import WITHOUT_REPLACEMENT, SamplingPlan
from synthetic.generator import SynthConfig, render_video, video_id_for
from training.batches import build_dual_batch, epoch_order, steps_per_epoch
from training.config import TrainConfig, load_train_config
from training.evaluation import (
    AccuracyReport,
    embedding_statistics,
    finetune_classifier,
    linear_probe,
    load_encoder,
    probe_features,
    stratified_split,
)
from training.features import export_features, import_features
from training.optim import AdamState, adam_step, cosine_lr
from training.trainer import (
    BEST_CHECKPOINT,
    FINAL_CHECKPOINT,
    METRICS_FILE,
    contrastive_step,
    train_contrastive,
)

requires_acceptance = unittest.skipUnless(
    os.getenv('SCFA_RUN_ACCEPTANCE'),
    "Slow acceptance check. Set SCFA_RUN_ACCEPTANCE=1 to run it."
)

TINY_SYNTH = SynthConfig(
    num_classes=2, videos_per_class=3, T=6, height=16, width=16, y=4, shape_radius=2, noise=4.0, seed=1
)
TINY_TRAIN = TrainConfig(
    y=4, grid_rows=2, grid_cols=2, cell_h=4, cell_w=4,
    conv_channels=(4,), projection_hidden=8, projection_dim=4,
    batch_size=3, epochs=2, seed=3, eval_seeds=2, test_fraction=0.34,
    probe_epochs=20, finetune_epochs=1, finetune_batch_size=2,
)


def synthetic_dataset(config):
    """Render a synthetic dataset in memory, no files involved."""
    return VideoDataset(sequences=[
        FrameSequence(frames=render_video(config, label, i), label=label, video_id=video_id_for(label, i))
        for label in range(config.num_classes)
        for i in range(config.videos_per_class)
    ])


def constant_dataset(count, T, shape=(8, 8)):
    rng = np.random.default_rng(0)
    return VideoDataset(sequences=[
        FrameSequence(
            frames=[rng.integers(0, 256, size=(*shape, 3), dtype=np.uint8) for _ in range(T)],
            label=i % 2,
            video_id=f'v{i}',
        )
        for i in range(count)
    ])


# =============================================================================
# UNIT TESTS - Optimizer
# =============================================================================

class AdamTests(SimpleTestCase):
    """Test the Adam update."""

    def setUp(self):
        self.params = ModelParams({'w': np.zeros((2, 3)), 'b': np.zeros(3)})
        self.state = AdamState.zeros_like(self.params)

    def test_first_step_unit_gradient(self):
        """Test g=1 at t=1 moves every entry by -lr/(1+eps)."""
        grads = ModelParams({'w': np.ones((2, 3)), 'b': np.ones(3)})
        new, _ = adam_step(self.params, grads, self.state, 1, lr=0.01)
        np.testing.assert_allclose(new['w'], -0.01 / (1 + 1e-8), rtol=1e-12)

    def test_zero_gradient(self):
        """Test zero gradient with zero state leaves parameters unchanged."""
        new, _ = adam_step(self.params, self.params.zeros_like(), self.state, 1, lr=0.01)
        np.testing.assert_array_equal(new['w'], self.params['w'])

    def test_scalar_trace(self):
        """Test two constant-gradient steps against a hand-rolled scalar Adam."""
        g, lr, b1, b2, eps = 0.3, 0.05, 0.9, 0.999, 1e-8
        p, m, v = 1.0, 0.0, 0.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            p -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)

        params = ModelParams({'x': np.array([1.0])})
        state = AdamState.zeros_like(params)
        for t in (1, 2):
            params, state = adam_step(params, ModelParams({'x': np.array([g])}), state, t, lr)
        self.assertAlmostEqual(params['x'][0], p, delta=1e-12)

    def test_frozen_names(self):
        """Test tensors outside `names` are left alone."""
        grads = ModelParams({'w': np.ones((2, 3)), 'b': np.ones(3)})
        new, state = adam_step(self.params, grads, self.state, 1, lr=0.01, names=['b'])
        self.assertIs(new['w'], self.params['w'])
        self.assertFalse(state.m['w'].any())

    def test_inputs_not_mutated(self):
        """Test adam_step returns fresh params and state."""
        grads = ModelParams({'w': np.ones((2, 3)), 'b': np.ones(3)})
        adam_step(self.params, grads, self.state, 1, lr=0.01)
        self.assertFalse(self.params['w'].any())
        self.assertFalse(self.state.m['w'].any())

    def test_shape_mismatch(self):
        """Test a wrongly shaped gradient raises."""
        grads = ModelParams({'w': np.ones(6), 'b': np.ones(3)})
        with self.assertRaises(ShapeMismatchError):
            adam_step(self.params, grads, self.state, 1, lr=0.01)

    def test_step_counter_starts_at_one(self):
        """Test t=0 is rejected."""
        with self.assertRaises(InvalidInputError):
            adam_step(self.params, self.params.zeros_like(), self.state, 0, lr=0.01)


class CosineScheduleTests(SimpleTestCase):
    """Test cosine annealing."""

    def test_endpoints_and_midpoint(self):
        """Test t=0, t=total and t=total/2."""
        self.assertEqual(cosine_lr(0, 10, 1e-3, 1e-5), 1e-3)
        self.assertAlmostEqual(cosine_lr(10, 10, 1e-3, 1e-5), 1e-5, places=15)
        self.assertAlmostEqual(cosine_lr(5, 10, 1e-3, 1e-5), (1e-3 + 1e-5) / 2, places=15)

    def test_bounds(self):
        """Test every emitted lr lies in [lr_min, lr_max] and never rises."""
        values = [cosine_lr(t, 37, 0.1, 0.01) for t in range(38)]
        self.assertTrue(all(0.01 <= v <= 0.1 for v in values))
        self.assertTrue(all(a >= b for a, b in zip(values, values[1:])))

    def test_invalid_arguments(self):
        """Test an empty schedule and out-of-range positions raise."""
        with self.assertRaises(InvalidInputError):
            cosine_lr(0, 0, 0.1)
        with self.assertRaises(InvalidInputError):
            cosine_lr(11, 10, 0.1)


# =============================================================================
# UNIT TESTS - Batches
# =============================================================================

class EpochOrderTests(SimpleTestCase):
    """Test per-epoch batch assignment."""

    def test_every_video_once(self):
        """Test each video appears exactly once per epoch, leftovers in the last batch."""
        batches = epoch_order(11, 4, seed=0, epoch=2)
        self.assertEqual([len(b) for b in batches], [4, 7])
        self.assertEqual(sorted(np.concatenate(batches).tolist()), list(range(11)))
        self.assertEqual(steps_per_epoch(11, 4), 2)

    def test_seeded(self):
        """Test the order depends on seed and epoch only."""
        a = epoch_order(10, 5, seed=1, epoch=0)
        b = epoch_order(10, 5, seed=1, epoch=0)
        c = epoch_order(10, 5, seed=1, epoch=1)
        np.testing.assert_array_equal(np.concatenate(a), np.concatenate(b))
        self.assertFalse(np.array_equal(np.concatenate(a), np.concatenate(c)))

    def test_invalid_batch_size(self):
        """Test batch sizes below 2 or above the dataset raise."""
        with self.assertRaises(InvalidInputError):
            epoch_order(1, 1, seed=0, epoch=0)
        with self.assertRaises(InvalidInputError):
            epoch_order(3, 4, seed=0, epoch=0)


class DualBatchTests(SimpleTestCase):
    """Test dual-view batch construction."""

    def setUp(self):
        self.layout = TINY_TRAIN.layout

    def test_no_sampling_freedom(self):
        """Test T=y gives identical views without replacement."""
        dataset = constant_dataset(4, T=4)
        plan = SamplingPlan(y=4, mode=WITHOUT_REPLACEMENT, seed=0)
        batch = build_dual_batch(dataset, 4, plan, epoch=0, step=0, layout=self.layout)
        np.testing.assert_array_equal(batch.x1, batch.x2)
        self.assertEqual(batch.indices1, batch.indices2)

    def test_two_videos_each_once(self):
        """Test N=2 over two videos puts both in the batch."""
        dataset = constant_dataset(2, T=6)
        batch = build_dual_batch(dataset, 2, SamplingPlan(y=4), epoch=0, step=0, layout=self.layout)
        self.assertEqual(sorted(batch.video_ids), ['v0', 'v1'])
        self.assertEqual(batch.x1.shape, (2, 8, 8, 3))
        self.assertEqual(batch.x1.dtype, np.uint8)

    def test_replay_identical(self):
        """Test two builds with the same seeds give byte-identical batches."""
        dataset = constant_dataset(6, T=12)
        plan = SamplingPlan(y=4, seed=9)
        for step in range(2):
            a = build_dual_batch(dataset, 3, plan, epoch=1, step=step, layout=self.layout)
            b = build_dual_batch(dataset, 3, plan, epoch=1, step=step, layout=self.layout)
            self.assertEqual(a.x1.tobytes(), b.x1.tobytes())
            self.assertEqual(a.x2.tobytes(), b.x2.tobytes())
            self.assertEqual(a.indices1, b.indices1)

    def test_views_are_independent(self):
        """Test a long clip gives differently sampled views."""
        dataset = constant_dataset(3, T=40)
        batch = build_dual_batch(dataset, 3, SamplingPlan(y=4, seed=2), epoch=0, step=0, layout=self.layout)
        self.assertNotEqual(batch.indices1, batch.indices2)

    def test_batch_larger_than_dataset(self):
        """Test N beyond the dataset size raises."""
        with self.assertRaises(InvalidInputError):
            build_dual_batch(constant_dataset(2, T=4), 3, SamplingPlan(y=4), 0, 0, self.layout)

    def test_step_out_of_range(self):
        """Test a step beyond the epoch raises."""
        with self.assertRaises(InvalidInputError):
            build_dual_batch(constant_dataset(4, T=4), 2, SamplingPlan(y=4), 0, 2, self.layout)


# =============================================================================
# UNIT TESTS - Config
# =============================================================================

@override_settings(SCFA_SEED=7)
class TrainConfigTests(SimpleTestCase):
    """Test TrainConfig resolution from defaults, file and flags."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'train.cfg'

    def tearDown(self):
        self.tmp.cleanup()

    def test_defaults(self):
        """Test the default recipe and the settings seed."""
        config = load_train_config()
        self.assertEqual(config.batch_size, 64)
        self.assertEqual(config.epochs, 100)
        self.assertEqual(config.lr, 1e-3)
        self.assertEqual(config.tau, 0.07)
        self.assertEqual(config.projection_dim, 128)
        self.assertEqual(config.seed, 7)
        self.assertEqual(config.layout.canvas_h, 32)

    def test_file_then_flags(self):
        """Test flags override the file, which overrides defaults."""
        self.path.write_text("lr=0.01\nEPOCHS=3\ntau=0.5\nconv_channels=4,8\nsupervised=false\n")
        config = load_train_config(self.path, {'epochs': '5', 'batch_size': None})
        self.assertEqual(config.lr, 0.01)
        self.assertEqual(config.epochs, 5)
        self.assertEqual(config.tau, 0.5)
        self.assertEqual(config.batch_size, 64)
        self.assertEqual(config.conv_channels, (4, 8))
        self.assertFalse(config.supervised)

    def test_invalid_values(self):
        """Test invariant violations are reported per field."""
        for overrides, field in [
            ({'batch_size': '1'}, 'batch_size'),
            ({'tau': '0'}, 'tau'),
            ({'epochs': '0'}, 'epochs'),
            ({'test_fraction': '1.0'}, 'test_fraction'),
            ({'sampling_mode': 'sometimes'}, 'sampling_mode'),
        ]:
            with self.subTest(field=field):
                with self.assertRaises(ConfigError) as ctx:
                    load_train_config(overrides=overrides)
                self.assertIn(field, ctx.exception.errors)

    def test_grid_must_hold_y(self):
        """Test a grid smaller than y is rejected."""
        with self.assertRaises(ConfigError):
            load_train_config(overrides={'grid_rows': '2', 'grid_cols': '2', 'y': '5'})

    def test_unknown_key(self):
        """Test unknown keys are rejected."""
        self.path.write_text("learning_rate=0.1\n")
        with self.assertRaises(ConfigError):
            load_train_config(self.path)

    def test_missing_file(self):
        """Test a missing config file raises ConfigError."""
        with self.assertRaises(ConfigError):
            load_train_config(self.path)

    def test_echo(self):
        """Test the echo lists every resolved value."""
        lines = load_train_config().echo_lines()
        self.assertIn('tau=0.07', lines)
        self.assertIn('conv_channels=8,16,32', lines)
        self.assertIn('pixel_mean=', lines)
        self.assertEqual(len(lines), len(TrainConfig().as_dict()))


# =============================================================================
# INTEGRATION TESTS - Training
# =============================================================================

@override_settings(SCFA_REGISTRY=False)
class TrainContrastiveTests(SimpleTestCase):
    """Test the pre-training loop on a tiny synthetic dataset."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.dataset = synthetic_dataset(TINY_SYNTH)

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def config(self, name, **changes):
        return replace(TINY_TRAIN, output_dir=str(self.root / name), **changes)

    def test_outputs_written(self):
        """Test metrics, final and best checkpoints are written."""
        result = train_contrastive(self.config('run'), self.dataset)
        out = self.root / 'run'
        self.assertTrue((out / FINAL_CHECKPOINT).is_file())
        self.assertTrue((out / BEST_CHECKPOINT).is_file())
        rows = (out / METRICS_FILE).read_text().splitlines()
        self.assertEqual(rows[0], 'epoch,mean_loss,lr,wall_seconds')
        self.assertEqual(len(rows), 1 + TINY_TRAIN.epochs)
        self.assertTrue(all(np.isfinite(r.mean_loss) and r.mean_loss >= 0 for r in result.records))
        self.assertEqual(result.records[0].lr, TINY_TRAIN.lr)
        self.assertEqual(result.best_loss, min(r.mean_loss for r in result.records))

    def test_bit_identical_reruns(self):
        """Test two runs with the same config write identical files."""
        train_contrastive(self.config('a'), self.dataset)
        train_contrastive(self.config('b'), self.dataset)
        for name in (METRICS_FILE, FINAL_CHECKPOINT, BEST_CHECKPOINT):
            with self.subTest(file=name):
                self.assertEqual(
                    (self.root / 'a' / name).read_bytes(), (self.root / 'b' / name).read_bytes()
                )

    def test_classifier_head_untouched(self):
        """Test pre-training leaves the classifier head at its initialization."""
        result = train_contrastive(self.config('run'), self.dataset)
        start = init_params(result.encoder_config, TINY_TRAIN.seed)
        np.testing.assert_array_equal(result.params['head.weight'], start['head.weight'])
        self.assertFalse(np.array_equal(result.params['conv0.weight'], start['conv0.weight']))
        saved = load_checkpoint(result.checkpoint_path, result.encoder_config)
        np.testing.assert_array_equal(saved['conv0.weight'], result.params['conv0.weight'])

    def test_batch_larger_than_dataset(self):
        """Test a batch size above the dataset size is rejected."""
        with self.assertRaises(InvalidInputError):
            train_contrastive(self.config('run', batch_size=7), self.dataset)

    def test_nan_loss_aborts(self):
        """Test a non-finite loss raises with epoch, step and gradient norms."""
        grads = init_params(TINY_TRAIN.encoder_config(2)).zeros_like()
        with mock.patch('training.trainer.contrastive_step', return_value=(float('nan'), grads)):
            with self.assertRaises(TrainingDiverged) as ctx:
                train_contrastive(self.config('run'), self.dataset)
        self.assertEqual((ctx.exception.epoch, ctx.exception.step), (0, 0))
        self.assertIn('conv0.weight', ctx.exception.grad_norms)

    def test_large_temperature_limit(self):
        """Test the loss at a huge temperature approaches the uniform-similarity value."""
        encoder_config = TINY_TRAIN.encoder_config(2)
        params = init_params(encoder_config, 0)
        batch = build_dual_batch(self.dataset, 6, TINY_TRAIN.train_plan, 0, 0, TINY_TRAIN.layout)
        loss, _ = contrastive_step(
            params, encoder_config, batch.x1, batch.x2, batch.labels, batch.video_ids, tau=1e6
        )
        expected = uniform_similarity_loss(
            np.repeat(batch.labels, 2), [v for v in batch.video_ids for _ in range(2)]
        )
        self.assertAlmostEqual(loss, expected, delta=1e-5)


# =============================================================================
# UNIT TESTS - Features
# =============================================================================

class FeatureFileTests(SimpleTestCase):
    """Test the external feature hook."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'features.ckpt'

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        """Test export then import returns the same matrix bit for bit."""
        features = np.random.default_rng(0).normal(size=(12, 5))
        labels = np.arange(12) % 3
        export_features(self.path, features, labels)
        loaded = import_features(self.path, expected_dim=5)
        self.assertEqual(loaded.features.tobytes(), features.tobytes())
        np.testing.assert_array_equal(loaded.labels, labels)
        self.assertEqual((loaded.dim, loaded.num_classes), (5, 3))

    def test_wrong_dimension(self):
        """Test a dimension mismatch names expected and found sizes."""
        export_features(self.path, np.zeros((4, 3)), [0, 1, 0, 1])
        with self.assertRaises(ShapeMismatchError) as ctx:
            import_features(self.path, expected_dim=5)
        self.assertIn('expected 5, found 3', str(ctx.exception))

    def test_wrong_tensor_set(self):
        """Test a plain checkpoint is not accepted as a feature file."""
        save_tensors(self.path, {'features': np.zeros((2, 2))})
        with self.assertRaises(CheckpointError):
            import_features(self.path)

    def test_fractional_labels(self):
        """Test non-integer labels are rejected."""
        save_tensors(self.path, {'features': np.zeros((2, 2)), 'labels': np.array([0.0, 0.5])})
        with self.assertRaises(CheckpointError):
            import_features(self.path)

    def test_one_hot_features_separable(self):
        """Test a one-hot feature file probes to 100% accuracy."""
        labels = np.arange(40) % 4
        export_features(self.path, np.eye(4)[labels], labels)
        loaded = import_features(self.path)
        report = probe_features(loaded.features, loaded.labels, seeds=[0, 1, 2], epochs=100, lr=0.1)
        self.assertEqual(report.accuracies, [1.0, 1.0, 1.0])


# =============================================================================
# UNIT TESTS - Evaluation
# =============================================================================

class StratifiedSplitTests(SimpleTestCase):
    """Test the seeded train/test split."""

    def test_partition(self):
        """Test the split is a partition with every class in training."""
        labels = np.repeat(np.arange(4), 25)
        train, test = stratified_split(labels, 0.2, seed=3)
        self.assertEqual(sorted(np.concatenate([train, test]).tolist()), list(range(100)))
        self.assertEqual(set(labels[train].tolist()), {0, 1, 2, 3})
        self.assertEqual(len(test), 20)

    def test_seeded(self):
        """Test the same seed gives the same split, another seed another one."""
        labels = np.repeat(np.arange(3), 10)
        a = stratified_split(labels, 0.2, seed=1)
        b = stratified_split(labels, 0.2, seed=1)
        c = stratified_split(labels, 0.2, seed=2)
        np.testing.assert_array_equal(a[1], b[1])
        self.assertFalse(np.array_equal(a[1], c[1]))

    def test_singleton_class_stays_in_training(self):
        """Test a one-video class is always redrawn into the training side."""
        labels = np.array([0] * 10 + [1])
        for seed in range(20):
            train, _ = stratified_split(labels, 0.2, seed)
            self.assertIn(10, train)

    def test_impossible_split(self):
        """Test a split that can never keep every class raises SplitError."""
        with self.assertLogs('training.evaluation', level='WARNING'):
            with self.assertRaises(SplitError):
                stratified_split([0, 1], 0.2, seed=0)


class AccuracyReportTests(SimpleTestCase):
    """Test the mean and spread of accuracies over seeds."""

    def test_mean_std(self):
        """Test the sample standard deviation over seeds."""
        report = AccuracyReport(mode='probe', accuracies=[0.5, 1.0], seeds=[0, 1])
        self.assertAlmostEqual(report.mean, 0.75)
        self.assertAlmostEqual(report.std, math.sqrt(0.125))
        self.assertIn('over 2 seeds', report.summary())

    def test_single_seed(self):
        """Test one seed reports zero spread."""
        self.assertEqual(AccuracyReport(mode='probe', accuracies=[0.8], seeds=[0]).std, 0.0)


@override_settings(SCFA_REGISTRY=False)
class EvaluationTests(SimpleTestCase):
    """Test linear probing and fine-tuning on a tiny dataset."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.dataset = synthetic_dataset(TINY_SYNTH)

    def test_probe_report(self):
        """Test a probe reports one accuracy in [0, 1] per seed."""
        report = linear_probe(None, self.dataset, TINY_TRAIN)
        self.assertEqual(report.seeds, [3, 4])
        self.assertTrue(all(0.0 <= a <= 1.0 for a in report.accuracies))

    def test_zero_epoch_finetune_matches_probe(self):
        """Test zero fine-tune epochs equal a zero-epoch probe."""
        config = replace(TINY_TRAIN, probe_epochs=0, finetune_epochs=0)
        probe = linear_probe(None, self.dataset, config)
        finetune = finetune_classifier(None, self.dataset, config)
        self.assertEqual(probe.accuracies, finetune.accuracies)

    def test_finetune_from_params(self):
        """Test fine-tuning accepts in-memory parameters and keeps the seeds."""
        encoder_config = TINY_TRAIN.encoder_config(2)
        report = finetune_classifier(init_params(encoder_config, 1), self.dataset, TINY_TRAIN, seeds=[5])
        self.assertEqual(report.seeds, [5])
        self.assertEqual(report.mode, 'finetune')
        self.assertEqual(report.checkpoint, '')

    def test_load_encoder_infers_architecture(self):
        """Test the architecture is read back from a parameter set."""
        encoder_config = TINY_TRAIN.encoder_config(2)
        params, inferred = load_encoder(init_params(encoder_config, 0), self.dataset, TINY_TRAIN)
        self.assertEqual(inferred, encoder_config)

    def test_embedding_statistics(self):
        """Test embedding statistics are cosine similarities."""
        encoder_config = TINY_TRAIN.encoder_config(2)
        stats = embedding_statistics(
            init_params(encoder_config, 0), encoder_config, self.dataset, TINY_TRAIN.train_plan, TINY_TRAIN.layout
        )
        for value in (stats.within_class, stats.cross_class, stats.sibling, stats.different_label):
            self.assertLessEqual(abs(value), 1.0 + 1e-12)
        self.assertAlmostEqual(stats.class_margin, stats.within_class - stats.cross_class)

    def test_shuffled_labels_fall_to_chance(self):
        """Test shuffled labels bring a linear classifier on separable features down to chance."""
        labels = np.repeat(np.arange(4), 100)
        features = np.eye(4)[labels] + np.random.default_rng(0).normal(0.0, 0.05, size=(400, 4))
        seeds = [0, 1, 2, 3, 4]
        honest = probe_features(features, labels, seeds, epochs=100, lr=0.1)
        shuffled = probe_features(features, np.random.default_rng(1).permutation(labels), seeds, epochs=100, lr=0.1)
        self.assertGreaterEqual(honest.mean, 0.95)
        self.assertLessEqual(abs(shuffled.mean - 0.25), 0.15)


# =============================================================================
# ACCEPTANCE TESTS
# =============================================================================

@requires_acceptance
@override_settings(SCFA_REGISTRY=False)
class SyntheticBenchmarkTests(SimpleTestCase):
    """Test end-to-end learning on the seeded four-class benchmark."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dataset = synthetic_dataset(SynthConfig(seed=0))
        cls.config = TrainConfig(output_dir=cls.tmp.name, seed=0)
        cls.result = train_contrastive(cls.config, cls.dataset)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def test_loss_decreases(self):
        """Test the last epoch-mean loss is below the first."""
        self.assertLess(self.result.records[-1].mean_loss, self.result.records[0].mean_loss)

    def test_probe_accuracy(self):
        """Test pretrained probing clears 0.90 and beats a random encoder by 0.25."""
        pretrained = linear_probe(self.result.checkpoint_path, self.dataset, self.config)
        random_init = linear_probe(None, self.dataset, self.config)
        self.assertGreaterEqual(pretrained.mean, 0.90)
        self.assertLessEqual(random_init.mean, 0.60)
        self.assertGreater(pretrained.mean - random_init.mean, 0.25)

    def test_random_encoder_near_chance(self):
        """Test a randomly initialized encoder scores within 0.15 of the 0.25 chance rate."""
        random_init = linear_probe(None, self.dataset, self.config)
        self.assertLessEqual(abs(random_init.mean - 0.25), 0.15)

    def test_embedding_geometry(self):
        """Test the class margin grows and siblings end up closer than other classes."""
        plan = self.config.train_plan
        layout = self.config.layout
        encoder_config = self.result.encoder_config
        before = embedding_statistics(init_params(encoder_config, 0), encoder_config, self.dataset, plan, layout)
        after = embedding_statistics(self.result.params, encoder_config, self.dataset, plan, layout)
        self.assertGreater(after.class_margin, before.class_margin)
        self.assertGreater(after.sibling, after.different_label)

    def test_finetune_versus_probe(self):
        """Test fine-tuning from pretraining is no worse than probing and beats random init."""
        pretrained = finetune_classifier(self.result.checkpoint_path, self.dataset, self.config)
        probe = linear_probe(self.result.checkpoint_path, self.dataset, self.config)
        scratch = finetune_classifier(None, self.dataset, self.config)
        pooled = math.sqrt((pretrained.std ** 2 + probe.std ** 2) / 2)
        self.assertGreaterEqual(pretrained.mean - probe.mean, -2 * pooled)
        self.assertGreater(pretrained.mean, scratch.mean)
