"""
Tests for core app - run registry and the scfa command.
Tests cover: Registry models, Database degradation, Command exit codes, Config echo.
"""
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

from django.db import DatabaseError
from django.test import SimpleTestCase, TestCase, override_settings

from core import registry
from core.cli import run
from core.models import EvaluationRun, TrainingRun
from training.config import TrainConfig
from training.evaluation import AccuracyReport
from training.features import export_features
from training.trainer import MetricsRecord, TrainingResult

TINY_FLAGS = [
    '--y', '4', '--grid-rows', '2', '--grid-cols', '2', '--cell-h', '4', '--cell-w', '4',
    '--conv-channels', '4', '--projection-hidden', '8', '--projection-dim', '4',
]
SYNTH_FLAGS = [
    '--num-classes', '2', '--videos-per-class', '2', '--T', '5', '--y', '4',
    '--height', '16', '--width', '16', '--shape-radius', '2',
]


def call(*argv):
    out, err = StringIO(), StringIO()
    code = run(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def training_result(output_dir):
    return TrainingResult(
        params=None,
        encoder_config=None,
        records=[MetricsRecord(1, 2.0, 1e-3), MetricsRecord(2, 1.5, 5e-4)],
        checkpoint_path=Path(output_dir) / 'final.ckpt',
        metrics_path=Path(output_dir) / 'metrics.csv',
    )


# =============================================================================
# UNIT TESTS - Registry
# =============================================================================

class RegistryTests(TestCase):
    """Test training and evaluation rows."""

    def setUp(self):
        self.config = TrainConfig(output_dir='/tmp/scfa-runs/a')

    def test_training_run_lifecycle(self):
        """Test a run goes from RUNNING to COMPLETED with its losses."""
        run_row = registry.start_training_run(self.config)
        self.assertEqual(run_row.status, 'RUNNING')
        self.assertEqual(run_row.config['tau'], 0.07)

        registry.finish_training_run(run_row, training_result(self.config.output_dir))
        run_row.refresh_from_db()
        self.assertEqual(run_row.status, 'COMPLETED')
        self.assertEqual(run_row.epochs_completed, 2)
        self.assertEqual((run_row.final_loss, run_row.best_loss), (1.5, 1.5))
        self.assertTrue(run_row.checkpoint_path.endswith('final.ckpt'))
        self.assertIsNotNone(run_row.finished_at)

    def test_failed_run(self):
        """Test a failure is stored with its message."""
        run_row = registry.start_training_run(self.config)
        registry.fail_training_run(run_row, ValueError('loss went NaN'), epochs_completed=3)
        run_row.refresh_from_db()
        self.assertEqual(run_row.status, 'FAILED')
        self.assertEqual(run_row.error, 'loss went NaN')
        self.assertEqual(str(run_row), '/tmp/scfa-runs/a (FAILED)')

    def test_evaluation_links_training_run(self):
        """Test an evaluation attaches to the run that wrote its checkpoint."""
        run_row = registry.start_training_run(self.config)
        report = AccuracyReport(
            mode='probe', accuracies=[0.9, 1.0], seeds=[0, 1], checkpoint='/tmp/scfa-runs/a/final.ckpt'
        )
        row = registry.record_evaluation(report)
        self.assertEqual(row.training_run, run_row)
        self.assertAlmostEqual(row.accuracy_mean, 0.95)
        self.assertEqual(row.num_seeds, 2)
        self.assertEqual(list(run_row.evaluations.all()), [row])

    def test_evaluation_without_checkpoint(self):
        """Test a random-init evaluation is stored unlinked."""
        row = registry.record_evaluation(AccuracyReport(mode='finetune', accuracies=[0.5], seeds=[0]))
        self.assertIsNone(row.training_run)
        self.assertEqual(str(row), 'finetune 0.5000 +- 0.0000')

    @override_settings(SCFA_REGISTRY=False)
    def test_disabled(self):
        """Test nothing is written when the registry is switched off."""
        self.assertIsNone(registry.start_training_run(self.config))
        self.assertIsNone(registry.record_evaluation(AccuracyReport(mode='probe', accuracies=[1.0], seeds=[0])))
        registry.finish_training_run(None, training_result('x'))
        self.assertEqual(TrainingRun.objects.count(), 0)
        self.assertEqual(EvaluationRun.objects.count(), 0)


class RegistryDegradationTests(TestCase):
    """Test database failures are logged, never raised."""

    def test_start_without_database(self):
        """Test an unavailable database yields no row and a warning."""
        with mock.patch('core.registry.TrainingRun') as model:
            model.objects.create.side_effect = DatabaseError('database is locked')
            with self.assertLogs('core.registry', level='WARNING') as logs:
                self.assertIsNone(registry.start_training_run(TrainConfig(output_dir='x')))
        self.assertIn('database is locked', logs.output[0])

    def test_update_failure(self):
        """Test a failed update leaves the caller running."""
        run_row = registry.start_training_run(TrainConfig(output_dir='x'))
        with mock.patch.object(run_row, 'save', side_effect=DatabaseError('disk I/O error')):
            with self.assertLogs('core.registry', level='WARNING'):
                registry.finish_training_run(run_row, training_result('x'))

    def test_evaluation_failure(self):
        """Test a failed evaluation insert returns None."""
        with mock.patch('core.registry.EvaluationRun') as model:
            model.objects.create.side_effect = DatabaseError('no such table')
            with self.assertLogs('core.registry', level='WARNING'):
                report = AccuracyReport(mode='probe', accuracies=[1.0], seeds=[0])
                self.assertIsNone(registry.record_evaluation(report))


# =============================================================================
# INTEGRATION TESTS - Command
# =============================================================================

class CheckCommandTests(SimpleTestCase):
    """Test the coverage and gradcheck subcommands."""

    def test_coverage_passes(self):
        """Test a coverage table within tolerance exits 0 after the echo."""
        code, out, _ = call('coverage', '--T', '4,16', '--y', '1,4', '--B', '1,5', '--trials', '20000', '--seed', '3')
        self.assertEqual(code, 0)
        lines = out.splitlines()
        self.assertEqual(lines[0], 'effective config:')
        self.assertIn('  trials=20000', lines)
        self.assertIn('T,y,B,closed_form,monte_carlo,stderr,ok', lines)
        self.assertEqual(sum(line.endswith(',PASS') for line in lines), 8)

    def test_coverage_failure_exit_code(self):
        """Test a row outside tolerance exits 1."""
        with mock.patch('core.management.commands.scfa.within_tolerance', return_value=False):
            code, out, err = call('coverage', '--T', '4', '--y', '2', '--B', '1', '--trials', '100')
        self.assertEqual(code, 1)
        self.assertIn(',FAIL', out)
        self.assertTrue(err.startswith('CommandError: coverage:'))

    def test_coverage_writes_table(self):
        """Test --output-dir saves the table."""
        with tempfile.TemporaryDirectory() as tmp:
            code, _, _ = call('coverage', '--T', '8', '--y', '2', '--B', '1', '--trials', '1000', '--output-dir', tmp)
            self.assertEqual(code, 0)
            self.assertEqual(len((Path(tmp) / 'coverage.csv').read_text().splitlines()), 2)

    def test_coverage_bad_value(self):
        """Test a non-numeric list exits 2."""
        code, _, err = call('coverage', '--T', 'sixteen')
        self.assertEqual(code, 2)
        self.assertIn('coverage: invalid value', err)

    def test_gradcheck_passes(self):
        """Test gradcheck reports PASS for the analytic gradients."""
        code, out, _ = call('gradcheck', '--seed', '1')
        self.assertEqual(code, 0)
        self.assertRegex(out, r'max_rel_err=\S+ PASS')
        self.assertIn('  seed=1', out.splitlines())

    def test_gradcheck_zero_tolerance_fails(self):
        """Test an unreachable tolerance exits 1 with FAIL."""
        code, out, err = call('gradcheck', '--seed', '1', '--tolerance', '0')
        self.assertEqual(code, 1)
        self.assertIn(' FAIL', out)
        self.assertTrue(err.startswith('CommandError: gradcheck:'))

    def test_unknown_flag(self):
        """Test unknown flags are rejected."""
        code, _, err = call('gradcheck', '--bogus', '1')
        self.assertNotEqual(code, 0)
        self.assertTrue(err.startswith('CommandError:'))


@override_settings(SCFA_REGISTRY=False)
class PipelineCommandTests(SimpleTestCase):
    """Test the dataset, training and evaluation subcommands end to end."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.data = self.root / 'data'
        self.manifest = self.data / 'manifest.csv'

    def tearDown(self):
        self.tmp.cleanup()

    def generate(self):
        code, out, err = call('gen-synth', '--output-dir', str(self.data), '--seed', '2', *SYNTH_FLAGS)
        self.assertEqual(code, 0, msg=err)
        return out

    def test_gen_synth(self):
        """Test gen-synth echoes its config and writes the manifest."""
        out = self.generate()
        lines = out.splitlines()
        self.assertEqual(lines[0], 'effective config:')
        self.assertIn('  T=5', lines)
        self.assertIn('  seed=2', lines)
        self.assertIn(f'manifest={self.manifest}', lines)
        self.assertTrue(self.manifest.is_file())

    def test_gen_synth_invalid(self):
        """Test T < y exits 2."""
        code, _, err = call('gen-synth', '--output-dir', str(self.data), '--T', '3', '--y', '4')
        self.assertEqual(code, 2)
        self.assertIn('invalid configuration', err)

    def test_aggregate(self):
        """Test two aggregated images per video are written."""
        self.generate()
        out_dir = self.root / 'agg'
        code, _, err = call('aggregate', '--manifest', str(self.manifest), '--output-dir', str(out_dir), *TINY_FLAGS)
        self.assertEqual(code, 0, msg=err)
        self.assertEqual(len(list((out_dir / 'aggregated').glob('*.png'))), 8)

    def test_montage(self):
        """Test the montage of one video is written and its views listed."""
        self.generate()
        code, out, err = call(
            'montage', '--manifest', str(self.manifest), '--output-dir', str(self.root), '--video-id', 'c1_v000',
            *TINY_FLAGS,
        )
        self.assertEqual(code, 0, msg=err)
        self.assertTrue((self.root / 'montage_c1_v000.png').is_file())
        self.assertIn('view1_indices=', out)

    def test_montage_unknown_video(self):
        """Test an unknown video id exits 2."""
        self.generate()
        code, _, err = call('montage', '--manifest', str(self.manifest), '--video-id', 'nope', *TINY_FLAGS)
        self.assertEqual(code, 2)
        self.assertIn('nope', err)

    def test_montage_echoes_target_and_gap(self):
        """Test the montage echo carries the video selection and the gap."""
        self.generate()
        code, out, err = call(
            'montage', '--manifest', str(self.manifest), '--output-dir', str(self.root), '--index', '1',
            '--gap', '0', *TINY_FLAGS,
        )
        self.assertEqual(code, 0, msg=err)
        lines = out.splitlines()
        for line in ('  video_id=', '  index=1', '  gap=0'):
            self.assertIn(line, lines)

    def test_montage_negative_gap(self):
        """Test a negative gap exits 2 with one error line."""
        self.generate()
        code, _, err = call(
            'montage', '--manifest', str(self.manifest), '--output-dir', str(self.root), '--gap', '-1', *TINY_FLAGS,
        )
        self.assertEqual(code, 2)
        self.assertEqual(len(err.splitlines()), 1)
        self.assertIn('gap must be non-negative', err)

    def test_aggregate_echoes_views(self):
        """Test aggregate echoes the number of views."""
        self.generate()
        code, out, err = call(
            'aggregate', '--manifest', str(self.manifest), '--output-dir', str(self.root / 'agg'), '--views', '1',
            *TINY_FLAGS,
        )
        self.assertEqual(code, 0, msg=err)
        self.assertIn('  views=1', out.splitlines())
        self.assertEqual(len(list((self.root / 'agg' / 'aggregated').glob('*.png'))), 4)

    def test_train_bad_manifest_row(self):
        """Test a malformed manifest row exits 2 naming the row and file."""
        self.manifest.parent.mkdir(parents=True)
        self.manifest.write_text('path,label,video_id\nvid,abc,v0\n')
        code, out, err = call('train', '--manifest', str(self.manifest), '--output-dir', str(self.root / 'run'))
        self.assertEqual(code, 2)
        self.assertTrue(out.startswith('effective config:'))
        self.assertEqual(len(err.splitlines()), 1)
        self.assertTrue(err.startswith('CommandError: train:'))
        self.assertIn('bad manifest row 2', err)
        self.assertIn(str(self.manifest), err)

    def test_train_missing_manifest(self):
        """Test training on a missing manifest exits 2 naming the path."""
        missing = self.root / 'absent' / 'manifest.csv'
        code, out, err = call('train', '--manifest', str(missing), '--output-dir', str(self.root / 'run'))
        self.assertEqual(code, 2)
        self.assertTrue(out.startswith('effective config:'))
        self.assertEqual(len(err.splitlines()), 1)
        self.assertTrue(err.startswith('CommandError: train:'))
        self.assertIn(str(missing), err)

    def test_train_requires_manifest(self):
        """Test training without a manifest exits 2."""
        code, _, err = call('train', '--output-dir', str(self.root / 'run'))
        self.assertEqual(code, 2)
        self.assertIn('manifest is required', err)

    def test_train_then_evaluate(self):
        """Test train writes its artifacts and probe/finetune read the checkpoint."""
        self.generate()
        run_dir = self.root / 'run'
        common = ['--manifest', str(self.manifest), '--output-dir', str(run_dir), *TINY_FLAGS]
        code, out, err = call('train', *common, '--batch-size', '2', '--epochs', '2')
        self.assertEqual(code, 0, msg=err)
        for name in ('metrics.csv', 'final.ckpt', 'best.ckpt'):
            self.assertTrue((run_dir / name).is_file(), msg=name)
        self.assertIn(f'checkpoint={run_dir / "final.ckpt"}', out.splitlines())

        evaluation = [*common, '--checkpoint', str(run_dir / 'final.ckpt'), '--eval-seeds', '2', '--test-fraction', '0.5']
        code, out, err = call('probe', *evaluation, '--probe-epochs', '5')
        self.assertEqual(code, 0, msg=err)
        self.assertIn('accuracy_mean=', out)
        self.assertEqual(sum(line.startswith('seed=') for line in out.splitlines()), 2)

        code, out, err = call('finetune', *evaluation, '--finetune-epochs', '1')
        self.assertEqual(code, 0, msg=err)
        self.assertIn('accuracy_std=', out)

    def test_probe_feature_file(self):
        """Test probing an exported feature file needs no manifest."""
        path = self.root / 'features.ckpt'
        labels = [0, 1, 2] * 5
        export_features(path, [[float(label == c) for c in range(3)] for label in labels], labels)
        code, out, err = call('probe', '--features', str(path), '--feature-dim', '3', '--eval-seeds', '2')
        self.assertEqual(code, 0, msg=err)
        self.assertIn('accuracy_mean=1.0000', out)
        self.assertIn(f'  features={path}', out.splitlines())
        self.assertIn('  feature_dim=3', out.splitlines())

    def test_probe_feature_dim_mismatch(self):
        """Test a feature file of the wrong width exits 2."""
        path = self.root / 'features.ckpt'
        export_features(path, [[0.0, 1.0], [1.0, 0.0]], [0, 1])
        code, _, err = call('probe', '--features', str(path), '--feature-dim', '4')
        self.assertEqual(code, 2)
        self.assertIn('expected 4, found 2', err)
