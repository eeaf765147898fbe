"""
Single entry point for every pipeline stage.

Usage:
    python manage.py scfa gen-synth --output-dir data/synth --seed 0
    python manage.py scfa aggregate --manifest data/synth/manifest.csv
    python manage.py scfa train --config train.env --epochs 50
    python manage.py scfa probe --manifest data/synth/manifest.csv --checkpoint runs/final.ckpt
    python manage.py scfa finetune --manifest data/synth/manifest.csv --checkpoint runs/final.ckpt
    python manage.py scfa coverage --T 16 --y 16 --B 10 --trials 1000000
    python manage.py scfa gradcheck --seed 1
    python manage.py scfa montage --manifest data/synth/manifest.csv --video-id c0_v000

Every subcommand prints its effective configuration before doing any work.
Input and I/O failures exit with status 2, failed internal checks with status 1.
"""
from dataclasses import fields
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from core.exceptions import ScfaError
from encoder.gradcheck import gradcheck_model
from frames.aggregation import make_montage
from frames.loading import load_dataset, save_aggregated_image, write_image
from frames.sampling import UNIFORM, coverage_table, derive_draw_id, within_tolerance
from synthetic.generator import SynthConfig, gen_synthetic_dataset, load_synth_config
from training.config import TrainConfig, load_train_config, read_config_file
from training.evaluation import default_seeds, finetune_classifier, linear_probe, probe_features
from training.features import import_features
from training.trainer import train_contrastive

INPUT_ERROR = 2
CHECK_FAILED = 1


def _flag(name):
    return '--' + name.replace('_', '-')


def _add_config_flags(parser, config_class):
    """One string flag per config field; the config form validates the values."""
    parser.add_argument('--config', help='key=value file; flags override its values')
    for f in fields(config_class):
        parser.add_argument(_flag(f.name), dest=f.name, default=None, metavar=f.name.upper())


def _overrides(options, config_class):
    return {f.name: options.get(f.name) for f in fields(config_class)}


def _int_list(text):
    return [int(v) for v in str(text).split(',') if v.strip()]


class Command(BaseCommand):
    help = 'Supervised contrastive frame aggregation pipeline'

    def add_arguments(self, parser):
        sub = parser.add_subparsers(dest='subcommand', required=True)

        gen = sub.add_parser('gen-synth', help='Generate the synthetic moving-shape dataset')
        _add_config_flags(gen, SynthConfig)

        for name, text in [
            ('aggregate', 'Write aggregated grid images for every video in a manifest'),
            ('train', 'Contrastive pre-training'),
            ('probe', 'Linear probe of a checkpoint'),
            ('finetune', 'Fine-tune a checkpoint (or a random init) end to end'),
            ('montage', 'Two sampled views of one video side by side'),
        ]:
            p = sub.add_parser(name, help=text)
            _add_config_flags(p, TrainConfig)
            if name in ('probe', 'finetune'):
                p.add_argument('--checkpoint', help='omit to evaluate a randomly initialized encoder')
            if name == 'probe':
                p.add_argument('--features', help='probe an exported feature file instead of a checkpoint')
                p.add_argument('--feature-dim', type=int, help='reject feature files of another width')
            if name == 'aggregate':
                p.add_argument('--views', type=int, default=2, help='sampled views per video')
            if name == 'montage':
                target = p.add_mutually_exclusive_group()
                target.add_argument('--video-id')
                target.add_argument('--index', type=int, default=0)
                p.add_argument('--gap', type=int, default=4)

        cov = sub.add_parser('coverage', help='Closed-form vs Monte Carlo frame coverage')
        cov.add_argument('--config')
        cov.add_argument('--T', dest='T', default=None, help='comma-separated frame counts')
        cov.add_argument('--y', default=None, help='comma-separated frames per view')
        cov.add_argument('--B', dest='B', default=None, help='comma-separated batch counts')
        cov.add_argument('--trials', type=int, default=None)
        cov.add_argument('--seed', type=int, default=None)
        cov.add_argument('--output-dir', dest='output_dir', default=None, help='also write coverage.csv here')

        grad = sub.add_parser('gradcheck', help='Finite-difference check of the analytic gradients')
        grad.add_argument('--config')
        grad.add_argument('--seed', type=int, default=None)
        grad.add_argument('--tolerance', type=float, default=None)
        grad.add_argument('--output-dir', dest='output_dir', default=None)

    def handle(self, *args, **options):
        subcommand = options['subcommand']
        handler = getattr(self, 'handle_' + subcommand.replace('-', '_'))
        try:
            handler(options)
        except CommandError:
            raise
        except (ScfaError, OSError) as e:
            message = ' '.join(str(e).split())
            raise CommandError(f"{subcommand}: {message}", returncode=INPUT_ERROR)

    # ------------------------------------------------------------------

    def echo(self, lines):
        self.stdout.write('effective config:')
        for line in lines:
            self.stdout.write(f"  {line}")

    def train_config(self, options, needs_manifest=True, extra=()):
        """Load and echo the TrainConfig plus any subcommand-only values in `extra`."""
        config = load_train_config(options.get('config'), _overrides(options, TrainConfig))
        self.echo([*config.echo_lines(), *extra])
        if needs_manifest and not config.manifest:
            raise CommandError("manifest is required (--manifest or manifest= in --config)", returncode=INPUT_ERROR)
        return config

    def handle_gen_synth(self, options):
        config = load_synth_config(options.get('config'), _overrides(options, SynthConfig))
        self.echo(config.echo_lines())
        manifest = gen_synthetic_dataset(config)
        self.stdout.write(f"manifest={manifest}")
        self.stdout.write(self.style.SUCCESS(
            f"Generated {config.num_classes * config.videos_per_class} videos"
        ))

    def handle_aggregate(self, options):
        views = options['views']
        config = self.train_config(options, extra=[f"views={views}"])
        if views < 1:
            raise CommandError("--views must be at least 1", returncode=INPUT_ERROR)
        dataset = load_dataset(config.manifest)
        out = Path(config.output_dir) / 'aggregated'
        plan, layout = config.train_plan, config.layout
        written = 0
        for index, seq in enumerate(dataset.sequences):
            for view in range(views):
                draw_id = derive_draw_id('aggregate', seq.video_id, view)
                save_aggregated_image(out, dataset.aggregate(index, plan, layout, draw_id), draw_id)
                written += 1
        self.stdout.write(f"output_dir={out}")
        self.stdout.write(self.style.SUCCESS(f"Wrote {written} aggregated images"))

    def handle_train(self, options):
        config = self.train_config(options)
        result = train_contrastive(config)
        self.stdout.write(f"metrics={result.metrics_path}")
        self.stdout.write(f"checkpoint={result.checkpoint_path}")
        self.stdout.write(f"best_checkpoint={result.best_checkpoint_path}")
        self.stdout.write(f"final_loss={result.final_loss!r}")
        self.stdout.write(self.style.SUCCESS(f"Trained {len(result.records)} epochs"))

    def write_report(self, report):
        for seed, accuracy in zip(report.seeds, report.accuracies):
            self.stdout.write(f"seed={seed} accuracy={accuracy:.4f}")
        self.stdout.write(f"accuracy_mean={report.mean:.4f} accuracy_std={report.std:.4f} seeds={len(report.seeds)}")
        self.stdout.write(self.style.SUCCESS(report.summary()))

    def handle_probe(self, options):
        if options.get('features'):
            config = self.train_config(options, needs_manifest=False, extra=[
                f"features={options['features']}", f"feature_dim={options.get('feature_dim') or ''}",
            ])
            features = import_features(options['features'], expected_dim=options.get('feature_dim'))
            report = probe_features(
                features.features, features.labels, default_seeds(config),
                epochs=config.probe_epochs, lr=config.probe_lr, test_fraction=config.test_fraction,
            )
        else:
            config = self.train_config(options, extra=[f"checkpoint={options.get('checkpoint') or ''}"])
            report = linear_probe(options.get('checkpoint'), load_dataset(config.manifest), config)
        self.write_report(report)

    def handle_finetune(self, options):
        config = self.train_config(options, extra=[f"checkpoint={options.get('checkpoint') or ''}"])
        report = finetune_classifier(options.get('checkpoint'), load_dataset(config.manifest), config)
        self.write_report(report)

    def handle_montage(self, options):
        config = self.train_config(options, extra=[
            f"video_id={options.get('video_id') or ''}", f"index={options['index']}", f"gap={options['gap']}",
        ])
        dataset = load_dataset(config.manifest)
        if options.get('video_id'):
            if options['video_id'] not in dataset.video_ids:
                raise CommandError(f"video {options['video_id']} is not in {config.manifest}", returncode=INPUT_ERROR)
            index = dataset.video_ids.index(options['video_id'])
        else:
            index = options['index']
            if not 0 <= index < len(dataset):
                raise CommandError(f"index {index} outside a {len(dataset)}-video dataset", returncode=INPUT_ERROR)
        video_id = dataset[index].video_id
        plan = config.train_plan if config.sampling_mode != UNIFORM else config.eval_plan()
        views = [
            dataset.aggregate(index, plan, config.layout, derive_draw_id('montage', video_id, view))
            for view in (0, 1)
        ]
        path = write_image(
            Path(config.output_dir) / f"montage_{video_id}.png",
            make_montage(views[0].pixels, views[1].pixels, gap=options['gap']),
        )
        for view, image in enumerate(views):
            self.stdout.write(f"view{view}_indices={','.join(str(i) for i in image.source_indices)}")
        self.stdout.write(f"montage={path}")

    def handle_coverage(self, options):
        values = {'t': '16', 'y': '16', 'b': '1,5,10', 'trials': '1000000', 'seed': None, 'output_dir': None}
        if options.get('config'):
            values.update(read_config_file(options['config']))
        for key in ('T', 'y', 'B', 'trials', 'seed', 'output_dir'):
            if options.get(key) is not None:
                values[key.lower()] = options[key]
        try:
            Ts, ys, Bs = _int_list(values['t']), _int_list(values['y']), _int_list(values['b'])
            trials = int(values['trials'])
            seed = int(values['seed']) if values['seed'] is not None else self.default_seed()
        except (TypeError, ValueError) as e:
            raise CommandError(f"coverage: invalid value ({e})", returncode=INPUT_ERROR)
        self.echo([
            f"T={','.join(map(str, Ts))}", f"y={','.join(map(str, ys))}", f"B={','.join(map(str, Bs))}",
            f"trials={trials}", f"seed={seed}",
        ])

        rows = coverage_table(Ts, ys, Bs, trials, seed=seed)
        self.stdout.write('T,y,B,closed_form,monte_carlo,stderr,ok')
        failed = 0
        lines = []
        for row in rows:
            ok = within_tolerance(row['closed_form'], row['monte_carlo'], trials)
            failed += not ok
            line = (f"{row['T']},{row['y']},{row['B']},{row['closed_form']:.6e},"
                    f"{row['monte_carlo']:.6e},{row['stderr']:.3e},{'PASS' if ok else 'FAIL'}")
            lines.append(line)
            self.stdout.write(line)
        if values.get('output_dir'):
            path = Path(values['output_dir']) / 'coverage.csv'
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text('T,y,B,closed_form,monte_carlo,stderr,ok\n' + '\n'.join(lines) + '\n')
            self.stdout.write(f"table={path}")
        if failed:
            raise CommandError(f"coverage: {failed} rows outside 4 standard errors", returncode=CHECK_FAILED)

    def handle_gradcheck(self, options):
        values = {}
        if options.get('config'):
            values.update(read_config_file(options['config']))
        try:
            seed = options['seed'] if options.get('seed') is not None else int(values.get('seed', self.default_seed()))
            tolerance = options['tolerance'] if options.get('tolerance') is not None else float(values.get('tolerance', 1e-3))
        except (TypeError, ValueError) as e:
            raise CommandError(f"gradcheck: invalid value ({e})", returncode=INPUT_ERROR)
        self.echo([f"seed={seed}", f"tolerance={tolerance}"])
        report = gradcheck_model(seed=seed, tolerance=tolerance)
        for name, err in report.per_tensor.items():
            self.stdout.write(f"  {name} rel_err={err:.3e}")
        verdict = 'PASS' if report.passed else 'FAIL'
        self.stdout.write(f"max_rel_err={report.max_rel_err:.3e} {verdict}")
        if options.get('output_dir'):
            path = Path(options['output_dir']) / 'gradcheck.txt'
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(f"max_rel_err={report.max_rel_err:.3e} {verdict}\n")
        if not report.passed:
            raise CommandError(
                f"gradcheck: max_rel_err={report.max_rel_err:.3e} exceeds {tolerance}", returncode=CHECK_FAILED
            )

    def default_seed(self):
        return settings.SCFA_SEED
