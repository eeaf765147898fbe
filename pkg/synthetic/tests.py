"""
Tests for the synthetic moving-shape generator.
Tests cover: Dataset layout, Determinism, Class design, Config validation.
"""
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, override_settings

from core.exceptions import ConfigError, InvalidInputError
from frames.loading import load_dataset, read_manifest
from synthetic.generator import (
    COUNTER_ORBIT,
    MANIFEST_NAME,
    MOTIONS,
    ORBIT,
    PER_CLASS,
    PER_VIDEO,
    SHAPES,
    SynthConfig,
    class_design,
    gen_synthetic_dataset,
    load_synth_config,
    max_classes,
    motion_path,
    render_video,
    video_design,
    video_id_for,
)

SMALL = SynthConfig(num_classes=2, videos_per_class=3, T=5, height=16, width=16, y=4, shape_radius=2, seed=4)
BENCHMARK = SynthConfig(num_classes=4, videos_per_class=12, T=16, seed=0)


def foreground(frame):
    return np.argwhere(frame[..., 0] > 127)


def nearest_centroid(train, test):
    """Confusion matrix of a nearest-centroid classifier; train/test map label -> list of vectors."""
    labels = sorted(train)
    centroids = np.stack([np.mean(train[k], axis=0) for k in labels])
    confusion = np.zeros((len(labels), len(labels)), dtype=int)
    for k in labels:
        for vector in test[k]:
            confusion[k, np.argmin(np.linalg.norm(centroids - vector, axis=1))] += 1
    return confusion


# =============================================================================
# UNIT TESTS - Generator
# =============================================================================

class ClassDesignTests(SimpleTestCase):
    """Test the shape and motion assigned to each class."""

    def test_classes_share_shapes_by_default(self):
        """Test every class draws from all shapes and only the motion differs."""
        shapes0, motion0 = class_design(0)
        shapes1, motion1 = class_design(1)
        self.assertEqual(shapes0, SHAPES)
        self.assertEqual(shapes0, shapes1)
        self.assertNotEqual(motion0, motion1)

    def test_paired_classes_share_shape_in_class_mode(self):
        """Test classes 0 and 1 draw one shape with different motions."""
        shapes0, motion0 = class_design(0, PER_CLASS)
        shapes1, motion1 = class_design(1, PER_CLASS)
        self.assertEqual(len(shapes0), 1)
        self.assertEqual(shapes0, shapes1)
        self.assertNotEqual(motion0, motion1)

    def test_designs_distinct_up_to_limit(self):
        """Test every allowed class count gives pairwise distinct designs."""
        for mode in (PER_VIDEO, PER_CLASS):
            with self.subTest(mode=mode):
                designs = [class_design(k, mode) for k in range(max_classes(mode))]
                self.assertEqual(len(set(designs)), max_classes(mode))
                with self.assertRaises(InvalidInputError):
                    class_design(max_classes(mode), mode)

    def test_four_classes_cover_axis_motions(self):
        """Test the default four classes are the horizontal, vertical, diagonal and orbit patterns."""
        self.assertEqual([class_design(k)[1] for k in range(4)], list(MOTIONS[:4]))

    def test_motion_ranges(self):
        """Test sweeps stay in [0, amplitude] and orbits within half of it."""
        dx, dy = motion_path(MOTIONS[0], 32, 1.0, 16.0)
        self.assertEqual((dx.min(), dx.max()), (0.0, 16.0))
        self.assertFalse(dy.any())
        ox, oy = motion_path(ORBIT, 32, 1.0, 16.0)
        np.testing.assert_allclose(np.hypot(ox, oy), 8.0)

    def test_counter_orbit_mirrors_orbit(self):
        """Test the counter orbit visits the orbit's positions in the opposite direction."""
        ox, oy = motion_path(ORBIT, 16, 1.0, 16.0)
        cx, cy = motion_path(COUNTER_ORBIT, 16, 1.0, 16.0)
        np.testing.assert_array_equal(cx, ox)
        np.testing.assert_array_equal(cy, -oy)

    def test_unknown_motion(self):
        """Test an unknown motion raises."""
        with self.assertRaises(InvalidInputError):
            motion_path('zigzag', 4, 1.0, 8.0)

    def test_shape_must_fit(self):
        """Test a shape too large for its path raises."""
        with self.assertRaises(InvalidInputError):
            render_video(replace(SMALL, shape_radius=7), 0, 0)

    def test_start_jitter_bounds_start(self):
        """Test starts stay within start_jitter pixels of one another."""
        config = replace(BENCHMARK, start_jitter=1, speed_jitter=0.0)
        starts = {(d.x0, d.y0) for d in (video_design(config, 0, i) for i in range(20))}
        xs, ys = zip(*starts)
        self.assertLessEqual(max(xs) - min(xs), 2)
        self.assertLessEqual(max(ys) - min(ys), 2)


class RenderVideoTests(SimpleTestCase):
    """Test single-video rendering."""

    def test_frames(self):
        """Test T uint8 frames of the configured size."""
        frames = render_video(SMALL, 1, 0)
        self.assertEqual(len(frames), 5)
        self.assertEqual(frames[0].shape, (16, 16, 3))
        self.assertEqual(frames[0].dtype, np.uint8)

    def test_seeded(self):
        """Test the same (seed, label, index) renders identically."""
        a = render_video(SMALL, 1, 2)
        b = render_video(SMALL, 1, 2)
        c = render_video(replace(SMALL, seed=5), 1, 2)
        self.assertTrue(all(np.array_equal(x, y) for x, y in zip(a, b)))
        self.assertFalse(all(np.array_equal(x, y) for x, y in zip(a, c)))

    def test_design_matches_render(self):
        """Test video_design reports the shape position the render draws."""
        config = replace(SMALL, noise=0.0)
        design = video_design(config, 0, 1)
        frames = render_video(config, 0, 1)
        for t, frame in enumerate(frames):
            centre = foreground(frame).mean(axis=0)
            self.assertLessEqual(abs(centre[1] - (design.x0 + design.dx[t])), 1.5)
            self.assertLessEqual(abs(centre[0] - (design.y0 + design.dy[t])), 1.5)

    def test_shapes_vary_within_a_class(self):
        """Test one class shows more than one shape across its videos by default."""
        shapes = {video_design(BENCHMARK, 0, i).shape for i in range(12)}
        self.assertGreater(len(shapes), 1)
        per_class = {video_design(replace(BENCHMARK, shape_mode=PER_CLASS), 0, i).shape for i in range(12)}
        self.assertEqual(len(per_class), 1)

    def _assert_translations(self, config, label, indices):
        reference = [foreground(f) for f in render_video(config, label, indices[0])]
        for index in indices[1:]:
            frames = [foreground(f) for f in render_video(config, label, index)]
            shift = frames[0][0] - reference[0][0]
            for ref, got in zip(reference, frames):
                with self.subTest(label=label, index=index):
                    self.assertEqual(ref.shape, got.shape)
                    np.testing.assert_array_equal(got - ref, np.broadcast_to(shift, ref.shape))

    def test_noiseless_videos_are_translations(self):
        """Test zero noise and jitter make a class's videos translations of one another."""
        config = SynthConfig(
            num_classes=4, videos_per_class=4, T=12, noise=0.0, speed_jitter=0.0, shape_mode=PER_CLASS, seed=2
        )
        for label in range(4):
            self._assert_translations(config, label, list(range(4)))

    def test_noiseless_same_shape_videos_are_translations(self):
        """Test with shapes drawn per video, same-shape videos of a class are translations."""
        config = SynthConfig(num_classes=4, videos_per_class=16, T=12, noise=0.0, speed_jitter=0.0, seed=2)
        for label in range(4):
            by_shape = {}
            for index in range(16):
                by_shape.setdefault(video_design(config, label, index).shape, []).append(index)
            for indices in by_shape.values():
                if len(indices) > 1:
                    self._assert_translations(config, label, indices)

    def test_class_signal_in_mean_frames(self):
        """Test nearest-centroid on mean frames beats chance."""
        means = {
            k: [np.mean(render_video(BENCHMARK, k, i), axis=0).ravel() for i in range(12)]
            for k in range(4)
        }
        confusion = nearest_centroid({k: v[:6] for k, v in means.items()}, {k: v[6:] for k, v in means.items()})
        self.assertGreater(np.trace(confusion) / confusion.sum(), 0.25)

    def test_single_frames_cannot_separate_paired_classes(self):
        """Test nearest-centroid on single frames stays below 100% and mixes up classes 0 and 1."""
        frames = {
            k: [f.astype(np.float64).ravel() for i in range(12) for f in render_video(BENCHMARK, k, i)]
            for k in range(4)
        }
        per_video = BENCHMARK.T * 6
        confusion = nearest_centroid(
            {k: v[:per_video] for k, v in frames.items()}, {k: v[per_video:] for k, v in frames.items()}
        )
        self.assertLess(np.trace(confusion) / confusion.sum(), 1.0)
        self.assertGreater(confusion[0, 1] + confusion[1, 0], 0)


# =============================================================================
# INTEGRATION TESTS - Dataset files
# =============================================================================

class GenSyntheticDatasetTests(SimpleTestCase):
    """Test the on-disk dataset layout."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_counts(self):
        """Test one frame directory per video and one manifest row per video."""
        manifest = gen_synthetic_dataset(SMALL, self.root / 'a')
        self.assertEqual(manifest, self.root / 'a' / MANIFEST_NAME)
        entries = read_manifest(manifest)
        self.assertEqual(len(entries), 6)
        self.assertEqual(len(manifest.read_text().splitlines()), 7)
        for entry in entries:
            self.assertEqual(len(list(Path(entry.path).glob('*.png'))), 5)
        self.assertEqual(entries[0].video_id, video_id_for(0, 0))

    def test_loads_into_frame_pipeline(self):
        """Test the manifest loads back with the generated labels and frames."""
        dataset = load_dataset(gen_synthetic_dataset(SMALL, self.root))
        self.assertEqual(dataset.labels.tolist(), [0, 0, 0, 1, 1, 1])
        np.testing.assert_array_equal(dataset[4].frames[2], render_video(SMALL, 1, 1)[2])

    def test_byte_identical_regeneration(self):
        """Test the same seed writes byte-identical files."""
        gen_synthetic_dataset(SMALL, self.root / 'a')
        gen_synthetic_dataset(SMALL, self.root / 'b')
        files = sorted(p.relative_to(self.root / 'a') for p in (self.root / 'a').rglob('*') if p.is_file())
        self.assertEqual(len(files), 31)
        for rel in files:
            self.assertEqual((self.root / 'a' / rel).read_bytes(), (self.root / 'b' / rel).read_bytes())


# =============================================================================
# UNIT TESTS - Config
# =============================================================================

@override_settings(SCFA_SEED=11)
class SynthConfigTests(SimpleTestCase):
    """Test SynthConfig loading and validation."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'synth.cfg'

    def tearDown(self):
        self.tmp.cleanup()

    def test_defaults(self):
        """Test the default benchmark and the settings seed."""
        config = load_synth_config()
        self.assertEqual((config.num_classes, config.videos_per_class, config.T), (4, 50, 32))
        self.assertEqual((config.height, config.width), (32, 32))
        self.assertEqual(config.seed, 11)

    def test_file_and_flags(self):
        """Test file keys, including T, and flag precedence."""
        self.path.write_text("T=20\nnoise=0\nseed=3\n")
        config = load_synth_config(self.path, {'seed': '9', 'y': '8'})
        self.assertEqual(config.T, 20)
        self.assertEqual(config.noise, 0.0)
        self.assertEqual(config.seed, 9)
        self.assertEqual(config.y, 8)

    def test_flag_T_beats_file(self):
        """Test a T flag wins over the file value."""
        self.path.write_text("T=20\n")
        self.assertEqual(load_synth_config(self.path, {'T': '24'}).T, 24)

    def test_fewer_frames_than_y(self):
        """Test T < y is rejected."""
        with self.assertRaises(ConfigError):
            load_synth_config(overrides={'T': '8', 'y': '16'})

    def test_single_class(self):
        """Test fewer than two classes is rejected."""
        with self.assertRaises(ConfigError) as ctx:
            load_synth_config(overrides={'num_classes': '1'})
        self.assertIn('num_classes', ctx.exception.errors)

    def test_too_many_classes(self):
        """Test more classes than distinct designs is rejected in either shape mode."""
        self.assertEqual(load_synth_config(overrides={'num_classes': str(max_classes())}).num_classes, 6)
        with self.assertRaises(ConfigError) as ctx:
            load_synth_config(overrides={'num_classes': str(max_classes() + 1)})
        self.assertIn('num_classes', ctx.exception.errors)
        config = load_synth_config(overrides={'num_classes': '8', 'shape_mode': PER_CLASS})
        self.assertEqual(config.shape_mode, PER_CLASS)
        with self.assertRaises(ConfigError):
            load_synth_config(overrides={'num_classes': '9', 'shape_mode': PER_CLASS})

    def test_unknown_shape_mode(self):
        """Test an unknown shape mode is rejected."""
        with self.assertRaises(ConfigError) as ctx:
            load_synth_config(overrides={'shape_mode': 'frame'})
        self.assertIn('shape_mode', ctx.exception.errors)
