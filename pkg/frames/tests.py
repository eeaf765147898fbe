"""
Tests for the frame pipeline.
Tests cover: Temporal sampling, Bilinear resize, Grid aggregation, Coverage estimate, Frame/manifest I/O.
"""
import os
import tempfile
import unittest
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from core.exceptions import FrameLoadError, InvalidInputError, ShapeMismatchError
from frames.aggregation import (
    DESK_LAYOUT,
    FULL_RES_LAYOUT,
    GridLayout,
    aggregate_to_grid,
    extract_cell,
    make_montage,
    resize_frame,
)
from frames.loading import (
    ManifestEntry,
    VideoDataset,
    aggregated_filename,
    load_dataset,
    load_frame_sequence,
    read_manifest,
    save_aggregated_image,
    write_image,
    write_manifest,
)
from frames.sampling import (
    UNIFORM,
    WITH_REPLACEMENT,
    WITHOUT_REPLACEMENT,
    SamplingPlan,
    coverage_probability,
    coverage_table,
    derive_draw_id,
    monte_carlo_coverage,
    sample_indices,
    within_tolerance,
)

requires_acceptance = unittest.skipUnless(
    os.getenv('SCFA_RUN_ACCEPTANCE'),
    "Slow acceptance check. Set SCFA_RUN_ACCEPTANCE=1 to run it."
)


def write_video(directory, count, shape=(32, 32), seed=0):
    rng = np.random.default_rng(seed)
    for t in range(count):
        write_image(Path(directory) / f"{t:03d}.png", rng.integers(0, 256, size=(*shape, 3), dtype=np.uint8))


# =============================================================================
# UNIT TESTS - Sampling
# =============================================================================

class SampleIndicesTests(SimpleTestCase):
    """Test temporal frame sampling."""

    def test_y_equal_t_exhausts_frames(self):
        """Test T=16, y=16 without replacement returns every index in order."""
        self.assertEqual(sample_indices(16, SamplingPlan(y=16, mode=WITHOUT_REPLACEMENT)), list(range(16)))

    def test_single_frame_with_replacement(self):
        """Test T=1 with replacement repeats index 0."""
        self.assertEqual(sample_indices(1, SamplingPlan(y=4, mode=WITH_REPLACEMENT)), [0, 0, 0, 0])

    def test_draw_ids_give_different_views(self):
        """Test two draw ids under one seed give two different index lists."""
        plan = SamplingPlan(y=16, seed=7)
        self.assertNotEqual(sample_indices(100, plan, draw_id=0), sample_indices(100, plan, draw_id=1))

    def test_deterministic(self):
        """Test repeated calls agree exactly."""
        plan = SamplingPlan(y=8, mode=WITH_REPLACEMENT, seed=3)
        self.assertEqual(sample_indices(50, plan, 11), sample_indices(50, plan, 11))

    def test_without_replacement_strictly_increasing(self):
        """Test without-replacement indices are distinct and ascending."""
        for draw in range(20):
            indices = sample_indices(40, SamplingPlan(y=10, seed=1), draw)
            self.assertTrue(all(a < b for a, b in zip(indices, indices[1:])))
            self.assertTrue(all(0 <= i < 40 for i in indices))

    def test_with_replacement_non_decreasing(self):
        """Test with-replacement indices are sorted."""
        for draw in range(20):
            indices = sample_indices(5, SamplingPlan(y=10, mode=WITH_REPLACEMENT, seed=1), draw)
            self.assertEqual(indices, sorted(indices))

    def test_short_clip_padded_with_last_index(self):
        """Test y > T without replacement repeats the final frame."""
        self.assertEqual(sample_indices(3, SamplingPlan(y=5)), [0, 1, 2, 2, 2])

    def test_uniform_mode(self):
        """Test uniform mode picks evenly spaced frame centres."""
        self.assertEqual(sample_indices(32, SamplingPlan(y=4, mode=UNIFORM)), [4, 12, 20, 28])
        self.assertEqual(sample_indices(16, SamplingPlan(y=16, mode=UNIFORM)), list(range(16)))

    def test_zero_y_rejected(self):
        """Test y=0 raises."""
        with self.assertRaises(InvalidInputError):
            sample_indices(10, SamplingPlan(y=0))

    def test_unknown_mode_rejected(self):
        """Test an unknown sampling mode raises."""
        with self.assertRaises(InvalidInputError):
            SamplingPlan(y=4, mode='random')

    def test_draw_id_stable(self):
        """Test derived draw ids are stable and distinguish views."""
        self.assertEqual(derive_draw_id(0, 1, 'vid', 0), derive_draw_id(0, 1, 'vid', 0))
        self.assertNotEqual(derive_draw_id(0, 1, 'vid', 0), derive_draw_id(0, 1, 'vid', 1))
        self.assertGreaterEqual(derive_draw_id('x'), 0)


# =============================================================================
# UNIT TESTS - Resize and grid
# =============================================================================

class ResizeFrameTests(SimpleTestCase):
    """Test bilinear frame resizing."""

    def test_identity_resize(self):
        """Test resizing to the same size is bit-identical."""
        frame = np.random.default_rng(0).integers(0, 256, size=(56, 56, 3), dtype=np.uint8)
        np.testing.assert_array_equal(resize_frame(frame, 56, 56), frame)

    def test_constant_frame(self):
        """Test a constant frame stays constant when upscaled."""
        frame = np.full((2, 2, 3), 100, dtype=np.uint8)
        out = resize_frame(frame, 4, 4)
        self.assertEqual(out.shape, (4, 4, 3))
        self.assertTrue((out == 100).all())

    def test_column_upscale_matches_half_pixel_oracle(self):
        """Test [0; 255] resized to 4x1 follows half-pixel centres with clamping."""
        frame = np.zeros((2, 1, 3), dtype=np.uint8)
        frame[1] = 255
        out = resize_frame(frame, 4, 1)[:, 0, 0]
        # positions -0.25, 0.25, 0.75, 1.25 -> clamp -> 0, 63.75, 191.25, 255
        self.assertEqual(out.tolist(), [0, 64, 191, 255])

    def test_zero_target_rejected(self):
        """Test a zero target dimension raises."""
        with self.assertRaises(InvalidInputError):
            resize_frame(np.zeros((4, 4, 3), dtype=np.uint8), 0, 4)


class AggregateToGridTests(SimpleTestCase):
    """Test row-major grid placement."""

    def test_full_resolution_layout(self):
        """Test 16 frames of 56x56 give a 224x224 canvas with frame 5 at rows/cols 56-111."""
        frames = [np.full((56, 56, 3), k + 1, dtype=np.uint8) for k in range(16)]
        image = aggregate_to_grid(frames, FULL_RES_LAYOUT)
        self.assertEqual(image.pixels.shape, (224, 224, 3))
        self.assertTrue((image.pixels[56:112, 56:112] == 6).all())
        self.assertEqual(DESK_LAYOUT.canvas_h, 32)

    def test_single_frame_leaves_other_cells_black(self):
        """Test one frame fills cell 0 and the other 15 cells stay zero."""
        layout = GridLayout(4, 4, 8, 8)
        image = aggregate_to_grid([np.full((8, 8, 3), 200, dtype=np.uint8)], layout)
        self.assertTrue((extract_cell(image.pixels, layout, 0) == 200).all())
        for k in range(1, 16):
            self.assertFalse(extract_cell(image.pixels, layout, k).any())

    def test_too_many_frames_rejected(self):
        """Test y > n*m raises."""
        layout = GridLayout(1, 2, 4, 4)
        with self.assertRaises(InvalidInputError):
            aggregate_to_grid([np.zeros((4, 4, 3), dtype=np.uint8)] * 3, layout)

    def test_cell_shape_mismatch_rejected(self):
        """Test a frame of the wrong size raises."""
        with self.assertRaises(ShapeMismatchError):
            aggregate_to_grid([np.zeros((5, 4, 3), dtype=np.uint8)], GridLayout(2, 2, 4, 4))

    def test_montage(self):
        """Test the montage puts two views side by side with a black gap."""
        a = np.full((8, 8, 3), 10, dtype=np.uint8)
        b = np.full((8, 8, 3), 20, dtype=np.uint8)
        montage = make_montage(a, b, gap=2)
        self.assertEqual(montage.shape, (8, 18, 3))
        self.assertFalse(montage[:, 8:10].any())
        self.assertTrue((montage[:, 10:] == 20).all())

    def test_montage_negative_gap(self):
        """Test a negative gap raises instead of reaching numpy."""
        a = np.zeros((8, 8, 3), dtype=np.uint8)
        with self.assertRaises(InvalidInputError):
            make_montage(a, a, gap=-1)
        self.assertEqual(make_montage(a, a, gap=0).shape, (8, 16, 3))


# =============================================================================
# PROPERTY TESTS
# =============================================================================

class AggregationRoundTripProperties(SimpleTestCase):
    """Test extracting cells reproduces the resized inputs."""

    @settings(max_examples=200, deadline=None)
    @given(
        n=st.integers(1, 4), m=st.integers(1, 4),
        cell_h=st.integers(1, 12), cell_w=st.integers(1, 12),
        src=st.integers(1, 20), fill=st.floats(0.0, 1.0), seed=st.integers(0, 2**32 - 1),
    )
    def test_cells_round_trip(self, n, m, cell_h, cell_w, src, fill, seed):
        """Test every used cell is bit-exact and every unused cell is zero."""
        layout = GridLayout(n, m, cell_h, cell_w)
        y = max(1, int(round(fill * layout.capacity)))
        rng = np.random.default_rng(seed)
        frames = [
            resize_frame(rng.integers(0, 256, size=(src, src + 1, 3), dtype=np.uint8), cell_h, cell_w)
            for _ in range(y)
        ]
        image = aggregate_to_grid(frames, layout)
        for k in range(layout.capacity):
            cell = extract_cell(image.pixels, layout, k)
            if k < y:
                np.testing.assert_array_equal(cell, frames[k])
            else:
                self.assertFalse(cell.any())

    def test_full_resolution_fixture(self):
        """Test the 16-frame 56x56 layout round-trips exactly."""
        rng = np.random.default_rng(4)
        frames = [resize_frame(rng.integers(0, 256, size=(90, 120, 3), dtype=np.uint8), 56, 56) for _ in range(16)]
        image = aggregate_to_grid(frames, FULL_RES_LAYOUT)
        for k, frame in enumerate(frames):
            np.testing.assert_array_equal(extract_cell(image.pixels, FULL_RES_LAYOUT, k), frame)


# =============================================================================
# UNIT TESTS - Coverage
# =============================================================================

class CoverageTests(SimpleTestCase):
    """Test the closed-form and Monte Carlo frame coverage."""

    def test_zero_batches(self):
        """Test B=0 gives probability 1 for both estimators."""
        self.assertEqual(coverage_probability(10, 4, 0), 1.0)
        self.assertEqual(monte_carlo_coverage(10, 4, 0, trials=100).estimate, 1.0)

    def test_single_frame(self):
        """Test T=1 is always covered."""
        self.assertEqual(coverage_probability(1, 1, 1), 0.0)
        self.assertEqual(monte_carlo_coverage(1, 1, 1, trials=1000).estimate, 0.0)

    def test_closed_form_value(self):
        """Test (15/16)^160 is about 3.27e-5."""
        self.assertAlmostEqual(coverage_probability(16, 16, 10), (15 / 16) ** 160, places=15)
        self.assertAlmostEqual(coverage_probability(16, 16, 10), 3.27e-5, delta=0.01e-5)

    def test_monotone_in_batches(self):
        """Test the never-sampled probability falls as B grows."""
        values = [coverage_probability(16, 4, B) for B in range(0, 20)]
        self.assertTrue(all(a > b for a, b in zip(values, values[1:])))

    def test_small_grid_within_tolerance(self):
        """Test Monte Carlo agrees with the closed form on a reduced grid."""
        trials = 20_000
        for row in coverage_table([4, 16], [1, 4], [1, 5], trials, seed=3):
            self.assertTrue(
                within_tolerance(row['closed_form'], row['monte_carlo'], trials),
                msg=str(row),
            )

    def test_invalid_trials(self):
        """Test trials=0 raises."""
        with self.assertRaises(InvalidInputError):
            monte_carlo_coverage(4, 1, 1, trials=0)

    @requires_acceptance
    def test_full_grid_million_trials(self):
        """Test the full (T, y, B) grid at 10^6 trials."""
        trials = 1_000_000
        for row in coverage_table([2, 4, 16], [1, 4, 16], [1, 5, 10], trials, seed=0):
            self.assertTrue(within_tolerance(row['closed_form'], row['monte_carlo'], trials), msg=str(row))


# =============================================================================
# INTEGRATION TESTS - Files
# =============================================================================

class FrameLoadingTests(SimpleTestCase):
    """Test frame directories and manifests."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_load_directory(self):
        """Test 32 numbered frames load in order with the given label."""
        write_video(self.root / 'v', 32)
        seq = load_frame_sequence(self.root / 'v', 2)
        self.assertEqual(seq.T, 32)
        self.assertEqual(seq.label, 2)
        self.assertEqual(seq.video_id, 'v')
        self.assertEqual(seq.frame_shape, (32, 32, 3))

    def test_single_frame(self):
        """Test a one-frame directory gives T=1."""
        write_video(self.root / 'one', 1)
        self.assertEqual(load_frame_sequence(self.root / 'one', 0).T, 1)

    def test_mixed_dimensions_rejected(self):
        """Test mixed frame sizes raise naming the offending file."""
        write_video(self.root / 'mix', 2)
        write_image(self.root / 'mix' / '002.png', np.zeros((64, 64, 3), dtype=np.uint8))
        with self.assertRaises(FrameLoadError) as ctx:
            load_frame_sequence(self.root / 'mix', 0)
        self.assertIn('002.png', str(ctx.exception))

    def test_empty_directory_rejected(self):
        """Test a directory without frames raises."""
        (self.root / 'empty').mkdir()
        with self.assertRaises(FrameLoadError):
            load_frame_sequence(self.root / 'empty', 0)

    def test_unreadable_file_rejected(self):
        """Test a corrupt raster raises with its filename."""
        (self.root / 'bad').mkdir()
        (self.root / 'bad' / '000.png').write_bytes(b'not a png')
        with self.assertRaises(FrameLoadError) as ctx:
            load_frame_sequence(self.root / 'bad', 0)
        self.assertEqual(Path(ctx.exception.filename).name, '000.png')

    def test_manifest_round_trip_and_dataset(self):
        """Test a written manifest loads into a dataset with relative paths resolved."""
        for i in range(3):
            write_video(self.root / 'videos' / f'v{i}', 4, shape=(16, 16), seed=i)
        entries = [ManifestEntry(path=self.root / 'videos' / f'v{i}', label=i % 2, video_id=f'v{i}') for i in range(3)]
        manifest = write_manifest(self.root / 'manifest.csv', entries)
        self.assertTrue(manifest.read_text().startswith('path,label,video_id\n'))
        self.assertEqual([e.video_id for e in read_manifest(manifest)], ['v0', 'v1', 'v2'])

        dataset = load_dataset(manifest)
        self.assertIsInstance(dataset, VideoDataset)
        self.assertEqual(dataset.num_classes, 2)
        image = dataset.aggregate(1, SamplingPlan(y=4), GridLayout(2, 2, 8, 8), draw_id=5)
        self.assertEqual(image.pixels.shape, (16, 16, 3))
        self.assertEqual(image.source_indices, [0, 1, 2, 3])

    def test_missing_manifest(self):
        """Test a missing manifest raises naming the path."""
        with self.assertRaises(FrameLoadError) as ctx:
            load_dataset(self.root / 'nope.csv')
        self.assertIn('nope.csv', str(ctx.exception))

    def test_bad_manifest_rows(self):
        """Test malformed rows raise FrameLoadError naming the line."""
        manifest = self.root / 'manifest.csv'
        for body, line in [
            ('vid,abc,v0\n', 2),
            ('vid,0,v0\nvid2,1\n', 3),
            ('vid,0,v0,extra\n', 2),
            ('vid,-1,v0\n', 2),
        ]:
            manifest.write_text('path,label,video_id\n' + body)
            with self.subTest(body=body):
                with self.assertRaises(FrameLoadError) as ctx:
                    read_manifest(manifest)
                self.assertIn(f'bad manifest row {line}', str(ctx.exception))
                self.assertIn('manifest.csv', str(ctx.exception))

    def test_saved_aggregate_filename(self):
        """Test aggregated images are named by video, draw and indices."""
        image = aggregate_to_grid([np.zeros((4, 4, 3), dtype=np.uint8)] * 2, GridLayout(1, 2, 4, 4),
                                  source_video_id='abc', source_indices=[3, 9])
        path = save_aggregated_image(self.root / 'out', image, draw_id=12)
        self.assertEqual(path.name, 'abc__d12__3-9.png')
        self.assertEqual(aggregated_filename('abc', 12, [3, 9]), path.name)
        self.assertTrue(path.is_file())
