"""
Tests for the encoder, projection and classifier heads.
Tests cover: Forward passes, Backward pass, Weight sharing, Checkpoint format.
"""
import math
import struct
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import CheckpointError, InvalidInputError, ShapeMismatchError
from encoder.checkpoint import MAGIC, load_checkpoint, load_tensors, save_checkpoint, save_tensors
from encoder.gradcheck import TINY_CONFIG, gradcheck_model, numeric_gradient, relative_error
from encoder.network import (
    LINEAR,
    EncoderConfig,
    ForwardCache,
    ModelParams,
    backward,
    classifier_forward,
    dual_forward,
    encoder_forward,
    global_average_pool,
    infer_encoder_config,
    init_params,
    projection_forward,
    reinit_head,
    softmax_cross_entropy,
    to_network_input,
)

SMALL = EncoderConfig(canvas_h=16, canvas_w=16, conv_channels=(4, 6), projection_hidden=8, projection_dim=5, num_classes=3)


def random_images(seed, batch, config):
    return np.random.default_rng(seed).uniform(size=(batch, config.canvas_h, config.canvas_w, config.in_channels))


# =============================================================================
# UNIT TESTS - Forward
# =============================================================================

class EncoderForwardTests(SimpleTestCase):
    """Test the convolutional encoder."""

    def test_default_architecture(self):
        """Test the default config: three stride-2 stages on a 32x32 canvas."""
        config = EncoderConfig()
        self.assertEqual(config.stage_sizes(), [(16, 16), (8, 8), (4, 4)])
        self.assertEqual(config.feature_dim, 32)
        self.assertEqual(config.projection_dim, 128)

    def test_collapsing_input_rejected(self):
        """Test too many stages for the input size raise."""
        with self.assertRaises(InvalidInputError):
            EncoderConfig(canvas_h=4, canvas_w=4, kernel=5, padding=0)

    def test_zero_image_zero_bias(self):
        """Test an all-zero image with zero biases gives zero features."""
        params = init_params(SMALL, seed=0)
        features = encoder_forward(np.zeros((2, 16, 16, 3)), params, SMALL)
        self.assertFalse(features.any())

    def test_duplicate_images_identical_rows(self):
        """Test identical images in one batch give identical feature rows."""
        x = random_images(1, 1, SMALL)
        features = encoder_forward(np.concatenate([x, x]), init_params(SMALL, 1), SMALL)
        np.testing.assert_array_equal(features[0], features[1])

    def test_deterministic(self):
        """Test same params and input give bit-identical output."""
        x = random_images(2, 3, SMALL)
        a = encoder_forward(x, init_params(SMALL, 5), SMALL)
        b = encoder_forward(x, init_params(SMALL, 5), SMALL)
        np.testing.assert_array_equal(a, b)

    def test_wrong_input_shape(self):
        """Test a mismatched canvas raises."""
        with self.assertRaises(ShapeMismatchError):
            encoder_forward(np.zeros((1, 8, 8, 3)), init_params(SMALL), SMALL)

    def test_pooling_ignores_spatial_order(self):
        """Test shuffling an activation map spatially leaves pooled features unchanged."""
        rng = np.random.default_rng(3)
        activation = rng.normal(size=(2, 4, 4, 6))
        flat = activation.reshape(2, 16, 6)
        shuffled = flat[:, rng.permutation(16)].reshape(2, 4, 4, 6)
        np.testing.assert_allclose(global_average_pool(activation), global_average_pool(shuffled), atol=1e-14)

    def test_pixel_scaling(self):
        """Test uint8 pixels scale to [0, 1] and optional mean/std apply."""
        pixels = np.array([[[[0, 255, 51]]]], dtype=np.uint8)
        np.testing.assert_allclose(to_network_input(pixels, SMALL)[0, 0, 0], [0.0, 1.0, 0.2])
        config = EncoderConfig(canvas_h=16, canvas_w=16, pixel_mean=(0.5, 0.5, 0.5), pixel_std=(0.5, 0.5, 0.5))
        np.testing.assert_allclose(to_network_input(pixels, config)[0, 0, 0], [-1.0, 1.0, -0.6])


class ProjectionAndClassifierTests(SimpleTestCase):
    """Test the projection and classifier heads."""

    def test_unit_norm_rows(self):
        """Test projections have unit norm."""
        params = init_params(SMALL, 2)
        Z = projection_forward(np.random.default_rng(0).normal(size=(7, 6)), params, SMALL)
        np.testing.assert_allclose(np.linalg.norm(Z, axis=1), 1.0, atol=1e-6)

    def test_zero_features_zero_rows(self):
        """Test zero features and zero biases give zero rows."""
        Z = projection_forward(np.zeros((3, 6)), init_params(SMALL, 2), SMALL)
        self.assertFalse(Z.any())

    def test_matches_scalar_reference(self):
        """Test the MLP head against explicit loops."""
        params = init_params(SMALL, 4)
        for name in ('proj.fc1.bias', 'proj.fc2.bias'):
            params[name] = np.random.default_rng(5).normal(size=params[name].shape)
        r = np.random.default_rng(6).normal(size=(3, 6))
        W1, b1, W2, b2 = (params[n] for n in ('proj.fc1.weight', 'proj.fc1.bias', 'proj.fc2.weight', 'proj.fc2.bias'))
        expected = np.zeros((3, 5))
        for i in range(3):
            hidden = [max(0.0, sum(r[i, k] * W1[k, h] for k in range(6)) + b1[h]) for h in range(8)]
            u = [sum(hidden[h] * W2[h, d] for h in range(8)) + b2[d] for d in range(5)]
            norm = math.sqrt(sum(v * v for v in u))
            expected[i] = [v / norm for v in u]
        np.testing.assert_allclose(projection_forward(r, params, SMALL), expected, atol=1e-10)

    def test_linear_projection_variant(self):
        """Test the linear head has a single dense layer."""
        config = EncoderConfig(canvas_h=16, canvas_w=16, conv_channels=(4,), projection=LINEAR, projection_dim=3)
        params = init_params(config, 0)
        self.assertNotIn('proj.fc2.weight', params.names())
        r = np.random.default_rng(1).normal(size=(2, 4))
        expected = r @ params['proj.fc1.weight']
        expected /= np.linalg.norm(expected, axis=1, keepdims=True)
        np.testing.assert_allclose(projection_forward(r, params, config), expected, atol=1e-12)

    def test_uniform_logits_cross_entropy(self):
        """Test zero logits give cross-entropy ln(num_classes)."""
        params = init_params(SMALL, 0).zeros_like()
        logits = classifier_forward(np.zeros((4, 6)), params, SMALL)
        loss, _ = softmax_cross_entropy(logits, [0, 1, 2, 0])
        self.assertAlmostEqual(loss, math.log(3), places=12)

    def test_margin_monotone(self):
        """Test cross-entropy falls as the correct logit's margin grows."""
        losses = [softmax_cross_entropy(np.array([[m, 0.0, 0.0]]), [0])[0] for m in (0.0, 1.0, 2.0, 5.0)]
        self.assertTrue(all(a > b for a, b in zip(losses, losses[1:])))

    def test_cross_entropy_scalar_oracle(self):
        """Test softmax cross-entropy against a scalar computation."""
        logits = np.random.default_rng(7).normal(size=(5, 4)) * 3
        labels = [0, 3, 1, 1, 2]
        expected = np.mean([
            -(row[c] - math.log(sum(math.exp(v) for v in row))) for row, c in zip(logits, labels)
        ])
        self.assertAlmostEqual(softmax_cross_entropy(logits, labels)[0], expected, delta=1e-10)


class DualForwardTests(SimpleTestCase):
    """Test the shared-weight dual pathway."""

    def test_identical_views(self):
        """Test x1 = x2 gives Z1 = Z2 exactly."""
        x = random_images(8, 4, SMALL)
        z1, z2 = dual_forward(x, x.copy(), init_params(SMALL, 3), SMALL)
        np.testing.assert_array_equal(z1, z2)

    def test_swap_views(self):
        """Test swapping inputs swaps outputs."""
        params = init_params(SMALL, 3)
        x1, x2 = random_images(9, 2, SMALL), random_images(10, 2, SMALL)
        a1, a2 = dual_forward(x1, x2, params, SMALL)
        b1, b2 = dual_forward(x2, x1, params, SMALL)
        np.testing.assert_array_equal(a1, b2)
        np.testing.assert_array_equal(a2, b1)

    def test_different_views_differ(self):
        """Test different inputs give different projections."""
        z1, z2 = dual_forward(random_images(11, 2, SMALL), random_images(12, 2, SMALL), init_params(SMALL, 3), SMALL)
        self.assertFalse(np.array_equal(z1, z2))

    def test_weight_sharing(self):
        """Test changing one parameter moves both pathways identically."""
        params = init_params(SMALL, 3)
        x = random_images(13, 2, SMALL)
        before, _ = dual_forward(x, x, params, SMALL)
        params['conv0.weight'] = params['conv0.weight'] * 1.5
        z1, z2 = dual_forward(x, x, params, SMALL)
        np.testing.assert_array_equal(z1, z2)
        self.assertFalse(np.array_equal(before, z1))

    def test_shape_mismatch(self):
        """Test views of different shape raise."""
        with self.assertRaises(ShapeMismatchError):
            dual_forward(random_images(0, 2, SMALL), random_images(0, 3, SMALL), init_params(SMALL), SMALL)


# =============================================================================
# UNIT TESTS - Backward
# =============================================================================

class BackwardTests(SimpleTestCase):
    """Test the reverse pass."""

    def test_zero_upstream_gradient(self):
        """Test zero upstream gradients give zero parameter gradients."""
        params = init_params(SMALL, 0)
        cache = ForwardCache()
        projection_forward(encoder_forward(random_images(0, 3, SMALL), params, SMALL, cache), params, SMALL, cache)
        grads = backward(params, SMALL, cache, grad_projection=np.zeros((3, 5)), grad_logits=np.zeros((3, 3)))
        for name, g in grads.items():
            self.assertFalse(g.any(), msg=name)

    def test_missing_cache(self):
        """Test backward without a forward cache raises."""
        with self.assertRaises(InvalidInputError):
            backward(init_params(SMALL), SMALL, ForwardCache(), grad_logits=np.zeros((1, 3)))

    def test_classifier_bias_finite_difference(self):
        """Test the classifier bias gradient against finite differences."""
        params = init_params(SMALL, 1)
        x = random_images(14, 4, SMALL)
        labels = [0, 2, 1, 2]

        def objective():
            features = encoder_forward(x, params, SMALL)
            return softmax_cross_entropy(classifier_forward(features, params, SMALL), labels)[0]

        cache = ForwardCache()
        features = encoder_forward(x, params, SMALL, cache)
        _, dl = softmax_cross_entropy(classifier_forward(features, params, SMALL), labels)
        analytic = backward(params, SMALL, cache, grad_logits=dl)['head.bias']
        numeric = numeric_gradient(objective, params['head.bias'])
        np.testing.assert_allclose(analytic, numeric, atol=1e-6)

    def test_full_model_gradcheck(self):
        """Test every tensor of the tiny model passes the finite-difference check."""
        report = gradcheck_model(TINY_CONFIG, seed=1)
        self.assertTrue(report.passed, msg=report.per_tensor)
        self.assertLessEqual(report.max_rel_err, 1e-3)
        self.assertEqual(set(report.per_tensor), set(TINY_CONFIG.param_shapes()))

    def test_relative_error(self):
        """Test the relative error of equal arrays is zero."""
        self.assertEqual(relative_error(np.ones(3), np.ones(3)), 0.0)


# =============================================================================
# UNIT TESTS - Parameters and checkpoints
# =============================================================================

class ParamsAndCheckpointTests(SimpleTestCase):
    """Test parameter sets and the checkpoint format."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_init_is_seeded(self):
        """Test the same seed gives the same parameters, another seed does not."""
        a, b, c = init_params(SMALL, 1), init_params(SMALL, 1), init_params(SMALL, 2)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])
        self.assertFalse(np.array_equal(a['conv0.weight'], c['conv0.weight']))

    def test_reinit_head_only_touches_head(self):
        """Test reinit_head replaces only the classifier tensors."""
        params = init_params(SMALL, 1)
        fresh = reinit_head(params, SMALL, seed=9)
        np.testing.assert_array_equal(fresh['conv1.weight'], params['conv1.weight'])
        self.assertFalse(np.array_equal(fresh['head.weight'], params['head.weight']))

    def test_validate_rejects_bad_shape(self):
        """Test validate flags a wrongly shaped tensor."""
        params = init_params(SMALL, 0)
        params['head.bias'] = np.zeros(7)
        with self.assertRaises(ShapeMismatchError):
            params.validate(SMALL)

    def test_round_trip_bit_exact(self):
        """Test save then load reproduces every tensor bit for bit."""
        params = init_params(SMALL, 3)
        path = save_checkpoint(self.root / 'model.ckpt', params)
        loaded = load_checkpoint(path, SMALL)
        self.assertEqual(loaded.names(), params.names())
        for name in params:
            self.assertEqual(loaded[name].tobytes(), params[name].tobytes())

    def test_infer_config_from_checkpoint(self):
        """Test the architecture is recovered from tensor shapes."""
        config = infer_encoder_config(init_params(SMALL, 0), 16, 16)
        self.assertEqual(config.conv_channels, (4, 6))
        self.assertEqual(config.projection_dim, 5)
        self.assertEqual(config.num_classes, 3)

    def test_bad_magic(self):
        """Test a file with the wrong magic raises."""
        path = self.root / 'bad.ckpt'
        path.write_bytes(b'NOTATENS' + struct.pack('<II', 1, 0))
        with self.assertRaises(CheckpointError):
            load_tensors(path)

    def test_truncated_file(self):
        """Test a truncated file raises."""
        path = save_tensors(self.root / 't.ckpt', {'a': np.arange(6.0).reshape(2, 3)})
        path.write_bytes(path.read_bytes()[:-4])
        with self.assertRaises(CheckpointError):
            load_tensors(path)

    def test_layout(self):
        """Test the header layout: magic, version, count."""
        path = save_tensors(self.root / 'h.ckpt', {'w': np.zeros((2,))})
        data = path.read_bytes()
        self.assertEqual(data[:8], MAGIC)
        self.assertEqual(struct.unpack('<II', data[8:16]), (1, 1))

    def test_checkpoint_config_mismatch(self):
        """Test loading against another architecture raises."""
        path = save_checkpoint(self.root / 'm.ckpt', init_params(SMALL, 0))
        with self.assertRaises(ShapeMismatchError):
            load_checkpoint(path, EncoderConfig(canvas_h=16, canvas_w=16))

    def test_params_container(self):
        """Test ModelParams arithmetic helpers."""
        params = ModelParams({'a': np.ones(2), 'b': np.full(3, 2.0)})
        total = params.add(params)
        np.testing.assert_array_equal(total['b'], np.full(3, 4.0))
        self.assertEqual(len(params.zeros_like()), 2)
        self.assertAlmostEqual(params.norms()['b'], math.sqrt(12))
