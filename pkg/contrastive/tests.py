"""
Tests for the contrastive loss.
Tests cover: Similarities, Positive masks, Loss values, Analytic gradients, Invariances.
"""
import math
import warnings

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from contrastive.losses import (
    EmbeddingBatch,
    EmptyPositiveSetWarning,
    l2_normalize,
    ntxent_loss,
    positive_mask,
    scfa_loss,
    scfa_loss_grad,
    sibling_index,
    similarity_matrix,
    uniform_similarity_loss,
)
from core.exceptions import InvalidInputError


def random_batch(rng, N, D, num_labels=None, normalize=True):
    """Interleaved two-view batch of N videos with random labels."""
    labels = rng.integers(0, num_labels or N, size=N)
    Z = rng.normal(size=(2 * N, D))
    if normalize:
        Z = l2_normalize(Z)
    return EmbeddingBatch.from_views(Z[:N], Z[N:], labels, [f'v{j}' for j in range(N)])


def naive_loss(Z, labels, video_ids, tau):
    """Triple-loop evaluation of the loss straight from its definition."""
    n = len(labels)
    total = 0.0
    for i in range(n):
        num = 0.0
        den = 0.0
        for k in range(n):
            if k == i:
                continue
            s = math.exp(float(np.dot(Z[i], Z[k])) / tau)
            den += s
            if labels[k] == labels[i] or video_ids[k] == video_ids[i]:
                num += s
        total += -math.log(num / den)
    return total / n


def numeric_grad(batch, tau, step=1e-5, **kwargs):
    Z = batch.Z.copy()
    grad = np.zeros_like(Z)
    for idx in np.ndindex(Z.shape):
        saved = Z[idx]
        Z[idx] = saved + step
        plus = scfa_loss(l2_normalize(Z), batch.labels, batch.video_ids, batch.view_ids, tau, **kwargs).value
        Z[idx] = saved - step
        minus = scfa_loss(l2_normalize(Z), batch.labels, batch.video_ids, batch.view_ids, tau, **kwargs).value
        Z[idx] = saved
        grad[idx] = (plus - minus) / (2 * step)
    return grad


def loss_of(batch, tau, **kwargs):
    return scfa_loss(batch.Z, batch.labels, batch.video_ids, batch.view_ids, tau, **kwargs).value


# =============================================================================
# UNIT TESTS - Building blocks
# =============================================================================

class NormalizeAndSimilarityTests(SimpleTestCase):
    """Test L2 normalization and the similarity matrix."""

    def test_three_four_five(self):
        """Test [3, 4] normalizes to [0.6, 0.8]."""
        np.testing.assert_allclose(l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8])

    def test_unit_vector_idempotent(self):
        """Test a unit vector is unchanged."""
        v = np.array([0.0, 1.0, 0.0])
        np.testing.assert_array_equal(l2_normalize(v), v)

    def test_zero_vector(self):
        """Test the zero vector stays zero."""
        np.testing.assert_array_equal(l2_normalize(np.zeros(4)), np.zeros(4))

    def test_identical_rows(self):
        """Test identical unit rows at tau=0.07 give 1/0.07."""
        Z = np.array([[1.0, 0.0], [1.0, 0.0]])
        self.assertAlmostEqual(similarity_matrix(Z, 0.07)[0, 1], 1 / 0.07, places=12)

    def test_orthogonal_rows(self):
        """Test orthogonal rows give zero off-diagonal similarity."""
        S = similarity_matrix(np.eye(3), 0.3)
        self.assertTrue((S[~np.eye(3, dtype=bool)] == 0).all())

    def test_matches_double_loop(self):
        """Test S = Z Z^T / tau against explicit dot products."""
        Z = l2_normalize(np.random.default_rng(1).normal(size=(6, 5)))
        S = similarity_matrix(Z, 0.5)
        for i in range(6):
            for j in range(6):
                self.assertAlmostEqual(S[i, j], 2.0 * sum(Z[i, d] * Z[j, d] for d in range(5)), places=12)

    def test_temperature_scaling(self):
        """Test S(tau1) = (tau2 / tau1) * S(tau2)."""
        Z = l2_normalize(np.random.default_rng(2).normal(size=(5, 3)))
        np.testing.assert_allclose(similarity_matrix(Z, 0.1), (0.4 / 0.1) * similarity_matrix(Z, 0.4), rtol=1e-12)

    def test_non_positive_tau_rejected(self):
        """Test tau <= 0 raises."""
        with self.assertRaises(InvalidInputError):
            similarity_matrix(np.eye(2), 0.0)


class PositiveMaskTests(SimpleTestCase):
    """Test the positive-set mask."""

    def test_single_video(self):
        """Test one video with two views: each view is the other's only positive."""
        mask = positive_mask([0, 0], ['a', 'a'], [0, 1])
        self.assertEqual(mask.tolist(), [[False, True], [True, False]])

    def test_distinct_labels(self):
        """Test distinct labels leave only the sibling."""
        mask = positive_mask([0, 0, 1, 1], ['a', 'a', 'b', 'b'], [0, 1, 0, 1])
        self.assertEqual(mask.sum(axis=1).tolist(), [1, 1, 1, 1])
        self.assertTrue(mask[0, 1] and mask[2, 3])

    def test_shared_label(self):
        """Test a shared label makes every off-diagonal pair positive."""
        mask = positive_mask([3, 3, 3, 3], ['a', 'a', 'b', 'b'], [0, 1, 0, 1])
        self.assertTrue((mask == ~np.eye(4, dtype=bool)).all())

    def test_symmetric_without_diagonal(self):
        """Test the mask is symmetric with a false diagonal."""
        batch = random_batch(np.random.default_rng(3), 6, 4, num_labels=3)
        mask = positive_mask(batch.labels, batch.video_ids, batch.view_ids)
        self.assertTrue((mask == mask.T).all())
        self.assertFalse(mask.diagonal().any())
        siblings = sibling_index(batch.video_ids, batch.view_ids)
        self.assertTrue(mask[np.arange(12), siblings].all())

    def test_self_supervised_mask(self):
        """Test use_labels=False keeps only the sibling even for shared labels."""
        mask = positive_mask([1, 1, 1, 1], ['a', 'a', 'b', 'b'], [0, 1, 0, 1], use_labels=False)
        self.assertEqual(mask.sum(), 4)

    def test_length_mismatch(self):
        """Test mismatched metadata lengths raise."""
        with self.assertRaises(ValueError):
            positive_mask([0, 0], ['a', 'a', 'b'], [0, 1])


# =============================================================================
# UNIT TESTS - Loss values
# =============================================================================

class LossValueTests(SimpleTestCase):
    """Test loss values on hand-built batches."""

    def test_identical_sibling_pair(self):
        """Test one video with identical views has zero loss."""
        Z = np.array([[0.6, 0.8], [0.6, 0.8]])
        self.assertAlmostEqual(scfa_loss(Z, [0, 0], ['a', 'a'], [0, 1], 0.07).value, 0.0, places=12)
        self.assertAlmostEqual(ntxent_loss(Z, [1, 0], 0.07), 0.0, places=12)

    def test_two_class_closed_form(self):
        """Test the orthogonal two-class batch at tau=1 gives log(1 + 2/e)."""
        Z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        labels, vids, views = [0, 0, 1, 1], ['a', 'a', 'b', 'b'], [0, 1, 0, 1]
        expected = math.log(1 + 2 / math.e)
        self.assertAlmostEqual(scfa_loss(Z, labels, vids, views, 1.0).value, expected, delta=1e-9)
        self.assertAlmostEqual(naive_loss(Z, labels, vids, 1.0), expected, delta=1e-9)
        self.assertAlmostEqual(expected, 0.5514, places=4)

    def test_orthogonal_ntxent(self):
        """Test four mutually orthogonal rows at tau=1 give log 3 per anchor."""
        self.assertAlmostEqual(ntxent_loss(np.eye(4), [1, 0, 3, 2], 1.0), math.log(3), places=12)

    def test_matches_naive_oracle(self):
        """Test the vectorized loss against the triple loop on random batches."""
        rng = np.random.default_rng(5)
        for _ in range(1000):
            N = int(rng.integers(1, 6))
            batch = random_batch(rng, N, int(rng.integers(2, 8)), num_labels=int(rng.integers(1, N + 1)))
            tau = float(rng.choice([0.07, 0.5, 1.0]))
            self.assertAlmostEqual(
                loss_of(batch, tau), naive_loss(batch.Z, batch.labels, batch.video_ids, tau), delta=1e-10
            )

    def test_distinct_labels_equal_ntxent(self):
        """Test the loss reduces to NT-Xent when no two videos share a label."""
        rng = np.random.default_rng(6)
        for _ in range(50):
            batch = random_batch(rng, 5, 8)
            batch.labels = np.repeat(np.arange(5), 2)
            siblings = sibling_index(batch.video_ids, batch.view_ids)
            self.assertAlmostEqual(loss_of(batch, 0.2), ntxent_loss(batch.Z, siblings, 0.2), delta=1e-12)

    def test_self_supervised_equals_ntxent(self):
        """Test use_labels=False matches NT-Xent even with shared labels."""
        batch = random_batch(np.random.default_rng(7), 6, 8, num_labels=2)
        siblings = sibling_index(batch.video_ids, batch.view_ids)
        self.assertAlmostEqual(loss_of(batch, 0.5, use_labels=False), ntxent_loss(batch.Z, siblings, 0.5), delta=1e-12)

    def test_large_tau_approaches_uniform_value(self):
        """Test the loss tends to the equal-similarity closed form as tau grows."""
        batch = random_batch(np.random.default_rng(8), 8, 16, num_labels=3)
        uniform = uniform_similarity_loss(batch.labels, batch.video_ids)
        self.assertAlmostEqual(loss_of(batch, 1e6), uniform, delta=1e-5)
        self.assertLess(abs(loss_of(batch, 100.0) - uniform), abs(loss_of(batch, 1.0) - uniform))

    def test_small_tau_stays_finite(self):
        """Test tau=1e-3 gives a finite loss and gradient."""
        batch = random_batch(np.random.default_rng(9), 8, 4, num_labels=2)
        result = scfa_loss_grad(batch.Z, batch.labels, batch.video_ids, batch.view_ids, 1e-3)
        self.assertTrue(np.isfinite(result.value))
        self.assertTrue(np.isfinite(result.grad).all())

    def test_unpaired_batch_rejected(self):
        """Test a batch without sibling pairing raises."""
        with self.assertRaises(InvalidInputError):
            scfa_loss(np.eye(3), [0, 1, 2], ['a', 'b', 'c'], [0, 0, 0], 1.0)

    def test_empty_positive_rows_warn(self):
        """Test rows with no positives contribute zero and warn."""
        Z = l2_normalize(np.random.default_rng(10).normal(size=(3, 4)))
        with self.assertWarns(EmptyPositiveSetWarning):
            value = scfa_loss(Z, [0, 1, 2], ['a', 'b', 'c'], [0, 0, 0], 1.0, require_siblings=False).value
        self.assertEqual(value, 0.0)

    def test_tau_rejected(self):
        """Test a non-positive temperature raises."""
        with self.assertRaises(InvalidInputError):
            scfa_loss(np.eye(2), [0, 0], ['a', 'a'], [0, 1], -1.0)


# =============================================================================
# UNIT TESTS - Gradients
# =============================================================================

class LossGradientTests(SimpleTestCase):
    """Test the analytic gradient against finite differences."""

    def test_gradient_grid(self):
        """Test 100 random batches over N, D and tau agree to 1e-4."""
        rng = np.random.default_rng(11)
        for trial in range(100):
            N = int(rng.choice([2, 4, 8]))
            D = int(rng.choice([4, 16]))
            tau = float(rng.choice([0.07, 0.5, 1.0]))
            batch = random_batch(rng, N, D, num_labels=max(1, N // 2), normalize=False)
            analytic = scfa_loss_grad(batch.Z, batch.labels, batch.video_ids, batch.view_ids, tau).grad
            numeric = numeric_grad(batch, tau)
            err = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
            self.assertLessEqual(err, 1e-4, msg=f"trial {trial}: N={N} D={D} tau={tau}")

    def test_identical_pair_gradient(self):
        """Test identical views: zero loss and a gradient matching finite differences."""
        batch = EmbeddingBatch.from_views(np.array([[1.0, 2.0]]), np.array([[1.0, 2.0]]), [0], ['a'])
        result = scfa_loss_grad(batch.Z, batch.labels, batch.video_ids, batch.view_ids, 0.5)
        self.assertAlmostEqual(result.value, 0.0, places=12)
        np.testing.assert_allclose(result.grad, numeric_grad(batch, 0.5), atol=1e-8)

    def test_self_supervised_gradient(self):
        """Test the sibling-only gradient agrees with finite differences."""
        batch = random_batch(np.random.default_rng(12), 4, 4, num_labels=2, normalize=False)
        analytic = scfa_loss_grad(batch.Z, batch.labels, batch.video_ids, batch.view_ids, 0.5, use_labels=False).grad
        np.testing.assert_allclose(analytic, numeric_grad(batch, 0.5, use_labels=False), atol=1e-7)


# =============================================================================
# PROPERTY TESTS
# =============================================================================

class LossInvarianceProperties(SimpleTestCase):
    """Test invariances of the loss."""

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), N=st.integers(1, 8), D=st.integers(2, 16))
    def test_non_negative(self, seed, N, D):
        """Test the loss is never negative."""
        rng = np.random.default_rng(seed)
        batch = random_batch(rng, N, D, num_labels=int(rng.integers(1, N + 1)))
        self.assertGreaterEqual(loss_of(batch, float(rng.choice([0.07, 0.5, 1.0]))), -1e-15)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), N=st.integers(2, 8))
    def test_permutation_invariance(self, seed, N):
        """Test jointly permuting rows leaves the value and permutes the gradient."""
        rng = np.random.default_rng(seed)
        batch = random_batch(rng, N, 6, num_labels=3, normalize=False)
        perm = rng.permutation(2 * N)
        base = scfa_loss_grad(batch.Z, batch.labels, batch.video_ids, batch.view_ids, 0.3)
        moved = scfa_loss_grad(
            batch.Z[perm], batch.labels[perm], [batch.video_ids[i] for i in perm], batch.view_ids[perm], 0.3
        )
        self.assertAlmostEqual(base.value, moved.value, delta=1e-12)
        np.testing.assert_allclose(moved.grad, base.grad[perm], atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), N=st.integers(1, 6), D=st.integers(2, 10))
    def test_rotation_invariance(self, seed, N, D):
        """Test a joint orthogonal rotation keeps the value and rotates the gradient."""
        rng = np.random.default_rng(seed)
        batch = random_batch(rng, N, D, num_labels=2, normalize=False)
        Q, _ = np.linalg.qr(rng.normal(size=(D, D)))
        base = scfa_loss_grad(batch.Z, batch.labels, batch.video_ids, batch.view_ids, 0.5)
        rotated = scfa_loss_grad(batch.Z @ Q, batch.labels, batch.video_ids, batch.view_ids, 0.5)
        self.assertAlmostEqual(base.value, rotated.value, delta=1e-10)
        np.testing.assert_allclose(rotated.grad, base.grad @ Q, atol=1e-10)

    def test_view_swap_symmetry(self):
        """Test swapping the two views leaves the loss unchanged."""
        rng = np.random.default_rng(13)
        Z1, Z2 = rng.normal(size=(2, 4, 8))
        labels, vids = [0, 1, 0, 2], ['a', 'b', 'c', 'd']
        a = EmbeddingBatch.from_views(Z1, Z2, labels, vids)
        b = EmbeddingBatch.from_views(Z2, Z1, labels, vids)
        with warnings.catch_warnings():
            warnings.simplefilter('error')
            self.assertAlmostEqual(
                scfa_loss_grad(a.Z, a.labels, a.video_ids, a.view_ids, 0.1).value,
                scfa_loss_grad(b.Z, b.labels, b.video_ids, b.view_ids, 0.1).value,
                delta=1e-12,
            )
