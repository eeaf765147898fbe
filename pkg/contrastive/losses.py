"""
Temperature-scaled similarities and the supervised contrastive frame aggregation loss.

For a batch of 2N embeddings (two temporal views per video)

    L = -(1/2N) * sum_i log( sum_{j in P(i)} exp(S_ij) / sum_{k != i} exp(S_ik) )

with S_ij = z_i . z_j / tau and P(i) every other row sharing the video or the label.
All arithmetic runs in float64.
"""
import logging
import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np

from core.exceptions import InvalidInputError, ShapeMismatchError

logger = logging.getLogger(__name__)

NORM_EPS = 1e-12


class EmptyPositiveSetWarning(RuntimeWarning):
    pass


@dataclass
class EmbeddingBatch:
    Z: np.ndarray
    labels: np.ndarray
    video_ids: list
    view_ids: np.ndarray

    @classmethod
    def from_views(cls, Z1, Z2, labels, video_ids):
        """Interleave two views so rows 2j and 2j+1 are siblings."""
        Z1 = np.asarray(Z1, dtype=np.float64)
        Z2 = np.asarray(Z2, dtype=np.float64)
        if Z1.shape != Z2.shape:
            raise ShapeMismatchError(f"view shapes differ: {Z1.shape} vs {Z2.shape}")
        n = Z1.shape[0]
        Z = np.empty((2 * n, Z1.shape[1]), dtype=np.float64)
        Z[0::2] = Z1
        Z[1::2] = Z2
        labels = np.repeat(np.asarray(labels, dtype=np.int64), 2)
        video_ids = [vid for vid in video_ids for _ in range(2)]
        view_ids = np.tile(np.array([0, 1], dtype=np.int64), n)
        batch = cls(Z=Z, labels=labels, video_ids=video_ids, view_ids=view_ids)
        batch.validate()
        return batch

    def validate(self):
        validate_siblings(self.labels, self.video_ids, self.view_ids)
        if self.Z.shape[0] != len(self.labels):
            raise ShapeMismatchError(f"{self.Z.shape[0]} rows but {len(self.labels)} labels")


def _check_tau(tau):
    if not tau > 0:
        raise InvalidInputError(f"temperature must be positive, got {tau}")


def _check_lengths(*arrays):
    lengths = {len(a) for a in arrays}
    if len(lengths) != 1:
        raise ShapeMismatchError(f"metadata arrays differ in length: {sorted(lengths)}")


def validate_siblings(labels, video_ids, view_ids):
    """
    Every video id appears exactly twice, once per view, under one label.

    Row order is free, so a jointly permuted batch still validates.
    """
    _check_lengths(labels, video_ids, view_ids)
    if len(labels) == 0 or len(labels) % 2:
        raise InvalidInputError(f"batch needs an even, non-zero row count, got {len(labels)}")
    counts = Counter(video_ids)
    unpaired = [vid for vid, c in counts.items() if c != 2]
    if unpaired:
        raise InvalidInputError(f"batch without sibling pairing: videos {unpaired[:5]}")
    seen = {}
    for label, vid, view in zip(labels, video_ids, view_ids):
        if vid in seen:
            other_label, other_view = seen[vid]
            if other_label != label or other_view == view or {view, other_view} != {0, 1}:
                raise InvalidInputError(f"batch without sibling pairing: video {vid}")
        else:
            seen[vid] = (label, view)


def sibling_index(video_ids, view_ids):
    """Row index of each row's sibling view."""
    _check_lengths(video_ids, view_ids)
    first = {}
    siblings = np.full(len(video_ids), -1, dtype=np.int64)
    for i, vid in enumerate(video_ids):
        if vid in first:
            j = first.pop(vid)
            siblings[i], siblings[j] = j, i
        else:
            first[vid] = i
    if (siblings < 0).any():
        raise InvalidInputError("batch without sibling pairing")
    return siblings


def l2_normalize(v, eps=NORM_EPS):
    """v / max(||v||, eps) along the last axis."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(norm, eps)


def similarity_matrix(Z, tau):
    _check_tau(tau)
    Z = np.asarray(Z, dtype=np.float64)
    return (Z @ Z.T) / tau


def positive_mask(labels, video_ids, view_ids, use_labels=True):
    """
    M[i, j] is true iff j != i and row j is a positive for anchor i.

    With use_labels=False only the sibling view counts (self-supervised case).
    """
    _check_lengths(labels, video_ids, view_ids)
    labels = np.asarray(labels)
    _, vids = np.unique(np.asarray(video_ids).astype(str), return_inverse=True)
    same_video = vids[:, None] == vids[None, :]
    mask = same_video | (labels[:, None] == labels[None, :]) if use_labels else same_video
    np.fill_diagonal(mask, False)
    return mask


@dataclass
class LossResult:
    value: float
    grad: np.ndarray | None = None


def _row_terms(S, mask):
    """
    Per-row log-denominator, log-numerator and the two softmax weight matrices.

    Each row is shifted by its off-diagonal maximum before exponentiation.
    """
    n = S.shape[0]
    off_diag = ~np.eye(n, dtype=bool)
    shifted = np.where(off_diag, S, -np.inf)
    row_max = shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted - row_max)

    den = e.sum(axis=1, keepdims=True)
    num_e = np.where(mask, e, 0.0)
    num = num_e.sum(axis=1, keepdims=True)

    has_pos = mask.any(axis=1)
    safe_num = np.where(has_pos[:, None], num, 1.0)
    log_den = row_max[:, 0] + np.log(den[:, 0])
    log_num = row_max[:, 0] + np.log(safe_num[:, 0])
    return log_den, log_num, e / den, num_e / safe_num, has_pos


def _loss_from_terms(log_den, log_num, has_pos):
    if not has_pos.all():
        empty = np.flatnonzero(~has_pos).tolist()
        warnings.warn(
            f"rows {empty[:10]} have no positives and contribute zero loss",
            EmptyPositiveSetWarning,
            stacklevel=3,
        )
    per_row = np.where(has_pos, log_den - log_num, 0.0)
    return float(per_row.sum() / len(per_row))


def _validated_mask(labels, video_ids, view_ids, require_siblings, use_labels):
    if require_siblings:
        validate_siblings(labels, video_ids, view_ids)
    return positive_mask(labels, video_ids, view_ids, use_labels=use_labels)


def scfa_loss(Z, labels, video_ids, view_ids, tau, *, use_labels=True, require_siblings=True):
    """Loss value on rows that are already unit-norm."""
    _check_tau(tau)
    mask = _validated_mask(labels, video_ids, view_ids, require_siblings, use_labels)
    S = similarity_matrix(Z, tau)
    log_den, log_num, _, _, has_pos = _row_terms(S, mask)
    return LossResult(value=_loss_from_terms(log_den, log_num, has_pos))


def scfa_loss_grad(Z, labels, video_ids, view_ids, tau, *, use_labels=True, require_siblings=True):
    """
    Loss value and gradient with respect to the pre-normalization rows.

    Z holds raw projection outputs; rows are L2-normalized here and the
    normalization Jacobian is applied to the gradient.
    """
    _check_tau(tau)
    mask = _validated_mask(labels, video_ids, view_ids, require_siblings, use_labels)
    Z = np.asarray(Z, dtype=np.float64)
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    clamped = np.maximum(norms, NORM_EPS)
    Zn = Z / clamped

    S = (Zn @ Zn.T) / tau
    log_den, log_num, p_den, p_num, has_pos = _row_terms(S, mask)
    value = _loss_from_terms(log_den, log_num, has_pos)

    n = Z.shape[0]
    G = np.where(has_pos[:, None], p_den - p_num, 0.0) / n
    grad_zn = (G + G.T) @ Zn / tau

    # d(z/|z|) = (I - zn zn^T) / |z|; below eps the map is linear in z
    radial = np.sum(Zn * grad_zn, axis=1, keepdims=True)
    live = norms > NORM_EPS
    grad = np.where(live, (grad_zn - Zn * radial) / clamped, grad_zn / NORM_EPS)
    return LossResult(value=value, grad=grad)


def ntxent_loss(Z, siblings, tau):
    """
    Self-supervised contrastive loss with the sibling as the only positive,
    averaged over all 2N anchors. The denominator covers every k != i.
    """
    _check_tau(tau)
    S = similarity_matrix(Z, tau)
    n = S.shape[0]
    siblings = np.asarray(siblings, dtype=np.int64)
    if siblings.shape != (n,):
        raise ShapeMismatchError(f"expected {n} sibling indices, got shape {siblings.shape}")
    shifted = np.where(~np.eye(n, dtype=bool), S, -np.inf)
    row_max = shifted.max(axis=1)
    log_den = row_max + np.log(np.exp(shifted - row_max[:, None]).sum(axis=1))
    positive = S[np.arange(n), siblings]
    return float(np.mean(log_den - positive))


def uniform_similarity_loss(labels, video_ids, use_labels=True):
    """
    Loss when every off-diagonal similarity is equal, the tau -> infinity limit:
    -(1/2N) * sum_i log(|P(i)| / (2N - 1)).
    """
    n = len(labels)
    mask = positive_mask(labels, video_ids, np.zeros(n), use_labels=use_labels)
    counts = mask.sum(axis=1)
    return float(-np.mean(np.log(counts / (n - 1))))
