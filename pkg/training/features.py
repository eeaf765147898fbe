"""
Feature matrices stored in the checkpoint tensor format.

A feature file holds two tensors: `features` (n, d) and `labels` (n,), labels
stored as float64 integers.
"""
from dataclasses import dataclass

import numpy as np

from core.exceptions import CheckpointError, ShapeMismatchError
from encoder.checkpoint import load_tensors, save_tensors


@dataclass
class FeatureSet:
    features: np.ndarray
    labels: np.ndarray

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0


def export_features(path, features, labels):
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or labels.shape != (features.shape[0],):
        raise ShapeMismatchError(f"features {features.shape} and labels {labels.shape} do not pair up")
    return save_tensors(path, {'features': features, 'labels': labels.astype(np.float64)})


def import_features(path, expected_dim=None):
    tensors = load_tensors(path)
    if set(tensors) != {'features', 'labels'}:
        raise CheckpointError(f"feature file must hold 'features' and 'labels', found {sorted(tensors)}: {path}")
    features, labels = tensors['features'], tensors['labels']
    if features.ndim != 2 or labels.shape != (features.shape[0],):
        raise ShapeMismatchError(f"features {features.shape} and labels {labels.shape} do not pair up")
    if expected_dim is not None and features.shape[1] != expected_dim:
        raise ShapeMismatchError(f"feature dimension mismatch: expected {expected_dim}, found {features.shape[1]}")
    if np.any(labels < 0) or np.any(labels != np.round(labels)):
        raise CheckpointError(f"labels must be non-negative integers: {path}")
    return FeatureSet(features=features, labels=labels.astype(np.int64))
