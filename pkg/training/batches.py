"""
Dual-view batches: two temporal samplings of every video, aggregated into images.
"""
from dataclasses import dataclass

import numpy as np

from core.exceptions import InvalidInputError
from frames.sampling import derive_draw_id


@dataclass
class DualBatch:
    x1: np.ndarray
    x2: np.ndarray
    labels: np.ndarray
    video_ids: list
    indices1: list
    indices2: list


def epoch_order(num_videos, batch_size, seed, epoch):
    """
    Split a seeded permutation of the videos into batches.

    Every video appears exactly once per epoch; leftover videos join the last batch.
    """
    if batch_size < 2:
        raise InvalidInputError(f"batch size must be at least 2, got {batch_size}")
    if batch_size > num_videos:
        raise InvalidInputError(f"batch size {batch_size} exceeds the {num_videos} videos in the dataset")
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), epoch, 0xBA7C]))
    order = rng.permutation(num_videos)
    steps = num_videos // batch_size
    batches = [order[s * batch_size:(s + 1) * batch_size] for s in range(steps)]
    leftover = order[steps * batch_size:]
    if len(leftover):
        batches[-1] = np.concatenate([batches[-1], leftover])
    return batches


def steps_per_epoch(num_videos, batch_size):
    return num_videos // batch_size


def build_dual_batch(dataset, N, plan, epoch, step, layout):
    """
    Batch `step` of `epoch`: two independently sampled views per video.

    Sampling draws are keyed by (epoch, step, video_id, view) under plan.seed.
    Images are returned as uint8 NHWC arrays.
    """
    order = epoch_order(len(dataset), N, plan.seed, epoch)
    if not 0 <= step < len(order):
        raise InvalidInputError(f"epoch has {len(order)} steps, got step {step}")
    views = ([], [])
    indices = ([], [])
    for index in order[step]:
        video_id = dataset[index].video_id
        for view in (0, 1):
            image = dataset.aggregate(index, plan, layout, derive_draw_id(epoch, step, video_id, view))
            views[view].append(image.pixels)
            indices[view].append(image.source_indices)
    return DualBatch(
        x1=np.stack(views[0]),
        x2=np.stack(views[1]),
        labels=dataset.labels[order[step]],
        video_ids=[dataset[i].video_id for i in order[step]],
        indices1=indices[0],
        indices2=indices[1],
    )
