"""
Frame directories, dataset manifests and raster I/O.
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from core.exceptions import FrameLoadError, InvalidInputError

from .aggregation import aggregate_to_grid, resize_frame
from .sampling import sample_indices

logger = logging.getLogger(__name__)

LOSSLESS_SUFFIXES = {'.png', '.bmp', '.ppm', '.tif', '.tiff'}
MANIFEST_FIELDS = ['path', 'label', 'video_id']


@dataclass
class FrameSequence:
    frames: list
    label: int
    video_id: str

    @property
    def T(self):
        return len(self.frames)

    @property
    def frame_shape(self):
        return self.frames[0].shape


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    label: int
    video_id: str


def read_image(path):
    """Read a raster file as an HxWx3 uint8 array."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert('RGB'), dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError) as e:
        raise FrameLoadError(f"unreadable frame ({e.__class__.__name__})", path) from e


def write_image(path, pixels):
    """Write an HxWx3 uint8 array losslessly (format from the suffix, PNG by default)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(path)
    return path


def load_frame_sequence(path, label, video_id=None):
    """
    Load a directory of zero-padded numbered rasters as one video.

    Frames are ordered by the integer in their filename; every frame must share
    the first frame's dimensions.
    """
    directory = Path(path)
    if not directory.is_dir():
        raise FrameLoadError("frame directory not found", directory)
    if label < 0:
        raise InvalidInputError(f"label must be non-negative, got {label}")

    files = [p for p in directory.iterdir() if p.suffix.lower() in LOSSLESS_SUFFIXES]
    if not files:
        raise FrameLoadError("no frame files in directory", directory)

    numbered = []
    for p in files:
        if not p.stem.isdigit():
            raise FrameLoadError("frame filename is not a frame index", p)
        numbered.append((int(p.stem), p))
    numbered.sort()

    frames = []
    for _, p in numbered:
        pixels = read_image(p)
        if frames and pixels.shape != frames[0].shape:
            raise FrameLoadError(
                f"frame dimensions {pixels.shape[:2]} differ from {frames[0].shape[:2]}", p
            )
        frames.append(pixels)

    return FrameSequence(frames=frames, label=int(label), video_id=video_id or directory.name)


def read_manifest(manifest_path):
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise FrameLoadError("manifest not found", manifest_path)

    entries = []
    with manifest_path.open(newline='') as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_FIELDS:
            raise FrameLoadError(f"manifest header must be {','.join(MANIFEST_FIELDS)}", manifest_path)
        for row in reader:
            lineno = reader.line_num
            try:
                if None in row or not row['video_id']:
                    raise ValueError('wrong field count')
                video_path = Path(row['path'])
                label = int(row['label'])
            except (TypeError, ValueError) as e:
                raise FrameLoadError(f"bad manifest row {lineno} ({e})", manifest_path) from e
            if label < 0:
                raise FrameLoadError(f"bad manifest row {lineno} (negative label {label})", manifest_path)
            if not video_path.is_absolute():
                video_path = manifest_path.parent / video_path
            entries.append(ManifestEntry(path=video_path, label=label, video_id=row['video_id']))
    return entries


def write_manifest(manifest_path, entries):
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    with manifest_path.open('w', newline='') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(MANIFEST_FIELDS)
        for entry in entries:
            path = Path(entry.path)
            try:
                path = path.relative_to(manifest_path.parent)
            except ValueError:
                pass
            writer.writerow([path.as_posix(), entry.label, entry.video_id])
    return manifest_path


@dataclass
class VideoDataset:
    """Videos loaded from a manifest, with resized frames cached per cell size."""

    sequences: list
    _resized: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.sequences)

    def __getitem__(self, index):
        return self.sequences[index]

    @property
    def labels(self):
        return np.array([s.label for s in self.sequences], dtype=np.int64)

    @property
    def video_ids(self):
        return [s.video_id for s in self.sequences]

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1 if self.sequences else 0

    def resized_frames(self, index, layout):
        key = (index, layout.cell_h, layout.cell_w)
        if key not in self._resized:
            self._resized[key] = [
                resize_frame(f, layout.cell_h, layout.cell_w) for f in self.sequences[index].frames
            ]
        return self._resized[key]

    def aggregate(self, index, plan, layout, draw_id=0):
        """One view of video `index`: sample, resize and tile."""
        seq = self.sequences[index]
        indices = sample_indices(seq.T, plan, draw_id)
        resized = self.resized_frames(index, layout)
        return aggregate_to_grid(
            [resized[i] for i in indices],
            layout,
            source_video_id=seq.video_id,
            source_indices=indices,
            label=seq.label,
        )


def load_dataset(manifest_path):
    entries = read_manifest(manifest_path)
    if not entries:
        raise FrameLoadError("manifest lists no videos", manifest_path)
    sequences = [load_frame_sequence(e.path, e.label, e.video_id) for e in entries]
    logger.info("Loaded %d videos (%d classes) from %s",
                len(sequences), max(s.label for s in sequences) + 1, manifest_path)
    return VideoDataset(sequences=sequences)


def aggregated_filename(video_id, draw_id, indices):
    return f"{video_id}__d{draw_id}__{'-'.join(str(i) for i in indices)}.png"


def save_aggregated_image(output_dir, image, draw_id):
    path = Path(output_dir) / aggregated_filename(image.source_video_id, draw_id, image.source_indices)
    return write_image(path, image.pixels)
