"""
Procedural moving-shape videos with known labels.

The class fixes the motion pattern only. By default every video draws its shape
from all of SHAPES, so every pair of classes shares its shapes and differs only
in how the shape moves; static appearance carries no class signal and the order
of the sampled frames does. shape_mode='class' restores one shape per class pair
(classes 2j and 2j + 1 draw SHAPES[j]). Each video also gets its own start
offset, speed jitter and pixel noise from a seeded generator.
"""
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from django import forms
from django.conf import settings
from PIL import Image, ImageDraw

from core.exceptions import InvalidInputError
from frames.loading import ManifestEntry, write_image, write_manifest
from training.config import read_config_file, validated_values

logger = logging.getLogger(__name__)

CIRCLE, SQUARE, TRIANGLE, CROSS = 'circle', 'square', 'triangle', 'cross'
SHAPES = (CIRCLE, SQUARE, TRIANGLE, CROSS)
HORIZONTAL, VERTICAL, DIAGONAL, ORBIT = 'horizontal', 'vertical', 'diagonal', 'orbit'
ANTI_DIAGONAL, COUNTER_ORBIT = 'anti_diagonal', 'counter_orbit'
MOTIONS = (HORIZONTAL, VERTICAL, DIAGONAL, ORBIT, ANTI_DIAGONAL, COUNTER_ORBIT)

PER_VIDEO, PER_CLASS = 'video', 'class'
SHAPE_MODES = (PER_VIDEO, PER_CLASS)

MANIFEST_NAME = 'manifest.csv'
VIDEOS_DIR = 'videos'
BACKGROUND_LEVEL = 24
SHAPE_COLOR = (230, 230, 230)


@dataclass(frozen=True)
class SynthConfig:
    output_dir: str = ''
    num_classes: int = 4
    videos_per_class: int = 50
    T: int = 32
    height: int = 32
    width: int = 32
    y: int = 16
    shape_radius: int = 4
    shape_mode: str = PER_VIDEO
    start_jitter: int = 3
    noise: float = 8.0
    speed_jitter: float = 0.25
    seed: int = 0

    def echo_lines(self):
        return [f"{f.name}={getattr(self, f.name)}" for f in fields(self)]

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class VideoDesign:
    """Everything drawn for one video before pixel noise."""
    shape: str
    motion: str
    speed: float
    x0: int
    y0: int
    dx: np.ndarray
    dy: np.ndarray


def max_classes(shape_mode=PER_VIDEO):
    """Number of classes with pairwise distinct designs."""
    if shape_mode == PER_CLASS:
        return 2 * len(SHAPES)
    if shape_mode == PER_VIDEO:
        return len(MOTIONS)
    raise InvalidInputError(f"unknown shape mode '{shape_mode}'")


def class_design(label, shape_mode=PER_VIDEO):
    """(shapes a class draws from, motion it follows)."""
    if not 0 <= label < max_classes(shape_mode):
        raise InvalidInputError(f"class {label} has no distinct design in shape mode '{shape_mode}'")
    motion = MOTIONS[label % len(MOTIONS)]
    if shape_mode == PER_CLASS:
        return (SHAPES[label // 2],), motion
    return SHAPES, motion


def motion_path(motion, T, speed, amplitude):
    """Float (dx, dy) offsets per frame; the same for every video of a class at equal speed."""
    phase = speed * np.arange(T) / T
    tri = 1.0 - np.abs(2.0 * (phase % 1.0) - 1.0)
    zeros = np.zeros(T)
    if motion == HORIZONTAL:
        return amplitude * tri, zeros
    if motion == VERTICAL:
        return zeros, amplitude * tri
    if motion == DIAGONAL:
        return amplitude * tri, amplitude * tri
    if motion == ANTI_DIAGONAL:
        return amplitude * tri, -amplitude * tri
    if motion in (ORBIT, COUNTER_ORBIT):
        radius = amplitude / 2.0
        angle = 2.0 * math.pi * phase
        turn = 1.0 if motion == ORBIT else -1.0
        return radius * np.cos(angle), turn * radius * np.sin(angle)
    raise InvalidInputError(f"unknown motion '{motion}'")


def draw_shape(draw, shape, cx, cy, r):
    if shape == CIRCLE:
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=SHAPE_COLOR)
    elif shape == SQUARE:
        draw.rectangle([cx - r, cy - r, cx + r, cy + r], fill=SHAPE_COLOR)
    elif shape == TRIANGLE:
        draw.polygon([(cx, cy - r), (cx - r, cy + r), (cx + r, cy + r)], fill=SHAPE_COLOR)
    elif shape == CROSS:
        w = max(1, r // 3)
        draw.rectangle([cx - r, cy - w, cx + r, cy + w], fill=SHAPE_COLOR)
        draw.rectangle([cx - w, cy - r, cx + w, cy + r], fill=SHAPE_COLOR)
    else:
        raise InvalidInputError(f"unknown shape '{shape}'")


def _start_range(offsets, r, size, jitter):
    """Start coordinates within `jitter` pixels of the centre of the feasible range."""
    lo = r - int(offsets.min())
    hi = size - 1 - r - int(offsets.max())
    if hi < lo:
        raise InvalidInputError(f"a radius-{r} shape cannot follow its path inside {size} pixels")
    centre = (lo + hi) // 2
    return max(lo, centre - jitter), min(hi, centre + jitter)


def _draw_design(config, label, rng):
    shapes, motion = class_design(label, config.shape_mode)
    shape = shapes[int(rng.integers(len(shapes)))]
    speed = 1.0 + config.speed_jitter * rng.uniform(-1.0, 1.0)
    amplitude = min(config.height, config.width) / 2.0
    dx, dy = motion_path(motion, config.T, speed, amplitude)
    dx = np.floor(dx + 0.5).astype(int)
    dy = np.floor(dy + 0.5).astype(int)
    r = config.shape_radius
    x0 = int(rng.integers(*_start_range(dx, r, config.width, config.start_jitter), endpoint=True))
    y0 = int(rng.integers(*_start_range(dy, r, config.height, config.start_jitter), endpoint=True))
    return VideoDesign(shape=shape, motion=motion, speed=speed, x0=x0, y0=y0, dx=dx, dy=dy)


def _video_rng(config, label, index):
    return np.random.default_rng(np.random.SeedSequence([config.seed & (2**64 - 1), label, index]))


def video_design(config, label, index):
    return _draw_design(config, label, _video_rng(config, label, index))


def render_video(config, label, index):
    """T frames (H x W x 3 uint8) of one video."""
    rng = _video_rng(config, label, index)
    design = _draw_design(config, label, rng)
    frames = []
    for t in range(config.T):
        img = Image.new('RGB', (config.width, config.height), (BACKGROUND_LEVEL,) * 3)
        cx, cy = design.x0 + design.dx[t], design.y0 + design.dy[t]
        draw_shape(ImageDraw.Draw(img), design.shape, int(cx), int(cy), config.shape_radius)
        pixels = np.asarray(img, dtype=np.float64)
        if config.noise > 0:
            pixels = pixels + rng.normal(0.0, config.noise, size=pixels.shape)
        frames.append(np.clip(np.floor(pixels + 0.5), 0, 255).astype(np.uint8))
    return frames


def video_id_for(label, index):
    return f"c{label}_v{index:03d}"


def gen_synthetic_dataset(config, output_dir=None):
    """
    Write frame directories and a manifest; returns the manifest path.

    Layout: <output_dir>/videos/<video_id>/NNN.png and <output_dir>/manifest.csv.
    """
    root = Path(output_dir or config.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    digits = max(3, len(str(config.T - 1)))
    entries = []
    for label in range(config.num_classes):
        for index in range(config.videos_per_class):
            video_id = video_id_for(label, index)
            video_dir = root / VIDEOS_DIR / video_id
            for t, frame in enumerate(render_video(config, label, index)):
                write_image(video_dir / f"{t:0{digits}d}.png", frame)
            entries.append(ManifestEntry(path=video_dir, label=label, video_id=video_id))
        shapes, motion = class_design(label, config.shape_mode)
        logger.debug("class %d (%s, %s) written", label, '/'.join(shapes), motion)
    manifest = write_manifest(root / MANIFEST_NAME, entries)
    logger.info("Generated %d videos of %d frames in %s", len(entries), config.T, root)
    return manifest


class SynthConfigForm(forms.Form):
    output_dir = forms.CharField(required=False)
    num_classes = forms.IntegerField(min_value=2, required=False)
    videos_per_class = forms.IntegerField(min_value=1, required=False)
    T = forms.IntegerField(min_value=1, required=False)
    height = forms.IntegerField(min_value=1, required=False)
    width = forms.IntegerField(min_value=1, required=False)
    y = forms.IntegerField(min_value=1, required=False)
    shape_radius = forms.IntegerField(min_value=1, required=False)
    shape_mode = forms.ChoiceField(choices=[(m, m) for m in SHAPE_MODES], required=False)
    start_jitter = forms.IntegerField(min_value=0, required=False)
    noise = forms.FloatField(min_value=0.0, required=False)
    speed_jitter = forms.FloatField(min_value=0.0, max_value=0.9, required=False)
    seed = forms.IntegerField(min_value=0, required=False)

    def clean_num_classes(self):
        value = self.cleaned_data.get('num_classes')
        mode = self.data.get('shape_mode') or SynthConfig.shape_mode
        if value is not None and mode in SHAPE_MODES and value > max_classes(mode):
            raise forms.ValidationError(
                f"At most {max_classes(mode)} classes have distinct designs in shape mode '{mode}'."
            )
        return value

    def clean(self):
        cleaned = super().clean()
        if self.errors:
            return cleaned
        defaults = SynthConfig()
        T = cleaned.get('T') or defaults.T
        y = cleaned.get('y') or defaults.y
        if T < y:
            raise forms.ValidationError(f"T={T} frames cannot supply y={y} distinct frames per view.")
        return cleaned


def load_synth_config(path=None, overrides=None):
    values = read_config_file(path) if path else {}
    # config files lower-case their keys
    if 't' in values:
        values['T'] = values.pop('t')
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cleaned = validated_values(SynthConfigForm, values, SynthConfigForm.base_fields)
    resolved = {k: cleaned[k] for k in values if cleaned.get(k) not in (None, '')}
    resolved.setdefault('seed', settings.SCFA_SEED)
    resolved.setdefault('output_dir', str(settings.SCFA_DATA_DIR / 'synthetic'))
    return SynthConfig(**resolved)
