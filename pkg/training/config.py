"""
TrainConfig and its key=value file / flag loading.

Files are parsed with python-dotenv; validation runs through a Django form the
same way request payloads are validated by serializers.
"""
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from django import forms
from django.conf import settings
from dotenv import dotenv_values

from core.exceptions import ConfigError
from encoder.network import LINEAR, MLP, EncoderConfig
from frames.aggregation import GridLayout
from frames.sampling import SAMPLING_MODES, UNIFORM, WITHOUT_REPLACEMENT, SamplingPlan


@dataclass(frozen=True)
class TrainConfig:
    manifest: str = ''
    output_dir: str = ''
    y: int = 16
    sampling_mode: str = WITHOUT_REPLACEMENT
    eval_sampling_mode: str = UNIFORM
    grid_rows: int = 4
    grid_cols: int = 4
    cell_h: int = 8
    cell_w: int = 8
    conv_channels: tuple = (8, 16, 32)
    projection: str = MLP
    projection_hidden: int = 64
    projection_dim: int = 128
    supervised: bool = True
    batch_size: int = 64
    epochs: int = 100
    lr: float = 1e-3
    lr_min: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    tau: float = 0.07
    seed: int = 0
    eval_seeds: int = 5
    test_fraction: float = 0.2
    probe_epochs: int = 300
    probe_lr: float = 1e-2
    finetune_epochs: int = 20
    finetune_lr: float = 1e-3
    finetune_batch_size: int = 32
    pixel_mean: tuple | None = None
    pixel_std: tuple | None = None
    record_wall_time: bool = False

    @property
    def layout(self):
        return GridLayout(n=self.grid_rows, m=self.grid_cols, cell_h=self.cell_h, cell_w=self.cell_w)

    @property
    def train_plan(self):
        return SamplingPlan(y=self.y, mode=self.sampling_mode, seed=self.seed)

    def eval_plan(self, seed=None):
        return SamplingPlan(y=self.y, mode=self.eval_sampling_mode, seed=self.seed if seed is None else seed)

    def encoder_config(self, num_classes):
        layout = self.layout
        return EncoderConfig(
            canvas_h=layout.canvas_h,
            canvas_w=layout.canvas_w,
            conv_channels=tuple(self.conv_channels),
            projection=self.projection,
            projection_hidden=self.projection_hidden,
            projection_dim=self.projection_dim,
            num_classes=max(num_classes, 2),
            pixel_mean=self.pixel_mean,
            pixel_std=self.pixel_std,
        )

    def as_dict(self):
        return asdict(self)

    def echo_lines(self):
        """Every resolved value as key=value, in field order."""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ','.join(str(v) for v in value)
            elif value is None:
                value = ''
            lines.append(f"{f.name}={value}")
        return lines


class FloatTupleField(forms.CharField):
    """Comma-separated floats; empty means unset."""

    def __init__(self, length=None, **kwargs):
        self.length = length
        kwargs.setdefault('required', False)
        super().__init__(**kwargs)

    def to_python(self, value):
        value = super().to_python(value)
        if not value:
            return None
        try:
            parsed = tuple(float(v) for v in value.split(','))
        except ValueError:
            raise forms.ValidationError("Enter comma-separated numbers.")
        if self.length is not None and len(parsed) != self.length:
            raise forms.ValidationError(f"Expected {self.length} values.")
        return parsed


class IntTupleField(forms.CharField):
    def to_python(self, value):
        value = super().to_python(value)
        if not value:
            return None
        try:
            parsed = tuple(int(v) for v in value.split(','))
        except ValueError:
            raise forms.ValidationError("Enter comma-separated integers.")
        if any(v < 1 for v in parsed):
            raise forms.ValidationError("Channel counts must be positive.")
        return parsed


def _bool_field():
    return forms.TypedChoiceField(
        choices=[(v, v) for v in ('true', 'false', '1', '0', 'yes', 'no')],
        coerce=lambda v: v in ('true', '1', 'yes'),
        required=False,
    )


class TrainConfigForm(forms.Form):
    manifest = forms.CharField(required=False)
    output_dir = forms.CharField(required=False)
    y = forms.IntegerField(min_value=1, required=False)
    sampling_mode = forms.ChoiceField(choices=[(m, m) for m in SAMPLING_MODES], required=False)
    eval_sampling_mode = forms.ChoiceField(choices=[(m, m) for m in SAMPLING_MODES], required=False)
    grid_rows = forms.IntegerField(min_value=1, required=False)
    grid_cols = forms.IntegerField(min_value=1, required=False)
    cell_h = forms.IntegerField(min_value=1, required=False)
    cell_w = forms.IntegerField(min_value=1, required=False)
    conv_channels = IntTupleField(required=False)
    projection = forms.ChoiceField(choices=[(MLP, MLP), (LINEAR, LINEAR)], required=False)
    projection_hidden = forms.IntegerField(min_value=1, required=False)
    projection_dim = forms.IntegerField(min_value=1, required=False)
    supervised = _bool_field()
    batch_size = forms.IntegerField(required=False)
    epochs = forms.IntegerField(required=False)
    lr = forms.FloatField(min_value=0.0, required=False)
    lr_min = forms.FloatField(min_value=0.0, required=False)
    beta1 = forms.FloatField(min_value=0.0, max_value=0.999999, required=False)
    beta2 = forms.FloatField(min_value=0.0, max_value=0.999999999, required=False)
    adam_eps = forms.FloatField(min_value=0.0, required=False)
    tau = forms.FloatField(required=False)
    seed = forms.IntegerField(min_value=0, required=False)
    eval_seeds = forms.IntegerField(min_value=1, required=False)
    test_fraction = forms.FloatField(required=False)
    probe_epochs = forms.IntegerField(min_value=0, required=False)
    probe_lr = forms.FloatField(min_value=0.0, required=False)
    finetune_epochs = forms.IntegerField(min_value=0, required=False)
    finetune_lr = forms.FloatField(min_value=0.0, required=False)
    finetune_batch_size = forms.IntegerField(min_value=1, required=False)
    pixel_mean = FloatTupleField(length=3)
    pixel_std = FloatTupleField(length=3)
    record_wall_time = _bool_field()

    def clean_batch_size(self):
        value = self.cleaned_data['batch_size']
        if value is not None and value < 2:
            raise forms.ValidationError("A batch needs at least 2 videos (one negative per anchor).")
        return value

    def clean_epochs(self):
        value = self.cleaned_data['epochs']
        if value is not None and value < 1:
            raise forms.ValidationError("Train for at least one epoch.")
        return value

    def clean_tau(self):
        value = self.cleaned_data['tau']
        if value is not None and not value > 0:
            raise forms.ValidationError("Temperature must be positive.")
        return value

    def clean_test_fraction(self):
        value = self.cleaned_data['test_fraction']
        if value is not None and not 0 < value < 1:
            raise forms.ValidationError("Test fraction must lie strictly between 0 and 1.")
        return value

    def clean_pixel_std(self):
        value = self.cleaned_data['pixel_std']
        if value is not None and any(v <= 0 for v in value):
            raise forms.ValidationError("Standard deviations must be positive.")
        return value

    def clean(self):
        cleaned = super().clean()
        if self.errors:
            return cleaned
        defaults = TrainConfig()
        resolved = {k: (v if v not in (None, '') else getattr(defaults, k)) for k, v in cleaned.items()}
        if resolved['grid_rows'] * resolved['grid_cols'] < resolved['y']:
            raise forms.ValidationError(
                f"A {resolved['grid_rows']}x{resolved['grid_cols']} grid cannot hold y={resolved['y']} frames."
            )
        if resolved['lr_min'] > resolved['lr']:
            raise forms.ValidationError("lr_min must not exceed lr.")
        return cleaned


def _as_text(value):
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (tuple, list)):
        return ','.join(str(v) for v in value)
    return str(value)


def validated_values(form_class, values, known):
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError({'__all__': [f"unknown keys: {', '.join(unknown)}"]})
    form = form_class(data={k: _as_text(v) for k, v in values.items()})
    if not form.is_valid():
        raise ConfigError({field: list(errors) for field, errors in form.errors.items()})
    return form.cleaned_data


def read_config_file(path):
    """key=value pairs from a flat config file; keys are case-insensitive."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError({'config': [f"config file not found: {path}"]})
    return {k.lower(): v for k, v in dotenv_values(path).items()}


def merge_values(path=None, overrides=None):
    values = read_config_file(path) if path else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return values


def load_train_config(path=None, overrides=None):
    """
    Resolve a TrainConfig: defaults, then the config file, then flag overrides.

    Flag values of None mean "not given on the command line".
    """
    values = merge_values(path, overrides)
    cleaned = validated_values(TrainConfigForm, values, TrainConfigForm.base_fields)
    resolved = {}
    for f in fields(TrainConfig):
        value = cleaned.get(f.name)
        if f.name in values and value not in (None, ''):
            resolved[f.name] = value
    if 'seed' not in resolved:
        resolved['seed'] = settings.SCFA_SEED
    if 'output_dir' not in resolved:
        resolved['output_dir'] = str(settings.SCFA_OUTPUT_DIR)
    return TrainConfig(**resolved)
