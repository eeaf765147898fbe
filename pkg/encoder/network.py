"""
Strided convolutional encoder, projection head and classifier head in NumPy.

Images are NHWC float64 in [0, 1]. Each conv stage is a 3x3 stride-2 convolution
followed by ReLU; features are the global average of the last stage. Dense
weights are stored (in, out) and applied as x @ W + b.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from contrastive.losses import l2_normalize
from core.exceptions import InvalidInputError, ShapeMismatchError

logger = logging.getLogger(__name__)

MLP = 'mlp'
LINEAR = 'linear'


@dataclass(frozen=True)
class EncoderConfig:
    canvas_h: int = 32
    canvas_w: int = 32
    in_channels: int = 3
    conv_channels: tuple = (8, 16, 32)
    kernel: int = 3
    stride: int = 2
    padding: int = 1
    projection: str = MLP
    projection_hidden: int = 64
    projection_dim: int = 128
    num_classes: int = 4
    pixel_mean: tuple | None = None
    pixel_std: tuple | None = None

    def __post_init__(self):
        if self.projection not in (MLP, LINEAR):
            raise InvalidInputError(f"unknown projection head '{self.projection}'")
        if not self.conv_channels:
            raise InvalidInputError("at least one conv stage is required")
        if self.num_classes < 2:
            raise InvalidInputError(f"num_classes must be at least 2, got {self.num_classes}")
        self.stage_sizes()

    @property
    def feature_dim(self):
        return self.conv_channels[-1]

    def stage_sizes(self):
        """Spatial (h, w) after each conv stage."""
        sizes = []
        h, w = self.canvas_h, self.canvas_w
        for _ in self.conv_channels:
            h = (h + 2 * self.padding - self.kernel) // self.stride + 1
            w = (w + 2 * self.padding - self.kernel) // self.stride + 1
            if h < 1 or w < 1:
                raise InvalidInputError(
                    f"{self.canvas_h}x{self.canvas_w} input collapses below 1 pixel "
                    f"after {len(sizes) + 1} stages"
                )
            sizes.append((h, w))
        return sizes

    def param_shapes(self):
        shapes = {}
        cin = self.in_channels
        for i, cout in enumerate(self.conv_channels):
            shapes[f'conv{i}.weight'] = (self.kernel, self.kernel, cin, cout)
            shapes[f'conv{i}.bias'] = (cout,)
            cin = cout
        if self.projection == MLP:
            shapes['proj.fc1.weight'] = (self.feature_dim, self.projection_hidden)
            shapes['proj.fc1.bias'] = (self.projection_hidden,)
            shapes['proj.fc2.weight'] = (self.projection_hidden, self.projection_dim)
            shapes['proj.fc2.bias'] = (self.projection_dim,)
        else:
            shapes['proj.fc1.weight'] = (self.feature_dim, self.projection_dim)
            shapes['proj.fc1.bias'] = (self.projection_dim,)
        shapes['head.weight'] = (self.feature_dim, self.num_classes)
        shapes['head.bias'] = (self.num_classes,)
        return shapes


@dataclass
class ModelParams:
    """Named float64 tensors of the whole model, in a fixed order."""

    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name] = value

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self):
        return list(self.tensors)

    def copy(self):
        return ModelParams({k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self):
        return ModelParams({k: np.zeros_like(v) for k, v in self.tensors.items()})

    def add(self, other):
        return ModelParams({k: v + other[k] for k, v in self.tensors.items()})

    def norms(self):
        return {k: float(np.linalg.norm(v)) for k, v in self.tensors.items()}

    def validate(self, config):
        expected = config.param_shapes()
        if list(expected) != list(self.tensors):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ShapeMismatchError(f"parameter names differ (missing {missing}, unexpected {extra})")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeMismatchError(
                    f"{name} has shape {self.tensors[name].shape}, expected {shape}"
                )
            if not np.isfinite(self.tensors[name]).all():
                raise InvalidInputError(f"{name} contains non-finite values")


def init_params(config, seed=0):
    """Uniform He fan-in initialization for weights, zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 0x5CFA]))
    tensors = {}
    for name, shape in config.param_shapes().items():
        if name.endswith('.bias'):
            tensors[name] = np.zeros(shape, dtype=np.float64)
        else:
            fan_in = int(np.prod(shape[:-1]))
            bound = np.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(tensors)


def init_head(feature_dim, num_classes, seed):
    """Classifier (weight, bias), identical for a given seed regardless of the encoder."""
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 0x4EAD]))
    bound = np.sqrt(6.0 / feature_dim)
    weight = rng.uniform(-bound, bound, size=(feature_dim, num_classes))
    return weight, np.zeros(num_classes, dtype=np.float64)


def reinit_head(params, config, seed):
    params = params.copy()
    params['head.weight'], params['head.bias'] = init_head(config.feature_dim, config.num_classes, seed)
    return params


def to_network_input(pixels, config):
    """Scale uint8 rasters to [0, 1], then apply the optional mean/std."""
    x = np.asarray(pixels, dtype=np.float64) / 255.0
    if config.pixel_mean is not None:
        x = x - np.asarray(config.pixel_mean, dtype=np.float64)
    if config.pixel_std is not None:
        x = x / np.asarray(config.pixel_std, dtype=np.float64)
    return x


@dataclass
class StageCache:
    cols: np.ndarray
    active: np.ndarray
    input_shape: tuple
    out_hw: tuple


@dataclass
class ForwardCache:
    stages: list = field(default_factory=list)
    pooled_shape: tuple | None = None
    features: np.ndarray | None = None
    hidden_pre: np.ndarray | None = None
    hidden: np.ndarray | None = None
    projection: np.ndarray | None = None


def _im2col(x, kernel, stride, padding):
    batch = x.shape[0]
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    windows = sliding_window_view(xp, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]
    out_h, out_w = windows.shape[1:3]
    # (B, Ho, Wo, C, kh, kw) -> rows ordered (kh, kw, C) to match the weight layout
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(batch * out_h * out_w, -1)
    return cols, (out_h, out_w)


def _col2im(dcols, input_shape, out_hw, kernel, stride, padding):
    batch, h, w, c = input_shape
    out_h, out_w = out_hw
    d = dcols.reshape(batch, out_h, out_w, kernel, kernel, c)
    dxp = np.zeros((batch, h + 2 * padding, w + 2 * padding, c), dtype=np.float64)
    for i in range(kernel):
        for j in range(kernel):
            dxp[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride, :] += d[:, :, :, i, j, :]
    return dxp[:, padding:padding + h, padding:padding + w, :]


def global_average_pool(activation):
    return activation.mean(axis=(1, 2))


def encoder_forward(images, params, config, cache=None):
    """Features r = GAP(ReLU(conv(...))) for a batch of NHWC images in [0, 1]."""
    x = np.asarray(images, dtype=np.float64)
    expected = (config.canvas_h, config.canvas_w, config.in_channels)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ShapeMismatchError(f"encoder expects (batch, {expected}), got {x.shape}")

    batch = x.shape[0]
    for i, cout in enumerate(config.conv_channels):
        weight = params[f'conv{i}.weight']
        cols, out_hw = _im2col(x, config.kernel, config.stride, config.padding)
        pre = cols @ weight.reshape(-1, cout) + params[f'conv{i}.bias']
        if cache is not None:
            cache.stages.append(StageCache(cols=cols, active=pre > 0, input_shape=x.shape, out_hw=out_hw))
        x = np.maximum(pre, 0.0).reshape(batch, out_hw[0], out_hw[1], cout)

    features = global_average_pool(x)
    if cache is not None:
        cache.pooled_shape = x.shape
        cache.features = features
    return features


def projection_forward(features, params, config, cache=None):
    """Normalized projections; cache.projection keeps the pre-normalization rows."""
    r = np.asarray(features, dtype=np.float64)
    if r.ndim != 2 or r.shape[1] != config.feature_dim:
        raise ShapeMismatchError(f"projection expects (batch, {config.feature_dim}), got {r.shape}")
    if config.projection == MLP:
        hidden_pre = r @ params['proj.fc1.weight'] + params['proj.fc1.bias']
        hidden = np.maximum(hidden_pre, 0.0)
        u = hidden @ params['proj.fc2.weight'] + params['proj.fc2.bias']
    else:
        hidden_pre = hidden = None
        u = r @ params['proj.fc1.weight'] + params['proj.fc1.bias']
    if cache is not None:
        if cache.features is None:
            cache.features = r
        cache.hidden_pre = hidden_pre
        cache.hidden = hidden
        cache.projection = u
    return l2_normalize(u)


def classifier_forward(features, params, config):
    r = np.asarray(features, dtype=np.float64)
    if r.ndim != 2 or r.shape[1] != config.feature_dim:
        raise ShapeMismatchError(f"classifier expects (batch, {config.feature_dim}), got {r.shape}")
    return r @ params['head.weight'] + params['head.bias']


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    n = logits.shape[0]
    loss = float(-log_probs[np.arange(n), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def dual_forward(x1, x2, params, config, caches=None):
    """
    Run both views through the one parameter set.

    Each view is its own pass so identical inputs give identical outputs.
    Pass caches=(ForwardCache(), ForwardCache()) to keep activations for backward.
    """
    x1 = np.asarray(x1)
    x2 = np.asarray(x2)
    if x1.shape != x2.shape:
        raise ShapeMismatchError(f"views differ in shape: {x1.shape} vs {x2.shape}")
    c1, c2 = caches if caches is not None else (None, None)
    z1 = projection_forward(encoder_forward(x1, params, config, c1), params, config, c1)
    z2 = projection_forward(encoder_forward(x2, params, config, c2), params, config, c2)
    return z1, z2


def backward(params, config, cache, grad_projection=None, grad_logits=None, encoder_grads=True):
    """
    Reverse pass over a cached forward.

    grad_projection is dL/du for the pre-normalization projection rows u;
    grad_logits is dL/dlogits of the classifier head. Returns gradients shaped
    like params (zeros where nothing flows).
    """
    if cache is None or cache.features is None:
        raise InvalidInputError("backward needs the cache of a forward pass")
    grads = params.zeros_like()
    r = cache.features
    dr = np.zeros_like(r)

    if grad_projection is not None:
        if cache.projection is None:
            raise InvalidInputError("backward got a projection gradient but no projection was cached")
        du = np.asarray(grad_projection, dtype=np.float64)
        if du.shape != cache.projection.shape:
            raise ShapeMismatchError(f"projection gradient {du.shape} vs output {cache.projection.shape}")
        if config.projection == MLP:
            grads['proj.fc2.weight'] = cache.hidden.T @ du
            grads['proj.fc2.bias'] = du.sum(axis=0)
            dh = (du @ params['proj.fc2.weight'].T) * (cache.hidden_pre > 0)
        else:
            dh = du
        grads['proj.fc1.weight'] = r.T @ dh
        grads['proj.fc1.bias'] = dh.sum(axis=0)
        dr += dh @ params['proj.fc1.weight'].T

    if grad_logits is not None:
        dl = np.asarray(grad_logits, dtype=np.float64)
        grads['head.weight'] = r.T @ dl
        grads['head.bias'] = dl.sum(axis=0)
        dr += dl @ params['head.weight'].T

    if not encoder_grads or not cache.stages:
        return grads

    batch, h, w, c = cache.pooled_shape
    dx = np.broadcast_to(dr[:, None, None, :] / (h * w), cache.pooled_shape)
    for i in reversed(range(len(cache.stages))):
        stage = cache.stages[i]
        cout = config.conv_channels[i]
        weight = params[f'conv{i}.weight']
        dpre = dx.reshape(-1, cout) * stage.active
        grads[f'conv{i}.weight'] = (stage.cols.T @ dpre).reshape(weight.shape)
        grads[f'conv{i}.bias'] = dpre.sum(axis=0)
        if i > 0:
            dcols = dpre @ weight.reshape(-1, cout).T
            dx = _col2im(dcols, stage.input_shape, stage.out_hw,
                         config.kernel, config.stride, config.padding)
    return grads


def infer_encoder_config(params, canvas_h, canvas_w, **overrides):
    """Rebuild the architecture from tensor shapes (canvas size is not stored)."""
    tensors = params.tensors if isinstance(params, ModelParams) else params
    conv = []
    i = 0
    while f'conv{i}.weight' in tensors:
        conv.append(tensors[f'conv{i}.weight'].shape)
        i += 1
    if not conv or 'proj.fc1.weight' not in tensors or 'head.weight' not in tensors:
        raise ShapeMismatchError("tensor set does not describe an encoder with projection and head")
    fc1 = tensors['proj.fc1.weight'].shape
    if 'proj.fc2.weight' in tensors:
        projection, hidden, dim = MLP, fc1[1], tensors['proj.fc2.weight'].shape[1]
    else:
        projection, hidden, dim = LINEAR, fc1[1], fc1[1]
    values = dict(
        canvas_h=canvas_h,
        canvas_w=canvas_w,
        in_channels=conv[0][2],
        conv_channels=tuple(s[3] for s in conv),
        kernel=conv[0][0],
        projection=projection,
        projection_hidden=hidden,
        projection_dim=dim,
        num_classes=tensors['head.weight'].shape[1],
    )
    values.update(overrides)
    return EncoderConfig(**values)
