"""
Central finite-difference checks for the analytic backward pass.
"""
import logging
from dataclasses import dataclass

import numpy as np

from contrastive.losses import EmbeddingBatch, scfa_loss_grad

from .network import (
    EncoderConfig,
    ForwardCache,
    backward,
    classifier_forward,
    encoder_forward,
    init_params,
    projection_forward,
    softmax_cross_entropy,
)

logger = logging.getLogger(__name__)

TINY_CONFIG = EncoderConfig(
    canvas_h=8,
    canvas_w=8,
    conv_channels=(4,),
    projection_hidden=6,
    projection_dim=4,
    num_classes=3,
)


def relative_error(analytic, numeric):
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


def numeric_gradient(f, x, step=1e-5):
    """Central differences of scalar f with respect to every entry of x (in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        f_plus = f()
        flat[i] = saved - step
        f_minus = f()
        flat[i] = saved
        out[i] = (f_plus - f_minus) / (2 * step)
    return grad


def _joint_objective(params, config, x, labels, video_ids, view_ids, tau, cache=None):
    """Contrastive loss on the projections plus cross-entropy on the head."""
    features = encoder_forward(x, params, config, cache)
    u_cache = cache if cache is not None else ForwardCache(features=features)
    projection_forward(features, params, config, u_cache)
    contrastive = scfa_loss_grad(u_cache.projection, labels, video_ids, view_ids, tau)
    logits = classifier_forward(features, params, config)
    ce, grad_logits = softmax_cross_entropy(logits, labels)
    return contrastive.value + ce, contrastive.grad, grad_logits


@dataclass
class GradcheckReport:
    max_rel_err: float
    per_tensor: dict
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_err <= self.tolerance


def gradcheck_model(config=TINY_CONFIG, seed=0, videos=3, tau=0.5, step=1e-5, tolerance=1e-3):
    """
    Compare backward() with finite differences of (forward, scfa loss + CE)
    for every parameter tensor of a small random model.
    """
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    for name in params:
        if name.endswith('.bias'):
            params[name] = rng.normal(0.0, 0.1, size=params[name].shape)

    x = rng.uniform(0.0, 1.0, size=(2 * videos, config.canvas_h, config.canvas_w, config.in_channels))
    batch = EmbeddingBatch.from_views(
        np.zeros((videos, 1)), np.zeros((videos, 1)),
        labels=rng.integers(0, config.num_classes, size=videos),
        video_ids=[f'v{i}' for i in range(videos)],
    )
    args = (batch.labels, batch.video_ids, batch.view_ids, tau)

    cache = ForwardCache()
    _, grad_u, grad_logits = _joint_objective(params, config, x, *args, cache=cache)
    analytic = backward(params, config, cache, grad_projection=grad_u, grad_logits=grad_logits)

    per_tensor = {}
    for name in params:
        numeric = numeric_gradient(
            lambda: _joint_objective(params, config, x, *args)[0], params[name], step
        )
        per_tensor[name] = relative_error(analytic[name], numeric)
        logger.debug("gradcheck %s rel_err=%.3e", name, per_tensor[name])

    return GradcheckReport(max_rel_err=max(per_tensor.values()), per_tensor=per_tensor, tolerance=tolerance)
