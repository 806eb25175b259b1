"""Scalar objectives of the hybrid model.

Batched inputs (leading batch axis) are reduced by the mean over the batch,
so a batch of identical samples has the same loss as one sample.  The
discriminator and generator terms have logit-space twins
(``*_from_logits``) which are what training uses; they never evaluate
``log`` of a saturated probability.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import NonFiniteError, ShapeError
from .nn import sigmoid


def softplus(x):
    return np.logaddexp(0.0, x)


def _batch_mean(per_sample):
    return float(np.mean(per_sample))


def kl_loss(params) -> float:
    """0.5 * (mu.mu + sum(exp(eps) - eps - 1)), averaged over the batch."""
    mu = np.asarray(params.mu, dtype=np.float64)
    lv = np.asarray(params.log_var, dtype=np.float64)
    per = 0.5 * (np.sum(mu * mu, axis=-1) + np.sum(np.exp(lv) - lv - 1.0, axis=-1))
    return _batch_mean(per)


def kl_grad(params):
    """Gradient of :func:`kl_loss` w.r.t. (mu, log_var)."""
    n = params.mu.shape[0] if params.mu.ndim == 2 else 1
    return params.mu / n, 0.5 * (np.exp(params.log_var) - 1.0) / n


def feature_matching_loss(f_real, f_fake, f_noise) -> float:
    f_real, f_fake, f_noise = (np.asarray(a, dtype=np.float64) for a in (f_real, f_fake, f_noise))
    if not f_real.shape == f_fake.shape == f_noise.shape:
        raise ShapeError(f"feature shapes differ: {f_real.shape}, {f_fake.shape}, {f_noise.shape}")
    per = 0.5 * np.sum((f_real - f_fake) ** 2, axis=-1) + 0.5 * np.sum((f_real - f_noise) ** 2, axis=-1)
    return _batch_mean(per)


def feature_matching_grad(f_real, f_fake, f_noise):
    """Gradients of :func:`feature_matching_loss` w.r.t. the fake and noise features."""
    n = f_real.shape[0] if f_real.ndim == 2 else 1
    return (f_fake - f_real) / n, (f_noise - f_real) / n


def _check_probs(**probs):
    for name, p in probs.items():
        p = np.asarray(p)
        if not np.all((p > 0) & (p < 1)):
            raise ValueError(f"{name} must lie strictly inside (0, 1)")


def discriminator_loss(p_real, p_fake, p_noise) -> float:
    """-(log D(x) + log(1 - D(x~)) + log(1 - D(x~_p)))."""
    _check_probs(p_real=p_real, p_fake=p_fake, p_noise=p_noise)
    return discriminator_loss_from_logits(*(_logit(p) for p in (p_real, p_fake, p_noise)))


def generator_loss(p_fake, p_noise, l_fm) -> float:
    """-(log D(x~) + log D(x~_p)) + feature-matching loss."""
    _check_probs(p_fake=p_fake, p_noise=p_noise)
    if l_fm < 0:
        raise ValueError("feature-matching loss must be non-negative")
    return generator_adv_loss_from_logits(_logit(p_fake), _logit(p_noise)) + l_fm


def _logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def discriminator_loss_from_logits(a_real, a_fake, a_noise) -> float:
    return _batch_mean(softplus(-np.asarray(a_real, dtype=np.float64))
                       + softplus(np.asarray(a_fake, dtype=np.float64))
                       + softplus(np.asarray(a_noise, dtype=np.float64)))


def discriminator_loss_grad(a_real, a_fake, a_noise):
    n = np.size(a_real)
    return (sigmoid(a_real) - 1.0) / n, sigmoid(a_fake) / n, sigmoid(a_noise) / n


def generator_adv_loss_from_logits(a_fake, a_noise) -> float:
    return _batch_mean(softplus(-np.asarray(a_fake, dtype=np.float64))
                       + softplus(-np.asarray(a_noise, dtype=np.float64)))


def generator_adv_grad(a_fake, a_noise):
    n = np.size(a_fake)
    return (sigmoid(a_fake) - 1.0) / n, (sigmoid(a_noise) - 1.0) / n


@dataclass(frozen=True)
class LossReport:
    l_prior: float
    l_fm: float
    l_e: float
    l_d: float
    l_g: float
    total: float

    def to_json(self, iteration: int) -> str:
        return json.dumps({"iter": iteration, **asdict(self)})


def assemble_report(l_prior, l_fm, l_d, l_g) -> LossReport:
    """Combine component losses; ``l_g`` already contains ``l_fm``."""
    for name, value in (("l_prior", l_prior), ("l_fm", l_fm), ("l_d", l_d), ("l_g", l_g)):
        if not math.isfinite(value):
            raise NonFiniteError(f"{name} is not finite ({value})")
    l_e = l_fm + l_prior
    return LossReport(float(l_prior), float(l_fm), float(l_e), float(l_d), float(l_g), float(l_e + l_d + l_g))
