"""Shared fixtures and oracles for the test suite."""

import os

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from srvaegan import losses, nn
from srvaegan.model import Architecture, HybridModel, reparameterize
from srvaegan.training import d_gradients, eg_gradients

# kernels are only bit-reproducible single-threaded
_limits = threadpool_limits(int(os.environ.get("SRVG_THREADS", "1")))

SMALL = dict(enc_channels=(4, 8, 16), gen_channels=(16, 8, 8, 4), dis_channels=(4, 8, 8, 16), gen_base=32)


def small_arch():
    return Architecture.from_widths(SMALL["enc_channels"], SMALL["gen_channels"], SMALL["dis_channels"],
                                    SMALL["gen_base"])


def random_bars(rng, n, density=0.15):
    vel = rng.integers(1, 128, size=(n, 88, 16)) / 127.0
    return np.where(rng.random((n, 88, 16)) < density, vel, 0.0)


def forward_losses(model, x_prev, x_next, noise_e, noise_p):
    """Every scalar objective of one minibatch, by plain forward passes."""
    lat = model.encode(x_prev)
    fake = model.generate(reparameterize(lat, noise_e).z)
    noisy = model.generate(noise_p)
    r, f, p = (model.discriminate(b) for b in (x_next, fake, noisy))
    l_fm = losses.feature_matching_loss(r.features, f.features, p.features)
    return {
        "l_prior": losses.kl_loss(lat),
        "l_fm": l_fm,
        "l_e": l_fm + losses.kl_loss(lat),
        "l_g": losses.generator_adv_loss_from_logits(f.logit, p.logit) + l_fm,
        "l_d": losses.discriminator_loss_from_logits(r.logit, f.logit, p.logit),
    }


# which objective each group descends
OBJECTIVE = {"encoder": "l_e", "generator": "l_g", "discriminator": "l_d"}


def full_graph_check(model, batch=4, per_tensor=3, seed=0):
    """Worst relative error per network between analytic and finite-difference grads.

    The model must be float64.  ``per_tensor`` random entries of every
    parameter tensor are probed.
    """
    rng = np.random.default_rng(seed)
    # zero biases on mostly-zero bars put pre-activations exactly on the
    # ReLU-family kinks, where no finite difference agrees with any
    # one-sided derivative; move to a generic point first
    for p in model.parameters():
        if p.name.endswith(".bias"):
            p.data[...] = rng.normal(0.0, 0.05, p.data.shape)
    x_prev, x_next = random_bars(rng, batch), random_bars(rng, batch)
    ne, npn = rng.standard_normal((2, batch, model.arch.latent_dim))
    eg_gradients(model, x_prev, x_next, ne, npn)
    grads = {p.name: p.grad.copy() for g in ("encoder", "generator") for p in model.parameters(g)}
    d_gradients(model, x_prev, x_next, ne, npn)
    grads.update({p.name: p.grad.copy() for p in model.parameters("discriminator")})
    model.zero_grad()
    worst = {}
    for group, key in OBJECTIVE.items():
        err = 0.0
        for p in model.parameters(group):
            idx = rng.choice(p.data.size, size=min(per_tensor, p.data.size), replace=False)
            num = nn.numerical_gradient(lambda: forward_losses(model, x_prev, x_next, ne, npn)[key],
                                        p.data, idx, kink_safe=True)
            err = max(err, nn.relative_error(grads[p.name].reshape(-1)[idx], num))
        worst[group] = err
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_model():
    return HybridModel(seed=0)
