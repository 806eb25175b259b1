"""Encoder, generator and discriminator networks and the latent sampler."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import NonFiniteError, ShapeError
from .nn import LayerSpec, Parameter

BAR_HEIGHT = 88
BAR_WIDTH = 16
LATENT_DIM = 128
GROUPS = ("encoder", "generator", "discriminator")


@dataclass(frozen=True)
class Architecture:
    """Channel widths of the three networks.

    The defaults are the full-size model.  Spatial layout is fixed: the
    encoder and the generator each use three stride-2 stages, so bars of
    88x16 map to 11x2 feature maps and back.
    """

    enc_channels: tuple[int, ...] = (8, 16, 32)
    gen_channels: tuple[int, ...] = (64, 32, 16, 8)
    dis_channels: tuple[int, ...] = (8, 16, 32, 64)
    gen_base: int = 128
    latent_dim: int = LATENT_DIM
    height: int = BAR_HEIGHT
    width: int = BAR_WIDTH

    def __post_init__(self):
        if len(self.enc_channels) != 3 or len(self.gen_channels) < 3 or not self.dis_channels:
            raise ValueError("encoder needs 3 conv stages, generator at least 3 deconv stages")
        if self.height % 8 or self.width % 8:
            raise ValueError("bar extents must be divisible by 8")

    @property
    def reduced_shape(self):
        return self.height // 8, self.width // 8

    @classmethod
    def from_widths(cls, enc=None, gen=None, dis=None, gen_base=None):
        base = cls()
        return cls(
            enc_channels=tuple(enc) if enc else base.enc_channels,
            gen_channels=tuple(gen) if gen else base.gen_channels,
            dis_channels=tuple(dis) if dis else base.dis_channels,
            gen_base=gen_base or base.gen_base,
        )


class Reshape:
    def __init__(self, *shape):
        self.shape = shape

    def parameters(self):
        return []

    def forward(self, x):
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, dy, cache, need_dx=True, need_params=True):
        return dy.reshape(cache)


class Network:
    """A chain of layers with an explicit cache list for backprop."""

    def __init__(self, steps):
        self.steps = steps

    def parameters(self):
        return [p for step in self.steps for p in step.parameters()]

    def forward(self, x):
        caches = []
        for step in self.steps:
            x, cache = step.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, dy, caches, need_dx=True, need_params=True):
        last = len(self.steps) - 1
        for k in range(last, -1, -1):
            dy = self.steps[k].backward(dy, caches[k], need_dx=need_dx or k > 0, need_params=need_params)
        return dy


def build_encoder(arch: Architecture, rng, dtype, init_std):
    steps, c_in = [], 1
    for k, c in enumerate(arch.enc_channels):
        spec = LayerSpec("conv", c_in, c, kernel=(5, 5), stride=2, activation="elu")
        steps.append(nn.make_layer(f"encoder.conv{k + 1}", spec, rng, dtype, init_std))
        c_in = c
    rh, rw = arch.reduced_shape
    steps.append(Reshape(c_in * rh * rw))
    head = LayerSpec("dense", c_in * rh * rw, 2 * arch.latent_dim)
    steps.append(nn.make_layer("encoder.fc", head, rng, dtype, init_std))
    return Network(steps)


def build_generator(arch: Architecture, rng, dtype, init_std):
    rh, rw = arch.reduced_shape
    proj = LayerSpec("dense", arch.latent_dim, arch.gen_base * rh * rw, activation="relu")
    steps = [nn.make_layer("generator.fc", proj, rng, dtype, init_std), Reshape(arch.gen_base, rh, rw)]
    c_in = arch.gen_base
    for k, c in enumerate(arch.gen_channels):
        stride = 2 if k < 3 else 1
        spec = LayerSpec("transposed_conv", c_in, c, kernel=(3, 3), stride=stride,
                         output_padding=stride - 1, activation="relu")
        steps.append(nn.make_layer(f"generator.deconv{k + 1}", spec, rng, dtype, init_std))
        c_in = c
    out = LayerSpec("conv", c_in, 1, kernel=(3, 3), activation="tanh")
    steps.append(nn.make_layer("generator.out", out, rng, dtype, init_std))
    return Network(steps)


def build_discriminator(arch: Architecture, rng, dtype, init_std):
    steps, c_in = [], 1
    for k, c in enumerate(arch.dis_channels):
        spec = LayerSpec("conv", c_in, c, kernel=(3, 3), activation="leaky_relu")
        steps.append(nn.make_layer(f"discriminator.conv{k + 1}", spec, rng, dtype, init_std))
        c_in = c
    steps.append(nn.make_layer("discriminator.features", LayerSpec("conv", c_in, 1, kernel=(3, 3)), rng, dtype, init_std))
    return Network(steps)


@dataclass
class LatentParams:
    mu: np.ndarray
    log_var: np.ndarray


@dataclass
class LatentSample:
    noise: np.ndarray
    z: np.ndarray
    params: LatentParams | None = None


@dataclass
class DiscriminatorOutput:
    prob: np.ndarray
    logit: np.ndarray
    features: np.ndarray


def reparameterize(params: LatentParams, noise) -> LatentSample:
    """``z = mu + noise * exp(log_var)``, recording all three inputs."""
    noise = np.asarray(noise, dtype=params.mu.dtype)
    if noise.shape != params.mu.shape or params.log_var.shape != params.mu.shape:
        raise ShapeError(f"noise {noise.shape} and latent params {params.mu.shape} disagree")
    z = params.mu + noise * np.exp(params.log_var)
    return LatentSample(noise=noise, z=z, params=params)


class HybridModel:
    """Encoder E, generator G and discriminator D with their Adam state.

    Forward methods accept a batch ``(N, 88, 16)`` or a single bar
    ``(88, 16)``; single inputs give unbatched outputs.
    """

    def __init__(self, arch: Architecture | None = None, seed: int = 0, dtype=np.float32, init_std: float = 0.02):
        self.arch = arch or Architecture()
        self.dtype = np.dtype(dtype)
        self.seed = seed
        rng = np.random.default_rng([seed, 0x1A17])
        self.encoder = build_encoder(self.arch, rng, self.dtype, init_std)
        self.generator = build_generator(self.arch, rng, self.dtype, init_std)
        self.discriminator = build_discriminator(self.arch, rng, self.dtype, init_std)
        self.configure_optimizer()

    # -- parameter bookkeeping ------------------------------------------------

    def networks(self):
        return {"encoder": self.encoder, "generator": self.generator, "discriminator": self.discriminator}

    def parameters(self, group: str | None = None) -> list[Parameter]:
        if group is not None:
            return self.networks()[group].parameters()
        return [p for net in self.networks().values() for p in net.parameters()]

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def configure_optimizer(self, lr_eg=5e-4, lr_d=1e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        """Set learning rates and betas, creating zeroed Adam state where missing."""
        for group in GROUPS:
            lr = lr_d if group == "discriminator" else lr_eg
            for p in self.parameters(group):
                if p.adam is None:
                    p.adam = nn.AdamState.zeros_like(p.data)
                p.adam.lr, p.adam.beta1, p.adam.beta2, p.adam.eps = lr, beta1, beta2, eps

    def zero_grad(self, group=None):
        for p in self.parameters(group):
            p.grad = None

    def snapshot(self):
        return {p.name: (p.data.copy(), p.adam.m.copy(), p.adam.v.copy(), p.adam.step) for p in self.parameters()}

    def restore(self, snap):
        for p in self.parameters():
            data, m, v, step = snap[p.name]
            p.data[...] = data
            p.adam.m[...] = m
            p.adam.v[...] = v
            p.adam.step = step

    # -- forward passes -------------------------------------------------------

    def _frames(self, frames):
        frames = np.asarray(frames, dtype=self.dtype)
        single = frames.ndim == 2
        if single:
            frames = frames[None]
        if frames.ndim != 3 or frames.shape[1:] != (self.arch.height, self.arch.width) or not len(frames):
            raise ShapeError(f"expected bars of shape ({self.arch.height}, {self.arch.width}), got {frames.shape}")
        return frames[:, None], single

    def encode_with_cache(self, frames):
        x, single = self._frames(frames)
        out, cache = self.encoder.forward(x)
        d = self.arch.latent_dim
        return LatentParams(out[:, :d], out[:, d:]), cache, single

    def encode(self, frames) -> LatentParams:
        params, _, single = self.encode_with_cache(frames)
        if single:
            return LatentParams(params.mu[0], params.log_var[0])
        return params

    def generate_with_cache(self, z):
        z = np.asarray(z, dtype=self.dtype)
        single = z.ndim == 1
        if single:
            z = z[None]
        if z.ndim != 2 or z.shape[1] != self.arch.latent_dim:
            raise ShapeError(f"expected latent vectors of length {self.arch.latent_dim}, got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise NonFiniteError("latent vector contains NaN or Inf")
        t, cache = self.generator.forward(z)
        bars = (t[:, 0] + 1) * 0.5
        return bars, cache, single

    def generate(self, z) -> np.ndarray:
        bars, _, single = self.generate_with_cache(z)
        return bars[0] if single else bars

    def discriminate_with_cache(self, frames):
        x, single = self._frames(frames)
        fmap, cache = self.discriminator.forward(x)
        features = fmap.reshape(len(fmap), -1)
        logit = features.mean(axis=1)
        return DiscriminatorOutput(nn.sigmoid(logit), logit, features), cache, single

    def discriminate(self, frames) -> DiscriminatorOutput:
        out, _, single = self.discriminate_with_cache(frames)
        if single:
            return DiscriminatorOutput(out.prob[0], out.logit[0], out.features[0])
        return out

    # -- backward passes ------------------------------------------------------

    def encoder_backward(self, dmu, dlog_var, cache, need_params=True):
        self.encoder.backward(np.concatenate([dmu, dlog_var], axis=1), cache, need_dx=False, need_params=need_params)

    def generator_backward(self, dbars, cache, need_dz=True, need_params=True):
        """Backprop d(loss)/d(bars) through the [0, 1] output map into G; returns d/dz."""
        dt = (0.5 * dbars)[:, None]
        return self.generator.backward(dt, cache, need_dx=need_dz, need_params=need_params)

    def discriminator_backward(self, dfeatures, dlogit, cache, need_dx=True, need_params=True):
        """Backprop gradients given on the feature map and on the logit (its mean)."""
        n, f = dfeatures.shape
        dmap = dfeatures + dlogit[:, None] / f
        dmap = dmap.reshape(n, 1, self.arch.height, self.arch.width)
        dx = self.discriminator.backward(dmap, cache, need_dx=need_dx, need_params=need_params)
        return None if dx is None else dx[:, 0]
