"""Training of the encoder/generator/discriminator triple.

Every iteration takes a minibatch of consecutive bar pairs
``(x_prev, x_next)``: E encodes ``x_prev``, G decodes the sampled latent
into a prediction of ``x_next`` and also decodes pure noise, and D compares
both against the real ``x_next``.  E and G are updated twice per
iteration, D once.

All randomness is derived from ``(seed, purpose, counter)`` so a run
resumed from a checkpoint replays exactly what an uninterrupted run would
have done.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import losses
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, NonFiniteError
from .losses import LossReport
from .model import Architecture, HybridModel, reparameterize
from .nn import adam_update

_SHUFFLE, _STEP = 1, 2


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr_eg: float = 5e-4
    lr_d: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 1
    max_iters: int | None = None
    seed: int = 0
    checkpoint_interval: int = 0
    dataset: str | None = None
    log: str | None = None
    checkpoint: str | None = None
    enc_channels: tuple[int, ...] | None = None
    gen_channels: tuple[int, ...] | None = None
    dis_channels: tuple[int, ...] | None = None
    gen_base: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr_eg <= 0 or self.lr_d <= 0:
            raise ConfigError("learning rates must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    def architecture(self) -> Architecture:
        return Architecture.from_widths(self.enc_channels, self.gen_channels, self.dis_channels, self.gen_base)


_TUPLE_KEYS = {"enc_channels", "gen_channels", "dis_channels"}


def _coerce(key, raw: str):
    field_types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    if key not in field_types:
        raise ConfigError(f"unknown config key {key!r}")
    typ = field_types[key]
    try:
        if key in _TUPLE_KEYS:
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if typ.startswith("int"):
            return int(raw)
        if typ.startswith("float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for config key {key!r}") from None


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        values[key] = _coerce(key, raw)
    return values


def load_config(path=None, **overrides) -> TrainConfig:
    """Config file values, then non-None ``overrides`` on top."""
    values = parse_config(Path(path).read_text(encoding="utf-8")) if path else {}
    for key in overrides:
        if key not in {f.name for f in dataclasses.fields(TrainConfig)}:
            raise ConfigError(f"unknown config key {key!r}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


# ---------------------------------------------------------------------------
# gradients


def eg_gradients(model: HybridModel, x_prev, x_next, noise_e, noise_p) -> dict:
    """Forward one minibatch and fill ``.grad`` of E (from L_E) and G (from L_G).

    D's parameters receive no gradient.  Returns the scalar losses.
    """
    model.zero_grad("encoder")
    model.zero_grad("generator")
    lat, ecache, _ = model.encode_with_cache(x_prev)
    sample = reparameterize(lat, noise_e)
    fake, gcache_f, _ = model.generate_with_cache(sample.z)
    noisy, gcache_p, _ = model.generate_with_cache(noise_p)
    real_out, _, _ = model.discriminate_with_cache(x_next)
    fake_out, dcache_f, _ = model.discriminate_with_cache(fake)
    noisy_out, dcache_p, _ = model.discriminate_with_cache(noisy)

    l_prior = losses.kl_loss(lat)
    l_fm = losses.feature_matching_loss(real_out.features, fake_out.features, noisy_out.features)
    l_adv = losses.generator_adv_loss_from_logits(fake_out.logit, noisy_out.logit)

    dfm_fake, dfm_noisy = losses.feature_matching_grad(real_out.features, fake_out.features, noisy_out.features)
    dadv_fake, dadv_noisy = losses.generator_adv_grad(fake_out.logit, noisy_out.logit)

    # G minimises adversarial + feature matching
    dx_fake = model.discriminator_backward(dfm_fake, dadv_fake, dcache_f, need_params=False)
    dx_noisy = model.discriminator_backward(dfm_noisy, dadv_noisy, dcache_p, need_params=False)
    model.generator_backward(dx_fake, gcache_f, need_dz=False)
    model.generator_backward(dx_noisy, gcache_p, need_dz=False)

    # E minimises feature matching + prior; only the z-path reaches it
    dx_fm = model.discriminator_backward(dfm_fake, np.zeros_like(dadv_fake), dcache_f, need_params=False)
    dz = model.generator_backward(dx_fm, gcache_f, need_params=False)
    dmu_kl, dlv_kl = losses.kl_grad(lat)
    dmu = dz + dmu_kl
    dlv = dz * sample.noise * np.exp(lat.log_var) + dlv_kl
    model.encoder_backward(dmu, dlv, ecache)
    return {"l_prior": l_prior, "l_fm": l_fm, "l_g": l_adv + l_fm}


def d_gradients(model: HybridModel, x_prev, x_next, noise_e, noise_p) -> dict:
    """Forward one minibatch and fill ``.grad`` of D from L_D; returns all losses."""
    model.zero_grad("discriminator")
    lat = model.encode(x_prev)
    z = reparameterize(lat, noise_e).z
    fake = model.generate(z)
    noisy = model.generate(noise_p)
    n = len(x_next)
    out, dcache, _ = model.discriminate_with_cache(np.concatenate([np.asarray(x_next, dtype=model.dtype), fake, noisy]))
    f_r, f_f, f_p = out.features[:n], out.features[n:2 * n], out.features[2 * n:]
    a_r, a_f, a_p = out.logit[:n], out.logit[n:2 * n], out.logit[2 * n:]
    l_d = losses.discriminator_loss_from_logits(a_r, a_f, a_p)
    l_fm = losses.feature_matching_loss(f_r, f_f, f_p)
    result = {
        "l_prior": losses.kl_loss(lat),
        "l_fm": l_fm,
        "l_d": l_d,
        "l_g": losses.generator_adv_loss_from_logits(a_f, a_p) + l_fm,
    }
    da = np.concatenate(losses.discriminator_loss_grad(a_r, a_f, a_p))
    # L_l is not a D objective: features get no direct gradient here
    model.discriminator_backward(np.zeros_like(out.features), da.astype(model.dtype), dcache, need_dx=False)
    return result


def _check_finite(values: dict):
    for name, value in values.items():
        if not np.isfinite(value):
            raise NonFiniteError(f"{name} is not finite ({value})")


def _apply(model: HybridModel, groups):
    for group in groups:
        for p in model.parameters(group):
            adam_update(p.data, p.grad, p.adam)


def _noise(rng, n, dim, dtype):
    return rng.standard_normal((n, dim)).astype(dtype)


def train_step(model: HybridModel, x_prev, x_next, rng: np.random.Generator) -> LossReport:
    """Two (E, G) updates then one D update; rolls back on non-finite values."""
    if len(x_prev) == 0 or len(x_prev) != len(x_next):
        raise ValueError("train_step needs a non-empty batch of matching pairs")
    n, dim, dt = len(x_prev), model.arch.latent_dim, model.dtype
    snap = model.snapshot()
    try:
        for _ in range(2):
            parts = eg_gradients(model, x_prev, x_next, _noise(rng, n, dim, dt), _noise(rng, n, dim, dt))
            _check_finite(parts)
            _apply(model, ("encoder", "generator"))
        parts = d_gradients(model, x_prev, x_next, _noise(rng, n, dim, dt), _noise(rng, n, dim, dt))
        _check_finite(parts)
        _apply(model, ("discriminator",))
    except NonFiniteError:
        model.restore(snap)
        raise
    finally:
        model.zero_grad()
    return losses.assemble_report(parts["l_prior"], parts["l_fm"], parts["l_d"], parts["l_g"])


# ---------------------------------------------------------------------------
# loop


def iterations_per_epoch(n_pairs: int, batch_size: int) -> int:
    return n_pairs // min(batch_size, n_pairs)


def build_model(cfg: TrainConfig) -> HybridModel:
    model = HybridModel(cfg.architecture(), seed=cfg.seed)
    model.configure_optimizer(cfg.lr_eg, cfg.lr_d, cfg.beta1, cfg.beta2, cfg.eps)
    return model


def train_loop(pairs, cfg: TrainConfig, model: HybridModel | None = None, start_iteration: int = 0,
               log_path=None, checkpoint_path=None,
               callback: Callable[[int, LossReport], None] | None = None):
    """Run training over ``pairs = (x_prev, x_next)`` arrays of shape (P, 88, 16).

    Returns ``(model, reports)`` where ``reports`` holds one
    :class:`LossReport` per iteration run by this call.  The log file, if
    given, is appended to when resuming and truncated otherwise.
    """
    x_prev, x_next = (np.asarray(a, dtype=np.float32) for a in pairs)
    n_pairs = len(x_prev)
    if n_pairs == 0:
        raise ConfigError("dataset contains no training pairs")
    if model is None:
        model = build_model(cfg)
    else:
        model.configure_optimizer(cfg.lr_eg, cfg.lr_d, cfg.beta1, cfg.beta2, cfg.eps)
    batch = min(cfg.batch_size, n_pairs)
    per_epoch = iterations_per_epoch(n_pairs, batch)
    total = cfg.epochs * per_epoch
    if cfg.max_iters is not None:
        total = min(total, cfg.max_iters)
    log_path = log_path or cfg.log
    checkpoint_path = checkpoint_path or cfg.checkpoint
    log_file = open(log_path, "a" if start_iteration else "w", encoding="utf-8") if log_path else None
    reports = []
    order_epoch, order = -1, None
    try:
        for it in range(start_iteration, total):
            epoch, pos = divmod(it, per_epoch)
            if epoch != order_epoch:
                order = np.random.default_rng([cfg.seed, _SHUFFLE, epoch]).permutation(n_pairs)
                order_epoch = epoch
            idx = order[pos * batch:(pos + 1) * batch]
            rng = np.random.default_rng([cfg.seed, _STEP, it])
            try:
                report = train_step(model, x_prev[idx], x_next[idx], rng)
            except NonFiniteError as exc:
                raise NonFiniteError(f"iteration {it}: {exc}") from exc
            reports.append(report)
            if log_file:
                log_file.write(report.to_json(it + 1) + "\n")
                log_file.flush()
            if checkpoint_path and cfg.checkpoint_interval and (it + 1) % cfg.checkpoint_interval == 0:
                save_checkpoint(checkpoint_path, model, it + 1, cfg.seed)
            if callback:
                callback(it + 1, report)
    finally:
        if log_file:
            log_file.close()
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model, max(total, start_iteration), cfg.seed)
    return model, reports


def resume(source, pairs, cfg: TrainConfig, **kw):
    """Continue a run from the checkpoint at ``source``, using the seed stored in it."""
    model, iteration, seed = load_checkpoint(source)
    cfg = dataclasses.replace(cfg, seed=seed)
    return train_loop(pairs, cfg, model=model, start_iteration=iteration, **kw)
