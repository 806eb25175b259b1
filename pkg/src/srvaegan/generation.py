"""Bar-by-bar sequence generation by latent chaining.

Mode 1 starts from a given bar; mode 2 starts from a bar decoded from pure
noise.  Every following bar is decoded from a latent sampled by encoding
the bar before it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .mididata import PianoRollSequence
from .model import HybridModel, reparameterize


@dataclass
class GenSpec:
    mode: int = 1
    n_bars: int = 5
    seed: int = 0
    seed_bar: np.ndarray | None = None
    include_seed: bool = False
    deterministic: bool = False  # use z = mu instead of sampling

    def __post_init__(self):
        if self.mode not in (1, 2):
            raise ConfigError(f"mode must be 1 or 2, got {self.mode}")
        if self.n_bars < 1:
            raise ConfigError("n_bars must be >= 1")
        if self.mode == 1 and self.seed_bar is None:
            raise ConfigError("mode 1 needs a seed bar")


def draw_noise(spec: GenSpec, dim: int) -> np.ndarray:
    """The (n_bars, dim) standard-normal draws a generation run consumes, in order."""
    return np.random.default_rng([spec.seed, 3]).standard_normal((spec.n_bars, dim))


def generate_sequence(spec: GenSpec, model: HybridModel, noise: np.ndarray | None = None) -> PianoRollSequence:
    """Generate ``spec.n_bars`` bars.

    Row ``t`` of ``noise`` is the draw used for bar ``t``: the reparameterisation
    noise when the bar comes from an encoded predecessor, the latent itself
    for the first bar of mode 2.
    """
    noise = draw_noise(spec, model.arch.latent_dim) if noise is None else np.asarray(noise)
    if noise.shape[0] < spec.n_bars:
        raise ConfigError(f"need {spec.n_bars} noise rows, got {noise.shape[0]}")
    bars = []
    if spec.mode == 1:
        current = np.asarray(spec.seed_bar, dtype=model.dtype)
        start = 0
    else:
        current = model.generate(noise[0])
        bars.append(current)
        start = 1
    for t in range(start, spec.n_bars):
        params = model.encode(current)
        z = params.mu if spec.deterministic else reparameterize(params, noise[t]).z
        current = model.generate(z)
        bars.append(current)
    if spec.include_seed and spec.mode == 1:
        bars.insert(0, np.asarray(spec.seed_bar, dtype=np.float32))
    return PianoRollSequence(np.stack(bars), source=f"generated:mode{spec.mode}:seed{spec.seed}")


def pick_seed_bar(sequences, rng: np.random.Generator | None = None, index: int | None = None) -> np.ndarray:
    """A bar from a dataset, by flat index or uniformly at random."""
    bars = [b for s in sequences for b in s.bars]
    if not bars:
        raise ConfigError("dataset has no bars to seed generation")
    if index is None:
        index = int((rng or np.random.default_rng()).integers(len(bars)))
    if not 0 <= index < len(bars):
        raise ConfigError(f"seed index {index} out of range (dataset has {len(bars)} bars)")
    return bars[index]
