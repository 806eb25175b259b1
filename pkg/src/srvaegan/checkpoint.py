"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SRVG"  u16 version
    per parameter, in model order:
        u16 name length, UTF-8 name
        4 x u32 shape (dense weights are (out, in, 1, 1), biases (n, 1, 1, 1))
        f32 data, f32 Adam m, f32 Adam v, u64 Adam step
    u64 global iteration, u64 RNG seed

There is no parameter count; records run until the 16-byte trailer.
The architecture is recovered from the stored shapes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import Architecture, HybridModel

MAGIC = b"SRVG"
VERSION = 1
_TRAILER = struct.Struct("<QQ")


def _shape4(shape):
    return tuple(shape) + (1,) * (4 - len(shape))


def to_bytes(model: HybridModel, iteration: int, seed: int) -> bytes:
    out = [MAGIC, struct.pack("<H", VERSION)]
    for p in model.parameters():
        name = p.name.encode("utf-8")
        out.append(struct.pack("<H", len(name)) + name)
        out.append(struct.pack("<4I", *_shape4(p.data.shape)))
        for arr in (p.data, p.adam.m, p.adam.v):
            out.append(np.asarray(arr, dtype="<f4").tobytes())
        out.append(struct.pack("<Q", p.adam.step))
    out.append(_TRAILER.pack(iteration, seed))
    return b"".join(out)


def save_checkpoint(path, model: HybridModel, iteration: int, seed: int):
    Path(path).write_bytes(to_bytes(model, iteration, seed))


def _records(buf: bytes):
    if buf[:4] != MAGIC:
        raise FormatError("not a checkpoint: bad magic")
    if len(buf) < 6 + _TRAILER.size:
        raise FormatError("checkpoint truncated")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos, end = 6, len(buf) - _TRAILER.size
    records = {}
    try:
        while pos < end:
            (nlen,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2:pos + 2 + nlen].decode("utf-8")
            pos += 2 + nlen
            shape = struct.unpack_from("<4I", buf, pos)
            pos += 16
            size = int(np.prod(shape))
            arrays = []
            for _ in range(3):
                if pos + 4 * size > end:
                    raise FormatError(f"checkpoint truncated inside {name!r}")
                arrays.append(np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(shape))
                pos += 4 * size
            (step,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            records[name] = (shape, arrays, step)
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint record near byte {pos}: {exc}") from None
    if pos != end:
        raise FormatError("checkpoint records overrun the trailer")
    iteration, seed = _TRAILER.unpack_from(buf, end)
    return records, iteration, seed


def _infer_architecture(records) -> Architecture:
    def out_channels(prefix):
        chans, k = [], 1
        while f"{prefix}{k}.weight" in records:
            chans.append(records[f"{prefix}{k}.bias"][0][0])
            k += 1
        return tuple(chans)

    try:
        fc = records["generator.fc.weight"][0]
        rh, rw = 11, 2
        return Architecture(
            enc_channels=out_channels("encoder.conv"),
            gen_channels=out_channels("generator.deconv"),
            dis_channels=out_channels("discriminator.conv"),
            gen_base=fc[0] // (rh * rw),
            latent_dim=fc[1],
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"checkpoint does not describe a known architecture: {exc}") from None


def load_checkpoint(path) -> tuple[HybridModel, int, int]:
    """Return ``(model, iteration, seed)``; optimizer learning rates are left at defaults."""
    records, iteration, seed = _records(Path(path).read_bytes())
    model = HybridModel(_infer_architecture(records), seed=seed)
    params = model.named_parameters()
    if set(params) != set(records):
        missing = sorted(set(params) ^ set(records))
        raise FormatError(f"checkpoint parameter names do not match the model: {missing[:5]}")
    for name, p in params.items():
        shape, (data, m, v), step = records[name]
        if _shape4(p.data.shape) != shape:
            raise FormatError(f"shape mismatch for {name}: {shape} vs {p.data.shape}")
        p.data[...] = data.reshape(p.data.shape)
        p.adam.m[...] = m.reshape(p.data.shape)
        p.adam.v[...] = v.reshape(p.data.shape)
        p.adam.step = step
    return model, iteration, seed
