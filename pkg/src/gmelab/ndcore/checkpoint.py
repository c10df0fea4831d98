"""Binary checkpoint format for a sequence of networks.

Layout (all integers little-endian)::

    b"GMEG" | u32 version | u32 network count
    per network:
        u32 width count | u32 widths... | u8 hidden activation codes...
        | u8 final activation code | u64 parameter count | f64 parameters...
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .mlp import ACTIVATION_CODES, ACTIVATIONS, Mlp, MlpSpec

MAGIC = b"GMEG"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_networks(nets: list[Mlp]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(nets))]
    for net in nets:
        spec = net.spec
        widths = spec.layer_widths
        parts.append(struct.pack(f"<I{len(widths)}I", len(widths), *widths))
        codes = [ACTIVATION_CODES[a] for a in spec.activations]
        codes.append(ACTIVATION_CODES[spec.final_activation])
        parts.append(struct.pack(f"<{len(codes)}B", *codes))
        parts.append(struct.pack("<Q", spec.num_params))
        parts.append(np.ascontiguousarray(net.params, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_networks(buf: bytes) -> list[Mlp]:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise CheckpointError("not a GMEG checkpoint (bad or missing header)")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    nets = []
    for _ in range(count):
        (nw,) = take("<I")
        widths = take(f"<{nw}I")
        codes = take(f"<{nw - 1}B")
        try:
            acts = tuple(ACTIVATIONS[c] for c in codes)
        except IndexError:
            raise CheckpointError(f"unknown activation code in {codes}") from None
        spec = MlpSpec(widths, acts[:-1], acts[-1])
        (n,) = take("<Q")
        if n != spec.num_params:
            raise CheckpointError(f"parameter count {n} does not match widths {widths}")
        if pos + 8 * n > len(buf):
            raise CheckpointError("truncated parameter payload")
        params = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).astype(np.float64)
        pos += 8 * n
        nets.append(Mlp(spec, params))
    if pos != len(buf):
        raise CheckpointError("trailing bytes after last network")
    return nets


def save_networks(path: str | Path, nets: list[Mlp]) -> None:
    Path(path).write_bytes(encode_networks(nets))


def load_networks(path: str | Path) -> list[Mlp]:
    return decode_networks(Path(path).read_bytes())
