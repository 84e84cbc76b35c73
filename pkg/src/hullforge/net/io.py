"""``VAE1`` model files.

Layout (little-endian)::

    b"VAE1"  u32 version  u32 header_len  header (UTF-8 JSON)  parameter blobs (f32)

The JSON header carries the architecture, its expanded layer chain, the
parameter names/shapes in blob order and a CRC-32 of the blob section.
"""

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .model import Architecture, ArchitectureMismatch, ModelWeights, layer_chain, param_shapes

MODEL_MAGIC = b"VAE1"
MODEL_VERSION = 1
_PRELUDE = struct.Struct("<4sII")


class ModelFormatError(ValueError):
    pass


def model_to_bytes(model):
    blobs = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in model.params.values())
    header = {
        "architecture": model.arch.to_dict(),
        "layers": [l.to_dict() for l in layer_chain(model.arch)],
        "params": [[k, list(v.shape)] for k, v in model.params.items()],
        "crc32": zlib.crc32(blobs),
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    return _PRELUDE.pack(MODEL_MAGIC, MODEL_VERSION, len(hb)) + hb + blobs


def save_model(model, path):
    Path(path).write_bytes(model_to_bytes(model))


def model_from_bytes(data, expected=None, name="<bytes>"):
    if len(data) < _PRELUDE.size:
        raise ModelFormatError(f"{name}: truncated file")
    magic, version, hlen = _PRELUDE.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"{name}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"{name}: unsupported version {version}")
    end = _PRELUDE.size + hlen
    if len(data) < end:
        raise ModelFormatError(f"{name}: truncated header")
    try:
        header = json.loads(data[_PRELUDE.size : end].decode("utf-8"))
        arch = Architecture.from_dict(header["architecture"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"{name}: corrupt header ({exc})") from None
    if header.get("layers") != [l.to_dict() for l in layer_chain(arch)]:
        raise ArchitectureMismatch(f"{name}: layer chain does not match the stored architecture")
    if expected is not None and expected != arch:
        raise ArchitectureMismatch(f"{name}: file holds {arch.to_dict()}, expected {expected.to_dict()}")
    shapes = param_shapes(arch)
    if [[k, list(v)] for k, v in shapes.items()] != header.get("params"):
        raise ArchitectureMismatch(f"{name}: parameter table does not match the architecture")
    blobs = data[end:]
    need = 4 * sum(int(np.prod(s)) for s in shapes.values())
    if len(blobs) != need:
        raise ModelFormatError(f"{name}: corrupt or truncated parameters ({len(blobs)} of {need} bytes)")
    if zlib.crc32(blobs) != header.get("crc32"):
        raise ModelFormatError(f"{name}: parameter checksum mismatch")
    params = {}
    off = 0
    for k, s in shapes.items():
        n = int(np.prod(s))
        params[k] = np.frombuffer(blobs, dtype="<f4", count=n, offset=off).astype(np.float32).reshape(s)
        off += 4 * n
    return ModelWeights(arch, params)


def load_model(path, expected=None):
    """Read a model; ``expected`` (an :class:`Architecture`) enforces a match."""
    return model_from_bytes(Path(path).read_bytes(), expected, str(path))
