"""Binary weight store (``.wts``).

Layout, all little endian::

    b"GCPW" | u32 version | u32 record count
    per record: u32 node id | u8 name length | name | u8 ndim | u32 dims... | f32 data
    u32 CRC32 of everything before it
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import TYPE_CHECKING, Mapping

import numpy as np

if TYPE_CHECKING:
    from .graph import Graph

MAGIC = b"GCPW"
VERSION = 1
BYTES_PER_WEIGHT = 4

Weights = dict[int, dict[str, np.ndarray]]


class WeightsError(ValueError):
    pass


class ChecksumError(WeightsError):
    pass


class ShapeMismatchError(WeightsError):
    def __init__(self, message: str, node: int):
        self.node = node
        super().__init__(message)


def init_weights(g: "Graph", rng: np.random.Generator, dtype=np.float32) -> Weights:
    """He-normal conv kernels, unit BN scale, objectness prior on head biases."""
    out: Weights = {}
    for nid, shapes in g.param_shapes().items():
        node = g[nid]
        if node.kind == "conv":
            cout, cin, k, _ = shapes["weight"]
            std = np.sqrt(2.0 / (cin * k * k))
            entry = {"weight": (rng.standard_normal(shapes["weight"]) * std).astype(dtype)}
            if nid in g.head_convs:
                entry["weight"] *= 0.1
            if "bias" in shapes:
                bias = np.zeros(shapes["bias"], dtype)
                head = next((h for h in g.heads if g[h].inputs[0] == nid), None)
                if head is not None:
                    per = 5 + int(g[head].get("classes"))
                    bias.reshape(-1, per)[:, 4] = -4.0
                entry["bias"] = bias
            out[nid] = entry
        else:
            c = shapes["gamma"]
            out[nid] = {"gamma": np.ones(c, dtype), "beta": np.zeros(c, dtype),
                        "running_mean": np.zeros(c, dtype), "running_var": np.ones(c, dtype)}
    return out


def header_bytes(shapes: Mapping[int, Mapping[str, tuple]]) -> int:
    """Non-payload bytes of a ``.wts`` file holding arrays of ``shapes``."""
    total = 12 + 4
    for arrays in shapes.values():
        for name, shape in arrays.items():
            total += 4 + 1 + len(name.encode()) + 1 + 4 * len(shape)
    return total


def encode_weights(weights: Mapping[int, Mapping[str, np.ndarray]]) -> bytes:
    records = [(nid, name, arr) for nid in sorted(weights) for name, arr in weights[nid].items()]
    buf = bytearray(MAGIC + struct.pack("<II", VERSION, len(records)))
    for nid, name, arr in records:
        a = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode()
        buf += struct.pack("<IB", nid, len(nb)) + nb + struct.pack("<B", a.ndim)
        buf += struct.pack(f"<{a.ndim}I", *a.shape) + a.tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    return bytes(buf)


def decode_weights(blob: bytes) -> Weights:
    if len(blob) < 16:
        raise ChecksumError("weight file too short")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("weight file checksum mismatch (truncated or corrupted)")
    if body[:4] != MAGIC:
        raise WeightsError("not a weight file (bad magic)")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise WeightsError(f"unsupported weight file version {version}")
    pos = 12
    out: Weights = {}
    for _ in range(count):
        nid, ln = struct.unpack_from("<IB", body, pos)
        pos += 5
        name = body[pos:pos + ln].decode()
        pos += ln
        (ndim,) = struct.unpack_from("<B", body, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", body, pos)
        pos += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(body, dtype="<f4", count=n, offset=pos).reshape(shape)
        pos += 4 * n
        out.setdefault(nid, {})[name] = arr.astype(np.float32)
    if pos != len(body):
        raise WeightsError("trailing bytes after last record")
    return out


def check_weights(g: "Graph", weights: Mapping[int, Mapping[str, np.ndarray]]) -> None:
    """Raise :class:`ShapeMismatchError` naming the first node that disagrees with ``g``."""
    expected = g.param_shapes()
    for nid in sorted(set(expected) | set(weights)):
        want = expected.get(nid)
        have = weights.get(nid)
        if want is None or have is None:
            raise ShapeMismatchError(f"node {nid}: weights present={have is not None}, "
                                     f"graph expects parameters={want is not None}", nid)
        if set(want) != set(have):
            raise ShapeMismatchError(f"node {nid}: arrays {sorted(have)} != {sorted(want)}", nid)
        for name, shape in want.items():
            if tuple(have[name].shape) != tuple(shape):
                raise ShapeMismatchError(
                    f"node {nid} ({g[nid].kind}) {name}: file shape {tuple(have[name].shape)} "
                    f"!= graph shape {tuple(shape)}", nid)


def save_weights(g: "Graph", weights: Mapping[int, Mapping[str, np.ndarray]], path) -> int:
    check_weights(g, weights)
    blob = encode_weights(weights)
    Path(path).write_bytes(blob)
    return len(blob)


def load_weights(g: "Graph", path) -> Weights:
    weights = decode_weights(Path(path).read_bytes())
    check_weights(g, weights)
    return weights


def weights_digest(weights: Mapping[int, Mapping[str, np.ndarray]]) -> str:
    import hashlib

    h = hashlib.sha256()
    for nid in sorted(weights):
        for name in sorted(weights[nid]):
            arr = np.ascontiguousarray(weights[nid][name])
            h.update(f"{nid}:{name}:{arr.dtype.str}:{arr.shape}".encode())
            h.update(arr.tobytes())
    return h.hexdigest()
