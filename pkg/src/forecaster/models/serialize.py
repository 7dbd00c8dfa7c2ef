"""Model files: magic, JSON header, then little-endian float64 blobs.

Layout::

    b"FCMODEL\\0" | u32 header length (LE) | header JSON | payload

The header carries the format version, the architecture, feature names,
normalization statistics, the tensor table and a CRC32 of the payload.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .mle import MLEModel
from .mlp import MLPArchitecture, MLPModel

MAGIC = b"FCMODEL\0"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


class ModelFormatError(ValueError):
    pass


class IncompatibleModelError(ModelFormatError):
    pass


def _tensors(model):
    if isinstance(model, MLPModel):
        out = []
        for k, (w, b) in enumerate(zip(model.weights, model.biases)):
            out += [(f"W{k}", w), (f"b{k}", b)]
        return "mlp", out
    if isinstance(model, MLEModel):
        return "mle", [
            ("classes", model.classes.astype(float)),
            ("means", model.means),
            ("variances", model.variances),
            ("log_priors", model.log_priors),
        ]
    raise TypeError(f"cannot serialize {type(model).__name__}")


def _jsonable(meta: dict) -> dict:
    return json.loads(json.dumps(meta, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o)))


def dumps(model) -> bytes:
    kind, tensors = _tensors(model)
    table, blobs, offset = [], [], 0
    for name, arr in tensors:
        data = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    payload = b"".join(blobs)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "feature_names": list(model.feature_names),
        "normalization": None if model.normalization is None else np.asarray(model.normalization).tolist(),
        "metadata": _jsonable(model.metadata),
        "tensors": table,
        "payload_bytes": len(payload),
        "payload_crc32": zlib.crc32(payload),
    }
    if kind == "mlp":
        a = model.architecture
        header["architecture"] = {"input_dim": a.input_dim, "hidden": list(a.hidden), "output_dim": a.output_dim}
    else:
        header["var_floor"] = model.var_floor
    hbytes = json.dumps(header, sort_keys=True).encode()
    return MAGIC + struct.pack("<I", len(hbytes)) + hbytes + payload


def loads(data: bytes):
    if len(data) < len(MAGIC) + 4 or not data.startswith(MAGIC):
        raise ModelFormatError("not a model file (bad magic or too short)")
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
    start = len(MAGIC) + 4
    if len(data) < start + hlen:
        raise ModelFormatError(f"truncated header: need {hlen} bytes, have {len(data) - start}")
    try:
        header = json.loads(data[start : start + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"corrupt header: {e}") from e
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise IncompatibleModelError(f"model format version {version} is not supported (expected {FORMAT_VERSION})")
    payload = data[start + hlen :]
    if len(payload) != header["payload_bytes"]:
        raise ModelFormatError(f"truncated payload: expected {header['payload_bytes']} bytes, found {len(payload)}")
    if zlib.crc32(payload) != header["payload_crc32"]:
        raise ModelFormatError("payload checksum mismatch")
    tensors = {}
    for t in header["tensors"]:
        buf = payload[t["offset"] : t["offset"] + t["nbytes"]]
        tensors[t["name"]] = np.frombuffer(buf, dtype=_DTYPE).reshape(t["shape"]).astype(float)
    norm = header["normalization"]
    norm = None if norm is None else np.array(norm, dtype=float)
    names = tuple(header["feature_names"])
    if header["kind"] == "mlp":
        a = header["architecture"]
        arch = MLPArchitecture(a["input_dim"], tuple(a["hidden"]), a["output_dim"])
        n = len(arch.dims) - 1
        try:
            return MLPModel(
                arch,
                [tensors[f"W{k}"] for k in range(n)],
                [tensors[f"b{k}"] for k in range(n)],
                names,
                norm,
                header["metadata"],
            )
        except (KeyError, ValueError) as e:
            raise ModelFormatError(f"tensor table inconsistent with architecture: {e}") from e
    if header["kind"] == "mle":
        return MLEModel(
            tensors["classes"].astype(int),
            tensors["means"],
            tensors["variances"],
            tensors["log_priors"],
            header["var_floor"],
            names,
            norm,
            header["metadata"],
        )
    raise ModelFormatError(f"unknown model kind {header['kind']!r}")


def save_model(model, path) -> Path:
    path = Path(path)
    path.write_bytes(dumps(model))
    return path


def load_model(path):
    return loads(Path(path).read_bytes())
