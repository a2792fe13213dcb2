"""Binary model container.

Layout, all integers little-endian:

    magic "HCMF" | format version u32 | manifest length u64 | manifest JSON
    then per tensor, in manifest order: blob length u64 | raw bytes

The manifest is canonical JSON (sorted keys, compact separators, ASCII),
and tensor blobs are C-order little-endian arrays, so a given model
serializes to identical bytes on any platform. The manifest's "tensors"
list pins name, shape, dtype, and an optional quantization scale for
each blob.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"HCMF"
FORMAT_VERSION = 1

_DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "int8": np.dtype("i1"),
}


class ModelFormatError(Exception):
    """Raised when a model file cannot be parsed; message carries the offset."""


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True).encode("ascii")


def _dtype_name(arr: np.ndarray) -> str:
    for name, dt in _DTYPES.items():
        if arr.dtype == dt or arr.dtype == dt.newbyteorder(">"):
            return name
    raise ValueError(f"unsupported tensor dtype {arr.dtype}")


def serialize_model(header: dict,
                    tensors: list[tuple[str, np.ndarray, float | None]]) -> bytes:
    """header is arbitrary JSON-safe metadata; tensors are
    (name, array, scale) with scale set only for quantized blobs."""
    manifest = dict(header)
    manifest["tensors"] = [
        {"name": name, "shape": list(arr.shape), "dtype": _dtype_name(arr),
         "scale": scale}
        for name, arr, scale in tensors
    ]
    blob = canonical_json(manifest)
    out = [MAGIC, struct.pack("<I", FORMAT_VERSION),
           struct.pack("<Q", len(blob)), blob]
    for _, arr, _ in tensors:
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[_dtype_name(arr)]).tobytes()
        out.append(struct.pack("<Q", len(raw)))
        out.append(raw)
    return b"".join(out)


def parse_model(data: bytes) -> tuple[dict, dict[str, np.ndarray], dict[str, float]]:
    """Returns (manifest, arrays by name, quantization scales by name)."""
    if len(data) < 16:
        raise ModelFormatError("truncated header at byte 0")
    if data[:4] != MAGIC:
        raise ModelFormatError(f"bad magic {data[:4]!r} at byte 0")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version} at byte 4")
    (mlen,) = struct.unpack_from("<Q", data, 8)
    offset = 16
    if offset + mlen > len(data):
        raise ModelFormatError(f"manifest overruns file at byte {offset}")
    try:
        manifest = json.loads(data[offset : offset + mlen])
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"bad manifest JSON at byte {offset}: {exc}") from exc
    offset += mlen
    arrays: dict[str, np.ndarray] = {}
    scales: dict[str, float] = {}
    for spec in manifest.get("tensors", []):
        if offset + 8 > len(data):
            raise ModelFormatError(f"truncated tensor header at byte {offset}")
        (blen,) = struct.unpack_from("<Q", data, offset)
        offset += 8
        if offset + blen > len(data):
            raise ModelFormatError(f"tensor overruns file at byte {offset}")
        dtype = _DTYPES.get(spec.get("dtype"))
        if dtype is None:
            raise ModelFormatError(
                f"unknown tensor dtype {spec.get('dtype')!r} at byte {offset}")
        shape = tuple(spec["shape"])
        expect = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if blen != expect:
            raise ModelFormatError(
                f"tensor {spec['name']!r} length {blen} != expected {expect}"
                f" at byte {offset}")
        arr = np.frombuffer(data[offset : offset + blen], dtype=dtype).reshape(shape)
        arrays[spec["name"]] = arr.copy()  # own the memory, native layout
        if spec.get("scale") is not None:
            scales[spec["name"]] = float(spec["scale"])
        offset += blen
    if offset != len(data):
        raise ModelFormatError(f"trailing bytes after byte {offset}")
    return manifest, arrays, scales


def write_model(path: str, header: dict,
                tensors: list[tuple[str, np.ndarray, float | None]]) -> None:
    data = serialize_model(header, tensors)
    with open(path, "wb") as fh:
        fh.write(data)


def read_model(path: str) -> tuple[dict, dict[str, np.ndarray], dict[str, float]]:
    with open(path, "rb") as fh:
        return parse_model(fh.read())
