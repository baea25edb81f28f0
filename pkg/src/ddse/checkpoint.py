"""Self-describing binary checkpoint container.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic b"DDSECKP1"
    offset 8   4 bytes   uint32 header length H
    offset 12  H bytes   UTF-8 JSON header, keys sorted, no whitespace
    12+H       ...       array payload, arrays back to back in header order
    end-4      4 bytes   uint32 CRC-32 of every preceding byte

The header records architecture, dimensions, scalar settings, the training
config, free-form metadata, and one entry per array (``name``, ``dtype``,
``shape``, ``offset`` into the payload, ``nbytes``). Float arrays are stored
as ``<f8`` and index arrays as ``<i8``. With ``compressed: true`` each encoder
weight matrix is stored as three CSR arrays ``<name>.offsets``,
``<name>.indices`` and ``<name>.values``; W2 matrices are stored transposed
(CSR of W2.T), matching :class:`ddse.sparse_store.CompiledEncoder`.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .model import Arch, EncoderModel
from .pca import PcaBasis
from .projection import check_constraints
from .sparse_store import SparseMatrix

__all__ = ["CheckpointError", "write_checkpoint", "read_checkpoint", "MAGIC", "FORMAT_VERSION"]

MAGIC = b"DDSECKP1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint bytes are truncated, corrupt or inconsistent."""


def _weight_arrays(model, compressed):
    out = []
    for name, w in model.weight_tensors().items():
        if not compressed:
            out.append((name, w))
            continue
        csr = SparseMatrix.from_dense(w.T if name.startswith("w2") else w)
        out.append((f"{name}.offsets", csr.row_offsets))
        out.append((f"{name}.indices", csr.col_indices))
        out.append((f"{name}.values", csr.values))
    return out


def encode_checkpoint(model, basis=None, config=None, meta=None, compressed=False):
    """Checkpoint bytes for ``model``; refuses constrained models that violate their constraints."""
    if model.arch.constrained:
        report = check_constraints(model)
        if not report.passed:
            raise ValueError(f"refusing to write an infeasible model\n{report}")
    arrays = _weight_arrays(model, compressed)
    arrays += [
        ("thresholds", model.thresholds),
        ("head_weight", model.head_weight),
        ("head_bias", model.head_bias),
    ]
    if basis is not None:
        arrays += [("pca.mean", basis.mean), ("pca.basis", basis.basis),
                   ("pca.eigenvalues", basis.eigenvalues)]

    entries, blobs, offset = [], [], 0
    for name, arr in arrays:
        arr = np.asarray(arr)
        dtype = "<i8" if np.issubdtype(arr.dtype, np.integer) else "<f8"
        data = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)

    header = {
        "format_version": FORMAT_VERSION,
        "arch": model.arch.value,
        "n": model.n, "m": model.m, "k": model.k, "s": model.s,
        "classes": model.classes,
        "drop_ratio": model.drop_ratio,
        "keep_injection": model.keep_injection,
        "compressed": bool(compressed),
        "has_basis": basis is not None,
        "config": config or {},
        "meta": meta or {},
        "arrays": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(head)) + head + b"".join(blobs)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def write_checkpoint(path, model, basis=None, config=None, meta=None, compressed=False):
    data = encode_checkpoint(model, basis, config, meta, compressed)
    Path(path).write_bytes(data)
    return len(data)


def decode_checkpoint(data):
    """Inverse of :func:`encode_checkpoint`: ``(model, basis, config, meta)``."""
    if len(data) < len(MAGIC) + 8:
        raise CheckpointError("file too short to be a checkpoint")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic; not a DDSE checkpoint")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointError("checksum mismatch; file is truncated or corrupt")
    (hlen,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {header.get('format_version')}")

    payload = data[12 + hlen:-4]
    arrays = {}
    for e in header["arrays"]:
        start, stop = e["offset"], e["offset"] + e["nbytes"]
        if stop > len(payload):
            raise CheckpointError(f"array {e['name']} runs past the payload")
        arrays[e["name"]] = np.frombuffer(payload[start:stop], dtype=e["dtype"]).reshape(e["shape"]).copy()

    n, m = header["n"], header["m"]

    def weight(name, shape):
        if not header["compressed"]:
            return arrays[name]
        transposed = name.startswith("w2")
        rows, cols = (shape[1], shape[0]) if transposed else shape
        csr = SparseMatrix(rows, cols, arrays[f"{name}.offsets"], arrays[f"{name}.indices"],
                           arrays[f"{name}.values"])
        dense = csr.to_dense()
        return dense.T.copy() if transposed else dense

    arch = Arch.parse(header["arch"])
    k = header["k"]
    try:
        model = EncoderModel(
            arch=arch, n=n, m=m, k=k, s=header["s"],
            w1=weight("w1", (m, n)),
            w2_list=[weight(f"w2.{j}", (n, m)) for j in range(k)] if arch.factored else [],
            w3_list=[weight(f"w3.{j}", (m, n)) for j in range(k)] if arch.factored else [],
            mid_list=[] if arch.factored else [weight(f"mid.{j}", (m, m)) for j in range(k)],
            thresholds=arrays["thresholds"],
            head_weight=arrays["head_weight"],
            head_bias=arrays["head_bias"],
            drop_ratio=header["drop_ratio"],
            keep_injection=header["keep_injection"],
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"inconsistent checkpoint contents: {exc}") from exc
    basis = None
    if header["has_basis"]:
        basis = PcaBasis(arrays["pca.mean"], arrays["pca.basis"], arrays["pca.eigenvalues"])
    return model, basis, header["config"], header["meta"]


def read_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())
