"""Binary tensor containers for checkpoints and the ingest cache.

Layout (all little-endian)::

    magic[4] | version u32 | count u32
    count x { name_len u16 | name utf-8 | ndim u8 | dims u64 x ndim | dtype u8 | raw data }
    crc32 u32 over every preceding byte

dtype tags: 0 = f32, 1 = f64, 2 = i64. Checkpoints use magic ``RBRN`` and a
JSON sidecar ``<file>.json`` holding the model config, class names and
training metadata. The dataset cache uses magic ``RBRD``.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .data import LabeledDataset, list_image_tree
from .errors import (
    BadMagicError,
    CheckpointError,
    CRCMismatchError,
    ShapeDisagreementError,
    ShapeError,
    UnsupportedVersionError,
)
from .model import Model, ResBRNetConfig, build_res_brnet

CHECKPOINT_MAGIC = b"RBRN"
CACHE_MAGIC = b"RBRD"
FORMAT_VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


def encode_container(magic: bytes, tensors) -> bytes:
    """Serialise ``(name, array)`` pairs, in the given order."""
    tensors = list(tensors)
    parts = [magic, struct.pack("<II", FORMAT_VERSION, len(tensors))]
    for name, arr in tensors:
        arr = np.asarray(arr)
        tag = _TAGS.get(arr.dtype.newbyteorder("="))
        if tag is None:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(struct.pack("<B", tag))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_container(blob: bytes, magic: bytes) -> list[tuple[str, np.ndarray]]:
    if len(blob) < 16:
        raise CRCMismatchError(f"file too short ({len(blob)} bytes) to be a valid container")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CRCMismatchError("CRC32 mismatch: file is truncated or corrupted")
    if body[:4] != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {body[:4]!r}")
    version, count = struct.unpack_from("<II", body, 4)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}")
    off = 12
    out = []
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off : off + n].decode("utf-8")
            off += n
            (ndim,) = struct.unpack_from("<B", body, off)
            off += 1
            dims = struct.unpack_from(f"<{ndim}Q", body, off)
            off += 8 * ndim
            (tag,) = struct.unpack_from("<B", body, off)
            off += 1
            dtype = _DTYPES[tag]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            if off + nbytes > len(body):
                raise CheckpointError(f"tensor {name} overruns the file")
            arr = np.frombuffer(body, dtype=dtype, count=nbytes // dtype.itemsize, offset=off).reshape(dims)
            out.append((name, arr.astype(dtype.newbyteorder("="))))
            off += nbytes
    except (struct.error, KeyError, UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"malformed container: {exc}") from exc
    if off != len(body):
        raise CheckpointError("trailing bytes after last tensor")
    return out


def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def save_checkpoint(model: Model, path, class_names=None, metadata=None) -> None:
    """Write parameters + running statistics and the JSON sidecar."""
    path = Path(path)
    blob = encode_container(CHECKPOINT_MAGIC, ((k, v.data) for k, v in model.state().items()))
    path.write_bytes(blob)
    side = {
        "config": model.cfg.to_dict(),
        "class_names": list(class_names) if class_names is not None else [],
        "metadata": metadata or {},
    }
    _sidecar(path).write_text(_dump_json(side))


def read_sidecar(path) -> dict:
    side_path = _sidecar(path)
    try:
        return json.loads(side_path.read_text())
    except FileNotFoundError as exc:
        raise CheckpointError(f"missing sidecar {side_path}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"sidecar {side_path} is not valid JSON: {exc}") from exc


def load_checkpoint(path) -> tuple[Model, dict]:
    """Rebuild the model from its sidecar config and load the stored tensors.

    Returns ``(model, sidecar)``.
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    tensors = decode_container(blob, CHECKPOINT_MAGIC)
    side = read_sidecar(path)
    cfg = ResBRNetConfig.from_dict(side.get("config", {}))
    dtypes = {arr.dtype for _, arr in tensors}
    dtype = np.float64 if dtypes == {np.dtype("float64")} else np.float32
    model = build_res_brnet(cfg, seed=0, dtype=dtype)
    try:
        model.load_state_arrays(dict(tensors))
    except ShapeError as exc:
        raise ShapeDisagreementError(f"checkpoint disagrees with sidecar config: {exc}") from exc
    return model, side


# ---------------------------------------------------------------------------
# dataset cache


def tree_hash(root, target) -> str:
    """SHA-256 over relative paths and bytes of every image, plus the target shape."""
    root = Path(root)
    h = hashlib.sha256(repr(tuple(int(d) for d in target)).encode())
    for name, files in list_image_tree(root):
        h.update(b"\0class\0" + name.encode())
        for f in files:
            h.update(b"\0file\0" + f.relative_to(root).as_posix().encode())
            h.update(f.read_bytes())
    return h.hexdigest()


def save_dataset_cache(ds: LabeledDataset, path, source_hash: str, target) -> None:
    tensors = [(f"image/{i:06d}", img) for i, img in enumerate(ds.images.astype(np.float32))]
    tensors.append(("labels", ds.labels.astype(np.int64)))
    Path(path).write_bytes(encode_container(CACHE_MAGIC, tensors))
    side = {
        "class_names": list(ds.class_names),
        "tree_hash": source_hash,
        "target": [int(d) for d in target],
        "paths": list(ds.paths),
    }
    _sidecar(path).write_text(_dump_json(side))


def load_dataset_cache(path, expected_hash=None, target=None):
    """Cached dataset, or ``None`` if the cache is missing or stale."""
    path = Path(path)
    if not path.exists() or not _sidecar(path).exists():
        return None
    side = read_sidecar(path)
    if expected_hash is not None and side.get("tree_hash") != expected_hash:
        return None
    if target is not None and [int(d) for d in target] != side.get("target"):
        return None
    tensors = decode_container(path.read_bytes(), CACHE_MAGIC)
    arrays = dict(tensors)
    labels = arrays.pop("labels")
    images = np.stack([arrays[k] for k in sorted(arrays)]) if arrays else np.zeros((0, *side["target"]), np.float32)
    return LabeledDataset(images, labels, side["class_names"], side.get("paths", []))

