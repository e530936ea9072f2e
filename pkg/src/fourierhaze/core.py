"""Shared plumbing: image validation, seeded randomness, PNG I/O and checkpoints."""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

RANGES = ("unit", "signed", "unbounded")
_BOUNDS = {"unit": (0.0, 1.0), "signed": (-1.0, 1.0)}

CHECKPOINT_MAGIC = b"FHZCKPT1"


class ImageFormatError(ValueError):
    """Raised for files that are not 8-bit RGB PNGs."""


class CheckpointError(ValueError):
    """Raised when a checkpoint file is truncated or its manifest is inconsistent."""


def check_image(x, value_range="unbounded", name="image", ndim=3, dtype=np.float32):
    """Validate an image-like array and return it as a contiguous float array.

    ``ndim`` is 3 for a single ``(C, H, W)`` image and 4 for an ``(N, C, H, W)`` batch.
    """
    if value_range not in RANGES:
        raise ValueError(f"unknown value range {value_range!r}; expected one of {RANGES}")
    arr = np.asarray(x)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty (shape {arr.shape})")
    if dtype is not None:
        arr = np.ascontiguousarray(arr, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    if value_range in _BOUNDS:
        lo, hi = _BOUNDS[value_range]
        if arr.min() < lo or arr.max() > hi:
            raise ValueError(
                f"{name} must lie in [{lo}, {hi}], got [{arr.min():.6g}, {arr.max():.6g}]"
            )
    return arr


def check_image_batch(X, value_range="unit", name="X"):
    """Accept a 4-D array or a sequence of 3-D images; return a list of validated images."""
    if isinstance(X, np.ndarray) and X.ndim == 4:
        items = list(X)
    elif isinstance(X, np.ndarray) and X.ndim == 3:
        items = [X]
    else:
        items = list(X)
    if not items:
        raise ValueError(f"{name} contains no images")
    return [check_image(im, value_range, name=f"{name}[{i}]") for i, im in enumerate(items)]


def to_signed(x):
    """Map a unit-range image to [-1, 1]."""
    return (np.asarray(x) * 2.0 - 1.0).astype(np.float32)


def to_unit(y):
    """Clamp to [-1, 1] and map to [0, 1]."""
    return ((np.clip(np.asarray(y), -1.0, 1.0) + 1.0) * 0.5).astype(np.float32)


def make_rng(seed, *keys):
    """Counter-based generator for ``seed``; extra integer keys derive independent streams.

    ``make_rng(s, 3)`` is reproducible on its own, so per-item draws do not depend on
    the order in which items are processed.
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def sample_gaussian(shape, rng, dtype=np.float32):
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise ValueError(f"shape must have positive dimensions, got {shape}")
    return rng.standard_normal(shape, dtype=np.float64).astype(dtype)


def load_image(path):
    """Read an 8-bit RGB PNG into a ``(3, H, W)`` float32 array in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            fmt, mode = im.format, im.mode
            if fmt != "PNG":
                raise ImageFormatError(f"{path}: expected PNG, got {fmt}")
            if mode != "RGB":
                raise ImageFormatError(f"{path}: expected 8-bit RGB, got mode {mode}")
            data = np.asarray(im, dtype=np.uint8)
    except ImageFormatError:
        raise
    except (OSError, ValueError) as exc:
        raise ImageFormatError(f"{path}: unreadable image ({exc})") from exc
    return (data.transpose(2, 0, 1).astype(np.float32) / 255.0).astype(np.float32)


def save_image(img, path):
    img = check_image(img, "unit", name="img")
    if img.shape[0] != 3:
        raise ValueError(f"expected 3 channels, got {img.shape[0]}")
    data = np.clip(np.round(img.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data.transpose(1, 2, 0), mode="RGB").save(Path(path), format="PNG")


def save_checkpoint(path, tensors, metadata=None):
    """Write named tensors as float32 plus a JSON manifest.

    Layout: 8-byte magic, little-endian uint64 manifest length, UTF-8 JSON manifest,
    then the contiguous little-endian float32 payload.
    """
    entries = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {"tensors": entries, "metadata": metadata or {}, "payload_bytes": offset}
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(path):
    """Return ``(tensors, metadata)`` from a file written by :func:`save_checkpoint`."""
    blob = Path(path).read_bytes()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    if len(blob) < 16:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if 16 + hlen > len(blob):
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from exc
    payload = blob[16 + hlen :]
    if len(payload) != manifest.get("payload_bytes", -1):
        raise CheckpointError(
            f"{path}: payload has {len(payload)} bytes, manifest declares {manifest.get('payload_bytes')}"
        )
    tensors = {}
    spans = []
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        start, nbytes = entry["offset"], entry["nbytes"]
        if nbytes != 4 * int(np.prod(shape, dtype=np.int64)) or start < 0 or start + nbytes > len(payload):
            raise CheckpointError(f"{path}: tensor {entry['name']!r} does not fit the payload")
        spans.append((start, start + nbytes, entry["name"]))
        tensors[entry["name"]] = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=start).reshape(shape).astype(np.float32)
    spans.sort()
    for (_, end, a), (start, _, b) in zip(spans, spans[1:]):
        if start < end:
            raise CheckpointError(f"{path}: tensors {a!r} and {b!r} overlap")
    return tensors, manifest["metadata"]


def config_hash(fields):
    """Stable short hash of a JSON-serialisable mapping."""
    text = json.dumps(fields, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
