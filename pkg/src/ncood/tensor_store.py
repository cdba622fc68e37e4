"""Binary tensor interchange format (NCT1) and bundle manifests.

A tensor file is a fixed header followed by a raw row-major payload:

    magic   "NCT1"           4 bytes
    version u8 = 1
    dtype   u8               1 = f32, 2 = f64, 3 = i64
    ndim    u8               1..8
    extents ndim * u64       little-endian
    payload prod(extents) scalars, little-endian
            (IEEE-754 for floats, two's complement for i64)

Everything is little-endian regardless of host, so files written on any
platform read identically on any other. A bundle is a directory of tensor
files plus a line-oriented ``key = value`` manifest; tensor entries are
keyed ``tensor.<role>``, free-form metadata ``meta.<key>``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from .errors import ConsistencyError, ContractError, FormatError, TensorIOError

MAGIC = b"NCT1"
FORMAT_VERSION = 1
MAX_NDIM = 8

DTYPE_CODES = {"f32": 1, "f64": 2, "i64": 3}
CODE_DTYPES = {code: name for name, code in DTYPE_CODES.items()}
NUMPY_DTYPES = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "i64": np.dtype("<i8"),
}

MANIFEST_NAME = "manifest.txt"
TENSOR_SUFFIX = ".nct"


@dataclass(frozen=True)
class Tensor:
    """A dtype-tagged, shaped, row-major numeric array."""

    dtype: str
    shape: tuple[int, ...]
    data: np.ndarray  # flat, row-major, little-endian dtype

    def __post_init__(self):
        if self.dtype not in DTYPE_CODES:
            raise ContractError(f"unknown dtype {self.dtype!r}; expected one of {sorted(DTYPE_CODES)}")
        if not 1 <= len(self.shape) <= MAX_NDIM:
            raise ContractError(f"shape must have 1..{MAX_NDIM} dims, got {len(self.shape)}")
        if any(e < 0 for e in self.shape):
            raise ContractError(f"negative extent in shape {self.shape}")
        expected = int(np.prod(self.shape, dtype=np.int64))
        if self.data.size != expected:
            raise ContractError(
                f"shape {self.shape} implies {expected} scalars, data holds {self.data.size}"
            )

    @classmethod
    def from_array(cls, arr: np.ndarray, dtype: str | None = None) -> "Tensor":
        """Wrap an array, inferring the dtype tag unless one is forced."""
        arr = np.asarray(arr)
        if dtype is None:
            if arr.dtype.kind == "f":
                dtype = "f32" if arr.dtype.itemsize == 4 else "f64"
            elif arr.dtype.kind in "iu":
                dtype = "i64"
            else:
                raise ContractError(f"cannot infer tensor dtype from array dtype {arr.dtype}")
        shape = arr.shape if arr.ndim >= 1 else (1,)
        flat = np.ascontiguousarray(arr, dtype=NUMPY_DTYPES[dtype]).reshape(-1)
        return cls(dtype=dtype, shape=tuple(shape), data=flat)

    def to_array(self) -> np.ndarray:
        """Return the shaped row-major view of the payload."""
        return self.data.reshape(self.shape)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.dtype == other.dtype
            and self.shape == other.shape
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass
class BundleManifest:
    """Names the tensor files of a bundle plus free-form metadata."""

    entries: dict[str, str]
    dataset_name: str = ""
    metadata: dict[str, str] = field(default_factory=dict)


def write_tensor(t: Tensor, sink: BinaryIO) -> int:
    """Serialize a tensor to a byte stream; returns the bytes written."""
    header = MAGIC + struct.pack(
        "<BBB", FORMAT_VERSION, DTYPE_CODES[t.dtype], len(t.shape)
    )
    header += struct.pack(f"<{len(t.shape)}Q", *t.shape)
    payload = t.data.tobytes()
    written = 0
    for chunk in (header, payload):
        try:
            sink.write(chunk)
        except OSError as exc:
            raise TensorIOError(f"write failed at byte offset {written}: {exc}") from exc
        written += len(chunk)
    return written


def read_tensor(source: BinaryIO) -> Tensor:
    """Parse one tensor from a byte stream (inverse of :func:`write_tensor`)."""
    head = _read_exact(source, 7, "header")
    if head[:4] != MAGIC:
        raise FormatError(f"bad magic {head[:4]!r}, expected {MAGIC!r}")
    version, dtype_code, ndim = struct.unpack("<BBB", head[4:])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    if dtype_code not in CODE_DTYPES:
        raise FormatError(f"unknown dtype code {dtype_code}")
    if not 1 <= ndim <= MAX_NDIM:
        raise FormatError(f"ndim {ndim} outside 1..{MAX_NDIM}")
    shape = struct.unpack(f"<{ndim}Q", _read_exact(source, 8 * ndim, "shape extents"))
    dtype = CODE_DTYPES[dtype_code]
    count = int(np.prod(shape, dtype=np.int64))
    nbytes = count * NUMPY_DTYPES[dtype].itemsize
    payload = _read_exact(source, nbytes, "payload")
    data = np.frombuffer(payload, dtype=NUMPY_DTYPES[dtype]).copy()
    return Tensor(dtype=dtype, shape=tuple(int(e) for e in shape), data=data)


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    buf = source.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated {what}: expected {n} bytes, got {len(buf)}")
    return buf


def write_tensor_file(t: Tensor, path: Path | str) -> int:
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            return write_tensor(t, fh)
    except OSError as exc:
        raise TensorIOError(f"cannot write {path}: {exc}") from exc


def read_tensor_file(path: Path | str) -> Tensor:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return read_tensor(fh)
    except OSError as exc:
        raise TensorIOError(f"cannot read {path}: {exc}") from exc


def write_bundle(
    manifest: BundleManifest, tensors: Mapping[str, Tensor], dir: Path | str
) -> Path:
    """Write one tensor file per manifest entry plus the manifest itself.

    Entries carry paths relative to the bundle directory. Returns the
    manifest path.
    """
    dir = Path(dir)
    missing = [role for role in manifest.entries if role not in tensors]
    if missing:
        raise ConsistencyError(f"manifest names roles with no tensor: {missing}")
    _check_label_consistency(tensors)
    dir.mkdir(parents=True, exist_ok=True)
    for role in manifest.entries:
        rel = manifest.entries[role]
        write_tensor_file(tensors[role], dir / rel)
    manifest_path = dir / MANIFEST_NAME
    lines = ["# NCT1 bundle manifest"]
    if manifest.dataset_name:
        lines.append(f"dataset_name = {manifest.dataset_name}")
    for role in manifest.entries:
        lines.append(f"tensor.{role} = {manifest.entries[role]}")
    for key in manifest.metadata:
        lines.append(f"meta.{key} = {manifest.metadata[key]}")
    try:
        manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise TensorIOError(f"cannot write {manifest_path}: {exc}") from exc
    return manifest_path


def read_bundle(manifest_path: Path | str) -> tuple[BundleManifest, dict[str, Tensor]]:
    """Inverse of :func:`write_bundle`. Unknown keys land in metadata."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    try:
        text = manifest_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise TensorIOError(f"cannot read {manifest_path}: {exc}") from exc
    manifest = BundleManifest(entries={})
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{manifest_path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "dataset_name":
            manifest.dataset_name = value
        elif key.startswith("tensor."):
            manifest.entries[key[len("tensor."):]] = value
        elif key.startswith("meta."):
            manifest.metadata[key[len("meta."):]] = value
        else:
            manifest.metadata[key] = value
    tensors: dict[str, Tensor] = {}
    base = manifest_path.parent
    for role, rel in manifest.entries.items():
        path = base / rel
        if not path.exists():
            raise TensorIOError(f"bundle role {role!r} refers to missing file {path}")
        tensors[role] = read_tensor_file(path)
    _check_label_consistency(tensors)
    return manifest, tensors


def bundle_manifest_for(tensors: Mapping[str, Tensor], dataset_name: str = "",
                        metadata: Mapping[str, str] | None = None) -> BundleManifest:
    """Manifest with the conventional ``<role>.nct`` file naming."""
    entries = {role: f"{role}{TENSOR_SUFFIX}" for role in tensors}
    return BundleManifest(
        entries=entries, dataset_name=dataset_name, metadata=dict(metadata or {})
    )


def _check_label_consistency(tensors: Mapping[str, Tensor]) -> None:
    if "features" in tensors and "labels" in tensors:
        n = tensors["features"].shape[0]
        n_labels = tensors["labels"].shape[0]
        if n_labels != n:
            raise ConsistencyError(
                f"labels length {n_labels} does not match features first extent {n}"
            )
