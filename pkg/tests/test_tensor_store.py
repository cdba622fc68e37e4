import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncood.errors import ConsistencyError, ContractError, FormatError, TensorIOError
from ncood.tensor_store import (
    BundleManifest,
    Tensor,
    bundle_manifest_for,
    read_bundle,
    read_tensor,
    write_bundle,
    write_tensor,
)

DTYPE_CODE = {"f32": 1, "f64": 2, "i64": 3}
SCALAR_FMT = {"f32": "f", "f64": "d", "i64": "q"}


def reference_bytes(dtype, shape, values):
    """Independent writer: per-scalar struct.pack, no numpy buffers."""
    out = b"NCT1" + struct.pack("<BBB", 1, DTYPE_CODE[dtype], len(shape))
    out += struct.pack(f"<{len(shape)}Q", *shape)
    for v in values:
        out += struct.pack("<" + SCALAR_FMT[dtype], v)
    return out


def roundtrip(t: Tensor) -> Tensor:
    buf = io.BytesIO()
    write_tensor(t, buf)
    buf.seek(0)
    return read_tensor(buf)


def test_empty_tensor_is_header_only():
    t = Tensor.from_array(np.zeros(0, dtype=np.float32))
    buf = io.BytesIO()
    n = write_tensor(t, buf)
    assert n == 7 + 8  # header + one extent, no payload
    assert buf.getvalue() == reference_bytes("f32", (0,), [])


def test_single_f32_payload_bytes():
    t = Tensor.from_array(np.array([1.0], dtype=np.float32))
    buf = io.BytesIO()
    write_tensor(t, buf)
    assert buf.getvalue()[-4:] == bytes([0x00, 0x00, 0x80, 0x3F])


def test_row_major_offset_matches_reference_writer():
    values = [1.0, 2.0, 3.0, 4.0]
    t = Tensor.from_array(np.array(values, dtype=np.float64).reshape(2, 2))
    buf = io.BytesIO()
    write_tensor(t, buf)
    raw = buf.getvalue()
    assert raw == reference_bytes("f64", (2, 2), values)
    payload = raw[7 + 16 :]
    assert len(payload) == 32
    # element (row=1, col=0) sits at payload offset 16
    assert struct.unpack("<d", payload[16:24])[0] == 3.0


@pytest.mark.parametrize("dtype", ["f32", "f64", "i64"])
def test_roundtrip_identity(dtype):
    rng = np.random.default_rng(0)
    arr = rng.standard_normal((3, 4, 2))
    if dtype == "i64":
        arr = (arr * 1000).astype(np.int64)
    t = Tensor.from_array(arr, dtype)
    assert roundtrip(t) == t


def test_roundtrip_preserves_float_specials():
    arr = np.array([np.nan, np.inf, -np.inf, -0.0, 1e-300], dtype=np.float64)
    t = Tensor.from_array(arr)
    back = roundtrip(t)
    assert back == t  # bit-level comparison, NaN included
    assert np.signbit(back.to_array()[3])


def test_bad_magic_is_format_error():
    with pytest.raises(FormatError, match="magic"):
        read_tensor(io.BytesIO(b"XXXX" + b"\x01\x01\x01" + struct.pack("<Q", 1)))


def test_unknown_dtype_code_is_format_error():
    raw = b"NCT1" + struct.pack("<BBB", 1, 9, 1) + struct.pack("<Q", 1)
    with pytest.raises(FormatError, match="dtype"):
        read_tensor(io.BytesIO(raw))


def test_truncated_payload_reports_expected_bytes():
    raw = b"NCT1" + struct.pack("<BBB", 1, 1, 1) + struct.pack("<Q", 3)
    raw += b"\x00" * 8  # 8 of the 12 payload bytes
    with pytest.raises(FormatError, match="expected 12 bytes, got 8"):
        read_tensor(io.BytesIO(raw))


def test_sink_write_failure_reports_offset():
    class FailingSink:
        def write(self, chunk):
            raise OSError("disk full")

    t = Tensor.from_array(np.ones(3, dtype=np.float32))
    with pytest.raises(TensorIOError, match="byte offset 0"):
        write_tensor(t, FailingSink())


def test_shape_data_mismatch_rejected():
    with pytest.raises(ContractError, match="scalars"):
        Tensor(dtype="f32", shape=(3,), data=np.zeros(2, dtype="<f4"))


def test_ndim_limits():
    with pytest.raises(ContractError):
        Tensor(dtype="f32", shape=(), data=np.zeros(1, dtype="<f4"))
    with pytest.raises(ContractError):
        Tensor(dtype="f32", shape=(1,) * 9, data=np.zeros(1, dtype="<f4"))


@settings(max_examples=60, deadline=None)
@given(
    dtype=st.sampled_from(["f32", "f64", "i64"]),
    shape=st.lists(st.integers(0, 4), min_size=1, max_size=8),
    seed=st.integers(0, 2**32 - 1),
)
def test_roundtrip_property(dtype, shape, seed):
    rng = np.random.default_rng(seed)
    count = int(np.prod(shape))
    if dtype == "i64":
        flat = rng.integers(-(2**62), 2**62, size=count, dtype=np.int64)
    else:
        flat = rng.standard_normal(count)
    t = Tensor.from_array(flat.reshape(shape) if count else flat.reshape(shape), dtype)
    back = roundtrip(t)
    assert back == t
    # header size and payload size follow from the layout alone
    buf = io.BytesIO()
    n = write_tensor(t, buf)
    itemsize = {"f32": 4, "f64": 8, "i64": 8}[dtype]
    assert n == 7 + 8 * len(shape) + count * itemsize


def test_write_bundle_and_read_back(tmp_path):
    feats = Tensor.from_array(np.arange(40, dtype=np.float32).reshape(10, 4))
    labels = Tensor.from_array(np.arange(10, dtype=np.int64))
    tensors = {"features": feats, "labels": labels}
    manifest = bundle_manifest_for(tensors, dataset_name="toy", metadata={"seed": "3"})
    path = write_bundle(manifest, tensors, tmp_path / "bundle")
    back_manifest, back = read_bundle(path)
    assert back_manifest.dataset_name == "toy"
    assert back_manifest.metadata["seed"] == "3"
    assert back["features"] == feats
    assert back["labels"] == labels


def test_bundle_label_length_mismatch(tmp_path):
    tensors = {
        "features": Tensor.from_array(np.zeros((10, 4), dtype=np.float32)),
        "labels": Tensor.from_array(np.zeros(9, dtype=np.int64)),
    }
    manifest = bundle_manifest_for(tensors)
    with pytest.raises(ConsistencyError, match="labels length 9"):
        write_bundle(manifest, tensors, tmp_path / "bad")


def test_bundle_missing_role_tensor(tmp_path):
    manifest = BundleManifest(entries={"features": "features.nct", "labels": "labels.nct"})
    tensors = {"features": Tensor.from_array(np.zeros((2, 2), dtype=np.float32))}
    with pytest.raises(ConsistencyError, match="labels"):
        write_bundle(manifest, tensors, tmp_path / "bad")


def test_bundle_dangling_file_names_role(tmp_path):
    tensors = {"features": Tensor.from_array(np.zeros((2, 2), dtype=np.float32))}
    manifest = bundle_manifest_for(tensors)
    path = write_bundle(manifest, tensors, tmp_path / "b")
    (tmp_path / "b" / "features.nct").unlink()
    with pytest.raises(TensorIOError, match="features"):
        read_bundle(path)


def test_bundle_unknown_keys_surface_in_metadata(tmp_path):
    tensors = {"features": Tensor.from_array(np.zeros((2, 2), dtype=np.float32))}
    manifest = bundle_manifest_for(tensors)
    path = write_bundle(manifest, tensors, tmp_path / "b")
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("# a comment line\nfuture_key = future_value\n")
    back_manifest, _ = read_bundle(path)
    assert back_manifest.metadata["future_key"] == "future_value"
