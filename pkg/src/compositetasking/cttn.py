"""CTTN binary tensor container and zip-based checkpoints.

A .cttn file holds one tensor: magic "CTTN", u32 version=1, u32 rank,
u32 dims[rank], then the little-endian f32 payload. Checkpoints are zip
archives mapping record names to .cttn entries plus a config.json and an
optional state.json (RNG / optimizer bookkeeping).
"""

import io
import json
import struct
import zipfile

import numpy as np

MAGIC = b"CTTN"
VERSION = 1


def write_cttn_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f4")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def read_cttn_bytes(data: bytes) -> np.ndarray:
    if data[:4] != MAGIC:
        raise ValueError("not a CTTN container (bad magic)")
    version, rank = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported CTTN version {version}")
    dims = struct.unpack_from(f"<{rank}I", data, 12)
    payload = np.frombuffer(data, dtype="<f4", offset=12 + 4 * rank)
    expected = int(np.prod(dims)) if rank else 1
    if payload.size != expected:
        raise ValueError(f"CTTN payload size {payload.size} != product of dims {dims}")
    return payload.reshape(dims).copy()


def write_cttn(path, arr: np.ndarray):
    with open(path, "wb") as f:
        f.write(write_cttn_bytes(arr))


def read_cttn(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_cttn_bytes(f.read())


def save_checkpoint(path, tensors: dict, config: dict, state: dict | None = None):
    """tensors: name -> ndarray; written in sorted name order for determinism."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("config.json", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(info, json.dumps(config, sort_keys=True, indent=1))
        if state is not None:
            info = zipfile.ZipInfo("state.json", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, json.dumps(state, sort_keys=True))
        for name in sorted(tensors):
            info = zipfile.ZipInfo(f"tensors/{name}.cttn", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, write_cttn_bytes(tensors[name]))


def load_checkpoint(path):
    tensors, state = {}, None
    with zipfile.ZipFile(path) as zf:
        config = json.loads(zf.read("config.json"))
        if "state.json" in zf.namelist():
            state = json.loads(zf.read("state.json"))
        for entry in zf.namelist():
            if entry.startswith("tensors/") and entry.endswith(".cttn"):
                name = entry[len("tensors/") : -len(".cttn")]
                tensors[name] = read_cttn_bytes(zf.read(entry))
    return tensors, config, state
