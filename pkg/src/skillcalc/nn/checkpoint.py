"""Self-describing, byte-deterministic checkpoint files.

Layout::

    b"SKCKPT" | u16 version | u64 header length | JSON header | raw arrays

The header lists every array (name, dtype, shape, offset, nbytes), the
substrate config, Adam step count, RNG state and free-form metadata.  Arrays
are little-endian, row-major.  Nothing time- or host-dependent is written,
so saving the same store twice gives identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Union

import numpy as np
import torch

from .params import ParamStore, SubstrateConfig

MAGIC = b"SKCKPT"
VERSION = 1


class CheckpointVersionMismatch(ValueError):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps_checkpoint(store: ParamStore) -> bytes:
    arrays = store.state_arrays()
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name]).astype(arrays[name].dtype.newbyteorder("<"))
        raw = arr.tobytes(order="C")
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "version": VERSION,
        "config": store.config.to_dict(),
        "adam_t": store.adam_t,
        "frozen": store.frozen,
        "rng": _jsonable(store.rng.bit_generator.state),
        "meta": _jsonable(store.meta),
        "param_order": list(store.params),
        "arrays": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<HQ", VERSION, len(head)) + head + b"".join(blobs)


def save_checkpoint(store: ParamStore, path: Union[str, Path]) -> None:
    data = dumps_checkpoint(store)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def loads_checkpoint(data: bytes) -> ParamStore:
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointVersionMismatch("not a checkpoint file")
    version, head_len = struct.unpack_from("<HQ", data, len(MAGIC))
    if version != VERSION:
        raise CheckpointVersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    start = len(MAGIC) + struct.calcsize("<HQ")
    header = json.loads(data[start:start + head_len].decode("utf-8"))
    body = memoryview(data)[start + head_len:]

    store = ParamStore(SubstrateConfig(**header["config"]), rng=np.random.default_rng())
    store.rng.bit_generator.state = header["rng"]
    arrays = {}
    for e in header["arrays"]:
        raw = body[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
    for name in header["param_order"]:
        store.set(name, arrays[name])
        store.adam_m[name].copy_(torch.from_numpy(arrays["adam.m/" + name].copy()))
        store.adam_v[name].copy_(torch.from_numpy(arrays["adam.v/" + name].copy()))
    store.adam_t = header["adam_t"]
    store.meta = header["meta"]
    if header["frozen"]:
        store.freeze()
    return store


def load_checkpoint(path: Union[str, Path]) -> ParamStore:
    return loads_checkpoint(Path(path).read_bytes())
