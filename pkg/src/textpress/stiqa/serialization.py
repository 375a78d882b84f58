"""Single-file model format.

Layout: ``b"STIQA"``, a version byte, a u32 (big-endian) header length, a UTF-8
JSON header (config, metadata, and a name/shape/offset table), then every
parameter as little-endian float32, concatenated.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .model import StiqaConfig, StiqaModel

MAGIC = b"STIQA"
FORMAT_VERSION = 1


def save_model(model: StiqaModel, path) -> None:
    tensors = []
    table = []
    offset = 0
    for name, t in model.state_dict().items():
        arr = t.detach().cpu().numpy().astype("<f4")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        tensors.append(arr.ravel())
    header = json.dumps({
        "config": model.config.to_dict(),
        "meta": model.meta,
        "params": table,
        "count": offset,
    }).encode()
    flat = np.concatenate(tensors) if tensors else np.zeros(0, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC + bytes([FORMAT_VERSION]) + struct.pack(">I", len(header)))
        fh.write(header)
        fh.write(flat.tobytes())


def load_model(path) -> StiqaModel:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a STIQA model file")
    version = data[len(MAGIC)]
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    pos = len(MAGIC) + 1
    (hlen,) = struct.unpack_from(">I", data, pos)
    pos += 4
    header = json.loads(data[pos:pos + hlen].decode())
    pos += hlen
    flat = np.frombuffer(data, dtype="<f4", offset=pos)
    if flat.size != header["count"]:
        raise ValueError(f"{path}: expected {header['count']} parameters, found {flat.size}")
    model = StiqaModel(StiqaConfig.from_dict(header["config"]))
    state = {}
    for entry in header["params"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = flat[entry["offset"]:entry["offset"] + n].reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    model.meta = header.get("meta", {})
    model.eval()
    return model
