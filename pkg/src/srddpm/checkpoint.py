"""Versioned binary checkpoints.

Byte layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"SRDDPMCK"
    8       4     uint32 format version (currently 1)
    12      8     uint64 header length N in bytes
    20      N     header: UTF-8 JSON object, keys sorted
    20+N    ...   payload: raw array bytes, concatenated

The header holds ``"unet_config"`` (the U-Net configuration echo),
``"meta"`` (free-form JSON: epoch, loss history, optimizer scalars, ...) and
``"arrays"``, a list of ``{"name", "dtype", "shape", "offset", "nbytes"}``
records. ``offset`` counts from the start of the payload and ``dtype`` is a
numpy type string such as ``"<f4"``. Array names:

* ``param/<state_dict key>`` - model parameters and buffers
* ``optim/<param index>/<state key>`` - AdamW moment estimates
* ``rng/generator`` - ``uint8`` state of the training generator

Readers must reject an unknown magic or a version newer than their own.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .denoiser import AttentionUNet, UNetConfig, build_unet

MAGIC = b"SRDDPMCK"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    unet_config: UNetConfig
    arrays: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def params(self) -> dict[str, torch.Tensor]:
        return {
            k[len("param/") :]: torch.from_numpy(v.copy())
            for k, v in self.arrays.items()
            if k.startswith("param/")
        }

    def build_model(self) -> AttentionUNet:
        params = self.params()
        dtype = next(iter(params.values())).dtype if params else torch.float32
        net = build_unet(self.unet_config, dtype=dtype)
        net.load_state_dict(params)
        return net


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    records, chunks, offset = [], [], 0
    for name in sorted(ckpt.arrays):
        a = np.ascontiguousarray(ckpt.arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        records.append(
            {"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"unet_config": ckpt.unet_config.to_dict(), "meta": ckpt.meta, "arrays": records},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)
    tmp.replace(path)


def read_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
    if version > VERSION:
        raise CheckpointError(f"{path}: format version {version} is newer than supported ({VERSION})")
    start = _PREFIX.size
    try:
        header = json.loads(data[start : start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    payload = memoryview(data)[start + hlen :]
    arrays = {}
    for rec in header["arrays"]:
        end = rec["offset"] + rec["nbytes"]
        if end > len(payload):
            raise CheckpointError(f"{path}: array {rec['name']!r} runs past end of file")
        buf = payload[rec["offset"] : end]
        arrays[rec["name"]] = np.frombuffer(buf, dtype=np.dtype(rec["dtype"])).reshape(rec["shape"]).copy()
    cfg = header["unet_config"]
    return Checkpoint(UNetConfig(**cfg), arrays, header.get("meta", {}))


def model_arrays(model: torch.nn.Module) -> dict[str, np.ndarray]:
    return {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}


def optimizer_arrays(opt: torch.optim.Optimizer) -> tuple[dict[str, np.ndarray], dict]:
    """Split optimizer state into tensor arrays and JSON-able scalars."""
    sd = opt.state_dict()
    arrays, scalars = {}, {}
    for idx, st in sd["state"].items():
        for key, val in st.items():
            if torch.is_tensor(val) and val.ndim > 0:
                arrays[f"optim/{idx}/{key}"] = val.detach().cpu().numpy()
            else:
                scalars[f"{idx}/{key}"] = float(val)
    return arrays, {"scalars": scalars, "param_groups": sd["param_groups"]}


def restore_optimizer(opt: torch.optim.Optimizer, ckpt: Checkpoint) -> None:
    info = ckpt.meta.get("optimizer")
    if info is None:
        raise CheckpointError("checkpoint has no optimizer state")
    state: dict[int, dict] = {}
    for name, arr in ckpt.arrays.items():
        if name.startswith("optim/"):
            _, idx, key = name.split("/", 2)
            state.setdefault(int(idx), {})[key] = torch.from_numpy(arr.copy())
    for name, val in info["scalars"].items():
        idx, key = name.split("/", 1)
        state.setdefault(int(idx), {})[key] = torch.tensor(val, dtype=torch.float32)
    opt.load_state_dict({"state": state, "param_groups": info["param_groups"]})
