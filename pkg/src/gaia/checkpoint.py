"""Binary checkpoint format.

Layout: magic ``GAIA``, little-endian u32 version, u32 entry count, then
length-prefixed named float64 arrays (model parameters followed by optimizer
moments), then a UTF-8 JSON blob with the training config and counters.
Payloads are raw float64, so a reload reproduces forward passes bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .model import GaiaModel

__all__ = ["Checkpoint", "CheckpointError", "save_checkpoint", "load_checkpoint"]

MAGIC = b"GAIA"
VERSION = 1


class CheckpointError(ValueError):
    """The file is not a readable checkpoint."""


@dataclass
class Checkpoint:
    config: TrainConfig
    d_t: int
    d_s: int
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_t: int
    epoch: int

    def build_model(self) -> GaiaModel:
        model = GaiaModel(
            c=self.config.c,
            k_groups=self.config.k_groups,
            n_layers=self.config.n_layers,
            t_max=self.config.t_max,
            t_pred=self.config.t_pred,
            d_t=self.d_t,
            d_s=self.d_s,
            ablation=self.config.ablation,
            share_cau=self.config.share_cau,
            seed=self.config.seed,
        )
        model.load_state(self.params)
        return model


def _write_entry(fh, name: str, arr: np.ndarray) -> None:
    blob = name.encode("utf-8")
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    entries: list[tuple[str, np.ndarray]] = []
    for name in sorted(ckpt.params):
        entries.append((name, ckpt.params[name]))
    for name in sorted(ckpt.adam_m):
        entries.append((f"adam_m:{name}", ckpt.adam_m[name]))
    for name in sorted(ckpt.adam_v):
        entries.append((f"adam_v:{name}", ckpt.adam_v[name]))
    meta = {
        "config": ckpt.config.to_json_dict(),
        "d_t": ckpt.d_t,
        "d_s": ckpt.d_s,
        "adam_t": ckpt.adam_t,
        "epoch": ckpt.epoch,
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            _write_entry(fh, name, arr)
        fh.write(json.dumps(meta).encode("utf-8"))


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (n_entries,) = struct.unpack("<I", _read_exact(fh, 4, "entry count"))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(n_entries):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, "ndim"))
            shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim, "shape"))
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(_read_exact(fh, 8 * count, f"payload of {name}"), dtype="<f8")
            arrays[name] = data.reshape(shape).astype(np.float64)
        try:
            meta = json.loads(fh.read().decode("utf-8"))
            config = TrainConfig.from_json_dict(meta["config"])
            d_t, d_s = int(meta["d_t"]), int(meta["d_s"])
            adam_t, epoch = int(meta["adam_t"]), int(meta["epoch"])
        except (ValueError, KeyError, TypeError) as exc:
            raise CheckpointError(f"{path}: corrupt metadata block ({exc})") from exc
    params = {k: v for k, v in arrays.items() if not k.startswith("adam_")}
    adam_m = {k[len("adam_m:") :]: v for k, v in arrays.items() if k.startswith("adam_m:")}
    adam_v = {k[len("adam_v:") :]: v for k, v in arrays.items() if k.startswith("adam_v:")}
    return Checkpoint(
        config=config,
        d_t=d_t,
        d_s=d_s,
        params=params,
        adam_m=adam_m,
        adam_v=adam_v,
        adam_t=adam_t,
        epoch=epoch,
    )
