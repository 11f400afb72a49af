"""Binary checkpoint format.

Layout::

    b"LHWN"                      magic
    uint32 LE                    format version (1)
    uint64 LE                    header length in bytes
    header                       UTF-8 JSON: configs, optimiser scalars, rng state,
                                 epoch, tensor manifest (name, shape, offset)
    blobs                        little-endian float64 tensors in manifest order
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ListenerHeadModel, ModelConfig
from .training import AdamState, TrainState

MAGIC = b"LHWN"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class CheckpointError(Exception):
    pass


class NotACheckpointError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ManifestMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    model: ListenerHeadModel
    state: TrainState | None = None
    meta: dict | None = None

    @property
    def epoch(self) -> int:
        return self.state.epoch if self.state is not None else 0


def _tensors(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    m = ckpt.model
    out = [(f"param/{k}", v) for k, v in m.params.items()]
    out += [("buffer/feature_mean", m.feature_mean), ("buffer/feature_std", m.feature_std)]
    if ckpt.state is not None:
        opt = ckpt.state.optimizer
        out += [(f"adam.m/{k}", opt.m[k]) for k in m.params]
        out += [(f"adam.v/{k}", opt.v[k]) for k in m.params]
    return out


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    manifest, blobs, offset = [], [], 0
    for name, arr in _tensors(ckpt):
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "model_config": ckpt.model.config.to_dict(),
        "meta": ckpt.meta,
        "tensors": manifest,
        "blob_bytes": offset,
    }
    if ckpt.state is not None:
        opt = ckpt.state.optimizer
        header["optimizer"] = {"algorithm": opt.algorithm, "lr": opt.lr, "beta1": opt.beta1,
                               "beta2": opt.beta2, "eps": opt.eps, "step": opt.step}
        header["rng_state"] = ckpt.state.rng_state
        header["epoch"] = ckpt.state.epoch
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(blobs)


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 4 or data[:4] != MAGIC:
        raise NotACheckpointError("not a checkpoint (bad magic bytes)")
    if len(data) < _PREFIX.size:
        raise TruncatedCheckpointError("checkpoint truncated inside the fixed prefix")
    _, version, hlen = _PREFIX.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version}")
    body = _PREFIX.size + hlen
    if len(data) < body:
        raise TruncatedCheckpointError("checkpoint truncated inside the header")
    try:
        header = json.loads(data[_PREFIX.size:body].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    blob = data[body:]
    expected = header["blob_bytes"]
    if len(blob) < expected:
        raise TruncatedCheckpointError(
            f"checkpoint truncated: {len(blob)} of {expected} tensor bytes present")
    offset, tensors = 0, {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64)) * 8
        if entry["offset"] != offset:
            raise ManifestMismatchError(f"tensor {entry['name']} offset {entry['offset']} "
                                        f"!= expected {offset}")
        tensors[entry["name"]] = np.frombuffer(
            blob, dtype="<f8", count=n // 8, offset=offset).reshape(entry["shape"]).astype(np.float64)
        offset += n
    if offset != expected or len(blob) != expected:
        raise ManifestMismatchError(
            f"manifest describes {offset} bytes, header says {expected}, file holds {len(blob)}")

    config = ModelConfig.from_dict(header["model_config"])
    params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    model = ListenerHeadModel(config, params, tensors["buffer/feature_mean"],
                              tensors["buffer/feature_std"])
    state = None
    if "optimizer" in header:
        o = header["optimizer"]
        opt = AdamState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"],
                        step=o["step"], algorithm=o["algorithm"],
                        m={k: tensors[f"adam.m/{k}"] for k in params},
                        v={k: tensors[f"adam.v/{k}"] for k in params})
        state = TrainState(opt, header["rng_state"], header["epoch"])
    return Checkpoint(model, state, header.get("meta"))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write atomically so an interrupted save never clobbers the previous file."""
    path = Path(path)
    data = encode_checkpoint(ckpt)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())
