"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic "DYADFLOW" | u32 version | 32-byte sha256 of the config block
    config block        u32 length + JSON {"model": ..., "train": ...}
    parameters          u32 count, then named arrays
    optimizer           u64 step, u32 count + named first moments, u32 count + named second moments
    rng state           u32 length + JSON of the bit generator state
    trainer counters    u32 length + JSON, then one named array (the epoch's window plan)
    trailer             32-byte sha256 of everything before it

A named array is u16 name length, utf-8 name, u8 ndim, ndim x u64 dims,
then the values as little-endian float64.
"""
import hashlib
import io
import json
import struct
from dataclasses import dataclass

import numpy as np
import torch

from .model import DyadFlowModel, ModelConfig
from .train import AdamState, TrainConfig, Trainer

MAGIC = b"DYADFLOW"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_config: dict
    train_config: dict
    params: dict
    adam_step: int
    adam_m: dict
    adam_v: dict
    rng_state: dict
    counters: dict
    plan: np.ndarray


def _json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _write_blob(f, data):
    f.write(struct.pack("<I", len(data)))
    f.write(data)


def _write_array(f, name, arr):
    # np.ascontiguousarray would promote 0-d arrays to 1-d
    arr = np.array(arr, dtype="<f8", order="C")
    raw = name.encode()
    f.write(struct.pack("<H", len(raw)))
    f.write(raw)
    f.write(struct.pack("<B", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    f.write(arr.tobytes())


def _write_arrays(f, arrays):
    f.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        _write_array(f, name, arr)


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self):
        (n,) = self.unpack("<I")
        return self.take(n)

    def array(self):
        (n,) = self.unpack("<H")
        name = self.take(n).decode()
        (ndim,) = self.unpack("<B")
        shape = self.unpack(f"<{ndim}Q") if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(self.take(8 * count), dtype="<f8").reshape(shape).copy()
        return name, arr

    def arrays(self):
        (n,) = self.unpack("<I")
        return dict(self.array() for _ in range(n))


def encode(ckpt):
    config = _json({"model": ckpt.model_config, "train": ckpt.train_config})
    f = io.BytesIO()
    f.write(MAGIC)
    f.write(struct.pack("<I", VERSION))
    f.write(hashlib.sha256(config).digest())
    _write_blob(f, config)
    _write_arrays(f, ckpt.params)
    f.write(struct.pack("<Q", ckpt.adam_step))
    _write_arrays(f, ckpt.adam_m)
    _write_arrays(f, ckpt.adam_v)
    _write_blob(f, _json(ckpt.rng_state))
    _write_blob(f, _json(ckpt.counters))
    _write_array(f, "plan", ckpt.plan)
    body = f.getvalue()
    return body + hashlib.sha256(body).digest()


def decode(data):
    if len(data) < len(MAGIC) + 4 + 64:
        raise CheckpointError("checkpoint is truncated")
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    (version,) = struct.unpack("<I", data[len(MAGIC):len(MAGIC) + 4])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    body, trailer = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != trailer:
        raise CheckpointError("checkpoint is corrupted or truncated (checksum mismatch)")
    r = _Reader(body)
    r.take(len(MAGIC) + 4)
    digest = r.take(32)
    config = r.blob()
    if hashlib.sha256(config).digest() != digest:
        raise CheckpointError("config digest mismatch")
    cfg = json.loads(config)
    params = r.arrays()
    (step,) = r.unpack("<Q")
    m, v = r.arrays(), r.arrays()
    rng_state = json.loads(r.blob())
    counters = json.loads(r.blob())
    _, plan = r.array()
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(cfg["model"], cfg["train"], params, step, m, v, rng_state, counters, plan)


def _np(t):
    return t.detach().cpu().to(torch.float64).numpy()


def snapshot(trainer):
    model = trainer.model
    plan = trainer.plan if trainer.plan is not None else np.zeros((0, 3))
    return Checkpoint(
        model_config=model.config.to_dict(),
        train_config=trainer.cfg.to_dict(),
        params={k: _np(t) for k, t in model.state_dict().items()},
        adam_step=trainer.adam.step,
        adam_m={k: _np(t) for k, t in trainer.adam.m.items()},
        adam_v={k: _np(t) for k, t in trainer.adam.v.items()},
        rng_state=trainer.rng.bit_generator.state,
        counters={"epoch": trainer.epoch, "batch_in_epoch": trainer.batch_in_epoch,
                  "global_batch": trainer.global_batch, "has_plan": trainer.plan is not None},
        plan=plan)


def save_checkpoint(path, trainer):
    data = encode(snapshot(trainer))
    with open(path, "wb") as f:
        f.write(data)


def read_checkpoint(path):
    with open(path, "rb") as f:
        return decode(f.read())


def _restore(trainer, ckpt):
    model = trainer.model
    if ckpt.model_config != model.config.to_dict():
        raise CheckpointError("checkpoint model config does not match this model")
    state = model.state_dict()
    if set(ckpt.params) != set(state):
        raise CheckpointError("checkpoint parameter names do not match the model")
    for k, t in state.items():
        if tuple(ckpt.params[k].shape) != tuple(t.shape):
            raise CheckpointError(f"shape mismatch for {k}")
    names = dict(model.named_parameters())
    if set(ckpt.adam_m) != set(names) or set(ckpt.adam_v) != set(names):
        raise CheckpointError("optimizer state does not match the model parameters")
    # everything validated; only now touch the live objects
    model.load_state_dict({k: torch.from_numpy(ckpt.params[k]).to(t.dtype) for k, t in state.items()})
    dtype = model.dtype
    trainer.adam = AdamState({k: torch.from_numpy(a).to(dtype) for k, a in ckpt.adam_m.items()},
                             {k: torch.from_numpy(a).to(dtype) for k, a in ckpt.adam_v.items()},
                             ckpt.adam_step, trainer.cfg.beta1, trainer.cfg.beta2, trainer.cfg.eps)
    trainer.rng.bit_generator.state = ckpt.rng_state
    trainer.epoch = ckpt.counters["epoch"]
    trainer.batch_in_epoch = ckpt.counters["batch_in_epoch"]
    trainer.global_batch = ckpt.counters["global_batch"]
    trainer.plan = ckpt.plan.astype(np.int64) if ckpt.counters["has_plan"] else None
    return trainer


def load_checkpoint(path, trainer=None, metrics_path=None):
    """Restore into ``trainer`` (left untouched on any error), or build a new one."""
    ckpt = read_checkpoint(path)
    if trainer is None:
        model = DyadFlowModel(ModelConfig.from_dict(ckpt.model_config))
        trainer = Trainer(model, TrainConfig.from_dict(ckpt.train_config), metrics_path)
    return _restore(trainer, ckpt)


def load_model(path):
    return load_checkpoint(path).model
