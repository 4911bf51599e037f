"""Maximum-likelihood training with warmup, Adam and mismatched negative batches.

All randomness comes from one ``numpy.random.Generator`` consumed in a
fixed order:

1. at the start of each epoch, one window offset per segment, then one
   permutation of the epoch's windows;
2. per batch, one uniform draw deciding whether it is a negative batch,
   followed (only for negative batches) by the draws of one derangement.
"""
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .features.dataset import Windows, gather_windows, window_plan


class TrainingError(ValueError):
    pass


@dataclass
class TrainConfig:
    initial_lr: float = 1e-5
    warmup_steps: int = 500
    batch_size: int = 32
    sequence_length: int = 80
    stride: int = 40
    epochs: int = 15
    negative_prob: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.negative_prob <= 1.0:
            raise TrainingError(f"negative_prob must be in [0, 1], got {self.negative_prob}")
        if self.warmup_steps < 0 or self.batch_size < 1 or self.sequence_length < 1 or self.stride < 1:
            raise TrainingError("warmup_steps, batch_size, sequence_length and stride must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise TrainingError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def warmup_lr(step, cfg):
    """Linear warmup from 0 to ``initial_lr`` over ``warmup_steps``, constant after."""
    if step < 0:
        raise TrainingError("step must be non-negative")
    if cfg.warmup_steps == 0:
        return cfg.initial_lr
    return cfg.initial_lr * min(1.0, step / cfg.warmup_steps)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params, beta1=0.9, beta2=0.999, eps=1e-8):
        params = dict(params)
        return cls({k: torch.zeros_like(p) for k, p in params.items()},
                   {k: torch.zeros_like(p) for k, p in params.items()}, 0, beta1, beta2, eps)


@torch.no_grad()
def adam_step(grads, params, state, lr):
    """One bias-corrected Adam update, applied to ``params`` in place.

    :param grads: name -> gradient tensor
    :param params: name -> parameter tensor
    """
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        p.sub_(lr * (m / c1) / ((v / c2).sqrt() + state.eps))
    return params, state


def derange(n, rng):
    """Uniformly random permutation of ``range(n)`` with no fixed points (rejection sampling)."""
    if n < 2:
        raise TrainingError(f"no derangement of {n} element(s) exists")
    while True:
        p = rng.permutation(n)
        if not np.any(p == np.arange(n)):
            return p


def make_negative_batch(batch, rng):
    """Give every item the interlocutor face and speech of another item.

    One derangement moves ``face_i`` and ``speech_i`` together, so each
    item's interlocutor streams stay a matched, contiguous pair from a
    single source window.
    """
    if len(batch) < 2:
        raise TrainingError("a negative batch needs at least 2 items")
    perm = derange(len(batch), rng)
    return Windows(batch.face_a, batch.speech_a, batch.face_i[perm], batch.speech_i[perm],
                   batch.segment, batch.start, batch.role, batch.interlocutor_source[perm])


class Trainer:
    """Owns a model, its optimizer state, the random generator and the data order.

    :param model: a :class:`~dyadflow.model.DyadFlowModel`
    :param cfg: :class:`TrainConfig`
    :param metrics_path: optional text log, one tab-separated record per batch
    """

    METRIC_FIELDS = ("step", "lr", "loss", "nll", "is_negative", "skipped")

    def __init__(self, model, cfg, metrics_path=None):
        if cfg.sequence_length < model.config.avatar_face_frames:
            raise TrainingError("sequence_length must cover the autoregressive history")
        self.model, self.cfg = model, cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.adam = AdamState.zeros(model.named_parameters(), cfg.beta1, cfg.beta2, cfg.eps)
        self.epoch = 0
        self.batch_in_epoch = 0
        self.global_batch = 0
        self.plan = None
        self.metrics_path = Path(metrics_path) if metrics_path else None

    def _new_plan(self, segments):
        offsets = self.rng.integers(0, self.cfg.stride, len(segments))
        plan = window_plan(segments, self.cfg.sequence_length, self.cfg.stride, offsets=offsets)
        if len(plan) == 0:
            raise TrainingError("no training windows: segments are shorter than the sequence length")
        return plan[self.rng.permutation(len(plan))]

    def n_batches(self):
        return math.ceil(len(self.plan) / self.cfg.batch_size)

    def _log(self, rec):
        if self.metrics_path is None:
            return
        new = not self.metrics_path.exists()
        with open(self.metrics_path, "a") as f:
            if new:
                f.write("\t".join(self.METRIC_FIELDS) + "\n")
            f.write("\t".join(repr(rec[k]) if isinstance(rec[k], float) else str(int(rec[k]))
                              for k in self.METRIC_FIELDS) + "\n")

    def train_step(self, batch):
        """Train on one batch of :class:`Windows`; returns the metrics record."""
        model = self.model
        if not model.glow.initialized:
            model.data_initialize(*batch.tensors())
        u = self.rng.random()
        is_negative = u < self.cfg.negative_prob and len(batch) >= 2
        if is_negative:
            batch = make_negative_batch(batch, self.rng)
        model.zero_grad(set_to_none=True)
        nll = model.sequence_nll(*batch.tensors())
        skipped = is_negative and not nll.item() > 0
        loss = 0.0
        lr = 0.0
        if not skipped:
            objective = -nll if is_negative else nll
            objective.backward()
            params = dict(model.named_parameters())
            grads = {k: torch.zeros_like(p) if p.grad is None else p.grad for k, p in params.items()}
            lr = warmup_lr(self.adam.step + 1, self.cfg)
            adam_step(grads, params, self.adam, lr)
            loss = objective.item()
        rec = {"step": self.global_batch, "lr": lr, "loss": loss, "nll": nll.item(),
               "is_negative": is_negative, "skipped": skipped}
        self.global_batch += 1
        self._log(rec)
        return rec

    def train_epoch(self, segments, max_batches=None):
        """Run (the rest of) one epoch over ``segments``.

        Stops early after ``max_batches`` batches, leaving the trainer
        mid-epoch so that a checkpoint can be taken and resumed.
        """
        segments = list(segments)
        if not segments:
            raise TrainingError("empty dataset")
        if self.plan is None:
            self.plan = self._new_plan(segments)
            self.batch_in_epoch = 0
        bs = self.cfg.batch_size
        records = []
        while self.batch_in_epoch < self.n_batches():
            if max_batches is not None and len(records) >= max_batches:
                break
            rows = self.plan[self.batch_in_epoch * bs:(self.batch_in_epoch + 1) * bs]
            batch = gather_windows(segments, rows, self.cfg.sequence_length)
            records.append(self.train_step(batch))
            self.batch_in_epoch += 1
        if self.batch_in_epoch >= self.n_batches():
            self.epoch += 1
            self.batch_in_epoch = 0
            self.plan = None
        return summarize(records)

    def fit(self, segments, epochs=None):
        history = []
        for _ in range(self.cfg.epochs if epochs is None else epochs):
            history.append(self.train_epoch(segments))
        return history


def summarize(records):
    pos = [r["nll"] for r in records if not r["is_negative"]]
    neg = [r["nll"] for r in records if r["is_negative"]]
    return {
        "batches": len(records),
        "positive_nll": float(np.mean(pos)) if pos else float("nan"),
        "negative_nll": float(np.mean(neg)) if neg else float("nan"),
        "negative_batches": len(neg),
        "skipped": sum(r["skipped"] for r in records),
        "records": records,
    }
