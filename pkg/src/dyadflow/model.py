"""Autoregressive, interlocutor-conditioned flow over facial feature frames."""
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn as nn

from .encoders import ConditioningEncoder
from .flow import GlowStack, NonFiniteError, standard_normal_logpdf

FACE_DIM = 56
SPEECH_DIM = 30
FPS = 25

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    face_dim: int = FACE_DIM
    speech_dim: int = SPEECH_DIM
    n_steps: int = 16
    cond_dim: int = 512
    hidden: int = 128
    # history lengths in frames
    avatar_speech_frames: int = 25
    interlocutor_speech_frames: int = 25
    interlocutor_face_frames: int = 25
    avatar_face_frames: int = 24
    gru_hidden: int = 64
    gru_layers: int = 2
    no_face: bool = False
    no_speech: bool = False
    fps: int = FPS
    s_max: float = 2.0
    leaky_slope: float = 0.01
    dtype: str = "float64"

    def __post_init__(self):
        if self.face_dim % 2:
            raise ModelError("face_dim must be even")
        if self.n_steps < 1 or self.cond_dim < 1:
            raise ModelError("n_steps and cond_dim must be positive")
        for name in ("avatar_speech_frames", "interlocutor_speech_frames",
                     "interlocutor_face_frames", "avatar_face_frames"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be at least 1")
        if self.dtype not in _DTYPES:
            raise ModelError(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def torch_dtype(self):
        return _DTYPES[self.dtype]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ModelError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class GenerationConfig:
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.temperature >= 0:
            raise ModelError(f"temperature must be >= 0, got {self.temperature}")


def history_windows(track, length):
    """Causal windows: row t holds frames t-length .. t-1, zero before the start.

    :param track: (batch, T, dim)
    :return: (batch, T, length, dim)
    """
    pad = track.new_zeros(track.shape[0], length, track.shape[2])
    padded = torch.cat([pad, track], 1)
    return padded.unfold(1, length, 1)[:, :track.shape[1]].transpose(-1, -2)


class DyadFlowModel(nn.Module):
    """Glow stack conditioned on both parties' speech, the interlocutor's face
    and the avatar's own recent frames.

    :param config: :class:`ModelConfig`
    :param seed: seed for parameter initialization
    :param actnorm_data_init: when False, actnorm layers start as the
        identity and are treated as already initialized
    """

    def __init__(self, config=None, seed=0, actnorm_data_init=True):
        super().__init__()
        self.config = config = config or ModelConfig()
        rng = np.random.default_rng(seed)
        self.encoder = ConditioningEncoder(
            config.speech_dim, config.face_dim, config.avatar_face_frames,
            config.n_steps, config.cond_dim, config.gru_hidden, config.gru_layers,
            no_face=config.no_face, no_speech=config.no_speech,
            slope=config.leaky_slope, rng=rng)
        self.glow = GlowStack(config.face_dim, config.n_steps, config.cond_dim,
                              config.hidden, config.s_max, config.leaky_slope, rng=rng)
        if not actnorm_data_init:
            self.glow.mark_initialized()
        self.to(config.torch_dtype)
        # frames whose autoregressive input came from model samples
        self.sampled_history_frames = 0

    @property
    def dtype(self):
        return self.config.torch_dtype

    def _as_tensor(self, a, dim, name):
        t = torch.as_tensor(np.asarray(a) if not torch.is_tensor(a) else a).to(self.dtype)
        if t.dim() == 2:
            t = t.unsqueeze(0)
        if t.dim() != 3 or t.shape[-1] != dim:
            raise ModelError(f"{name} must have shape ([batch,] T, {dim}), got {tuple(t.shape)}")
        if not torch.isfinite(t).all():
            raise ModelError(f"{name} contains non-finite values")
        return t

    def _inputs(self, face_a, speech_a, speech_i, face_i):
        c = self.config
        speech_a = self._as_tensor(speech_a, c.speech_dim, "avatar speech")
        speech_i = self._as_tensor(speech_i, c.speech_dim, "interlocutor speech")
        face_i = self._as_tensor(face_i, c.face_dim, "interlocutor face")
        tracks = [speech_a, speech_i, face_i]
        if face_a is not None:
            face_a = self._as_tensor(face_a, c.face_dim, "avatar face")
            tracks.append(face_a)
        if len({t.shape[:2] for t in tracks}) != 1:
            raise ModelError("all tracks must share batch size and length: "
                             + ", ".join(str(tuple(t.shape[:2])) for t in tracks))
        if speech_a.shape[1] < 1:
            raise ModelError("tracks must have at least one frame")
        return face_a, speech_a, speech_i, face_i

    def context(self, speech_a, speech_i, face_i):
        """GRU encodings for every frame, (batch, T, n_enc). Inputs are tensors."""
        c = self.config
        b, T = speech_a.shape[:2]

        def windows(track, length):
            return history_windows(track, length).reshape(b * T, length, -1)

        asw = windows(speech_a, c.avatar_speech_frames)
        isw = None if c.no_speech else windows(speech_i, c.interlocutor_speech_frames)
        ifw = None if c.no_face else windows(face_i, c.interlocutor_face_frames)
        return self.encoder.encode_context(asw, isw, ifw).reshape(b, T, -1)

    def conditioning(self, face_a, speech_a, speech_i, face_i):
        """Teacher-forced per-step conditioning, (batch, T, K, cond_dim)."""
        return self._conditioning(*self._inputs(face_a, speech_a, speech_i, face_i))

    def _conditioning(self, face_a, speech_a, speech_i, face_i):
        ctx = self.context(speech_a, speech_i, face_i)
        hist = history_windows(face_a, self.config.avatar_face_frames).flatten(2)
        return self.encoder.project(ctx, hist)

    def log_prob(self, face_a, speech_a, speech_i, face_i):
        """Per-frame log density of the avatar track, shape (batch, T), in nats."""
        face_a, speech_a, speech_i, face_i = self._inputs(face_a, speech_a, speech_i, face_i)
        conds = self._conditioning(face_a, speech_a, speech_i, face_i)
        b, T = face_a.shape[:2]
        lp = self.glow.log_prob(face_a.reshape(b * T, -1), conds.reshape(b * T, self.config.n_steps, -1))
        return lp.reshape(b, T)

    def sequence_nll(self, face_a, speech_a, speech_i, face_i):
        """Mean negative log-likelihood per frame (a scalar tensor)."""
        return -self.log_prob(face_a, speech_a, speech_i, face_i).mean()

    @torch.no_grad()
    def data_initialize(self, face_a, speech_a, speech_i, face_i):
        face_a, speech_a, speech_i, face_i = self._inputs(face_a, speech_a, speech_i, face_i)
        conds = self._conditioning(face_a, speech_a, speech_i, face_i)
        b, T = face_a.shape[:2]
        self.glow.data_initialize(face_a.reshape(b * T, -1), conds.reshape(b * T, self.config.n_steps, -1))

    @torch.no_grad()
    def generate(self, speech_a, speech_i, face_i, gen=None, init_frames=None, return_log_prob=False):
        """Sample an avatar facial track frame by frame.

        :param speech_a, speech_i, face_i: aligned (T, dim) conditioning tracks
        :param gen: :class:`GenerationConfig` (temperature and seed)
        :param init_frames: optional (n, face_dim) real frames seeding the
            autoregressive history instead of zeros; they are copied to the
            first n output frames
        :return: (T, face_dim) array, plus per-frame log densities if requested
        """
        gen = gen or GenerationConfig()
        c = self.config
        _, speech_a, speech_i, face_i = self._inputs(None, speech_a, speech_i, face_i)
        if speech_a.shape[0] != 1:
            raise ModelError("generate takes a single sequence")
        T = speech_a.shape[1]
        ctx = self.context(speech_a, speech_i, face_i)[0]
        rng = np.random.default_rng(gen.seed)
        noise = torch.from_numpy(rng.standard_normal((T, c.face_dim))).to(self.dtype) * gen.temperature

        out = torch.zeros(T, c.face_dim, dtype=self.dtype)
        log_probs = torch.zeros(T, dtype=self.dtype)
        start = 0
        if init_frames is not None:
            init = self._as_tensor(init_frames, c.face_dim, "init frames")[0]
            start = min(init.shape[0], T)
            out[:start] = init[:start]
            log_probs[:start] = float("nan")
        hist_len = c.avatar_face_frames
        for t in range(start, T):
            lo = max(0, t - hist_len)
            hist = torch.zeros(hist_len, c.face_dim, dtype=self.dtype)
            if t > lo:
                hist[hist_len - (t - lo):] = out[lo:t]
                self.sampled_history_frames += int(t > start)
            conds = self.encoder.project(ctx[t:t + 1], hist.reshape(1, -1))
            z = noise[t:t + 1]
            try:
                x, logdet_inv = self.glow.inverse(z, conds)
            except NonFiniteError as e:
                # a sampled history far outside the training data can blow up the inverse
                raise NonFiniteError(e.step, e.where, frame=t) from None
            out[t] = x[0]
            log_probs[t] = (standard_normal_logpdf(z) - logdet_inv)[0]
        if return_log_prob:
            return out.numpy(), log_probs.numpy()
        return out.numpy()


@torch.no_grad()
def sequence_nll(face_a, speech_a, speech_i, face_i, model):
    return model.sequence_nll(face_a, speech_a, speech_i, face_i).item()


def generate(speech_a, speech_i, face_i, model, gen=None, **kw):
    return model.generate(speech_a, speech_i, face_i, gen, **kw)
