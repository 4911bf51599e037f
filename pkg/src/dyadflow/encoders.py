"""Recurrent modality encoders and per-step conditioning projections."""
import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class EncoderError(ValueError):
    pass


MODALITIES = ("avatar_speech", "interlocutor_speech", "interlocutor_face")


def _uniform(rng, bound, shape):
    return nn.Parameter(torch.from_numpy(rng.uniform(-bound, bound, shape)))


class GRU(nn.Module):
    """Multi-layer GRU written out gate by gate.

    Gate layout per layer follows the usual (reset, update, candidate)
    stacking in ``w_ih``/``w_hh``::

        r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
        u = sigmoid(W_iu x + b_iu + W_hu h + b_hu)
        n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
        h' = (1 - u) * n + u * h
    """

    def __init__(self, input_size, hidden_size, num_layers=2, rng=None):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.input_size, self.hidden_size, self.num_layers = input_size, hidden_size, num_layers
        bound = 1 / math.sqrt(hidden_size)
        self.w_ih = nn.ParameterList()
        self.w_hh = nn.ParameterList()
        self.b_ih = nn.ParameterList()
        self.b_hh = nn.ParameterList()
        for layer in range(num_layers):
            n_in = input_size if layer == 0 else hidden_size
            self.w_ih.append(_uniform(rng, bound, (3 * hidden_size, n_in)))
            self.w_hh.append(_uniform(rng, bound, (3 * hidden_size, hidden_size)))
            self.b_ih.append(_uniform(rng, bound, 3 * hidden_size))
            self.b_hh.append(_uniform(rng, bound, 3 * hidden_size))

    @property
    def encoding_size(self):
        return self.hidden_size * (self.num_layers + 1)

    def forward(self, window):
        """Encode a batch of windows.

        :param window: (batch, time, features) or (time, features)
        :return: (batch, hidden_size * (num_layers + 1)): the top layer's
            output at the last time step followed by every layer's final
            hidden state
        """
        squeeze = window.dim() == 2
        if squeeze:
            window = window.unsqueeze(0)
        if window.shape[1] == 0:
            raise EncoderError("cannot encode an empty window")
        if window.shape[2] != self.input_size:
            raise EncoderError(f"window has {window.shape[2]} features, encoder expects {self.input_size}")
        seq = window
        finals = []
        for layer in range(self.num_layers):
            # input projections for all time steps at once
            gi = F.linear(seq, self.w_ih[layer], self.b_ih[layer])
            h = seq.new_zeros(seq.shape[0], self.hidden_size)
            outputs = []
            for t in range(seq.shape[1]):
                gh = F.linear(h, self.w_hh[layer], self.b_hh[layer])
                i_r, i_u, i_n = gi[:, t].chunk(3, -1)
                h_r, h_u, h_n = gh.chunk(3, -1)
                r = torch.sigmoid(i_r + h_r)
                u = torch.sigmoid(i_u + h_u)
                n = torch.tanh(i_n + r * h_n)
                h = (1 - u) * n + u * h
                outputs.append(h)
            seq = torch.stack(outputs, 1)
            finals.append(h)
        enc = torch.cat([seq[:, -1]] + finals, -1)
        return enc.squeeze(0) if squeeze else enc


def gru_encode(window, gru):
    return gru(window)


class ConditioningEncoder(nn.Module):
    """Turns modality windows plus the raw facial history into K conditioning vectors.

    Each non-ablated modality has its own GRU. The encodings and the
    flattened history are concatenated and passed through K independent
    one-layer LeakyReLU networks, one per step of flow.
    """

    def __init__(self, speech_dim, face_dim, face_history, n_steps, cond_dim,
                 gru_hidden=64, gru_layers=2, no_face=False, no_speech=False,
                 slope=0.01, rng=None):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.no_face, self.no_speech, self.slope = no_face, no_speech, slope
        self.n_steps, self.cond_dim = n_steps, cond_dim
        self.avatar_speech = GRU(speech_dim, gru_hidden, gru_layers, rng=rng)
        self.interlocutor_speech = None if no_speech else GRU(speech_dim, gru_hidden, gru_layers, rng=rng)
        self.interlocutor_face = None if no_face else GRU(face_dim, gru_hidden, gru_layers, rng=rng)
        n_enc = sum(g.encoding_size for g in self.encoders().values())
        self.history_size = face_dim * face_history
        self.input_size = n_enc + self.history_size
        bound = 1 / math.sqrt(self.input_size)
        self.proj_weight = _uniform(rng, bound, (n_steps, cond_dim, self.input_size))
        self.proj_bias = _uniform(rng, bound, (n_steps, cond_dim))

    def encoders(self):
        out = {"avatar_speech": self.avatar_speech}
        if self.interlocutor_speech is not None:
            out["interlocutor_speech"] = self.interlocutor_speech
        if self.interlocutor_face is not None:
            out["interlocutor_face"] = self.interlocutor_face
        return out

    def check_windows(self, isw, ifw):
        if self.no_speech and isw is not None:
            raise EncoderError("no-speech model was given an interlocutor speech window")
        if not self.no_speech and isw is None:
            raise EncoderError("interlocutor speech window is required")
        if self.no_face and ifw is not None:
            raise EncoderError("no-face model was given an interlocutor face window")
        if not self.no_face and ifw is None:
            raise EncoderError("interlocutor face window is required")

    def encode_context(self, asw, isw=None, ifw=None):
        """Concatenated GRU encodings, shape (batch, n_enc)."""
        self.check_windows(isw, ifw)
        parts = [self.avatar_speech(asw)]
        if isw is not None:
            parts.append(self.interlocutor_speech(isw))
        if ifw is not None:
            parts.append(self.interlocutor_face(ifw))
        return torch.cat(parts, -1)

    def project(self, context, history):
        """Map encodings + flattened history to (batch, K, cond_dim)."""
        x = torch.cat([context, history], -1)
        if x.shape[-1] != self.input_size:
            raise EncoderError(f"conditioning input has {x.shape[-1]} features, expected {self.input_size}")
        h = torch.einsum("...i,kci->...kc", x, self.proj_weight) + self.proj_bias
        return F.leaky_relu(h, self.slope)

    def forward(self, asw, isw, ifw, history):
        return self.project(self.encode_context(asw, isw, ifw), history)


def build_conditioning(asw, isw, ifw, history, encoder):
    """Functional form of :class:`ConditioningEncoder`; ``history`` is (batch, frames, face_dim)."""
    history = history.reshape(*history.shape[:-2], -1)
    return encoder(asw, isw, ifw, history)
