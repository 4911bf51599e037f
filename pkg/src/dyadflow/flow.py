"""Single-level conditional Glow over per-frame feature vectors.

A step of flow is actnorm -> LU-parameterized invertible linear map ->
conditional affine coupling. Every layer returns ``(output, logdet)`` where
``logdet`` is the per-sample log absolute Jacobian determinant of the map
that was applied (forward or inverse).
"""
import math
from typing import NamedTuple

import numpy as np
import scipy.linalg
import torch
import torch.nn as nn
import torch.nn.functional as F

LOG_2PI = math.log(2 * math.pi)


class FlowError(ValueError):
    pass


class ActnormInitError(FlowError):
    def __init__(self, channel):
        super().__init__(f"actnorm initialization failed: channel {channel} has zero variance")
        self.channel = channel


class NonFiniteError(FloatingPointError):
    def __init__(self, step, where="output", frame=None):
        at = "" if frame is None else f" at frame {frame}"
        super().__init__(f"non-finite {where} in flow step {step}{at}")
        self.step, self.where, self.frame = step, where, frame


class FlowResult(NamedTuple):
    output: torch.Tensor
    logdet: torch.Tensor


def _batched(x):
    return x.unsqueeze(0) if x.dim() == 1 else x


class ActNorm(nn.Module):
    """Per-channel affine map ``y = scale * x + bias``.

    The scale is stored as its log so it can never reach zero. Until
    :meth:`initialize` runs (or ``mark_initialized`` is called) the layer
    refuses to transform anything.
    """

    def __init__(self, d):
        super().__init__()
        self.log_scale = nn.Parameter(torch.zeros(d))
        self.bias = nn.Parameter(torch.zeros(d))
        self.register_buffer("initialized", torch.tensor(False))

    @property
    def scale(self):
        return self.log_scale.exp()

    @torch.no_grad()
    def initialize(self, x):
        x = _batched(x)
        if x.shape[0] < 2:
            raise FlowError("actnorm initialization needs at least 2 samples")
        mean = x.mean(0)
        std = x.std(0, unbiased=False)
        bad = torch.nonzero(std <= 0).flatten()
        if len(bad):
            raise ActnormInitError(int(bad[0]))
        self.log_scale.copy_(-std.log())
        self.bias.copy_(-mean / std)
        self.initialized.fill_(True)

    @torch.no_grad()
    def mark_initialized(self):
        self.initialized.fill_(True)

    def forward(self, x, reverse=False):
        if not bool(self.initialized):
            raise FlowError("actnorm used before initialization")
        x = _batched(x)
        logdet = self.log_scale.sum().expand(x.shape[0])
        if not reverse:
            return FlowResult(x * self.log_scale.exp() + self.bias, logdet)
        return FlowResult((x - self.bias) * torch.exp(-self.log_scale), -logdet)


class InvertibleLinear(nn.Module):
    """Channel mixing ``y = W x`` with ``W = P L (U + diag(sign * exp(log_diag)))``.

    ``P`` and ``sign`` are fixed buffers; the strictly triangular parts of
    ``lower`` and ``upper`` together with ``log_diag`` are trained.
    """

    def __init__(self, d, rng=None, identity=False):
        super().__init__()
        if identity:
            p, lo, up = np.eye(d), np.eye(d), np.eye(d)
        else:
            rng = np.random.default_rng() if rng is None else rng
            q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            p, lo, up = scipy.linalg.lu(q)
        diag = np.diag(up)
        self.register_buffer("perm", torch.from_numpy(np.argmax(p, axis=1)))
        self.register_buffer("sign", torch.from_numpy(np.sign(diag)))
        self.register_buffer("lower_mask", torch.tril(torch.ones(d, d), -1).double())
        self.register_buffer("eye", torch.eye(d).double())
        self.lower = nn.Parameter(torch.from_numpy(np.tril(lo, -1)))
        self.upper = nn.Parameter(torch.from_numpy(np.triu(up, 1)))
        self.log_diag = nn.Parameter(torch.from_numpy(np.log(np.abs(diag))))

    def factors(self):
        lower = self.lower * self.lower_mask + self.eye
        upper = self.upper * self.lower_mask.T + torch.diag(self.sign * self.log_diag.exp())
        return lower, upper

    def weight(self):
        lower, upper = self.factors()
        return (lower @ upper)[self.perm]

    def forward(self, x, reverse=False):
        x = _batched(x)
        lower, upper = self.factors()
        logdet = self.log_diag.sum().expand(x.shape[0])
        if not reverse:
            # row i of W is row perm[i] of L U
            return FlowResult((x @ upper.T @ lower.T)[:, self.perm], logdet)
        y = x[:, torch.argsort(self.perm)].T
        v = torch.linalg.solve_triangular(lower, y, upper=False, unitriangular=True)
        out = torch.linalg.solve_triangular(upper, v, upper=True)
        return FlowResult(out.T, -logdet)


class AffineCoupling(nn.Module):
    """Affine coupling conditioned on ``c``.

    The first half of the channels passes through unchanged and, together
    with ``c``, drives a two-layer network emitting log-scales and
    translations for the second half. Log-scales are squashed into
    ``[-s_max, s_max]`` with a tanh.
    """

    def __init__(self, d, cond_dim, hidden=128, s_max=2.0, slope=0.01, rng=None):
        super().__init__()
        if d % 2:
            raise FlowError(f"coupling needs an even channel count, got {d}")
        self.d, self.cond_dim, self.s_max, self.slope = d, cond_dim, s_max, slope
        half = d // 2
        self.hidden = nn.Linear(half + cond_dim, hidden)
        self.out = nn.Linear(hidden, d)
        rng = np.random.default_rng() if rng is None else rng
        bound = 1 / math.sqrt(half + cond_dim)
        with torch.no_grad():
            self.hidden.weight.copy_(torch.from_numpy(rng.uniform(-bound, bound, (hidden, half + cond_dim))))
            self.hidden.bias.copy_(torch.from_numpy(rng.uniform(-bound, bound, hidden)))
            self.out.weight.zero_()
            self.out.bias.zero_()

    def params(self, x1, c):
        if c.shape[-1] != self.cond_dim:
            raise FlowError(f"conditioning has {c.shape[-1]} features, coupling expects {self.cond_dim}")
        h = F.leaky_relu(self.hidden(torch.cat([x1, c], -1)), self.slope)
        raw_s, t = self.out(h).chunk(2, -1)
        return self.s_max * torch.tanh(raw_s), t

    def forward(self, x, c, reverse=False):
        x, c = _batched(x), _batched(c)
        x1, x2 = x.chunk(2, -1)
        log_s, t = self.params(x1, c)
        logdet = log_s.sum(-1)
        if not reverse:
            return FlowResult(torch.cat([x1, x2 * log_s.exp() + t], -1), logdet)
        return FlowResult(torch.cat([x1, (x2 - t) * torch.exp(-log_s)], -1), -logdet)


class FlowStep(nn.Module):
    def __init__(self, d, cond_dim, hidden=128, s_max=2.0, slope=0.01, rng=None, identity_linear=False):
        super().__init__()
        self.actnorm = ActNorm(d)
        self.linear = InvertibleLinear(d, rng=rng, identity=identity_linear)
        self.coupling = AffineCoupling(d, cond_dim, hidden, s_max, slope, rng=rng)

    def forward(self, x, c, reverse=False):
        if not reverse:
            x, ld1 = self.actnorm(x)
            x, ld2 = self.linear(x)
            x, ld3 = self.coupling(x, c)
        else:
            x, ld3 = self.coupling(x, c, reverse=True)
            x, ld2 = self.linear(x, reverse=True)
            x, ld1 = self.actnorm(x, reverse=True)
        return FlowResult(x, ld1 + ld2 + ld3)


class GlowStack(nn.Module):
    """K steps of flow, one conditioning vector per step, no multi-scale split.

    :param d: channel count (even)
    :param n_steps: number of steps K
    :param cond_dim: size of each per-step conditioning vector
    :param hidden: width of the coupling networks
    """

    def __init__(self, d, n_steps, cond_dim, hidden=128, s_max=2.0, slope=0.01,
                 rng=None, identity_linear=False, check_finite=True, dtype=torch.float64):
        super().__init__()
        if n_steps < 1:
            raise FlowError("need at least one step of flow")
        rng = np.random.default_rng() if rng is None else rng
        self.d, self.n_steps, self.cond_dim = d, n_steps, cond_dim
        self.check_finite = check_finite
        self.steps = nn.ModuleList(
            FlowStep(d, cond_dim, hidden, s_max, slope, rng=rng, identity_linear=identity_linear)
            for _ in range(n_steps))
        self.to(dtype)

    def _split_conds(self, conds, batch):
        # conds: (K, cond_dim), (batch, K, cond_dim) or a list of K tensors
        if isinstance(conds, (list, tuple)):
            conds = torch.stack([_batched(c) for c in conds], -2)
        if conds.dim() == 2:
            conds = conds.unsqueeze(0)
        if conds.shape[-2] != self.n_steps:
            raise FlowError(f"got {conds.shape[-2]} conditioning vectors for {self.n_steps} steps")
        return conds.expand(batch, -1, -1)

    def forward(self, x, conds, reverse=False):
        x = _batched(x)
        conds = self._split_conds(conds, x.shape[0])
        logdet = x.new_zeros(x.shape[0])
        order = range(self.n_steps)
        for k in (reversed(order) if reverse else order):
            x, ld = self.steps[k](x, conds[:, k], reverse=reverse)
            if self.check_finite and not (torch.isfinite(x).all() and torch.isfinite(ld).all()):
                raise NonFiniteError(k)
            logdet = logdet + ld
        return FlowResult(x, logdet)

    def inverse(self, z, conds):
        return self(z, conds, reverse=True)

    @property
    def initialized(self):
        return all(bool(s.actnorm.initialized) for s in self.steps)

    @torch.no_grad()
    def data_initialize(self, x, conds):
        """Initialize every uninitialized actnorm on the activations reaching it."""
        x = _batched(x)
        conds = self._split_conds(conds, x.shape[0])
        for k, step in enumerate(self.steps):
            if not bool(step.actnorm.initialized):
                step.actnorm.initialize(x)
            x, _ = step(x, conds[:, k])

    def mark_initialized(self):
        for step in self.steps:
            step.actnorm.mark_initialized()

    def log_prob(self, x, conds):
        z, logdet = self(x, conds)
        return standard_normal_logpdf(z) + logdet


def standard_normal_logpdf(z):
    return -0.5 * (z ** 2).sum(-1) - 0.5 * z.shape[-1] * LOG_2PI


def frame_log_density(x, conds, glow):
    return glow.log_prob(x, conds)


def loss_and_gradients(module, nll_fn):
    """Evaluate ``nll_fn()`` and backpropagate it.

    Returns the NLL as a float and a dict of gradients keyed by parameter
    name. Parameters the loss does not reach get an explicit zero gradient.
    """
    module.zero_grad(set_to_none=True)
    nll = nll_fn()
    nll.backward()
    grads = {}
    for name, p in module.named_parameters():
        grads[name] = torch.zeros_like(p) if p.grad is None else p.grad.detach().clone()
    return nll.item(), grads


def flow_nll_and_gradients(x, conds, glow: GlowStack):
    return loss_and_gradients(glow, lambda: -glow.log_prob(x, conds).mean())
