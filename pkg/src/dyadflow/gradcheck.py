"""Central finite-difference verification of the model's analytic gradients."""
from dataclasses import dataclass

import numpy as np
import torch

from .model import DyadFlowModel, ModelConfig


def small_config(**kw):
    base = dict(face_dim=6, n_steps=2, cond_dim=8, hidden=16, gru_hidden=8, gru_layers=2,
                avatar_speech_frames=4, interlocutor_speech_frames=4,
                interlocutor_face_frames=4, avatar_face_frames=3, dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


@dataclass
class ParamCheck:
    name: str
    n_entries: int
    max_rel_error: float
    max_abs_error: float


def relative_error(a, b, floor=1e-5):
    """``|a - b| / max(|a|, |b|, floor)``.

    In double precision with a step of 1e-5, the difference quotient of an
    O(10) loss carries round-off of order 1e-10 to 1e-9. A relative
    tolerance of 1e-4 is therefore unresolvable for gradients below about
    1e-5; there the check becomes ``|a - b| < tol * floor`` instead.
    """
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@torch.no_grad()
def perturb(model, rng, scale=0.1):
    """Move every parameter away from its initial value, so that
    zero-initialized layers stop masking the gradients behind them."""
    for p in model.parameters():
        p.add_(torch.from_numpy(rng.normal(0.0, scale, tuple(p.shape))).to(p.dtype))


def check_gradients(loss_fn, module, eps=1e-5, params=None):
    """Compare autograd gradients of ``loss_fn()`` with central differences.

    Every scalar entry of every parameter is perturbed by ``+-eps``.
    """
    named = dict(module.named_parameters())
    if params is not None:
        named = {k: named[k] for k in params}
    module.zero_grad(set_to_none=True)
    loss_fn().backward()
    analytic = {k: (torch.zeros_like(p) if p.grad is None else p.grad).detach().clone().numpy()
                for k, p in named.items()}
    results = []
    with torch.no_grad():
        for name, p in named.items():
            flat = p.view(-1)
            numeric = np.zeros(flat.numel())
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                hi = flat[i].item()
                up = loss_fn().item()
                flat[i] = orig - eps
                lo = flat[i].item()
                down = loss_fn().item()
                flat[i] = orig
                # divide by the step actually taken after rounding
                numeric[i] = (up - down) / (hi - lo)
            a = analytic[name].reshape(-1)
            rel = relative_error(a, numeric)
            results.append(ParamCheck(name, flat.numel(), float(rel.max()), float(np.abs(a - numeric).max())))
    return results


def model_gradcheck(config=None, seed=0, batch=2, frames=6, eps=1e-5):
    """Gradient check of the mean sequence NLL for a small random model on random data."""
    config = config or small_config()
    rng = np.random.default_rng(seed)
    model = DyadFlowModel(config, seed=seed, actnorm_data_init=False)
    perturb(model, rng)
    fa = rng.standard_normal((batch, frames, config.face_dim))
    sa = rng.standard_normal((batch, frames, config.speech_dim))
    si = rng.standard_normal((batch, frames, config.speech_dim))
    fi = rng.standard_normal((batch, frames, config.face_dim))
    return check_gradients(lambda: model.sequence_nll(fa, sa, si, fi), model, eps)
