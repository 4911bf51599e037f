import numpy as np
import pytest
import torch

from dyadflow.features.dataset import SessionData, Party
from dyadflow.gradcheck import small_config, perturb
from dyadflow.model import DyadFlowModel

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model():
    """Small double-precision model moved away from its (identity) initialization."""
    model = DyadFlowModel(small_config(), seed=3, actnorm_data_init=False)
    perturb(model, np.random.default_rng(3), scale=0.2)
    return model


def random_session(rng, n_frames, session_id="s"):
    return SessionData(session_id,
                       Party(rng.standard_normal((n_frames, 56)), rng.standard_normal((n_frames, 30))),
                       Party(rng.standard_normal((n_frames, 56)), rng.standard_normal((n_frames, 30))))


@torch.no_grad()
def randomize_couplings(glow, rng, gain=0.5):
    """Replace the zero-initialized output layers of every coupling with
    uniform weights of ``gain / sqrt(fan_in)``, giving a non-trivial but
    well-conditioned flow."""
    for step in glow.steps:
        w = step.coupling.out.weight
        bound = gain / np.sqrt(w.shape[1])
        w.copy_(torch.from_numpy(rng.uniform(-bound, bound, tuple(w.shape))))
        step.coupling.out.bias.copy_(torch.from_numpy(rng.uniform(-bound, bound, w.shape[0])))


_RESULTS = pytest.StashKey()


@pytest.fixture
def report(request):
    """``report(number, title, ok, detail)`` prints one PASS/FAIL line and
    keeps it for the end-of-run summary."""
    results = request.config.stash.setdefault(_RESULTS, {})

    def _report(number, title, ok, detail):
        results[number] = (title, bool(ok), detail)
        print(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}: {detail}")
        return ok
    return _report


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok, detail = results[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}")
