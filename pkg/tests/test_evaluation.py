import hashlib

import numpy as np
import pytest
import torch

from dyadflow.evaluation import CONDITIONS, EvaluationError, mismatch_table, sequence_log_likelihoods
from dyadflow.features.dataset import window_sessions
from dyadflow.model import DyadFlowModel

from test_train import tiny_config, tiny_corpus


@pytest.fixture(scope="module")
def windows():
    return window_sessions(tiny_corpus(n=2, frames=100), 20, 20)


def digest(model):
    h = hashlib.sha256()
    for k, v in model.state_dict().items():
        h.update(k.encode() + v.numpy().tobytes())
    return h.hexdigest()


def test_fresh_model_ignores_conditioning(windows):
    # zero-initialized couplings: the density cannot depend on any conditioning stream
    model = DyadFlowModel(tiny_config(), seed=0, actnorm_data_init=False)
    table = mismatch_table({"m": model}, windows, np.random.default_rng(0))
    base = table.get("m", "all_correct").totals
    for cond in CONDITIONS[1:]:
        np.testing.assert_allclose(table.get("m", cond).totals, base, rtol=1e-12)


def test_cells_and_records(windows):
    full = DyadFlowModel(tiny_config(), seed=1, actnorm_data_init=False)
    noface = DyadFlowModel(tiny_config(no_face=True), seed=1, actnorm_data_init=False)
    table = mismatch_table({"proposed": full, "no_face": noface}, windows, np.random.default_rng(0))
    assert table.get("no_face", "mismatched_F_i") is None
    assert table.get("proposed", "mismatched_F_i") is not None
    recs = {(r["model"], r["condition"]): r for r in table.records()}
    assert not recs[("no_face", "mismatched_F_i")]["present"]
    assert recs[("proposed", "all_correct")]["n"] == len(windows)
    text = table.format_text(per_frame=True)
    assert "mismatched F_i" in text and text.splitlines()[2].rstrip().endswith("-")
    cell = table.get("proposed", "all_correct")
    np.testing.assert_allclose(cell.per_frame, cell.totals / 20)


def test_totals_match_model(windows):
    model = DyadFlowModel(tiny_config(), seed=2, actnorm_data_init=False)
    totals, frames = sequence_log_likelihoods(model, *windows.tensors(), batch_size=3)
    lp = model.log_prob(*windows.tensors()).detach().numpy()
    np.testing.assert_allclose(totals, lp.sum(1), rtol=1e-12)
    assert np.all(frames == 20)


def test_mismatch_changes_only_one_stream(windows, monkeypatch):
    seen = []
    import dyadflow.evaluation as ev
    real = ev.sequence_log_likelihoods

    def spy(model, fa, sa, si, fi, batch_size=64):
        seen.append((fa, sa, si, fi))
        return real(model, fa, sa, si, fi, batch_size)

    monkeypatch.setattr(ev, "sequence_log_likelihoods", spy)
    mismatch_table({"m": DyadFlowModel(tiny_config(), actnorm_data_init=False)}, windows, np.random.default_rng(0))
    base = seen[0]
    for k, cond in enumerate(seen[1:]):
        changed = [not np.array_equal(a, b) for a, b in zip(base, cond)]
        assert changed == [False, k == 0, k == 1, k == 2]


def test_deterministic_and_read_only(windows):
    model = DyadFlowModel(tiny_config(), seed=1, actnorm_data_init=False)
    before = digest(model)
    a = mismatch_table({"m": model}, windows, np.random.default_rng(4))
    b = mismatch_table({"m": model}, windows, np.random.default_rng(4))
    for cond in CONDITIONS:
        assert np.array_equal(a.get("m", cond).totals, b.get("m", cond).totals)
    assert digest(model) == before


def test_needs_two_sequences(windows):
    model = DyadFlowModel(tiny_config(), actnorm_data_init=False)
    with pytest.raises(EvaluationError, match="at least 2"):
        mismatch_table({"m": model}, windows.take([0]), np.random.default_rng(0))


def test_variable_length_lists(windows):
    model = DyadFlowModel(tiny_config(), actnorm_data_init=False)
    seqs = [(w[:10], x[:10], y[:10], z[:10]) for w, x, y, z in zip(*windows.tensors())]
    table = mismatch_table({"m": model}, seqs, np.random.default_rng(0))
    assert table.get("m", "all_correct").n_frames[0] == 10
    seqs[0] = tuple(a[:5] for a in seqs[0])
    with pytest.raises(EvaluationError):
        mismatch_table({"m": model}, seqs, np.random.default_rng(0))
