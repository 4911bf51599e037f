"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line and the run ends with a summary of all
criteria. The interlocutor-awareness and ablation checks share two models
trained once on a synthetic mimicry corpus (a few CPU minutes each).
"""
import math
import time

import numpy as np
import pytest
import scipy.integrate
import scipy.stats
import torch

from dyadflow.checkpoint import load_checkpoint, save_checkpoint
from dyadflow.evaluation import mismatch_table, sequence_log_likelihoods
from dyadflow.features import audio as A
from dyadflow.features.dataset import (SyntheticConfig, gather_windows, generate_synthetic_corpus,
                                       split_dataset, window_plan, window_sessions)
from dyadflow.features.facial import savgol_smooth
from dyadflow.flow import GlowStack, flow_nll_and_gradients
from dyadflow.gradcheck import model_gradcheck, perturb
from dyadflow.model import DyadFlowModel, GenerationConfig, ModelConfig
from dyadflow.train import AdamState, TrainConfig, Trainer, adam_step, derange, make_negative_batch

from conftest import randomize_couplings
from test_features import direct_dft_magnitude, oracle_filterbank
from test_train import fake_nll, tiny_corpus, tiny_trainer


# --- 1 -----------------------------------------------------------------------------

def test_invertibility(report):
    t0 = time.process_time()
    errors = {}
    for dtype in (torch.float32, torch.float64):
        rng = np.random.default_rng(0)
        g = GlowStack(56, 16, 512, hidden=128, rng=rng, dtype=dtype)
        randomize_couplings(g, rng)
        x = torch.from_numpy(rng.standard_normal((1000, 56))).to(dtype)
        conds = torch.from_numpy(rng.standard_normal((1000, 16, 512))).to(dtype)
        g.data_initialize(x, conds)
        with torch.no_grad():
            z, _ = g(x, conds)
            errors[dtype] = (g.inverse(z, conds)[0] - x).abs().max().item()
    elapsed = time.process_time() - t0
    ok = errors[torch.float32] < 1e-4 and errors[torch.float64] < 1e-10 and elapsed < 60
    report(1, "invertibility", ok, f"float32 {errors[torch.float32]:.1e}, float64 "
           f"{errors[torch.float64]:.1e}, {elapsed:.1f}s")
    assert ok


# --- 2 -----------------------------------------------------------------------------

def fd_logdet(g, x, cond, h=1e-6):
    d = len(x)
    J = np.zeros((d, d))
    with torch.no_grad():
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            up = g(torch.from_numpy(x + e), cond)[0][0].numpy()
            down = g(torch.from_numpy(x - e), cond)[0][0].numpy()
            J[:, j] = (up - down) / (2 * h)
    return np.linalg.slogdet(J)[1]


def test_logdet_correctness(report):
    t0 = time.process_time()
    rng = np.random.default_rng(1)
    worst = 0.0
    for trial in range(100):
        d, K = int(rng.choice([2, 4, 6])), int(rng.choice([1, 3]))
        g = GlowStack(d, K, 3, hidden=8, rng=rng)
        g.mark_initialized()
        perturb(g, rng, 0.3)
        x = rng.standard_normal(d)
        cond = torch.from_numpy(rng.standard_normal((K, 3)))
        with torch.no_grad():
            analytic = g(torch.from_numpy(x), cond)[1][0].item()
        numeric = fd_logdet(g, x, cond)
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), 1e-12))
    elapsed = time.process_time() - t0
    ok = worst < 1e-3 and elapsed < 120
    report(2, "log-determinant", ok, f"worst relative error {worst:.1e} over 100 flows, {elapsed:.1f}s")
    assert ok


# --- 3 -----------------------------------------------------------------------------

def test_gradient_exactness(report):
    t0 = time.process_time()
    results = model_gradcheck(seed=0)
    elapsed = time.process_time() - t0
    worst = max(results, key=lambda r: r.max_rel_error)
    n = sum(r.n_entries for r in results)
    ok = worst.max_rel_error < 1e-4 and elapsed < 300
    report(3, "gradient exactness", ok, f"{len(results)} tensors / {n} entries, worst {worst.max_rel_error:.1e} "
           f"({worst.name}), {elapsed:.0f}s")
    assert ok


# --- 4 -----------------------------------------------------------------------------

def grid_mass(g, cond, half=8.0, n=801):
    u = np.linspace(-half, half, n)
    xx, yy = np.meshgrid(u, u, indexing="ij")
    pts = torch.from_numpy(np.column_stack([xx.ravel(), yy.ravel()]))
    with torch.no_grad():
        lp = g.log_prob(pts, cond.expand(len(pts), -1, -1)).numpy().reshape(n, n)
    return scipy.integrate.trapezoid(scipy.integrate.trapezoid(np.exp(lp), u, axis=1), u)


def trained_2d_flow(rng):
    n = 2000
    c = rng.standard_normal((n, 1))
    a = c[:, 0] + 0.3 * rng.standard_normal(n)
    b = np.sin(2 * a) + 0.2 * rng.standard_normal(n)
    x = np.column_stack([a, b])
    x = torch.from_numpy((x - x.mean(0)) / x.std(0))
    conds = torch.from_numpy(np.repeat(c[:, None, :], 4, 1))
    g = GlowStack(2, 4, 1, hidden=32, rng=rng)
    g.data_initialize(x, conds)
    params = dict(g.named_parameters())
    state = AdamState.zeros(params)
    first = last = None
    for _ in range(300):
        nll, grads = flow_nll_and_gradients(x, conds, g)
        adam_step(grads, params, state, 1e-2)
        first = nll if first is None else first
        last = nll
    return g, first, last


def test_density_normalization(report):
    t0 = time.process_time()
    rng = np.random.default_rng(2)
    g = GlowStack(2, 3, 1, hidden=16, rng=rng)
    g.mark_initialized()
    randomize_couplings(g, rng, gain=1.0)
    with torch.no_grad():
        for step in g.steps:
            step.actnorm.log_scale.copy_(torch.from_numpy(rng.normal(0, 0.2, 2)))
    mass_random = grid_mass(g, torch.full((1, 3, 1), 0.7, dtype=torch.float64))
    trained, nll0, nll1 = trained_2d_flow(rng)
    mass_trained = grid_mass(trained, torch.full((1, 4, 1), -0.5, dtype=torch.float64))
    elapsed = time.process_time() - t0
    ok = abs(mass_random - 1) <= 0.02 and abs(mass_trained - 1) <= 0.02 and elapsed < 60 and nll1 < nll0
    report(4, "density normalization", ok, f"random {mass_random:.4f}, trained {mass_trained:.4f} "
           f"(nll {nll0:.2f} -> {nll1:.2f}), {elapsed:.1f}s")
    assert ok


# --- 5 and 6: trained on the synthetic mimicry corpus --------------------------------

DESK_MODEL = dict(n_steps=4, cond_dim=64, hidden=64, gru_hidden=16, dtype="float32")
DESK_TRAIN = dict(initial_lr=1e-3, warmup_steps=50, batch_size=32, negative_prob=0.1, seed=1)
DESK_EPOCHS = 3


@pytest.fixture(scope="module")
def mimicry():
    torch.set_num_threads(1)
    rng = np.random.default_rng(0)
    synth = SyntheticConfig(n_sessions=30, session_len=2400, mimic_gain=0.8, lag=5, noise=0.1, speech_coupling=0.0)
    split = split_dataset(generate_synthetic_corpus(synth, rng), rng)
    models, cpu = {}, {}
    for name, flags in (("proposed", {}), ("no_face", {"no_face": True})):
        t0 = time.process_time()
        model = DyadFlowModel(ModelConfig(**DESK_MODEL, **flags), seed=0)
        trainer = Trainer(model, TrainConfig(**DESK_TRAIN))
        trainer.fit(split.train, DESK_EPOCHS)
        cpu[name] = time.process_time() - t0
        models[name] = model
    test = window_sessions(split.test + [split.holdout], 80, 80)
    table = mismatch_table(models, test, np.random.default_rng(5))
    return {"models": models, "cpu": cpu, "test": test, "table": table}


@pytest.mark.slow
def test_interlocutor_awareness(report, mimicry):
    table = mimicry["table"]
    correct = table.get("proposed", "all_correct").per_frame
    mismatched = table.get("proposed", "mismatched_F_i").per_frame
    p = scipy.stats.ttest_rel(correct, mismatched, alternative="greater").pvalue
    minutes = mimicry["cpu"]["proposed"] / 60
    n = len(correct)
    ok = p < 0.01 and n >= 50 and minutes <= 30
    report(5, "interlocutor awareness", ok, f"per-frame LL {correct.mean():.2f} vs {mismatched.mean():.2f} "
           f"mismatched F_i, one-sided p={p:.1e}, n={n}, {minutes:.1f} CPU-min")
    assert ok


@pytest.mark.slow
def test_ablation_pattern(report, mimicry):
    table = mimicry["table"]
    absent = table.get("no_face", "mismatched_F_i") is None
    # the no-face model cannot see F_i at all, so a mismatched F_i changes nothing
    test = mimicry["test"]
    noface = mimicry["models"]["no_face"]
    perm = derange(len(test), np.random.default_rng(0))
    a, _ = sequence_log_likelihoods(noface, test.face_a, test.speech_a, test.speech_i, test.face_i)
    b, _ = sequence_log_likelihoods(noface, test.face_a, test.speech_a, test.speech_i, test.face_i[perm])
    invariant = np.array_equal(a, b)
    correct = table.get("proposed", "all_correct").per_frame
    sa = table.get("proposed", "mismatched_S_a").per_frame
    p = scipy.stats.ttest_rel(correct, sa).pvalue
    ok = absent and invariant and p > 0.05
    report(6, "ablation pattern", ok, f"no-face F_i column absent={absent}, F_i-invariant={invariant}; "
           f"proposed S_a gap {np.mean(correct - sa):+.3f}/frame, p={p:.2f}")
    assert ok


# --- 7 -----------------------------------------------------------------------------

def test_negative_training_mechanics(report):
    segs = tiny_corpus()
    # (a) rate
    tr = tiny_trainer(negative_prob=0.1, batch_size=2)
    fake_nll(tr.model, 1.0)
    tr.model.glow.mark_initialized()
    n = negatives = 0
    while n < 2000:
        s = tr.train_epoch(segs)
        n += s["batches"]
        negatives += s["negative_batches"]
    sigma = math.sqrt(n * 0.1 * 0.9)
    rate_ok = abs(negatives - 0.1 * n) < 4 * sigma
    # (b, c) sign and skip
    batch = gather_windows(segs, window_plan(segs, 20, 10)[:8], 20)
    tr = tiny_trainer(negative_prob=1.0)
    tr.model.glow.mark_initialized()
    fake_nll(tr.model, 3.0)
    r_pos = tr.train_step(batch)
    fake_nll(tr.model, -2.0)
    r_neg = tr.train_step(batch)
    sign_ok = r_pos["loss"] == -3.0 and not r_pos["skipped"]
    skip_ok = r_neg["skipped"] and r_neg["loss"] == 0.0 and tr.adam.step == 1
    # (d) derangements
    rng = np.random.default_rng(0)
    fixed_free = all(not np.any(derange(k, rng) == np.arange(k)) for k in range(2, 40) for _ in range(20))
    neg = make_negative_batch(batch, rng)
    src = neg.interlocutor_source
    paired = all(np.array_equal(neg.face_i[k], batch.face_i[src[k]])
                 and np.array_equal(neg.speech_i[k], batch.speech_i[src[k]]) for k in range(len(batch)))
    ok = rate_ok and sign_ok and skip_ok and fixed_free and paired
    report(7, "negative-training mechanics", ok, f"rate {negatives}/{n} (4-sigma band +-{4 * sigma:.0f}), "
           f"sign={sign_ok}, skip={skip_ok}, no fixed points={fixed_free}, pairs kept={paired}")
    assert ok


# --- 8 -----------------------------------------------------------------------------

def test_dsp(report):
    t0 = time.process_time()
    rng = np.random.default_rng(3)
    t = np.arange(300.0)
    cubic = np.column_stack([c[0] + c[1] * t + c[2] * t ** 2 + c[3] * t ** 3
                             for c in rng.normal(0, [1, 1e-1, 1e-3, 1e-5], (56, 4))])
    sg_err = np.abs(savgol_smooth(cubic) - cubic).max()

    sr = 16000
    x = 0.5 * np.sin(2 * np.pi * 440 * np.arange(sr // 10) / sr)
    mel, _ = A.mel_spectrum(A.AudioSignal(x, sr))
    emph = np.append(x[:1], x[1:] - 0.97 * x[:-1])[800:1120]
    expected = int(np.argmax(oracle_filterbank(26, 1024, sr) @ direct_dft_magnitude(emph * np.hamming(320), 1024)))
    got = int(np.argmax(mel[5]))

    x = 0.5 * np.sin(2 * np.pi * 200 * np.arange(sr) / sr)
    pitch = A.compute_prosody(A.AudioSignal(x, sr))[2:-2, 0]
    pitch_err = np.abs(pitch - 200).max()
    elapsed = time.process_time() - t0
    ok = sg_err < 1e-9 and got == expected and pitch_err <= 2.0 and elapsed < 60
    report(8, "DSP", ok, f"cubic error {sg_err:.1e}, 440 Hz on filter {got} (oracle {expected}), "
           f"200 Hz pitch error {pitch_err:.3f} Hz, {elapsed:.1f}s")
    assert ok


# --- 9 -----------------------------------------------------------------------------

def test_determinism_and_serialization(report, tmp_path):
    segs = tiny_corpus()
    trainer = tiny_trainer()
    trainer.train_epoch(segs, max_batches=2)
    model = trainer.model
    rng = np.random.default_rng(4)
    sa, si, fi = rng.standard_normal((40, 30)), rng.standard_normal((40, 30)), rng.standard_normal((40, 56))
    cold = [model.generate(sa, si, fi, GenerationConfig(0.0, seed=s)) for s in (1, 2)]
    warm = [model.generate(sa, si, fi, GenerationConfig(1.0, seed=9)) for _ in range(2)]
    cold_ok = np.array_equal(cold[0], cold[1])
    warm_ok = np.array_equal(warm[0], warm[1])

    full = tiny_trainer(metrics_path=tmp_path / "full.tsv")
    full_records = [r for _ in range(2) for r in full.train_epoch(segs)["records"]]
    part = tiny_trainer(metrics_path=tmp_path / "part.tsv")
    records = part.train_epoch(segs, max_batches=5)["records"]
    save_checkpoint(tmp_path / "mid.ckpt", part)
    resumed = load_checkpoint(tmp_path / "mid.ckpt", metrics_path=tmp_path / "part.tsv")
    while resumed.epoch < 2:
        records += resumed.train_epoch(segs)["records"]
    resume_ok = (records == full_records
                 and (tmp_path / "full.tsv").read_bytes() == (tmp_path / "part.tsv").read_bytes())
    ok = cold_ok and warm_ok and resume_ok
    report(9, "determinism and serialization", ok, f"temperature 0 identical={cold_ok}, seeded temperature 1 "
           f"identical={warm_ok}, resumed metrics identical over {len(records)} batches={resume_ok}")
    assert ok


# --- 10 ----------------------------------------------------------------------------

def test_shape_conformance(report):
    cfg, tcfg = ModelConfig(), TrainConfig()
    model = DyadFlowModel(cfg, seed=0, actnorm_data_init=False)
    T = 5
    conds = model.conditioning(np.zeros((T, 56)), np.zeros((T, 30)), np.zeros((T, 30)), np.zeros((T, 56)))
    segs = generate_synthetic_corpus(SyntheticConfig(n_sessions=2, session_len=200), np.random.default_rng(0))
    win = window_sessions(segs, tcfg.sequence_length, tcfg.stride)
    shapes = {
        "face": cfg.face_dim, "speech": cfg.speech_dim, "steps": model.glow.n_steps,
        "conditioning": tuple(conds.shape[2:]), "sequence": tcfg.sequence_length,
        "window face": win.face_a.shape[1:], "window speech": win.speech_a.shape[1:],
    }
    expected = {"face": 56, "speech": 30, "steps": 16, "conditioning": (16, 512), "sequence": 80,
                "window face": (80, 56), "window speech": (80, 30)}
    ok = shapes == expected and len(model.glow.steps) == 16
    report(10, "shape conformance", ok, ", ".join(f"{k} {v}" for k, v in shapes.items()))
    assert ok
