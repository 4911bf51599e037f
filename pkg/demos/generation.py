"""
Sampling at different temperatures
==================================

Loads the model trained by ``mimicry_training.py`` and generates the
avatar's face for a fresh synthetic conversation. Lower temperature gives
smoother, more average motion; zero temperature is deterministic.

Free-running sampling feeds the model its own output as history. A model
trained for a few minutes has only seen real histories, so now and then a
sample drifts off the data and the next inverse pass overflows; that run
stops with NonFiniteError naming the frame.
"""
import argparse

import numpy as np

from dyadflow import GenerationConfig, SyntheticConfig, generate_synthetic_corpus, load_model
from dyadflow.flow import NonFiniteError

ap = argparse.ArgumentParser()
ap.add_argument("--checkpoint", default="proposed.ckpt")
args = ap.parse_args()

model = load_model(args.checkpoint)
conv = generate_synthetic_corpus(SyntheticConfig(n_sessions=1, session_len=400), np.random.default_rng(99))[0]
avatar, inter = conv.party_a, conv.party_b
T = 400


def lagged_corr(face, lag=5):
    # the planted rule says F_a[t] ~ 0.8 F_i[t-5]
    return np.corrcoef(face[lag:].ravel(), inter.face[:T - lag].ravel())[0, 1]


print("real track:       frame-to-frame change %.3f, corr. with lagged interlocutor %.2f"
      % (np.abs(np.diff(avatar.face, axis=0)).mean(), lagged_corr(avatar.face)))
for temp in (0.0, 0.5, 1.0):
    change, corr, diverged = [], [], []
    for seed in range(5 if temp > 0 else 1):
        try:
            fake = model.generate(avatar.speech, inter.speech, inter.face, GenerationConfig(temp, seed=seed))
        except NonFiniteError as e:
            diverged.append(e.frame)
            continue
        change.append(np.abs(np.diff(fake, axis=0)).mean())
        corr.append(lagged_corr(fake))
    line = "temperature %.1f:  " % temp
    if change:
        line += "frame-to-frame change %.3f, corr. with lagged interlocutor %.2f" % (np.mean(change), np.mean(corr))
    if diverged:
        line += "  (%d run(s) diverged, at frame %s)" % (len(diverged), diverged)
    print(line)

# Seeding the history with 24 real frames, as when continuing a recording.
fake = model.generate(avatar.speech, inter.speech, inter.face, GenerationConfig(0.0, seed=0),
                      init_frames=avatar.face[:24])
print("seeded, 0.0:      corr. with lagged interlocutor %.2f" % lagged_corr(fake))

a = model.generate(avatar.speech, inter.speech, inter.face, GenerationConfig(0.0, seed=1))
b = model.generate(avatar.speech, inter.speech, inter.face, GenerationConfig(0.0, seed=2))
print("temperature 0 ignores the seed:", np.array_equal(a, b))
