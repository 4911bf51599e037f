"""
From audio to 30D acoustic frames
=================================

MFCCs, pitch and energy at 100 fps, averaged down to the 25 fps facial
frame rate, plus the two-channel crosstalk VAD.
"""
import numpy as np

from dyadflow.features import audio
from dyadflow.features.dataset import SPEECH_COLUMNS
from dyadflow.features.facial import savgol_smooth

sr = 16000
t = np.arange(2 * sr) / sr

# a "voice" gliding from 120 to 220 Hz, silent for the last half second
f0 = np.linspace(120, 220, len(t))
voice = 0.4 * np.sin(2 * np.pi * np.cumsum(f0) / sr)
voice[-sr // 2:] = 0
speaker = audio.AudioSignal(voice, sr)

mfcc = audio.compute_mfcc_energy(speaker)
pros = audio.compute_prosody(speaker)
print("100 fps frames:", mfcc.shape, pros.shape)
print("pitch every 0.25 s:", np.round(pros[::25, 0]).astype(int))

feats = audio.assemble_acoustic(mfcc, pros)
print("25 fps acoustic track:", feats.shape, "columns", SPEECH_COLUMNS[:3], "...", SPEECH_COLUMNS[-4:])

# The far microphone picks up the same voice 20 dB down; VAD keeps it off.
other = audio.AudioSignal(0.1 * voice + 1e-4 * np.random.default_rng(0).standard_normal(len(t)), sr)
near, far = audio.vad_mask(speaker, other)
print("active frames: near %d, far %d of %d" % (near.sum(), far.sum(), len(near)))

# Facial tracks are smoothed with a 9-frame cubic Savitzky-Golay filter.
k = np.arange(100.0)
face = np.outer(np.sin(k / 10), np.ones(56)) + 0.05 * np.random.default_rng(1).standard_normal((100, 56))
print("jitter before %.3f, after %.3f" % (np.diff(face, axis=0).std(), np.diff(savgol_smooth(face), axis=0).std()))
