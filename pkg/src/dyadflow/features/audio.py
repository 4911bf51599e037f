"""Acoustic front-end: MFCC + log energy, autocorrelation prosody, crosstalk VAD."""
from dataclasses import dataclass
from math import gcd

import numpy as np
import scipy.fft
import scipy.io.wavfile
import scipy.signal

ENERGY_FLOOR = 1e-10
DEFAULT_RATE = 16000


class FeatureError(ValueError):
    pass


@dataclass
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise FeatureError("sample rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise FeatureError("audio contains non-finite samples")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


def read_wav(path, target_rate=DEFAULT_RATE):
    """Read a 16-bit PCM mono wav file, resampling to ``target_rate``."""
    rate, data = scipy.io.wavfile.read(path)
    if data.dtype != np.int16:
        raise FeatureError(f"{path}: expected 16-bit PCM, got {data.dtype}")
    if data.ndim != 1:
        raise FeatureError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    x = data.astype(np.float64) / 32768.0
    if target_rate and rate != target_rate:
        g = gcd(int(rate), int(target_rate))
        x = scipy.signal.resample_poly(x, target_rate // g, rate // g)
        rate = target_rate
    return AudioSignal(x, rate)


def write_wav(path, audio):
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype(np.int16)
    scipy.io.wavfile.write(path, audio.sample_rate, pcm)


def frame_signal(x, win, hop):
    if len(x) < win:
        return np.zeros((0, win))
    n = 1 + (len(x) - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_filters=26, nfft=1024, sample_rate=DEFAULT_RATE, fmin=0.0, fmax=None):
    """Triangular filters, equally spaced on the mel scale, evaluated at the rfft bin frequencies.

    :return: (n_filters, nfft // 2 + 1) weights; each filter peaks at 1 on its centre
    """
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def filter_centers(n_filters=26, sample_rate=DEFAULT_RATE):
    return mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_filters + 2))[1:-1]


def mel_spectrum(audio, win_s=0.02, hop_s=0.01, nfft=1024, n_filters=26, preemph=0.97):
    """Per-frame mel filterbank energies of the pre-emphasized, Hamming-windowed signal.

    Also returns the raw frames (before pre-emphasis and windowing), which
    the energy term is computed from.
    """
    sr = audio.sample_rate
    win, hop = int(round(win_s * sr)), int(round(hop_s * sr))
    x = audio.samples
    emph = np.append(x[:1], x[1:] - preemph * x[:-1])
    raw = frame_signal(x, win, hop)
    frames = frame_signal(emph, win, hop) * np.hamming(win)
    mag = np.abs(np.fft.rfft(frames, nfft))
    fb = mel_filterbank(n_filters, nfft, sr)
    return mag @ fb.T, raw


def compute_mfcc_energy(audio, n_mfcc=25, **kw):
    """25 MFCCs (coefficients 1..25 of an orthonormal DCT-II of 26 log mel
    energies) plus the log total frame energy, at 100 frames per second.

    :return: (n_frames, n_mfcc + 1)
    """
    if audio.sample_rate < 8000:
        raise FeatureError("sample rate must be at least 8 kHz")
    mel, raw = mel_spectrum(audio, **kw)
    if len(mel) == 0:
        return np.zeros((0, n_mfcc + 1))
    logmel = np.log(np.maximum(mel, ENERGY_FLOOR))
    cep = scipy.fft.dct(logmel, type=2, axis=1, norm="ortho")[:, 1:n_mfcc + 1]
    energy = np.log(np.maximum((raw ** 2).sum(1), ENERGY_FLOOR))
    return np.column_stack([cep, energy])


def central_delta(x):
    d = np.zeros_like(x)
    if len(x) > 2:
        d[1:-1] = (x[2:] - x[:-2]) / 2.0
    return d


def _pick_lag(r, lag_min, lag_max, threshold):
    seg = r[lag_min:lag_max + 1]
    best = seg.max()
    if best < threshold:
        return 0.0
    # shortest local maximum close to the global one avoids octave-down errors
    cand = [i for i in range(1, len(seg) - 1)
            if seg[i] >= seg[i - 1] and seg[i] >= seg[i + 1] and seg[i] >= 0.9 * best]
    i = cand[0] if cand else int(np.argmax(seg))
    lag = float(lag_min + i)
    if 0 < i < len(seg) - 1:
        a, b, c = seg[i - 1], seg[i], seg[i + 1]
        denom = a - 2 * b + c
        if denom < 0:
            lag += 0.5 * (a - c) / denom
    return lag


def compute_prosody(audio, win_s=0.04, hop_s=0.01, frame_win_s=0.02, fmin=75.0, fmax=500.0,
                    voicing_threshold=0.45):
    """Pitch (Hz, 0 when unvoiced), pitch delta, log energy, energy delta at 100 fps.

    Analysis windows are 40 ms long and centred on the MFCC frame centres, so
    the output has exactly as many rows as :func:`compute_mfcc_energy`.
    Pitch is the lag of the normalized-autocorrelation peak in
    ``[fmin, fmax]``.
    """
    sr = audio.sample_rate
    if sr < 8000:
        raise FeatureError("sample rate must be at least 8 kHz")
    win, hop, fwin = int(round(win_s * sr)), int(round(hop_s * sr)), int(round(frame_win_s * sr))
    x = audio.samples
    n = 0 if len(x) < fwin else 1 + (len(x) - fwin) // hop
    if n == 0:
        return np.zeros((0, 4))
    pad = (win - fwin) // 2
    padded = np.concatenate([np.zeros(pad), x, np.zeros(win)])
    frames = frame_signal(padded, win, hop)[:n]

    energy_raw = (frames ** 2).sum(1)
    energy = np.log(np.maximum(energy_raw, ENERGY_FLOOR))

    centred = frames - frames.mean(1, keepdims=True)
    nfft = 1 << int(np.ceil(np.log2(2 * win)))
    spec = np.fft.rfft(centred, nfft)
    ac = np.fft.irfft(np.abs(spec) ** 2, nfft)[:, :win]
    sq = centred ** 2
    cum = np.cumsum(sq, 1)
    total = cum[:, -1:]
    lags = np.arange(win)
    head = np.take(cum, win - 1 - lags, axis=1)          # sum of x[n]^2, n < win - lag
    tail = total - np.concatenate([np.zeros((n, 1)), cum[:, :-1]], 1)  # sum over n >= lag
    norm = ac / np.sqrt(np.maximum(head * tail, ENERGY_FLOOR ** 2))

    lag_min = int(np.floor(sr / fmax))
    lag_max = min(int(np.ceil(sr / fmin)), win - 2)
    pitch = np.zeros(n)
    for i in range(n):
        if energy_raw[i] <= win * ENERGY_FLOOR:
            continue
        lag = _pick_lag(norm[i], lag_min, lag_max, voicing_threshold)
        if lag > 0:
            pitch[i] = sr / lag
    return np.column_stack([pitch, central_delta(pitch), energy, central_delta(energy)])


def assemble_acoustic(mfcc_e, prosody, factor=4):
    """Concatenate to 30D and average groups of ``factor`` frames (100 fps -> 25 fps).

    A trailing partial group is averaged over the frames it has.
    """
    mfcc_e, prosody = np.asarray(mfcc_e), np.asarray(prosody)
    if len(mfcc_e) != len(prosody):
        raise FeatureError(f"frame count mismatch: {len(mfcc_e)} MFCC vs {len(prosody)} prosody frames")
    feats = np.column_stack([mfcc_e, prosody])
    n_out = -(-len(feats) // factor)
    out = np.zeros((n_out, feats.shape[1]))
    for j in range(n_out):
        out[j] = feats[j * factor:(j + 1) * factor].mean(0)
    return out


def acoustic_features(audio):
    """Full 30D acoustic track at 25 fps for one channel."""
    return assemble_acoustic(compute_mfcc_energy(audio), compute_prosody(audio))


def frame_levels_db(audio, fps=25):
    hop = int(round(audio.sample_rate / fps))
    frames = frame_signal(audio.samples, hop, hop)
    return 10.0 * np.log10((frames ** 2).mean(1) + 1e-12)


def vad_mask(a1, a2, fps=25, margin_db=6.0, floor_db=-50.0):
    """Energy-based crosstalk VAD over non-overlapping 1/fps frames.

    A channel is active when its level is above ``floor_db`` and not more
    than ``margin_db`` below the other channel.
    """
    if a1.sample_rate != a2.sample_rate or len(a1.samples) != len(a2.samples):
        raise FeatureError("VAD channels must have equal rate and duration")
    e1, e2 = frame_levels_db(a1, fps), frame_levels_db(a2, fps)
    m1 = (e1 > floor_db) & (e1 > e2 - margin_db)
    m2 = (e2 > floor_db) & (e2 > e1 - margin_db)
    return m1, m2
