"""Dyadic sessions, splits, training windows and the synthetic mimicry corpus."""
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

FACE_DIM = 56
SPEECH_DIM = 30
SPEECH_COLUMNS = ([f"mfcc{i:02d}" for i in range(1, 26)]
                  + ["log_energy", "pitch", "pitch_delta", "energy", "energy_delta"])
ENERGY_COLUMN = SPEECH_COLUMNS.index("energy")


class DatasetError(ValueError):
    pass


@dataclass
class Party:
    face: np.ndarray
    speech: np.ndarray

    def __post_init__(self):
        self.face = np.asarray(self.face, dtype=np.float64)
        self.speech = np.asarray(self.speech, dtype=np.float64)
        if self.face.ndim != 2 or self.face.shape[1] != FACE_DIM:
            raise DatasetError(f"facial track must be (T, {FACE_DIM}), got {self.face.shape}")
        if self.speech.ndim != 2 or self.speech.shape[1] != SPEECH_DIM:
            raise DatasetError(f"acoustic track must be (T, {SPEECH_DIM}), got {self.speech.shape}")
        if len(self.face) != len(self.speech):
            raise DatasetError("facial and acoustic tracks differ in length")
        if not (np.isfinite(self.face).all() and np.isfinite(self.speech).all()):
            raise DatasetError("tracks contain non-finite values")


@dataclass
class SessionData:
    session_id: str
    party_a: Party
    party_b: Party
    fps: int = 25
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.party_a.face) != len(self.party_b.face):
            raise DatasetError(f"session {self.session_id}: parties differ in length")

    @property
    def n_frames(self):
        return len(self.party_a.face)

    def slice(self, start, stop):
        def cut(p):
            return Party(p.face[start:stop], p.speech[start:stop])
        meta = dict(self.metadata, source=self.session_id, start=int(start))
        return SessionData(f"{self.session_id}@{start}", cut(self.party_a), cut(self.party_b), self.fps, meta)

    def roles(self, role):
        """(avatar, interlocutor) parties for role ``"a"`` or ``"b"``."""
        if role == "a":
            return self.party_a, self.party_b
        if role == "b":
            return self.party_b, self.party_a
        raise DatasetError(f"unknown role {role!r}")


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    holdout: SessionData


def _round_half_up(x):
    return int(np.floor(x + 0.5))


def split_dataset(sessions, rng, segment_frames=1500, min_frames=80, fractions=(0.83, 0.10)):
    """Hold out one whole session, cut the rest into one-minute segments and
    assign them at random to train/val/test.

    Train and val counts are rounded to nearest; test takes the remainder.
    A trailing piece shorter than a minute is kept when it has at least
    ``min_frames`` frames.
    """
    sessions = list(sessions)
    if len(sessions) < 2:
        raise DatasetError("need at least 2 sessions: one is held out entirely")
    held = int(rng.integers(len(sessions)))
    segments = []
    for i, s in enumerate(sessions):
        if i == held:
            continue
        for start in range(0, s.n_frames, segment_frames):
            stop = min(start + segment_frames, s.n_frames)
            if stop - start >= min_frames:
                segments.append(s.slice(start, stop))
    if len(segments) < 2:
        raise DatasetError(f"too little data: {len(segments)} segment(s) after holdout")
    order = rng.permutation(len(segments))
    n_train = _round_half_up(len(segments) * fractions[0])
    n_val = _round_half_up(len(segments) * fractions[1])
    n_train = min(n_train, len(segments))
    n_val = min(n_val, len(segments) - n_train)
    pick = [segments[i] for i in order]
    return DatasetSplit(pick[:n_train], pick[n_train:n_train + n_val], pick[n_train + n_val:],
                        sessions[held])


@dataclass
class Windows:
    """A stack of aligned training windows, arrays shaped (N, length, dim).

    ``interlocutor_source`` gives, per item, the index of the item the
    interlocutor streams were taken from (identity unless mismatched).
    """
    face_a: np.ndarray
    speech_a: np.ndarray
    face_i: np.ndarray
    speech_i: np.ndarray
    segment: np.ndarray
    start: np.ndarray
    role: np.ndarray
    interlocutor_source: np.ndarray = None

    def __post_init__(self):
        if self.interlocutor_source is None:
            self.interlocutor_source = np.arange(len(self.face_a))

    def __len__(self):
        return len(self.face_a)

    def take(self, idx):
        idx = np.asarray(idx)
        return Windows(self.face_a[idx], self.speech_a[idx], self.face_i[idx], self.speech_i[idx],
                       self.segment[idx], self.start[idx], self.role[idx],
                       np.arange(len(idx)))

    def tensors(self):
        return self.face_a, self.speech_a, self.speech_i, self.face_i


def window_plan(segments, length=80, stride=40, roles=("a", "b"), offsets=None):
    """Rows of (segment index, start frame, role index) for every window.

    :param offsets: optional per-segment start offsets in ``[0, stride)``
    """
    rows = []
    for j, seg in enumerate(segments):
        off = 0 if offsets is None else int(offsets[j])
        if seg.n_frames - off < length:
            if offsets is None:
                warnings.warn(f"segment {seg.session_id} has {seg.n_frames} frames, "
                              f"shorter than window length {length}; skipped")
            continue
        for start in range(off, seg.n_frames - length + 1, stride):
            for r, role in enumerate(roles):
                rows.append((j, start, "ab".index(role)))
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def gather_windows(segments, plan, length=80):
    fa, sa, fi, si = [], [], [], []
    for j, start, r in plan:
        avatar, inter = segments[j].roles("ab"[r])
        sl = slice(start, start + length)
        fa.append(avatar.face[sl])
        sa.append(avatar.speech[sl])
        fi.append(inter.face[sl])
        si.append(inter.speech[sl])

    def stack(xs, dim):
        return np.stack(xs) if xs else np.zeros((0, length, dim))

    plan = np.asarray(plan, dtype=np.int64).reshape(-1, 3)
    return Windows(stack(fa, FACE_DIM), stack(sa, SPEECH_DIM), stack(fi, FACE_DIM), stack(si, SPEECH_DIM),
                   plan[:, 0].copy(), plan[:, 1].copy(), plan[:, 2].copy())


def window_sessions(segments, length=80, stride=40, roles=("a", "b")):
    """Aligned (F_a, S_a, F_i, S_i) windows from every segment, each party
    taking a turn as the avatar. Accepts a :class:`DatasetSplit` (its
    training segments are used) or a list of sessions."""
    if isinstance(segments, DatasetSplit):
        segments = segments.train
    segments = list(segments)
    return gather_windows(segments, window_plan(segments, length, stride, roles), length)


@dataclass
class SyntheticConfig:
    """Planted-dependency corpus: ``F_a[t] = gain * F_i[t-lag] + coupling * energy_a[t-lag] + noise``."""
    n_sessions: int = 30
    session_len: int = 2400
    mimic_gain: float = 0.8
    lag: int = 5
    noise: float = 0.1
    speech_coupling: float = 0.0
    face_pole: float = 0.9
    fps: int = 25

    def validate(self):
        if self.lag < 1:
            raise DatasetError("lag must be at least 1 frame")
        if self.session_len <= self.lag:
            raise DatasetError("session_len must exceed lag")
        if self.n_sessions < 1 or self.noise < 0 or not 0 <= self.face_pole < 1:
            raise DatasetError("invalid synthetic corpus configuration")

    def planted(self):
        return {"mimic_gain": self.mimic_gain, "lag": self.lag, "noise": self.noise,
                "speech_coupling": self.speech_coupling, "face_pole": self.face_pole}


def _ar1(rng, n, dim, pole):
    """Unit-variance first-order low-pass filtered white noise, with burn-in."""
    burn = int(np.ceil(5 / max(1 - pole, 1e-3)))
    w = rng.standard_normal((n + burn, dim)) * np.sqrt(1 - pole ** 2)
    return scipy.signal.lfilter([1.0], [1.0, -pole], w, axis=0)[burn:]


def _speech_process(rng, n):
    """30D acoustic-like track: smooth noise gated by on/off talk bursts."""
    state = rng.random() < 0.5
    env = np.zeros(n)
    t = 0
    while t < n:
        dur = 1 + rng.geometric(1 / 40)
        env[t:t + dur] = float(state)
        state = not state
        t += dur
    env = scipy.signal.lfilter([0.3], [1.0, -0.7], env)
    feats = _ar1(rng, n, SPEECH_DIM, 0.6) * (0.2 + env[:, None])
    feats[:, ENERGY_COLUMN] = 2.0 * env - 1.0 + 0.05 * rng.standard_normal(n)
    return feats


def generate_synthetic_corpus(cfg, rng):
    """Sessions where party A (avatar) lags and copies party B (interlocutor).

    Party B's face is a smooth random process, both acoustic tracks are
    independent bursty processes, and party A's face follows the planted
    rule in :class:`SyntheticConfig`. The rule is stored in each session's
    metadata under ``"planted"``.
    """
    cfg.validate()
    sessions = []
    T, L = cfg.session_len, cfg.lag
    for k in range(cfg.n_sessions):
        face_i = _ar1(rng, T + L, FACE_DIM, cfg.face_pole)
        speech_i = _speech_process(rng, T + L)
        speech_a = _speech_process(rng, T + L)
        noise = cfg.noise * rng.standard_normal((T, FACE_DIM))
        face_a = (cfg.mimic_gain * face_i[:T]
                  + cfg.speech_coupling * speech_a[:T, ENERGY_COLUMN:ENERGY_COLUMN + 1]
                  + noise)
        sessions.append(SessionData(
            f"synth{k:03d}",
            Party(face_a, speech_a[L:]),
            Party(face_i[L:], speech_i[L:]),
            fps=cfg.fps,
            metadata={"planted": cfg.planted(), "mimicking_party": "a"}))
    return sessions
