"""Log-likelihood under correct and mismatched conditioning."""
import json
from dataclasses import dataclass

import numpy as np
import torch

from .train import derange

CONDITIONS = ("all_correct", "mismatched_S_a", "mismatched_S_i", "mismatched_F_i")
_STREAM = {"mismatched_S_a": "speech_a", "mismatched_S_i": "speech_i", "mismatched_F_i": "face_i"}


class EvaluationError(ValueError):
    pass


def applicable(model, condition):
    c = model.config
    if condition == "mismatched_F_i" and c.no_face:
        return False
    if condition == "mismatched_S_i" and c.no_speech:
        return False
    return True


@dataclass
class Cell:
    totals: np.ndarray     # per-sequence summed log-likelihood
    n_frames: np.ndarray   # frames per sequence

    @property
    def per_frame(self):
        return self.totals / self.n_frames

    def stats(self):
        return {"mean": float(np.mean(self.totals)), "std": float(np.std(self.totals)),
                "per_frame_mean": float(np.mean(self.per_frame)),
                "per_frame_std": float(np.std(self.per_frame)), "n": int(len(self.totals))}


@dataclass
class LLTable:
    rows: list
    cells: dict   # (row, condition) -> Cell, missing where not applicable

    def get(self, row, condition):
        return self.cells.get((row, condition))

    def records(self):
        out = []
        for row in self.rows:
            for cond in CONDITIONS:
                cell = self.get(row, cond)
                rec = {"model": row, "condition": cond, "present": cell is not None}
                if cell is not None:
                    rec.update(cell.stats())
                out.append(rec)
        return out

    def write_records(self, path):
        with open(path, "w") as f:
            for rec in self.records():
                f.write(json.dumps(rec, sort_keys=True) + "\n")

    def format_text(self, per_frame=False):
        key, sd = ("per_frame_mean", "per_frame_std") if per_frame else ("mean", "std")
        header = ["System"] + ["All correct", "mismatched S_a", "mismatched S_i", "mismatched F_i"]
        lines = [header]
        for row in self.rows:
            line = [row]
            for cond in CONDITIONS:
                cell = self.get(row, cond)
                if cell is None:
                    line.append("-")
                else:
                    s = cell.stats()
                    line.append(f"{s[key]:.1f} +- {s[sd]:.1f}")
            lines.append(line)
        widths = [max(len(l[i]) for l in lines) for i in range(len(header))]
        return "\n".join("  ".join(v.ljust(w) for v, w in zip(l, widths)).rstrip() for l in lines)


def _as_arrays(sequences):
    if hasattr(sequences, "face_a"):
        return {"face_a": sequences.face_a, "speech_a": sequences.speech_a,
                "speech_i": sequences.speech_i, "face_i": sequences.face_i}
    fa, sa, si, fi = zip(*sequences)
    return {"face_a": list(fa), "speech_a": list(sa), "speech_i": list(si), "face_i": list(fi)}


@torch.no_grad()
def sequence_log_likelihoods(model, face_a, speech_a, speech_i, face_i, batch_size=64):
    """Summed log-likelihood and frame count for each sequence.

    Inputs are equal-length sequences stacked as arrays (N, T, dim) or lists
    of (T, dim) arrays of possibly different lengths.
    """
    n = len(face_a)
    totals, frames = np.zeros(n), np.zeros(n)
    stacked = isinstance(face_a, np.ndarray)
    step = batch_size if stacked else 1
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        if stacked:
            lp = model.log_prob(face_a[lo:hi], speech_a[lo:hi], speech_i[lo:hi], face_i[lo:hi])
        else:
            lp = model.log_prob(face_a[lo], speech_a[lo], speech_i[lo], face_i[lo])
        totals[lo:hi] = lp.sum(1).double().numpy()
        frames[lo:hi] = lp.shape[1]
    return totals, frames


def _permute(x, perm):
    return x[perm] if isinstance(x, np.ndarray) else [x[i] for i in perm]


def mismatch_table(models, sequences, rng, batch_size=64):
    """Evaluate every model under correct and mismatched conditioning.

    For each mismatched condition one derangement is drawn (in the order of
    ``CONDITIONS``) and applied to the named stream across the test set;
    the same derangement is used for every model. Whole sequences move, so
    each mismatched stream is still contiguous.

    :param models: mapping of row name -> model
    :param sequences: :class:`~dyadflow.features.dataset.Windows` or a list
        of (face_a, speech_a, speech_i, face_i) tuples
    """
    data = _as_arrays(sequences)
    n = len(data["face_a"])
    if n < 2:
        raise EvaluationError(f"mismatched evaluation needs at least 2 test sequences, got {n}")
    if not isinstance(data["face_a"], np.ndarray) and len({len(x) for x in data["face_a"]}) > 1:
        # mismatched streams must match the length of the sequence they are paired with
        raise EvaluationError("test sequences must all have the same length")
    perms = {cond: derange(n, rng) for cond in CONDITIONS[1:]}
    cells = {}
    for name, model in models.items():
        for cond in CONDITIONS:
            if not applicable(model, cond):
                continue
            inputs = dict(data)
            if cond in _STREAM:
                inputs[_STREAM[cond]] = _permute(data[_STREAM[cond]], perms[cond])
            totals, frames = sequence_log_likelihoods(
                model, inputs["face_a"], inputs["speech_a"], inputs["speech_i"], inputs["face_i"], batch_size)
            cells[(name, cond)] = Cell(totals, frames)
    return LLTable(list(models), cells)
