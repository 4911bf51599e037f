"""Temporal smoothing of facial feature tracks."""
import numpy as np
import scipy.signal

FACE_COLUMNS = ([f"exp{i:02d}" for i in range(50)]
                + ["neck_x", "neck_y", "neck_z", "jaw_x", "jaw_y", "jaw_z"])


def savgol_coefficients(window=9, order=3):
    """Centre-point least-squares smoothing weights (symmetric, sum to 1)."""
    return scipy.signal.savgol_coeffs(window, order)


def savgol_smooth(track, window=9, order=3):
    """Per-channel Savitzky-Golay smoothing along time.

    Edge samples are taken from a polynomial fitted to the first/last
    ``window`` frames, so any polynomial of degree <= ``order`` passes
    through unchanged. Tracks shorter than ``window`` are returned as is.
    """
    track = np.asarray(track, dtype=np.float64)
    if len(track) < window:
        return track.copy()
    return scipy.signal.savgol_filter(track, window, order, axis=0, mode="interp")
