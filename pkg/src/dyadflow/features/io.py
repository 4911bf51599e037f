"""Feature tables and session manifests on disk.

Feature files are comma-separated text with a header row naming the
columns; one row per video frame. A manifest is a JSON document listing
sessions and the feature files of both parties, with paths relative to
the manifest.
"""
import json
from pathlib import Path

import numpy as np

from .dataset import SPEECH_COLUMNS, Party, SessionData
from .facial import FACE_COLUMNS

MANIFEST_FORMAT = "dyadflow-manifest"
MANIFEST_VERSION = 1


class FormatError(ValueError):
    pass


def write_feature_file(path, values, columns):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != len(columns):
        raise FormatError(f"expected {len(columns)} columns, got shape {values.shape}")
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(",".join(columns) + "\n")
        for row in values:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def read_feature_file(path, columns=None):
    with open(path, encoding="ascii") as f:
        header = f.readline().strip().split(",")
        if columns is not None and header != list(columns):
            raise FormatError(f"{path}: unexpected header {header[:3]}...")
        rows = [line.split(",") for line in f if line.strip()]
    try:
        values = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None
    return values


def write_face(path, face):
    write_feature_file(path, face, FACE_COLUMNS)


def read_face(path):
    return read_feature_file(path, FACE_COLUMNS)


def write_speech(path, speech):
    write_feature_file(path, speech, SPEECH_COLUMNS)


def read_speech(path):
    return read_feature_file(path, SPEECH_COLUMNS)


def write_sessions(directory, sessions, manifest_name="manifest.json"):
    """Write every party's feature files and a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in sessions:
        entry = {"id": s.session_id, "fps": s.fps, "metadata": s.metadata}
        for name, party in (("party_a", s.party_a), ("party_b", s.party_b)):
            face = f"{s.session_id}_{name}_face.csv"
            speech = f"{s.session_id}_{name}_speech.csv"
            write_face(directory / face, party.face)
            write_speech(directory / speech, party.speech)
            entry[name] = {"face": face, "speech": speech}
        entries.append(entry)
    path = directory / manifest_name
    doc = {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "sessions": entries}
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def read_sessions(manifest):
    manifest = Path(manifest)
    doc = json.loads(manifest.read_text())
    if doc.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{manifest}: not a session manifest")
    if doc.get("version") != MANIFEST_VERSION:
        raise FormatError(f"{manifest}: unsupported manifest version {doc.get('version')}")
    base = manifest.parent
    sessions = []
    for e in doc["sessions"]:
        parties = [Party(read_face(base / e[n]["face"]), read_speech(base / e[n]["speech"]))
                   for n in ("party_a", "party_b")]
        sessions.append(SessionData(e["id"], *parties, fps=e.get("fps", 25), metadata=e.get("metadata", {})))
    return sessions
