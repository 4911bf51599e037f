from .audio import (AudioSignal, FeatureError, acoustic_features, assemble_acoustic,
                    compute_mfcc_energy, compute_prosody, mel_filterbank, read_wav,
                    vad_mask, write_wav)
from .dataset import (ENERGY_COLUMN, FACE_DIM, SPEECH_COLUMNS, SPEECH_DIM, DatasetError,
                      DatasetSplit, Party, SessionData, SyntheticConfig, Windows,
                      gather_windows, generate_synthetic_corpus, split_dataset,
                      window_plan, window_sessions)
from .facial import FACE_COLUMNS, savgol_coefficients, savgol_smooth
from .io import FormatError, read_sessions, write_sessions
