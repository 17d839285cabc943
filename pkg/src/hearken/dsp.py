"""Waveform standardization and the log-filterbank feature frontend.

The feature geometry is fixed at 16 kHz audio, 25 ms frames (400 samples) with
a 10 ms shift (160 samples), 49 triangular mel-spaced filters spanning
0-8000 Hz plus one log-energy row, and time-derivative maps computed with the
standard two-sided regression window.
"""

import struct
from dataclasses import dataclass

import numpy as np

from hearken import kernels, wavio
from hearken.errors import AllSilentError, DomainError, FormatError, ParseError

TARGET_RATE = 16000
FRAME_LEN = 400
FRAME_HOP = 160
N_FILTERS = 49
N_BANDS = N_FILTERS + 1  # + log-energy row
FFT_SIZE = 512
LOG_FLOOR = 1e-10
FRAME_SEC = FRAME_HOP / TARGET_RATE  # 10 ms per frame step


@dataclass
class Waveform:
    """Mono sample buffer in [-1, 1] plus its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DomainError("waveform samples must be 1-D")
        if self.sample_rate <= 0:
            raise DomainError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise DomainError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def load_wav(path) -> Waveform:
    samples, rate = wavio.load_wav(path)
    return Waveform(samples, rate)


def save_wav(path, w: Waveform, bits=16):
    wavio.save_wav(path, w.samples, w.sample_rate, bits=bits)


def standardize(w: Waveform) -> Waveform:
    """Resample to 16 kHz (windowed-sinc, 32-tap Kaiser) and peak-normalize.

    All-zero input passes through as all-zero; 16 kHz peak-normalized input is
    returned sample-exact.
    """
    if len(w.samples) == 0:
        raise DomainError("cannot standardize an empty waveform")
    x = w.samples
    if w.sample_rate != TARGET_RATE:
        x = kernels.resample(x, w.sample_rate, TARGET_RATE)
    peak = np.max(np.abs(x)) if len(x) else 0.0
    if peak > 0.0 and peak != 1.0:
        x = x / peak
    return Waveform(x, TARGET_RATE)


def trim_silence(w: Waveform, threshold_db: float = -60.0, min_gap_ms: float = 200.0) -> Waveform:
    """Drop stretches whose 25 ms RMS sits below peak+threshold_db for >= min_gap_ms."""
    if threshold_db >= 0:
        raise DomainError("threshold_db must be negative (relative to peak)")
    x = w.samples
    win = max(1, int(round(0.025 * w.sample_rate)))
    hop = max(1, int(round(0.005 * w.sample_rate)))
    if len(x) < win:
        rms = np.array([np.sqrt(np.mean(x**2))]) if len(x) else np.array([0.0])
        starts = np.array([0])
    else:
        n_win = (len(x) - win) // hop + 1
        starts = np.arange(n_win) * hop
        sq = np.cumsum(np.concatenate([[0.0], x**2]))
        rms = np.sqrt((sq[starts + win] - sq[starts]) / win)
    peak = rms.max()
    if peak == 0.0:
        raise AllSilentError("waveform is entirely silent")
    thr = peak * 10.0 ** (threshold_db / 20.0)

    silent = np.zeros(len(x), dtype=bool)
    for s, r in zip(starts, rms):
        if r < thr:
            silent[s : s + win] = True
    if not silent.any():
        return Waveform(x.copy(), w.sample_rate)

    # keep sub-threshold stretches shorter than the gap
    min_gap = int(round(min_gap_ms / 1000.0 * w.sample_rate))
    keep = np.ones(len(x), dtype=bool)
    edges = np.flatnonzero(np.diff(silent.astype(np.int8)))
    bounds = np.concatenate([[0], edges + 1, [len(x)]])
    for a, b in zip(bounds[:-1], bounds[1:]):
        if silent[a] and (b - a) >= min_gap:
            keep[a:b] = False
    if not keep.any():
        raise AllSilentError("waveform is entirely silent at this threshold")
    return Waveform(x[keep], w.sample_rate)


def split_long(w: Waveform, max_sec: float = 12.0) -> list:
    """Split into near-equal pieces, each strictly shorter than max_sec."""
    if max_sec <= 0:
        raise DomainError("max_sec must be positive")
    n = len(w.samples)
    limit = int(np.floor(max_sec * w.sample_rate))
    if limit * 1.0 == max_sec * w.sample_rate:
        limit -= 1  # strict "shorter than"
    if limit < 1:
        raise DomainError("max_sec shorter than one sample")
    if n <= limit:
        return [Waveform(w.samples.copy(), w.sample_rate)]
    n_pieces = -(-n // limit)  # ceil
    piece = -(-n // n_pieces)
    out = []
    for i in range(0, n, piece):
        out.append(Waveform(w.samples[i : i + piece].copy(), w.sample_rate))
    return out


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_boundaries(n_filters: int = N_FILTERS, f_lo: float = 0.0, f_hi: float = 8000.0):
    """n_filters+2 mel-equidistant edge frequencies in Hz over [f_lo, f_hi]."""
    return mel_to_hz(np.linspace(hz_to_mel(f_lo), hz_to_mel(f_hi), n_filters + 2))


def filter_centers(n_filters: int = N_FILTERS):
    return mel_boundaries(n_filters)[1:-1]


def rasterize_filters(boundaries, sample_rate: int = TARGET_RATE, fft_size: int = FFT_SIZE):
    """Triangular filters over FFT bin frequencies; rows are HTK-style unnormalized."""
    freqs = np.arange(fft_size // 2 + 1) * (sample_rate / fft_size)
    n_filters = len(boundaries) - 2
    fb = np.zeros((n_filters, len(freqs)))
    for i in range(n_filters):
        lo, ctr, hi = boundaries[i], boundaries[i + 1], boundaries[i + 2]
        up = (freqs - lo) / max(ctr - lo, 1e-12)
        down = (hi - freqs) / max(hi - ctr, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def frame_count(n_samples: int) -> int:
    return (n_samples - FRAME_LEN) // FRAME_HOP + 1


def power_spectra(w: Waveform):
    """Hann-windowed per-frame power spectra plus raw frame energies.

    Returns (power [n_frames x 257], energy [n_frames]).
    """
    if w.sample_rate != TARGET_RATE:
        raise DomainError(f"expected {TARGET_RATE} Hz audio, got {w.sample_rate}")
    x = w.samples
    if len(x) < FRAME_LEN:
        raise DomainError("waveform shorter than one 25 ms frame")
    n_frames = frame_count(len(x))
    starts = np.arange(n_frames) * FRAME_HOP
    idx = starts[:, None] + np.arange(FRAME_LEN)[None, :]
    frames = x[idx]
    energy = np.sum(frames**2, axis=1)
    spec = np.fft.rfft(frames * np.hanning(FRAME_LEN), n=FFT_SIZE, axis=1)
    power = spec.real**2 + spec.imag**2
    return power, energy


def bank_features(power, energy, boundaries):
    """Apply a (re)rasterized filterbank and append the log-energy column."""
    fb = rasterize_filters(boundaries)
    out = np.empty((power.shape[0], N_BANDS))
    out[:, :N_FILTERS] = np.log(np.maximum(power @ fb.T, LOG_FLOOR))
    out[:, N_FILTERS] = np.log(np.maximum(energy, LOG_FLOOR))
    return out


def log_mel_filterbank(w: Waveform):
    """49 log filterbank energies + log frame energy, [n_frames x 50]."""
    power, energy = power_spectra(w)
    return bank_features(power, energy, mel_boundaries())


def add_deltas(feats):
    """Stack (static, delta, delta-delta) maps: [n_frames x 50] -> [3 x 50 x n_frames].

    Delta uses the N=2 regression window with replicated edges; delta-delta is
    the same operator applied to delta.
    """
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2:
        raise DomainError("expected a 2-D [n_frames x bands] matrix")
    if feats.shape[0] < 5:
        raise DomainError("need at least 5 frames for delta features")
    d1 = _delta(feats)
    d2 = _delta(d1)
    return np.stack([feats.T, d1.T, d2.T])


def _delta(c):
    pad = np.concatenate([c[:1], c[:1], c, c[-1:], c[-1:]], axis=0)
    return (pad[3:-1] - pad[1:-3] + 2.0 * (pad[4:] - pad[:-4])) / 10.0


def patch_stream(tensor, length: int, overlap_fraction: float = 0.5):
    """Cut [maps x bands x T] into fixed-length windows along the frame axis.

    Windows start at multiples of length*(1-overlap_fraction).  One final
    partial window, padded by repeating the last frame, is appended whenever
    the full windows do not reach T.  Returns (patches, start_frames).
    """
    tensor = np.asarray(tensor)
    t = tensor.shape[-1]
    if not 0.0 <= overlap_fraction < 1.0:
        raise DomainError("overlap_fraction must be in [0, 1)")
    if 2 * t < length:
        raise DomainError(f"stream of {t} frames is too short for {length}-frame patches")
    stride = max(1, int(round(length * (1.0 - overlap_fraction))))
    starts, covered = [], 0
    s = 0
    while s + length <= t:
        starts.append(s)
        covered = s + length
        s += stride
    if covered < t:
        starts.append(s if starts else 0)
    patches = []
    for s in starts:
        window = tensor[..., s : s + length]
        short = length - window.shape[-1]
        if short > 0:
            fill = np.repeat(window[..., -1:], short, axis=-1)
            window = np.concatenate([window, fill], axis=-1)
        patches.append(np.ascontiguousarray(window))
    return patches, starts


# --- flat binary tensor container ------------------------------------------

TENSOR_MAGIC = b"AEF1"


def write_tensor(path, arr):
    """Magic, u32 dim count, u32 dims, then float32 payload (little-endian)."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != TENSOR_MAGIC:
        raise FormatError(f"{path}: bad tensor magic")
    if len(data) < 8:
        raise ParseError(f"{path}: truncated header")
    (ndim,) = struct.unpack("<I", data[4:8])
    head = 8 + 4 * ndim
    if len(data) < head:
        raise ParseError(f"{path}: truncated dims")
    shape = struct.unpack(f"<{ndim}I", data[8:head])
    count = int(np.prod(shape)) if ndim else 0
    if len(data) < head + 4 * count:
        raise ParseError(f"{path}: truncated payload")
    return np.frombuffer(data[head : head + 4 * count], "<f4").reshape(shape).copy()
