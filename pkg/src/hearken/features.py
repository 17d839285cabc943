"""Deep audio features: penultimate fully connected activations.

A trained checkpoint turns 2-sec (200-frame) patches cut with 50% overlap
into L2-normalized activation vectors of the second-to-last fully connected
layer (taken after its ReLU).  Per-moment descriptors are the un-renormalized
mean of the patch vectors inside the moment.
"""

from dataclasses import dataclass

import numpy as np

from hearken import dsp
from hearken.checkpoint import ModelBundle
from hearken.errors import DomainError, ParseError, ShapeError


@dataclass
class AenetFeature:
    vector: np.ndarray  # float32, unit L2 norm (or all-zero)
    t_start: float
    t_end: float


def extract_features(bundle: ModelBundle, w: dsp.Waveform, patch_frames=None, overlap=0.5,
                     dtype=np.float32):
    """One feature per patch; `w` must already be standardized to 16 kHz."""
    if w.sample_rate != dsp.TARGET_RATE:
        raise DomainError(f"expected {dsp.TARGET_RATE} Hz audio; run standardize first")
    if patch_frames is None:
        patch_frames = bundle.patch_frames
    if patch_frames != bundle.patch_frames:
        raise ShapeError(
            f"checkpoint was trained at {bundle.patch_frames}-frame patches, "
            f"cannot extract at {patch_frames}"
        )
    feats = dsp.add_deltas(dsp.log_mel_filterbank(w))
    patches, starts = dsp.patch_stream(feats, patch_frames, overlap)
    x = (np.stack(patches) - bundle.feat_mean[None, :, :, None]) / bundle.feat_std[None, :, :, None]
    x = np.ascontiguousarray(x, dtype=dtype)
    net = bundle.net if dtype == np.float32 else bundle.net.astype(dtype)
    acts = net.forward(x, mode="eval", upto=bundle.tap_index)
    out = []
    for row, s in zip(acts, starts):
        norm = np.linalg.norm(row)
        vec = row / norm if norm > 0 else row
        t0 = s * dsp.FRAME_SEC
        out.append(AenetFeature(vec.astype(np.float32), t0, t0 + patch_frames * dsp.FRAME_SEC))
    return out


def average_clip(features):
    """Elementwise mean of patch vectors; intentionally not re-normalized."""
    if not features:
        raise DomainError("cannot average an empty feature list")
    return np.mean([f.vector for f in features], axis=0).astype(np.float32)


def moment_feature(bundle: ModelBundle, w: dsp.Waveform, t_start: float, t_end: float):
    """Clip-averaged feature of one [t_start, t_end) segment."""
    a = int(round(t_start * w.sample_rate))
    b = int(round(t_end * w.sample_rate))
    seg = dsp.Waveform(w.samples[a:b], w.sample_rate)
    return average_clip(extract_features(bundle, seg))


# --- per-patch feature file --------------------------------------------------

def write_features(path, rows):
    """rows: iterable of (clip_id, AenetFeature)."""
    with open(path, "w", encoding="utf-8") as fh:
        for clip_id, feat in rows:
            blob = feat.vector.astype("<f4").tobytes().hex()
            fh.write(f"{clip_id}\t{feat.t_start:.3f}\t{feat.t_end:.3f}\t{blob}\n")


def read_features(path):
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields")
            cid, t0, t1, blob = parts
            vec = np.frombuffer(bytes.fromhex(blob), "<f4").copy()
            out.append((cid, AenetFeature(vec, float(t0), float(t1))))
    return out
