"""Deterministic synthetic sound-event corpus.

Eight event families with distinct spectro-temporal signatures (tonal,
sweeping, transient, modulated) are embedded in low-level background noise at
randomized onsets.  Everything is a pure function of (definitions, counts,
seed): per-clip generators are derived from the output index, so the corpus
is byte-identical across runs and safe to parallelize per clip.
"""

import os
from dataclasses import dataclass

import numpy as np

from hearken import dsp, manifest, wavio
from hearken.errors import DomainError
from hearken.seeding import STAGE_HIGHLIGHT, STAGE_SYNTH, derive_rng

RATE = 16000


@dataclass
class EventClassDef:
    class_id: int
    kind: str
    f0_range: tuple = (200.0, 400.0)
    dur_range: tuple = (3.0, 8.0)        # whole-clip duration, seconds
    event_fraction: tuple = (0.5, 0.9)   # event length relative to the clip
    snr_db: tuple = (20.0, 30.0)


KINDS = (
    "tone_harmonics",
    "chirp",
    "noise_burst",
    "am_noise",
    "click_train",
    "square",
    "surf",
    "impulse",
)


def default_classes():
    f0 = {
        "tone_harmonics": (200.0, 400.0),
        "chirp": (500.0, 3000.0),
        "noise_burst": (0.0, 8000.0),
        "am_noise": (0.0, 8000.0),
        "click_train": (0.0, 8000.0),
        "square": (100.0, 200.0),
        "surf": (0.0, 600.0),
        "impulse": (0.0, 8000.0),
    }
    return [EventClassDef(i, kind, f0_range=f0[kind]) for i, kind in enumerate(KINDS)]


def _envelope(n, rng, attack=0.05, release=0.1):
    env = np.ones(n)
    na = max(1, int(attack * n))
    nr = max(1, int(release * n))
    env[:na] = np.linspace(0.0, 1.0, na)
    env[-nr:] *= np.linspace(1.0, 0.0, nr)
    return env


def _render_event(defn: EventClassDef, n: int, rng) -> np.ndarray:
    t = np.arange(n) / RATE
    lo, hi = defn.f0_range
    if defn.kind == "tone_harmonics":
        f0 = rng.uniform(lo, hi)
        phase = rng.uniform(0, 2 * np.pi, size=3)
        x = np.zeros(n)
        for k, amp in enumerate((1.0, 0.5, 0.25)):
            x += amp * np.sin(2 * np.pi * f0 * (k + 1) * t + phase[k])
    elif defn.kind == "chirp":
        f_start = rng.uniform(lo, lo + (hi - lo) * 0.3)
        f_end = rng.uniform(lo + (hi - lo) * 0.7, hi)
        x = np.sin(2 * np.pi * (f_start * t + 0.5 * (f_end - f_start) / t[-1] * t**2))
    elif defn.kind == "noise_burst":
        x = np.zeros(n)
        for _ in range(rng.integers(2, 5)):
            start = rng.integers(0, max(1, n - RATE // 4))
            w = int(RATE * rng.uniform(0.05, 0.25))
            seg = rng.standard_normal(w) * np.exp(-np.arange(w) / (0.3 * w))
            x[start : start + w] += seg[: max(0, n - start)]
    elif defn.kind == "am_noise":
        fm = rng.uniform(2.0, 8.0)
        x = rng.standard_normal(n) * (0.55 + 0.45 * np.sin(2 * np.pi * fm * t))
    elif defn.kind == "click_train":
        rate_hz = rng.uniform(8.0, 20.0)
        x = np.zeros(n)
        w = 64
        kernel = np.exp(-np.arange(w) / 8.0) * np.cos(2 * np.pi * rng.uniform(1500, 4000) * np.arange(w) / RATE)
        step = int(RATE / rate_hz)
        for start in range(0, n - w, step):
            x[start : start + w] += kernel
    elif defn.kind == "square":
        f0 = rng.uniform(lo, hi)
        x = np.zeros(n)
        k = 1
        while f0 * k < 6000:  # band-limited square: odd harmonics
            x += np.sin(2 * np.pi * f0 * k * t) / k
            k += 2
    elif defn.kind == "surf":
        noise = rng.standard_normal(n)
        kernel = np.hanning(257)
        low = np.convolve(noise, kernel / kernel.sum(), mode="same")
        swell = 0.4 + 0.6 * (0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.2, 0.6) * t + rng.uniform(0, 6)))
        x = low * swell
    elif defn.kind == "impulse":
        x = np.zeros(n)
        for _ in range(rng.integers(1, 4)):
            pos = rng.integers(0, n - 512)
            x[pos : pos + 512] += rng.choice([-1.0, 1.0]) * np.exp(-np.arange(512) / 48.0)
    else:
        raise DomainError(f"unknown event kind {defn.kind!r}")
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x / peak
    if defn.kind not in ("impulse", "noise_burst", "click_train"):
        x *= _envelope(n, rng)
    return x


def render_clip(defn: EventClassDef, rng) -> np.ndarray:
    """One clip: background noise with the event at a random onset."""
    dur = rng.uniform(*defn.dur_range)
    n = int(dur * RATE)
    ev_len = int(n * rng.uniform(*defn.event_fraction))
    onset = int(rng.uniform(0.0, n - ev_len))
    event = _render_event(defn, ev_len, rng)

    clip = rng.standard_normal(n)
    clip *= 1.0 / np.sqrt(np.mean(clip**2))  # unit-RMS background
    snr = rng.uniform(*defn.snr_db)
    ev_rms = np.sqrt(np.mean(event**2))
    if ev_rms > 0:
        event = event * (10.0 ** (snr / 20.0) / ev_rms)
    clip[onset : onset + ev_len] += event
    clip *= 0.9 / np.max(np.abs(clip))
    return clip


def synth_corpus(classes, clips_per_class: int, out_dir, seed: int):
    """Write WAVs + manifest; returns the manifest entries."""
    if clips_per_class < 2:
        raise DomainError("need at least 2 clips per class")
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    index = 0
    for defn in classes:
        for _ in range(clips_per_class):
            rng = derive_rng(seed, STAGE_SYNTH, index)
            clip = render_clip(defn, rng)
            clip_id = f"clip{index:05d}_c{defn.class_id}"
            path = os.path.join(out_dir, clip_id + ".wav")
            wavio.save_wav(path, clip, RATE)
            entries.append(manifest.ClipEntry(clip_id, path, defn.class_id, "raw", {}))
            index += 1
    # written relative so the corpus directory is relocatable
    manifest.write_manifest(os.path.join(out_dir, "manifest.tsv"), entries, relative_to=out_dir)
    return entries


@dataclass
class MomentSegment:
    video_id: str
    moment_id: int
    t_start: float
    t_end: float
    label: int


def write_segments(path, segments):
    with open(path, "w", encoding="utf-8") as fh:
        for s in segments:
            fh.write(f"{s.video_id}\t{s.moment_id}\t{s.t_start:.3f}\t{s.t_end:.3f}\t{s.label}\n")


def read_segments(path):
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            vid, mid, t0, t1, lab = line.split("\t")
            out.append(MomentSegment(vid, int(mid), float(t0), float(t1), int(lab)))
    return out


def synth_highlight_set(n_videos: int, moments_per_video: int, positive_rate: float,
                        out_dir, seed: int, moment_sec: float = 2.0,
                        event_kind: str = "tone_harmonics"):
    """Audio streams whose positive moments contain the designated event sound.

    Writes one WAV per video plus ``segments.tsv``; features come later from
    the extraction stage.  Returns the segment list.
    """
    if not 0.0 < positive_rate < 1.0:
        raise DomainError("positive_rate must be in (0, 1)")
    os.makedirs(out_dir, exist_ok=True)
    defn = next(d for d in default_classes() if d.kind == event_kind)
    n_pos = int(round(moments_per_video * positive_rate))
    segments = []
    for v in range(n_videos):
        rng = derive_rng(seed, STAGE_HIGHLIGHT, v)
        n = int(moments_per_video * moment_sec * RATE)
        stream = rng.standard_normal(n)
        stream *= 1.0 / np.sqrt(np.mean(stream**2))
        positives = set(rng.choice(moments_per_video, size=n_pos, replace=False).tolist())
        vid = f"video{v:03d}"
        for m in range(moments_per_video):
            a = int(m * moment_sec * RATE)
            b = int((m + 1) * moment_sec * RATE)
            if m in positives:
                ev_len = int((b - a) * rng.uniform(0.6, 0.9))
                onset = a + int(rng.uniform(0, (b - a) - ev_len))
                event = _render_event(defn, ev_len, rng)
                snr = rng.uniform(*defn.snr_db)
                ev_rms = np.sqrt(np.mean(event**2))
                stream[onset : onset + ev_len] += event * (10.0 ** (snr / 20.0) / ev_rms)
            segments.append(MomentSegment(vid, m, a / RATE, b / RATE, int(m in positives)))
        stream *= 0.9 / np.max(np.abs(stream))
        wavio.save_wav(os.path.join(out_dir, vid + ".wav"), stream, RATE)
    write_segments(os.path.join(out_dir, "segments.tsv"), segments)
    return segments
