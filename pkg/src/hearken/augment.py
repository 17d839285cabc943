"""Class-preserving training-data synthesis.

Two mechanisms: mixing two same-class sounds with random weight, delay and
per-source parametric equalization; and a piecewise-linear warp of the
filterbank center frequencies applied at feature-computation time.
"""

import os
from dataclasses import dataclass

import numpy as np

from hearken import dsp, kernels, manifest
from hearken.dsp import Waveform
from hearken.errors import DomainError
from hearken.seeding import STAGE_AUGMENT, derive_rng

F0_RANGE = (100.0, 6000.0)
GAIN_RANGE = (-8.0, 8.0)
Q_RANGE = (1.0, 9.0)
WARP_RANGE = (0.9, 1.1)
WARP_KNEE_HZ = 4800.0


@dataclass
class EqParams:
    """Second-order peaking equalizer: center frequency, gain (dB), Q."""

    f0: float
    g: float
    q: float


@dataclass
class BiquadCoeffs:
    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    def astuple(self):
        return (self.b0, self.b1, self.b2, self.a1, self.a2)


@dataclass
class EmdaParams:
    alpha: float
    beta: float
    max_delay: float  # seconds
    psi1: EqParams
    psi2: EqParams


def design_peaking_eq(p: EqParams, sample_rate: int) -> BiquadCoeffs:
    """Constant-Q peaking biquad (audio cookbook form); |H(f0)| is exactly g dB."""
    if not 0.0 < p.f0 < sample_rate / 2.0:
        raise DomainError(f"center frequency {p.f0} outside (0, Nyquist)")
    a = 10.0 ** (p.g / 40.0)
    omega = 2.0 * np.pi * p.f0 / sample_rate
    alpha_c = np.sin(omega) / (2.0 * p.q)
    a0 = 1.0 + alpha_c / a
    return BiquadCoeffs(
        b0=(1.0 + alpha_c * a) / a0,
        b1=(-2.0 * np.cos(omega)) / a0,
        b2=(1.0 - alpha_c * a) / a0,
        a1=(-2.0 * np.cos(omega)) / a0,
        a2=(1.0 - alpha_c / a) / a0,
    )


def eq_response(c: BiquadCoeffs, freqs, sample_rate: int):
    """Complex frequency response H(e^jw) at the given frequencies."""
    z = np.exp(-2j * np.pi * np.asarray(freqs, dtype=np.float64) / sample_rate)
    num = c.b0 + c.b1 * z + c.b2 * z**2
    den = 1.0 + c.a1 * z + c.a2 * z**2
    return num / den


def apply_eq(w: Waveform, c: BiquadCoeffs) -> Waveform:
    y = kernels.biquad(w.samples, c.astuple())
    return Waveform(y, w.sample_rate)


def draw_eq_params(rng) -> EqParams:
    return EqParams(
        f0=rng.uniform(*F0_RANGE), g=rng.uniform(*GAIN_RANGE), q=rng.uniform(*Q_RANGE)
    )


def draw_emda_params(rng, max_delay: float) -> EmdaParams:
    return EmdaParams(
        alpha=rng.uniform(0.0, 1.0),
        beta=rng.uniform(0.0, 1.0),
        max_delay=max_delay,
        psi1=draw_eq_params(rng),
        psi2=draw_eq_params(rng),
    )


def emda_mix(s1: Waveform, s2: Waveform, p: EmdaParams) -> Waveform:
    """alpha*EQ(s1) + (1-alpha)*EQ(s2 delayed by beta*max_delay), re-peak-normalized."""
    if s1.sample_rate != s2.sample_rate:
        raise DomainError("EMDA sources must share one sample rate")
    if len(s1.samples) == 0 or len(s2.samples) == 0:
        raise DomainError("EMDA sources must be non-empty")
    fs = s1.sample_rate
    y1 = kernels.biquad(s1.samples, design_peaking_eq(p.psi1, fs).astuple())
    y2 = kernels.biquad(s2.samples, design_peaking_eq(p.psi2, fs).astuple())
    delay = int(round(p.beta * p.max_delay * fs))
    n = max(len(y1), delay + len(y2))
    out = np.zeros(n)
    out[: len(y1)] += p.alpha * y1
    out[delay : delay + len(y2)] += (1.0 - p.alpha) * y2
    peak = np.max(np.abs(out)) if n else 0.0
    if peak > 0.0:
        out /= peak
    return Waveform(out, fs)


def emda_sample(s1: Waveform, s2: Waveform, rng, max_delay: float | None = None) -> Waveform:
    """Draw mixing parameters from rng and mix; max_delay defaults to len(s1)."""
    if max_delay is None:
        max_delay = len(s1.samples) / s1.sample_rate
    return emda_mix(s1, s2, draw_emda_params(rng, max_delay))


def warp_frequency(freqs, warp: float, f_hi: float = WARP_KNEE_HZ, nyquist: float = 8000.0):
    """Piecewise-linear frequency map, exactly invertible and endpoint-preserving.

    Scales by `warp` below the knee and compresses/expands the remainder so the
    Nyquist endpoint is fixed; composing `warp` with `1/warp` is the identity.
    The feature-level range check lives in `vtlp_warp`, so inverse factors
    outside the augmentation box remain expressible here.
    """
    if not 0.0 < warp < nyquist / f_hi:
        raise DomainError(f"warp {warp} leaves no headroom above the {f_hi} Hz knee")
    f = np.asarray(freqs, dtype=np.float64)
    knee = f_hi * min(warp, 1.0) / warp
    slope = (nyquist - f_hi * min(warp, 1.0)) / (nyquist - knee)
    return np.where(f <= knee, warp * f, nyquist - slope * (nyquist - f))


def vtlp_warp(power, energy, warp: float):
    """Filterbank features with warped filter positions, [n_frames x 50].

    Takes the frame power spectra and raw energies of `dsp.power_spectra`;
    warp=1 reproduces `log_mel_filterbank` exactly.
    """
    if not WARP_RANGE[0] <= warp <= WARP_RANGE[1]:
        raise DomainError(f"warp {warp} outside {WARP_RANGE}")
    boundaries = warp_frequency(dsp.mel_boundaries(), warp)
    return dsp.bank_features(power, energy, boundaries)


def augment_dataset(entries, n_total: int, emda_fraction: float, seed: int, out_dir,
                    manifest_dir=None):
    """Emit n_total synthetic clips, class-balanced to within one clip.

    EMDA outputs are written as WAV files under out_dir; warp entries reference
    their source clip and carry the warp factor, applied at feature time.
    Entry parameters record everything needed to regenerate the clip.
    """
    if not entries:
        raise DomainError("empty manifest")
    if n_total < 0:
        raise DomainError("n_total must be >= 0")
    if n_total == 0:
        return list(entries)
    by_class: dict = {}
    for e in entries:
        by_class.setdefault(e.class_id, []).append(e)
    classes = sorted(by_class)

    counts = {c: n_total // len(classes) for c in classes}
    extra_rng = derive_rng(seed, STAGE_AUGMENT)
    for c in extra_rng.permutation(classes)[: n_total % len(classes)]:
        counts[int(c)] += 1

    os.makedirs(out_dir, exist_ok=True)
    out = list(entries)
    index = 0
    for c in classes:
        sources = by_class[c]
        for _ in range(counts[c]):
            rng = derive_rng(seed, STAGE_AUGMENT, index)
            use_emda = rng.random() < emda_fraction
            clip_id = f"aug{index:05d}_c{c}_{'emda' if use_emda else 'vtlp'}"
            if use_emda:
                if len(sources) >= 2:
                    i, j = rng.choice(len(sources), size=2, replace=False)
                else:
                    i = j = 0  # singleton class mixes the clip with itself
                e1, e2 = sources[int(i)], sources[int(j)]
                s1 = dsp.standardize(dsp.load_wav(_resolve(e1, manifest_dir)))
                s2 = dsp.standardize(dsp.load_wav(_resolve(e2, manifest_dir)))
                params = draw_emda_params(rng, max_delay=s1.duration)
                mixed = emda_mix(s1, s2, params)
                path = os.path.join(out_dir, clip_id + ".wav")
                dsp.save_wav(path, mixed)
                out.append(
                    manifest.ClipEntry(
                        clip_id, path, c, "emda",
                        {
                            "alpha": params.alpha, "beta": params.beta,
                            "max_delay": params.max_delay,
                            "f0a": params.psi1.f0, "ga": params.psi1.g, "qa": params.psi1.q,
                            "f0b": params.psi2.f0, "gb": params.psi2.g, "qb": params.psi2.q,
                            "src1": e1.clip_id, "src2": e2.clip_id,
                        },
                    )
                )
            else:
                src = sources[int(rng.integers(len(sources)))]
                warp = rng.uniform(*WARP_RANGE)
                out.append(
                    manifest.ClipEntry(
                        clip_id, src.path, c, "vtlp", {"warp": warp, "src": src.clip_id}
                    )
                )
            index += 1
    return out


def _resolve(entry, manifest_dir):
    if manifest_dir is None or os.path.isabs(entry.path):
        return entry.path
    return os.path.join(manifest_dir, entry.path)
