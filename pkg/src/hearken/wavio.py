"""Minimal RIFF/WAVE reader and writer.

Supports uncompressed PCM (8/16/24-bit integer, 32-bit float), mono or stereo.
Integer samples are scaled by 2**(bits-1) - 1 so that a full-scale write/read
round trip is bit-exact; the one extra negative code clamps to -1.0.
"""

import struct

import numpy as np

from hearken.errors import FormatError, ParseError

_PCM_INT = 1
_PCM_FLOAT = 3


def load_wav(path):
    """Read a WAV file, returning (samples float64 mono in [-1,1], sample_rate)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12:
        raise ParseError(f"{path}: truncated RIFF header")
    if data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4 : pos + 8])
        body = data[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise ParseError(f"{path}: short fmt chunk")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            if len(body) < size:
                raise ParseError(f"{path}: data chunk truncated")
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or payload is None:
        raise ParseError(f"{path}: missing fmt or data chunk")
    codec, channels, rate, _, block_align, bits = fmt
    if codec not in (_PCM_INT, _PCM_FLOAT):
        raise FormatError(f"{path}: unsupported codec tag {codec}")
    if channels not in (1, 2):
        raise FormatError(f"{path}: {channels} channels unsupported")

    if codec == _PCM_FLOAT:
        if bits != 32:
            raise FormatError(f"{path}: float WAV must be 32-bit, got {bits}")
        x = np.frombuffer(payload[: len(payload) - len(payload) % 4], "<f4").astype(np.float64)
    elif bits == 8:
        x = (np.frombuffer(payload, np.uint8).astype(np.float64) - 128.0) / 127.0
    elif bits == 16:
        n = len(payload) - len(payload) % 2
        x = np.frombuffer(payload[:n], "<i2").astype(np.float64) / 32767.0
    elif bits == 24:
        n = len(payload) - len(payload) % 3
        raw = np.frombuffer(payload[:n], np.uint8).reshape(-1, 3)
        vals = (
            raw[:, 0].astype(np.int32)
            | (raw[:, 1].astype(np.int32) << 8)
            | (raw[:, 2].astype(np.int32) << 16)
        )
        vals = np.where(vals >= 1 << 23, vals - (1 << 24), vals)
        x = vals.astype(np.float64) / float((1 << 23) - 1)
    else:
        raise FormatError(f"{path}: unsupported bit depth {bits}")

    if channels == 2:
        x = x[: len(x) - len(x) % 2].reshape(-1, 2).mean(axis=1)
    np.clip(x, -1.0, 1.0, out=x)
    return x, int(rate)


def save_wav(path, samples, sample_rate, bits=16):
    """Write mono PCM; float input is clipped to [-1,1] first."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    if bits == 16:
        pcm = np.round(x * 32767.0).astype("<i2").tobytes()
        codec, block = _PCM_INT, 2
    elif bits == 32:
        pcm = x.astype("<f4").tobytes()
        codec, block = _PCM_FLOAT, 4
    else:
        raise FormatError(f"unsupported write depth {bits}")
    hdr = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(pcm),
        b"WAVE",
        b"fmt ",
        16,
        codec,
        1,
        int(sample_rate),
        int(sample_rate) * block,
        block,
        bits,
        b"data",
        len(pcm),
    )
    with open(path, "wb") as fh:
        fh.write(hdr)
        fh.write(pcm)
