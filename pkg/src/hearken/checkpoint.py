"""Binary model checkpoints.

Layout (little-endian): magic ``AEN1``; architecture id (u32 length + utf-8);
class count (u32); patch length in frames (u32); record count (u32); then per
record: name (u32 length + utf-8), u32 dim count, u32 dims, float32 payload.
Float32 payloads round-trip bit-exactly.  Besides layer parameters, two
reserved records carry the per-band input standardization (``norm.mean``,
``norm.std``).
"""

import struct
from dataclasses import dataclass

import numpy as np

from hearken import models
from hearken.errors import FormatError, ParseError
from hearken.nnet import Network

MAGIC = b"AEN1"


@dataclass
class ModelBundle:
    """A built network plus everything needed to reuse it elsewhere."""

    net: Network
    arch_id: str
    n_classes: int
    patch_frames: int
    tap_index: int
    feature_dim: int
    feat_mean: np.ndarray  # (3, 50) float32
    feat_std: np.ndarray   # (3, 50) float32


def from_built(built: models.BuiltModel, feat_mean=None, feat_std=None) -> ModelBundle:
    shape = (models.N_INPUT_MAPS, models.N_INPUT_BANDS)
    mean = np.zeros(shape, np.float32) if feat_mean is None else np.asarray(feat_mean, np.float32)
    std = np.ones(shape, np.float32) if feat_std is None else np.asarray(feat_std, np.float32)
    return ModelBundle(
        built.net, built.spec.arch_id, built.spec.n_classes, built.spec.patch_frames,
        built.tap_index, built.feature_dim, mean, std,
    )


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_checkpoint(path, bundle: ModelBundle):
    records = list(bundle.net.named_params())
    records.append(("norm.mean", bundle.feat_mean))
    records.append(("norm.std", bundle.feat_std))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_pack_str(bundle.arch_id))
        fh.write(struct.pack("<III", bundle.n_classes, bundle.patch_frames, len(records)))
        for name, arr in records:
            arr = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(_pack_str(name))
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ParseError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def string(self):
        return self.take(self.u32()).decode("utf-8")


def load_checkpoint(path) -> ModelBundle:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    r = _Reader(data, path)
    r.pos = 4
    arch_id = r.string()
    n_classes = r.u32()
    patch_frames = r.u32()
    n_records = r.u32()
    records = {}
    for _ in range(n_records):
        name = r.string()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        payload = r.take(4 * count)
        records[name] = np.frombuffer(payload, "<f4").reshape(shape).copy()

    built = models.build(models.arch_spec(arch_id, n_classes, patch_frames))
    for name, param in built.net.named_params():
        if name not in records:
            raise ParseError(f"{path}: missing parameter record {name}")
        if records[name].shape != param.shape:
            raise ParseError(f"{path}: shape mismatch for {name}")
        param[...] = records[name]
    mean = records.get("norm.mean")
    std = records.get("norm.std")
    return from_built(built, mean, std)
