"""Network architectures over feature patches.

Architectures are written as token lists mirroring the layer tables:
``conv:<in>:<out>`` (3x3 kernels), ``pool:<time>:<freq>`` and ``fc:<width>``.
The builder inserts ReLU after every convolution, ReLU + dropout after every
hidden fully connected layer, then appends the class layer and softmax.

Tensors are laid out (maps, bands, frames) - the native patch layout, with
the long time axis innermost for kernel efficiency.  Pool tokens stay in the
tables' time-by-frequency notation and are mapped onto that layout here.
"""

from dataclasses import dataclass, field

import numpy as np

from hearken.errors import DomainError, ShapeError
from hearken.nnet import Conv3x3, Dropout, Flatten, Linear, MaxPool, Network, ReLU, Softmax

N_INPUT_MAPS = 3
N_INPUT_BANDS = 50

ARCH_TABLES = {
    "A": [
        "conv:3:64", "conv:64:64", "pool:1:2",
        "conv:64:128", "conv:128:128", "pool:2:2",
        "fc:1024", "fc:1024",
    ],
    "B": [
        "conv:3:64", "conv:64:64", "pool:1:2",
        "conv:64:128", "conv:128:128", "pool:2:2",
        "conv:128:256", "conv:256:256", "pool:2:1",
        "fc:2048", "fc:2048",
    ],
    "A-mini": [
        "conv:3:16", "conv:16:16", "pool:1:2",
        "conv:16:32", "conv:32:32", "pool:2:2",
        "fc:128", "fc:128",
    ],
}


@dataclass
class ArchSpec:
    arch_id: str
    tokens: list
    n_classes: int
    patch_frames: int
    input_shape: tuple = field(init=False)

    def __post_init__(self):
        if self.n_classes < 2:
            raise DomainError("need at least 2 classes")
        self.input_shape = (N_INPUT_MAPS, N_INPUT_BANDS, self.patch_frames)


def arch_spec(arch_id: str, n_classes: int, patch_frames: int) -> ArchSpec:
    """Resolve an architecture id; custom chains use ``custom:tok|tok|...``."""
    if arch_id in ARCH_TABLES:
        tokens = list(ARCH_TABLES[arch_id])
    elif arch_id.startswith("custom:"):
        tokens = [t for t in arch_id[len("custom:"):].split("|") if t]
    else:
        raise DomainError(f"unknown architecture {arch_id!r}")
    return ArchSpec(arch_id, tokens, n_classes, patch_frames)


@dataclass
class BuiltModel:
    net: Network
    spec: ArchSpec
    tap_index: int      # layer index of the post-ReLU penultimate FC activation
    feature_dim: int
    flatten_dim: int


def build(spec: ArchSpec, rng=None, dtype=np.float32) -> BuiltModel:
    """Instantiate the layer chain, validating shape compatibility as it grows."""
    layers = []
    shape = spec.input_shape
    flattened = False
    fc_positions = []
    for tok in spec.tokens + [f"fc:{spec.n_classes}"]:
        parts = tok.split(":")
        kind = parts[0]
        if kind == "conv":
            if flattened:
                raise ShapeError("conv after flatten")
            c_in, c_out = int(parts[1]), int(parts[2])
            layers.append(Conv3x3(c_in, c_out, dtype=dtype))
            shape = layers[-1].out_shape(shape)
            layers.append(ReLU())
        elif kind == "pool":
            t_block, f_block = int(parts[1]), int(parts[2])
            layers.append(MaxPool(f_block, t_block))  # (bands, frames) layout
            shape = layers[-1].out_shape(shape)
        elif kind == "fc":
            if not flattened:
                layers.append(Flatten())
                shape = layers[-1].out_shape(shape)
                flattened = True
            width = int(parts[1])
            layers.append(Linear(shape[0], width, dtype=dtype))
            fc_positions.append(len(layers) - 1)
            shape = (width,)
        else:
            raise DomainError(f"unknown layer token {tok!r}")
    # hidden FCs get ReLU + dropout; the class layer gets softmax
    out_layers = []
    tap_index = -1
    for i, layer in enumerate(layers):
        out_layers.append(layer)
        if i in fc_positions[:-1]:
            out_layers.append(ReLU())
            if i == fc_positions[-2]:
                tap_index = len(out_layers)  # forward(upto=tap_index) ends after this ReLU
            out_layers.append(Dropout(0.5))
    out_layers.append(Softmax())
    net = Network(out_layers, dtype=dtype)
    net.out_shape(spec.input_shape)  # raises ShapeError on an incompatible chain
    if rng is not None:
        net.init_params(rng)
    flatten_dim = next(l.n_in for l in out_layers if isinstance(l, Linear))
    feature_dim = [l for l in out_layers if isinstance(l, Linear)][-2].n_out
    return BuiltModel(net, spec, tap_index, feature_dim, flatten_dim)


def param_count(net: Network) -> int:
    return net.param_count()
