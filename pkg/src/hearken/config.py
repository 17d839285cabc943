"""Flat key=value run configuration with dotted section keys.

Files hold one ``key=value`` per line ('#' starts a comment); command-line
overrides win over the file, which wins over the defaults below.  Unknown
keys are rejected.  The effective configuration echoes in the same format,
so a logged config can be fed straight back in.

This module stays numpy-free: the CLI parses configuration before touching
any numeric code so thread-count environment variables can be set first.
"""

from hearken.errors import ConfigError

DEFAULTS = {
    "seed": 0,
    "jobs": 1,
    "arch": "A-mini",
    "patch_frames": 200,
    "batch_size": 32,
    "epochs": 30,
    "lr": 0.01,
    "lr_decay": 0.5,
    "lr_patience": 3,
    "stop_accuracy": None,
    "train_fraction": 0.75,
    "mil.enabled": False,
    "mil.bag_size": 2,
    "mil.aggregation": "max",
    "aug.n_total": 0,
    "aug.emda_fraction": 0.5,
    "trim.threshold_db": -60.0,
    "trim.min_gap_ms": 200.0,
    "eval.overlap": 0.5,
    "synth.clips_per_class": 20,
    "synth.videos": 20,
    "synth.moments": 8,
    "synth.positive_rate": 0.25,
    "synth.event_kind": "tone_harmonics",
    "rank.loss": "ranking",
    "rank.runs": 5,
    "rank.epochs": 150,
    "rank.lr": 0.02,
    "rank.delta": 1.0,
    "rank.group": 2,
    "rank.hidden": "64,16",
    "rank.train_fraction": 0.5,
}

_OPTIONAL_FLOATS = {"stop_accuracy"}


def _coerce(key, raw):
    default = DEFAULTS[key]
    if key in _OPTIONAL_FLOATS:
        return None if raw in ("", "none") else float(raw)
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    return raw


def parse_file(path):
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            pairs.append((key.strip(), value.strip()))
    return pairs


def load(config_path=None, overrides=(), seed=None):
    """Merged configuration dict: defaults < file < --set overrides < --seed."""
    cfg = dict(DEFAULTS)
    pairs = list(parse_file(config_path)) if config_path else []
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, value = item.partition("=")
        pairs.append((key.strip(), value.strip()))
    for key, value in pairs:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown configuration key {key!r}")
        cfg[key] = _coerce(key, value)
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def echo(cfg) -> str:
    lines = []
    for key in sorted(cfg):
        v = cfg[key]
        if v is None:
            v = ""
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{key}={v}")
    return "\n".join(lines) + "\n"


def hidden_sizes(cfg):
    try:
        parts = tuple(int(p) for p in str(cfg["rank.hidden"]).split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"rank.hidden: expected comma-separated ints") from None
    if len(parts) != 2:
        raise ConfigError("rank.hidden must name exactly two widths")
    return parts
