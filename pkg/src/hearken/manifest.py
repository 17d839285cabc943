"""Dataset manifest: one clip per line.

Format: ``clip_id<TAB>path<TAB>class_id<TAB>origin<TAB>param-blob`` where
origin is raw|emda|vtlp and the param blob is a comma-separated key=value
list ("-" when empty).  Paths are stored as written; callers resolve them
relative to the manifest location.
"""

import os
from dataclasses import dataclass, field

from hearken.errors import ParseError

ORIGINS = ("raw", "emda", "vtlp")


@dataclass
class ClipEntry:
    clip_id: str
    path: str
    class_id: int
    origin: str = "raw"
    params: dict = field(default_factory=dict)


def format_params(params: dict) -> str:
    if not params:
        return "-"
    return ",".join(f"{k}={params[k]}" for k in params)


def parse_params(blob: str) -> dict:
    if blob == "-" or blob == "":
        return {}
    out = {}
    for item in blob.split(","):
        k, _, v = item.partition("=")
        try:
            out[k] = float(v)
        except ValueError:
            out[k] = v
    return out


def write_manifest(path, entries, relative_to=None):
    """`relative_to` relativizes absolute clip paths, keeping the file relocatable."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            p = e.path
            if relative_to is not None and os.path.isabs(p):
                p = os.path.relpath(p, relative_to)
            fh.write(f"{e.clip_id}\t{p}\t{e.class_id}\t{e.origin}\t{format_params(e.params)}\n")


def read_manifest(path):
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ParseError(f"{path}:{lineno}: expected 5 tab-separated fields")
            cid, p, cls, origin, blob = parts
            if origin not in ORIGINS:
                raise ParseError(f"{path}:{lineno}: unknown origin {origin!r}")
            entries.append(ClipEntry(cid, p, int(cls), origin, parse_params(blob)))
    return entries


def resolve_path(manifest_path, entry_path):
    if os.path.isabs(entry_path):
        return entry_path
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), entry_path)


def classes_of(entries):
    return sorted({e.class_id for e in entries})
