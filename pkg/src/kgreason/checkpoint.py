"""Versioned checkpoint files shared by the policy and embedding models.

A checkpoint is an .npz archive holding the parameter arrays verbatim plus
one JSON metadata blob (format version, model kind, hyperparameters), so a
save/load round trip is bit-exact.
"""

from __future__ import annotations

import json

import numpy as np

FORMAT_VERSION = 1
_META_KEY = "__meta__"


def save_checkpoint(path, kind, meta, arrays):
    payload = dict(arrays)
    if _META_KEY in payload:
        raise ValueError(f"array name {_META_KEY!r} is reserved")
    header = {"format_version": FORMAT_VERSION, "kind": kind, "meta": meta}
    payload[_META_KEY] = np.frombuffer(
        json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    with open(path, "wb") as handle:
        np.savez(handle, **payload)


def load_checkpoint(path):
    """Returns (kind, meta, arrays)."""
    with np.load(path) as archive:
        raw = archive[_META_KEY].tobytes().decode("utf-8")
        header = json.loads(raw)
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint format {header.get('format_version')}"
            )
        arrays = {
            name: archive[name] for name in archive.files if name != _META_KEY
        }
    return header["kind"], header["meta"], arrays
