"""Checkpoints as a plain-text manifest plus a flat little-endian float64 payload.

Manifest lines are ``key = value``. ``config.<field>`` values and ``meta.<key>``
values are JSON; ``param.<name>`` values read ``shape=<r>,<c> offset=<bytes>
nbytes=<bytes>`` and point into the payload file named by ``payload``.
"""

import json
import os

import numpy as np

from .errors import DataError
from .model import Model, ModelConfig

FORMAT = "poskernel-checkpoint/1"


def save_checkpoint(model, prefix, meta=None):
    """Write ``<prefix>.manifest`` and ``<prefix>.bin``; returns the manifest path."""
    payload_path = prefix + ".bin"
    lines = [f"format = {FORMAT}", f"payload = {os.path.basename(payload_path)}", "dtype = float64-le"]
    for key, value in model.config.to_dict().items():
        lines.append(f"config.{key} = {json.dumps(value, sort_keys=True)}")
    for key, value in sorted((meta or {}).items()):
        lines.append(f"meta.{key} = {json.dumps(value, sort_keys=True)}")
    offset = 0
    with open(payload_path, "wb") as fh:
        for name, p in model.parameters().items():
            raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
            shape = ",".join(str(n) for n in p.shape)
            lines.append(f"param.{name} = shape={shape} offset={offset} nbytes={len(raw)}")
            fh.write(raw)
            offset += len(raw)
    with open(prefix + ".manifest", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return prefix + ".manifest"


def read_manifest(path):
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition(" = ")
            if not sep:
                raise DataError(f"{path}:{n}: expected 'key = value'")
            entries[key] = value
    if entries.get("format") != FORMAT:
        raise DataError(f"{path}: unsupported checkpoint format {entries.get('format')!r}")
    return entries


def load_checkpoint(prefix):
    """Rebuild the model stored at ``prefix``; returns ``(model, meta)``."""
    manifest = prefix if prefix.endswith(".manifest") else prefix + ".manifest"
    entries = read_manifest(manifest)
    config = {k[len("config."):]: json.loads(v) for k, v in entries.items() if k.startswith("config.")}
    meta = {k[len("meta."):]: json.loads(v) for k, v in entries.items() if k.startswith("meta.")}
    with open(os.path.join(os.path.dirname(manifest), entries["payload"]), "rb") as fh:
        payload = fh.read()
    state = {}
    for key, value in entries.items():
        if not key.startswith("param."):
            continue
        fields = dict(part.split("=", 1) for part in value.split())
        shape = tuple(int(n) for n in fields["shape"].split(",") if n)
        offset, nbytes = int(fields["offset"]), int(fields["nbytes"])
        if offset + nbytes > len(payload):
            raise DataError(f"{manifest}: {key} points past the end of the payload")
        state[key[len("param."):]] = np.frombuffer(payload, dtype="<f8", count=nbytes // 8,
                                                   offset=offset).reshape(shape)
    model = Model(ModelConfig.from_dict(config))
    model.load_state_dict(state)
    return model, meta
