"""Binary checkpoints of the flat adapter state.

Layout: one JSON header line terminated by ``\\n``, followed by the sections
listed in the header as little-endian float64 arrays. The ``state`` section is
the flat :class:`~spherepeft.grad_engine.AdapterState` vector; ``adam_m`` and
``adam_v`` hold the optimizer moments so a run can resume exactly.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .config import RunConfig
from .grad_engine import AdamState, AdapterState

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint"]

FORMAT = "spherepeft-checkpoint/1"
DTYPE = "<f8"


class CheckpointError(ValueError):
    """Malformed, tampered or mismatched checkpoint."""


def save_checkpoint(path, cfg: RunConfig, state: AdapterState, moments: AdamState | None = None) -> None:
    sections = {"state": state.flatten()}
    if moments is not None:
        sections["adam_m"] = moments.m
        sections["adam_v"] = moments.v
    payload = b"".join(np.asarray(v, dtype=DTYPE).tobytes() for v in sections.values())
    header = {
        "format": FORMAT,
        "config_hash": cfg.config_hash(),
        "param_count": state.size,
        "layout": [[name, list(shape)] for name, shape in state.layout()],
        "sections": [[name, int(v.size)] for name, v in sections.items()],
        "adam_step": None if moments is None else moments.t,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    Path(path).write_bytes(json.dumps(header, sort_keys=True).encode() + b"\n" + payload)


def load_checkpoint(path, cfg: RunConfig):
    """Read a checkpoint written for ``cfg``; returns ``(state, moments or None)``."""
    raw = Path(path).read_bytes()
    head, sep, payload = raw.partition(b"\n")
    if not sep:
        raise CheckpointError("missing header line")
    try:
        header = json.loads(head)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable header: {exc}") from exc
    if header.get("format") != FORMAT:
        raise CheckpointError(f"unsupported format {header.get('format')!r}")
    if header.get("config_hash") != cfg.config_hash():
        raise CheckpointError("checkpoint was written for a different config (hash mismatch)")
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError("payload hash mismatch; checkpoint is corrupted or tampered")
    template = AdapterState.init(cfg)
    if header.get("param_count") != template.size:
        raise CheckpointError(f"parameter count {header.get('param_count')} != {template.size}")
    values = np.frombuffer(payload, dtype=DTYPE).astype(np.float64)
    expected = sum(n for _, n in header["sections"])
    if values.size != expected:
        raise CheckpointError(f"payload holds {values.size} values, header declares {expected}")
    sections, offset = {}, 0
    for name, n in header["sections"]:
        sections[name] = values[offset:offset + n]
        offset += n
    state = template.unflatten(sections["state"])
    moments = None
    if "adam_m" in sections:
        moments = AdamState(sections["adam_m"].copy(), sections["adam_v"].copy(), int(header["adam_step"]))
    return state, moments
