"""Checkpoint I/O.

Layout: one UTF-8 JSON header line terminated by ``\\n``, followed by a flat
little-endian float64 array. The header lists ``segments`` as
``[name, offset, length]`` in units of float64 elements; the segments are,
in order, ``actor``, ``critic``, ``log_std``, ``obs_mean``, ``obs_var`` and
``obs_count`` (length 1).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import CheckpointMismatchError
from .network import MLP, NetworkParams

MAGIC = "pptrl-checkpoint"
VERSION = 1


def save(path, params: NetworkParams, config: dict | None = None) -> None:
    parts = [
        ("actor", params.actor.flat),
        ("critic", params.critic.flat),
        ("log_std", params.log_std),
        ("obs_mean", params.obs_mean),
        ("obs_var", params.obs_var),
        ("obs_count", np.array([params.obs_count])),
    ]
    segments, off = [], 0
    for name, arr in parts:
        segments.append([name, off, int(arr.size)])
        off += arr.size
    header = {
        "format": MAGIC,
        "version": VERSION,
        "actor_sizes": list(params.actor.sizes),
        "critic_sizes": list(params.critic.sizes),
        "segments": segments,
        "n_floats": off,
        "config": config or {},
    }
    data = np.concatenate([np.asarray(a, dtype=float).reshape(-1) for _, a in parts]).astype("<f8")
    with open(path, "wb") as f:
        f.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        f.write(data.tobytes())


def load(path, expected_config: dict | None = None) -> tuple[NetworkParams, dict]:
    """Read a checkpoint; optionally require its stored config to match."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CheckpointMismatchError("missing header line")
    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("format") != MAGIC or header.get("version") != VERSION:
        raise CheckpointMismatchError("not a checkpoint of a supported version")
    data = np.frombuffer(raw[nl + 1:], dtype="<f8").astype(float)
    if data.size != header["n_floats"]:
        raise CheckpointMismatchError("payload length does not match header")
    if expected_config is not None and header["config"] != expected_config:
        raise CheckpointMismatchError("checkpoint was written for a different config")
    seg = {name: data[off:off + n] for name, off, n in header["segments"]}
    actor = MLP(header["actor_sizes"], seg["actor"])
    critic = MLP(header["critic_sizes"], seg["critic"])
    params = NetworkParams(actor, critic, seg["log_std"].copy(), seg["obs_mean"].copy(),
                           seg["obs_var"].copy(), float(seg["obs_count"][0]))
    return params, header["config"]
