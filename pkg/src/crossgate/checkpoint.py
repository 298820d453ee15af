"""Versioned binary checkpoints with bit-exact round-trips.

Layout: an 8-byte magic, a little-endian u32 header length, a
canonical JSON header (sorted keys, no whitespace) carrying the full
config, its hash, shapes and counters, then four raw little-endian
float64 blocks: flat parameters, the two Adam moment vectors, and the
Lagrange multipliers. Everything that varies between runs lives in
the header or the blocks, so save(load(f)) reproduces f byte for
byte. Deliberately not a zip container: archive metadata (timestamps)
would break byte identity.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nets
from .config import Config, K_CONSTRAINTS, config_from_dict, config_hash
from .priority import LagrangeState

MAGIC = b"XGATECK1"
VERSION = 1


class CheckpointError(Exception):
    """Raised for unreadable, truncated or inconsistent checkpoints."""


@dataclass
class CheckpointData:
    cfg: Config
    params: dict
    theta: np.ndarray
    adam: nets.Adam
    lagrange: LagrangeState
    epoch: int
    global_step: int


def save_checkpoint(path, cfg: Config, theta: np.ndarray, adam: nets.Adam,
                    lagrange: LagrangeState, epoch: int,
                    global_step: int) -> None:
    from .env import OBS_DIM
    shapes = nets.shapes_for(OBS_DIM, cfg.hidden_width, K_CONSTRAINTS)
    header = {
        "adam_t": adam.t,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "epoch": epoch,
        "global_step": global_step,
        "k": K_CONSTRAINTS,
        "n_params": int(theta.size),
        "shapes": {name: list(s) for name, s in shapes.items()},
        "version": VERSION,
    }
    blob = json.dumps(header, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in (theta, adam.m, adam.v, lagrange.lam):
            fh.write(np.asarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> CheckpointData:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 4 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    if len(raw) < start + hlen:
        raise CheckpointError(f"{path} is truncated (header)")
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path} has a corrupt header: {exc}") from exc
    if header.get("version") != VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {header.get('version')}")
    cfg = config_from_dict(header["config"])
    n = header["n_params"]
    k = header["k"]
    body = raw[start + hlen:]
    expected = (3 * n + k) * 8
    if len(body) != expected:
        raise CheckpointError(
            f"{path} is truncated (expected {expected} payload bytes, "
            f"got {len(body)})")
    flat = np.frombuffer(body, dtype="<f8")
    theta = flat[:n].copy()
    adam = nets.Adam(n)
    adam.m = flat[n:2 * n].copy()
    adam.v = flat[2 * n:3 * n].copy()
    adam.t = header["adam_t"]
    lam = flat[3 * n:].copy()
    shapes = {name: tuple(s) for name, s in header["shapes"].items()}
    try:
        params = nets.unflatten(theta, shapes)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    lagrange = LagrangeState.from_config(cfg)
    lagrange.lam = lam
    return CheckpointData(cfg=cfg, params=params, theta=theta, adam=adam,
                          lagrange=lagrange, epoch=header["epoch"],
                          global_step=header["global_step"])
