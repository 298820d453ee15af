"""Binary checkpoint format: byte-exact round-trips and corruption handling."""

import dataclasses
import struct

import numpy as np
import pytest

from crossgate import nets
from crossgate.checkpoint import (MAGIC, CheckpointError, load_checkpoint,
                                  save_checkpoint)
from crossgate.config import Config, K_CONSTRAINTS, config_hash
from crossgate.env import OBS_DIM
from crossgate.priority import LagrangeState


def fresh_state(seed=0, **overrides):
    cfg = dataclasses.replace(Config(), **overrides) if overrides else Config()
    rng = np.random.default_rng(seed)
    params = nets.init_params(OBS_DIM, cfg.hidden_width, K_CONSTRAINTS, rng)
    theta = nets.flatten(params)
    adam = nets.Adam(theta.size)
    adam.m = rng.normal(size=theta.size)
    adam.v = rng.uniform(0.0, 1.0, size=theta.size)
    adam.t = 17
    lagrange = LagrangeState.from_config(cfg)
    lagrange.lam = rng.uniform(0.0, 3.0, size=K_CONSTRAINTS)
    return cfg, theta, adam, lagrange


def test_round_trip_restores_every_field(tmp_path):
    cfg, theta, adam, lagrange = fresh_state(seed=5, gamma=0.97)
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, cfg, theta, adam, lagrange, epoch=12,
                    global_step=24_000)
    data = load_checkpoint(path)
    assert config_hash(data.cfg) == config_hash(cfg)
    assert np.array_equal(data.theta, theta)
    assert np.array_equal(data.adam.m, adam.m)
    assert np.array_equal(data.adam.v, adam.v)
    assert data.adam.t == 17
    assert np.array_equal(data.lagrange.lam, lagrange.lam)
    assert data.epoch == 12 and data.global_step == 24_000
    assert np.array_equal(nets.flatten(data.params), theta)


def test_save_load_save_is_byte_identical(tmp_path):
    cfg, theta, adam, lagrange = fresh_state(seed=1)
    first = tmp_path / "first.ckpt"
    second = tmp_path / "second.ckpt"
    save_checkpoint(first, cfg, theta, adam, lagrange, 3, 6000)
    data = load_checkpoint(first)
    save_checkpoint(second, data.cfg, data.theta, data.adam, data.lagrange,
                    data.epoch, data.global_step)
    assert first.read_bytes() == second.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bogus.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_truncated_payload_rejected(tmp_path):
    cfg, theta, adam, lagrange = fresh_state()
    path = tmp_path / "trunc.ckpt"
    save_checkpoint(path, cfg, theta, adam, lagrange, 1, 100)
    raw = path.read_bytes()
    path.write_bytes(raw[:-50])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_truncated_header_rejected(tmp_path):
    path = tmp_path / "short.ckpt"
    path.write_bytes(MAGIC + struct.pack("<I", 1000) + b"{}")
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_corrupt_header_json_rejected(tmp_path):
    blob = b"this is not json"
    path = tmp_path / "badjson.ckpt"
    path.write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob)
    with pytest.raises(CheckpointError, match="header"):
        load_checkpoint(path)


def test_unsupported_version_rejected(tmp_path):
    cfg, theta, adam, lagrange = fresh_state()
    path = tmp_path / "v9.ckpt"
    save_checkpoint(path, cfg, theta, adam, lagrange, 1, 100)
    raw = bytearray(path.read_bytes())
    # bump the version field inside the JSON header in place
    idx = raw.find(b'"version":1')
    assert idx != -1
    raw[idx:idx + len(b'"version":1')] = b'"version":9'
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(CheckpointError, match="cannot read"):
        load_checkpoint(tmp_path / "nope.ckpt")
