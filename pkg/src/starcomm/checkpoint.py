"""Portable checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic b"STARCKPT"
    uint32    format version
    uint32    manifest length L
    L bytes   manifest, UTF-8 JSON with sorted keys
    32 bytes  SHA-256 of the manifest bytes
    payload   float64 little-endian arrays at the offsets the manifest lists

The manifest holds the run config text, the epoch counter, the reward baseline,
optimizer step counts, the payload SHA-256, and one ``{name, shape, offset}``
entry per array. Parameters are stored as ``param/<name>``; Adam moments as
``adam1/<name>`` and ``adam2/<name>``.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .model import ThetaBundle
from .optim import Adam, AdamState

MAGIC = b"STARCKPT"
VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointIntegrityError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: RunConfig
    params: dict[str, np.ndarray]
    adam: dict[str, AdamState] = field(default_factory=dict)
    epoch: int = 0
    baseline: float | None = None
    version: int = VERSION

    @classmethod
    def from_training(cls, cfg: RunConfig, theta: ThetaBundle, opt: Adam | None = None,
                      epoch: int = 0, baseline: float | None = None) -> Checkpoint:
        return cls(cfg, theta.snapshot(), dict(opt.states) if opt else {}, epoch, baseline)

    def build(self) -> ThetaBundle:
        """Fresh parameter bundle for this checkpoint's config, loaded and frozen."""
        theta = ThetaBundle(self.config.world, self.config.model, self.config.seed)
        validate_shapes(self, theta)
        theta.load_arrays(self.params)
        theta.freeze()
        return theta

    def optimizer(self) -> Adam:
        return Adam(lr=self.config.train.lr, states={k: AdamState(s.first_moment.copy(), s.second_moment.copy(),
                                                                  s.step_count, s.beta1, s.beta2, s.epsilon)
                                                     for k, s in self.adam.items()})


def validate_shapes(ckpt: Checkpoint, theta: ThetaBundle) -> None:
    expected = {p.name: p.shape for p in theta.parameters()}
    for name, shape in expected.items():
        if name not in ckpt.params:
            raise CheckpointShapeError(f"parameter {name} missing from checkpoint")
        if ckpt.params[name].shape != shape:
            raise CheckpointShapeError(
                f"parameter {name}: checkpoint shape {ckpt.params[name].shape} != config shape {shape}")
    extra = sorted(set(ckpt.params) - set(expected))
    if extra:
        raise CheckpointShapeError(f"parameters {extra} are not part of the configured model")


def to_bytes(ckpt: Checkpoint) -> bytes:
    arrays: list[tuple[str, np.ndarray]] = [(f"param/{k}", v) for k, v in sorted(ckpt.params.items())]
    steps = {}
    for k, s in sorted(ckpt.adam.items()):
        arrays.append((f"adam1/{k}", s.first_moment))
        arrays.append((f"adam2/{k}", s.second_moment))
        steps[k] = [s.step_count, s.beta1, s.beta2, s.epsilon]
    entries, chunks, offset = [], [], 0
    for name, arr in arrays:
        buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(buf)
        offset += len(buf)
    payload = b"".join(chunks)
    manifest = {
        "config": ckpt.config.to_text(),
        "epoch": ckpt.epoch,
        "baseline": ckpt.baseline,
        "adam_steps": steps,
        "arrays": entries,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    header = MAGIC + struct.pack("<II", ckpt.version, len(mbytes))
    return header + mbytes + hashlib.sha256(mbytes).digest() + payload


def from_bytes(raw: bytes, config: RunConfig | None = None) -> Checkpoint:
    if len(raw) < 16:
        raise CheckpointTruncatedError(f"checkpoint is only {len(raw)} bytes")
    if raw[:8] != MAGIC:
        raise CheckpointIntegrityError("bad checkpoint magic")
    version, mlen = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, this build reads {VERSION}")
    mend = 16 + mlen
    if len(raw) < mend + 32:
        raise CheckpointTruncatedError("checkpoint truncated inside the manifest")
    mbytes = raw[16:mend]
    if hashlib.sha256(mbytes).digest() != raw[mend:mend + 32]:
        raise CheckpointIntegrityError("manifest checksum mismatch")
    manifest = json.loads(mbytes)
    payload = raw[mend + 32:]
    if len(payload) < manifest["payload_bytes"]:
        raise CheckpointTruncatedError(
            f"payload has {len(payload)} bytes, manifest promises {manifest['payload_bytes']}")
    if len(payload) > manifest["payload_bytes"] or hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise CheckpointIntegrityError("payload checksum mismatch")
    arrays = {}
    for e in manifest["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arrays[e["name"]] = np.frombuffer(payload, dtype="<f8", count=n, offset=e["offset"]).reshape(e["shape"]).astype(np.float64)
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    adam = {}
    for k, (step, b1, b2, eps) in manifest["adam_steps"].items():
        adam[k] = AdamState(arrays[f"adam1/{k}"], arrays[f"adam2/{k}"], int(step), b1, b2, eps)
    cfg = RunConfig.from_text(manifest["config"])
    ckpt = Checkpoint(cfg, params, adam, int(manifest["epoch"]), manifest["baseline"], version)
    if config is not None:
        validate_shapes(ckpt, ThetaBundle(config.world, config.model, config.seed))
    return ckpt


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path: str | Path, config: RunConfig | None = None) -> Checkpoint:
    """Read and verify a checkpoint; with ``config``, also check every parameter shape against it."""
    return from_bytes(Path(path).read_bytes(), config)
