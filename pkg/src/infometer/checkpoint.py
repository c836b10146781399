"""Branch checkpoints: ``manifest.json`` plus a float32 parameter payload.

``payload.bin`` is a ``uint64`` little-endian value count, the parameters as
float32 little-endian, row-major, concatenated in manifest order, then a
``uint32`` CRC32 of the value bytes. Trained parameters are already rounded to
float32, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .adapt import AffineRecord
from .entropy import BranchModel, TrainConfig, make_branch

__all__ = ["CHECKPOINT_VERSION", "CheckpointError", "save_checkpoint", "load_checkpoint"]

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(branch: BranchModel, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    params = branch.parameters_dict()
    data = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in params.values())
    crc = zlib.crc32(data)
    with open(path / "payload.bin", "wb") as f:
        f.write(struct.pack("<Q", len(data) // 4))
        f.write(data)
        f.write(struct.pack("<I", crc))
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "branch_id": branch.branch_id,
        "concat_mode": branch.concat_mode,
        "map_shape": list(branch.map_shape),
        "config": asdict(branch.config),
        "affine_records": {k: r.to_json() for k, r in sorted(branch.records.items())},
        "parameters": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
        "training_curve": [float(v) for v in branch.training_curve],
        "selection_curve": [float(v) for v in branch.selection_curve],
        "selected_epoch": branch.selected_epoch,
        "payload_crc32": crc,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> BranchModel:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        raw = (path / "payload.bin").read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"not a checkpoint directory: {path}") from exc
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('format_version')!r}")
    (count,) = struct.unpack_from("<Q", raw, 0)
    data, (crc,) = raw[8:-4], struct.unpack_from("<I", raw, len(raw) - 4)
    if len(data) != 4 * count or zlib.crc32(data) != crc or manifest["payload_crc32"] != crc:
        raise CheckpointError("checkpoint payload is corrupted")

    records = {k: AffineRecord.from_json(v) for k, v in manifest["affine_records"].items()}
    branch = make_branch(manifest["branch_id"], tuple(manifest["map_shape"]),
                         TrainConfig(**manifest["config"]), records, manifest["concat_mode"])
    values = np.frombuffer(data, dtype="<f4")
    named = dict(branch.transform.named_parameters(prefix="transform"))
    named.update(branch.density.named_parameters(prefix="density"))
    offset = 0
    for entry in manifest["parameters"]:
        p = named.get(entry["name"])
        if p is None or list(p.shape) != entry["shape"]:
            raise CheckpointError(f"parameter {entry['name']} does not match the model layout")
        size = int(np.prod(entry["shape"], dtype=np.int64))
        chunk = values[offset: offset + size].astype(np.float64).reshape(entry["shape"])
        with torch.no_grad():
            p.copy_(torch.from_numpy(chunk))
        offset += size
    if offset != len(values):
        raise CheckpointError("payload length does not match the parameter list")
    branch.training_curve = list(manifest["training_curve"])
    branch.selection_curve = list(manifest.get("selection_curve", []))
    branch.selected_epoch = int(manifest.get("selected_epoch", len(branch.training_curve)))
    return branch.freeze()
