"""Bit-exact model serialization: a JSON manifest plus one raw weight blob.

A checkpoint is a directory holding:

- ``manifest.json``: format version, architecture description, one entry per
  parameter (name, shape, dtype, byte offset, byte length, freeze flag),
  the blob's SHA-256, and free-form metadata such as the source checkpoint
  hash and the training iteration reached.
- ``weights.bin``: all parameter arrays concatenated in manifest order as raw
  little-endian bytes.

The format is language-neutral, diffable at the manifest level, and hashable;
round trips are bit-exact by construction.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint", "save_model",
           "load_model", "state_bytes", "MANIFEST_NAME", "WEIGHTS_NAME",
           "FORMAT_VERSION"]

MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.bin"
FORMAT_VERSION = 1


def state_bytes(module: torch.nn.Module, prefix: str = "") -> bytes:
    """Concatenated little-endian bytes of a module's state, for freeze checks."""
    chunks = []
    for name, tensor in module.state_dict().items():
        if not name.startswith(prefix):
            continue
        chunks.append(_to_le_array(tensor).tobytes(order="C"))
    return b"".join(chunks)


def _to_le_array(tensor: torch.Tensor) -> np.ndarray:
    arr = tensor.detach().cpu().numpy()
    le = arr.dtype.newbyteorder("<")
    return np.ascontiguousarray(arr.astype(le, copy=False))


@dataclass
class Checkpoint:
    """Loaded checkpoint: parsed manifest plus named parameter arrays."""

    manifest: dict
    arrays: dict

    @property
    def arch(self) -> dict:
        return self.manifest["arch"]

    @property
    def meta(self) -> dict:
        return self.manifest.get("meta", {})

    @property
    def blob_sha256(self) -> str:
        return self.manifest["blob_sha256"]

    @property
    def has_temporal_unit(self) -> bool:
        return any(name.startswith("temporal_unit.") for name in self.arrays)

    def frozen_names(self) -> set:
        return {p["name"] for p in self.manifest["params"] if p["frozen"]}

    def restore_into(self, module: torch.nn.Module) -> None:
        state = {name: torch.from_numpy(arr.copy()) for name, arr in self.arrays.items()}
        module.load_state_dict(state, strict=True)


def save_checkpoint(dirpath, module: torch.nn.Module, arch: dict,
                    frozen=(), meta: dict = None) -> str:
    """Write a checkpoint directory; returns the weight blob's SHA-256.

    ``frozen`` lists state-dict names (or name prefixes ending in ".") whose
    freeze flag should be recorded.
    """
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    frozen = tuple(frozen)

    entries = []
    blob = bytearray()
    for name, tensor in module.state_dict().items():
        arr = _to_le_array(tensor)
        raw = arr.tobytes(order="C")
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.str,
            "offset": len(blob),
            "nbytes": len(raw),
            "frozen": any(name == f or (f.endswith(".") and name.startswith(f))
                          for f in frozen),
        })
        blob.extend(raw)

    blob = bytes(blob)
    digest = hashlib.sha256(blob).hexdigest()
    manifest = {
        "format_version": FORMAT_VERSION,
        "arch": arch,
        "params": entries,
        "blob_sha256": digest,
        "meta": dict(meta or {}),
    }
    (dirpath / WEIGHTS_NAME).write_bytes(blob)
    (dirpath / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return digest


def save_model(dirpath, net, meta: dict = None) -> str:
    """Save a segmenter with its architecture and per-parameter freeze flags."""
    frozen = [name for name, p in net.named_parameters() if not p.requires_grad]
    arch = {"model": net.arch.to_dict(), "temporal_unit": net.temporal_unit is not None}
    return save_checkpoint(dirpath, net, arch, frozen=frozen, meta=meta)


def load_model(dirpath):
    """Rebuild a segmenter from a checkpoint; returns (net, Checkpoint).

    Freeze flags recorded in the manifest are re-applied to the parameters.
    """
    from .model import build_model

    ckpt = load_checkpoint(dirpath)
    if "model" not in ckpt.arch:
        raise CheckpointError(f"checkpoint at {dirpath} has no model architecture")
    net = build_model(ckpt.arch["model"], ckpt.arch.get("temporal_unit", False))
    ckpt.restore_into(net)
    params = dict(net.named_parameters())
    for name in ckpt.frozen_names():
        if name in params:
            params[name].requires_grad_(False)
    return net, ckpt


def load_checkpoint(dirpath) -> Checkpoint:
    """Read and validate a checkpoint directory."""
    dirpath = Path(dirpath)
    manifest_path = dirpath / MANIFEST_NAME
    weights_path = dirpath / WEIGHTS_NAME
    if not manifest_path.is_file() or not weights_path.is_file():
        raise CheckpointError(f"no checkpoint at {dirpath} "
                              f"(need {MANIFEST_NAME} and {WEIGHTS_NAME})")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"unreadable manifest at {manifest_path}: {e}") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {manifest.get('format_version')}")

    blob = weights_path.read_bytes()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest.get("blob_sha256"):
        raise CheckpointError(
            f"weight blob hash mismatch at {dirpath}: manifest records "
            f"{manifest.get('blob_sha256')}, file has {digest}")

    arrays = {}
    for entry in manifest["params"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(blob):
            raise CheckpointError(f"parameter {entry['name']} extends past the blob end")
        arr = np.frombuffer(blob, dtype=np.dtype(entry["dtype"]), count=n // np.dtype(entry["dtype"]).itemsize,
                            offset=start).reshape(entry["shape"])
        arrays[entry["name"]] = arr
    return Checkpoint(manifest=manifest, arrays=arrays)
