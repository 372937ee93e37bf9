"""On-disk dataset layout: PNG images and masks plus a JSON manifest.

Layout under a dataset root:

- ``manifest.json``: generator config, class splits, and counts
- ``images/<class>/<id>.png`` and ``masks/<class>/<id>.png`` for still
  images (masks are 8-bit with values {0, 255})
- ``clips/<class>/<id>/frame_NNNN.png`` + ``mask_NNNN.png`` for video clips

Everything is deterministic given the generator config, so two runs with the
same seed produce byte-identical trees.
"""

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .data import (LabeledImage, SynthConfig, VideoClip, class_id,
                   generate_labeled_image, generate_video_clip)
from .errors import ConfigurationError, ValidationError

__all__ = [
    "save_image_png", "load_image_png", "save_mask_png", "load_mask_png",
    "write_dataset", "load_dataset", "load_clip", "load_clips",
    "directory_checksum", "DATASET_MANIFEST",
]

DATASET_MANIFEST = "manifest.json"


def save_image_png(path, image: np.ndarray) -> None:
    """Write a [C,H,W] float image in [0,1] as an 8-bit PNG (C must be 1 or 3)."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    q = np.round(arr * 255.0).astype(np.uint8)
    if q.shape[0] == 1:
        img = Image.fromarray(q[0], mode="L")
    elif q.shape[0] == 3:
        img = Image.fromarray(np.moveaxis(q, 0, 2), mode="RGB")
    else:
        raise ValidationError(f"can only write 1- or 3-channel PNGs, got {q.shape[0]}")
    img.save(path)


def load_image_png(path) -> np.ndarray:
    """Read a PNG back to a [C,H,W] float32 image in [0,1]."""
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = np.moveaxis(arr, 2, 0)
    return (arr.astype(np.float32) / 255.0)


def save_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask, dtype=np.uint8) * 255), mode="L").save(path)


def load_mask_png(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img)
    return (arr > 127).astype(np.uint8)


def _clip_dir(root: Path, cls: str, index: int) -> Path:
    return root / "clips" / cls / f"{index:04d}"


def write_dataset(root, cfg: SynthConfig, n_per_class: int = 20,
                  clips_per_class: int = 2) -> dict:
    """Generate and save a full dataset tree; returns the manifest dict.

    Still images are written for every class (base classes feed training,
    novel-class images feed episode evaluation); clips exist only for novel
    classes, per the no-class-leakage protocol.
    """
    if n_per_class < 1:
        raise ConfigurationError("n_per_class must be >= 1")
    if clips_per_class < 0:
        raise ConfigurationError("clips_per_class must be >= 0")
    root = Path(root)
    for cls in tuple(cfg.base_classes) + tuple(cfg.novel_classes):
        (root / "images" / cls).mkdir(parents=True, exist_ok=True)
        (root / "masks" / cls).mkdir(parents=True, exist_ok=True)
        for i in range(n_per_class):
            item = generate_labeled_image(cfg, cls, i)
            save_image_png(root / "images" / cls / f"{i:04d}.png", item.image)
            save_mask_png(root / "masks" / cls / f"{i:04d}.png", item.mask)
    for cls in cfg.novel_classes:
        for i in range(clips_per_class):
            clip = generate_video_clip(cfg, cls, index=i)
            d = _clip_dir(root, cls, i)
            d.mkdir(parents=True, exist_ok=True)
            for t in range(clip.n_frames):
                save_image_png(d / f"frame_{t:04d}.png", clip.frames[t])
            for t, mask in enumerate(clip.evaluation_masks(), start=clip.annotated_prefix):
                save_mask_png(d / f"mask_{t:04d}.png", mask)
            for t in range(clip.annotated_prefix):
                save_mask_png(d / f"mask_{t:04d}.png", clip.annotation(t))

    manifest = {
        "kind": "synthetic-shapes",
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in dataclasses.asdict(cfg).items()},
        "base_classes": list(cfg.base_classes),
        "novel_classes": list(cfg.novel_classes),
        "n_per_class": n_per_class,
        "clips_per_class": clips_per_class,
    }
    (root / DATASET_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def read_manifest(root) -> dict:
    path = Path(root) / DATASET_MANIFEST
    if not path.is_file():
        raise ConfigurationError(f"no dataset manifest at {path}")
    return json.loads(path.read_text())


def load_dataset(root, classes=None) -> list:
    """Load still images (optionally restricted to given classes)."""
    root = Path(root)
    manifest = read_manifest(root)
    wanted = list(classes) if classes is not None else (
        manifest["base_classes"] + manifest["novel_classes"])
    items = []
    for cls in wanted:
        img_dir = root / "images" / cls
        if not img_dir.is_dir():
            raise ConfigurationError(f"dataset at {root} has no images for class {cls!r}")
        for img_path in sorted(img_dir.glob("*.png")):
            mask_path = root / "masks" / cls / img_path.name
            items.append(LabeledImage(load_image_png(img_path),
                                      load_mask_png(mask_path), class_id(cls)))
    return items


def load_clip(root, cls: str, index: int, annotated_prefix: int = None) -> VideoClip:
    """Load one clip directory back into a VideoClip."""
    root = Path(root)
    manifest = read_manifest(root)
    if annotated_prefix is None:
        annotated_prefix = manifest["config"]["annotated_prefix"]
    d = _clip_dir(root, cls, index)
    frame_paths = sorted(d.glob("frame_*.png"))
    if not frame_paths:
        raise ConfigurationError(f"no frames under {d}")
    frames = np.stack([load_image_png(p) for p in frame_paths])
    masks = []
    for t in range(len(frame_paths)):
        mask_path = d / f"mask_{t:04d}.png"
        masks.append(load_mask_png(mask_path) if mask_path.is_file() else None)
    return VideoClip(frames, masks, annotated_prefix, class_id(cls))


def load_clips(root) -> list:
    """Load every clip recorded in the manifest, in manifest order."""
    manifest = read_manifest(Path(root))
    clips = []
    for cls in manifest["novel_classes"]:
        for i in range(manifest["clips_per_class"]):
            clips.append(load_clip(root, cls, i))
    return clips


def directory_checksum(root) -> str:
    """SHA-256 over sorted (relative path, bytes) pairs of a directory tree."""
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(str(path.relative_to(root)).encode())
        digest.update(b"\0")
        digest.update(path.read_bytes())
        digest.update(b"\0")
    return digest.hexdigest()
