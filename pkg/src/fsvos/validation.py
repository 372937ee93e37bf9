"""Input validation helpers shared by data types, models, and estimators."""

import numpy as np

from .errors import ShapeError, ValidationError


def check_image(image, name: str = "image") -> np.ndarray:
    """Validate a [C,H,W] float image with finite values in [0,1]."""
    arr = np.asarray(image)
    if arr.ndim != 3:
        raise ShapeError(f"{name} must be [C,H,W], got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValidationError(
            f"{name} values must lie in [0,1], got range "
            f"[{float(arr.min()):.4g}, {float(arr.max()):.4g}]"
        )
    return np.ascontiguousarray(arr, dtype=np.float32)


def check_mask(mask, name: str = "mask", spatial=None) -> np.ndarray:
    """Validate a strictly binary [H,W] mask, optionally against a spatial size."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be [H,W], got shape {arr.shape}")
    values = np.unique(arr)
    if not np.isin(values, (0, 1)).all():
        raise ValidationError(f"{name} must be binary with values in {{0,1}}")
    if spatial is not None and tuple(arr.shape) != tuple(spatial):
        raise ShapeError(f"{name} shape {arr.shape} does not match image spatial size {tuple(spatial)}")
    return np.ascontiguousarray(arr, dtype=np.uint8)


def check_binary_tensor(t, name: str = "mask"):
    """Validate that a torch tensor contains only 0s and 1s."""
    bad = ((t != 0) & (t != 1)).any()
    if bool(bad):
        raise ValidationError(f"{name} must be binary with values in {{0,1}}")
    return t


def check_same_shape(a, b, name_a: str = "a", name_b: str = "b"):
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"{name_a} shape {tuple(a.shape)} != {name_b} shape {tuple(b.shape)}")


def check_spatial_match(a, b, name_a: str = "a", name_b: str = "b"):
    if tuple(a.shape[-2:]) != tuple(b.shape[-2:]):
        raise ShapeError(
            f"{name_a} spatial size {tuple(a.shape[-2:])} != {name_b} spatial size {tuple(b.shape[-2:])}"
        )


def check_consecutive_indices(indices, name: str = "frame_indices"):
    """Validate strictly consecutive, increasing integer frame indices."""
    idx = [int(i) for i in indices]
    if len(idx) == 0:
        raise ValidationError(f"{name} must be non-empty")
    for prev, cur in zip(idx, idx[1:]):
        if cur != prev + 1:
            raise ValidationError(f"{name} must be consecutive and increasing, got {idx}")
    return idx


def check_divisible(size: int, divisor: int, name: str = "size"):
    if size % divisor != 0:
        raise ShapeError(f"{name}={size} is not divisible by the total downsampling factor {divisor}")
