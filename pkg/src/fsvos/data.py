"""Synthetic episodic data: shape images, moving-shape video clips, episode sampling.

The generator draws one foreground silhouette per image (ellipse, rectangle,
triangle, cross, or ring) on a textured background, so that base and novel
classes are semantically disjoint silhouette families. Image training uses
episodes sampled from base classes; video clips are generated only for novel
classes, with the first ``annotated_prefix`` frames carrying visible
annotations (the support set) and the remaining frames serving as query data.

Ground-truth masks for query frames are stored inside :class:`VideoClip` but
are only reachable through the explicit evaluation accessor, so adaptation
code cannot read them by construction.

All generation is pure given (config, seed): every sample draws from its own
named substream, so datasets are bit-identical across runs and independent of
generation order.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, ProtocolError, SamplingError, ValidationError
from .seeding import substream_rng
from .validation import check_image, check_mask

SHAPE_CLASSES = ("ellipse", "rectangle", "triangle", "cross", "ring")

_CLASS_IDS = {name: i for i, name in enumerate(SHAPE_CLASSES)}


def class_id(name: str) -> int:
    """Canonical integer id of a shape class name."""
    try:
        return _CLASS_IDS[name]
    except KeyError:
        raise ConfigurationError(f"unknown shape class {name!r}; known: {SHAPE_CLASSES}") from None


def class_name(cid: int) -> str:
    if not 0 <= cid < len(SHAPE_CLASSES):
        raise ConfigurationError(f"unknown class id {cid}; known ids: 0..{len(SHAPE_CLASSES) - 1}")
    return SHAPE_CLASSES[cid]


@dataclass(frozen=True)
class SynthConfig:
    """Configuration of the synthetic generator.

    ``base_classes`` feed image training, ``novel_classes`` feed video clips;
    the two lists must be disjoint. ``motion_step`` bounds the per-frame object
    translation in pixels and also scales the per-frame deformation, so
    ``motion_step=0`` yields clips whose masks are identical across frames.
    """

    image_size: tuple = (64, 64)
    channels: int = 1
    base_classes: tuple = ("ellipse", "rectangle", "triangle", "cross")
    novel_classes: tuple = ("ring",)
    frames_per_clip: int = 8
    annotated_prefix: int = 1
    motion_step: float = 2.0
    noise_std: float = 0.03
    seed: int = 0

    def __post_init__(self):
        for name in tuple(self.base_classes) + tuple(self.novel_classes):
            class_id(name)
        overlap = set(self.base_classes) & set(self.novel_classes)
        if overlap:
            raise ConfigurationError(f"base and novel classes overlap: {sorted(overlap)}")
        if len(self.image_size) != 2 or min(self.image_size) < 32:
            raise ConfigurationError(f"image_size must be (H,W) with min side >= 32, got {self.image_size}")
        if self.channels < 1:
            raise ConfigurationError("channels must be >= 1")
        if self.annotated_prefix < 1:
            raise ConfigurationError("annotated_prefix must be >= 1")
        if self.frames_per_clip < self.annotated_prefix + 1:
            raise ConfigurationError("frames_per_clip must be >= annotated_prefix + 1")
        if self.motion_step < 0 or self.noise_std < 0:
            raise ConfigurationError("motion_step and noise_std must be non-negative")


@dataclass
class LabeledImage:
    """A [C,H,W] image in [0,1] with an optional binary [H,W] mask.

    The mask is required for support samples and for image training; query
    frames taken from a video carry ``mask=None``.
    """

    image: np.ndarray
    mask: Optional[np.ndarray]
    class_id: int

    def __post_init__(self):
        self.image = check_image(self.image)
        if self.mask is not None:
            self.mask = check_mask(self.mask, spatial=self.image.shape[-2:])
        self.class_id = int(self.class_id)


@dataclass
class Episode:
    """One few-shot task: a labeled support set and a query set from one class."""

    support: list
    query: list
    class_id: int

    def __post_init__(self):
        if len(self.support) < 1 or len(self.query) < 1:
            raise ValidationError("episode needs at least one support and one query sample")
        for item in self.support:
            if item.mask is None:
                raise ValidationError("support samples must carry masks")
        for item in list(self.support) + list(self.query):
            if item.class_id != self.class_id:
                raise ValidationError("all episode members must share the episode class id")

    @property
    def n_shot(self) -> int:
        return len(self.support)

    @property
    def k_query(self) -> int:
        return len(self.query)


class VideoClip:
    """An ordered frame sequence whose first ``annotated_prefix`` frames are annotated.

    Masks for frames past the prefix are evaluation-only: ``annotation(t)``
    returns None for them, and they are reachable solely through
    ``evaluation_masks()``.
    """

    def __init__(self, frames: np.ndarray, masks: Sequence[Optional[np.ndarray]],
                 annotated_prefix: int, class_id: int):
        frames = np.asarray(frames, dtype=np.float32)
        if frames.ndim != 4:
            raise ValidationError(f"frames must be [T,C,H,W], got shape {frames.shape}")
        if annotated_prefix < 1:
            raise ValidationError("annotated_prefix must be >= 1")
        if frames.shape[0] < annotated_prefix + 1:
            raise ValidationError("clip must have at least annotated_prefix + 1 frames")
        if len(masks) != frames.shape[0]:
            raise ValidationError("need one mask slot per frame (None allowed past the prefix)")
        checked = []
        for t, m in enumerate(masks):
            if t < annotated_prefix and m is None:
                raise ValidationError(f"frame {t} is inside the annotated prefix but has no mask")
            checked.append(None if m is None else check_mask(m, f"mask[{t}]", spatial=frames.shape[-2:]))
        self.frames = frames
        self._masks = checked
        self.annotated_prefix = int(annotated_prefix)
        self.class_id = int(class_id)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_query(self) -> int:
        return self.n_frames - self.annotated_prefix

    def annotation(self, t: int) -> Optional[np.ndarray]:
        """Visible annotation for frame t: a mask inside the prefix, else None."""
        if t < self.annotated_prefix:
            return self._masks[t]
        return None

    def support_images(self) -> list:
        return [
            LabeledImage(self.frames[t], self._masks[t], self.class_id)
            for t in range(self.annotated_prefix)
        ]

    def query_frames(self) -> np.ndarray:
        """Unannotated frames [T-N, C, H, W], in order."""
        return self.frames[self.annotated_prefix:]

    def has_evaluation_masks(self) -> bool:
        return all(m is not None for m in self._masks[self.annotated_prefix:])

    def evaluation_masks(self) -> list:
        """Ground-truth masks for query frames. Evaluation code only."""
        masks = self._masks[self.annotated_prefix:]
        if any(m is None for m in masks):
            raise ValidationError("clip has no evaluation masks for some query frames")
        return list(masks)


# ---------------------------------------------------------------------------
# Silhouette rasterization
# ---------------------------------------------------------------------------

@dataclass
class ShapeParams:
    """Pose of one silhouette: class kind, center (cy,cx), rotation, sizes."""

    kind: str
    center: tuple
    angle: float
    dims: tuple


def render_silhouette(params: ShapeParams, image_size) -> np.ndarray:
    """Rasterize a silhouette to a binary [H,W] mask (pixel centers at integers)."""
    h, w = image_size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = params.center
    dy, dx = yy - cy, xx - cx
    cos_t, sin_t = np.cos(params.angle), np.sin(params.angle)
    # object-frame coordinates
    u = cos_t * dx + sin_t * dy
    v = -sin_t * dx + cos_t * dy

    kind = params.kind
    if kind == "ellipse":
        a, b = params.dims
        inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    elif kind == "rectangle":
        hw, hh = params.dims
        inside = (np.abs(u) <= hw) & (np.abs(v) <= hh)
    elif kind == "triangle":
        (r,) = params.dims
        angles = params.angle + np.deg2rad([90.0, 210.0, 330.0])
        vx = cx + r * np.cos(angles)
        vy = cy + r * np.sin(angles)
        inside = np.ones((h, w), dtype=bool)
        for i in range(3):
            x0, y0 = vx[i], vy[i]
            x1, y1 = vx[(i + 1) % 3], vy[(i + 1) % 3]
            cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
            inside &= cross >= 0
    elif kind == "cross":
        hl, hw_arm = params.dims
        arm1 = (np.abs(u) <= hl) & (np.abs(v) <= hw_arm)
        arm2 = (np.abs(u) <= hw_arm) & (np.abs(v) <= hl)
        inside = arm1 | arm2
    elif kind == "ring":
        r_out, r_in = params.dims
        rr = np.sqrt(u ** 2 + v ** 2)
        inside = (rr <= r_out) & (rr >= r_in)
    else:
        raise ConfigurationError(f"unknown shape class {kind!r}; known: {SHAPE_CLASSES}")
    return inside.astype(np.uint8)


# Size ranges at the 64x64 reference scale. Sized so foreground fractions stay
# well inside [0.02, 0.5] and so that a worst-case 3 px per-frame translation
# keeps consecutive-mask IoU above 0.7: for a shift d and projection width w,
# IoU ~ (A - d*w)/(A + d*w), which demands d*w <= 0.176*A with margin.
_SIZE_RANGES = {
    "ellipse": ((13.0, 18.0), (13.0, 18.0)),
    "rectangle": ((14.0, 17.0), (14.0, 17.0)),
    "triangle": ((24.5, 27.5),),
    "cross": ((14.0, 17.0), (8.0, 10.0)),
    "ring": ((18.0, 20.0), (3.5, 5.5)),  # (outer radius, inner radius)
}


def _max_extent(kind: str, dims) -> float:
    if kind == "rectangle":
        return float(np.hypot(*dims))
    if kind in ("cross", "ring"):
        return float(dims[0])
    return float(max(dims))


def sample_shape_params(kind: str, image_size, rng: np.random.Generator,
                        motion_margin: float = 0.0) -> ShapeParams:
    """Draw a random pose for one silhouette, kept inside the image bounds."""
    if kind not in _SIZE_RANGES:
        raise ConfigurationError(f"unknown shape class {kind!r}; known: {SHAPE_CLASSES}")
    h, w = image_size
    scale = min(h, w) / 64.0
    dims = tuple(rng.uniform(lo * scale, hi * scale) for lo, hi in _SIZE_RANGES[kind])
    margin = _max_extent(kind, dims) + motion_margin + 1.0
    margin = min(margin, (min(h, w) - 1) / 2.0 - 1.0)
    cy = rng.uniform(margin, h - 1 - margin)
    cx = rng.uniform(margin, w - 1 - margin)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    return ShapeParams(kind=kind, center=(cy, cx), angle=angle, dims=dims)


def _jitter_shape_params(params: ShapeParams, step: float, image_size,
                         rng: np.random.Generator) -> ShapeParams:
    """One smooth motion step: displacement norm bounded by `step`, mild deformation."""
    h, w = image_size
    radius = step * rng.uniform(0.0, 1.0)
    theta = rng.uniform(0.0, 2.0 * np.pi)
    margin = _max_extent(params.kind, params.dims) + 1.0
    margin = min(margin, (min(h, w) - 1) / 2.0 - 1.0)
    cy = float(np.clip(params.center[0] + radius * np.sin(theta), margin, h - 1 - margin))
    cx = float(np.clip(params.center[1] + radius * np.cos(theta), margin, w - 1 - margin))
    angle = params.angle + rng.uniform(-1.0, 1.0) * step * 0.008
    scale = min(h, w) / 64.0
    dims = []
    for d, (lo, hi) in zip(params.dims, _SIZE_RANGES[params.kind]):
        d = d * (1.0 + rng.uniform(-1.0, 1.0) * step * 0.003)
        dims.append(float(np.clip(d, lo * scale, hi * scale)))
    return ShapeParams(kind=params.kind, center=(cy, cx), angle=angle, dims=tuple(dims))


# ---------------------------------------------------------------------------
# Texture and image synthesis
# ---------------------------------------------------------------------------

def _bilinear_upsample(grid: np.ndarray, size) -> np.ndarray:
    h, w = size
    gh, gw = grid.shape
    ys = np.linspace(0.0, gh - 1.0, h)
    xs = np.linspace(0.0, gw - 1.0, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = grid[np.ix_(y0, x0)] * (1 - fx) + grid[np.ix_(y0, x1)] * fx
    bot = grid[np.ix_(y1, x0)] * (1 - fx) + grid[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


@dataclass
class _SceneStyle:
    """Per-scene texture fields and intensity bands, fixed across a clip."""

    bg_field: np.ndarray
    fg_field: np.ndarray
    channel_offsets: np.ndarray


def _sample_scene_style(image_size, channels: int, rng: np.random.Generator) -> _SceneStyle:
    bg_lo = rng.uniform(0.10, 0.25)
    bg_span = rng.uniform(0.10, 0.20)
    bg = bg_lo + bg_span * _bilinear_upsample(rng.uniform(0.0, 1.0, (5, 5)), image_size)
    fg_lo = rng.uniform(0.55, 0.75)
    fg_span = rng.uniform(0.10, 0.20)
    fg = fg_lo + fg_span * _bilinear_upsample(rng.uniform(0.0, 1.0, (4, 4)), image_size)
    offsets = rng.uniform(-0.05, 0.05, channels) if channels > 1 else np.zeros(1)
    return _SceneStyle(bg_field=bg, fg_field=fg, channel_offsets=offsets)


def _compose_image(mask: np.ndarray, style: _SceneStyle, noise_std: float,
                   rng: np.random.Generator) -> np.ndarray:
    base = np.where(mask.astype(bool), style.fg_field, style.bg_field)
    channels = len(style.channel_offsets)
    img = base[None, :, :] + style.channel_offsets[:, None, None]
    if noise_std > 0:
        img = img + rng.normal(0.0, noise_std, (channels,) + mask.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# Public generators and samplers
# ---------------------------------------------------------------------------

def generate_labeled_image(cfg: SynthConfig, cls: str, index: int) -> LabeledImage:
    """Generate one image deterministically from (config seed, class, index)."""
    cid = class_id(cls)
    rng = substream_rng(cfg.seed, "image", cls, index)
    params = sample_shape_params(cls, cfg.image_size, rng)
    mask = render_silhouette(params, cfg.image_size)
    style = _sample_scene_style(cfg.image_size, cfg.channels, rng)
    image = _compose_image(mask, style, cfg.noise_std, rng)
    return LabeledImage(image=image, mask=mask, class_id=cid)


def generate_image_dataset(cfg: SynthConfig, n_per_class: int, classes=None) -> list:
    """Generate ``n_per_class`` labeled images for each class.

    Defaults to the base classes; pass ``classes`` explicitly to generate
    evaluation images for novel classes.
    """
    if n_per_class < 1:
        raise ConfigurationError("n_per_class must be >= 1")
    names = tuple(cfg.base_classes) if classes is None else tuple(classes)
    for name in names:
        class_id(name)
    return [
        generate_labeled_image(cfg, cls, i)
        for cls in names
        for i in range(n_per_class)
    ]


def generate_video_clip(cfg: SynthConfig, cls, index: int = 0) -> VideoClip:
    """Generate one clip of a novel class: a smoothly moving, mildly deforming object.

    Raises ProtocolError if the class belongs to the base split, preventing
    class leakage between image training and video evaluation.
    """
    name = class_name(cls) if isinstance(cls, (int, np.integer)) else str(cls)
    cid = class_id(name)
    if name in cfg.base_classes:
        raise ProtocolError(f"class {name!r} is a base class; clips may only use novel classes")
    if name not in cfg.novel_classes:
        raise ConfigurationError(f"class {name!r} is not in the configured novel classes")

    rng = substream_rng(cfg.seed, "clip", name, index)
    # margin covers a few steps of drift so clamping rarely kicks in
    params = sample_shape_params(name, cfg.image_size, rng,
                                 motion_margin=3.0 * cfg.motion_step)
    style = _sample_scene_style(cfg.image_size, cfg.channels, rng)

    frames, masks = [], []
    for _ in range(cfg.frames_per_clip):
        mask = render_silhouette(params, cfg.image_size)
        frames.append(_compose_image(mask, style, cfg.noise_std, rng))
        masks.append(mask)
        params = _jitter_shape_params(params, cfg.motion_step, cfg.image_size, rng)
    return VideoClip(
        frames=np.stack(frames),
        masks=masks,
        annotated_prefix=cfg.annotated_prefix,
        class_id=cid,
    )


def sample_episode(dataset: Sequence[LabeledImage], n_shot: int, k_query: int,
                   rng: np.random.Generator) -> Episode:
    """Sample one episode: disjoint support/query sets from a single class."""
    if n_shot < 1 or k_query < 1:
        raise ValidationError("n_shot and k_query must be >= 1")
    by_class = {}
    for i, item in enumerate(dataset):
        by_class.setdefault(item.class_id, []).append(i)
    eligible = sorted(cid for cid, idxs in by_class.items() if len(idxs) >= n_shot + k_query)
    if not eligible:
        raise SamplingError(
            f"no class has at least n_shot + k_query = {n_shot + k_query} samples"
        )
    cid = eligible[rng.integers(len(eligible))]
    picks = rng.choice(by_class[cid], size=n_shot + k_query, replace=False)
    support = [dataset[i] for i in picks[:n_shot]]
    query = [dataset[i] for i in picks[n_shot:]]
    return Episode(support=support, query=query, class_id=cid)


def clip_to_episode(clip: VideoClip) -> Episode:
    """View a clip as an episode: annotated prefix as support, the rest as query.

    Query items carry no masks; evaluation ground truth stays gated inside the
    clip.
    """
    query = [
        LabeledImage(image=frame, mask=None, class_id=clip.class_id)
        for frame in clip.query_frames()
    ]
    return Episode(support=clip.support_images(), query=query, class_id=clip.class_id)
