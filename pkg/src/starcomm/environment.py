"""World model: labeled images, cloud occlusion, windowed views, robot motion.

Positions are ``(x, y)`` pixel coordinates, ``x`` along the width. Images are
``[C, H, W]`` arrays with values in ``[0, 1]``, stored as float32.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .config import WorldConfig


@dataclass
class MapSample:
    image: np.ndarray  # [C, H, W]
    label: int
    occlusion_mask: np.ndarray  # [H, W] bool


@dataclass
class Dataset:
    images: np.ndarray  # [n, C, H, W] float32
    labels: np.ndarray  # [n] int
    masks: np.ndarray | None = None  # [n, H, W] bool

    def __len__(self) -> int:
        return len(self.labels)

    def sample(self, i: int) -> MapSample:
        h, w = self.images.shape[2:]
        mask = self.masks[i] if self.masks is not None else np.zeros((h, w), dtype=bool)
        return MapSample(self.images[i], int(self.labels[i]), mask)


@dataclass
class DataSplits:
    train: Dataset
    test: Dataset
    n_classes: int
    task: str = "maps"
    seed: int = 0
    meta: dict = field(default_factory=dict)


@dataclass
class RobotState:
    position: np.ndarray
    memory: object = None
    goal: np.ndarray | None = None
    goal_age: int = 0
    alive: bool = True


# ------------------------------------------------------------------ map maker

def _smooth_noise(rng: np.random.Generator, h: int, w: int, cell: int) -> np.ndarray:
    gh, gw = h // cell + 2, w // cell + 2
    coarse = rng.random((gh, gw))
    ys = np.linspace(0, gh - 2, h)
    xs = np.linspace(0, gw - 2, w)
    y0, x0 = ys.astype(int), xs.astype(int)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    a = coarse[y0][:, x0]
    b = coarse[y0][:, x0 + 1]
    c = coarse[y0 + 1][:, x0]
    d = coarse[y0 + 1][:, x0 + 1]
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy


def _prototype(seed: int, label: int, h: int, w: int, channels: int) -> np.ndarray:
    """A base layout for one label: terrain, vegetation blobs, roads, buildings.

    Densities of every element depend on the label, so classes differ in local
    texture statistics as well as in layout.
    """
    rng = np.random.default_rng([seed, 100 + label])
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ground = np.array([0.45, 0.42, 0.35]) + rng.uniform(-0.08, 0.08, 3)
    img = np.ones((3, h, w)) * ground[:, None, None]
    img += 0.12 * (_smooth_noise(rng, h, w, 16) - 0.5)[None]

    veg = _smooth_noise(rng, h, w, 8 + 4 * (label % 3))
    veg_mask = veg > np.quantile(veg, 0.85 - 0.1 * (label % 4))
    img[:, veg_mask] = (np.array([0.18, 0.45, 0.2])[:, None]
                        + 0.1 * (rng.random(veg_mask.sum()) - 0.5)[None])

    n_roads = 1 + label % 3
    for _ in range(n_roads):
        ang = rng.uniform(0, np.pi)
        px, py = rng.uniform(0.2, 0.8) * w, rng.uniform(0.2, 0.8) * h
        dist = np.abs((xx - px) * np.sin(ang) - (yy - py) * np.cos(ang))
        img[:, dist < 2.0 + label % 2] = 0.2

    n_build = 10 + 6 * label
    shade = 0.55 + 0.35 * (label % 2)
    for _ in range(n_build):
        bw, bh = rng.integers(3, 6 + label, size=2)
        x0, y0 = rng.integers(0, w - bw), rng.integers(0, h - bh)
        tone = shade + rng.uniform(-0.1, 0.1)
        img[:, y0:y0 + bh, x0:x0 + bw] = np.array([tone, tone * 0.95, tone * 0.9])[:, None, None]

    img = np.clip(img, 0.0, 1.0)
    if channels == 1:
        img = img.mean(axis=0, keepdims=True)
    elif channels != 3:
        img = np.repeat(img.mean(axis=0, keepdims=True), channels, axis=0)
    return img


def _jitter(proto: np.ndarray, rng: np.random.Generator, max_shift: int = 4, brightness: float = 0.1) -> np.ndarray:
    dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
    pad = max_shift
    padded = np.pad(proto, ((0, 0), (pad, pad), (pad, pad)), mode="edge")
    h, w = proto.shape[1:]
    out = padded[:, pad + dy:pad + dy + h, pad + dx:pad + dx + w]
    out = out * (1.0 + rng.uniform(-brightness, brightness))
    return np.clip(out, 0.0, 1.0)


def apply_clouds(sample: MapSample, rng: np.random.Generator, n_clouds: int = 80,
                 coverage_target: float = 0.4) -> MapSample:
    """Cover about ``coverage_target`` of the map with ``n_clouds`` elliptical blobs.

    Blob shapes and centers are drawn first; their common scale is then set so the
    union covers the target fraction. Covered pixels become near-white noise that
    dims toward the blob edges.
    """
    if n_clouds == 0:
        return MapSample(sample.image.copy(), sample.label, sample.occlusion_mask.copy())
    if not 0.0 < coverage_target < 1.0:
        raise ValueError("coverage_target must lie in (0, 1)")
    c, h, w = sample.image.shape
    cx = rng.uniform(0, w, n_clouds)[:, None, None]
    cy = rng.uniform(0, h, n_clouds)[:, None, None]
    size = rng.uniform(0.5, 1.5, n_clouds)[:, None, None]
    aspect = rng.uniform(0.5, 1.0, n_clouds)[:, None, None]
    ang = rng.uniform(0, np.pi, n_clouds)[:, None, None]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx[None] - cx, yy[None] - cy
    u = (dx * np.cos(ang) + dy * np.sin(ang)) / size
    v = (-dx * np.sin(ang) + dy * np.cos(ang)) / (size * aspect)
    dist = np.sqrt(u * u + v * v).min(axis=0)
    radius = np.quantile(dist, coverage_target)
    mask = dist <= radius
    texture = 0.88 + 0.1 * rng.random((h, w)) + 0.02 * (1.0 - dist / max(radius, 1e-12))
    image = sample.image.copy()
    image[:, mask] = np.clip(texture[mask], 0.0, 1.0).astype(image.dtype)
    return MapSample(image, sample.label, mask)


def generate_maps(seed: int, n_classes: int, n_train: int, n_test: int, height: int, width: int,
                  channels: int = 3, n_clouds: int = 80, coverage: float = 0.4) -> DataSplits:
    """Seeded labeled maps: jittered renders of one prototype per label.

    Labels are balanced; train and test draw their jitter and clouds from
    separate streams.
    """
    if n_classes < 2:
        raise ValueError("need at least two labels")
    protos = [_prototype(seed, k, height, width, channels) for k in range(n_classes)]
    splits = []
    for tag, n in ((1, n_train), (2, n_test)):
        rng = np.random.default_rng([seed, tag])
        labels = np.arange(n) % n_classes
        images = np.empty((n, channels, height, width), dtype=np.float32)
        masks = np.zeros((n, height, width), dtype=bool)
        for i, k in enumerate(labels):
            s = MapSample(_jitter(protos[k], rng), int(k), np.zeros((height, width), dtype=bool))
            if n_clouds > 0 and coverage > 0:
                s = apply_clouds(s, rng, n_clouds, coverage)
            images[i] = s.image
            masks[i] = s.occlusion_mask
        splits.append(Dataset(images, labels.astype(np.int64), masks))
    return DataSplits(splits[0], splits[1], n_classes, "maps", seed)


# -------------------------------------------------------------- digit glyphs

def _ellipse(cx, cy, rx, ry, n=20, start=0.0, stop=2 * np.pi):
    t = np.linspace(start, stop, n)
    return list(zip(cx + rx * np.cos(t), cy + ry * np.sin(t)))


GLYPH_STROKES: dict[int, list[list[tuple[float, float]]]] = {
    0: [_ellipse(0.5, 0.5, 0.3, 0.45, 24)],
    1: [[(0.35, 0.22), (0.56, 0.04), (0.52, 0.96)]],
    2: [[(0.2, 0.28), (0.3, 0.1), (0.5, 0.04), (0.7, 0.1), (0.8, 0.28), (0.72, 0.45),
         (0.18, 0.95), (0.85, 0.95)]],
    3: [[(0.2, 0.1), (0.5, 0.03), (0.78, 0.15), (0.75, 0.35), (0.45, 0.48), (0.78, 0.6),
         (0.8, 0.82), (0.5, 0.97), (0.18, 0.88)]],
    4: [[(0.65, 0.95), (0.65, 0.05), (0.15, 0.65), (0.85, 0.65)]],
    5: [[(0.8, 0.05), (0.25, 0.05), (0.22, 0.45), (0.5, 0.38), (0.78, 0.5), (0.8, 0.78),
         (0.55, 0.96), (0.2, 0.88)]],
    6: [[(0.7, 0.05), (0.4, 0.2), (0.22, 0.55), (0.25, 0.85), (0.5, 0.97), (0.75, 0.82),
         (0.75, 0.6), (0.5, 0.48), (0.25, 0.6)]],
    7: [[(0.15, 0.05), (0.85, 0.05), (0.4, 0.95)]],
    8: [_ellipse(0.5, 0.27, 0.24, 0.22, 20), _ellipse(0.5, 0.72, 0.3, 0.25, 20)],
    9: [_ellipse(0.5, 0.3, 0.27, 0.24, 20), [(0.77, 0.3), (0.7, 0.96)]],
}


def _segment_distance(px, py, a, b):
    ax, ay = a
    bx, by = b
    vx, vy = bx - ax, by - ay
    denom = vx * vx + vy * vy
    t = np.clip(((px - ax) * vx + (py - ay) * vy) / denom, 0.0, 1.0) if denom > 0 else 0.0
    qx, qy = ax + t * vx - px, ay + t * vy - py
    return np.sqrt(qx * qx + qy * qy)


def render_glyph(label: int, rng: np.random.Generator, size: int = 28) -> np.ndarray:
    """Anti-aliased stroke rendering of a digit under a random affine jitter."""
    scale = 20.0 * rng.uniform(0.85, 1.05)
    rot = np.deg2rad(rng.uniform(-12, 12))
    shear = rng.uniform(-0.15, 0.15)
    shift = rng.uniform(-2, 2, size=2)
    width = rng.uniform(1.6, 2.6)
    cos, sin = np.cos(rot), np.sin(rot)
    mat = scale * np.array([[cos, -sin], [sin, cos]]) @ np.array([[1.0, shear], [0.0, 1.0]])
    center = np.array([size / 2.0, size / 2.0]) + shift
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    dist = np.full((size, size), np.inf)
    for stroke in GLYPH_STROKES[label]:
        pts = np.asarray(stroke) + rng.uniform(-0.03, 0.03, size=(len(stroke), 2))
        pts = (pts - 0.5) @ mat.T + center
        for a, b in zip(pts[:-1], pts[1:]):
            dist = np.minimum(dist, _segment_distance(xx, yy, a, b))
    img = np.clip(width / 2.0 + 0.5 - dist, 0.0, 1.0)
    img = np.clip(img + rng.normal(0.0, 0.02, img.shape), 0.0, 1.0)
    return img[None]


def synthetic_digits(seed: int, n_train: int, n_test: int, size: int = 28) -> DataSplits:
    splits = []
    for tag, n in ((1, n_train), (2, n_test)):
        rng = np.random.default_rng([seed, 50 + tag])
        labels = np.arange(n) % 10
        images = np.empty((n, 1, size, size), dtype=np.float32)
        for i, k in enumerate(labels):
            images[i] = render_glyph(int(k), rng, size)
        splits.append(Dataset(images, labels.astype(np.int64)))
    return DataSplits(splits[0], splits[1], 10, "mnist", seed)


def mnist_task(source_dir: str | None = None, seed: int = 7, n_train: int = 2000, n_test: int = 500) -> DataSplits:
    """Ten-class 28x28 digits: IDX files from ``source_dir`` if given, else builtin glyphs."""
    if not source_dir:
        return synthetic_digits(seed, n_train, n_test)
    from .datasets import load_idx_digits
    return load_idx_digits(source_dir, n_train, n_test)


@functools.lru_cache(maxsize=4)
def _load_task_cached(key: tuple) -> DataSplits:
    task, seed, m, n_train, n_test, h, w, ch, n_clouds, cov, data_dir = key
    if task == "mnist":
        return mnist_task(data_dir or None, seed, n_train, n_test)
    return generate_maps(seed, m, n_train, n_test, h, w, ch, n_clouds, cov)


def load_task(world: WorldConfig) -> DataSplits:
    key = (world.task, world.data_seed, world.n_classes, world.n_train, world.n_test,
           world.height, world.width, world.channels, world.n_clouds, world.cloud_coverage,
           world.data_dir)
    splits = _load_task_cached(key)
    img = splits.train.images
    if img.shape[1:] != (world.channels, world.height, world.width) or splits.n_classes != world.n_classes:
        raise ValueError(f"dataset geometry {img.shape[1:]} / {splits.n_classes} classes does not match "
                         f"world config ({world.channels}, {world.height}, {world.width}) / {world.n_classes}")
    return splits


# ------------------------------------------------------------- observation

def window_origin(position, window: int, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-left corner (row, col) of the view centered at ``position``, clamped inside the map."""
    pos = np.asarray(position, dtype=np.float64).reshape(-1, 2)
    c0 = np.clip(np.floor(pos[:, 0]).astype(int) - window // 2, 0, width - window)
    r0 = np.clip(np.floor(pos[:, 1]).astype(int) - window // 2, 0, height - window)
    return r0, c0


def observe(image: np.ndarray, position, window: int) -> np.ndarray:
    """``[C, p, p]`` view of one image around one position."""
    c, h, w = image.shape
    r0, c0 = window_origin(position, window, h, w)
    return image[:, r0[0]:r0[0] + window, c0[0]:c0[0] + window].astype(np.float64)


def observe_batch(images: np.ndarray, positions: np.ndarray, window: int, map_index=None) -> np.ndarray:
    """Views for many robots; robot ``r`` sits on ``images[map_index[r]]``
    (``images[r]`` when ``map_index`` is None)."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    n = len(pos)
    _, c, h, w = images.shape
    idx = np.arange(n) if map_index is None else np.asarray(map_index)
    r0, c0 = window_origin(pos, window, h, w)
    off = np.arange(window)
    rows = (r0[:, None] + off[None, :])[:, None, :, None]
    cols = (c0[:, None] + off[None, :])[:, None, None, :]
    chans = np.arange(c)[None, :, None, None]
    return images[idx[:, None, None, None], chans, rows, cols].astype(np.float64)


def relative_observation(window: int, height: int, width: int) -> float:
    return window * window / (height * width)


# ------------------------------------------------------------------ motion

def clamp_positions(pos: np.ndarray, height: int, width: int) -> np.ndarray:
    out = np.array(pos, dtype=np.float64)
    out[..., 0] = np.clip(out[..., 0], 0.0, width - 1.0)
    out[..., 1] = np.clip(out[..., 1], 0.0, height - 1.0)
    return out


def step_motion(positions, goals, step: float, height: int, width: int,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Move up to ``step`` pixels straight toward each goal.

    ``goals=None`` takes a random step of exactly ``step`` pixels in a uniformly
    drawn direction instead. Results are clamped to the map.
    """
    if step <= 0:
        raise ValueError("step size must be positive")
    pos = np.asarray(positions, dtype=np.float64)
    flat = pos.reshape(-1, 2)
    if goals is None:
        if rng is None:
            raise ValueError("random steps need an rng")
        ang = rng.uniform(0.0, 2 * np.pi, len(flat))
        moved = flat + step * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        g = np.asarray(goals, dtype=np.float64).reshape(-1, 2)
        delta = g - flat
        dist = np.sqrt((delta * delta).sum(axis=1))
        frac = np.where(dist > step, step / np.where(dist > 0, dist, 1.0), 1.0)
        moved = flat + delta * frac[:, None]
    return clamp_positions(moved, height, width).reshape(pos.shape)


def initial_positions(rng: np.random.Generator, n: int, height: int, width: int) -> np.ndarray:
    return np.stack([rng.uniform(0, width - 1, n), rng.uniform(0, height - 1, n)], axis=1)
