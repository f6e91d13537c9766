"""Seeded dataset generators, membership predicates, preprocessing and batching.

Gaussian jitter in every generator is truncated at three standard deviations,
so each generated point lies inside its own analytic support exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

CRESCENT = {"radius": 1.0, "sigma": 0.1, "offset": (1.0, 0.5), "truncate": 3.0}
SECTOR_WIDTH = 1.0
SHAPES4 = {
    "ring": {"center": (0.0, 0.0), "radius": 1.0, "sigma": 0.05},
    "blobs": {"centers": ((-0.8, -0.6), (0.8, -0.6)), "sigma": 0.15},
    "disk": {"center": (0.5, 0.5), "radius": 0.6},
    "segment": {"start": (-1.2, 1.0), "end": (1.2, -0.2), "sigma": 0.05},
}
SHAPE_NAMES = ("ring", "blobs", "disk", "segment")
TRUNCATE = 3.0
IMAGE_LEVELS = 7
# dyadic intensity step: pooled means and residuals stay exactly representable
LEVEL_STEP = 0.125


@dataclass
class JointData:
    """Paired samples: ``x`` (N, *x_shape), ``y`` (N, *y_shape).

    ``labels`` holds integer classes for discrete conditions (else None).
    """

    x: np.ndarray
    y: np.ndarray
    labels: np.ndarray | None = None
    kind: str = ""
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx) -> "JointData":
        labels = None if self.labels is None else self.labels[idx]
        return JointData(self.x[idx], self.y[idx], labels, self.kind, dict(self.meta))

    def predicate(self) -> Callable:
        return MEMBERSHIP[self.kind]


def _truncated_normal(rng: np.random.Generator, size, limit: float = TRUNCATE) -> np.ndarray:
    out = rng.standard_normal(size)
    bad = np.abs(out) > limit
    while np.any(bad):
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > limit
    return out


# ---------------------------------------------------------------------------
# generators


def gen_circle(n: int, r: float = 1.0, sigma_r: float = 0.1, seed: int = 0) -> np.ndarray:
    """Points with radius ~ N(r, sigma_r^2) and uniform angle."""
    if r <= 0 or sigma_r < 0:
        raise ValueError("need r > 0 and sigma_r >= 0")
    rng = np.random.default_rng(seed)
    rho = r + sigma_r * rng.standard_normal(n)
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.stack([rho * np.cos(theta), rho * np.sin(theta)], axis=1)


def gen_crescents(n: int, seed: int = 0) -> JointData:
    """Two interleaved half-annuli; labels +1 (upper, at origin) and -1 (lower, offset)."""
    if n % 2:
        raise ValueError("n must be even")
    rng = np.random.default_rng(seed)
    half = n // 2
    labels = np.repeat([1, -1], half)
    theta = rng.uniform(0.0, np.pi, n)
    rho = CRESCENT["radius"] + CRESCENT["sigma"] * _truncated_normal(rng, n, CRESCENT["truncate"])
    px, py = rho * np.cos(theta), rho * np.sin(theta)
    ox, oy = CRESCENT["offset"]
    lower = labels == -1
    px[lower], py[lower] = ox - px[lower], oy - py[lower]
    order = rng.permutation(n)
    x = np.stack([px, py], axis=1)[order]
    labels = labels[order]
    meta = {"radius": CRESCENT["radius"], "sigma": CRESCENT["sigma"], "offset": list(CRESCENT["offset"]),
            "truncate_sigmas": CRESCENT["truncate"]}
    return JointData(x, labels[:, None].astype(np.float64), labels, "crescents", meta)


def gen_sectors(n: int, seed: int = 0) -> JointData:
    """Angle ``y ~ U[0, 2pi)``; ``x`` area-uniform in the unit-disc sector of width 1 rad around ``y``."""
    rng = np.random.default_rng(seed)
    y = rng.uniform(0.0, 2.0 * np.pi, n)
    theta = y + rng.uniform(-SECTOR_WIDTH / 2, SECTOR_WIDTH / 2, n)
    r = np.sqrt(rng.uniform(0.0, 1.0, n))
    x = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    return JointData(x, y[:, None], None, "sectors", {"width": SECTOR_WIDTH})


def _shape_points(name: str, n: int, rng: np.random.Generator) -> np.ndarray:
    c = SHAPES4[name]
    if name == "ring":
        theta = rng.uniform(0, 2 * np.pi, n)
        rho = c["radius"] + c["sigma"] * _truncated_normal(rng, n)
        return np.array(c["center"]) + np.stack([rho * np.cos(theta), rho * np.sin(theta)], axis=1)
    if name == "blobs":
        which = rng.integers(0, 2, n)
        centers = np.array(c["centers"])[which]
        jitter = _truncated_normal(rng, (n, 2))
        norms = np.linalg.norm(jitter, axis=1, keepdims=True)
        jitter = np.where(norms > TRUNCATE, jitter * TRUNCATE / np.maximum(norms, 1e-300), jitter)
        return centers + c["sigma"] * jitter
    if name == "disk":
        theta = rng.uniform(0, 2 * np.pi, n)
        rho = c["radius"] * np.sqrt(rng.uniform(0, 1, n))
        return np.array(c["center"]) + np.stack([rho * np.cos(theta), rho * np.sin(theta)], axis=1)
    if name == "segment":
        a, b = np.array(c["start"]), np.array(c["end"])
        t = rng.uniform(0, 1, n)[:, None]
        d = (b - a) / np.linalg.norm(b - a)
        normal = np.array([-d[1], d[0]])
        return a + t * (b - a) + c["sigma"] * _truncated_normal(rng, n)[:, None] * normal
    raise ValueError(name)


def gen_shapes4(n: int, seed: int = 0) -> JointData:
    """Four overlapping shapes with different topology (labels 0..3)."""
    if n % 4:
        raise ValueError("n must be divisible by 4")
    rng = np.random.default_rng(seed)
    per = n // 4
    pts = np.concatenate([_shape_points(name, per, rng) for name in SHAPE_NAMES])
    labels = np.repeat(np.arange(4), per)
    order = rng.permutation(n)
    meta = {"shapes": {k: {kk: list(np.ravel(vv)) if isinstance(vv, tuple) else vv for kk, vv in v.items()}
                       for k, v in SHAPES4.items()}, "names": list(SHAPE_NAMES), "truncate_sigmas": TRUNCATE}
    return JointData(pts[order], labels[order][:, None].astype(np.float64), labels[order], "shapes4", meta)


def _draw_glyph(img: np.ndarray, kind: int, rng: np.random.Generator) -> None:
    size = img.shape[0]
    level = rng.integers(3, IMAGE_LEVELS + 1) * LEVEL_STEP
    if kind == 0:  # bar
        thick = rng.integers(2, max(3, size // 4) + 1)
        length = rng.integers(size // 2, size + 1)
        start = rng.integers(0, size - length + 1)
        pos = rng.integers(0, size - thick + 1)
        if rng.integers(0, 2):
            img[pos : pos + thick, start : start + length] = level
        else:
            img[start : start + length, pos : pos + thick] = level
    elif kind == 1:  # box outline
        h = rng.integers(size // 2, size + 1)
        w = rng.integers(size // 2, size + 1)
        r0 = rng.integers(0, size - h + 1)
        c0 = rng.integers(0, size - w + 1)
        img[r0 : r0 + h, c0 : c0 + w] = level
        inner = rng.integers(0, IMAGE_LEVELS) * LEVEL_STEP
        img[r0 + 1 : r0 + h - 1, c0 + 1 : c0 + w - 1] = min(inner, level)
    else:  # ring
        cy, cx = rng.uniform(size * 0.3, size * 0.7, 2)
        rad = rng.uniform(size * 0.2, size * 0.45)
        yy, xx = np.mgrid[0:size, 0:size] + 0.5
        dist = np.hypot(yy - cy, xx - cx)
        img[np.abs(dist - rad) < 1.2] = level


def gen_toy_images(n: int, size: int = 16, seed: int = 0) -> JointData:
    """Glyph images (bar, box, ring) on an 8-level intensity grid; label = glyph kind."""
    if size not in (8, 16):
        raise ValueError("size must be 8 or 16")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, n)
    imgs = np.zeros((n, size, size, 1))
    for i in range(n):
        _draw_glyph(imgs[i, :, :, 0], int(labels[i]), rng)
        if rng.uniform() < 0.3:
            _draw_glyph(imgs[i, :, :, 0], int(rng.integers(0, 3)), rng)
    imgs = np.round(imgs / LEVEL_STEP) * LEVEL_STEP
    y = np.broadcast_to(labels[:, None, None, None].astype(np.float64), imgs.shape).copy()
    return JointData(imgs, y, labels, "images", {"size": size, "levels": IMAGE_LEVELS + 1})


# ---------------------------------------------------------------------------
# membership predicates (distance to the analytic support)


def _segment_distance(p: np.ndarray, a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


def _half_annulus_distance(p: np.ndarray, radius: float, half_width: float) -> np.ndarray:
    """Distance to ``{r in [R-w, R+w], angle in [0, pi]}``."""
    rho = np.linalg.norm(p, axis=1)
    upper = np.maximum(0.0, np.abs(rho - radius) - half_width)
    dx = np.maximum(0.0, np.abs(np.abs(p[:, 0]) - radius) - half_width)
    lower = np.hypot(p[:, 1], dx)
    return np.where(p[:, 1] >= 0, upper, lower)


def crescent_distance(x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    labels = np.broadcast_to(np.asarray(labels).reshape(-1), (x.shape[0],))
    w = CRESCENT["sigma"] * CRESCENT["truncate"]
    ox, oy = CRESCENT["offset"]
    mirrored = np.stack([ox - x[:, 0], oy - x[:, 1]], axis=1)
    d_up = _half_annulus_distance(x, CRESCENT["radius"], w)
    d_low = _half_annulus_distance(mirrored, CRESCENT["radius"], w)
    return np.where(labels > 0, d_up, d_low)


def _wrap(angle: np.ndarray) -> np.ndarray:
    return (angle + np.pi) % (2.0 * np.pi) - np.pi


def sector_distance(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.broadcast_to(np.asarray(y, dtype=float).reshape(-1), (x.shape[0],))
    half = SECTOR_WIDTH / 2
    rho = np.linalg.norm(x, axis=1)
    inside = np.abs(_wrap(np.arctan2(x[:, 1], x[:, 0]) - y)) <= half
    edges = []
    for sgn in (-1.0, 1.0):
        ang = y + sgn * half
        ends = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        t = np.clip(np.sum(x * ends, axis=1), 0.0, 1.0)
        edges.append(np.linalg.norm(x - t[:, None] * ends, axis=1))
    return np.where(inside, np.maximum(0.0, rho - 1.0), np.minimum(*edges))


def shape_distance(x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    labels = np.broadcast_to(np.asarray(labels).reshape(-1), (x.shape[0],)).astype(int)
    out = np.empty(x.shape[0])
    for k, name in enumerate(SHAPE_NAMES):
        sel = labels == k
        if not np.any(sel):
            continue
        p, c = x[sel], SHAPES4[name]
        if name == "ring":
            rho = np.linalg.norm(p - np.array(c["center"]), axis=1)
            out[sel] = np.maximum(0.0, np.abs(rho - c["radius"]) - TRUNCATE * c["sigma"])
        elif name == "blobs":
            d = [np.linalg.norm(p - np.array(ctr), axis=1) for ctr in c["centers"]]
            out[sel] = np.maximum(0.0, np.minimum(*d) - TRUNCATE * c["sigma"])
        elif name == "disk":
            out[sel] = np.maximum(0.0, np.linalg.norm(p - np.array(c["center"]), axis=1) - c["radius"])
        else:
            out[sel] = np.maximum(0.0, _segment_distance(p, c["start"], c["end"]) - TRUNCATE * c["sigma"])
    return out


def _member(distance_fn):
    def predicate(x, cond, eps: float = 0.0) -> np.ndarray:
        return distance_fn(x, cond) <= eps + 1e-12

    return predicate


MEMBERSHIP = {
    "crescents": _member(crescent_distance),
    "sectors": _member(sector_distance),
    "shapes4": _member(shape_distance),
}


# ---------------------------------------------------------------------------
# preprocessing


def dequantize(batch: np.ndarray, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """``(1 - alpha) * v + alpha * N(0, 1)`` with fresh noise on every call."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    batch = np.asarray(batch, dtype=np.float64)
    if alpha == 0.0:
        return batch.copy()
    return (1.0 - alpha) * batch + alpha * rng.standard_normal(batch.shape)


@dataclass(frozen=True)
class Standardization:
    mean: float
    std: float

    def apply(self, v: np.ndarray) -> np.ndarray:
        return (np.asarray(v) - self.mean) / self.std

    def invert(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v) * self.std + self.mean


def standardize(data: JointData) -> tuple[JointData, Standardization]:
    """One affine map for all x and y elements: global mean 0, std 1."""
    allv = np.concatenate([data.x.reshape(-1), data.y.reshape(-1)])
    mean = float(allv.mean())
    std = float(allv.std())
    if not std > 0:
        raise ValueError("cannot standardize data with zero variance")
    stats = Standardization(mean, std)
    out = JointData(stats.apply(data.x), stats.apply(data.y), data.labels, data.kind, dict(data.meta))
    out.meta["standardization"] = asdict(stats)
    return out, stats


def inverse_standardize(data: JointData, stats: Standardization) -> JointData:
    return JointData(stats.invert(data.x), stats.invert(data.y), data.labels, data.kind, dict(data.meta))


def make_batches(n_or_labels, batch_size: int, segregate: bool = False, seed=0) -> list[np.ndarray]:
    """Index batches covering one epoch exactly once.

    With ``segregate`` every batch holds a single class and classes alternate
    round-robin.  ``seed`` may be an int or a Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if not segregate:
        n = int(n_or_labels) if np.ndim(n_or_labels) == 0 else len(n_or_labels)
        perm = rng.permutation(n)
        return [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    labels = np.asarray(n_or_labels)
    if labels.ndim == 0:
        raise ValueError("segregated batching needs discrete labels")
    queues = []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if batch_size > idx.size:
            raise ValueError(f"batch size {batch_size} exceeds size {idx.size} of class {cls}")
        idx = idx[rng.permutation(idx.size)]
        queues.append([idx[i : i + batch_size] for i in range(0, idx.size, batch_size)])
    batches = []
    for k in range(max(len(q) for q in queues)):
        batches += [q[k] for q in queues if k < len(q)]
    return batches


# ---------------------------------------------------------------------------
# dataset specs and files


GENERATORS = {
    "crescents": gen_crescents,
    "sectors": gen_sectors,
    "shapes4": gen_shapes4,
}


@dataclass
class DatasetSpec:
    kind: str
    size: int
    seed: int = 0
    standardize: bool = False
    dequantize_alpha: float = 0.0
    image_size: int = 16

    def validate(self) -> None:
        if self.kind not in GENERATORS and self.kind != "images":
            raise ValueError(f"dataset.kind: unknown generator {self.kind!r}")
        if self.size <= 0:
            raise ValueError("dataset.size must be positive")


def build_dataset(spec: DatasetSpec) -> tuple[JointData, Standardization | None]:
    spec.validate()
    if spec.kind == "images":
        data = gen_toy_images(spec.size, spec.image_size, spec.seed)
    else:
        data = GENERATORS[spec.kind](spec.size, spec.seed)
    data.meta["spec"] = asdict(spec)
    stats = None
    if spec.standardize:
        data, stats = standardize(data)
    return data, stats


def save_dataset(path, data: JointData, header_extra: dict | None = None) -> Path:
    """Flat float64 payload (x then y, little endian) after a one-line JSON header."""
    path = Path(path)
    header = {
        "kind": data.kind,
        "x_shape": list(data.x.shape),
        "y_shape": list(data.y.shape),
        "labels": None if data.labels is None else data.labels.tolist(),
        "meta": data.meta,
        **(header_extra or {}),
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(np.ascontiguousarray(data.x, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(data.y, dtype="<f8").tobytes())
    return path


def load_dataset(path) -> JointData:
    raw = Path(path).read_bytes()
    line, payload = raw.split(b"\n", 1)
    header = json.loads(line)
    xs, ys = tuple(header["x_shape"]), tuple(header["y_shape"])
    nx = int(np.prod(xs))
    flat = np.frombuffer(payload, dtype="<f8")
    if flat.size != nx + int(np.prod(ys)):
        raise ValueError(f"{path}: payload size does not match header shapes")
    labels = None if header["labels"] is None else np.asarray(header["labels"])
    return JointData(flat[:nx].reshape(xs).copy(), flat[nx:].reshape(ys).copy(), labels, header["kind"], header["meta"])


def export_csv(path, data: JointData) -> Path:
    """One row per sample: flattened x columns then y columns (and label if any)."""
    import csv

    path = Path(path)
    n = len(data)
    xf, yf = data.x.reshape(n, -1), data.y.reshape(n, -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = [f"x{i}" for i in range(xf.shape[1])] + [f"y{i}" for i in range(yf.shape[1])]
        if data.labels is not None:
            head.append("label")
        w.writerow(head)
        for i in range(n):
            row = [repr(float(v)) for v in xf[i]] + [repr(float(v)) for v in yf[i]]
            if data.labels is not None:
                row.append(int(data.labels[i]))
            w.writerow(row)
    return path
