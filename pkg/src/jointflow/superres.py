"""Two-step residual super-resolution over image pyramids.

Images are ``(..., H, W, C)`` arrays.  The coarse-to-fine chain is
``x2 -> x1 -> x0`` with a pooling factor of 2 per step.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import JointData, Standardization
from .flows import FlowModel


def avg_pool(img, k: int) -> np.ndarray:
    """Mean over non-overlapping ``k x k`` blocks.

    Even factors are applied as repeated 2x2 pooling; since halving is exact in
    binary floating point, nested pooling then matches a single larger pool bit
    for bit.
    """
    img = np.asarray(img, dtype=np.float64)
    if k < 1:
        raise ValueError("pooling factor must be >= 1")
    h, w = img.shape[-3], img.shape[-2]
    if h % k or w % k:
        raise ValueError(f"spatial extent {h}x{w} not divisible by {k}")
    if k == 1:
        return img.copy()
    if k % 2 == 0:
        a = img[..., 0::2, 0::2, :]
        b = img[..., 0::2, 1::2, :]
        c = img[..., 1::2, 0::2, :]
        d = img[..., 1::2, 1::2, :]
        return avg_pool(((a + b) + (c + d)) / 4.0, k // 2)
    lead = img.shape[:-3]
    blocks = img.reshape(lead + (h // k, k, w // k, k, img.shape[-1]))
    return blocks.mean(axis=(-4, -2))


def upsample(img, k: int) -> np.ndarray:
    """Nearest-neighbour replication by ``k`` along both spatial axes."""
    img = np.asarray(img, dtype=np.float64)
    return np.repeat(np.repeat(img, k, axis=-3), k, axis=-2)


@dataclass
class ImagePyramid:
    x0: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    k: int = 2


def build_pyramid(corpus, k: int = 2) -> ImagePyramid:
    x0 = np.asarray(corpus, dtype=np.float64)
    x1 = avg_pool(x0, k)
    return ImagePyramid(x0, x1, avg_pool(x1, k), k)


def residual_pair(fine, coarse, k: int = 2) -> JointData:
    """``x = fine - up(coarse)``, ``y = up(coarse)``."""
    y = upsample(coarse, k)
    return JointData(np.asarray(fine, dtype=np.float64) - y, y, None, "residual")


def build_residual_pairs(corpus, k: int = 2) -> tuple[JointData, JointData]:
    """Level-1 pairs at full resolution and level-2 pairs at half resolution."""
    pyr = build_pyramid(corpus, k)
    level1 = residual_pair(pyr.x0, pyr.x1, k)
    level2 = residual_pair(pyr.x1, pyr.x2, k)
    level1.meta["level"], level2.meta["level"] = 1, 2
    return level1, level2


@dataclass
class SuperResResult:
    y2: np.ndarray  # the low-res condition as given
    y2_up: np.ndarray  # upsampled once
    x1: np.ndarray  # (n1, ...) intermediate reconstructions
    x0: np.ndarray  # (n1, n2, ...) full-resolution reconstructions
    z2: np.ndarray
    z1: np.ndarray


def _identity_stats() -> Standardization:
    return Standardization(0.0, 1.0)


def _sample_residual(model: FlowModel, cond: np.ndarray, stats: Standardization, rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw one residual for each condition image; returns ``(residual, z)`` in raw units."""
    n = cond.shape[0]
    if cond.shape[1:] != model.y_shape:
        raise ValueError(f"condition shape {cond.shape[1:]} does not match model {model.y_shape}")
    z = rng.standard_normal((n,) + model.x_shape)
    out, _ = model.inverse_transform(model.join(z, stats.apply(cond)))
    x, _ = model.split(out)
    return stats.invert(x), z


def two_step_inference(f1: FlowModel, f2: FlowModel, y2, n1: int, n2: int, rng: np.random.Generator,
                       stats1: Standardization | None = None, stats2: Standardization | None = None,
                       k: int = 2) -> SuperResResult:
    """Sample ``n1`` intermediate images from ``f2`` and ``n2`` refinements of each from ``f1``.

    ``stats1``/``stats2`` are the standardizations the models were trained
    under; omitted means identity.
    """
    stats1 = stats1 or _identity_stats()
    stats2 = stats2 or _identity_stats()
    y2 = np.asarray(y2, dtype=np.float64)
    y2_up = upsample(y2, k)
    x1 = np.empty((n1,) + y2_up.shape)
    z2 = np.empty((n1,) + f2.x_shape)
    x0 = np.empty((n1, n2) + upsample(y2_up, k).shape)
    z1 = np.empty((n1, n2) + f1.x_shape)
    for i in range(n1):
        resid, z2[i] = _sample_residual(f2, y2_up[None], stats2, rng)
        x1[i] = resid[0] + y2_up
        y1 = upsample(x1[i], k)
        for j in range(n2):
            resid, z1[i, j] = _sample_residual(f1, y1[None], stats1, rng)
            x0[i, j] = resid[0] + y1
    return SuperResResult(y2, y2_up, x1, x0, z2, z1)


def consistency_check(reconstructions, y2, k: int = 4, scale: float = 1.0) -> np.ndarray:
    """Per-sample ``max |avg_pool(x0, k) - y2| / scale``."""
    diff = np.abs(avg_pool(reconstructions, k) - np.asarray(y2, dtype=np.float64))
    return diff.max(axis=(-3, -2, -1)) / scale


def _write_tensor(path: Path, img: np.ndarray) -> None:
    """Rows of the first channel; extra channels are appended as further row blocks."""
    img = np.asarray(img)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for c in range(img.shape[-1]):
            for row in img[..., c]:
                w.writerow([repr(float(v)) for v in row])


def export_grid(directory, result: SuperResResult) -> Path:
    """One CSV per image plus a JSON manifest laid out by column (i) and row (j)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"condition": "y2.csv", "condition_upsampled": "y2_up.csv", "intermediate": {}, "final": {}}
    _write_tensor(directory / "y2.csv", result.y2)
    _write_tensor(directory / "y2_up.csv", result.y2_up)
    for i in range(result.x1.shape[0]):
        name = f"x1_{i}.csv"
        _write_tensor(directory / name, result.x1[i])
        manifest["intermediate"][str(i)] = name
        for j in range(result.x0.shape[1]):
            name = f"x0_{i}_{j}.csv"
            _write_tensor(directory / name, result.x0[i, j])
            manifest["final"][f"{i},{j}"] = name
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
