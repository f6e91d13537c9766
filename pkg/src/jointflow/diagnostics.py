"""Latent-space and round-trip diagnostics for trained flows."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .flows import FlowModel

BINS = 50
RANGE = (-4.0, 4.0)
OUTLIER_KS = 0.1
MIN_POINTS = 1000


def ks_statistic(samples) -> float:
    """Two-sided one-sample KS distance to the standard normal CDF."""
    x = np.sort(np.asarray(samples, dtype=np.float64).reshape(-1))
    n = x.size
    if n == 0:
        raise ValueError("KS statistic of an empty sample")
    cdf = ndtr(x)
    above = np.arange(1, n + 1) / n - cdf
    below = cdf - np.arange(n) / n
    return float(max(above.max(), below.max()))


@dataclass
class HistogramReport:
    edges: np.ndarray  # (bins + 1,)
    counts: np.ndarray  # (dims, bins)
    density: np.ndarray  # (dims, bins), normalised over in-range counts
    prior: np.ndarray  # (bins,), bin-averaged standard normal density
    ks: np.ndarray  # (dims,)
    n_points: int
    threshold: float = OUTLIER_KS

    @property
    def dims(self) -> int:
        return self.counts.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def envelope(self) -> float:
        return envelope_thickness(self)

    @property
    def outliers(self) -> list[int]:
        return flag_outlier_dims(self, self.threshold)

    def summary(self) -> dict:
        return {
            "n_points": self.n_points,
            "dims": self.dims,
            "bins": int(self.edges.size - 1),
            "range": [float(self.edges[0]), float(self.edges[-1])],
            "envelope_thickness": self.envelope if self.dims >= 2 else None,
            "ks": [float(v) for v in self.ks],
            "ks_max": float(self.ks.max()),
            "outlier_threshold": self.threshold,
            "outlier_dims": self.outliers,
        }

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dim", "bin", "left", "right", "count", "density", "prior"])
            for d in range(self.dims):
                for b in range(self.edges.size - 1):
                    w.writerow([d, b, repr(float(self.edges[b])), repr(float(self.edges[b + 1])),
                                int(self.counts[d, b]), repr(float(self.density[d, b])), repr(float(self.prior[b]))])
        return path

    def write_summary(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return path


def histogram_report(latents, bins: int = BINS, value_range=RANGE, threshold: float = OUTLIER_KS) -> HistogramReport:
    """Per-dimension histograms of an ``(n, dims)`` latent array."""
    z = np.asarray(latents, dtype=np.float64)
    z = z.reshape(z.shape[0], -1)
    edges = np.linspace(value_range[0], value_range[1], bins + 1)
    counts = np.stack([np.histogram(z[:, d], bins=edges)[0] for d in range(z.shape[1])]).astype(np.int64)
    widths = np.diff(edges)
    in_range = counts.sum(axis=1, keepdims=True)
    density = np.divide(counts, in_range * widths, out=np.zeros(counts.shape), where=in_range > 0)
    prior = np.diff(ndtr(edges)) / widths
    ks = np.array([ks_statistic(z[:, d]) for d in range(z.shape[1])])
    return HistogramReport(edges, counts, density, prior, ks, z.shape[0], threshold)


def latent_histograms(model: FlowModel, x, y=None, min_points: int = MIN_POINTS, **kwargs) -> HistogramReport:
    """Map held-out pairs through the model and histogram every latent dimension."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < min_points:
        raise ValueError(f"latent histograms need at least {min_points} points, got {x.shape[0]}")
    out, _ = model.transform(model.join(x, y))
    return histogram_report(out[:, model.x_index], **kwargs)


def envelope_thickness(report: HistogramReport) -> float:
    """Mean over bins of the spread (max minus min) of the per-dimension densities."""
    if report.dims < 2:
        raise ValueError("envelope thickness needs at least two dimensions")
    spread = report.density.max(axis=0) - report.density.min(axis=0)
    return float(spread.mean())


def flag_outlier_dims(report: HistogramReport, threshold: float = OUTLIER_KS) -> list[int]:
    """Dimensions whose KS statistic exceeds ``threshold``, worst first."""
    idx = np.flatnonzero(report.ks > threshold)
    return [int(i) for i in idx[np.argsort(-report.ks[idx], kind="stable")]]


def invertibility_residual(model: FlowModel, corpus) -> tuple[float, float]:
    """Max and mean of the per-point sup-norm round-trip error."""
    corpus = np.asarray(corpus, dtype=np.float64).reshape(len(corpus), -1)
    out, _ = model.transform(corpus)
    back, _ = model.inverse_transform(out)
    err = np.abs(back - corpus).max(axis=1)
    return float(err.max()), float(err.mean())


def support_coverage(samples, predicate, eps: float, cond=None) -> float:
    """Fraction of samples inside the ``eps``-dilated support.

    ``predicate`` has the dataset signature ``(x, cond, eps)``; when ``cond`` is
    None it is called as ``predicate(x, eps=eps)``.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] == 0:
        return float("nan")
    inside = predicate(samples, eps=eps) if cond is None else predicate(samples, cond, eps)
    return float(np.mean(inside))


@dataclass(frozen=True)
class ConditionReport:
    forward: float  # mean |F_Y'(x, y) - y|
    inverse: float  # mean |F_Y^-1(z, y) - y|


def condition_preservation(model: FlowModel, x, y, rng: np.random.Generator) -> ConditionReport:
    """Condition round trip in both directions; the inverse direction uses fresh prior draws."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    out, _ = model.transform(model.join(x, y))
    fwd = np.abs(out[:, model.y_index] - y.reshape(n, -1)).mean()
    z = rng.standard_normal((n,) + model.x_shape)
    back, _ = model.inverse_transform(model.join(z, y))
    inv = np.abs(back[:, model.y_index] - y.reshape(n, -1)).mean()
    return ConditionReport(float(fwd), float(inv))


def export_diagnostics(directory, report: HistogramReport, extra: dict | None = None) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"histograms": report.to_csv(directory / "histograms.csv")}
    summary = report.summary()
    summary.update(extra or {})
    paths["summary"] = directory / "diagnostics.json"
    paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return paths
