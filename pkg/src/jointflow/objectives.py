"""Training objectives, conditional sampling and conditional density evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Node
from .flows import FlowModel

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class Prior:
    """Standard normal prior on ``R^dim``."""

    dim: int
    kind: str = "standard-normal"

    def log_density(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64).reshape(-1, self.dim)
        return -0.5 * np.sum(z * z, axis=1) - 0.5 * self.dim * LOG_2PI

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.dim))


def neg_log_prior(z: Node) -> Node:
    """Per-sample ``-log N(z; 0, I)`` for a ``(B, d)`` node."""
    d = z.shape[1]
    return ag.sum_(z * z, axis=1) * 0.5 + 0.5 * d * LOG_2PI


# ---------------------------------------------------------------------------
# rule-based surrogates


RULE_KINDS = ("circle", "diamond", "line", "cross", "parabola")


@dataclass(frozen=True)
class RuleLoss:
    """Hand-written surrogate for ``-log p_X``; zero exactly on the target set."""

    kind: str
    scale: float | None = None
    radius: float = 1.0
    sigma_r: float = 0.1
    size: float = 1.0

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"unknown rule kind {self.kind!r}; expected one of {RULE_KINDS}")

    @property
    def lam(self) -> float:
        if self.scale is not None:
            return float(self.scale)
        return 1.0 / self.sigma_r if self.kind == "circle" else 10.0

    def __call__(self, x):
        return rule_eval(self.kind, x, radius=self.radius, size=self.size)


def rule_eval(kind: str, x, radius: float = 1.0, size: float = 1.0):
    """Per-point rule residual; works on arrays and on graph nodes."""
    if isinstance(x, Node):
        cols = [ag.take(x, slice(i, i + 1)) for i in range(x.shape[1])]
        if kind == "circle":
            r = ag.sum_(x * x, axis=1) - radius**2
        elif kind == "diamond":
            r = ag.sum_(ag.abs_(x), axis=1) - size
        elif kind == "line":
            r = ag.sum_(x, axis=1)
        elif kind == "cross":
            prod = cols[0]
            for c in cols[1:]:
                prod = prod * c
            r = ag.reshape(prod, (x.shape[0],))
        elif kind == "parabola":
            r = ag.reshape(cols[1] - cols[0] * cols[0], (x.shape[0],))
        else:
            raise ValueError(f"unknown rule kind {kind!r}")
        return ag.abs_(r)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if kind == "circle":
        r = np.sum(x * x, axis=1) - radius**2
    elif kind == "diamond":
        r = np.sum(np.abs(x), axis=1) - size
    elif kind == "line":
        r = np.sum(x, axis=1)
    elif kind == "cross":
        r = np.prod(x, axis=1)
    elif kind == "parabola":
        r = x[:, 1] - x[:, 0] ** 2
    else:
        raise ValueError(f"unknown rule kind {kind!r}")
    return np.abs(r)


# ---------------------------------------------------------------------------
# losses


def loss_flow(model: FlowModel, x) -> Node:
    """Mean ``-log p_Z(F(x)) - log|det J_F(x)|`` for a non-conditional model."""
    z, logdet = model.forward(np.asarray(x, dtype=np.float64).reshape(len(x), -1))
    return ag.mean(neg_log_prior(z) - logdet)


def loss_backwards(model: FlowModel, z, rule: RuleLoss) -> Node:
    """Rule-based loss evaluated through the inverse map on prior draws."""
    x, logdet = model.inverse(np.asarray(z, dtype=np.float64))
    return ag.mean(rule(x) * rule.lam - logdet)


@dataclass(frozen=True)
class CondObjectiveConfig:
    """``distance`` picks how the L1 term reduces over condition elements.

    ``"mean"`` averages them; ``"sum"`` adds them, which keeps the per-element
    weight at ``lam`` for image-sized conditions.  Either way the batch is
    averaged and ``raw_distance`` reports the per-element mean.
    """

    lam: float = 100.0
    distance: str = "mean"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.distance not in ("mean", "sum"):
            raise ValueError(f"distance must be 'mean' or 'sum', got {self.distance!r}")


@dataclass(frozen=True)
class LossTerms:
    """Batch means of the three joint-objective terms.

    ``distance`` is already multiplied by lambda; ``raw_distance`` is not.
    """

    total: float
    nll: float
    distance: float
    logdet: float
    raw_distance: float


def loss_conditional(model: FlowModel, u, y=None, cfg: CondObjectiveConfig = CondObjectiveConfig()):
    """Joint objective on a batch.

    ``u`` is either the packed model input ``(B, D)`` (with ``y=None``) or the
    data part ``x`` with ``y`` given separately.  Returns ``(total, terms)``.
    """
    packed = np.asarray(u, dtype=np.float64) if y is None else model.join(x=u, y=y)
    out, logdet = model.forward(packed)
    z = ag.take(out, model.x_index, unique=True)
    nll = ag.mean(neg_log_prior(z))
    if model.y_index.size:
        y_out = ag.take(out, model.y_index, unique=True)
        y_in = packed[:, model.y_index]
        raw = ag.mean(ag.abs_(y_out - y_in))
    else:
        raw = ag.as_node(0.0)
    dist = raw * (cfg.lam * (model.y_index.size if cfg.distance == "sum" else 1))
    ld = -ag.mean(logdet)
    total = nll + dist + ld
    terms = LossTerms(float(total.value), float(nll.value), float(dist.value), float(ld.value), float(raw.value))
    return total, terms


# ---------------------------------------------------------------------------
# inference


def _broadcast_condition(model: FlowModel, y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    per = model.y_index.size
    if y.size == per:
        return np.broadcast_to(y.reshape((1,) + model.y_shape), (n,) + model.y_shape).copy()
    if y.size == n * per:
        return y.reshape((n,) + model.y_shape)
    raise ValueError(f"condition has {y.size} elements; expected {per} or {n * per}")


def sample_conditional(model: FlowModel, y, n: int, rng: np.random.Generator):
    """Draw ``n`` samples of ``x`` given ``y``.

    Returns ``(x, y_returned, z)``; ``y_returned`` is the condition part of the
    inverse map, which should reproduce ``y``.
    """
    y = _broadcast_condition(model, y, n)
    z = rng.standard_normal((n,) + model.x_shape)
    u, _ = model.inverse_transform(model.join(z, y))
    x, y_back = model.split(u)
    return x, y_back, z


def jacobian_blocks(model: FlowModel, x, y, step: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference blocks of the Jacobian of ``(x, y) -> (z, y')`` at one point."""
    u = model.join(np.asarray(x, dtype=np.float64)[None], np.asarray(y, dtype=np.float64)[None])[0]
    if u.size > 16:
        raise ValueError(f"jacobian_blocks supports total dimension <= 16, got {u.size}")
    jac = ag.numerical_jacobian(lambda b: model.transform(b)[0], u, step)
    xi, yi = model.x_index, model.y_index
    return {
        "dz_dx": jac[np.ix_(xi, xi)],
        "dz_dy": jac[np.ix_(xi, yi)],
        "dy_dx": jac[np.ix_(yi, xi)],
        "dy_dy": jac[np.ix_(yi, yi)],
        "full": jac,
    }


def log_density_conditional(model: FlowModel, x, y, exact: bool = False, step: float = 1e-5) -> np.ndarray:
    """``log p(x | y)`` per sample.

    The default uses the full-map log-determinant, which approximates the
    ``dz/dx`` block once ``y'`` tracks ``y``.  ``exact=True`` takes the block
    determinant from a numerical Jacobian (total dimension <= 16).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    y = _broadcast_condition(model, y, n)
    packed = model.join(x, y)
    out, logdet = model.transform(packed)
    logp = Prior(model.x_index.size).log_density(out[:, model.x_index])
    if not exact:
        return logp + logdet
    if model.dim > 16:
        raise ValueError(f"exact mode supports total dimension <= 16, got {model.dim}")
    blocks = np.empty(n)
    for i in range(n):
        jac = ag.numerical_jacobian(lambda b: model.transform(b)[0], packed[i], step)
        _, blocks[i] = np.linalg.slogdet(jac[np.ix_(model.x_index, model.x_index)])
    return logp + blocks
