"""Invertible building blocks and the composed flow map.

A :class:`FlowModel` maps a flat batch ``(B, D)`` to ``(B, D)``.  The input
layout is the concatenated ``(x, y)`` event; the output uses the same layout,
so ``z`` sits where ``x`` was and ``y'`` where ``y`` was.  Squeeze and
factor-out steps permute elements internally; the final gather undoes those
permutations, which contributes nothing to the log-determinant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Node

CHECKPOINT_FORMAT = "jointflow-checkpoint"
CHECKPOINT_VERSION = 1

TOY_MASKS_3D = ((1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 1, 0))


# ---------------------------------------------------------------------------
# masks and compression


@dataclass(eq=False)
class Mask:
    """Element partition for a coupling layer.

    ``pattern`` is True where the element passes through unchanged.  ``idx1``
    and ``idx2`` are flat gather indices (the rows of the rectangular mask
    matrices), ordered so that reshaping yields the compressed layout.
    """

    kind: str
    pattern: np.ndarray
    idx1: np.ndarray
    idx2: np.ndarray
    shape1: tuple[int, ...]
    shape2: tuple[int, ...]
    parity: int = 0

    def __post_init__(self):
        if self.idx1.size == 0 or self.idx2.size == 0:
            raise ValueError("mask must split the input into two non-empty parts")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.pattern.shape

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Explicit ``M1``, ``M2`` with ``M1 @ u = u1`` and ``M2 @ u = u2`` for flat ``u``."""
        n = self.pattern.size
        m1 = np.zeros((self.idx1.size, n))
        m1[np.arange(self.idx1.size), self.idx1] = 1.0
        m2 = np.zeros((self.idx2.size, n))
        m2[np.arange(self.idx2.size), self.idx2] = 1.0
        return m1, m2


def binary_mask(pattern) -> Mask:
    pattern = np.asarray(pattern).astype(bool)
    if pattern.ndim != 1:
        raise ValueError("binary-vector masks are one-dimensional")
    idx1 = np.flatnonzero(pattern)
    idx2 = np.flatnonzero(~pattern)
    return Mask("binary-vector", pattern, idx1, idx2, (idx1.size,), (idx2.size,))


def checkerboard_mask(shape: tuple[int, int, int], parity: int = 0) -> Mask:
    """Checkerboard over an ``(H, W, C)`` image; each half compresses to ``(H/2, W/2, 2C)``."""
    h, w, c = shape
    if h % 2 or w % 2:
        raise ValueError(f"checkerboard mask needs even spatial extents, got {shape}")
    blocks = np.arange(h * w * c).reshape(h // 2, 2, w // 2, 2, c)
    even = np.stack([blocks[:, 0, :, 0, :], blocks[:, 1, :, 1, :]], axis=2)
    odd = np.stack([blocks[:, 0, :, 1, :], blocks[:, 1, :, 0, :]], axis=2)
    first, second = (even, odd) if parity == 0 else (odd, even)
    cshape = (h // 2, w // 2, 2 * c)
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    pattern = np.repeat(((ii + jj) % 2 == parity)[:, :, None], c, axis=2)
    return Mask("checkerboard", pattern, first.reshape(-1), second.reshape(-1), cshape, cshape, parity)


def channelwise_mask(shape: tuple[int, int, int], parity: int = 0) -> Mask:
    """Split an ``(H, W, C)`` image into its first and second channel halves."""
    h, w, c = shape
    if c % 2:
        raise ValueError(f"channelwise mask needs an even channel count, got {shape}")
    grid = np.arange(h * w * c).reshape(h, w, c)
    lo, hi = grid[..., : c // 2], grid[..., c // 2 :]
    first, second = (lo, hi) if parity == 0 else (hi, lo)
    pattern = np.zeros(shape, dtype=bool)
    if parity == 0:
        pattern[..., : c // 2] = True
    else:
        pattern[..., c // 2 :] = True
    cshape = (h, w, c // 2)
    return Mask("channelwise", pattern, first.reshape(-1), second.reshape(-1), cshape, cshape, parity)


def make_mask(kind: str, shape: tuple[int, ...], parity: int = 0, pattern=None) -> Mask:
    if kind == "binary-vector":
        return binary_mask(pattern)
    if kind == "checkerboard":
        return checkerboard_mask(shape, parity)
    if kind == "channelwise":
        return channelwise_mask(shape, parity)
    raise ValueError(f"unknown mask kind {kind!r}")


def compress(u: np.ndarray, mask: Mask) -> tuple[np.ndarray, np.ndarray]:
    """Split ``u`` (optionally batched) into its compact pass-through and transformed parts."""
    u = np.asarray(u)
    nd = len(mask.shape)
    if u.shape[u.ndim - nd :] != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match input {u.shape}")
    lead = u.shape[: u.ndim - nd]
    flat = u.reshape(lead + (-1,))
    return flat[..., mask.idx1].reshape(lead + mask.shape1), flat[..., mask.idx2].reshape(lead + mask.shape2)


def decompress(u1: np.ndarray, u2: np.ndarray, mask: Mask) -> np.ndarray:
    lead = u1.shape[: u1.ndim - len(mask.shape1)]
    flat = np.empty(lead + (mask.pattern.size,), dtype=np.result_type(u1, u2))
    flat[..., mask.idx1] = u1.reshape(lead + (-1,))
    flat[..., mask.idx2] = u2.reshape(lead + (-1,))
    return flat.reshape(lead + mask.shape)


# ---------------------------------------------------------------------------
# squeeze and factor-out


def squeeze(img: np.ndarray) -> np.ndarray:
    """Space-to-depth: ``(..., H, W, C) -> (..., H/2, W/2, 4C)``.

    Output channel ``4c + 2di + dj`` holds input ``(2i + di, 2j + dj, c)`` so
    channel groups stay contiguous.
    """
    img = np.asarray(img)
    *lead, h, w, c = img.shape
    if h % 2 or w % 2:
        raise ValueError(f"squeeze needs even spatial extents, got {(h, w)}")
    t = img.reshape(*lead, h // 2, 2, w // 2, 2, c)
    n = len(lead)
    t = t.transpose(*range(n), n, n + 2, n + 4, n + 1, n + 3)
    return t.reshape(*lead, h // 2, w // 2, 4 * c)


def unsqueeze(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    *lead, h, w, c4 = img.shape
    if c4 % 4:
        raise ValueError(f"unsqueeze needs a channel count divisible by 4, got {c4}")
    c = c4 // 4
    n = len(lead)
    t = img.reshape(*lead, h, w, c, 2, 2)
    t = t.transpose(*range(n), n, n + 3, n + 1, n + 4, n + 2)
    return t.reshape(*lead, 2 * h, 2 * w, c)


@dataclass(eq=False)
class Routing:
    """Which active positions keep flowing and which leave to ``Z`` or ``Y'``."""

    keep: np.ndarray
    to_z: np.ndarray
    to_y: np.ndarray

    def validate(self, n: int) -> None:
        allidx = np.concatenate([self.keep, self.to_z, self.to_y])
        if allidx.size != n or not np.array_equal(np.sort(allidx), np.arange(n)):
            raise ValueError(f"routing does not cover exactly {n} elements")


def plan_routing(is_cond: np.ndarray, count: int) -> Routing:
    """Factor out ``count`` elements: ``ceil(count/2)`` to Z, the rest to Y'.

    Elements are taken from the end of each role group.
    """
    is_cond = np.asarray(is_cond, dtype=bool)
    n_z, n_y = (count + 1) // 2, count // 2
    zpos = np.flatnonzero(~is_cond)
    ypos = np.flatnonzero(is_cond)
    if n_z > zpos.size or n_y > ypos.size:
        raise ValueError("not enough elements of each role to factor out")
    to_z = zpos[zpos.size - n_z :] if n_z else zpos[:0]
    to_y = ypos[ypos.size - n_y :] if n_y else ypos[:0]
    gone = np.zeros(is_cond.size, dtype=bool)
    gone[to_z] = True
    gone[to_y] = True
    return Routing(np.flatnonzero(~gone), to_z, to_y)


def factor_out(state, routing: Routing):
    """Split a flat ``(B, n)`` state into (continuing, Z-routed, Y'-routed)."""
    state = ag.as_node(state)
    routing.validate(state.shape[-1])
    return (
        ag.take(state, routing.keep, unique=True),
        ag.take(state, routing.to_z, unique=True),
        ag.take(state, routing.to_y, unique=True),
    )


def factor_in(cont, z, y, routing: Routing):
    order = np.concatenate([routing.keep, routing.to_z, routing.to_y])
    return ag.take(ag.concat([cont, z, y], axis=-1), np.argsort(order), unique=True)


# ---------------------------------------------------------------------------
# coupling networks and layers


class DenseNet:
    """Leaky-ReLU MLP with a linear output layer."""

    def __init__(self, n_in: int, n_out: int, width: int, depth: int, rng: np.random.Generator, gain: float = 0.1):
        sizes = [n_in] + [width] * depth + [n_out]
        self.weights = [ag.parameter(ag.orthogonal((a, b), gain, rng)) for a, b in zip(sizes[:-1], sizes[1:])]
        self.biases = [ag.parameter(np.zeros(b)) for b in sizes[1:]]

    def __call__(self, h: Node) -> Node:
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = ag.leaky_relu(h @ w + b)
        return h @ self.weights[-1] + self.biases[-1]

    def parameters(self) -> list[Node]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


class CouplingLayer:
    """Affine coupling: ``v2 = exp(s(u1)) * u2 + b(u1)`` with ``s = g * tanh(net(u1))``."""

    def __init__(self, mask: Mask, width: int, depth: int, rng: np.random.Generator, gain: float = 0.1):
        self.mask = mask
        n1, n2 = mask.idx1.size, mask.idx2.size
        self.scale_net = DenseNet(n1, n2, width, depth, rng, gain)
        self.shift_net = DenseNet(n1, n2, width, depth, rng, gain)
        self.scale_gain = ag.parameter(1.0)
        self._merge = np.argsort(np.concatenate([mask.idx1, mask.idx2]))

    def parameters(self) -> list[Node]:
        return self.scale_net.parameters() + self.shift_net.parameters() + [self.scale_gain]

    def _check(self, u: Node) -> None:
        if u.value.ndim != 2 or u.shape[1] != self.mask.pattern.size:
            raise ValueError(f"coupling expects (B, {self.mask.pattern.size}), got {u.shape}")

    def scale_shift(self, u1: Node) -> tuple[Node, Node]:
        s = self.scale_gain * ag.tanh(self.scale_net(u1))
        return s, self.shift_net(u1)

    def forward(self, u) -> tuple[Node, Node]:
        u = ag.as_node(u)
        self._check(u)
        u1 = ag.take(u, self.mask.idx1, unique=True)
        u2 = ag.take(u, self.mask.idx2, unique=True)
        s, b = self.scale_shift(u1)
        v2 = ag.exp(s) * u2 + b
        v = ag.take(ag.concat([u1, v2]), self._merge, unique=True)
        return v, ag.sum_(s, axis=1)

    def inverse(self, v) -> tuple[Node, Node]:
        v = ag.as_node(v)
        self._check(v)
        v1 = ag.take(v, self.mask.idx1, unique=True)
        v2 = ag.take(v, self.mask.idx2, unique=True)
        s, b = self.scale_shift(v1)
        u2 = (v2 - b) * ag.exp(-s)
        u = ag.take(ag.concat([v1, u2]), self._merge, unique=True)
        return u, -ag.sum_(s, axis=1)


def coupling_forward(u, layer: CouplingLayer) -> tuple[Node, Node]:
    return layer.forward(u)


def coupling_inverse(v, layer: CouplingLayer) -> tuple[Node, Node]:
    return layer.inverse(v)


def block_masks_3d(rng: np.random.Generator) -> list[tuple[int, int, int]]:
    order = rng.permutation(len(TOY_MASKS_3D))
    return [TOY_MASKS_3D[i] for i in order]


def make_coupling_block_3d(seed, width: int = 64, depth: int = 12, gain: float = 0.1) -> list[CouplingLayer]:
    """Six coupling layers, one per nontrivial mask of three inputs, in seeded order."""
    rng = np.random.default_rng(seed)
    return [CouplingLayer(binary_mask(p), width, depth, rng, gain) for p in block_masks_3d(rng)]


# ---------------------------------------------------------------------------
# composed model


@dataclass
class Squeeze:
    perm: np.ndarray
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]


@dataclass
class FactorOut:
    routing: Routing
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]


def _channel_routing(origin: np.ndarray, is_cond_flat: np.ndarray) -> tuple[Routing, tuple[int, ...]]:
    """Factor half of the Z-role channels and half of the Y'-role channels."""
    h, w, c = origin.shape
    role = is_cond_flat[origin[0, 0, :]]
    if np.any(is_cond_flat[origin] != role[None, None, :]):
        raise ValueError("channel roles are mixed; cannot factor by channel")
    zc, yc = np.flatnonzero(~role), np.flatnonzero(role)
    nz, ny = (zc.size + 1) // 2, yc.size // 2
    out_z, out_y = zc[zc.size - nz :], yc[yc.size - ny :]
    keep_c = np.setdiff1d(np.arange(c), np.concatenate([out_z, out_y]))
    grid = np.arange(h * w * c).reshape(h, w, c)
    routing = Routing(grid[..., keep_c].reshape(-1), grid[..., out_z].reshape(-1), grid[..., out_y].reshape(-1))
    return routing, (h, w, keep_c.size)


class FlowModel:
    """Composition of coupling, squeeze and factor-out steps.

    ``step_specs`` is a list of dicts:
    ``{"type": "coupling", "mask": kind, "parity": p}`` (or ``"pattern"`` for
    binary-vector masks), ``{"type": "squeeze"}`` or ``{"type": "factor"}``.
    """

    def __init__(
        self,
        event_shape: tuple[int, ...],
        cond_mask,
        step_specs: list[dict],
        width: int = 64,
        depth: int = 12,
        seed: int = 0,
        gain: float = 0.1,
        x_shape: tuple[int, ...] | None = None,
        y_shape: tuple[int, ...] | None = None,
    ):
        self.event_shape = tuple(event_shape)
        self.cond_mask = np.asarray(cond_mask, dtype=bool).reshape(self.event_shape)
        self.step_specs = [dict(s) for s in step_specs]
        self.width, self.depth, self.seed, self.gain = width, depth, seed, gain
        self.dim = int(np.prod(self.event_shape))
        is_cond = self.cond_mask.reshape(-1)
        self.x_index = np.flatnonzero(~is_cond)
        self.y_index = np.flatnonzero(is_cond)
        self.x_shape = tuple(x_shape) if x_shape is not None else (self.x_index.size,)
        self.y_shape = tuple(y_shape) if y_shape is not None else (self.y_index.size,)
        if int(np.prod(self.x_shape)) != self.x_index.size or int(np.prod(self.y_shape)) != self.y_index.size:
            raise ValueError("x/y shapes do not match the condition mask")
        self.meta: dict = {}

        rng = np.random.default_rng(seed)
        shape = self.event_shape
        origin = np.arange(self.dim).reshape(shape)
        gone: list[np.ndarray] = []
        self.steps: list = []
        for spec in self.step_specs:
            kind = spec["type"]
            if kind == "coupling":
                mask = make_mask(spec["mask"], shape, spec.get("parity", 0), spec.get("pattern"))
                self.steps.append(CouplingLayer(mask, width, depth, rng, gain))
            elif kind == "squeeze":
                perm = squeeze(np.arange(origin.size).reshape(shape)).reshape(-1)
                new_shape = squeeze(np.zeros(shape)).shape
                self.steps.append(Squeeze(perm, shape, new_shape))
                origin = origin.reshape(-1)[perm].reshape(new_shape)
                shape = new_shape
            elif kind == "factor":
                routing, new_shape = _channel_routing(origin, is_cond)
                self.steps.append(FactorOut(routing, shape, new_shape))
                flat = origin.reshape(-1)
                gone += [flat[routing.to_z], flat[routing.to_y]]
                origin = flat[routing.keep].reshape(new_shape)
                shape = new_shape
            else:
                raise ValueError(f"unknown step type {kind!r}")
        self._collected_origin = np.concatenate(gone + [origin.reshape(-1)])
        self._out_perm = np.argsort(self._collected_origin)
        self._final_size = origin.size

    # -- parameters ---------------------------------------------------------

    @property
    def couplings(self) -> list[CouplingLayer]:
        return [s for s in self.steps if isinstance(s, CouplingLayer)]

    def parameters(self) -> list[Node]:
        return [p for layer in self.couplings for p in layer.parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def get_state(self) -> list[np.ndarray]:
        return [p.value.copy() for p in self.parameters()]

    def set_state(self, values: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(values) != len(params):
            raise ValueError("parameter count mismatch")
        for p, v in zip(params, values):
            if p.value.shape != np.shape(v):
                raise ValueError(f"parameter shape mismatch {p.value.shape} vs {np.shape(v)}")
            p.value = np.array(v, dtype=np.float64)

    def randomize(self, rng: np.random.Generator, scale: float = 0.5) -> None:
        """Overwrite all parameters with Gaussian noise (used to exercise non-trivial maps)."""
        for p in self.parameters():
            fan_in = p.value.shape[0] if p.value.ndim == 2 else 1
            p.value = rng.normal(0.0, scale / np.sqrt(fan_in), size=p.value.shape)

    # -- data layout ---------------------------------------------------------

    def join(self, x, y=None) -> np.ndarray:
        """Pack ``x`` (B, *x_shape) and ``y`` (B, *y_shape) into the flat model input."""
        x = np.asarray(x, dtype=np.float64)
        b = x.shape[0]
        out = np.empty((b, self.dim))
        out[:, self.x_index] = x.reshape(b, -1)
        if self.y_index.size:
            if y is None:
                raise ValueError("model is conditional; y is required")
            y = np.asarray(y, dtype=np.float64)
            if y.size != b * self.y_index.size:
                raise ValueError(f"y has {y.size // max(b, 1)} elements per sample, expected {self.y_index.size}")
            out[:, self.y_index] = y.reshape(b, -1)
        return out

    def split(self, v) -> tuple[np.ndarray, np.ndarray]:
        v = np.asarray(v.value if isinstance(v, Node) else v)
        b = v.shape[0]
        return v[:, self.x_index].reshape((b,) + self.x_shape), v[:, self.y_index].reshape((b,) + self.y_shape)

    def _check_input(self, u: Node) -> None:
        if u.value.ndim != 2 or u.shape[1] != self.dim:
            raise ValueError(f"model expects input of shape (B, {self.dim}), got {u.shape}")

    # -- transforms ----------------------------------------------------------

    def forward(self, u) -> tuple[Node, Node]:
        """``(x, y) -> (z, y')`` with per-sample log|det J|."""
        state = ag.as_node(u)
        self._check_input(state)
        logdet = ag.as_node(np.zeros(state.shape[0]))
        parts: list[Node] = []
        for step in self.steps:
            if isinstance(step, CouplingLayer):
                state, ld = step.forward(state)
                logdet = logdet + ld
            elif isinstance(step, Squeeze):
                state = ag.take(state, step.perm, unique=True)
            else:
                state, z, y = factor_out(state, step.routing)
                parts += [z, y]
        collected = ag.concat(parts + [state]) if parts else state
        return ag.take(collected, self._out_perm, unique=True), logdet

    def inverse(self, v) -> tuple[Node, Node]:
        """``(z, y') -> (x, y)`` with per-sample log|det J_inverse|."""
        v = ag.as_node(v)
        self._check_input(v)
        collected = ag.take(v, self._collected_origin, unique=True)
        sizes = []
        for step in self.steps:
            if isinstance(step, FactorOut):
                sizes += [step.routing.to_z.size, step.routing.to_y.size]
        bounds = np.cumsum([0] + sizes)
        parts = [ag.take(collected, slice(int(a), int(b))) for a, b in zip(bounds[:-1], bounds[1:])]
        state = ag.take(collected, slice(int(bounds[-1]), None)) if parts else collected
        logdet = ag.as_node(np.zeros(v.shape[0]))
        for step in reversed(self.steps):
            if isinstance(step, CouplingLayer):
                state, ld = step.inverse(state)
                logdet = logdet + ld
            elif isinstance(step, Squeeze):
                state = ag.take(state, np.argsort(step.perm), unique=True)
            else:
                y = parts.pop()
                z = parts.pop()
                state = factor_in(state, z, y, step.routing)
        return state, logdet

    def transform(self, u: np.ndarray, chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
        """Forward map on plain arrays, without recording a graph."""
        return self._batched(self.forward, u, chunk)

    def inverse_transform(self, v: np.ndarray, chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
        return self._batched(self.inverse, v, chunk)

    @staticmethod
    def _batched(fn, arr, chunk):
        arr = np.asarray(arr, dtype=np.float64)
        outs, lds = [], []
        with ag.no_grad():
            for start in range(0, max(arr.shape[0], 1), chunk):
                out, ld = fn(arr[start : start + chunk])
                outs.append(out.value)
                lds.append(ld.value)
        return np.concatenate(outs), np.concatenate(lds)

    # -- serialisation -------------------------------------------------------

    def topology(self) -> dict:
        specs = []
        for s in self.step_specs:
            s = dict(s)
            if "pattern" in s:
                s["pattern"] = [int(v) for v in np.asarray(s["pattern"]).reshape(-1)]
            specs.append(s)
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "event_shape": list(self.event_shape),
            "cond_mask": [int(v) for v in self.cond_mask.reshape(-1)],
            "x_shape": list(self.x_shape),
            "y_shape": list(self.y_shape),
            "steps": specs,
            "width": self.width,
            "depth": self.depth,
            "seed": self.seed,
            "gain": self.gain,
            "routing": [
                {"to_z": s.routing.to_z.tolist(), "to_y": s.routing.to_y.tolist()}
                for s in self.steps
                if isinstance(s, FactorOut)
            ],
            "meta": self.meta,
        }


def flow_forward(model: FlowModel, inputs) -> tuple[Node, Node]:
    return model.forward(inputs)


def flow_inverse(model: FlowModel, outputs) -> tuple[Node, Node]:
    return model.inverse(outputs)


def save_model(model: FlowModel, path) -> Path:
    """Write topology (JSON header) and parameters to an ``.npz`` container."""
    path = Path(path)
    arrays = {f"p{i:04d}": v for i, v in enumerate(model.get_state())}
    header = json.dumps(model.topology(), sort_keys=True)
    with open(path, "wb") as fh:
        np.savez(fh, __topology__=np.frombuffer(header.encode(), dtype=np.uint8), **arrays)
    return path


def load_model(path) -> FlowModel:
    with np.load(Path(path)) as data:
        topo = json.loads(bytes(data["__topology__"]).decode())
        if topo.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a flow checkpoint")
        if topo.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {topo.get('version')}")
        values = [data[k] for k in sorted(k for k in data.files if k.startswith("p"))]
    model = FlowModel(
        tuple(topo["event_shape"]),
        np.array(topo["cond_mask"], dtype=bool),
        topo["steps"],
        width=topo["width"],
        depth=topo["depth"],
        seed=topo["seed"],
        gain=topo["gain"],
        x_shape=tuple(topo["x_shape"]),
        y_shape=tuple(topo["y_shape"]),
    )
    model.set_state(values)
    model.meta = topo.get("meta", {})
    return model


# ---------------------------------------------------------------------------
# builders


def toy_model(n_blocks: int = 4, width: int = 64, depth: int = 12, seed: int = 0, gain: float = 0.1) -> FlowModel:
    """Joint model over ``(x1, x2, y)`` built from shuffled six-mask blocks."""
    rng = np.random.default_rng(seed)
    specs = []
    for _ in range(n_blocks):
        specs += [{"type": "coupling", "mask": "binary-vector", "pattern": list(p)} for p in block_masks_3d(rng)]
    return FlowModel((3,), [0, 0, 1], specs, width, depth, seed, gain, x_shape=(2,), y_shape=(1,))


def vector_model(dim: int = 2, n_layers: int = 8, width: int = 64, depth: int = 4, seed: int = 0, gain: float = 0.1) -> FlowModel:
    """Non-conditional model on ``R^dim`` with alternating half masks."""
    specs = []
    half = np.arange(dim) < (dim + 1) // 2
    for i in range(n_layers):
        pat = half if i % 2 == 0 else ~half
        specs.append({"type": "coupling", "mask": "binary-vector", "pattern": [int(v) for v in pat]})
    return FlowModel((dim,), np.zeros(dim, dtype=bool), specs, width, depth, seed, gain)


def image_block() -> list[dict]:
    return [
        {"type": "coupling", "mask": "checkerboard", "parity": 0},
        {"type": "coupling", "mask": "checkerboard", "parity": 1},
        {"type": "coupling", "mask": "channelwise", "parity": 0},
        {"type": "coupling", "mask": "channelwise", "parity": 1},
    ]


def image_model(
    size: int,
    channels: int = 1,
    layout: tuple[str, ...] = ("block", "squeeze", "block", "factor", "block", "block"),
    width: int = 128,
    depth: int = 4,
    seed: int = 0,
    gain: float = 0.1,
) -> FlowModel:
    """Joint model over an image ``x`` and a same-shaped condition image ``y``."""
    specs: list[dict] = []
    for item in layout:
        specs += image_block() if item == "block" else [{"type": item}]
    event = (size, size, 2 * channels)
    cond = np.zeros(event, dtype=bool)
    cond[..., channels:] = True
    shape = (size, size, channels)
    return FlowModel(event, cond, specs, width, depth, seed, gain, x_shape=shape, y_shape=shape)
