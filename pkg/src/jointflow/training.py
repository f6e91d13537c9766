"""Three-phase training: prior preconditioning, data annealing, main training."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autograd as ag
from .datasets import JointData, dequantize, make_batches
from .flows import FlowModel
from .objectives import CondObjectiveConfig, RuleLoss, loss_backwards, loss_conditional

PHASES = ("precondition", "anneal", "main", "backwards")
HISTORY_COLUMNS = (
    "epoch", "phase", "total", "nll", "distance", "logdet", "raw_distance",
    "val_total", "val_nll", "val_distance", "val_logdet", "val_raw_distance", "lr", "beta",
)


class TrainingDiverged(RuntimeError):
    pass


class PhaseOrderError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    precondition_epochs: int = 50
    anneal_epochs: int = 100
    main_epochs: int = 500
    batch_size: int = 256
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lam: float = 100.0
    distance: str = "mean"
    seed: int = 0
    window: int = 25
    tolerance: float = 1e-3
    lr_decay: float = 0.5
    lr_patience: int = 10
    precondition_window: int = 5
    val_fraction: float = 0.1
    segregate: bool = False
    dequantize_alpha: float = 0.0
    backwards_batch: int = 256
    backwards_steps: int = 20

    def validate(self) -> None:
        if self.anneal_epochs < 1:
            raise ValueError("train.anneal_epochs must be >= 1")
        for name in ("precondition_epochs", "main_epochs", "batch_size", "window", "precondition_window",
                     "lr_patience", "backwards_batch", "backwards_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"train.{name} must be positive")
        if not self.lr > 0 or not self.lam > 0:
            raise ValueError("train.lr and train.lam must be positive")
        if self.distance not in ("mean", "sum"):
            raise ValueError("train.distance must be 'mean' or 'sum'")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("train.val_fraction must lie in (0, 1)")
        if not 0.0 <= self.dequantize_alpha < 1.0:
            raise ValueError("train.dequantize_alpha must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"train: unknown keys {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    total: float
    nll: float
    distance: float
    logdet: float
    raw_distance: float
    val_total: float = float("nan")
    val_nll: float = float("nan")
    val_distance: float = float("nan")
    val_logdet: float = float("nan")
    val_raw_distance: float = float("nan")
    lr: float = float("nan")
    beta: float = float("nan")
    wall_time: float = 0.0


@dataclass
class RunHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def extend(self, other: "RunHistory") -> None:
        offset = len(self.records)
        for r in other.records:
            self.records.append(EpochRecord(**{**asdict(r), "epoch": offset + r.epoch}))

    def segment(self, phases) -> "RunHistory":
        phases = (phases,) if isinstance(phases, str) else tuple(phases)
        picked = [r for r in self.records if r.phase in phases]
        return RunHistory([EpochRecord(**{**asdict(r), "epoch": i}) for i, r in enumerate(picked)])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path) -> Path:
        """Wall time is left out so the file is reproducible byte for byte."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_COLUMNS)
            for r in self.records:
                w.writerow([_fmt(getattr(r, c)) for c in HISTORY_COLUMNS])
        return path

    @classmethod
    def from_csv(cls, path) -> "RunHistory":
        out = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                vals = {k: (int(v) if k == "epoch" else v if k == "phase" else float(v)) for k, v in row.items()}
                out.records.append(EpochRecord(**vals))
        return out


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


# ---------------------------------------------------------------------------
# helpers


def split_validation(data: JointData, fraction: float, seed: int) -> tuple[JointData, JointData]:
    rng = np.random.default_rng([seed, 1])
    perm = rng.permutation(len(data))
    n_val = max(1, int(round(fraction * len(data))))
    return data.subset(np.sort(perm[n_val:])), data.subset(np.sort(perm[:n_val]))


def anneal_beta(t: int, total: int) -> float:
    """Blend weight of real data at anneal epoch ``t`` (1-based); reaches 1 at ``t = total``."""
    return t / total


def blend(v: np.ndarray, beta: float, rng: np.random.Generator) -> np.ndarray:
    if beta >= 1.0:
        return v
    return (1.0 - beta) * rng.standard_normal(v.shape) + beta * v


def _mark(model: FlowModel, phase: str) -> None:
    model.meta.setdefault("phases", []).append(phase)


def _terms_array(terms) -> np.ndarray:
    return np.array([terms.total, terms.nll, terms.distance, terms.logdet, terms.raw_distance])


class _Trainer:
    """Holds the optimiser state shared by all phases of one run."""

    def __init__(self, model: FlowModel, cfg: TrainConfig):
        self.model, self.cfg = model, cfg
        self.params = model.parameters()
        self.state = ag.AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        self.obj = CondObjectiveConfig(cfg.lam, cfg.distance)

    def step(self, packed: np.ndarray) -> np.ndarray:
        total, terms = loss_conditional(self.model, packed, cfg=self.obj)
        grads = ag.backward(total, self.params)
        ag.adam_step(self.params, grads, self.state)
        return _terms_array(terms)

    def evaluate(self, packed: np.ndarray, chunk: int = 2048) -> np.ndarray:
        acc = np.zeros(5)
        with ag.no_grad():
            for s in range(0, packed.shape[0], chunk):
                part = packed[s : s + chunk]
                _, terms = loss_conditional(self.model, part, cfg=self.obj)
                acc += _terms_array(terms) * part.shape[0]
        out = acc / packed.shape[0]
        out[0] = out[1:4].sum()
        return out


def _record(epoch, phase, train_terms, val_terms, lr, beta, t0) -> EpochRecord:
    tr = np.asarray(train_terms)
    total = float(tr[1] + tr[2] + tr[3])
    val = [float(v) for v in val_terms] if val_terms is not None else [float("nan")] * 5
    return EpochRecord(epoch, phase, total, *[float(v) for v in tr[1:]], *val, lr, beta, time.perf_counter() - t0)


def _guard(fn, phase: str, epoch: int):
    try:
        return fn()
    except ag.NonFiniteError as exc:
        raise TrainingDiverged(f"{phase} epoch {epoch}: {exc}") from exc


# ---------------------------------------------------------------------------
# phases


def precondition(model: FlowModel, n_samples: int, cfg: TrainConfig, rng: np.random.Generator,
                 trainer: _Trainer | None = None) -> RunHistory:
    """Fit the joint objective on prior draws for both ``x`` and ``y`` until the loss plateaus."""
    trainer = trainer or _Trainer(model, cfg)
    hist = RunHistory()
    val = rng.standard_normal((max(1000, n_samples // 10), model.dim))
    best = np.inf
    since = 0
    for epoch in range(cfg.precondition_epochs):
        t0 = time.perf_counter()
        data = rng.standard_normal((n_samples, model.dim))
        batches = make_batches(n_samples, cfg.batch_size, seed=rng)
        terms = _guard(lambda: np.mean([trainer.step(data[b]) for b in batches], axis=0), "precondition", epoch)
        vterms = trainer.evaluate(val)
        hist.records.append(_record(epoch, "precondition", terms, vterms, trainer.state.lr, 0.0, t0))
        if vterms[0] < best - cfg.tolerance:
            best, since = vterms[0], 0
        else:
            since += 1
            if since >= cfg.precondition_window:
                break
    _mark(model, "precondition")
    return hist


def _epoch_batches(train: JointData, cfg: TrainConfig, rng: np.random.Generator):
    if cfg.segregate:
        if train.labels is None:
            raise ValueError("segregated batching needs labelled data")
        return make_batches(train.labels, cfg.batch_size, segregate=True, seed=rng)
    return make_batches(len(train), cfg.batch_size, seed=rng)


def _packed(model: FlowModel, data: JointData, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    packed = model.join(data.x, data.y)
    return dequantize(packed, cfg.dequantize_alpha, rng) if cfg.dequantize_alpha > 0 else packed


def anneal_data(model: FlowModel, train: JointData, val: JointData, cfg: TrainConfig, rng: np.random.Generator,
                trainer: _Trainer | None = None) -> RunHistory:
    """Train on ``(1 - beta) g + beta v`` with ``beta`` rising linearly to 1 over the anneal epochs."""
    trainer = trainer or _Trainer(model, cfg)
    hist = RunHistory()
    for t in range(1, cfg.anneal_epochs + 1):
        t0 = time.perf_counter()
        beta = anneal_beta(t, cfg.anneal_epochs)
        packed = blend(_packed(model, train, cfg, rng), beta, rng)
        batches = _epoch_batches(train, cfg, rng)
        terms = _guard(lambda: np.mean([trainer.step(packed[b]) for b in batches], axis=0), "anneal", t)
        vterms = trainer.evaluate(blend(_packed(model, val, cfg, rng), beta, rng))
        hist.records.append(_record(t - 1, "anneal", terms, vterms, trainer.state.lr, beta, t0))
    _mark(model, "anneal")
    return hist


def train_main(model: FlowModel, train: JointData, val: JointData, cfg: TrainConfig, rng: np.random.Generator,
               trainer: _Trainer | None = None, override: bool = False) -> RunHistory:
    """Plain training with early stopping; the best-validation parameters are restored at the end."""
    if not override and "anneal" not in model.meta.get("phases", []):
        raise PhaseOrderError("main training needs an annealed model (pass override=True to skip)")
    trainer = trainer or _Trainer(model, cfg)
    hist = RunHistory()
    val_packed = model.join(val.x, val.y)
    best, best_state = np.inf, model.get_state()
    since_best = since_decay = 0
    for epoch in range(cfg.main_epochs):
        t0 = time.perf_counter()
        packed = _packed(model, train, cfg, rng)
        batches = _epoch_batches(train, cfg, rng)
        terms = _guard(lambda: np.mean([trainer.step(packed[b]) for b in batches], axis=0), "main", epoch)
        vterms = trainer.evaluate(val_packed)
        hist.records.append(_record(epoch, "main", terms, vterms, trainer.state.lr, 1.0, t0))
        if vterms[0] < best - cfg.tolerance:
            best, best_state = vterms[0], model.get_state()
            since_best = since_decay = 0
            continue
        since_best += 1
        since_decay += 1
        if since_best >= cfg.window:
            break
        if since_decay >= cfg.lr_patience:
            trainer.state.lr *= cfg.lr_decay
            since_decay = 0
    model.set_state(best_state)
    _mark(model, "main")
    return hist


def train_conditional(model: FlowModel, data: JointData, cfg: TrainConfig,
                      callback=None) -> tuple[RunHistory, JointData, JointData]:
    """All three phases in order; ``callback(phase, model)`` runs at each phase boundary."""
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 2])
    train, val = split_validation(data, cfg.val_fraction, cfg.seed)
    trainer = _Trainer(model, cfg)
    hist = RunHistory()
    for phase, fn in (
        ("precondition", lambda: precondition(model, len(train), cfg, rng, trainer)),
        ("anneal", lambda: anneal_data(model, train, val, cfg, rng, trainer)),
        ("main", lambda: train_main(model, train, val, cfg, rng, trainer)),
    ):
        hist.extend(fn())
        if callback:
            callback(phase, model)
    return hist, train, val


def train_backwards(model: FlowModel, rule: RuleLoss, cfg: TrainConfig) -> RunHistory:
    """Rule-based training: prior draws pushed through the inverse map, scored by the rule."""
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 3])
    params = model.parameters()
    state = ag.AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    val_z = rng.standard_normal((4096, model.dim))
    hist = RunHistory()
    best, best_state = np.inf, model.get_state()
    since_best = since_decay = 0

    def terms_of(z):
        x, ld = model.inverse(z)
        raw = ag.mean(rule(x))
        dist = raw * rule.lam
        neg_ld = -ag.mean(ld)
        return dist + neg_ld, np.array([0.0, 0.0, dist.value, neg_ld.value, raw.value])

    for epoch in range(cfg.main_epochs):
        t0 = time.perf_counter()
        acc = np.zeros(5)
        for _ in range(cfg.backwards_steps):
            z = rng.standard_normal((cfg.backwards_batch, model.dim))
            total, terms = _guard(lambda: terms_of(z), "backwards", epoch)
            ag.adam_step(params, ag.backward(total, params), state)
            acc += terms
        with ag.no_grad():
            _, vterms = terms_of(val_z)
        vterms[0] = vterms[2] + vterms[3]
        hist.records.append(_record(epoch, "backwards", acc / cfg.backwards_steps, vterms, state.lr, 1.0, t0))
        if vterms[0] < best - cfg.tolerance:
            best, best_state = vterms[0], model.get_state()
            since_best = since_decay = 0
            continue
        since_best += 1
        since_decay += 1
        if since_best >= cfg.window:
            break
        if since_decay >= cfg.lr_patience:
            state.lr *= cfg.lr_decay
            since_decay = 0
    model.set_state(best_state)
    _mark(model, "backwards")
    return hist


def loss_backwards_value(model: FlowModel, z, rule: RuleLoss) -> float:
    with ag.no_grad():
        return float(loss_backwards(model, z, rule).value)


# ---------------------------------------------------------------------------
# stage detection


def detect_stage_transition(history: RunHistory, use_validation: bool = True,
                            ratio: float = 0.1, absolute: float = 0.01) -> int | None:
    """First epoch where the lambda-weighted distance is under ``ratio`` of |total|
    and the raw mean-L1 distance is under ``absolute``."""
    for i, r in enumerate(history.records):
        if use_validation and np.isfinite(r.val_total):
            dist, raw, total = r.val_distance, r.val_raw_distance, r.val_total
        else:
            dist, raw, total = r.distance, r.raw_distance, r.total
        if dist < ratio * abs(total) and raw < absolute:
            return i
    return None
