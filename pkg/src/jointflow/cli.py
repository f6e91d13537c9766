"""Config-driven experiment runner.

Every run writes into a fresh directory ``<experiment>-<timestamp>-seed<seed>``
under ``--out`` (or ``$JOINTFLOW_OUT``, or ``./runs``).  The saved
``config.json`` re-creates the run exactly; all CSV outputs are pure functions
of it.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import stats as sps

from . import diagnostics as diag
from . import superres as sr
from .datasets import (
    MEMBERSHIP,
    DatasetSpec,
    JointData,
    Standardization,
    build_dataset,
    gen_toy_images,
    load_dataset,
    save_dataset,
    standardize,
)
from .flows import FlowModel, image_model, load_model, save_model, toy_model, vector_model
from .objectives import RULE_KINDS, RuleLoss, jacobian_blocks, rule_eval, sample_conditional
from .training import RunHistory, TrainConfig, TrainingDiverged, train_backwards, train_conditional

log = logging.getLogger("jointflow")

SCHEMA_VERSION = 1
EXPERIMENTS = ("backwards-rule", "crescents", "sectors", "shapes4", "class-images", "superres")
ENV_OUT = "JOINTFLOW_OUT"
EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def _strict(cls, d, section: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {unknown}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{section}: {exc}") from None


@dataclass
class ModelSpec:
    kind: str = "toy"  # toy | vector | image
    n_blocks: int = 2
    n_layers: int = 8
    width: int = 64
    depth: int = 4
    gain: float = 0.1
    layout: list = field(default_factory=lambda: ["block", "squeeze", "block", "factor", "block", "block"])

    def validate(self) -> None:
        if self.kind not in ("toy", "vector", "image"):
            raise ConfigError(f"model.kind: unknown model kind {self.kind!r}")
        for name in ("n_blocks", "n_layers", "width", "depth"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"model.{name} must be positive")


@dataclass
class RuleSpec:
    kind: str = "circle"
    radius: float = 1.0
    sigma_r: float = 0.1
    size: float = 1.0
    scale: float | None = None

    def validate(self) -> None:
        if self.kind not in RULE_KINDS:
            raise ConfigError(f"rule.kind: unknown rule {self.kind!r}; expected one of {list(RULE_KINDS)}")
        if self.radius <= 0 or self.sigma_r <= 0:
            raise ConfigError("rule.radius and rule.sigma_r must be positive")

    def build(self) -> RuleLoss:
        return RuleLoss(self.kind, self.scale, self.radius, self.sigma_r, self.size)


@dataclass
class DiagnosticsSpec:
    enabled: bool = True
    checks: bool = True
    heldout: int = 4000
    samples: int = 1000
    eps: float = 0.15
    jacobian_points: int = 100
    superres_conditions: int = 4
    n1: int = 3
    n2: int = 3


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    dataset: DatasetSpec | None = None
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    rule: RuleSpec | None = None
    diagnostics: DiagnosticsSpec = field(default_factory=DiagnosticsSpec)
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {self.schema_version}")
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: unknown experiment {self.experiment!r}; expected one of {list(EXPERIMENTS)}")
        if self.experiment == "backwards-rule":
            if self.rule is None:
                raise ConfigError("rule: required for backwards-rule")
            self.rule.validate()
        elif self.dataset is None:
            raise ConfigError("dataset: required for this experiment")
        else:
            try:
                self.dataset.validate()
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        self.model.validate()
        try:
            self.train.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.train.seed != self.seed:
            raise ConfigError("train.seed must equal seed")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config: expected a JSON object")
        top = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - top)
        if unknown:
            raise ConfigError(f"config: unknown keys {unknown}")
        if "experiment" not in d:
            raise ConfigError("experiment: missing")
        cfg = cls(
            experiment=d["experiment"],
            seed=int(d.get("seed", 0)),
            dataset=None if d.get("dataset") is None else _strict(DatasetSpec, d["dataset"], "dataset"),
            model=_strict(ModelSpec, d.get("model", {}), "model"),
            train=_strict(TrainConfig, {"seed": int(d.get("seed", 0)), **d.get("train", {})}, "train"),
            rule=None if d.get("rule") is None else _strict(RuleSpec, d["rule"], "rule"),
            diagnostics=_strict(DiagnosticsSpec, d.get("diagnostics", {}), "diagnostics"),
            schema_version=d.get("schema_version", SCHEMA_VERSION),
        )
        cfg.validate()
        return cfg

    def with_seed(self, seed: int) -> "ExperimentConfig":
        d = self.to_dict()
        d["seed"] = seed
        d["train"]["seed"] = seed
        if d["dataset"] is not None:
            d["dataset"]["seed"] = seed
        return ExperimentConfig.from_dict(d)


# ---------------------------------------------------------------------------
# defaults


_TOY_TRAIN = dict(
    precondition_epochs=10, anneal_epochs=10, main_epochs=80, batch_size=128, lr=5e-5, beta1=0.0,
    window=15, lr_patience=4, precondition_window=5,
)


# image conditions have many elements; summing the L1 term over them keeps each
# element at full weight so the condition survives the map
_IMAGE_TRAIN = dict(precondition_epochs=5, anneal_epochs=5, main_epochs=150, batch_size=64, lr=1e-4, beta1=0.0,
                    window=15, lr_patience=6, dequantize_alpha=0.02, distance="sum")


def default_config(experiment: str, seed: int = 0, rule: str = "circle", radius: float = 1.0) -> ExperimentConfig:
    """Desk-scale defaults for each named experiment."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown experiment {experiment!r}; expected one of {list(EXPERIMENTS)}")
    d: dict = {"experiment": experiment, "seed": seed, "schema_version": SCHEMA_VERSION}
    if experiment == "backwards-rule":
        # the circle needs extra depth to tear its latent seam cleanly; the line's
        # unbounded direction keeps improving, so it gets a longer schedule
        layers, epochs, window = {"circle": (12, 150, 40), "line": (8, 120, 40)}.get(rule, (8, 60, 20))
        d["model"] = {"kind": "vector", "n_layers": layers, "width": 64, "depth": 3}
        d["rule"] = {"kind": rule, "radius": radius}
        d["train"] = dict(main_epochs=epochs, lr=3e-4, beta1=0.0, window=window, lr_patience=5,
                          backwards_batch=512, backwards_steps=20)
        d["diagnostics"] = {"samples": 10000}
    elif experiment in ("crescents", "sectors", "shapes4"):
        d["dataset"] = {"kind": experiment, "size": 8000}
        # four overlapping classes need two extra blocks of capacity
        d["model"] = {"kind": "toy", "n_blocks": 4 if experiment == "shapes4" else 2, "width": 64, "depth": 4}
        d["train"] = dict(_TOY_TRAIN, segregate=experiment != "sectors")
        if experiment == "shapes4":
            d["train"]["lr_patience"] = 8  # the ring keeps improving slowly before the first decay
        d["diagnostics"] = {"eps": 0.1 if experiment == "sectors" else 0.15}
    elif experiment == "class-images":
        d["dataset"] = {"kind": "images", "size": 2000, "image_size": 8, "standardize": True, "dequantize_alpha": 0.02}
        d["model"] = {"kind": "image", "width": 64, "depth": 3, "layout": ["block", "squeeze", "block", "factor", "block"]}
        d["train"] = dict(_IMAGE_TRAIN)
        d["diagnostics"] = {"heldout": 1000}
    else:
        d["dataset"] = {"kind": "images", "size": 2000, "image_size": 16, "standardize": True, "dequantize_alpha": 0.02}
        d["model"] = {"kind": "image", "width": 64, "depth": 3, "layout": ["block", "squeeze", "block", "factor", "block"]}
        d["train"] = dict(_IMAGE_TRAIN)
        d["diagnostics"] = {"heldout": 1000}
    d["train"]["seed"] = seed
    if "dataset" in d:
        d["dataset"]["seed"] = seed
    return ExperimentConfig.from_dict(d)


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    return ExperimentConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# output helpers


def output_root(out: str | None) -> Path:
    return Path(out or os.environ.get(ENV_OUT) or "runs")


def new_run_dir(root: Path, experiment: str, seed: int) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = f"{experiment}-{stamp}-seed{seed}"
    path = root / base
    k = 1
    while True:
        try:
            path.mkdir()
            return path
        except FileExistsError:
            path = root / f"{base}-{k}"
            k += 1


def _f(v) -> str:
    return repr(float(v))


def write_samples_csv(path, x: np.ndarray, y_returned: np.ndarray | None = None, cond=None) -> Path:
    """One row per sample: flattened ``x`` then the returned condition."""
    path = Path(path)
    n = x.shape[0]
    xf = x.reshape(n, int(np.prod(x.shape[1:])))
    yf = None if y_returned is None else y_returned.reshape(n, int(np.prod(y_returned.shape[1:])))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = [f"x{i}" for i in range(xf.shape[1])]
        if yf is not None:
            head += [f"y_returned{i}" for i in range(yf.shape[1])]
        w.writerow(head)
        for i in range(n):
            w.writerow([_f(v) for v in xf[i]] + ([] if yf is None else [_f(v) for v in yf[i]]))
    return path


def _check(value: float, threshold: float, op: str = "<") -> dict:
    passed = bool(value < threshold) if op == "<" else bool(value >= threshold)
    return {"value": float(value), "threshold": float(threshold), "op": op, "passed": passed}


@dataclass
class RunResult:
    status: int
    directory: Path
    checks: dict
    models: dict
    history: RunHistory | None = None
    extras: dict = field(default_factory=dict)


def _build_model(cfg: ExperimentConfig, event_hint: tuple | None = None) -> FlowModel:
    m = cfg.model
    if m.kind == "toy":
        return toy_model(m.n_blocks, m.width, m.depth, cfg.seed, m.gain)
    if m.kind == "vector":
        return vector_model(2, m.n_layers, m.width, m.depth, cfg.seed, m.gain)
    size = event_hint[0] if event_hint else cfg.dataset.image_size
    return image_model(size, 1, tuple(m.layout), m.width, m.depth, cfg.seed, m.gain)


def _heldout(cfg: ExperimentConfig, size: int | None = None) -> JointData:
    spec = DatasetSpec(**{**asdict(cfg.dataset), "seed": cfg.seed + 100_003, "size": size or cfg.diagnostics.heldout,
                          "standardize": False})
    data, _ = build_dataset(spec)
    return data


def _train(cfg: ExperimentConfig, model: FlowModel, data: JointData, run_dir: Path, tag: str = ""):
    def checkpoint(phase, m):
        save_model(m, run_dir / f"checkpoint{tag}-{phase}.npz")

    hist, train, val = train_conditional(model, data, cfg.train, callback=checkpoint)
    hist.to_csv(run_dir / f"history{tag}.csv")
    save_model(model, run_dir / f"model{tag}.npz")
    return hist, train, val


# ---------------------------------------------------------------------------
# experiments


def _run_backwards(cfg: ExperimentConfig, run_dir: Path) -> RunResult:
    rule = cfg.rule.build()
    model = _build_model(cfg)
    hist = train_backwards(model, rule, cfg.train)
    hist.to_csv(run_dir / "history.csv")
    save_model(model, run_dir / "model.npz")
    rng = np.random.default_rng([cfg.seed, 4])
    z = rng.standard_normal((cfg.diagnostics.samples, 2))
    x, _ = model.inverse_transform(z)
    write_samples_csv(run_dir / "samples.csv", x)
    checks = {}
    if cfg.rule.kind == "circle":
        radial = np.abs(np.linalg.norm(x, axis=1) - cfg.rule.radius).mean()
        checks["mean_radial_error"] = _check(radial, 0.15)
        counts = np.histogram(np.arctan2(x[:, 1], x[:, 0]), bins=16, range=(-np.pi, np.pi))[0]
        chi2 = sps.chisquare(counts).statistic
        checks["angular_chi2"] = _check(chi2, sps.chi2.ppf(0.99, 15))
    else:
        resid = rule_eval(cfg.rule.kind, x, cfg.rule.radius, cfg.rule.size).mean()
        checks["mean_rule_residual"] = _check(resid, 0.15)
    return RunResult(0, run_dir, checks, {"model": model}, hist, {"samples": x})


def _sample_conditions(cfg: ExperimentConfig) -> list[tuple[str, float]]:
    if cfg.experiment == "crescents":
        return [("plus1", 1.0), ("minus1", -1.0), ("zero", 0.0)]
    if cfg.experiment == "shapes4":
        return [(f"class{k}", float(k)) for k in range(4)]
    return [(f"angle{k}", 2.0 * np.pi * k / 8) for k in range(8)]


def _run_toy(cfg: ExperimentConfig, run_dir: Path) -> RunResult:
    data, _ = build_dataset(cfg.dataset)
    save_dataset(run_dir / "dataset.bin", data, {"seed": cfg.seed})
    model = _build_model(cfg)
    hist, _, val = _train(cfg, model, data, run_dir)
    heldout = _heldout(cfg)
    save_dataset(run_dir / "heldout.bin", heldout, {"seed": cfg.seed + 100_003})
    checks: dict = {}
    extras: dict = {"heldout": heldout, "validation": val}
    rng = np.random.default_rng([cfg.seed, 4])
    predicate = MEMBERSHIP[cfg.experiment]
    eps = cfg.diagnostics.eps
    for name, yv in _sample_conditions(cfg):
        x, y_back, _ = sample_conditional(model, [yv], cfg.diagnostics.samples, rng)
        write_samples_csv(run_dir / f"samples_{name}.csv", x, y_back)
        if cfg.experiment == "crescents" and yv == 0.0:
            continue
        cov = diag.support_coverage(x, predicate, eps, np.full(x.shape[0], yv))
        floor = 0.95 if cfg.experiment == "crescents" else 0.90
        if cfg.experiment == "shapes4" and name in ("class0", "class1"):
            floor = 0.85  # ring and two blobs change topology relative to the prior
        checks[f"coverage_{name}"] = _check(cov, floor, ">=")
    if cfg.diagnostics.enabled:
        report = diag.latent_histograms(model, heldout.x, heldout.y)
        cond = diag.condition_preservation(model, heldout.x, heldout.y, rng)
        resid = diag.invertibility_residual(model, model.join(heldout.x, heldout.y))
        extra = {"condition_forward": cond.forward, "condition_inverse": cond.inverse,
                 "invertibility_max": resid[0], "invertibility_mean": resid[1]}
        diag.export_diagnostics(run_dir, report, extra)
        extras["report"] = report
        checks["ks_max"] = _check(report.ks.max(), 0.08)
        checks["outlier_dims"] = _check(len(report.outliers), 1)
        if cfg.experiment in ("crescents", "shapes4"):
            checks["condition_forward"] = _check(cond.forward, 0.05)
            checks["condition_inverse"] = _check(cond.inverse, 0.05)
        if cfg.experiment == "crescents":
            gaps = jacobian_gaps(model, val.x[: cfg.diagnostics.jacobian_points], val.y[: cfg.diagnostics.jacobian_points])
            checks["jacobian_factorization"] = _check(gaps.max(), 0.1)
    return RunResult(0, run_dir, checks, {"model": model}, hist, extras)


def jacobian_gaps(model: FlowModel, x, y) -> np.ndarray:
    """``|log|det J_F| - log|det dF_Z/dx||`` per point, both from numerical Jacobians."""
    out = np.empty(len(x))
    for i in range(len(x)):
        blocks = jacobian_blocks(model, x[i], y[i])
        out[i] = abs(np.linalg.slogdet(blocks["full"])[1] - np.linalg.slogdet(blocks["dz_dx"])[1])
    return out


def _image_pairs(cfg: ExperimentConfig):
    corpus = gen_toy_images(cfg.dataset.size, cfg.dataset.image_size, cfg.dataset.seed).x
    held = gen_toy_images(cfg.diagnostics.heldout, cfg.dataset.image_size, cfg.seed + 100_003).x
    return corpus, held


def _run_class_images(cfg: ExperimentConfig, run_dir: Path) -> RunResult:
    data, stats = build_dataset(cfg.dataset)
    heldout = _heldout(cfg)
    heldout = JointData(stats.apply(heldout.x), stats.apply(heldout.y), heldout.labels, heldout.kind, heldout.meta)
    model = _build_model(cfg)
    hist, _, _ = _train(cfg, model, data, run_dir)
    save_dataset(run_dir / "heldout.bin", heldout, {"standardization": asdict(stats)})
    report = diag.latent_histograms(model, heldout.x, heldout.y)
    resid = diag.invertibility_residual(model, model.join(heldout.x, heldout.y))
    diag.export_diagnostics(run_dir, report, {"invertibility_max": resid[0], "invertibility_mean": resid[1]})
    checks = {"invertibility": _check(resid[0], 1e-4)}
    return RunResult(0, run_dir, checks, {"model": model}, hist, {"report": report, "stats": stats, "heldout": heldout})


def _run_superres(cfg: ExperimentConfig, run_dir: Path) -> RunResult:
    corpus, held = _image_pairs(cfg)
    level1, level2 = sr.build_residual_pairs(corpus)
    models, stats, hists = {}, {}, {}
    size = cfg.dataset.image_size
    for tag, pairs, res in (("2", level2, size // 2), ("1", level1, size)):
        std_pairs, st = standardize(pairs)
        save_dataset(run_dir / f"pairs_level{tag}.bin", std_pairs, {"standardization": asdict(st)})
        model = _build_model(cfg, (res,))
        hists[tag], _, _ = _train(cfg, model, std_pairs, run_dir, tag=f"_level{tag}")
        models[tag], stats[tag] = model, st
    (run_dir / "standardization.json").write_text(
        json.dumps({k: asdict(v) for k, v in stats.items()}, indent=2, sort_keys=True) + "\n")

    rng = np.random.default_rng([cfg.seed, 4])
    pyr = sr.build_pyramid(held)
    errors, control = [], []
    for c in range(cfg.diagnostics.superres_conditions):
        result = sr.two_step_inference(models["1"], models["2"], pyr.x2[c], cfg.diagnostics.n1, cfg.diagnostics.n2,
                                       rng, stats["1"], stats["2"])
        sr.export_grid(run_dir / f"grid_{c}", result)
        flat = result.x0.reshape((-1,) + result.x0.shape[2:])
        errors.append(sr.consistency_check(flat, pyr.x2[c], scale=stats["2"].std))
        noise = rng.uniform(0.0, 1.0, flat.shape)
        control.append(sr.consistency_check(noise, pyr.x2[c], scale=stats["2"].std))
    errors, control = np.concatenate(errors), np.concatenate(control)

    h1, h2 = sr.residual_pair(pyr.x0, pyr.x1), sr.residual_pair(pyr.x1, pyr.x2)
    report = diag.latent_histograms(models["1"], stats["1"].apply(h1.x), stats["1"].apply(h1.y))
    report2 = diag.latent_histograms(models["2"], stats["2"].apply(h2.x), stats["2"].apply(h2.y))
    diag.export_diagnostics(run_dir, report, {
        "consistency_mean": float(errors.mean()), "consistency_control_mean": float(control.mean())})
    diag.export_diagnostics(run_dir / "level2", report2)
    checks = {"consistency": _check(errors.mean(), 0.1), "negative_control": _check(control.mean(), 0.5, ">=")}
    return RunResult(0, run_dir, checks, {"level1": models["1"], "level2": models["2"]}, None,
                     {"errors": errors, "control": control, "report": report, "report_level2": report2, "stats": stats,
                      "histories": hists})


RUNNERS = {
    "backwards-rule": _run_backwards,
    "crescents": _run_toy,
    "sectors": _run_toy,
    "shapes4": _run_toy,
    "class-images": _run_class_images,
    "superres": _run_superres,
}


def run_experiment(cfg: ExperimentConfig, out_root: Path | str | None = None) -> RunResult:
    """Validate, train, diagnose and export; ``status`` is 0 iff every enabled check passed."""
    cfg.validate()
    run_dir = new_run_dir(output_root(None if out_root is None else str(out_root)), cfg.experiment, cfg.seed)
    (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    t0 = time.perf_counter()
    try:
        result = RUNNERS[cfg.experiment](cfg, run_dir)
    except TrainingDiverged as exc:
        (run_dir / "FAILED").write_text(f"{exc}\n")
        return RunResult(EXIT_DIVERGED, run_dir, {}, {}, None, {"error": str(exc)})
    checks = result.checks if cfg.diagnostics.checks else {}
    (run_dir / "checks.json").write_text(json.dumps(checks, indent=2, sort_keys=True) + "\n")
    (run_dir / "timing.json").write_text(json.dumps({"seconds": time.perf_counter() - t0}) + "\n")
    result.status = EXIT_OK if all(c["passed"] for c in checks.values()) else EXIT_CHECKS
    result.checks = checks
    return result


def evaluate(checkpoint, dataset_path, out_dir=None, seed: int = 0) -> dict:
    """Diagnostics on an existing checkpoint and cached dataset, no training."""
    model = load_model(checkpoint)
    data = load_dataset(dataset_path)
    if data.x[0].size != model.x_index.size or data.y[0].size != model.y_index.size:
        raise ValueError(f"dataset element sizes ({data.x[0].size}, {data.y[0].size}) do not match the model "
                         f"({model.x_index.size}, {model.y_index.size})")
    report = diag.latent_histograms(model, data.x, data.y)
    resid = diag.invertibility_residual(model, model.join(data.x, data.y))
    extra = {"invertibility_max": resid[0], "invertibility_mean": resid[1]}
    if model.y_index.size:
        cond = diag.condition_preservation(model, data.x, data.y, np.random.default_rng([seed, 4]))
        extra.update(condition_forward=cond.forward, condition_inverse=cond.inverse)
    if out_dir is not None:
        diag.export_diagnostics(out_dir, report, extra)
    return {"report": report, **extra}


def parse_condition(text: str, model: FlowModel) -> np.ndarray:
    try:
        vals = np.array([float(v) for v in text.replace(";", ",").split(",") if v.strip()], dtype=np.float64)
    except ValueError:
        raise ValueError(f"cannot parse condition {text!r}") from None
    if vals.size == 1:
        return np.full(model.y_shape, vals[0])
    if vals.size != model.y_index.size:
        raise ValueError(f"condition has {vals.size} values; model expects {model.y_index.size}")
    return vals.reshape(model.y_shape)


def sample(checkpoint, y: str, n: int, out_path, seed: int = 0) -> Path:
    model = load_model(checkpoint)
    cond = parse_condition(y, model)
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng([seed, 5])
    if n == 0:
        return write_samples_csv(out_path, np.empty((0,) + model.x_shape), np.empty((0,) + model.y_shape))
    x, y_back, _ = sample_conditional(model, cond, n, rng)
    return write_samples_csv(out_path, x, y_back)


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jointflow", description="Joint conditional normalizing-flow experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="generate, train, diagnose and export one experiment")
    r.add_argument("--experiment", choices=EXPERIMENTS)
    r.add_argument("--config", help="JSON config (schema version 1)")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help=f"output root (default ${ENV_OUT} or ./runs)")
    r.add_argument("--rule", choices=RULE_KINDS, help="rule for backwards-rule")
    r.add_argument("--r", type=float, help="circle radius for backwards-rule")
    r.add_argument("--eval-only", metavar="CHECKPOINT", help="skip training; evaluate this checkpoint")
    e = sub.add_parser("evaluate", help="diagnostics for an existing checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="dataset cache file (e.g. heldout.bin from a run)")
    e.add_argument("--out", required=True)
    s = sub.add_parser("sample", help="conditional samples from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--y", required=True, help="condition value(s), comma separated")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="CSV path")
    return p


def _config_from_args(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
        if args.experiment and args.experiment != cfg.experiment:
            raise ConfigError(f"experiment: --experiment {args.experiment} conflicts with config {cfg.experiment}")
    elif args.experiment:
        cfg = default_config(args.experiment, 0, args.rule or "circle", args.r or 1.0)
    else:
        raise ConfigError("experiment: pass --experiment or --config")
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = _parser().parse_args(argv)
    try:
        if args.command == "evaluate":
            res = evaluate(args.checkpoint, args.data, args.out)
            print(json.dumps(res["report"].summary(), sort_keys=True))
            return EXIT_OK
        if args.command == "sample":
            print(sample(args.checkpoint, args.y, args.n, args.out, args.seed))
            return EXIT_OK
        cfg = _config_from_args(args)
        if args.eval_only:
            if cfg.dataset is None:
                raise ConfigError("dataset: required for --eval-only")
            out = new_run_dir(output_root(args.out), cfg.experiment + "-eval", cfg.seed)
            data = _heldout(cfg)
            save_dataset(out / "heldout.bin", data)
            res = evaluate(args.eval_only, out / "heldout.bin", out, cfg.seed)
            print(json.dumps(res["report"].summary(), sort_keys=True))
            return EXIT_OK
    except ConfigError as exc:
        log.error("invalid config: %s", exc)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    result = run_experiment(cfg, args.out)
    for name, c in result.checks.items():
        log.info("%-24s %s %.6g (%s %g)", name, "PASS" if c["passed"] else "FAIL", c["value"], c["op"], c["threshold"])
    log.info("artifacts in %s", result.directory)
    return result.status


if __name__ == "__main__":
    sys.exit(main())
