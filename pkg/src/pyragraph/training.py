"""Training recipe: weighted cross-entropy, Adam with decoupled weight decay,
group-aware k-fold cross-validation repeated over seeds.

Slides from one patient group never straddle a fold boundary. All randomness
(fold shuffling, parameter init, per-epoch sample order) is derived from
explicit seeds, so a cross-validation run replays bit-identically.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .dataio import GraphDataset
from .errors import ConfigError, NumericError, TrainingError, ValidationError
from .graphs import PyramidGraph
from .metrics import argmax_predict, balanced_accuracy, confusion_matrix, macro_f1
from .model import (
    ModelConfig,
    ModelParams,
    backward,
    forward,
    init_params,
    loss_from_trace,
)
from .seeding import derive_seed, make_rng

DEFAULT_SEEDS = tuple(range(10))


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and cross-validation settings.

    class_weights is "inverse-frequency", "uniform", or an explicit tuple of
    per-class weights. learning_rate 0 is accepted so no-op training can be
    exercised diagnostically.
    """

    learning_rate: float = 0.001
    weight_decay: float = 0.01
    epochs: int = 100
    folds: int = 3
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    class_weights: str | tuple[float, ...] = "inverse-frequency"
    batch: int = 1
    decay_mode: str = "decoupled"
    fold_seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if not self.seeds:
            raise ConfigError("at least one seed required")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.decay_mode not in ("decoupled", "coupled"):
            raise ConfigError(f"unknown decay_mode {self.decay_mode!r}")
        if isinstance(self.class_weights, str):
            if self.class_weights not in ("inverse-frequency", "uniform"):
                raise ConfigError(f"unknown class_weights mode {self.class_weights!r}")
        elif any(w <= 0 for w in self.class_weights):
            raise ConfigError("explicit class weights must be strictly positive")

    def to_dict(self) -> dict:
        cw = self.class_weights
        return {
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "epochs": self.epochs,
            "folds": self.folds,
            "seeds": list(self.seeds),
            "class_weights": cw if isinstance(cw, str) else list(cw),
            "batch": self.batch,
            "decay_mode": self.decay_mode,
            "fold_seed": self.fold_seed,
        }


def make_class_weights(labels, mode, classes: int) -> np.ndarray:
    """Per-class loss weights, mean-normalized to 1 in inverse-frequency mode."""
    if not isinstance(mode, str):
        w = np.asarray(mode, dtype=np.float64)
        if w.shape != (classes,):
            raise ConfigError(f"expected {classes} explicit weights, got {w.shape}")
        if np.any(w <= 0):
            raise ConfigError("explicit class weights must be strictly positive")
        return w
    if mode == "uniform":
        return np.ones(classes)
    if mode != "inverse-frequency":
        raise ConfigError(f"unknown class_weights mode {mode!r}")
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=classes)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise ConfigError(f"class {missing[0]} has no training samples")
    w = len(labels) / (classes * counts.astype(np.float64))
    return w / w.mean()


@dataclass(frozen=True)
class FoldAssignment:
    """Per-slide fold indices plus the group -> fold constraint map."""

    slide_folds: tuple[int, ...]
    group_folds: dict[str, int]
    k: int

    def fold_sizes(self) -> list[int]:
        return [self.slide_folds.count(f) for f in range(self.k)]


def group_kfold(slides, k: int, seed: int) -> FoldAssignment:
    """Assign patient groups to k folds, balancing fold sizes by slide count.

    Groups are shuffled with the seed, then visited largest-first, each going
    to the currently smallest fold (ties to the lowest fold index). The
    shuffle only breaks size ties, so balance is deterministic.
    """
    group_sizes: dict[str, int] = {}
    for _, group_id, _ in slides:
        group_sizes[group_id] = group_sizes.get(group_id, 0) + 1
    groups = sorted(group_sizes)
    if k > len(groups):
        raise ConfigError(f"k={k} exceeds {len(groups)} distinct groups")
    rng = make_rng("group-kfold", seed)
    shuffled = [groups[i] for i in rng.permutation(len(groups))]
    shuffled.sort(key=lambda g: -group_sizes[g])  # stable: seed decides ties
    fold_counts = [0] * k
    group_folds: dict[str, int] = {}
    for g in shuffled:
        f = fold_counts.index(min(fold_counts))
        group_folds[g] = f
        fold_counts[f] += group_sizes[g]
    slide_folds = tuple(group_folds[group_id] for _, group_id, _ in slides)
    return FoldAssignment(slide_folds=slide_folds, group_folds=group_folds, k=k)


# -- optimizer ------------------------------------------------------------------


class Adam:
    """Adam with optional weight decay on weight matrices (never biases).

    decay_mode "decoupled" multiplies weights by (1 - lr * decay) each step,
    independent of the gradient; "coupled" adds decay * W to the gradient
    before the moment updates (classic L2).
    """

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, params: ModelParams, lr: float, weight_decay: float = 0.0,
                 decay_mode: str = "decoupled"):
        self.lr = lr
        self.weight_decay = weight_decay
        self.decay_mode = decay_mode
        self.t = 0
        self.m = {name: np.zeros_like(t) for name, t in params.tensors()}
        self.v = {name: np.zeros_like(t) for name, t in params.tensors()}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]):
        self.t += 1
        bc1 = 1.0 - self.BETA1**self.t
        bc2 = 1.0 - self.BETA2**self.t
        for name, tensor in params.tensors():
            g = grads[name]
            is_weight = name.endswith(".W")
            if self.decay_mode == "coupled" and self.weight_decay and is_weight:
                g = g + self.weight_decay * tensor
            m = self.m[name]
            v = self.v[name]
            m *= self.BETA1
            m += (1.0 - self.BETA1) * g
            v *= self.BETA2
            v += (1.0 - self.BETA2) * np.square(g)
            if self.decay_mode == "decoupled" and self.weight_decay and is_weight:
                tensor *= 1.0 - self.lr * self.weight_decay
            tensor -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.EPS)


def _check_dataset(dataset: GraphDataset):
    if not dataset.graphs:
        raise ValidationError("empty dataset")
    dims = {g.d for g in dataset.graphs}
    if len(dims) != 1:
        raise ValidationError(f"graphs disagree on feature dim: {sorted(dims)}")


def default_arch(dataset: GraphDataset) -> ModelConfig:
    return ModelConfig(input_dim=dataset.graphs[0].d, classes=dataset.classes)


def train(
    dataset: GraphDataset,
    config: TrainConfig,
    params_init_seed: int,
    arch: ModelConfig | None = None,
) -> tuple[ModelParams, list[float]]:
    """Train on the whole dataset; returns final params and per-epoch mean loss.

    Glorot init is seeded by params_init_seed, which also drives the per-epoch
    sample order, so the full parameter trajectory is reproducible. With
    batch > 1 the gradients of a batch are averaged before the Adam step.
    """
    _check_dataset(dataset)
    arch = arch or default_arch(dataset)
    params = init_params(arch, params_init_seed)
    weights = make_class_weights(dataset.labels(), config.class_weights, dataset.classes)
    opt = Adam(params, config.learning_rate, config.weight_decay, config.decay_mode)
    shuffle_rng = make_rng("epoch-shuffle", params_init_seed)
    curve: list[float] = []
    n = len(dataset.graphs)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        pending: dict[str, np.ndarray] | None = None
        pending_n = 0
        try:
            for pos, i in enumerate(order):
                g = dataset.graphs[int(i)]
                trace = forward(g, params)
                total += loss_from_trace(trace, g.label, weights[g.label])
                grads, _ = backward(trace, g, params, g.label, weights[g.label])
                if pending is None:
                    pending = grads
                else:
                    for name in pending:
                        pending[name] += grads[name]
                pending_n += 1
                if pending_n == config.batch or pos == n - 1:
                    if pending_n > 1:
                        for name in pending:
                            pending[name] /= pending_n
                    opt.step(params, pending)
                    pending, pending_n = None, 0
        except NumericError as e:
            raise TrainingError(f"training diverged at epoch {epoch}: {e}", epoch) from e
        mean_loss = total / n
        if not np.isfinite(mean_loss):
            raise TrainingError(f"training loss became non-finite at epoch {epoch}", epoch)
        curve.append(mean_loss)
    return params, curve


def predict(g: PyramidGraph, params: ModelParams) -> tuple[int, np.ndarray]:
    trace = forward(g, params)
    return argmax_predict(trace.probs), trace.probs


def evaluate(graphs: list[PyramidGraph], params: ModelParams, classes: int) -> np.ndarray:
    """Confusion matrix of argmax predictions over the given graphs."""
    y_true = [g.label for g in graphs]
    y_pred = [predict(g, params)[0] for g in graphs]
    return confusion_matrix(y_true, y_pred, classes)


# -- cross-validation -------------------------------------------------------------


@dataclass(frozen=True)
class EvalRun:
    """Held-out metrics of one (seed, fold) training run."""

    seed: int
    fold: int
    balanced_accuracy: float
    macro_f1: float
    confusion: tuple[tuple[int, ...], ...]
    train_seconds: float


@dataclass
class EvalReport:
    """All (seed, fold) runs plus mean/std aggregates.

    to_json() is canonical and deterministic: wall-clock timings are reported
    separately (timing_rows) so identical configs produce byte-identical
    report files.
    """

    config: dict
    runs: list[EvalRun] = field(default_factory=list)

    def aggregate(self) -> dict[str, float]:
        bacc = np.array([r.balanced_accuracy for r in self.runs])
        f1 = np.array([r.macro_f1 for r in self.runs])

        def std(x):
            return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0

        return {
            "balanced_accuracy_mean": float(bacc.mean()),
            "balanced_accuracy_std": std(bacc),
            "macro_f1_mean": float(f1.mean()),
            "macro_f1_std": std(f1),
            "n_runs": len(self.runs),
        }

    def to_json(self) -> str:
        payload = {
            "config": self.config,
            "runs": [
                {
                    "seed": r.seed,
                    "fold": r.fold,
                    "balanced_accuracy": r.balanced_accuracy,
                    "macro_f1": r.macro_f1,
                    "confusion": [list(row) for row in r.confusion],
                }
                for r in self.runs
            ],
            "aggregate": self.aggregate(),
        }
        return json.dumps(payload, indent=2) + "\n"

    def timing_rows(self) -> list[tuple[int, int, float]]:
        return [(r.seed, r.fold, r.train_seconds) for r in self.runs]


def cross_validate(
    dataset: GraphDataset,
    config: TrainConfig,
    arch: ModelConfig | None = None,
) -> EvalReport:
    """Group-aware k-fold CV repeated over config.seeds.

    The fold assignment is fixed by config.fold_seed and shared across
    training seeds; each (seed, fold) run gets an independent derived init
    seed. Aggregates follow the mean +/- std convention over all runs.
    """
    _check_dataset(dataset)
    assignment = group_kfold(dataset.slides(), config.folds, config.fold_seed)
    report = EvalReport(config=config.to_dict())
    for seed in config.seeds:
        for fold in range(config.folds):
            train_graphs = [
                g for g, f in zip(dataset.graphs, assignment.slide_folds) if f != fold
            ]
            test_graphs = [
                g for g, f in zip(dataset.graphs, assignment.slide_folds) if f == fold
            ]
            if not train_graphs or not test_graphs:
                raise ConfigError(f"fold {fold} leaves an empty split")
            subset = GraphDataset(
                graphs=train_graphs, classes=dataset.classes, class_names=dataset.class_names
            )
            t0 = time.perf_counter()
            params, _ = train(subset, config, derive_seed("init", seed, fold), arch)
            dt = time.perf_counter() - t0
            cm = evaluate(test_graphs, params, dataset.classes)
            report.runs.append(
                EvalRun(
                    seed=seed,
                    fold=fold,
                    balanced_accuracy=balanced_accuracy(cm),
                    macro_f1=macro_f1(cm),
                    confusion=tuple(tuple(int(x) for x in row) for row in cm),
                    train_seconds=dt,
                )
            )
    return report
