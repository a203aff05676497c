"""Node-drop and magnification ablations.

The Monte Carlo test shrinks every slide's graph by dropping random triplets
(one node per magnification, keeping the topology valid at the smaller m) and
re-runs cross-validation per drop count, mapping accuracy and its variance
against graph size. The magnification test retrains the identical
architecture on graphs restricted to single magnifications or pairs.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataio import GraphDataset
from .errors import ConfigError, ValidationError
from .graphs import ALL_LEVELS, PyramidGraph
from .metrics import balanced_accuracy
from .model import ModelConfig
from .seeding import derive_seed, make_rng
from .training import EvalReport, TrainConfig, cross_validate, evaluate, group_kfold, train

FULL_MASK = ALL_LEVELS
STANDARD_MASKS = ((1,), (2,), (3,), (1, 2), (1, 3), (2, 3))


def mask_name(levels) -> str:
    return "&".join(f"M{l}" for l in sorted(levels))


def parse_mask(text: str) -> tuple[int, ...]:
    try:
        levels = tuple(sorted(int(part.strip().upper().lstrip("M")) for part in text.split("&")))
    except ValueError:
        raise ConfigError(f"cannot parse magnification mask {text!r}") from None
    if not levels or any(l not in ALL_LEVELS for l in levels) or len(set(levels)) != len(levels):
        raise ConfigError(f"mask {text!r} must name a nonempty subset of M1, M2, M3")
    return levels


def mask_levels(g: PyramidGraph, levels) -> PyramidGraph:
    """Restrict a graph to the named magnifications.

    Clique edges survive inside every kept level; chain edges survive only
    when both endpoints survive, so the M1&M3 mask has none and falls apart
    into two cliques (each component still reaches the mean readout). With
    m = 1 that mask leaves isolated nodes whose neighbor sum is empty.
    """
    levels = tuple(sorted(set(levels)))
    if not levels:
        raise ValidationError("mask must keep at least one magnification")
    missing = [l for l in levels if l not in g.topology.levels]
    if missing:
        raise ValidationError(f"levels {missing} not present in graph {g.slide_id!r}")
    if levels == g.topology.levels:
        return g
    top = replace(g.topology, levels=levels)
    feats = np.concatenate([g.level_feats(l) for l in levels], axis=0)
    return PyramidGraph(
        node_feats=feats,
        topology=top,
        label=g.label,
        slide_id=g.slide_id,
        group_id=g.group_id,
    )


def drop_triplets(g: PyramidGraph, indices) -> PyramidGraph:
    """Remove whole triplets (the index-aligned node of every present level).

    The result is a valid pyramidal graph at m' = m - len(indices); dropping
    everything is an error, dropping nothing returns the graph unchanged.
    """
    indices = set(int(i) for i in indices)
    if not indices:
        return g
    bad = [i for i in indices if not 0 <= i < g.m]
    if bad:
        raise ValidationError(f"drop indices {sorted(bad)} outside [0, {g.m})")
    if len(indices) >= g.m:
        raise ValidationError("cannot drop every triplet")
    keep = np.array(sorted(set(range(g.m)) - indices))
    feats = np.concatenate([g.level_feats(l)[keep] for l in g.topology.levels], axis=0)
    top = replace(g.topology, m=len(keep))
    return PyramidGraph(
        node_feats=feats,
        topology=top,
        label=g.label,
        slide_id=g.slide_id,
        group_id=g.group_id,
    )


@dataclass(frozen=True)
class MonteCarloPlan:
    """Drop-count grid. counts are triplets removed per slide; 0 means no drop.

    The default grid is a desk-scale subsample; full_grid() reproduces the
    exhaustive sweep (counts 10..390 step 10, 10 repetitions).
    """

    base_m: int = 400
    counts: tuple[int, ...] = (50, 150, 250, 350)
    repetitions: int = 3

    def __post_init__(self):
        if self.base_m < 2:
            raise ConfigError("base_m must be >= 2")
        if not self.counts:
            raise ConfigError("need at least one drop count")
        if len(set(self.counts)) != len(self.counts):
            raise ConfigError("drop counts must be distinct")
        if any(not 0 <= c < self.base_m for c in self.counts):
            raise ConfigError(f"drop counts must lie in [0, {self.base_m})")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")

    @classmethod
    def full_grid(cls, base_m: int = 400, step: int = 10) -> "MonteCarloPlan":
        return cls(base_m=base_m, counts=tuple(range(step, base_m - step + 1, step)),
                   repetitions=10)


@dataclass(frozen=True)
class MonteCarloRow:
    count: int
    nodes: int
    mean_bacc: float
    std_bacc: float
    n_runs: int


def _dropped_dataset(dataset: GraphDataset, count: int, drop_seed: int, rep: int) -> GraphDataset:
    """Per-slide independent uniform triplet drops, deterministic per cell."""
    if count == 0:
        return dataset
    graphs = []
    for g in dataset.graphs:
        rng = make_rng("mc-drop", drop_seed, rep, count, g.slide_id)
        idx = rng.choice(g.m, size=count, replace=False)
        graphs.append(drop_triplets(g, idx))
    return GraphDataset(graphs=graphs, classes=dataset.classes,
                        class_names=dataset.class_names)


_MC_STATE: dict = {}


def _mc_worker_init(dataset, config, arch, drop_seed):
    _MC_STATE["dataset"] = dataset
    _MC_STATE["config"] = config
    _MC_STATE["arch"] = arch
    _MC_STATE["drop_seed"] = drop_seed
    _MC_STATE["assignment"] = group_kfold(dataset.slides(), config.folds, config.fold_seed)


def _mc_run_cell(cell):
    rep, count, seed, fold = cell
    dataset = _MC_STATE["dataset"]
    config: TrainConfig = _MC_STATE["config"]
    assignment = _MC_STATE["assignment"]
    dropped = _dropped_dataset(dataset, count, _MC_STATE["drop_seed"], rep)
    train_graphs = [g for g, f in zip(dropped.graphs, assignment.slide_folds) if f != fold]
    test_graphs = [g for g, f in zip(dropped.graphs, assignment.slide_folds) if f == fold]
    subset = GraphDataset(graphs=train_graphs, classes=dataset.classes,
                          class_names=dataset.class_names)
    params, _ = train(subset, config, derive_seed("init", seed, fold), _MC_STATE["arch"])
    cm = evaluate(test_graphs, params, dataset.classes)
    return cell, balanced_accuracy(cm)


def monte_carlo_test(
    dataset: GraphDataset,
    plan: MonteCarloPlan,
    config: TrainConfig,
    arch: ModelConfig | None = None,
    drop_seed: int = 0,
    jobs: int = 1,
) -> list[MonteCarloRow]:
    """Accuracy vs graph size over the plan's grid.

    One training run per (repetition, count, seed, fold); rows aggregate per
    count. Results are independent of jobs: every cell derives its own seeds.
    """
    small = [g.m for g in dataset.graphs if g.m <= max(plan.counts)]
    if small:
        raise ConfigError(
            f"{len(small)} graphs have m <= max drop count {max(plan.counts)}"
        )
    cells = [
        (rep, count, seed, fold)
        for rep in range(plan.repetitions)
        for count in plan.counts
        for seed in config.seeds
        for fold in range(config.folds)
    ]
    results: dict[tuple, float] = {}
    if jobs <= 1:
        _mc_worker_init(dataset, config, arch, drop_seed)
        for cell in cells:
            key, bacc = _mc_run_cell(cell)
            results[key] = bacc
    else:
        with ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_mc_worker_init,
            initargs=(dataset, config, arch, drop_seed),
        ) as pool:
            for key, bacc in pool.map(_mc_run_cell, cells):
                results[key] = bacc
    rows = []
    levels = len(dataset.graphs[0].topology.levels)
    for count in sorted(plan.counts):
        vals = np.array([v for (rep, c, s, f), v in results.items() if c == count])
        std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        rows.append(
            MonteCarloRow(
                count=count,
                nodes=levels * (plan.base_m - count),
                mean_bacc=float(vals.mean()),
                std_bacc=std,
                n_runs=len(vals),
            )
        )
    return rows


def write_monte_carlo_csv(rows: list[MonteCarloRow], path: str | Path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["nodes", "mean_bacc", "std_bacc"])
        for r in rows:
            writer.writerow([r.nodes, repr(r.mean_bacc), repr(r.std_bacc)])


def magnification_test(
    dataset: GraphDataset,
    masks,
    config: TrainConfig,
    arch: ModelConfig | None = None,
) -> dict[str, EvalReport]:
    """Cross-validate the same architecture per magnification mask.

    The full-graph row is appended when absent so every table carries the
    reference. Fold assignment depends only on slides and groups, so all
    masks share identical splits and seeds.
    """
    masks = [tuple(sorted(set(m))) for m in masks]
    if not masks:
        raise ConfigError("need at least one magnification mask")
    if FULL_MASK not in masks:
        masks = masks + [FULL_MASK]
    out: dict[str, EvalReport] = {}
    for mask in masks:
        masked = GraphDataset(
            graphs=[mask_levels(g, mask) for g in dataset.graphs],
            classes=dataset.classes,
            class_names=dataset.class_names,
        )
        out[mask_name(mask)] = cross_validate(masked, config, arch)
    return out


def write_magnification_csv(reports: dict[str, EvalReport], path: str | Path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mask", "bacc", "bacc_std", "f1", "f1_std"])
        for name, report in reports.items():
            agg = report.aggregate()
            writer.writerow(
                [
                    name,
                    repr(agg["balanced_accuracy_mean"]),
                    repr(agg["balanced_accuracy_std"]),
                    repr(agg["macro_f1_mean"]),
                    repr(agg["macro_f1_std"]),
                ]
            )
