"""Per-slide magnification attribution from input-feature gradients.

For each slide the gradient of the predicted-class logit with respect to
every input node feature is computed by the exact backward pass and split by
magnification block. Two energy readings of that gradient are offered; the
underlying quantity is underspecified upstream, so both reconstructions are
first-class and the choice is documented here:

  "grad-input" (default): E_k = sum over nodes i in block k of
      <dlogit/dh_i, h_i>^2,
  the squared first-order contribution of each node's content to the
  predicted logit (gradient-weighted activation, the saliency lineage's
  class-score attribution). This is the reading that makes attribution agree
  with occlusion: blocks whose *content* drives the decision get the energy.

  "grad-norm": E_k = sum over nodes of ||dlogit/dh_i||^2, pure sensitivity.
  In this architecture the shared layer-1 weights give every input row a
  near-equal total influence on the aggregates (each clique column sums to
  ~1), so sensitivity energy spreads almost uniformly across blocks
  regardless of where the information lives; it is kept for comparison, not
  as the default.

Shares (energies normalized to sum 1) above a threshold define the consulted
set: the magnifications the model leaned on for this slide. An occlusion
helper (zeroing one magnification's features) provides the gradient-free
counterpart used to sanity-check attributions.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataio import GraphDataset
from .errors import ConfigError, ContractError
from .graphs import ALL_LEVELS, LEVEL_NAMES, PyramidGraph
from .metrics import argmax_predict
from .model import ModelParams, forward, logit_input_gradient

DEFAULT_TAU = 0.25

# the 7 nonempty magnification subsets, in histogram display order
SUBSET_ORDER = tuple(
    "&".join(LEVEL_NAMES[l] for l in combo)
    for combo in ((1,), (2,), (3,), (1, 2), (1, 3), (2, 3), (1, 2, 3))
)


def subset_name(levels) -> str:
    return "&".join(LEVEL_NAMES[l] for l in sorted(levels))


ENERGY_MODES = ("grad-input", "grad-norm")


def _slide_energies(g: PyramidGraph, params: ModelParams, mode: str):
    if mode not in ENERGY_MODES:
        raise ConfigError(f"unknown energy mode {mode!r}; pick one of {ENERGY_MODES}")
    if g.topology.levels != ALL_LEVELS:
        raise ContractError("gradient energies are defined on full three-level graphs")
    trace = forward(g, params)
    predicted = argmax_predict(trace.probs)
    grads = logit_input_gradient(trace, g, params, predicted)
    if mode == "grad-input":
        per_node = np.sum(grads * g.node_feats, axis=1) ** 2
    else:
        per_node = np.sum(grads**2, axis=1)
    energies = np.array(
        [float(per_node[g.topology.block_slice(l)].sum()) for l in ALL_LEVELS]
    )
    return energies, predicted


def gradient_energy(
    g: PyramidGraph, params: ModelParams, mode: str = "grad-input"
) -> np.ndarray:
    """Raw per-magnification energies (E1, E2, E3) for the predicted class.

    See the module docstring for the two modes. Requires a full three-level
    graph.
    """
    return _slide_energies(g, params, mode)[0]


def consulted_set(shares, tau: float = DEFAULT_TAU) -> frozenset[str]:
    """Magnifications whose share reaches tau; never empty.

    tau must lie in (0, 1/2]. When every share is below tau (possible only
    for tau > 1/3) the argmax singleton is returned.
    """
    if not 0 < tau <= 0.5:
        raise ConfigError(f"tau must lie in (0, 0.5], got {tau}")
    shares = np.asarray(shares, dtype=float)
    chosen = [LEVEL_NAMES[l] for l, s in zip(ALL_LEVELS, shares) if s >= tau]
    if not chosen:
        chosen = [LEVEL_NAMES[ALL_LEVELS[int(np.argmax(shares))]]]
    return frozenset(chosen)


@dataclass(frozen=True)
class ConsultationRecord:
    slide_id: str
    true_label: int
    predicted: int
    energies: tuple[float, float, float]
    shares: tuple[float, float, float]
    consulted: frozenset[str]


def analyze_slide(
    g: PyramidGraph,
    params: ModelParams,
    tau: float = DEFAULT_TAU,
    mode: str = "grad-input",
) -> ConsultationRecord:
    """Energies, shares, and consulted set for one slide.

    A zero Jacobian (all energies 0) yields equal shares and "consulted all
    three", with a warning, so histogram totals stay at 1.
    """
    energies, predicted = _slide_energies(g, params, mode)
    total = energies.sum()
    if total == 0.0:
        warnings.warn(
            f"slide {g.slide_id!r}: zero input-gradient energy; "
            "treating all magnifications as consulted"
        )
        shares = np.full(3, 1.0 / 3.0)
    else:
        shares = energies / total
    return ConsultationRecord(
        slide_id=g.slide_id,
        true_label=g.label,
        predicted=predicted,
        energies=tuple(float(e) for e in energies),
        shares=tuple(float(s) for s in shares),
        consulted=consulted_set(shares, tau),
    )


def consultation_histogram(
    dataset: GraphDataset,
    params: ModelParams,
    tau: float = DEFAULT_TAU,
    mode: str = "grad-input",
) -> tuple[list[ConsultationRecord], dict[int, dict[str, float]]]:
    """Per-slide records and, per true class, the consulted-subset distribution.

    Each class's fractions cover the 7 nonempty subsets and sum to 1.
    """
    records = [analyze_slide(g, params, tau, mode) for g in dataset.graphs]
    hist: dict[int, dict[str, float]] = {}
    for c in sorted({r.true_label for r in records}):
        class_records = [r for r in records if r.true_label == c]
        counts = {name: 0 for name in SUBSET_ORDER}
        for r in class_records:
            counts[subset_name([l for l in ALL_LEVELS if LEVEL_NAMES[l] in r.consulted])] += 1
        hist[c] = {name: counts[name] / len(class_records) for name in SUBSET_ORDER}
    return records, hist


def occlude_levels(g: PyramidGraph, levels) -> PyramidGraph:
    """Copy of the graph with the named magnifications' features zeroed.

    Topology is untouched; only the information content is removed, which is
    the gradient-free probe used to sanity-check attribution.
    """
    levels = [l for l in levels]
    missing = [l for l in levels if l not in g.topology.levels]
    if missing:
        raise ConfigError(f"levels {missing} not present in graph {g.slide_id!r}")
    feats = g.node_feats.copy()
    for l in levels:
        feats[g.topology.block_slice(l)] = 0.0
    return replace(g, node_feats=feats)


def write_records_csv(records: list[ConsultationRecord], path: str | Path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["slide_id", "true_label", "predicted", "e_m1", "e_m2", "e_m3",
             "share_m1", "share_m2", "share_m3", "consulted"]
        )
        for r in records:
            writer.writerow(
                [r.slide_id, r.true_label, r.predicted,
                 *[repr(e) for e in r.energies], *[repr(s) for s in r.shares],
                 subset_name([l for l in ALL_LEVELS if LEVEL_NAMES[l] in r.consulted])]
            )
