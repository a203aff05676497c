"""Graph-convolution classifier with hand-written forward and backward passes.

Architecture: a stack of GCN layers (default widths d -> 256 -> 256 -> 128),
each computing relu(b + normalized-neighbor-sum(H) @ W), followed by a mean
readout over all nodes and a two-layer classifier (128 -> 128 -> C, ReLU
hidden). Reverse-mode gradients are exact and computed by the transpose of
the same structured aggregation; the normalized operator is symmetric for
undirected graphs, so aggregation is its own adjoint.

No autodiff framework is involved: the architecture is fixed, so the backward
pass is spelled out explicitly, which also yields the input-feature gradients
needed for magnification attribution.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    BadVersionError,
    ContractError,
    NumericError,
    TruncatedFileError,
    ValidationError,
)
from .graphs import PyramidGraph, Topology

CHECKPOINT_MAGIC = b"GRSP"
CHECKPOINT_VERSION = 1

DEFAULT_GCN_WIDTHS = (256, 256, 128)
DEFAULT_CLS_HIDDEN = 128


@dataclass(frozen=True)
class ModelConfig:
    """Layer widths. The GCN depth is len(gcn_widths); 3 matches the graph diameter."""

    input_dim: int
    classes: int
    gcn_widths: tuple[int, ...] = DEFAULT_GCN_WIDTHS
    cls_hidden: int = DEFAULT_CLS_HIDDEN

    def __post_init__(self):
        if self.input_dim < 1 or self.classes < 1:
            raise ValidationError("input_dim and classes must be >= 1")
        if not 1 <= len(self.gcn_widths) <= 6:
            raise ValidationError("gcn depth must be in [1, 6]")
        if any(w < 1 for w in self.gcn_widths) or self.cls_hidden < 1:
            raise ValidationError("layer widths must be >= 1")

    def layer_dims(self) -> list[tuple[int, int]]:
        """(in, out) per parameterized layer: GCN stack then classifier."""
        dims = []
        prev = self.input_dim
        for w in self.gcn_widths:
            dims.append((prev, w))
            prev = w
        dims.append((prev, self.cls_hidden))
        dims.append((self.cls_hidden, self.classes))
        return dims


def count_params(
    d: int,
    classes: int,
    gcn_widths: tuple[int, ...] = DEFAULT_GCN_WIDTHS,
    cls_hidden: int = DEFAULT_CLS_HIDDEN,
) -> int:
    """Exact scalar parameter count (weights and biases of every layer)."""
    cfg = ModelConfig(input_dim=d, classes=classes, gcn_widths=gcn_widths, cls_hidden=cls_hidden)
    return sum(i * o + o for i, o in cfg.layer_dims())


@dataclass
class ModelParams:
    """All trainable tensors. Weight matrices are (in_dim, out_dim), float64."""

    config: ModelConfig
    gcn_weights: list[np.ndarray]
    gcn_biases: list[np.ndarray]
    cls_weights: list[np.ndarray]
    cls_biases: list[np.ndarray]

    def __post_init__(self):
        dims = self.config.layer_dims()
        n_gcn = len(self.config.gcn_widths)
        got = [w.shape for w in self.gcn_weights] + [w.shape for w in self.cls_weights]
        if got != [tuple(d) for d in dims] or len(self.gcn_weights) != n_gcn:
            raise ValidationError(f"weight shapes {got} do not match config dims {dims}")
        for b, (_, o) in zip(self.gcn_biases + self.cls_biases, dims):
            if b.shape != (o,):
                raise ValidationError(f"bias shape {b.shape} does not match width {o}")
        for name, t in self.tensors():
            if not np.all(np.isfinite(t)):
                raise ValidationError(f"non-finite entry in parameter {name}")

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        """Named tensors in fixed serialization order."""
        out = []
        for i, (w, b) in enumerate(zip(self.gcn_weights, self.gcn_biases)):
            out.append((f"gcn{i}.W", w))
            out.append((f"gcn{i}.b", b))
        for i, (w, b) in enumerate(zip(self.cls_weights, self.cls_biases)):
            out.append((f"cls{i}.W", w))
            out.append((f"cls{i}.b", b))
        return out

    def n_params(self) -> int:
        return sum(t.size for _, t in self.tensors())

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            gcn_weights=[w.copy() for w in self.gcn_weights],
            gcn_biases=[b.copy() for b in self.gcn_biases],
            cls_weights=[w.copy() for w in self.cls_weights],
            cls_biases=[b.copy() for b in self.cls_biases],
        )


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, drawn from a PCG64 stream."""
    rng = np.random.default_rng(seed)
    gcn_w, gcn_b, cls_w, cls_b = [], [], [], []
    dims = config.layer_dims()
    n_gcn = len(config.gcn_widths)
    for idx, (fan_in, fan_out) in enumerate(dims):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        b = np.zeros(fan_out)
        if idx < n_gcn:
            gcn_w.append(w)
            gcn_b.append(b)
        else:
            cls_w.append(w)
            cls_b.append(b)
    return ModelParams(config, gcn_w, gcn_b, cls_w, cls_b)


def zero_params(config: ModelConfig) -> ModelParams:
    """All-zero parameters (useful for degenerate-case tests)."""
    n_gcn = len(config.gcn_widths)
    dims = config.layer_dims()
    ws = [np.zeros((i, o)) for i, o in dims]
    bs = [np.zeros(o) for _, o in dims]
    return ModelParams(config, ws[:n_gcn], bs[:n_gcn], ws[n_gcn:], bs[n_gcn:])


@dataclass
class ForwardTrace:
    """Every intermediate of one forward pass, retained for manual backprop.

    agg_inputs[l] is the normalized neighbor sum fed to layer l's weight
    matrix; pre_acts[l] and acts[l] are that layer's pre- and post-ReLU
    values for all nodes.
    """

    agg_inputs: list[np.ndarray]
    pre_acts: list[np.ndarray]
    acts: list[np.ndarray]
    readout: np.ndarray
    cls_pre: np.ndarray
    cls_hidden: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    n_nodes: int


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def gcn_layer_forward(
    feats: np.ndarray, topology: Topology, W: np.ndarray, b: np.ndarray
) -> np.ndarray:
    """One graph-convolution layer: relu(normalized-neighbor-sum(feats) @ W + b)."""
    _, _, h = _gcn_layer(feats, topology, W, b, layer=None)
    return h


def _gcn_layer(feats, topology, W, b, layer):
    if feats.shape[0] != topology.n_nodes:
        raise ValidationError(
            f"feats rows {feats.shape[0]} != node count {topology.n_nodes}"
        )
    if feats.shape[1] != W.shape[0]:
        raise ValidationError(f"feature dim {feats.shape[1]} != W input dim {W.shape[0]}")
    agg = topology.aggregate(feats)
    z = agg @ W + b
    if not np.all(np.isfinite(z)):
        raise NumericError(f"non-finite pre-activation in GCN layer {layer}", layer=layer)
    return agg, z, _relu(z)


def _dense_gcn_layer(op, feats, W, b, layer):
    if feats.shape[1] != W.shape[0]:
        raise ValidationError(f"feature dim {feats.shape[1]} != W input dim {W.shape[0]}")
    agg = op @ feats
    z = agg @ W + b
    if not np.all(np.isfinite(z)):
        raise NumericError(f"non-finite pre-activation in GCN layer {layer}", layer=layer)
    return agg, z, _relu(z)


def forward(g: PyramidGraph, params: ModelParams, method: str = "structured") -> ForwardTrace:
    """Full forward pass; retains all intermediates.

    method "structured" uses the O(m*d) block kernel; "dense" multiplies by the
    explicit normalized adjacency and exists as the reference route.
    """
    if g.d != params.config.input_dim:
        raise ValidationError(
            f"graph dim {g.d} != model input dim {params.config.input_dim}"
        )
    if method not in ("structured", "dense"):
        raise ValidationError(f"unknown forward method {method!r}")
    op = g.topology.dense_operator() if method == "dense" else None

    h = g.node_feats
    agg_inputs, pre_acts, acts = [], [], []
    for l, (W, b) in enumerate(zip(params.gcn_weights, params.gcn_biases)):
        if method == "dense":
            agg, z, h = _dense_gcn_layer(op, h, W, b, l)
        else:
            agg, z, h = _gcn_layer(h, g.topology, W, b, l)
        agg_inputs.append(agg)
        pre_acts.append(z)
        acts.append(h)

    readout = h.mean(axis=0)
    cls_pre = readout @ params.cls_weights[0] + params.cls_biases[0]
    cls_hidden = _relu(cls_pre)
    logits = cls_hidden @ params.cls_weights[1] + params.cls_biases[1]
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite classifier logits")
    return ForwardTrace(
        agg_inputs=agg_inputs,
        pre_acts=pre_acts,
        acts=acts,
        readout=readout,
        cls_pre=cls_pre,
        cls_hidden=cls_hidden,
        logits=logits,
        probs=_softmax(logits),
        n_nodes=g.n_nodes,
    )


def loss_from_trace(trace: ForwardTrace, target: int, class_weight: float = 1.0) -> float:
    """Weighted cross-entropy, computed stably from the logits."""
    z = trace.logits
    lse = np.logaddexp.reduce(z - z.max()) + z.max()
    return float(class_weight * (lse - z[target]))


def _check_trace(trace: ForwardTrace, g: PyramidGraph, params: ModelParams):
    if trace.n_nodes != g.n_nodes:
        raise ContractError("trace was produced for a different graph size")
    if len(trace.acts) != len(params.gcn_weights):
        raise ContractError("trace depth does not match model depth")
    if trace.logits.shape != (params.config.classes,):
        raise ContractError("trace class count does not match model")
    if trace.acts[-1].shape[1] != params.config.gcn_widths[-1]:
        raise ContractError("trace widths do not match model")


def backprop_logits(
    trace: ForwardTrace,
    g: PyramidGraph,
    params: ModelParams,
    dlogits: np.ndarray,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Reverse-mode pass from an arbitrary logit cotangent.

    Returns (parameter gradients keyed like ModelParams.tensors(),
    input-feature gradients with one row per node).
    """
    _check_trace(trace, g, params)
    grads: dict[str, np.ndarray] = {}

    # classifier output layer
    grads["cls1.W"] = np.outer(trace.cls_hidden, dlogits)
    grads["cls1.b"] = dlogits.copy()
    dhidden = params.cls_weights[1] @ dlogits

    # classifier hidden layer (ReLU subgradient at 0 is 0)
    dpre = dhidden * (trace.cls_pre > 0)
    grads["cls0.W"] = np.outer(trace.readout, dpre)
    grads["cls0.b"] = dpre.copy()
    dreadout = params.cls_weights[0] @ dpre

    # mean readout broadcasts the cotangent evenly over nodes
    dh = np.broadcast_to(dreadout / trace.n_nodes, trace.acts[-1].shape).copy()

    # GCN stack; the normalized operator is symmetric, so its adjoint is itself
    for l in range(len(params.gcn_weights) - 1, -1, -1):
        dz = dh * (trace.pre_acts[l] > 0)
        grads[f"gcn{l}.W"] = trace.agg_inputs[l].T @ dz
        grads[f"gcn{l}.b"] = dz.sum(axis=0)
        dh = g.topology.aggregate(dz @ params.gcn_weights[l].T)

    return grads, dh


def backward(
    trace: ForwardTrace,
    g: PyramidGraph,
    params: ModelParams,
    target: int,
    class_weight: float = 1.0,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact gradients of class_weight * cross_entropy(probs, target).

    Returns parameter gradients and the gradient w.r.t. node features; the
    latter feeds the magnification-attribution analysis.
    """
    if not 0 <= target < params.config.classes:
        raise ContractError(f"target {target} outside [0, {params.config.classes})")
    dlogits = class_weight * trace.probs
    dlogits[target] -= class_weight
    return backprop_logits(trace, g, params, dlogits)


def logit_input_gradient(
    trace: ForwardTrace, g: PyramidGraph, params: ModelParams, class_index: int
) -> np.ndarray:
    """Gradient of one logit w.r.t. every input node feature."""
    if not 0 <= class_index < params.config.classes:
        raise ContractError(f"class {class_index} outside [0, {params.config.classes})")
    dlogits = np.zeros(params.config.classes)
    dlogits[class_index] = 1.0
    _, input_grads = backprop_logits(trace, g, params, dlogits)
    return input_grads


# -- checkpoint format --------------------------------------------------------
#
# Binary layout (all integers little-endian):
#   magic "GRSP" | u16 version | u32 input_dim | u32 n_gcn | u32[n_gcn] widths
#   | u32 cls_hidden | u32 classes | tensors
# Tensors follow in ModelParams.tensors() order as row-major float64.
# A JSON sidecar at <path>.json records the config and training metadata.


def save_checkpoint(params: ModelParams, path: str | Path, metadata: dict | None = None):
    path = Path(path)
    cfg = params.config
    header = CHECKPOINT_MAGIC + struct.pack("<H", CHECKPOINT_VERSION)
    header += struct.pack("<II", cfg.input_dim, len(cfg.gcn_widths))
    header += struct.pack(f"<{len(cfg.gcn_widths)}I", *cfg.gcn_widths)
    header += struct.pack("<II", cfg.cls_hidden, cfg.classes)
    blob = bytearray(header)
    for _, t in params.tensors():
        blob += np.ascontiguousarray(t, dtype="<f8").tobytes()
    path.write_bytes(bytes(blob))
    sidecar = {
        "config": {
            "input_dim": cfg.input_dim,
            "gcn_widths": list(cfg.gcn_widths),
            "cls_hidden": cfg.cls_hidden,
            "classes": cfg.classes,
        },
        "n_params": params.n_params(),
        "metadata": metadata or {},
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    """Read a checkpoint; returns (params, sidecar metadata or {})."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: not a model checkpoint")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise BadVersionError(f"{path}: unsupported checkpoint version {version}")
    off = 6
    input_dim, n_gcn = struct.unpack_from("<II", raw, off)
    off += 8
    widths = struct.unpack_from(f"<{n_gcn}I", raw, off)
    off += 4 * n_gcn
    cls_hidden, classes = struct.unpack_from("<II", raw, off)
    off += 8
    cfg = ModelConfig(
        input_dim=input_dim, classes=classes, gcn_widths=tuple(widths), cls_hidden=cls_hidden
    )
    gcn_w, gcn_b, cls_w, cls_b = [], [], [], []
    for idx, (fan_in, fan_out) in enumerate(cfg.layer_dims()):
        need = (fan_in * fan_out + fan_out) * 8
        if len(raw) - off < need:
            raise TruncatedFileError(f"{path}: checkpoint ends inside layer {idx}")
        w = np.frombuffer(raw, dtype="<f8", count=fan_in * fan_out, offset=off)
        off += fan_in * fan_out * 8
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=off)
        off += fan_out * 8
        w = w.reshape(fan_in, fan_out).copy()
        b = b.copy()
        if idx < n_gcn:
            gcn_w.append(w)
            gcn_b.append(b)
        else:
            cls_w.append(w)
            cls_b.append(b)
    params = ModelParams(cfg, gcn_w, gcn_b, cls_w, cls_b)
    sidecar_path = Path(str(path) + ".json")
    metadata = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    return params, metadata
