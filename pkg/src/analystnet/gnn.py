"""Graph attention and convolution forecasters over firm graphs.

A model maps an (N, 8) feature block and a dated firm graph to per-firm
probabilities of next-month outperformance. Three kinds share one training
protocol: `gat` (attention message passing, multi-head), `gcn`
(degree-normalized convolution), and `nn` (row-wise feed-forward net that
ignores the graph). Self-loops are always added to the neighborhood mask so
a firm keeps its own features and no softmax row is empty.

Training minimizes class-weighted binary cross-entropy with Adam and early
stopping on validation loss; `grid_search` evaluates a deterministic
enumeration of hyperparameter cells and keeps the best validated one.

For speed, a training batch of daily snapshots is stacked vertically into
one tensor and the attention/aggregation ops run per block; numerics are
identical to the single-sample path.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericalError, TrainingDiverged
from .graphs import CoverageGraph

LEAKY_SLOPE = 0.2

# Hyperparameter grid used for model selection (slowest to fastest axis).
GRID_LR = (1e-2, 1e-3, 1e-4)
GRID_HIDDEN = (64, 128)
GRID_LAYERS = (1, 2)
GRID_WEIGHT_DECAY = (1e-4, 1e-5, 1e-6)
GRID_HEADS = (2, 8)

MODEL_KINDS = ("gat", "gcn", "nn")

# Observers receive every attention matrix produced by a GAT layer forward
# pass (rows are destination distributions). Used by invariant checks.
_attention_observers: list[Callable[[np.ndarray], None]] = []


def register_attention_observer(fn: Callable[[np.ndarray], None]) -> None:
    _attention_observers.append(fn)


def clear_attention_observers() -> None:
    _attention_observers.clear()


@contextlib.contextmanager
def observe_attention():
    """Track the worst attention row-sum deviation within the block."""
    box = {"max_row_dev": 0.0}

    def observer(alpha: np.ndarray) -> None:
        dev = float(np.abs(alpha.sum(axis=1) - 1.0).max())
        if dev > box["max_row_dev"]:
            box["max_row_dev"] = dev

    register_attention_observer(observer)
    try:
        yield box
    finally:
        _attention_observers.remove(observer)


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "gat"
    layers: int = 2
    hidden: int = 64
    heads: int = 2
    lr: float = 1e-3
    weight_decay: float = 1e-5
    seed: int = 0
    max_epochs: int = 300
    patience: int = 20
    use_edge_weights: bool = False

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.layers < 1 or self.heads < 1 or self.hidden < 1:
            raise ConfigError("layers, heads, and hidden must be >= 1")


@dataclass
class GatLayerParams:
    """One attention layer: per-head transform W and attention vector halves.

    The attention vector of length 2*d_out is stored as its source and
    destination halves, so the score of edge (i <- j) is
    a_dst . (W x_i) + a_src . (W x_j).
    """

    w: list       # per head, Tensor (d_in, d_out)
    a_dst: list   # per head, Tensor (d_out, 1), applied to the destination
    a_src: list   # per head, Tensor (d_out, 1), applied to the source
    merge: str    # "concat" for hidden layers, "mean" for the last one

    def parameters(self) -> list:
        out = []
        for k in range(len(self.w)):
            out.extend((self.w[k], self.a_dst[k], self.a_src[k]))
        return out


@dataclass
class ModelParams:
    kind: str
    use_edge_weights: bool = False
    gat_layers: list = field(default_factory=list)
    gcn_weights: list = field(default_factory=list)
    mlp: list = field(default_factory=list)      # [w1, b1, w2, b2]
    head: Tensor | None = None                   # final linear map to 1 logit

    def parameters(self) -> list:
        out = []
        for layer in self.gat_layers:
            out.extend(layer.parameters())
        out.extend(self.gcn_weights)
        out.extend(self.mlp)
        if self.head is not None:
            out.append(self.head)
        return out

    def snapshot(self) -> list:
        return [p.data.copy() for p in self.parameters()]

    def restore(self, arrays) -> None:
        for p, a in zip(self.parameters(), arrays):
            p.data = a.copy()


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    limit = math.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-limit, limit, size=(rows, cols)), requires_grad=True)


def init_params(config: ModelConfig, d_in: int,
                rng: np.random.Generator) -> ModelParams:
    params = ModelParams(kind=config.kind, use_edge_weights=config.use_edge_weights)
    if config.kind == "gat":
        dim = d_in
        for layer_idx in range(config.layers):
            merge = "mean" if layer_idx == config.layers - 1 else "concat"
            w, a_dst, a_src = [], [], []
            for _ in range(config.heads):
                w.append(_glorot(rng, dim, config.hidden))
                limit = math.sqrt(6.0 / (2 * config.hidden + 1))
                a_full = rng.uniform(-limit, limit, size=(2 * config.hidden, 1))
                a_dst.append(Tensor(a_full[: config.hidden], requires_grad=True))
                a_src.append(Tensor(a_full[config.hidden:], requires_grad=True))
            params.gat_layers.append(GatLayerParams(w, a_dst, a_src, merge))
            dim = config.hidden if merge == "mean" else config.hidden * config.heads
        params.head = _glorot(rng, dim, 1)
    elif config.kind == "gcn":
        dim = d_in
        for _ in range(config.layers):
            params.gcn_weights.append(_glorot(rng, dim, config.hidden))
            dim = config.hidden
        params.head = _glorot(rng, dim, 1)
    else:  # nn: 2-layer feed-forward, biases included
        params.mlp = [
            _glorot(rng, d_in, config.hidden),
            Tensor(np.zeros((1, config.hidden)), requires_grad=True),
            _glorot(rng, config.hidden, 1),
            Tensor(np.zeros((1, 1)), requires_grad=True),
        ]
    return params


def normalized_adjacency(graph: CoverageGraph) -> np.ndarray:
    """Symmetric degree-normalized binary adjacency with self-loops."""
    a = graph.adjacency() + np.eye(graph.n)
    d = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def _edge_weight_modulation(graph: CoverageGraph) -> np.ndarray:
    m = np.log1p(graph.adjacency(weighted=True))
    np.fill_diagonal(m, math.log(2.0))
    return m


class StackedGraphs:
    """Per-block masks and propagation constants for a stack of samples."""

    def __init__(self, graphs: Sequence[CoverageGraph], kind: str,
                 use_edge_weights: bool):
        cache: dict[int, tuple] = {}
        masks, wmods, ahats = [], [], []
        for g in graphs:
            entry = cache.get(id(g))
            if entry is None:
                entry = (
                    g.neighbor_mask(self_loops=True),
                    _edge_weight_modulation(g) if use_edge_weights else None,
                    normalized_adjacency(g) if kind == "gcn" else None,
                )
                cache[id(g)] = entry
            masks.append(entry[0])
            wmods.append(entry[1])
            ahats.append(entry[2])
        self.n_blocks = len(graphs)
        self.mask = np.vstack(masks)
        self.mask_offset = ad.mask_offset(self.mask)
        self.wmod = np.vstack(wmods) if use_edge_weights else None
        self.ahat = Tensor(np.vstack(ahats)) if kind == "gcn" else None


def _gat_layer(x: Tensor, mask: np.ndarray, layer: GatLayerParams,
               n_blocks: int, wmod: np.ndarray | None,
               attention_out: list | None = None,
               offset: np.ndarray | None = None) -> Tensor:
    if offset is None:
        offset = ad.mask_offset(mask)
    head_outputs = []
    for k in range(len(layer.w)):
        h = ad.matmul(x, layer.w[k])
        f = ad.matmul(h, layer.a_dst[k])
        g = ad.matmul(h, layer.a_src[k])
        alpha = ad.attention_softmax(f, g, mask, offset, n_blocks,
                                     LEAKY_SLOPE, wmod)
        for observer in _attention_observers:
            observer(alpha.data)
        if attention_out is not None:
            attention_out.append(alpha.data)
        head_outputs.append(ad.relu(ad.matmul_blocked(alpha, h, n_blocks)))
    if layer.merge == "concat":
        return head_outputs[0] if len(head_outputs) == 1 else ad.concat_cols(*head_outputs)
    merged = head_outputs[0]
    for extra in head_outputs[1:]:
        merged = ad.add(merged, extra)
    return ad.scale(merged, 1.0 / len(head_outputs))


def _forward(x: Tensor, stacked: StackedGraphs | None, params: ModelParams,
             attention_out: list | None = None) -> Tensor:
    if params.kind == "gat":
        h = x
        for layer_idx, layer in enumerate(params.gat_layers):
            h = _gat_layer(h, stacked.mask, layer, stacked.n_blocks, stacked.wmod,
                           attention_out if layer_idx == 0 else None,
                           stacked.mask_offset)
        return ad.sigmoid(ad.matmul(h, params.head))
    if params.kind == "gcn":
        h = x
        for w in params.gcn_weights:
            h = ad.relu(ad.matmul(ad.matmul_blocked(stacked.ahat, h,
                                                    stacked.n_blocks), w))
        return ad.sigmoid(ad.matmul(h, params.head))
    w1, b1, w2, b2 = params.mlp
    h = ad.relu(ad.add_bias(ad.matmul(x, w1), b1))
    return ad.sigmoid(ad.add_bias(ad.matmul(h, w2), b2))


def gat_layer_forward(x, graph: CoverageGraph, layer: GatLayerParams,
                      use_edge_weights: bool = False,
                      attention_out: list | None = None) -> np.ndarray:
    """Single-sample attention layer on a graph (self-loops added)."""
    mask = graph.neighbor_mask(self_loops=True)
    wmod = _edge_weight_modulation(graph) if use_edge_weights else None
    with ad.no_grad():
        out = _gat_layer(Tensor(np.asarray(x)), mask, layer, 1, wmod, attention_out)
    return out.data


def gcn_layer_forward(x, graph: CoverageGraph, w) -> np.ndarray:
    """Single-sample degree-normalized convolution layer."""
    ahat = Tensor(normalized_adjacency(graph))
    wt = w if isinstance(w, Tensor) else Tensor(np.asarray(w))
    with ad.no_grad():
        return ad.relu(ad.matmul(ad.matmul(ahat, Tensor(np.asarray(x))), wt)).data


def model_forward(x, graph: CoverageGraph | None, params: ModelParams,
                  attention_out: list | None = None) -> np.ndarray:
    """Per-firm probabilities for one feature block; returns shape (N,)."""
    stacked = None
    if params.kind != "nn":
        if graph is None:
            raise ConfigError(f"model kind {params.kind!r} needs a graph")
        stacked = StackedGraphs([graph], params.kind, params.use_edge_weights)
    with ad.no_grad():
        probs = _forward(Tensor(np.asarray(x)), stacked, params, attention_out)
    return probs.data.ravel()


def class_weights(targets: np.ndarray) -> tuple[float, float]:
    """Inverse-class-frequency weights (w0, w1), mean weight one."""
    y = np.asarray(targets).ravel()
    n1 = int(y.sum())
    n0 = y.size - n1
    if n0 == 0 or n1 == 0:
        return (1.0, 1.0)
    return (y.size / (2.0 * n0), y.size / (2.0 * n1))


@dataclass
class TrainResult:
    params: ModelParams
    val_loss: float
    best_epoch: int
    epochs_run: int
    train_curve: list = field(default_factory=list)


def train(train_samples, val_samples, config: ModelConfig) -> TrainResult:
    """Fit one model; early-stops on validation loss, returns best-val params."""
    if not train_samples or not val_samples:
        raise ValueError("train and validation sample lists must be non-empty")
    # Threaded BLAS loses badly on these matrix sizes; parallelism belongs
    # at the trading-period level.
    with threadpool_limits(limits=1, user_api="blas"):
        return _train(train_samples, val_samples, config)


def _train(train_samples, val_samples, config: ModelConfig) -> TrainResult:
    d_in = train_samples[0].features.values.shape[1]
    rng = np.random.default_rng(np.random.SeedSequence([config.seed]))
    params = init_params(config, d_in, rng)

    x_train = Tensor(np.vstack([s.features.values for s in train_samples]))
    y_train = np.concatenate([s.target.values for s in train_samples]).reshape(-1, 1)
    x_val = Tensor(np.vstack([s.features.values for s in val_samples]))
    y_val = np.concatenate([s.target.values for s in val_samples]).reshape(-1, 1)
    weights = class_weights(y_train)

    stacked_train = stacked_val = None
    if config.kind != "nn":
        stacked_train = StackedGraphs([s.graph for s in train_samples],
                                      config.kind, config.use_edge_weights)
        stacked_val = StackedGraphs([s.graph for s in val_samples],
                                    config.kind, config.use_edge_weights)

    opt = ad.Adam(params.parameters(), lr=config.lr,
                  weight_decay=config.weight_decay)
    best_val = math.inf
    best_epoch = -1
    best_arrays = params.snapshot()
    epochs_run = 0
    train_curve = []
    for epoch in range(config.max_epochs):
        epochs_run = epoch + 1
        loss = ad.bce_loss(_forward(x_train, stacked_train, params),
                           y_train, weights)
        value = loss.item()
        train_curve.append(value)
        if not math.isfinite(value):
            raise TrainingDiverged(
                f"training loss became {value} at epoch {epoch}")
        loss.backward()
        opt.step()
        with ad.no_grad():
            val_loss = ad.bce_loss(_forward(x_val, stacked_val, params),
                                   y_val, weights).item()
        if not math.isfinite(val_loss):
            raise TrainingDiverged(
                f"validation loss became {val_loss} at epoch {epoch}")
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_arrays = params.snapshot()
        if epoch - best_epoch >= config.patience:
            break
    params.restore(best_arrays)
    return TrainResult(params=params, val_loss=best_val, best_epoch=best_epoch,
                       epochs_run=epochs_run, train_curve=train_curve)


def enumerate_grid(kind: str, *, lr_values=GRID_LR, hidden_values=GRID_HIDDEN,
                   layers_values=GRID_LAYERS, wd_values=GRID_WEIGHT_DECAY,
                   heads_values=GRID_HEADS, base_seed: int = 0, period: int = 0,
                   max_epochs: int = 300, patience: int = 20,
                   use_edge_weights: bool = False) -> list[ModelConfig]:
    """Grid cells in deterministic order: lr, hidden, layers, wd, heads
    (slowest to fastest). Axes a kind ignores collapse to one value; each
    cell gets a seed derived from (base_seed, period, cell index)."""
    if kind == "nn":
        layers_values, heads_values = (2,), (1,)
    elif kind == "gcn":
        heads_values = (1,)
    cells = []
    index = 0
    for lr in lr_values:
        for hidden in hidden_values:
            for layers in layers_values:
                for wd in wd_values:
                    for heads in heads_values:
                        seed = int(np.random.SeedSequence(
                            [base_seed, period, index]).generate_state(1)[0])
                        cells.append(ModelConfig(
                            kind=kind, layers=layers, hidden=hidden, heads=heads,
                            lr=lr, weight_decay=wd, seed=seed,
                            max_epochs=max_epochs, patience=patience,
                            use_edge_weights=use_edge_weights))
                        index += 1
    return cells


@dataclass
class GridSearchResult:
    config: ModelConfig
    params: ModelParams
    val_loss: float
    log: list   # (ModelConfig, val_loss or None when the cell failed)


def grid_search(train_samples, val_samples,
                grid: Sequence[ModelConfig]) -> GridSearchResult:
    """Train every cell; return the first cell attaining the minimal
    validation loss (enumeration order breaks ties)."""
    if not grid:
        raise ValueError("empty hyperparameter grid")
    best: GridSearchResult | None = None
    log = []
    for config in grid:
        try:
            result = train(train_samples, val_samples, config)
        except TrainingDiverged:
            log.append((config, None))
            continue
        log.append((config, result.val_loss))
        if best is None or result.val_loss < best.val_loss:
            best = GridSearchResult(config=config, params=result.params,
                                    val_loss=result.val_loss, log=log)
    if best is None:
        raise NumericalError("every grid cell diverged")
    best.log = log
    return best


@dataclass(frozen=True)
class AttentionSnapshot:
    """Top attention edges of the first layer for one date.

    Rows are (src ticker, dst ticker, head, alpha): the attention that the
    destination firm pays to the source firm under one head. Edges are
    ranked by head-averaged alpha; self-loops are excluded.
    """

    date: np.datetime64
    rows: tuple


def first_layer_attention(params: ModelParams, x, graph: CoverageGraph) -> list:
    """Per-head (N, N) attention matrices of the first layer."""
    if params.kind != "gat":
        raise ConfigError("attention is only defined for gat models")
    captured: list = []
    model_forward(x, graph, params, attention_out=captured)
    return captured


def extract_top_attention(params: ModelParams, sample, k: int,
                          firms: Sequence[str]) -> AttentionSnapshot:
    """The k non-self edges with the largest head-averaged first-layer
    attention, with one row per head for each selected edge."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    alphas = first_layer_attention(params, sample.features.values, sample.graph)
    mean_alpha = np.mean(alphas, axis=0)
    np.fill_diagonal(mean_alpha, 0.0)
    mask = sample.graph.neighbor_mask(self_loops=False)
    dst, src = np.nonzero(mask)
    order = sorted(range(dst.size),
                   key=lambda e: (-mean_alpha[dst[e], src[e]], dst[e], src[e]))
    rows = []
    for e in order[: min(k, dst.size)]:
        i, j = int(dst[e]), int(src[e])
        for head, alpha in enumerate(alphas):
            rows.append((firms[j], firms[i], head, float(alpha[i, j])))
    return AttentionSnapshot(date=sample.features.date, rows=tuple(rows))


def gradcheck_suite(n_instances: int = 20, seed: int = 1234,
                    rtol: float = 1e-3) -> float:
    """Finite-difference check of the full 2-layer, 2-head model on random
    small graphs; returns the worst relative error seen (must be < rtol)."""
    from .graphs import CoverageGraph as _G  # local alias for clarity

    rng = np.random.default_rng(seed)
    worst = 0.0
    with threadpool_limits(limits=1, user_api="blas"):
        worst = _gradcheck_instances(n_instances, rng)
    if worst >= rtol:
        raise NumericalError(
            f"gradient check failed: max relative error {worst:.3e} >= {rtol}")
    return worst


def _gradcheck_instances(n_instances: int, rng: np.random.Generator) -> float:
    from .graphs import CoverageGraph as _G

    worst = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(6, 13))
        d_in = 8
        edges = {}
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < 0.4:
                    edges[(i, j)] = float(rng.integers(1, 4))
        graph = _G(date=np.datetime64("2000-01-03"), n=n, edges=edges,
                   lookback_days=252)
        config = ModelConfig(kind="gat", layers=2, hidden=5, heads=2,
                             seed=int(rng.integers(0, 2 ** 31)))
        params = init_params(config, d_in, np.random.default_rng(config.seed))
        x = Tensor(rng.standard_normal((n, d_in)))
        y = (rng.random((n, 1)) < 0.5).astype(float)
        stacked = StackedGraphs([graph], "gat", False)

        def loss_fn():
            return ad.bce_loss(_forward(x, stacked, params), y, (1.0, 1.3))

        err = ad.gradient_check(loss_fn, params.parameters())
        worst = max(worst, err)
    return worst
