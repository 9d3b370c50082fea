"""Event-then-graph ranking network.

Per vertex, the newest turnover events enter as signed durations (vacant
positive, occupied negative), squashed by tanh so the sign gates the
magnitude. A 1-D convolution with bias, ReLU, and mean-pooling summarizes
them into an event embedding. Graph iterations then mix embeddings over
the symmetric-normalized adjacency, each round re-concatenating the event
embedding as a residual. A pairwise readout scores every (query, candidate)
pair and multiplies by a learnable mask that is structurally zero outside
each query's own neighborhood, so only reachable candidates can score.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, DimensionError
from .esgraph import ESGraph, EventWindow
from .ingest import SpatialGraph

SCORE_ACTIVATIONS = ("relu", "softmax")
# pre-activation fill for masked softmax entries; -inf would poison grads
MASK_FILL = -1e30


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    alpha: events read per vertex; beta: graph mixing rounds;
    conv_channels and embed_dim size the event and vertex embeddings.
    score_activation picks the final squash; sigmoid is excluded because it
    maps the masked zeros to 0.5 and breaks the structural-zero contract.
    """

    alpha: int = 2
    beta: int = 3
    conv_channels: int = 16
    embed_dim: int = 16
    kernel_len: int = 2
    score_activation: str = "relu"

    def __post_init__(self):
        if self.alpha < 1:
            raise ConfigError("alpha must be at least 1")
        if self.beta < 1:
            raise ConfigError("beta must be at least 1")
        if self.conv_channels < 1 or self.embed_dim < 1:
            raise ConfigError("embedding widths must be at least 1")
        if self.kernel_len < 1:
            raise ConfigError("kernel_len must be at least 1")
        if self.kernel_len > self.alpha:
            raise ConfigError(
                f"kernel_len {self.kernel_len} exceeds alpha {self.alpha}"
            )
        if self.score_activation not in SCORE_ACTIVATIONS:
            raise ConfigError(
                f"score_activation must be one of {SCORE_ACTIVATIONS}, "
                f"got {self.score_activation!r}"
            )


def normalized_adjacency(spatial: SpatialGraph) -> np.ndarray:
    """Symmetric normalization of adjacency plus self-loops."""
    a = spatial.adjacency_matrix().astype(np.float64)
    np.fill_diagonal(a, 1.0)
    inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def _glorot(rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=shape)


class ModelParams:
    """All learnable tensors plus the constants derived from the graph."""

    def __init__(self, config: ModelConfig, spatial: SpatialGraph, rng):
        self.config = config
        self.num_vertices = spatial.num_vertices
        self.allowed = spatial.allowed_mask()
        self.adj_norm = normalized_adjacency(spatial)
        a, d, m = config.alpha, config.embed_dim, config.conv_channels
        k = config.kernel_len

        def tensor_of(arr):
            return T.Tensor(arr, requires_grad=True)

        self._tensors: dict[str, T.Tensor] = {}
        self._tensors["conv.weight"] = tensor_of(_glorot(rng, k, m, (m, k)))
        self._tensors["conv.bias"] = tensor_of(np.zeros(m))
        self._tensors["gcn.input"] = tensor_of(_glorot(rng, 2, d, (2, d)))
        for step in range(1, config.beta + 1):
            self._tensors[f"gcn.mix.{step}"] = tensor_of(
                _glorot(rng, d, d, (d, d))
            )
            self._tensors[f"gcn.weight.{step}"] = tensor_of(
                _glorot(rng, d + m, d, (d + m, d))
            )
            self._tensors[f"gcn.bias.{step}"] = tensor_of(np.zeros(d))
        self._tensors["readout.query"] = tensor_of(
            _glorot(rng, a + 1, d, (a + 1, d))
        )
        self._tensors["readout.item"] = tensor_of(_glorot(rng, d, d, (d, d)))
        self._tensors["readout.bias"] = tensor_of(np.zeros(d))
        # mask weights live on allowed positions only; the rest stay zero
        self._tensors["mask.weights"] = tensor_of(
            self.allowed.astype(np.float64)
        )

    @property
    def named(self) -> dict[str, T.Tensor]:
        return dict(self._tensors)

    @property
    def tensors(self) -> list[T.Tensor]:
        return list(self._tensors.values())

    def get(self, name: str) -> T.Tensor:
        return self._tensors[name]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._tensors.items()}

    def restore(self, snapshot: dict[str, np.ndarray]) -> None:
        for name, arr in snapshot.items():
            self._tensors[name].data = arr.copy()

    def save(self, path, extra_manifest: dict | None = None) -> None:
        manifest = {
            "kind": "parkrank-model",
            "alpha": self.config.alpha,
            "beta": self.config.beta,
            "conv_channels": self.config.conv_channels,
            "embed_dim": self.config.embed_dim,
            "kernel_len": self.config.kernel_len,
            "score_activation": self.config.score_activation,
            "num_vertices": self.num_vertices,
            "sign_convention": "vacant=+1,occupied=-1",
        }
        if extra_manifest:
            manifest.update(extra_manifest)
        T.save_checkpoint(
            path, {k: v.data for k, v in self._tensors.items()}, manifest
        )

    @classmethod
    def load(cls, path, spatial: SpatialGraph) -> tuple["ModelParams", dict]:
        entries, manifest = T.load_checkpoint(path)
        config = ModelConfig(
            alpha=int(manifest["alpha"]),
            beta=int(manifest["beta"]),
            conv_channels=int(manifest["conv_channels"]),
            embed_dim=int(manifest["embed_dim"]),
            kernel_len=int(manifest["kernel_len"]),
            score_activation=str(manifest["score_activation"]),
        )
        if int(manifest["num_vertices"]) != spatial.num_vertices:
            raise DataError(
                f"checkpoint was trained on {manifest['num_vertices']} "
                f"vertices but the graph has {spatial.num_vertices}"
            )
        params = cls(config, spatial, np.random.default_rng(0))
        for name, t in params._tensors.items():
            if name not in entries:
                raise DataError(f"checkpoint is missing tensor {name!r}")
            if entries[name].shape != t.data.shape:
                raise DataError(
                    f"checkpoint tensor {name!r} has shape "
                    f"{entries[name].shape}, expected {t.data.shape}"
                )
            t.data = entries[name].copy()
        return params, manifest


@dataclass(frozen=True)
class ScoreMatrix:
    """Candidate scores per query row; zero outside each neighborhood."""

    values: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.values).all():
            raise DataError("scores must be finite")


def glu_gate(window: EventWindow) -> np.ndarray:
    """Squash signed event durations into (-1, 1) gates.

    The sign of the state multiplies the duration before tanh, so one
    feature per event carries both fields; padding stays exactly zero.
    """
    return np.tanh(window.signed_durations)


def _dropout(x: T.Tensor, rate: float, rng) -> T.Tensor:
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return T.mul(x, T.Tensor(keep))


def real_time_features(
    current_signed: np.ndarray, states_now: np.ndarray
) -> np.ndarray:
    """Per-vertex pair (state sign, tanh of signed current duration)."""
    sign = np.where(states_now, -1.0, 1.0)
    return np.stack([sign, np.tanh(current_signed)], axis=-1)


def forward_scores(
    params: ModelParams,
    windows: np.ndarray,
    current_signed: np.ndarray,
    states_now: np.ndarray,
    training: bool = False,
    dropout_rate: float = 0.0,
    rng=None,
) -> T.Tensor:
    """Score every (query, candidate) pair for a batch of snapshots.

    windows: [batch, vertices, alpha] signed durations;
    current_signed: [batch, vertices]; states_now: [batch, vertices] bool.
    Returns a [batch, vertices, vertices] tensor, query along axis 1.
    """
    if windows.ndim != 3:
        raise DimensionError(
            f"forward_scores: windows must be 3-D, got {windows.shape}"
        )
    cfg = params.config
    n = params.num_vertices
    if windows.shape[1] != n or windows.shape[2] != cfg.alpha:
        raise DimensionError(
            f"forward_scores: windows {windows.shape} do not match "
            f"{n} vertices and alpha {cfg.alpha}"
        )
    batch = windows.shape[0]
    use_dropout = training and dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ConfigError("dropout during training needs an rng")

    gated = np.tanh(windows)
    rt = real_time_features(current_signed, states_now)
    query_feat = np.concatenate([gated, np.tanh(current_signed)[..., None]], -1)

    # events -> per-vertex embedding
    conv = T.conv1d(T.Tensor(gated), params.get("conv.weight"))
    conv = T.add(
        conv, T.reshape(params.get("conv.bias"), (1, 1, cfg.conv_channels, 1))
    )
    h = T.reduce_mean(T.relu(conv), axis=-1)
    if use_dropout:
        h = _dropout(h, dropout_rate, rng)

    # graph rounds over normalized adjacency with event-embedding residual
    z = T.matmul(T.Tensor(rt), params.get("gcn.input"))
    for step in range(1, cfg.beta + 1):
        mixed = T.matmul(
            T.neighbor_mix(params.adj_norm, z), params.get(f"gcn.mix.{step}")
        )
        stacked = T.concat([mixed, h], axis=-1)
        z = T.relu(
            T.add(
                T.matmul(stacked, params.get(f"gcn.weight.{step}")),
                params.get(f"gcn.bias.{step}"),
            )
        )
        if use_dropout:
            z = _dropout(z, dropout_rate, rng)

    # pairwise readout: query features against candidate embeddings
    q = T.matmul(T.Tensor(query_feat), params.get("readout.query"))
    item = T.matmul(z, params.get("readout.item"))
    pair = T.add(
        T.reshape(q, (batch, n, 1, cfg.embed_dim)),
        T.reshape(item, (batch, 1, n, cfg.embed_dim)),
    )
    pair = T.relu(T.add(pair, params.get("readout.bias")))
    raw = T.reduce_sum(pair, axis=-1)

    mask = T.mul(
        params.get("mask.weights"),
        T.Tensor(params.allowed.astype(np.float64)),
    )
    pre = T.mul(raw, mask)
    if cfg.score_activation == "relu":
        return T.relu(pre)
    pre = T.masked_fill(pre, ~params.allowed, MASK_FILL)
    return T.softmax(pre, axis=-1)


def event_aggregate(gated: np.ndarray, params: ModelParams) -> np.ndarray:
    """Per-vertex event embedding from gated features: conv, bias, ReLU,
    mean-pool over positions."""
    conv = T.conv1d(T.Tensor(gated[np.newaxis]), params.get("conv.weight"))
    conv = T.add(
        conv,
        T.reshape(
            params.get("conv.bias"), (1, 1, params.config.conv_channels, 1)
        ),
    )
    return T.reduce_mean(T.relu(conv), axis=-1).data[0]


def gcn_update(
    h: np.ndarray,
    real_time: np.ndarray,
    spatial: SpatialGraph,
    params: ModelParams,
) -> np.ndarray:
    """Vertex embeddings after the configured graph rounds."""
    adj = normalized_adjacency(spatial)
    z = T.matmul(T.Tensor(real_time[np.newaxis]), params.get("gcn.input"))
    h_t = T.Tensor(h[np.newaxis])
    for step in range(1, params.config.beta + 1):
        mixed = T.matmul(
            T.neighbor_mix(adj, z), params.get(f"gcn.mix.{step}")
        )
        z = T.relu(
            T.add(
                T.matmul(
                    T.concat([mixed, h_t], axis=-1),
                    params.get(f"gcn.weight.{step}"),
                ),
                params.get(f"gcn.bias.{step}"),
            )
        )
    return z.data[0]


def score_queries(
    graph: ESGraph, window: EventWindow, params: ModelParams
) -> ScoreMatrix:
    """Full score matrix for one snapshot."""
    if window.num_vertices != graph.num_vertices:
        raise DataError("window and graph disagree on vertex count")
    scores = forward_scores(
        params,
        window.signed_durations[np.newaxis],
        window.current_signed_duration[np.newaxis],
        np.asarray(graph.real_time_state, dtype=bool)[np.newaxis],
    )
    return ScoreMatrix(values=scores.data[0])


def rank_candidates(
    scores_row: np.ndarray, hops_row: np.ndarray
) -> np.ndarray:
    """Order candidates by score descending, ties by hop then by index."""
    n = scores_row.shape[0]
    return np.lexsort((np.arange(n), hops_row, -scores_row))


def recommend_top_n(
    scores_row: np.ndarray, query: int, spatial: SpatialGraph, n: int
) -> list[int]:
    """Top n candidate indices for one query row.

    Ties break toward fewer hops from the query, then lower index; n is
    truncated to the number of vertices.
    """
    if n < 1:
        raise ConfigError("n must be at least 1")
    scores_row = np.asarray(scores_row, dtype=np.float64)
    if scores_row.shape != (spatial.num_vertices,):
        raise DimensionError(
            f"recommend_top_n: row has shape {scores_row.shape}, expected "
            f"({spatial.num_vertices},)"
        )
    order = rank_candidates(scores_row, spatial.hop_distances(query))
    return [int(i) for i in order[: min(n, spatial.num_vertices)]]
