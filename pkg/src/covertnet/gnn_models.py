"""Graph convolution and attention layers, the model zoo, and standalone training."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import AdjacencyPolicy, Dataset, GraphSample, SplitSpec, message_passing_adjacency
from .errors import InvalidInputError
from .geometry import pairwise_distances
from .metrics import mae, medae
from .oracle import RadiusAssignment, RadiusSource
from .tensor_core import (
    OptimizerConfig,
    ParamSet,
    Tensor,
    backward,
    identity,
    init_optimizer_state,
    leaves,
    mae_loss,
    masked_softmax,
    matmul,
    optimizer_state_from_json,
    optimizer_state_to_json,
    optimizer_step,
    relu,
)

HIDDEN = 64
ACTIVATIONS = {"relu": relu, "identity": identity}


class LayerKind(str, enum.Enum):
    GCN = "gcn"
    GAT = "gat"
    DENSE = "dense"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if self.in_dim < 1 or self.out_dim < 1:
            raise InvalidInputError("layer dims must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        layers = tuple(l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise InvalidInputError("a model needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise InvalidInputError(f"{self.name}: {a.out_dim} -> {b.in_dim} does not chain")
        if layers[-1].out_dim != 1:
            raise InvalidInputError(f"{self.name}: final layer must emit one value per node")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def uses_message_passing(self) -> bool:
        return any(l.kind is not LayerKind.DENSE for l in self.layers)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "layers": [
                {"kind": l.kind.value, "in_dim": l.in_dim, "out_dim": l.out_dim, "activation": l.activation}
                for l in self.layers
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelSpec":
        return cls(obj["name"], tuple(LayerSpec(**l) for l in obj["layers"]))


def _stack(name: str, kinds: list[str], in_dim: int = 2, hidden: int = HIDDEN) -> ModelSpec:
    dims = [in_dim] + [hidden] * len(kinds)
    layers = [LayerSpec(k, dims[i], dims[i + 1], "relu") for i, k in enumerate(kinds)]
    layers.append(LayerSpec("dense", hidden, 1, "identity"))
    return ModelSpec(name, tuple(layers))


def model_zoo() -> dict[str, ModelSpec]:
    """Architectures compared in the experiments, keyed by name."""
    return {
        "mlp": _stack("mlp", ["dense", "dense"]),
        "gcn1": _stack("gcn1", ["gcn"]),
        "gcn2": _stack("gcn2", ["gcn", "gcn"]),
        "gcn3": _stack("gcn3", ["gcn", "gcn", "gcn"]),
        "hybrid": _stack("hybrid", ["gcn", "gat"]),
    }


def get_model(name: str) -> ModelSpec:
    zoo = model_zoo()
    if name not in zoo:
        raise InvalidInputError(f"unknown model {name!r}; choose from {sorted(zoo)}")
    return zoo[name]


def init_params(spec: ModelSpec, seed: int) -> ParamSet:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = ParamSet()
    for i, layer in enumerate(spec.layers):
        bound = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
        params[f"layer{i}.weight"] = rng.uniform(-bound, bound, size=(layer.in_dim, layer.out_dim))
        params[f"layer{i}.bias"] = np.zeros(layer.out_dim)
    return params


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------


def normalised_adjacency(adjacency: np.ndarray, edge_weights: np.ndarray | None = None) -> np.ndarray:
    """Propagation matrix a_ij / sqrt(deg_i deg_j).

    Degrees count the binary structure (self-loops included). Without
    ``edge_weights`` every a_ij is 1 and this is D^-1/2 A D^-1/2.
    """
    a = np.asarray(adjacency, dtype=bool)
    deg = a.sum(axis=-1).astype(np.float64)
    if np.any(deg == 0):
        raise InvalidInputError("every node needs at least a self-loop")
    inv = 1.0 / np.sqrt(deg)
    w = a.astype(np.float64) if edge_weights is None else np.where(a, edge_weights, 0.0)
    return w * inv[..., :, None] * inv[..., None, :]


def _check_adjacency(adjacency: np.ndarray) -> np.ndarray:
    adj = np.asarray(adjacency, dtype=bool)
    if adj.shape[-1] != adj.shape[-2] or not np.array_equal(adj, np.swapaxes(adj, -1, -2)):
        raise InvalidInputError("adjacency must be square and symmetric")
    return adj


def _message(H: Tensor, W: Tensor, bias) -> Tensor:
    # the bias belongs to the per-neighbour transform, so it is aggregated too
    m = matmul(H, W)
    return m if bias is None else m + bias


def gcn_forward(
    H, W, adjacency, bias=None, activation: str = "relu", edge_weights=None, norm_adj=None
) -> Tensor:
    """h_i' = act(sum_j a_ij / c_ij (W h_j + b)), c_ij = sqrt(deg_i deg_j)."""
    H, W = _t(H), _t(W)
    if H.shape[-1] != W.shape[0]:
        raise InvalidInputError(f"gcn: features {H.shape} vs weight {W.shape}")
    if norm_adj is None:
        adj = _check_adjacency(adjacency)
        if adj.shape[-1] != H.shape[-2]:
            raise InvalidInputError("gcn: adjacency and feature rows differ")
        norm_adj = normalised_adjacency(adj, edge_weights)
    return ACTIVATIONS[activation](matmul(Tensor(norm_adj), _message(H, W, bias)))


def attention_weights(H, adjacency) -> Tensor:
    """Row-wise softmax of dot-product scores h_i . h_j over each neighbourhood."""
    H = _t(H)
    adj = _check_adjacency(adjacency)
    return masked_softmax(matmul(H, H.T), adj)


def gat_forward(H, W, adjacency, bias=None, activation: str = "relu", edge_weights=None) -> Tensor:
    """h_i' = act(sum_j alpha_ij a_ij (W h_j + b)), alpha = neighbourhood softmax of h_i . h_j."""
    H, W = _t(H), _t(W)
    if H.shape[-1] != W.shape[0]:
        raise InvalidInputError(f"gat: features {H.shape} vs weight {W.shape}")
    adj = _check_adjacency(adjacency)
    if adj.shape[-1] != H.shape[-2]:
        raise InvalidInputError("gat: adjacency and feature rows differ")
    alpha = attention_weights(H, adj)
    if edge_weights is not None:
        alpha = alpha * np.where(adj, edge_weights, 0.0)
    return ACTIVATIONS[activation](matmul(alpha, _message(H, W, bias)))


def dense_forward(H, W, bias=None, activation: str = "relu") -> Tensor:
    H, W = _t(H), _t(W)
    if H.shape[-1] != W.shape[0]:
        raise InvalidInputError(f"dense: features {H.shape} vs weight {W.shape}")
    return ACTIVATIONS[activation](_message(H, W, bias))


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# graph encoding and batching
# --------------------------------------------------------------------------


class EdgeWeighting(str, enum.Enum):
    NONE = "none"
    LENGTH = "length"


@dataclass(frozen=True)
class GraphEncoding:
    """How a sample becomes model input.

    ``adjacency_policy`` None keeps each sample's stored message-passing
    graph. With ``edge_weighting="length"`` every message-passing edge
    carries its link length divided by ``scale`` and self-loops carry
    ``self_loop_weight``; ``"none"`` gives unit weights. Model outputs are
    multiplied by ``scale`` so radii come out in meters.
    """

    adjacency_policy: str | None = "mst"
    edge_weighting: str = "length"
    self_loop_weight: float = 0.5
    scale: float | None = None

    def __post_init__(self):
        if self.adjacency_policy is not None:
            AdjacencyPolicy(self.adjacency_policy)
        EdgeWeighting(self.edge_weighting)
        if not self.self_loop_weight > 0:
            raise InvalidInputError("self_loop_weight must be > 0")
        if self.scale is not None and not self.scale > 0:
            raise InvalidInputError("scale must be > 0")

    def resolve(self, area_bounds) -> "GraphEncoding":
        """Fill an unset scale from the dataset's area (its longer side)."""
        if self.scale is not None:
            return self
        return replace(self, scale=float(max(area_bounds)))

    def to_json(self) -> dict:
        return asdict(self)


PLAIN_ENCODING = GraphEncoding(adjacency_policy=None, edge_weighting="none", self_loop_weight=1.0, scale=1.0)


def edge_weights(sample: GraphSample, adjacency: np.ndarray, encoding: GraphEncoding) -> np.ndarray | None:
    if EdgeWeighting(encoding.edge_weighting) is EdgeWeighting.NONE:
        return None
    w = np.where(adjacency, pairwise_distances(sample.topology) / encoding.scale, 0.0)
    np.fill_diagonal(w, encoding.self_loop_weight)
    return w


@dataclass
class Batch:
    """Samples sharing one node count, stacked along a leading axis."""

    ids: list[int]
    features: np.ndarray  # (B, N, F)
    adjacency: np.ndarray  # (B, N, N) bool
    weights: np.ndarray | None  # (B, N, N) edge weights, None for unit weights
    norm_adj: np.ndarray  # (B, N, N)
    labels: np.ndarray | None  # (B, N, 1)
    loss_weights: np.ndarray  # (B, N, 1), summing to 1 over all batches
    scale: float = 1.0


def encode_sample(sample: GraphSample, encoding: GraphEncoding):
    if encoding.scale is None:
        raise InvalidInputError("resolve the encoding scale before encoding samples")
    if encoding.adjacency_policy is None:
        adj = sample.mp_adjacency
    else:
        adj = message_passing_adjacency(sample.topology, encoding.adjacency_policy)
    return adj, edge_weights(sample, adj, encoding)


def collate(samples: list[GraphSample], encoding: GraphEncoding = PLAIN_ENCODING) -> list[Batch]:
    """Group samples by node count. Loss weights make the total loss the mean of per-sample MAEs."""
    if not samples:
        raise InvalidInputError("nothing to collate")
    groups: dict[int, list[GraphSample]] = {}
    for s in samples:
        groups.setdefault(s.n, []).append(s)
    total = len(samples)
    batches = []
    for n in sorted(groups):
        group = groups[n]
        encoded = [encode_sample(s, encoding) for s in group]
        adj = np.stack([a for a, _ in encoded])
        weights = None if encoded[0][1] is None else np.stack([w for _, w in encoded])
        labels = None
        if all(s.labels is not None for s in group):
            labels = np.stack([s.label_array for s in group])[..., None]
        batches.append(
            Batch(
                ids=[s.id for s in group],
                features=np.stack([s.features for s in group]),
                adjacency=adj,
                weights=weights,
                norm_adj=normalised_adjacency(adj, weights),
                labels=labels,
                loss_weights=np.full((len(group), n, 1), 1.0 / (total * n)),
                scale=encoding.scale,
            )
        )
    return batches


def forward_tensor(
    spec: ModelSpec, params: dict, features, adjacency, weights=None, norm_adj=None, scale: float = 1.0
) -> Tensor:
    """Run the stack on (..., N, F) features; returns (..., N, 1) predictions times ``scale``."""
    h = _t(features)
    if h.shape[-1] != spec.in_dim:
        raise InvalidInputError(f"{spec.name} expects {spec.in_dim} features, got {h.shape[-1]}")
    for i, layer in enumerate(spec.layers):
        try:
            W, b = params[f"layer{i}.weight"], params[f"layer{i}.bias"]
        except KeyError as exc:
            raise InvalidInputError(f"params missing {exc.args[0]} for {spec.name}") from None
        if tuple(np.shape(_t(W).data)) != (layer.in_dim, layer.out_dim):
            raise InvalidInputError(f"layer{i}.weight has shape {np.shape(_t(W).data)}")
        if layer.kind is LayerKind.GCN:
            if norm_adj is None:
                norm_adj = normalised_adjacency(_check_adjacency(adjacency), weights)
            h = gcn_forward(h, W, None, b, layer.activation, norm_adj=norm_adj)
        elif layer.kind is LayerKind.GAT:
            h = gat_forward(h, W, adjacency, b, layer.activation, edge_weights=weights)
        else:
            h = dense_forward(h, W, b, layer.activation)
    return h * scale if scale != 1.0 else h


def _run_batch(spec, params, b: Batch) -> Tensor:
    return forward_tensor(spec, params, b.features, b.adjacency, b.weights, b.norm_adj, b.scale)


def model_forward(
    spec: ModelSpec, params: ParamSet, sample: GraphSample, encoding: GraphEncoding = PLAIN_ENCODING
) -> RadiusAssignment:
    """Per-node radius predictions (unconstrained reals) for one sample."""
    adj, weights = encode_sample(sample, encoding)
    out = forward_tensor(spec, params, sample.features, adj, weights, scale=encoding.scale)
    return RadiusAssignment(tuple(out.data[:, 0]), RadiusSource.MODEL_PREDICTION)


def predict(spec: ModelSpec, params: ParamSet, batches: list[Batch]) -> dict[int, np.ndarray]:
    out = {}
    for b in batches:
        y = _run_batch(spec, params, b).data[..., 0]
        for sid, row in zip(b.ids, y):
            out[sid] = row
    return out


def batch_loss(spec: ModelSpec, params: dict, batches: list[Batch]) -> Tensor:
    total = None
    for b in batches:
        if b.labels is None:
            raise InvalidInputError("training needs labeled samples")
        term = mae_loss(_run_batch(spec, params, b), b.labels, b.loss_weights)
        total = term if total is None else total + term
    return total


def pooled_errors(spec: ModelSpec, params: ParamSet, batches: list[Batch]) -> tuple[float, float]:
    preds, labels = [], []
    for b in batches:
        preds.append(_run_batch(spec, params, b).data.reshape(-1))
        labels.append(b.labels.reshape(-1))
    p, t = np.concatenate(preds), np.concatenate(labels)
    return mae(p, t), medae(p, t)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 1e-2
    seed: int = 0
    optimizer: str = "adam"
    encoding: GraphEncoding = field(default_factory=GraphEncoding)

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidInputError("epochs must be >= 0")
        if self.learning_rate < 0:
            raise InvalidInputError("learning_rate must be >= 0")
        if isinstance(self.encoding, dict):
            object.__setattr__(self, "encoding", GraphEncoding(**self.encoding))

    @property
    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(kind=self.optimizer, learning_rate=self.learning_rate)

    def to_json(self) -> dict:
        return asdict(self)


def run_epochs(
    spec: ModelSpec,
    params: ParamSet,
    batches: list[Batch],
    opt: OptimizerConfig,
    state: dict | None,
    epochs: int,
    on_epoch=None,
):
    """Full-batch MAE descent. Returns ``(params, optimizer_state)``."""
    state = state if state else init_optimizer_state(params)
    for epoch in range(1, epochs + 1):
        lv = leaves(params)
        loss = batch_loss(spec, lv, batches)
        grads = backward(loss, lv)
        params, state = optimizer_step(params, grads, state, opt)
        if on_epoch is not None:
            on_epoch(epoch, float(loss.data), params)
    return params, state


@dataclass
class TrainResult:
    params: ParamSet
    curve: list[dict] = field(default_factory=list)
    optimizer_state: dict = field(default_factory=dict)
    encoding: GraphEncoding | None = None


def train_standalone(
    spec: ModelSpec,
    dataset: Dataset,
    split: SplitSpec,
    config: TrainConfig,
    record_every: int = 1,
) -> TrainResult:
    """Train on the split's train ids; curve rows hold metrics after each recorded epoch."""
    if not dataset.is_labeled:
        raise InvalidInputError("train_standalone needs a labeled dataset")
    if not split.train_ids:
        raise InvalidInputError("empty train split")
    encoding = config.encoding.resolve(dataset.area_bounds)
    train = collate(dataset.subset(split.train_ids), encoding)
    test = collate(dataset.subset(split.test_ids), encoding) if split.test_ids else []
    params = init_params(spec, config.seed)
    curve: list[dict] = []

    def record(epoch, loss, p):
        if epoch % record_every and epoch != config.epochs:
            return
        row = {"epoch": epoch, "train_loss": loss}
        row["train_mae"], row["train_medae"] = pooled_errors(spec, p, train)
        if test:
            row["test_mae"], row["test_medae"] = pooled_errors(spec, p, test)
        curve.append(row)

    params, state = run_epochs(spec, params, train, config.optimizer_config, None, config.epochs, record)
    return TrainResult(params, curve, state, encoding)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(
    path,
    spec: ModelSpec,
    params: ParamSet,
    encoding: GraphEncoding,
    optimizer_state=None,
    config: dict | None = None,
):
    doc = {
        "format": "covertnet-checkpoint",
        "schema_version": 1,
        "model_spec": spec.to_json(),
        "encoding": encoding.to_json(),
        "params": params.to_json(),
        "optimizer_state": optimizer_state_to_json(optimizer_state or {}),
        "config": config or {},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: ParamSet
    encoding: GraphEncoding
    optimizer_state: dict
    config: dict


def load_checkpoint(path) -> Checkpoint:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "covertnet-checkpoint":
        raise InvalidInputError(f"{path} is not a checkpoint")
    spec = ModelSpec.from_json(doc["model_spec"])
    loaded = ParamSet.from_json(doc["params"])
    template = init_params(spec, 0)
    if set(loaded) != set(template):
        raise InvalidInputError(f"{path}: parameters {sorted(loaded)} do not match the model")
    # JSON keys are sorted on disk; restore layer order
    params = ParamSet((k, loaded[k]) for k in template)
    params.check_congruent(template)
    state = optimizer_state_from_json(doc.get("optimizer_state", {}))
    for key in ("m", "v"):
        if key in state:
            state[key] = ParamSet((k, state[key][k]) for k in template)
    return Checkpoint(spec, params, GraphEncoding(**doc["encoding"]), state, doc.get("config", {}))
