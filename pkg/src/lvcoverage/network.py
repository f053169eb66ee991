"""The discriminative 3D CNN: architecture, passes, training, serialization.

Triplet blocks enter as ``(H, W, D)`` arrays (or ``(N, H, W, D)`` batches) and
are rearranged internally to the kernel layout ``(N, D, H, W, C)``. The
network body is a conv/pool feature stack followed by dense layers; a 1-unit
sigmoid head is always appended after the last dense layer, and the layer
flagged by ``fisher_index`` feeds the scatter penalty during training.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensorfile
from .errors import (
    DimensionError,
    ModelIOError,
    ParameterError,
    StatisticsError,
    TrainingDiverged,
)
from .fisher import (
    ScatterReport,
    bce_loss,
    fisher_grad,
    objective_components,
    scatter_traces,
)
from .tensorops import (
    conv3d_backward,
    conv3d_forward,
    conv3d_out_shape,
    dense_backward,
    dense_forward,
    dropout_mask,
    maxpool3d_backward,
    maxpool3d_forward,
    relu,
    relu_backward,
    sigmoid,
)

WEIGHT_INIT_SIGMA = 0.01  # Gaussian init scale for every trainable weight


# ---------------------------------------------------------------------------
# Architecture specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: tuple[int, int, int]           # (d, h, w) extents
    stride: tuple[int, int, int] = (1, 1, 1)


@dataclass(frozen=True)
class PoolSpec:
    window: tuple[int, int, int]
    stride: tuple[int, int, int]


@dataclass(frozen=True)
class DenseSpec:
    units: int
    activation: str = "relu"               # "relu" or "linear"


@dataclass(frozen=True)
class NetworkArch:
    """Ordered layer plan. The sigmoid output head (units=1) is implicit."""

    input_hwd: tuple[int, int, int]
    features: tuple                        # ConvSpec / PoolSpec sequence
    dense: tuple                           # DenseSpec sequence (head excluded)
    fisher_index: int | None               # dense index whose output is penalized
    name: str = "custom"

    def __post_init__(self):
        if self.fisher_index is not None and not (
            0 <= self.fisher_index < len(self.dense)
        ):
            raise ParameterError(f"fisher_index {self.fisher_index} out of range")
        for spec in self.dense:
            if spec.activation not in ("relu", "linear"):
                raise ParameterError(f"unknown activation {spec.activation!r}")

    def feature_shapes(self):
        """Per-layer ``(D, H, W, C)`` shapes through the conv/pool stack."""
        h, w, d = self.input_hwd
        shape = (d, h, w, 1)
        shapes = [shape]
        for spec in self.features:
            if isinstance(spec, ConvSpec):
                out = conv3d_out_shape(shape[:3], spec.kernel, spec.stride)
                shape = out + (spec.out_channels,)
            else:
                out = conv3d_out_shape(shape[:3], spec.window, spec.stride)
                shape = out + (shape[3],)
            shapes.append(shape)
        return shapes

    def flat_units(self) -> int:
        return int(np.prod(self.feature_shapes()[-1]))

    def layer_table(self):
        """(name, display) rows in the paper's H x W x D convention."""
        rows = []
        shapes = self.feature_shapes()
        rows.append(("input", _display(shapes[0])))
        ci = mi = 0
        for spec, shape in zip(self.features, shapes[1:]):
            if isinstance(spec, ConvSpec):
                ci += 1
                rows.append((f"C{ci}", _display(shape)))
            else:
                mi += 1
                rows.append((f"M{mi}", _display(shape)))
        for i, spec in enumerate(self.dense):
            rows.append((f"F{i + 1}", f"1x1x1 x{spec.units}"))
        rows.append(("head", "1x1x1 x1"))
        return rows


def _display(shape) -> str:
    d, h, w, c = shape
    return f"{h}x{w}x{d} x{c}"


def table1_arch() -> NetworkArch:
    """The full-size production architecture (120x120x3 triplets)."""
    return NetworkArch(
        input_hwd=(120, 120, 3),
        features=(
            ConvSpec(16, (2, 7, 7)),
            PoolSpec((1, 2, 2), (1, 2, 2)),
            ConvSpec(16, (2, 13, 13)),
            PoolSpec((1, 3, 3), (1, 3, 3)),
            ConvSpec(64, (1, 10, 10)),
            PoolSpec((1, 2, 2), (1, 2, 2)),
        ),
        dense=(DenseSpec(256, "relu"), DenseSpec(4, "linear")),
        fisher_index=1,
        name="table1",
    )


def phantom_arch() -> NetworkArch:
    """Reduced-width variant for desk-scale phantom experiments.

    Same layer structure, kernel sizes and strides as the full architecture;
    only channel counts and the F1 width shrink, and the 4-unit penalized
    layer is preserved.
    """
    return NetworkArch(
        input_hwd=(120, 120, 3),
        features=(
            ConvSpec(4, (2, 7, 7)),
            PoolSpec((1, 2, 2), (1, 2, 2)),
            ConvSpec(4, (2, 13, 13)),
            PoolSpec((1, 3, 3), (1, 3, 3)),
            ConvSpec(8, (1, 10, 10)),
            PoolSpec((1, 2, 2), (1, 2, 2)),
        ),
        dense=(DenseSpec(32, "relu"), DenseSpec(4, "linear")),
        fisher_index=1,
        name="phantom",
    )


def tiny_arch() -> NetworkArch:
    """Miniature net used by the finite-difference harness."""
    return NetworkArch(
        input_hwd=(8, 8, 3),
        features=(
            ConvSpec(2, (2, 3, 3)),
            PoolSpec((1, 2, 2), (1, 2, 2)),
        ),
        dense=(DenseSpec(8, "relu"), DenseSpec(4, "linear")),
        fisher_index=1,
        name="tiny",
    )


def plain_fc_variant(arch: NetworkArch) -> NetworkArch:
    """Swap the penalized 4-unit layer for a plain 256-unit ReLU layer."""
    dense = arch.dense[:-1] + (DenseSpec(256, "relu"),)
    return replace(arch, dense=dense, fisher_index=None, name=arch.name + "-plainfc")


ARCH_FACTORIES = {
    "table1": table1_arch,
    "phantom": phantom_arch,
    "tiny": tiny_arch,
}


def make_arch(name: str) -> NetworkArch:
    base, _, variant = name.partition("+")
    try:
        arch = ARCH_FACTORIES[base]()
    except KeyError:
        raise ParameterError(f"unknown architecture {name!r}")
    if variant == "plainfc":
        arch = plain_fc_variant(arch)
    elif variant:
        raise ParameterError(f"unknown architecture variant {variant!r}")
    return arch


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class ModelParams:
    """All weights/biases plus optimizer state and training metadata.

    ``weights``/``biases`` are ordered conv layers first, then dense layers,
    then the output head. ``velocities`` mirrors ``weights``+``biases`` and is
    only populated once training starts.
    """

    arch: NetworkArch
    seed: int
    weights: list
    biases: list
    velocities: list | None = None
    epochs_trained: int = 0
    trace: list = field(default_factory=list)

    @property
    def dtype(self):
        return self.weights[0].dtype

    def layer_names(self):
        names = [f"c{i + 1}" for i in range(_num_convs(self.arch))]
        names += [f"f{i + 1}" for i in range(len(self.arch.dense))]
        names.append("head")
        return names

    def copy(self) -> "ModelParams":
        return ModelParams(
            arch=self.arch,
            seed=self.seed,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            velocities=None if self.velocities is None
            else [v.copy() for v in self.velocities],
            epochs_trained=self.epochs_trained,
            trace=list(self.trace),
        )

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.weights + self.biases)


def _num_convs(arch: NetworkArch) -> int:
    return sum(1 for s in arch.features if isinstance(s, ConvSpec))


def init_params(arch: NetworkArch, seed: int, dtype=np.float32,
                scheme: str = "paper") -> ModelParams:
    """Random weights, zero biases, deterministic in the seed.

    ``scheme="paper"`` draws every weight from Gaussian(0, 0.01). That scale
    leaves this depth of network with ~1e-8 logits on unit-scale inputs and
    immeasurably small gradients at desk scale, so the training loop defaults
    to ``scheme="fanin"``: Gaussian(0, 0.5/sqrt(fan_in)) per layer, which
    keeps activations and gradients usable at the pinned learning rate.
    """
    rng = np.random.default_rng(seed)
    dtype = np.dtype(dtype)
    if scheme not in ("paper", "fanin"):
        raise ParameterError(f"unknown init scheme {scheme!r}")

    def sigma(shape):
        if scheme == "paper":
            return WEIGHT_INIT_SIGMA
        return 0.5 / math.sqrt(np.prod(shape[1:]))

    weights, biases = [], []
    in_ch = 1
    for spec in arch.features:
        if isinstance(spec, ConvSpec):
            shape = (spec.out_channels, in_ch) + spec.kernel
            weights.append((rng.standard_normal(shape) * sigma(shape)).astype(dtype))
            biases.append(np.zeros(spec.out_channels, dtype=dtype))
            in_ch = spec.out_channels
    width = arch.flat_units()
    for spec in arch.dense + (DenseSpec(1, "linear"),):
        shape = (spec.units, width)
        weights.append((rng.standard_normal(shape) * sigma(shape)).astype(dtype))
        biases.append(np.zeros(spec.units, dtype=dtype))
        width = spec.units
    return ModelParams(arch=arch, seed=seed, weights=weights, biases=biases)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

@dataclass
class ForwardTrace:
    """Everything backward needs: inputs, pre-activations, pool maps, masks."""

    x0: np.ndarray                 # (N, D, H, W, 1) network input
    feature_inputs: list           # input to each feature layer
    conv_pre: dict                 # feature layer index -> pre-activation
    pool_maps: dict                # feature layer index -> argmax map
    flat: np.ndarray               # (N, flat_units)
    dense_inputs: list             # input to each dense layer (incl. head)
    dense_pre: list                # pre-activation per dense layer (incl. head)
    drop_mask: np.ndarray | None   # mask applied after F1 (train mode only)
    fisher_features: np.ndarray | None
    logits: np.ndarray             # (N,)
    probs: np.ndarray              # (N,)
    train_mode: bool


def _blocks_to_network_layout(x: np.ndarray, arch: NetworkArch):
    """(N?, H, W, D) triplet blocks -> (N, D, H, W, 1), remembers batchness.

    Blocks are standardized per sample (zero mean, unit spread, with an
    epsilon floor so an all-constant block maps to zeros): the raw intensity
    offset carries no class information and would otherwise dominate every
    convolution response.
    """
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    expect = arch.input_hwd
    if x.ndim != 4 or x.shape[1:] != expect:
        raise DimensionError(
            f"triplet block must be shaped {expect[0]}x{expect[1]}x{expect[2]}, "
            f"got {tuple(x.shape[1:] if x.ndim == 4 else x.shape)}"
        )
    x = x.astype(np.float64, copy=False)
    mu = x.mean(axis=(1, 2, 3), keepdims=True)
    sd = np.maximum(x.std(axis=(1, 2, 3), keepdims=True), 1e-6)
    x = (x - mu) / sd
    return np.transpose(x, (0, 3, 1, 2))[..., None], single


def forward(params: ModelParams, x: np.ndarray, train: bool = False,
            rng: np.random.Generator | None = None,
            dropout_rate: float = 0.0) -> ForwardTrace:
    """Run the network; returns the full activation trace.

    ``x`` is one triplet block or a batch of them. Dropout is applied after
    the first dense layer in train mode only and needs ``rng``.
    """
    arch = params.arch
    xs, _ = _blocks_to_network_layout(x, arch)
    xs = xs.astype(params.dtype, copy=False)
    n = xs.shape[0]

    feature_inputs, conv_pre, pool_maps = [], {}, {}
    cur = xs
    wi = 0
    for li, spec in enumerate(arch.features):
        feature_inputs.append(cur)
        if isinstance(spec, ConvSpec):
            pre = conv3d_forward(cur, params.weights[wi], params.biases[wi], spec.stride)
            conv_pre[li] = pre
            cur = relu(pre)
            wi += 1
        else:
            cur, argmap = maxpool3d_forward(cur, spec.window, spec.stride)
            pool_maps[li] = argmap

    flat = cur.reshape(n, -1)
    dense_inputs, dense_pre = [], []
    drop_mask = None
    fisher_features = None
    cur = flat
    for di, spec in enumerate(arch.dense):
        dense_inputs.append(cur)
        z = dense_forward(cur, params.weights[wi], params.biases[wi])
        dense_pre.append(z)
        wi += 1
        cur = relu(z) if spec.activation == "relu" else z
        if di == 0 and train and dropout_rate > 0:
            if rng is None:
                raise ParameterError("train-mode forward with dropout needs an rng")
            drop_mask = dropout_mask(cur.shape, dropout_rate, rng, dtype=params.dtype)
            cur = cur * drop_mask
        if di == arch.fisher_index:
            fisher_features = cur

    dense_inputs.append(cur)
    z = dense_forward(cur, params.weights[wi], params.biases[wi])
    dense_pre.append(z)
    logits = z[:, 0]
    probs = sigmoid(logits)

    return ForwardTrace(
        x0=xs, feature_inputs=feature_inputs, conv_pre=conv_pre,
        pool_maps=pool_maps, flat=flat, dense_inputs=dense_inputs,
        dense_pre=dense_pre, drop_mask=drop_mask,
        fisher_features=fisher_features, logits=logits, probs=probs,
        train_mode=train,
    )


def batch_objective(params: ModelParams, trace: ForwardTrace, y: np.ndarray,
                    lam: float, eta: float):
    """(J*, ScatterReport|None) for one forward trace."""
    report = None
    if trace.fisher_features is not None:
        report = scatter_traces(trace.fisher_features, y)
    losses = bce_loss(trace.probs, y)
    comps = objective_components(losses, params.weights, lam, eta, report)
    return float(sum(comps)), report


def backward(params: ModelParams, trace: ForwardTrace, y: np.ndarray,
             lam: float, eta: float, report: ScatterReport | None = None):
    """Gradients of the composite objective for every weight and bias.

    The data term enters at the output head as (a - y)/n; the scatter penalty
    enters at the flagged dense layer as eta * (F_j - m_group); the L2 term
    adds lam * W to every weight gradient.
    """
    arch = params.arch
    y = np.asarray(y)
    n = trace.probs.shape[0]
    if report is None and trace.fisher_features is not None and eta != 0:
        report = scatter_traces(trace.fisher_features, y)

    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.biases)
    n_convs = _num_convs(arch)

    dlogit = ((trace.probs - y.astype(trace.probs.dtype)) / n).astype(params.dtype)
    g = dlogit[:, None]
    wi = len(params.weights) - 1
    g, grad_w[wi], grad_b[wi] = dense_backward(g, trace.dense_inputs[-1], params.weights[wi])

    for di in range(len(arch.dense) - 1, -1, -1):
        wi -= 1
        if di == arch.fisher_index and eta != 0:
            g = g + eta * fisher_grad(trace.fisher_features, y, report).astype(params.dtype)
        if di == 0 and trace.drop_mask is not None:
            g = g * trace.drop_mask
        if arch.dense[di].activation == "relu":
            g = relu_backward(g, trace.dense_pre[di])
        g, grad_w[wi], grad_b[wi] = dense_backward(g, trace.dense_inputs[di], params.weights[wi])

    g = g.reshape((n,) + arch.feature_shapes()[-1])
    ci = n_convs - 1
    for li in range(len(arch.features) - 1, -1, -1):
        spec = arch.features[li]
        if isinstance(spec, PoolSpec):
            non_overlap = all(s >= w for w, s in zip(spec.window, spec.stride))
            g = maxpool3d_backward(g, trace.pool_maps[li],
                                   trace.feature_inputs[li].shape,
                                   overlapping=not non_overlap)
        else:
            g = relu_backward(g, trace.conv_pre[li])
            g, grad_w[ci], grad_b[ci] = conv3d_backward(
                g, trace.feature_inputs[li], params.weights[ci], spec.stride
            )
            ci -= 1

    for i, w in enumerate(params.weights):
        grad_w[i] = grad_w[i].reshape(w.shape).astype(params.dtype, copy=False)
        if lam != 0:
            grad_w[i] = grad_w[i] + lam * w
    return grad_w, grad_b


# ---------------------------------------------------------------------------
# Optimization and the training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    dropout_rate: float = 0.1
    lam: float = 1e-4
    eta: float = 0.1
    batch_size: int = 32
    max_epochs: int = 40
    stop_window: int = 5
    stop_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ParameterError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ParameterError("momentum must be in [0, 1)")
        if not 0 <= self.dropout_rate < 1:
            raise ParameterError("dropout_rate must be in [0, 1)")
        if not 0 <= self.lam <= 1 or not 0 <= self.eta <= 1:
            raise ParameterError("lambda and eta must be in [0, 1]")
        if self.batch_size < 2:
            raise ParameterError("batch_size must be >= 2")
        if self.max_epochs < 1:
            raise ParameterError("max_epochs must be >= 1")


@dataclass
class TrainingSet:
    """Triplet blocks and polarity labels for one classifier task."""

    x: np.ndarray   # (N, H, W, D)
    y: np.ndarray   # (N,) in {0, 1}

    def __post_init__(self):
        self.y = np.asarray(self.y).astype(np.int64)
        if self.x.shape[0] != self.y.shape[0]:
            raise DimensionError("x and y lengths differ")


@dataclass
class TrainResult:
    params: ModelParams
    trace: list
    stop_reason: str    # "stop_rule" | "max_epochs" | "diverged"


def sgd_momentum_step(params: ModelParams, grads, config: TrainConfig) -> ModelParams:
    """Classical momentum: v <- m*v - lr*g; p <- p + v. Updates in place."""
    grad_w, grad_b = grads
    tensors = params.weights + params.biases
    grads_flat = list(grad_w) + list(grad_b)
    if params.velocities is None:
        params.velocities = [np.zeros_like(t) for t in tensors]
    names = params.layer_names()
    labels = [f"{n}.w" for n in names] + [f"{n}.b" for n in names]
    lr = params.dtype.type(config.learning_rate)
    mom = params.dtype.type(config.momentum)
    for t, v, g, label in zip(tensors, params.velocities, grads_flat, labels):
        if not np.isfinite(g).all():
            raise TrainingDiverged(
                f"non-finite gradient in {label} "
                f"(max |finite| = {np.abs(g[np.isfinite(g)]).max(initial=0.0):.3e})"
            )
        v *= mom
        v -= lr * g.astype(params.dtype, copy=False)
        t += v
    return params


def stratified_batches(y: np.ndarray, batch_size: int,
                       rng: np.random.Generator) -> list:
    """Index batches with both polarities present in every batch.

    Shuffled positives and negatives are split round-robin over the batch
    count; when one polarity is scarce the batch count shrinks (batches grow
    past the nominal size) so the scatter statistics stay defined everywhere.
    """
    y = np.asarray(y)
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise StatisticsError("both polarities are required to form batches")
    n_batches = -(-len(y) // batch_size)
    n_batches = max(1, min(n_batches, len(pos), len(neg)))
    pos_chunks = np.array_split(rng.permutation(pos), n_batches)
    neg_chunks = np.array_split(rng.permutation(neg), n_batches)
    batches = []
    for p_chunk, n_chunk in zip(pos_chunks, neg_chunks):
        merged = np.concatenate([p_chunk, n_chunk])
        batches.append(merged[rng.permutation(len(merged))])
    return batches


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    # One stream per (seed, epoch) so resumed training replays exactly.
    return np.random.default_rng([seed, epoch])


def train(arch: NetworkArch, dataset: TrainingSet, config: TrainConfig,
          dtype=np.float32, params: ModelParams | None = None,
          log=None, init_scheme: str = "fanin") -> TrainResult:
    """Epoch loop: forward, scatter, objective, backward, momentum step.

    Stops when the epoch-mean objective's standard deviation over the last
    ``stop_window`` epochs falls below ``stop_sigma``, or at ``max_epochs``.
    A non-finite objective or gradient aborts with the last finite state.
    """
    if params is None:
        params = init_params(arch, config.seed, dtype, scheme=init_scheme)
    elif params.arch != arch:
        raise ParameterError("resumed params were built for a different architecture")
    x_all = dataset.x.astype(params.dtype, copy=False)
    y_all = dataset.y
    snapshot = params.copy()
    stop_reason = "max_epochs"
    while params.epochs_trained < config.max_epochs:
        epoch = params.epochs_trained
        rng = _epoch_rng(config.seed, epoch)
        batches = stratified_batches(y_all, config.batch_size, rng)
        total = 0.0
        try:
            for idx in batches:
                xb = x_all[idx]
                yb = y_all[idx]
                trace = forward(params, xb, train=True, rng=rng,
                                dropout_rate=config.dropout_rate)
                obj, report = batch_objective(params, trace, yb,
                                              config.lam, config.eta)
                if not np.isfinite(obj):
                    raise TrainingDiverged(f"non-finite objective {obj!r}")
                grads = backward(params, trace, yb, config.lam, config.eta, report)
                sgd_momentum_step(params, grads, config)
                total += obj
        except TrainingDiverged:
            params = snapshot
            stop_reason = "diverged"
            break
        mean_obj = total / len(batches)
        params.trace.append(mean_obj)
        params.epochs_trained += 1
        if log:
            log(f"epoch {params.epochs_trained}: objective {mean_obj:.6f}")
        snapshot = params.copy()
        window = params.trace[-config.stop_window:]
        if (len(params.trace) >= config.stop_window
                and float(np.std(window)) < config.stop_sigma):
            stop_reason = "stop_rule"
            break
    return TrainResult(params=params, trace=list(params.trace), stop_reason=stop_reason)


def predict(params: ModelParams, x: np.ndarray):
    """Inference-mode probability that the target structure is absent."""
    _, single = _blocks_to_network_layout(np.asarray(x), params.arch)
    probs = forward(params, x, train=False).probs
    return float(probs[0]) if single else probs


# ---------------------------------------------------------------------------
# Model container
# ---------------------------------------------------------------------------

_MODEL_MAGIC = "FD3DMDL v1"


def arch_to_string(arch: NetworkArch) -> str:
    parts = [f"name={arch.name}",
             "input=" + "x".join(map(str, arch.input_hwd))]
    for spec in arch.features:
        if isinstance(spec, ConvSpec):
            parts.append("conv=%d:%s:%s" % (
                spec.out_channels,
                "x".join(map(str, spec.kernel)),
                "x".join(map(str, spec.stride))))
        else:
            parts.append("pool=%s:%s" % (
                "x".join(map(str, spec.window)),
                "x".join(map(str, spec.stride))))
    for spec in arch.dense:
        parts.append(f"dense={spec.units}:{spec.activation}")
    parts.append(f"fisher={arch.fisher_index if arch.fisher_index is not None else '-'}")
    return ";".join(parts)


def arch_from_string(text: str) -> NetworkArch:
    name = "custom"
    input_hwd = None
    features = []
    dense = []
    fisher = None
    for part in text.split(";"):
        key, _, val = part.partition("=")
        if key == "name":
            name = val
        elif key == "input":
            input_hwd = tuple(int(v) for v in val.split("x"))
        elif key == "conv":
            ch, kern, stride = val.split(":")
            features.append(ConvSpec(int(ch),
                                     tuple(int(v) for v in kern.split("x")),
                                     tuple(int(v) for v in stride.split("x"))))
        elif key == "pool":
            win, stride = val.split(":")
            features.append(PoolSpec(tuple(int(v) for v in win.split("x")),
                                     tuple(int(v) for v in stride.split("x"))))
        elif key == "dense":
            units, act = val.split(":")
            dense.append(DenseSpec(int(units), act))
        elif key == "fisher":
            fisher = None if val == "-" else int(val)
        else:
            raise ModelIOError(f"unknown arch field {key!r}")
    if input_hwd is None:
        raise ModelIOError("arch string lacks an input field")
    return NetworkArch(input_hwd=input_hwd, features=tuple(features),
                       dense=tuple(dense), fisher_index=fisher, name=name)


def save_model(params: ModelParams, path) -> None:
    """Write the container: header, every tensor as a TNSR block, checksum."""
    buf = io.BytesIO()
    names = params.layer_names()
    tensors = [(f"{n}.w", w) for n, w in zip(names, params.weights)]
    tensors += [(f"{n}.b", b) for n, b in zip(names, params.biases)]
    if params.velocities is not None:
        labels = [f"{n}.w" for n in names] + [f"{n}.b" for n in names]
        tensors += [(f"vel.{l}", v) for l, v in zip(labels, params.velocities)]
    trace = ",".join(repr(float(v)) for v in params.trace) or "-"
    buf.write((
        f"{_MODEL_MAGIC}\n"
        f"arch {arch_to_string(params.arch)}\n"
        f"dtype {tensorfile.dtype_name(params.dtype)}\n"
        f"seed {params.seed}\n"
        f"epochs {params.epochs_trained}\n"
        f"trace {trace}\n"
        f"tensors {len(tensors)}\n"
    ).encode("ascii"))
    for label, tensor in tensors:
        buf.write(f"name {label}\n".encode("ascii"))
        tensorfile.write_block(buf, tensor)
    digest = hashlib.sha256(buf.getvalue()).hexdigest()
    buf.write(f"checksum sha256 {digest}\n".encode("ascii"))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_model(path) -> ModelParams:
    """Read and verify a model container (version, checksum, completeness)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.find(b"\n")
    if nl < 0 or raw[:nl].decode("ascii", "replace") != _MODEL_MAGIC:
        raise ModelIOError("unsupported model container version or not a model file")
    tail = raw.rfind(b"checksum sha256 ")
    if tail < 0 or not raw.endswith(b"\n"):
        raise ModelIOError("truncated model container: checksum line missing")
    stated = raw[tail + len(b"checksum sha256 "):-1].decode("ascii", "replace")
    body = raw[:tail]
    if hashlib.sha256(body).hexdigest() != stated:
        raise ModelIOError("model container checksum mismatch")

    fh = io.BytesIO(body)
    fh.readline()  # magic, already verified
    header = {}
    for _ in range(6):  # arch, dtype, seed, epochs, trace, tensors
        key, _, val = fh.readline()[:-1].decode("ascii").partition(" ")
        header[key] = val
    arch = arch_from_string(header["arch"])
    n_tensors = int(header["tensors"])
    loaded = {}
    for _ in range(n_tensors):
        line = fh.readline()
        if not line.endswith(b"\n"):
            raise ModelIOError("truncated model container: tensor name missing")
        label = line[:-1].decode("ascii").split(" ", 1)[1]
        loaded[label] = tensorfile.read_block(fh)

    names = []
    n_convs = _num_convs(arch)
    names += [f"c{i + 1}" for i in range(n_convs)]
    names += [f"f{i + 1}" for i in range(len(arch.dense))]
    names.append("head")
    try:
        weights = [loaded[f"{n}.w"] for n in names]
        biases = [loaded[f"{n}.b"] for n in names]
    except KeyError as missing:
        raise ModelIOError(f"model container lacks tensor {missing}")
    vel_labels = [f"vel.{n}.w" for n in names] + [f"vel.{n}.b" for n in names]
    velocities = None
    if all(l in loaded for l in vel_labels):
        velocities = [loaded[l] for l in vel_labels]
    trace = ([] if header["trace"] == "-"
             else [float(v) for v in header["trace"].split(",")])
    dtype = np.float32 if header["dtype"] == "f32" else np.float64
    params = ModelParams(
        arch=arch, seed=int(header["seed"]),
        weights=[w.astype(dtype, copy=False) for w in weights],
        biases=[b.astype(dtype, copy=False) for b in biases],
        velocities=None if velocities is None
        else [v.astype(dtype, copy=False) for v in velocities],
        epochs_trained=int(header["epochs"]),
        trace=trace,
    )
    return params
