"""Four-layer IndRNN classifier in plain numpy.

Each layer computes, for every time step ``t``::

    p_t = BN_pre(W x_t)
    h_t = relu(p_t + u * h_{t-1} + b)          # elementwise recurrence
    y_t = BN_post(h_t)

``h_0 = 0``.  Batch-norm statistics are pooled over batch and time.  The
classifier reads the top layer's output at the last time step (or the
temporal mean when ``readout == "mean"``) and applies a dense softmax layer.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, fields
from typing import Callable, Optional, Sequence

import numpy as np

from .skeleton import FEATURE_DIM, CLIP_LEN, FeatureClip

log = logging.getLogger(__name__)

NUM_LAYERS = 4
READOUTS = ("last", "mean")


class ModelNotTrained(RuntimeError):
    """Eval-mode inference requested before running statistics exist."""


class NumericDivergence(ArithmeticError):
    """Training produced a non-finite loss."""


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5
    tracked: bool = False

    @classmethod
    def fresh(cls, size: int, momentum: float = 0.1, epsilon: float = 1e-5) -> "BatchNormState":
        return cls(np.ones(size), np.zeros(size), np.zeros(size), np.ones(size), momentum, epsilon)


@dataclass
class IndRNNLayerParams:
    input_weights: np.ndarray      # (hidden, input_dim)
    recurrent_weights: np.ndarray  # (hidden,)
    bias: np.ndarray               # (hidden,)
    bn_pre: BatchNormState
    bn_post: BatchNormState

    @property
    def hidden(self) -> int:
        return self.input_weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.input_weights.shape[1]


@dataclass
class IndRNNModel:
    layers: list
    classifier_weights: np.ndarray  # (num_classes, hidden)
    classifier_bias: np.ndarray     # (num_classes,)
    class_labels: tuple = ()
    readout: str = "last"

    def __post_init__(self):
        if len(self.layers) != NUM_LAYERS:
            raise ValueError(f"IndRNN model needs exactly {NUM_LAYERS} layers, got {len(self.layers)}")
        dim = self.layers[0].input_dim
        for i, layer in enumerate(self.layers):
            if layer.input_dim != dim:
                raise ValueError(f"layer {i} expects input {layer.input_dim}, chain provides {dim}")
            if layer.recurrent_weights.shape != (layer.hidden,) or layer.bias.shape != (layer.hidden,):
                raise ValueError(f"layer {i} recurrent/bias shape mismatch")
            dim = layer.hidden
        if self.classifier_weights.shape[1] != dim:
            raise ValueError("classifier input does not match top layer width")
        if not self.class_labels:
            self.class_labels = tuple(range(self.num_classes))
        self.class_labels = tuple(int(c) for c in self.class_labels)
        if len(self.class_labels) != self.num_classes:
            raise ValueError("class_labels length must equal num_classes")
        if self.readout not in READOUTS:
            raise ValueError(f"readout must be one of {READOUTS}")

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def hidden(self) -> int:
        return self.layers[0].hidden

    @property
    def num_classes(self) -> int:
        return self.classifier_weights.shape[0]

    @property
    def trained(self) -> bool:
        return all(l.bn_pre.tracked and l.bn_post.tracked for l in self.layers)

    def named_parameters(self):
        """Trainable arrays keyed by a dotted path, in a fixed order."""
        out = []
        for i, layer in enumerate(self.layers):
            out += [
                (f"layers.{i}.input_weights", layer.input_weights),
                (f"layers.{i}.recurrent_weights", layer.recurrent_weights),
                (f"layers.{i}.bias", layer.bias),
                (f"layers.{i}.bn_pre.gamma", layer.bn_pre.gamma),
                (f"layers.{i}.bn_pre.beta", layer.bn_pre.beta),
                (f"layers.{i}.bn_post.gamma", layer.bn_post.gamma),
                (f"layers.{i}.bn_post.beta", layer.bn_post.beta),
            ]
        out += [("classifier_weights", self.classifier_weights), ("classifier_bias", self.classifier_bias)]
        return out

    def copy(self) -> "IndRNNModel":
        def bn(s):
            return BatchNormState(s.gamma.copy(), s.beta.copy(), s.running_mean.copy(),
                                  s.running_var.copy(), s.momentum, s.epsilon, s.tracked)
        layers = [IndRNNLayerParams(l.input_weights.copy(), l.recurrent_weights.copy(), l.bias.copy(),
                                    bn(l.bn_pre), bn(l.bn_post)) for l in self.layers]
        return IndRNNModel(layers, self.classifier_weights.copy(), self.classifier_bias.copy(),
                           self.class_labels, self.readout)


def recurrent_limit(clip_len: int, gamma: float) -> float:
    """Largest |u| whose ``clip_len``-step product stays within ``gamma``."""
    return gamma ** (1.0 / clip_len)


def init_model(input_dim: int = FEATURE_DIM, hidden: int = 512, num_classes: int = 49,
               seed: int = 0, clip_len: int = CLIP_LEN, gamma: float = 2.0,
               class_labels: Sequence[int] = (), readout: str = "last",
               bn_momentum: float = 0.1, bn_epsilon: float = 1e-5) -> IndRNNModel:
    rng = np.random.default_rng(seed)
    u_max = recurrent_limit(clip_len, gamma)
    layers = []
    dim = input_dim
    for _ in range(NUM_LAYERS):
        bound = math.sqrt(6.0 / (dim + hidden))
        layers.append(IndRNNLayerParams(
            input_weights=rng.uniform(-bound, bound, size=(hidden, dim)),
            recurrent_weights=rng.uniform(0.0, u_max, size=hidden),
            bias=np.zeros(hidden),
            bn_pre=BatchNormState.fresh(hidden, bn_momentum, bn_epsilon),
            bn_post=BatchNormState.fresh(hidden, bn_momentum, bn_epsilon),
        ))
        dim = hidden
    bound = math.sqrt(6.0 / (hidden + num_classes))
    model = IndRNNModel(layers, rng.uniform(-bound, bound, size=(num_classes, hidden)),
                        np.zeros(num_classes), tuple(class_labels), readout)
    return round_to_float32(model)


def round_to_float32(model: IndRNNModel) -> IndRNNModel:
    """Snap every stored value to float32 so checkpoints round-trip exactly."""
    for _, arr in model.named_parameters():
        arr[...] = arr.astype(np.float32)
    for layer in model.layers:
        for bn in (layer.bn_pre, layer.bn_post):
            bn.running_mean[...] = bn.running_mean.astype(np.float32)
            bn.running_var[...] = bn.running_var.astype(np.float32)
    return model


# --- forward ---------------------------------------------------------------

def _relu(x):
    return np.maximum(x, 0.0)


def indrnn_cell_step(x_t, h_prev, params: IndRNNLayerParams) -> np.ndarray:
    """Raw cell update ``relu(W x + u * h_prev + b)`` without batch norm."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x_t.shape[-1] != params.input_dim:
        raise ValueError(f"input has {x_t.shape[-1]} features, layer expects {params.input_dim}")
    if h_prev.shape[-1] != params.hidden:
        raise ValueError(f"state has {h_prev.shape[-1]} units, layer has {params.hidden}")
    return _relu(x_t @ params.input_weights.T + params.recurrent_weights * h_prev + params.bias)


def _bn_forward(x, bn: BatchNormState, train: bool, update_running: bool):
    # x: (N, H) with N = batch * time
    if train:
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        if update_running:
            n = x.shape[0]
            unbiased = var * n / (n - 1) if n > 1 else var
            m = bn.momentum
            bn.running_mean[...] = (1 - m) * bn.running_mean + m * mean
            bn.running_var[...] = (1 - m) * bn.running_var + m * unbiased
            bn.tracked = True
    else:
        if not bn.tracked:
            raise ModelNotTrained("batch-norm running statistics were never initialized")
        mean, var = bn.running_mean, bn.running_var
    inv_std = 1.0 / np.sqrt(var + bn.epsilon)
    xhat = (x - mean) * inv_std
    return bn.gamma * xhat + bn.beta, (xhat, inv_std)


def _bn_backward(dy, cache, bn: BatchNormState):
    xhat, inv_std = cache
    n = dy.shape[0]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * bn.gamma
    dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


def _check_mode(mode: str) -> bool:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return mode == "train"


def _layer_forward(x, params: IndRNNLayerParams, train: bool, update_running: bool):
    b, t_len, d = x.shape
    hidden = params.hidden
    if d != params.input_dim:
        raise ValueError(f"input has {d} features, layer expects {params.input_dim}")
    proj = x.reshape(-1, d) @ params.input_weights.T
    pre, pre_cache = _bn_forward(proj, params.bn_pre, train, update_running)
    pre = pre.reshape(b, t_len, hidden)
    z = np.empty_like(pre)
    h_seq = np.empty_like(pre)
    h = np.zeros((b, hidden))
    u, bias = params.recurrent_weights, params.bias
    for t in range(t_len):
        z[:, t] = pre[:, t] + u * h + bias
        h = _relu(z[:, t])
        h_seq[:, t] = h
    y, post_cache = _bn_forward(h_seq.reshape(-1, hidden), params.bn_post, train, update_running)
    return y.reshape(b, t_len, hidden), (x, pre_cache, z, h_seq, post_cache)


def _layer_backward(dy, cache, params: IndRNNLayerParams):
    x, pre_cache, z, h_seq, post_cache = cache
    b, t_len, hidden = dy.shape
    d = x.shape[2]
    dh_seq, dgamma_post, dbeta_post = _bn_backward(dy.reshape(-1, hidden), post_cache, params.bn_post)
    dh_seq = dh_seq.reshape(b, t_len, hidden)
    u = params.recurrent_weights
    dz = np.empty_like(z)
    carry = np.zeros((b, hidden))
    for t in reversed(range(t_len)):
        dz[:, t] = (dh_seq[:, t] + carry) * (z[:, t] > 0)
        carry = dz[:, t] * u
    du = (dz[:, 1:] * h_seq[:, :-1]).sum(axis=(0, 1))
    dbias = dz.sum(axis=(0, 1))
    dproj, dgamma_pre, dbeta_pre = _bn_backward(dz.reshape(-1, hidden), pre_cache, params.bn_pre)
    dw = dproj.T @ x.reshape(-1, d)
    dx = (dproj @ params.input_weights).reshape(b, t_len, d)
    grads = {
        "input_weights": dw, "recurrent_weights": du, "bias": dbias,
        "bn_pre.gamma": dgamma_pre, "bn_pre.beta": dbeta_pre,
        "bn_post.gamma": dgamma_post, "bn_post.beta": dbeta_post,
    }
    return dx, grads


def layer_forward(inputs, params: IndRNNLayerParams, mode: str = "eval",
                  update_running: bool = False) -> np.ndarray:
    """Run one layer over ``(T, d)`` or ``(B, T, d)`` inputs."""
    train = _check_mode(mode)
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1] < 1:
        raise ValueError(f"expected (T, d) or (B, T, d) input with T >= 1, got {np.shape(inputs)}")
    y, _ = _layer_forward(x, params, train, update_running)
    return y[0] if single else y


def _as_batch(data, model: IndRNNModel):
    if isinstance(data, FeatureClip):
        x, single = data.frames[None], True
    else:
        x = np.asarray(data, dtype=np.float64)
        single = x.ndim == 2
        if single:
            x = x[None]
    if x.ndim != 3 or x.shape[1] < 1:
        raise ValueError(f"expected clip (T, d) or batch (B, T, d), got shape {x.shape}")
    if x.shape[2] != model.input_dim:
        raise ValueError(f"clip frames have {x.shape[2]} features, model expects {model.input_dim}")
    return x, single


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(x, model: IndRNNModel, train: bool, update_running: bool):
    caches = []
    h = x
    for layer in model.layers:
        h, cache = _layer_forward(h, layer, train, update_running)
        caches.append(cache)
    feat = h[:, -1] if model.readout == "last" else h.mean(axis=1)
    logits = feat @ model.classifier_weights.T + model.classifier_bias
    return logits, feat, h.shape, caches


def network_logits(data, model: IndRNNModel, mode: str = "eval") -> np.ndarray:
    train = _check_mode(mode)
    x, single = _as_batch(data, model)
    logits = _forward(x, model, train, update_running=False)[0]
    return logits[0] if single else logits


def network_forward(data, model: IndRNNModel, mode: str = "eval") -> np.ndarray:
    """Class probabilities for one clip ``(T, 57)`` or a batch ``(B, T, 57)``."""
    return _softmax(network_logits(data, model, mode))


def loss_and_gradients(clips, labels, model: IndRNNModel, update_running: bool = False):
    """Mean cross-entropy and its exact gradient (train-mode batch norm).

    ``labels`` are class indices in ``[0, num_classes)``.  Returns
    ``(loss, grads)`` with ``grads`` keyed like :meth:`IndRNNModel.named_parameters`.
    """
    x, _ = _as_batch(clips, model)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != x.shape[0]:
        raise ValueError("one label per clip required")
    if np.any(y < 0) or np.any(y >= model.num_classes):
        raise ValueError(f"labels must lie in [0, {model.num_classes})")
    logits, feat, top_shape, caches = _forward(x, model, True, update_running)
    b = x.shape[0]
    probs = _softmax(logits)
    loss = float(-np.mean(np.log(probs[np.arange(b), y])))

    dlogits = probs.copy()
    dlogits[np.arange(b), y] -= 1.0
    dlogits /= b
    grads = {
        "classifier_weights": dlogits.T @ feat,
        "classifier_bias": dlogits.sum(axis=0),
    }
    dfeat = dlogits @ model.classifier_weights
    dh = np.zeros(top_shape)
    if model.readout == "last":
        dh[:, -1] = dfeat
    else:
        dh[:] = dfeat[:, None, :] / top_shape[1]
    for i in reversed(range(NUM_LAYERS)):
        dh, layer_grads = _layer_backward(dh, caches[i], model.layers[i])
        for k, v in layer_grads.items():
            grads[f"layers.{i}.{k}"] = v
    return loss, grads


def clamp_recurrent_weights(model: IndRNNModel, clip_len: int = CLIP_LEN, gamma: float = 2.0) -> IndRNNModel:
    u_max = recurrent_limit(clip_len, gamma)
    for layer in model.layers:
        np.clip(layer.recurrent_weights, -u_max, u_max, out=layer.recurrent_weights)
    return model


def predict(clip, model: IndRNNModel):
    """``(action label, confidence)``; ties go to the lower class index."""
    probs = network_forward(clip, model, "eval")
    idx = int(np.argmax(probs))
    return model.class_labels[idx], float(probs[idx])


# --- training --------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    u_max_gamma: float = 2.0
    lr_decay: float = 0.1
    lr_patience: int = 5
    hidden: int = 512
    clip_len: int = CLIP_LEN
    readout: str = "last"
    val_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        for f in ("learning_rate", "batch_size", "hidden", "clip_len", "u_max_gamma"):
            if not getattr(self, f) > 0:
                raise ValueError(f"{f} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    learning_rate: float


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params}
        self.v = {k: np.zeros_like(v) for k, v in params}
        self.step_count = 0

    def step(self, grads):
        self.step_count += 1
        c1 = 1 - self.beta1 ** self.step_count
        c2 = 1 - self.beta2 ** self.step_count
        for name, p in self.params:
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _quiet_overflow():
    # overflow on the way to divergence is reported as NumericDivergence, not numpy warnings
    return np.errstate(over="ignore", invalid="ignore")


def _stack(clips):
    return np.stack([c.frames for c in clips])


def evaluate_clips(model: IndRNNModel, x, y_idx, batch_size: int = 256):
    """Eval-mode mean cross-entropy and accuracy over class-index labels."""
    losses, correct = 0.0, 0
    for s in range(0, len(x), batch_size):
        probs = network_forward(x[s:s + batch_size], model, "eval")
        yb = y_idx[s:s + batch_size]
        losses += float(-np.log(np.maximum(probs[np.arange(len(yb)), yb], 1e-300)).sum())
        correct += int((np.argmax(probs, axis=1) == yb).sum())
    return losses / len(x), correct / len(x)


def train(dataset: Sequence[FeatureClip], config: TrainConfig,
          val_dataset: Optional[Sequence[FeatureClip]] = None,
          on_epoch: Optional[Callable[[EpochMetrics], None]] = None):
    """Fit a fresh model with Adam; returns ``(model, [EpochMetrics, ...])``.

    When ``val_dataset`` is None a ``val_fraction`` holdout is carved from
    ``dataset`` with the seeded generator.  Identical inputs and seed give a
    bit-identical model.
    """
    if len(dataset) == 0:
        raise ValueError("empty training dataset")
    if any(c.label is None for c in dataset):
        raise ValueError("every training clip needs a label")
    labels = sorted({int(c.label) for c in dataset})
    if len(labels) < 2:
        raise ValueError("training needs at least two classes")
    index_of = {lab: i for i, lab in enumerate(labels)}
    rng = np.random.default_rng(config.seed)

    data = list(dataset)
    if val_dataset is None and config.val_fraction > 0:
        n_val = int(len(data) * config.val_fraction)
        if n_val > 0:
            order = rng.permutation(len(data))
            val_dataset = [data[i] for i in order[:n_val]]
            data = [data[i] for i in sorted(order[n_val:])]
    val_dataset = [c for c in (val_dataset or []) if c.label in index_of]

    x = _stack(data)
    y = np.array([index_of[c.label] for c in data])
    xv = _stack(val_dataset) if val_dataset else None
    yv = np.array([index_of[c.label] for c in val_dataset]) if val_dataset else None

    model = init_model(x.shape[2], config.hidden, len(labels), seed=int(rng.integers(2**63)),
                       clip_len=config.clip_len, gamma=config.u_max_gamma,
                       class_labels=labels, readout=config.readout)
    opt = Adam(model.named_parameters(), config.learning_rate,
               config.beta1, config.beta2, config.adam_epsilon)
    history = []
    best, stale = -1.0, 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(x))
        for s in range(0, len(x), config.batch_size):
            idx = order[s:s + config.batch_size]
            with _quiet_overflow():
                loss, grads = loss_and_gradients(x[idx], y[idx], model, update_running=True)
            if not math.isfinite(loss):
                raise NumericDivergence(f"non-finite loss at epoch {epoch}")
            opt.step(grads)
            clamp_recurrent_weights(model, config.clip_len, config.u_max_gamma)
        with _quiet_overflow():
            train_loss, train_acc = evaluate_clips(model, x, y)
            if xv is not None:
                val_loss, val_acc = evaluate_clips(model, xv, yv)
            else:
                val_loss, val_acc = float("nan"), float("nan")
        if not math.isfinite(train_loss):
            raise NumericDivergence(f"non-finite training loss after epoch {epoch}")
        metrics = EpochMetrics(epoch, train_loss, train_acc, val_loss, val_acc, opt.lr)
        history.append(metrics)
        log.info("epoch %d loss %.4f acc %.4f val_loss %.4f val_acc %.4f lr %.2e",
                 epoch, train_loss, train_acc, val_loss, val_acc, opt.lr)
        if on_epoch:
            on_epoch(metrics)
        watched = val_acc if xv is not None else train_acc
        if watched > best:
            best, stale = watched, 0
        else:
            stale += 1
            if stale >= config.lr_patience:
                opt.lr *= config.lr_decay
                stale = 0
    return round_to_float32(model), history


# --- IRNN checkpoint files ---------------------------------------------------

IRNN_MAGIC = b"IRNN"
IRNN_VERSION = 1
# magic, version, readout, input_dim, hidden, num_classes, num_layers, flags
_IRNN_HEADER = struct.Struct("<4sHHIIIII")
_IRNN_BN = struct.Struct("<dd")  # momentum, epsilon


def encode_irnn(model: IndRNNModel) -> bytes:
    """Serialize a model.

    Layout (little-endian): header, two f64 batch-norm hyperparameters,
    ``num_classes`` i32 action labels, then f32 arrays: per layer
    ``W, u, b`` followed by ``gamma, beta, running_mean, running_var`` for
    the pre and post batch norms; finally classifier weights and bias.
    Bit 0 of ``flags`` records that running statistics exist.
    """
    flags = 1 if model.trained else 0
    bn0 = model.layers[0].bn_pre
    parts = [
        _IRNN_HEADER.pack(IRNN_MAGIC, IRNN_VERSION, READOUTS.index(model.readout), model.input_dim,
                          model.hidden, model.num_classes, NUM_LAYERS, flags),
        _IRNN_BN.pack(bn0.momentum, bn0.epsilon),
        np.asarray(model.class_labels, dtype="<i4").tobytes(),
    ]
    for layer in model.layers:
        arrays = [layer.input_weights, layer.recurrent_weights, layer.bias]
        for bn in (layer.bn_pre, layer.bn_post):
            arrays += [bn.gamma, bn.beta, bn.running_mean, bn.running_var]
        parts += [a.astype("<f4").tobytes() for a in arrays]
    parts += [model.classifier_weights.astype("<f4").tobytes(), model.classifier_bias.astype("<f4").tobytes()]
    return b"".join(parts)


def decode_irnn(data: bytes) -> IndRNNModel:
    if len(data) < _IRNN_HEADER.size + _IRNN_BN.size:
        raise ValueError("IRNN data shorter than header")
    magic, version, readout, d, hidden, c, n_layers, flags = _IRNN_HEADER.unpack_from(data)
    if magic != IRNN_MAGIC:
        raise ValueError(f"bad IRNN magic {magic!r}")
    if version != IRNN_VERSION:
        raise ValueError(f"unsupported IRNN version {version}")
    if n_layers != NUM_LAYERS or readout >= len(READOUTS):
        raise ValueError("corrupt IRNN header")
    momentum, eps = _IRNN_BN.unpack_from(data, _IRNN_HEADER.size)
    pos = _IRNN_HEADER.size + _IRNN_BN.size
    expected = pos + 4 * c
    dim = d
    for _ in range(NUM_LAYERS):
        expected += 4 * (hidden * dim + 2 * hidden + 8 * hidden)
        dim = hidden
    expected += 4 * (c * hidden + c)
    if len(data) != expected:
        raise ValueError(f"IRNN size mismatch: expected {expected} bytes, got {len(data)}")
    labels = tuple(int(v) for v in np.frombuffer(data, "<i4", c, pos))
    pos += 4 * c

    def take(*shape):
        nonlocal pos
        n = int(np.prod(shape))
        arr = np.frombuffer(data, "<f4", n, pos).astype(np.float64).reshape(shape)
        pos += 4 * n
        return arr

    tracked = bool(flags & 1)
    layers = []
    dim = d
    for _ in range(NUM_LAYERS):
        w, u, b = take(hidden, dim), take(hidden), take(hidden)
        bns = [BatchNormState(take(hidden), take(hidden), take(hidden), take(hidden), momentum, eps, tracked)
               for _ in range(2)]
        layers.append(IndRNNLayerParams(w, u, b, *bns))
        dim = hidden
    return IndRNNModel(layers, take(c, hidden), take(c), labels, READOUTS[readout])


def save_model(path, model: IndRNNModel) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_irnn(model))


def load_model(path) -> IndRNNModel:
    with open(path, "rb") as fh:
        return decode_irnn(fh.read())


def config_fields(cls) -> list[str]:
    return [f.name for f in fields(cls)]
