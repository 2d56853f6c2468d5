"""Small end-to-end training run through covariance pooling and the meta-layer.

Each sample is an ``n x p`` matrix of zero-mean Gaussian features whose
covariance depends on the class.  The model is

    raw features -> X = raw @ W -> Sigma = cov(X) -> head -> linear -> softmax

with heads ``isqrt`` (meta-layer output), ``plain`` (upper triangle of Sigma)
and ``avg`` (mean feature; carries no class signal by construction).
Everything is trained with minibatch SGD with momentum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import cov_pool, isqrt_layer
from .isqrt_layer import MetaLayerConfig

HEADS = ("isqrt", "plain", "avg")
LOG_HEADER = "epoch,head,train_loss,train_acc,test_acc"


@dataclass(frozen=True)
class TrainConfig:
    classes: int = 4
    d: int = 16
    p: int = 16
    n: int = 36
    epochs: int = 30
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 32
    train_per_class: int = 64
    test_per_class: int = 64
    head: str = "isqrt"
    seed: int = 3
    layer: MetaLayerConfig = field(default_factory=MetaLayerConfig)

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.classes < 2 or self.p < 2 or self.d < 1 or self.n < 2:
            raise ValueError("need classes >= 2, p >= 2, d >= 1, n >= 2")
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("epochs, batch_size and lr must be positive")


@dataclass
class SyntheticTask:
    classes: int
    p: int
    n: int
    factors: np.ndarray  # (K, p, p); class k draws rows as factors[k] @ gaussian
    x_train: np.ndarray  # (M, n, p)
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


def generate_task(classes: int, p: int, train_per_class: int, test_per_class: int,
                  n: int, seed: int, shared_factor: bool = False) -> SyntheticTask:
    """Zero-mean features, class-specific covariance ``F_k F_k^T``.

    With ``shared_factor`` every class uses the same factor, so no head can
    beat chance.
    """
    if classes < 2 or p < 2:
        raise ValueError("need at least 2 classes and p >= 2")
    rng = np.random.default_rng(seed)
    base = rng.standard_normal((p, p)) / math.sqrt(p)
    if shared_factor:
        factors = np.repeat(base[None], classes, axis=0)
    else:
        factors = rng.standard_normal((classes, p, p)) / math.sqrt(p)

    def draw(per_class):
        xs, ys = [], []
        for k in range(classes):
            z = rng.standard_normal((per_class, n, p))
            xs.append(z @ factors[k].T)
            ys.append(np.full(per_class, k))
        return np.concatenate(xs), np.concatenate(ys)

    x_train, y_train = draw(train_per_class)
    x_test, y_test = draw(test_per_class)
    return SyntheticTask(classes, p, n, factors, x_train, y_train, x_test, y_test)


def l2_normalize_vec(vec) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ValueError("cannot l2-normalize a zero vector")
    return vec / norm


@dataclass
class ModelParams:
    w: np.ndarray   # (p, d)
    v: np.ndarray   # (feat, K)
    b: np.ndarray   # (K,)
    vel_w: np.ndarray
    vel_v: np.ndarray
    vel_b: np.ndarray

    @classmethod
    def init(cls, p: int, d: int, feat: int, classes: int, rng: np.random.Generator) -> "ModelParams":
        w = rng.uniform(-1.0, 1.0, (p, d)) / math.sqrt(p)
        v = rng.uniform(-1.0, 1.0, (feat, classes)) / math.sqrt(feat)
        b = rng.uniform(-1.0, 1.0, classes) / math.sqrt(feat)
        return cls(w, v, b, np.zeros_like(w), np.zeros_like(v), np.zeros_like(b))

    def finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in (self.w, self.v, self.b))


def feature_dim(head: str, d: int) -> int:
    return d if head == "avg" else isqrt_layer.vec_size(d)


def _head_forward(head: str, x: np.ndarray, layer: MetaLayerConfig):
    if head == "avg":
        return x.mean(axis=0), None
    sigma = cov_pool.covariance_forward(x)
    if head == "plain":
        return isqrt_layer.triu_vec(sigma), None
    out, tape = isqrt_layer.forward(sigma, layer)
    return out.vec, tape


def _head_backward(head: str, x: np.ndarray, tape, d_feat: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the projected features ``x`` (n x d)."""
    if head == "avg":
        return np.broadcast_to(d_feat / x.shape[0], x.shape).copy()
    if head == "plain":
        d_sigma = isqrt_layer.vec_adjoint(d_feat, x.shape[1])
    else:
        d_sigma = isqrt_layer.backward(tape, d_feat)
    return cov_pool.covariance_backward(x, d_sigma)


def _softmax_xent(logits: np.ndarray, labels: np.ndarray):
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_prob = z - log_norm
    loss = float(-np.mean(log_prob[np.arange(len(labels)), labels]))
    return loss, np.exp(log_prob)


def _head_features(head: str, x: np.ndarray, layer: MetaLayerConfig) -> np.ndarray:
    if head == "isqrt":
        return isqrt_layer.forward_inference(cov_pool.covariance_forward(x), layer).vec
    return _head_forward(head, x, layer)[0]


def evaluate(params: ModelParams, cfg: TrainConfig, xs: np.ndarray, ys: np.ndarray) -> tuple[float, float]:
    feats = np.stack([_head_features(cfg.head, raw @ params.w, cfg.layer) for raw in xs])
    logits = feats @ params.v + params.b
    loss, prob = _softmax_xent(logits, ys)
    return loss, float(np.mean(np.argmax(prob, axis=1) == ys))


def batch_gradients(params: ModelParams, cfg: TrainConfig, xs: np.ndarray, ys: np.ndarray):
    """Loss and gradients for one minibatch; samples are reduced in index order."""
    feats, cache = [], []
    for raw in xs:
        x = raw @ params.w
        f, tape = _head_forward(cfg.head, x, cfg.layer)
        feats.append(f)
        cache.append((raw, x, tape))
    feats = np.stack(feats)
    logits = feats @ params.v + params.b
    loss, prob = _softmax_xent(logits, ys)
    if not math.isfinite(loss):
        return loss, None, None, None
    d_logits = prob
    d_logits[np.arange(len(ys)), ys] -= 1.0
    d_logits /= len(ys)
    g_v = feats.T @ d_logits
    g_b = d_logits.sum(axis=0)
    d_feats = d_logits @ params.v.T
    g_w = np.zeros_like(params.w)
    for (raw, x, tape), d_f in zip(cache, d_feats):
        g_w += raw.T @ _head_backward(cfg.head, x, tape, d_f)
    return loss, g_w, g_v, g_b


def sgd_step(params: ModelParams, grads, cfg: TrainConfig) -> None:
    g_w, g_v, g_b = grads
    if cfg.weight_decay:
        g_w = g_w + cfg.weight_decay * params.w
        g_v = g_v + cfg.weight_decay * params.v
    for name, g in (("w", g_w), ("v", g_v), ("b", g_b)):
        vel = getattr(params, "vel_" + name)
        vel *= cfg.momentum
        vel -= cfg.lr * g
        getattr(params, name)[...] += vel


@dataclass
class EpochLog:
    epoch: int
    head: str
    train_loss: float
    train_acc: float
    test_acc: float

    def csv_row(self) -> str:
        return f"{self.epoch},{self.head},{self.train_loss:.12g},{self.train_acc:.6f},{self.test_acc:.6f}"


def train(task: SyntheticTask, cfg: TrainConfig) -> tuple[list[EpochLog], ModelParams]:
    """Train ``cfg.head`` on ``task``; one log row per epoch (full-set metrics after the epoch)."""
    rng = np.random.default_rng(cfg.seed + 1)
    params = ModelParams.init(task.p, cfg.d, feature_dim(cfg.head, cfg.d), task.classes, rng)
    m = len(task.y_train)
    logs = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(m)
        for start in range(0, m, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, *grads = batch_gradients(params, cfg, task.x_train[idx], task.y_train[idx])
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss in epoch {epoch} with head {cfg.head}")
            sgd_step(params, grads, cfg)
            if not params.finite():
                raise FloatingPointError(f"non-finite parameters in epoch {epoch} with head {cfg.head}")
        train_loss, train_acc = evaluate(params, cfg, task.x_train, task.y_train)
        _, test_acc = evaluate(params, cfg, task.x_test, task.y_test)
        if not math.isfinite(train_loss):
            raise FloatingPointError(f"non-finite loss in epoch {epoch} with head {cfg.head}")
        logs.append(EpochLog(epoch, cfg.head, train_loss, train_acc, test_acc))
    return logs, params


def task_for(cfg: TrainConfig, shared_factor: bool = False) -> SyntheticTask:
    return generate_task(cfg.classes, cfg.p, cfg.train_per_class, cfg.test_per_class,
                         cfg.n, cfg.seed, shared_factor)


def run(cfg: TrainConfig) -> list[EpochLog]:
    return train(task_for(cfg), cfg)[0]


def epochs_to_reach(logs: list[EpochLog], threshold: float) -> int | None:
    """First epoch whose training loss is at or below ``threshold``."""
    for row in logs:
        if row.train_loss <= threshold:
            return row.epoch
    return None
