"""Trainable heads: a small MLP and multinomial logistic regression.

Training uses decoupled-weight-decay Adam with a linear learning-rate
ramp to zero, per-class binary cross-entropy on one-hot targets, and
epoch-boundary early stopping on dev QWK. All randomness flows through
explicit seeds so runs are bit-reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimMismatch,
    LabelOutOfRange,
    NonFiniteGradient,
    NonFiniteLoss,
    SingleClass,
)
from .mathutil import log_softmax, logsumexp, sigmoid
from .metrics import qwk

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class MlpModel:
    """One-hidden-layer rectifier network: D -> H -> k."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, n_inputs: int, n_hidden: int, n_classes: int, seed: int) -> "MlpModel":
        rng = np.random.default_rng(seed)
        return cls(
            w1=rng.standard_normal((n_inputs, n_hidden)) / np.sqrt(n_inputs),
            b1=np.zeros(n_hidden),
            w2=rng.standard_normal((n_hidden, n_classes)) / np.sqrt(n_hidden),
            b2=np.zeros(n_classes),
        )

    @property
    def n_classes(self) -> int:
        return self.w2.shape[1]

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def with_params(self, params: list[np.ndarray]) -> "MlpModel":
        w1, b1, w2, b2 = params
        return MlpModel(w1=w1, b1=b1, w2=w2, b2=b2)

    def to_arrays(self, prefix: str = "mlp_") -> dict[str, np.ndarray]:
        return {
            prefix + "w1": self.w1,
            prefix + "b1": self.b1,
            prefix + "w2": self.w2,
            prefix + "b2": self.b2,
        }

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], prefix: str = "mlp_") -> "MlpModel":
        return cls(
            w1=arrays[prefix + "w1"],
            b1=arrays[prefix + "b1"][0],
            w2=arrays[prefix + "w2"],
            b2=arrays[prefix + "b2"][0],
        )


def mlp_forward(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """Logits for a batch: affine, rectifier, affine."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if features.shape[1] != model.w1.shape[0]:
        raise DimMismatch(
            f"features have dim {features.shape[1]}, model expects {model.w1.shape[0]}"
        )
    hidden = np.maximum(features @ model.w1 + model.b1, 0.0)
    return hidden @ model.w2 + model.b2


def _one_hot(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    out = np.zeros((labels.size, k), dtype=float)
    out[np.arange(labels.size), labels] = 1.0
    return out


def bce_loss(logits: np.ndarray, labels, k: int | None = None) -> float:
    """Mean per-class sigmoid binary cross-entropy against one-hot targets.

    Uses the overflow-free form max(z,0) - z*t + log(1 + exp(-|z|)),
    averaged over all N*k logits.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    k = logits.shape[1] if k is None else k
    targets = _one_hot(labels, k)
    per_logit = np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    return float(per_logit.mean())


def bce_loss_grad(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to the logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    targets = _one_hot(labels, logits.shape[1])
    loss = bce_loss(logits, labels)
    grad = (sigmoid(logits) - targets) / logits.size
    return loss, grad


@dataclass
class AdamState:
    """First/second-moment accumulators and the step counter."""

    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(
            step=0,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adamw_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr_t: float,
    weight_decay: float,
) -> tuple[list[np.ndarray], AdamState]:
    """One decoupled-weight-decay Adam update.

    theta <- theta - lr_t * (m_hat / (sqrt(v_hat) + eps) + wd * theta),
    with bias-corrected moment estimates (beta1=0.9, beta2=0.999).
    """
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient contains NaN or inf")
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g
        m_hat = m / (1 - ADAM_BETA1 ** t)
        v_hat = v / (1 - ADAM_BETA2 ** t)
        new_params.append(p - lr_t * (m_hat / (np.sqrt(v_hat) + ADAM_EPS) + weight_decay * p))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(step=t, m=new_m, v=new_v)


def linear_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Linear decay from base_lr at step 0 to zero at total_steps."""
    if total_steps < 1 or not 0 <= step <= total_steps:
        raise ValueError(f"bad schedule position {step}/{total_steps}")
    return base_lr * (1.0 - step / total_steps)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int
    epochs: int = 20
    seed: int = 0
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError(f"invalid training config: {self}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    dev_qwk: float


@dataclass(frozen=True)
class TrainResult:
    model: MlpModel
    history: list[EpochStats]
    best_epoch: int
    best_dev_qwk: float

    def history_tsv(self) -> str:
        lines = ["epoch\tloss\tdev_qwk"]
        lines += [f"{h.epoch}\t{h.train_loss:.6f}\t{h.dev_qwk:.6f}" for h in self.history]
        return "\n".join(lines) + "\n"


def _mlp_grads(model: MlpModel, X: np.ndarray, labels) -> tuple[float, list[np.ndarray]]:
    # Divergence shows up as a non-finite loss, which the train loop turns
    # into NonFiniteLoss; the intermediate overflow itself is not an error.
    with np.errstate(over="ignore", invalid="ignore"):
        z1 = X @ model.w1 + model.b1
        hidden = np.maximum(z1, 0.0)
        logits = hidden @ model.w2 + model.b2
        loss, d_logits = bce_loss_grad(logits, labels)
        d_w2 = hidden.T @ d_logits
        d_b2 = d_logits.sum(axis=0)
        d_hidden = d_logits @ model.w2.T
        d_z1 = d_hidden * (z1 > 0.0)
        d_w1 = X.T @ d_z1
        d_b1 = d_z1.sum(axis=0)
    return loss, [d_w1, d_b1, d_w2, d_b2]


def train_early_stop(
    model_init: MlpModel,
    train_x: np.ndarray,
    train_y,
    dev_x: np.ndarray,
    dev_y,
    config: TrainConfig,
    qwk_fn=qwk,
) -> TrainResult:
    """Train with seeded minibatches, keep the best-dev-QWK snapshot.

    Dev QWK is computed from argmax predictions after every epoch; on
    ties the earliest epoch wins. The linear schedule runs over the full
    step budget epochs * ceil(N / batch).
    """
    train_y = np.asarray(train_y)
    dev_y = np.asarray(dev_y)
    k = model_init.n_classes
    n = train_x.shape[0]
    rng = np.random.default_rng(config.seed)
    steps_per_epoch = -(-n // config.batch_size)
    total_steps = config.epochs * steps_per_epoch

    params = [p.copy() for p in model_init.params()]
    state = AdamState.for_params(params)
    best: tuple[float, int, list[np.ndarray]] | None = None
    history: list[EpochStats] = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            model = model_init.with_params(params)
            loss, grads = _mlp_grads(model, train_x[batch], train_y[batch])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}")
            loss_sum += loss * batch.size
            lr_t = linear_lr(step, total_steps, config.learning_rate)
            params, state = adamw_step(params, grads, state, lr_t, config.weight_decay)
            step += 1
        model = model_init.with_params(params)
        dev_pred = np.argmax(mlp_forward(model, dev_x), axis=1)
        dev_qwk = qwk_fn(dev_y, dev_pred, k)
        history.append(EpochStats(epoch=epoch, train_loss=loss_sum / n, dev_qwk=dev_qwk))
        if best is None or dev_qwk > best[0]:
            best = (dev_qwk, epoch, [p.copy() for p in params])
    assert best is not None
    return TrainResult(
        model=model_init.with_params(best[2]),
        history=history,
        best_epoch=best[1],
        best_dev_qwk=best[0],
    )


@dataclass
class LogRegModel:
    """Multinomial softmax regression head."""

    weights: np.ndarray  # F x k
    bias: np.ndarray  # k
    l2: float

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]


def logreg_objective(
    weights: np.ndarray, bias: np.ndarray, X: np.ndarray, labels: np.ndarray, l2: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy plus (l2/2)*||W||^2, with analytic gradients."""
    n = X.shape[0]
    logits = X @ weights + bias
    log_z = logsumexp(logits, axis=1)
    nll = float(np.mean(log_z - logits[np.arange(n), labels]))
    value = nll + 0.5 * l2 * float(np.sum(weights * weights))
    probs = np.exp(logits - log_z[:, None])
    delta = probs
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    grad_w = X.T @ delta + l2 * weights
    grad_b = delta.sum(axis=0)
    return value, grad_w, grad_b


def logreg_fit(design: np.ndarray, labels, l2: float, k: int | None = None) -> LogRegModel:
    """Fit by full-batch gradient descent with backtracking line search.

    Stops when the gradient infinity-norm reaches 1e-6 or after 5000
    iterations; deterministic (zero init, fixed step policy). ``k`` may
    widen the output beyond the classes observed in ``labels``.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(labels)
    classes = np.unique(y)
    if classes.size < 2:
        raise SingleClass("logistic regression needs >= 2 observed classes")
    k = int(y.max()) + 1 if k is None else k
    if X.shape[0] < k:
        raise ValueError(f"need at least {k} rows, got {X.shape[0]}")
    weights = np.zeros((X.shape[1], k))
    bias = np.zeros(k)
    step = 1.0
    value, grad_w, grad_b = logreg_objective(weights, bias, X, y, l2)
    for _ in range(5000):
        grad_norm = max(
            np.max(np.abs(grad_w)) if grad_w.size else 0.0, np.max(np.abs(grad_b))
        )
        if grad_norm <= 1e-6:
            break
        grad_sq = float(np.sum(grad_w * grad_w) + np.sum(grad_b * grad_b))
        while True:
            trial_w = weights - step * grad_w
            trial_b = bias - step * grad_b
            trial_value, trial_gw, trial_gb = logreg_objective(trial_w, trial_b, X, y, l2)
            if trial_value <= value - 1e-4 * step * grad_sq:
                break
            step *= 0.5
            if step < 1e-20:
                break
        if step < 1e-20:
            break
        weights, bias = trial_w, trial_b
        value, grad_w, grad_b = trial_value, trial_gw, trial_gb
        step = min(step * 2.0, 1e8)
    return LogRegModel(weights=weights, bias=bias, l2=l2)


def logreg_logprobs(model: LogRegModel, design: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax scores; each row logsumexps to 0."""
    X = np.atleast_2d(np.asarray(design, dtype=float))
    if X.shape[1] != model.weights.shape[0]:
        raise DimMismatch(
            f"design has dim {X.shape[1]}, model expects {model.weights.shape[0]}"
        )
    return log_softmax(X @ model.weights + model.bias, axis=1)
