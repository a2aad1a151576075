"""Training recipe: pixelwise BCE, Adam, plateau LR halving, early stop.

The schedule follows validation loss: any strict improvement resets the
stagnation counter; every ``lr_patience`` stagnant epochs the learning rate
halves; ``stop_patience`` stagnant epochs end the run. The returned model
carries the parameters of the best validation epoch.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import imaging
from . import tensor as T
from .errors import ConfigError, NumericError, UsageError
from .tensor import GradTape, Tensor

BCE_CLAMP = 1e-7


@dataclass
class Hyperparams:
    lr0: float = 1e-4
    batch: int = 32
    steps_per_epoch: int = 1000
    lr_patience: int = 10
    stop_patience: int = 35
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 1000
    seed: int = 0

    def __post_init__(self):
        for name in ("lr0", "batch", "steps_per_epoch", "lr_patience",
                     "stop_patience", "beta1", "beta2", "eps", "max_epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.stop_patience < self.lr_patience:
            raise ConfigError("stop_patience must be >= lr_patience")


@dataclass
class TrainState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    moments: dict = field(default_factory=dict)  # name -> (m, v)
    best_val_loss: float = float("inf")
    stale_epochs: int = 0
    halvings: int = 0
    stop: bool = False


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy over all pixels, clamped at 1e-7.

    Differentiable with respect to ``pred``; ``target`` is a constant
    array of the same dims with values in {0, 1}.
    """
    y = target.data if isinstance(target, Tensor) else np.asarray(target)
    if y.shape != pred.data.shape:
        raise UsageError(f"pred dims {pred.dims} do not match target {y.shape}")
    y = y.astype(pred.data.dtype, copy=False)
    p = np.clip(pred.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p)).mean()
    res = Tensor(np.asarray(loss, dtype=pred.data.dtype))

    def bwd(g):
        grad = (p - y) / (p * (1.0 - p) * p.size)
        grad *= (pred.data == p)  # clamped coordinates contribute nothing
        T.accumulate_grad(pred, grad * g.item())

    T.record_op(res, bwd)
    return res


def adam_step(state: TrainState, params, grads=None):
    """One Adam update over ``params``; reads ``param.grad`` unless given."""
    if grads is None:
        grads = [p.grad for p in params]
    for p, g in zip(params, grads):
        if g is None:
            raise UsageError(f"parameter {p.name!r} has no gradient")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {p.name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g in zip(params, grads):
        m, v = state.moments.get(p.name, (None, None))
        if m is None:
            m = np.zeros_like(p.value.data)
            v = np.zeros_like(p.value.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.moments[p.name] = (m, v)
        p.value.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def lr_schedule(state: TrainState, val_loss, lr_patience=10, stop_patience=35):
    """Epoch-end schedule update; returns the mutated state.

    Improvement means a strictly lower best validation loss. Each
    ``lr_patience`` consecutive stagnant epochs halve the learning rate;
    ``stop_patience`` stagnant epochs set ``state.stop``.
    """
    if val_loss < state.best_val_loss:
        state.best_val_loss = val_loss
        state.stale_epochs = 0
    else:
        state.stale_epochs += 1
        if state.stale_epochs % lr_patience == 0:
            state.lr /= 2.0
            state.halvings += 1
        if state.stale_epochs >= stop_patience:
            state.stop = True
    return state


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_val_loss: float
    stopped: str  # "early", "max_epochs", "diverged"
    stage: str


def history_to_csv(history) -> str:
    buf = io.StringIO()
    buf.write("epoch,train_loss,val_loss,lr\n")
    for rec in history:
        buf.write(f"{rec.epoch},{rec.train_loss:.8f},{rec.val_loss:.8f},{rec.lr:.10g}\n")
    return buf.getvalue()


def _prepare(samples, size):
    """Resize (image, mask) pairs to the network size as float32 arrays."""
    xs = np.empty((len(samples), size, size, 3), np.float32)
    ys = np.empty((len(samples), size, size, 1), np.float32)
    for i, (img, mask) in enumerate(samples):
        xs[i] = imaging.resize_bilinear_float(img, size, size) / 255.0
        ys[i, :, :, 0] = imaging.resize_nearest(mask, size, size)
    return xs, ys


def _val_loss(model, xs, ys, batch):
    total = 0.0
    for i in range(0, len(xs), batch):
        xb, yb = xs[i : i + batch], ys[i : i + batch]
        out = model.forward(Tensor(xb), mode="infer")
        total += float(bce_loss(out, Tensor(yb)).data) * len(xb)
    return total / len(xs)


def train(model, train_set, val_set, hp: Hyperparams, stage="initial",
          log=None) -> TrainResult:
    """Run the full recipe and leave ``model`` at its best-validation state.

    ``train_set`` and ``val_set`` are sequences of (rgb8 image, binary mask)
    pairs; both are resized to the model input size up front. When the
    training set holds fewer than batch * steps_per_epoch samples, batches
    are drawn with replacement.
    """
    if stage not in ("initial", "refine"):
        raise UsageError(f"stage must be 'initial' or 'refine', got {stage!r}")
    if len(train_set) == 0:
        raise UsageError("training set is empty")
    if len(val_set) == 0:
        raise UsageError("validation set is empty")
    size = model.config.input_size
    xs, ys = _prepare(train_set, size)
    vxs, vys = _prepare(val_set, size)
    params = model.parameters()
    state = TrainState(lr=hp.lr0, beta1=hp.beta1, beta2=hp.beta2, eps=hp.eps)
    rng = np.random.default_rng(np.random.PCG64(hp.seed))
    n = len(xs)
    per_epoch = hp.batch * hp.steps_per_epoch

    def snapshot():
        return ([p.value.data.copy() for p in params],
                [(bn.running_mean.copy(), bn.running_var.copy())
                 for _, bn in model.batchnorm_states()])

    def restore(snap):
        vals, stats = snap
        for p, v in zip(params, vals):
            p.value = Tensor(v.copy())
        for (_, bn), (rm, rv) in zip(model.batchnorm_states(), stats):
            bn.running_mean = rm.copy()
            bn.running_var = rv.copy()

    best = snapshot()
    best_epoch = 0
    history = []
    stopped = "max_epochs"

    for epoch in range(1, hp.max_epochs + 1):
        if n >= per_epoch:
            order = rng.permutation(n)[:per_epoch]
        else:
            order = rng.integers(0, n, size=per_epoch)
        epoch_loss = 0.0
        diverged = False
        for step in range(hp.steps_per_epoch):
            idx = order[step * hp.batch : (step + 1) * hp.batch]
            xb, yb = xs[idx], ys[idx]
            try:
                with GradTape() as tape:
                    out = model.forward(Tensor(xb), mode="train")
                    loss = bce_loss(out, Tensor(yb))
                lval = float(loss.data)
                if not np.isfinite(lval):
                    diverged = True
                    break
                T.backward(tape, loss)
                adam_step(state, params)
            except NumericError:
                diverged = True
                break
            for p in params:
                p.zero_grad()
            epoch_loss += lval
        if diverged:
            stopped = "diverged"
            break
        train_loss = epoch_loss / hp.steps_per_epoch
        val_loss = _val_loss(model, vxs, vys, hp.batch)
        prev_best = state.best_val_loss
        lr_schedule(state, val_loss, hp.lr_patience, hp.stop_patience)
        if val_loss < prev_best:
            best = snapshot()
            best_epoch = epoch
        history.append(EpochStats(epoch, train_loss, val_loss, state.lr))
        if log is not None:
            log(history[-1])
        if state.stop:
            stopped = "early"
            break

    restore(best)
    return TrainResult(history=history, best_epoch=best_epoch,
                       best_val_loss=state.best_val_loss, stopped=stopped,
                       stage=stage)
