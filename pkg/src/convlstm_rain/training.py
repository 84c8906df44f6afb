"""Loss, backpropagation through time, gradient checking, Adam and the training loop."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .convlstm import CellParams, forward_with_cache, init_params, network_forward
from .tensor import (
    ACTIVATIONS,
    NonFiniteError,
    ShapeError,
    conv2d_input_grad,
    conv2d_kernel_grad,
    conv2d_same_backward,
)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_patience: int = 10
    seed: int = 0
    clip_norm: float | None = None
    loss: str = "mse"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0 or self.early_stop_patience < 1:
            raise ValueError("max_epochs must be >= 0 and early_stop_patience >= 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive when set")
        if self.loss != "mse":
            raise ValueError("only the mse loss is supported")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None
    seconds: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    stop_reason: str = ""

    @property
    def train_losses(self):
        return [e.train_loss for e in self.epochs]

    @property
    def val_losses(self):
        return [e.val_loss for e in self.epochs]


def format_log_line(rec):
    val = "nan" if rec.val_loss is None else repr(rec.val_loss)
    return f"{rec.epoch} {rec.train_loss!r} {val} {rec.seconds:.3f}"


def mse_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return float(np.mean((pred - target) ** 2))


# --- backpropagation through time -----------------------------------------

def _layer_backward(cell, seq, hs, cache, dhs, activation):
    """Backprop through one unrolled layer.

    ``dhs`` is the loss gradient w.r.t. every emitted hidden state, shaped like
    ``hs``. Returns the input-sequence gradient and the cell's parameter grads.
    """
    dgate = ACTIVATIONS[activation][1]
    n = cell.filters
    batch, steps = hs.shape[:2]
    wx, wh, _ = cell.stacked()
    da_all = np.empty((batch, steps, 4 * n) + hs.shape[3:])
    grads = {name: np.zeros_like(getattr(cell, name)) for name in ("W_ci", "W_cf", "W_co")}
    dh_next = np.zeros_like(hs[:, 0])
    dc_next = np.zeros_like(dh_next)
    for t in reversed(range(steps)):
        k = cache[t]
        i, f, o = k["i"], k["f"], k["o"]
        dh = dhs[:, t] + dh_next
        da_o = dh * k["gC"] * o * (1.0 - o)
        dc = dc_next + dh * o * dgate(k["c"], k["gC"]) + da_o * cell.W_co
        da_c = dc * i * dgate(k["a_c"], k["gc"])
        da_i = dc * k["gc"] * i * (1.0 - i)
        da_f = dc * k["c_prev"] * f * (1.0 - f)
        grads["W_co"] += (da_o * k["c"]).sum(axis=0)
        grads["W_ci"] += (da_i * k["c_prev"]).sum(axis=0)
        grads["W_cf"] += (da_f * k["c_prev"]).sum(axis=0)
        da = np.concatenate([da_i, da_f, da_c, da_o], axis=1)
        da_all[:, t] = da
        dh_next = conv2d_input_grad(da, wh)
        dc_next = dc * f + da_i * cell.W_ci + da_f * cell.W_cf
    h_prev = np.concatenate([np.zeros_like(hs[:, :1]), hs[:, :-1]], axis=1)
    dwh = conv2d_kernel_grad(h_prev, da_all, wh.shape)
    dseq, dwx, db = conv2d_same_backward(seq, wx, da_all)
    for gi, gate in enumerate("ifco"):
        sl = slice(gi * n, (gi + 1) * n)
        grads[f"W_x{gate}"] = dwx[sl]
        grads[f"W_h{gate}"] = dwh[sl]
        grads[f"b_{gate}"] = db[sl]
    return dseq, grads


def backward(spec, params, batch, targets):
    """Exact loss and gradients of ``mse_loss(network_forward(...), targets)``.

    Gradients are the batch mean (the loss is a mean), keyed like ``params``.
    """
    pred, cache = forward_with_cache(spec, params, batch)
    targets = np.asarray(targets, dtype=np.float64)
    loss = mse_loss(pred, targets)
    dpred = 2.0 * (pred - targets) / pred.size

    dh_last, dw_head, db_head = conv2d_same_backward(cache["h_last"], params["head.W"], dpred)
    grads = {"head.W": dw_head, "head.b": db_head}

    cell2 = CellParams.from_flat(params, "layer2")
    dhs2 = np.zeros_like(cache["hs2"])
    dhs2[:, -1] = dh_last
    dhs1, g2 = _layer_backward(cell2, cache["hs1"], cache["hs2"], cache["cache2"], dhs2, spec.activation)
    cell1 = CellParams.from_flat(params, "layer1")
    _, g1 = _layer_backward(cell1, cache["batch"], cache["hs1"], cache["cache1"], dhs1, spec.activation)

    for prefix, g in (("layer1", g1), ("layer2", g2)):
        for name, arr in g.items():
            grads[f"{prefix}.{name}"] = arr
    ordered = {}
    for name in params:
        arr = grads[name]
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite gradient for {name}")
        ordered[name] = arr
    return loss, ordered


def _loss_at(spec, params, batch, targets):
    return mse_loss(network_forward(spec, params, batch), targets)


def finite_difference_grads(spec, params, batch, targets, fd_step=1e-5):
    """Central-difference gradient of the loss for every parameter component."""
    work = {k: v.copy() for k, v in params.items()}
    out = {}
    for name, arr in work.items():
        g = np.empty_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + fd_step
            up = _loss_at(spec, work, batch, targets)
            flat[j] = orig - fd_step
            down = _loss_at(spec, work, batch, targets)
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * fd_step)
        out[name] = g
    return out


def grad_check(spec, params, batch, targets, fd_step=1e-5, grads=None):
    """Max over components of ``|analytic - fd| / max(1, |fd|)``.

    ``grads`` defaults to :func:`backward`; pass a gradient set to audit it instead.
    """
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    if grads is None:
        _, grads = backward(spec, params, batch, targets)
    numeric = finite_difference_grads(spec, params, batch, targets, fd_step)
    worst = 0.0
    for name, fd in numeric.items():
        err = np.abs(grads[name] - fd) / np.maximum(1.0, np.abs(fd))
        worst = max(worst, float(err.max()))
    return worst


def relu_kink_margin(spec, params, batch):
    """Smallest |pre-activation| fed to the cell activation (ignoring exact zeros of C).

    Finite-difference checks in relu mode are only meaningful when this is
    comfortably larger than the FD step.
    """
    _, cache = forward_with_cache(spec, params, batch)
    margin = math.inf
    for steps in (cache["cache1"], cache["cache2"]):
        for k in steps:
            margin = min(margin, float(np.abs(k["a_c"]).min()))
            c = np.abs(k["c"])
            nz = c[c > 0]
            if nz.size:
                margin = min(margin, float(nz.min()))
    return margin


# --- optimizer ------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()})


def adam_step(params, grads, state, config, t, frozen=()):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``.

    Names listed in ``frozen`` are left untouched.
    """
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    lr, b1, b2, eps = config.learning_rate, config.beta1, config.beta2, config.epsilon
    new_params, m_new, v_new = {}, {}, {}
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for name, p in params.items():
        if name in frozen:
            new_params[name], m_new[name], v_new[name] = p, state.m[name], state.v[name]
            continue
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / corr1
        v_hat = v / corr2
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(m_new, v_new, t)


def clip_by_global_norm(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


# --- training loop --------------------------------------------------------

class ArrayWindows:
    """In-memory (x, y) pairs; x is (n, time, C, h, w) and y is (n, 1, h, w)."""

    def __init__(self, x, y):
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        if len(self.x) != len(self.y):
            raise ShapeError("x and y hold different sample counts")

    def __len__(self):
        return len(self.x)

    def batch(self, indices):
        return self.x[indices], self.y[indices]


def _as_source(data):
    if data is None:
        return ArrayWindows(np.empty((0, 1, 1, 1, 1)), np.empty((0, 1, 1, 1)))
    if isinstance(data, tuple):
        return ArrayWindows(*data)
    return data


def predict(spec, params, data, chunk=512):
    """Network predictions (n, 1, h, w) for every sample of ``data``."""
    src = _as_source(data)
    out = []
    for start in range(0, len(src), chunk):
        x, _ = src.batch(np.arange(start, min(start + chunk, len(src))))
        out.append(network_forward(spec, params, x))
    if not out:
        return np.empty((0, 1) + tuple(spec.grid))
    return np.concatenate(out)


def evaluate_loss(spec, params, data, chunk=512):
    src = _as_source(data)
    total, count = 0.0, 0
    for start in range(0, len(src), chunk):
        x, y = src.batch(np.arange(start, min(start + chunk, len(src))))
        pred = network_forward(spec, params, x)
        total += float(np.sum((pred - y) ** 2))
        count += pred.size
    return total / count


def train(spec, train_data, val_data, config, params=None, on_epoch=None):
    """Mini-batch Adam with early stopping on validation loss.

    ``train_data``/``val_data`` are ``(x, y)`` array pairs or any object with
    ``__len__`` and ``batch(indices) -> (x, y)``. An empty validation set
    disables early stopping. Returns ``(best_params, TrainHistory)``.
    """
    train_src = _as_source(train_data)
    val_src = _as_source(val_data)
    if len(train_src) == 0:
        raise ValueError("training split is empty")
    if params is None:
        params = init_params(spec, config.seed)
    params = {k: v.copy() for k, v in params.items()}
    frozen = spec.frozen_names()
    for name in frozen:
        params[name] = np.zeros_like(params[name])

    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros_like(params)
    history = TrainHistory()
    best_params = {k: v.copy() for k, v in params.items()}
    best_val = math.inf
    since_best = 0
    step = 0
    n = len(train_src)
    use_val = len(val_src) > 0

    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        diverged = False
        for start in range(0, n, config.batch_size):
            idx = np.sort(order[start:start + config.batch_size])
            x, y = train_src.batch(idx)
            try:
                loss, grads = backward(spec, params, x, y)
            except NonFiniteError:
                diverged = True
                break
            if not math.isfinite(loss):
                diverged = True
                break
            if config.clip_norm is not None:
                grads = clip_by_global_norm(grads, config.clip_norm)
            step += 1
            params, state = adam_step(params, grads, state, config, step, frozen)
            total += loss * len(idx)
        if diverged:
            history.stop_reason = "diverged"
            break
        train_loss = total / n
        val_loss = None
        if use_val:
            try:
                val_loss = evaluate_loss(spec, params, val_src)
            except NonFiniteError:
                val_loss = math.nan
            if not math.isfinite(val_loss):
                history.stop_reason = "diverged"
                break
        rec = EpochRecord(epoch, train_loss, val_loss, time.perf_counter() - started)
        history.epochs.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if not use_val:
            best_params = {k: v.copy() for k, v in params.items()}
            history.best_epoch = epoch
            continue
        if val_loss < best_val:
            best_val = val_loss
            best_params = {k: v.copy() for k, v in params.items()}
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.early_stop_patience:
                history.stop_reason = "early_stop"
                break
    if not history.stop_reason:
        history.stop_reason = "max_epochs"
    return best_params, history
