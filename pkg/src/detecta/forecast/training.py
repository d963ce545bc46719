"""Window assembly, adaptive-moment training on MAE with early stopping,
evaluation in original units, and the naive baselines that contextualize the
forecast error."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .model import NHitsConfig, NHitsModel

logger = logging.getLogger(__name__)


class SeriesTooShort(Exception):
    pass


class DivergedLoss(Exception):
    def __init__(self, history):
        self.history = history
        super().__init__(f"validation MAE diverged: {history[-1]:.3g} vs initial {history[0]:.3g}")


class EmptyTestSet(Exception):
    pass


@dataclass
class UtilizationSeries:
    """Evenly resampled target series; ``segment`` increments at gaps."""

    ts: np.ndarray
    values: np.ndarray
    segment: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


def utilization_series(records, step_s: int = 15) -> UtilizationSeries:
    """Mean X/Y/Z utilization resampled into step_s bins.

    A gap marker or an empty bin starts a new segment so windows never span
    missing data.
    """
    ts_out, vals, segs = [], [], []
    seg = 0
    bin_start: int | None = None
    acc: list[float] = []
    step_ms = step_s * 1000
    expected_next = None
    for rec in records:
        if rec.get("kind") == "gap":
            if acc:
                ts_out.append(bin_start)
                vals.append(sum(acc) / len(acc))
                segs.append(seg)
                acc = []
            seg += 1
            bin_start = None
            expected_next = None
            continue
        if rec.get("kind") != "snapshot":
            continue
        u = (rec["x_util_pct"] + rec["y_util_pct"] + rec["z_util_pct"]) / 3.0
        t = rec["ts"]
        if bin_start is None:
            bin_start = t - (t % step_ms)
        while t >= bin_start + step_ms:
            if acc:
                ts_out.append(bin_start)
                vals.append(sum(acc) / len(acc))
                segs.append(seg)
                acc = []
            else:
                seg += 1  # empty bin: treat as a gap
            bin_start += step_ms
        acc.append(u)
    if acc:
        ts_out.append(bin_start)
        vals.append(sum(acc) / len(acc))
        segs.append(seg)
    return UtilizationSeries(
        np.array(ts_out, dtype=np.int64),
        np.array(vals, dtype=float),
        np.array(segs, dtype=np.int64),
    )


def make_windows(
    series: UtilizationSeries, input_len: int, horizon: int, stride: int = 1
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sliding (input, target) pairs; windows spanning a segment break are
    skipped.  Returns (inputs (N,L), targets (N,H), base_ts (N,))."""
    total = input_len + horizon
    if len(series) < total:
        raise SeriesTooShort(f"need {total} points, have {len(series)}")
    xs, ys, ts = [], [], []
    for start in range(0, len(series) - total + 1, stride):
        end = start + total
        if series.segment[start] != series.segment[end - 1]:
            continue
        xs.append(series.values[start:start + input_len])
        ys.append(series.values[start + input_len:end])
        ts.append(series.ts[start + input_len - 1])
    if not xs:
        raise SeriesTooShort("no gap-free windows")
    return np.array(xs), np.array(ys), np.array(ts, dtype=np.int64)


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


@dataclass
class TrainResult:
    model: NHitsModel
    train_curve: list[float] = field(default_factory=list)
    val_curve: list[float] = field(default_factory=list)
    best_epoch: int = 0
    wall_s: float = 0.0


def train(
    config: NHitsConfig, inputs: np.ndarray, targets: np.ndarray
) -> TrainResult:
    """Train on MAE with a 20 % time-ordered validation split, early stopping
    on validation MAE, and best-weights restore.  Deterministic under seed."""
    import time

    if len(inputs) < 1:
        raise SeriesTooShort("no training pairs")
    t_start = time.monotonic()
    n_val = max(1, int(round(len(inputs) * 0.2)))
    n_train = max(1, len(inputs) - n_val)
    x_train, y_train = inputs[:n_train], targets[:n_train]
    x_val, y_val = inputs[n_train:], targets[n_train:]
    if len(x_val) == 0:
        x_val, y_val = x_train, y_train

    mean = float(x_train.mean())
    std = float(x_train.std())
    std = std if std > 1e-9 else 1.0
    model = NHitsModel(config, scale_mean=mean, scale_std=std)

    def scale(a):
        return (a - mean) / std

    xs, ys = scale(x_train), scale(y_train)
    xv, yv = scale(x_val), scale(y_val)

    def val_mae() -> float:
        yhat, _ = model.forward(xv)
        return float(np.mean(np.abs(yhat - yv)))

    params = model.parameters()
    opt = Adam(params, lr=config.lr)
    rng = np.random.default_rng(config.seed + 1)

    initial = val_mae()
    best_val = initial
    best_weights = [p.copy() for p in params]
    best_epoch = 0
    since_best = 0
    train_curve, val_curve = [], []

    for epoch in range(config.epochs):
        order = rng.permutation(len(xs))
        epoch_losses = []
        for lo in range(0, len(order), config.batch):
            idx = order[lo:lo + config.batch]
            xb, yb = xs[idx], ys[idx]
            yhat, _, caches = model.forward(xb, keep_cache=True)
            diff = yhat - yb
            epoch_losses.append(float(np.mean(np.abs(diff))))
            d_yhat = np.sign(diff) / diff.size  # MAE subgradient, 0 at exact zero
            grads = model.backward(caches, d_yhat)
            opt.step(params, grads)
        train_curve.append(float(np.mean(epoch_losses)))
        v = val_mae()
        val_curve.append(v)
        if v > 10.0 * max(initial, 1e-12):
            raise DivergedLoss([initial, *val_curve])
        if v < best_val - 1e-12:
            best_val = v
            best_weights = [p.copy() for p in params]
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best > config.patience:
                break

    model.set_parameters(best_weights)
    return TrainResult(
        model=model,
        train_curve=train_curve,
        val_curve=val_curve,
        best_epoch=best_epoch,
        wall_s=time.monotonic() - t_start,
    )


def evaluate_mae(model: NHitsModel, inputs: np.ndarray, targets: np.ndarray):
    """MAE in original units plus the per-horizon-step error profile."""
    if len(inputs) == 0:
        raise EmptyTestSet("no test windows")
    xs = (inputs - model.scale_mean) / model.scale_std
    yhat, _ = model.forward(xs)
    yhat = yhat * model.scale_std + model.scale_mean
    err = np.abs(yhat - targets)
    return float(err.mean()), err.mean(axis=0)


def baseline_maes(
    inputs: np.ndarray, targets: np.ndarray, seasonal_period: int
) -> dict[str, float]:
    """naive-last repeats the final input value; seasonal-naive repeats the
    last known period."""
    if len(inputs) == 0:
        raise EmptyTestSet("no test windows")
    H = targets.shape[1]
    naive = np.repeat(inputs[:, -1:], H, axis=1)
    period = min(seasonal_period, inputs.shape[1])
    tail = inputs[:, -period:]
    idx = np.arange(H) % period
    seasonal = tail[:, idx]
    return {
        "naive_last": float(np.mean(np.abs(naive - targets))),
        "seasonal_naive": float(np.mean(np.abs(seasonal - targets))),
    }


def gradient_check(
    config: NHitsConfig,
    n_params: int = 100,
    batch: int = 4,
    eps: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between analytic gradients and central finite
    differences under squared-error loss (smooth, unlike the MAE objective).
    """
    rng = np.random.default_rng(seed)
    model = NHitsModel(config)
    # randomize every weight (incl. the zero-initialized knot heads) so the
    # check exercises all gradient paths
    model.set_parameters([rng.normal(0, 0.3, size=p.shape) for p in model.parameters()])
    x = rng.normal(size=(batch, config.input_len))
    y = rng.normal(size=(batch, config.horizon))

    def loss_and_grads():
        yhat, _, caches = model.forward(x, keep_cache=True)
        diff = yhat - y
        loss = float(np.mean(diff * diff))
        d_yhat = 2.0 * diff / diff.size
        return loss, model.backward(caches, d_yhat)

    _, grads = loss_and_grads()
    params = model.parameters()
    flat_sizes = [p.size for p in params]
    total = sum(flat_sizes)
    picks = rng.choice(total, size=min(n_params, total), replace=False)

    def loss_only():
        yhat, _ = model.forward(x)
        diff = yhat - y
        return float(np.mean(diff * diff))

    worst = 0.0
    for flat_idx in picks:
        pi = 0
        while flat_idx >= params[pi].size:
            flat_idx -= params[pi].size
            pi += 1
        multi = np.unravel_index(flat_idx, params[pi].shape)
        orig = params[pi][multi]
        params[pi][multi] = orig + eps
        up = loss_only()
        params[pi][multi] = orig - eps
        down = loss_only()
        params[pi][multi] = orig
        fd = (up - down) / (2 * eps)
        an = grads[pi][multi]
        rel = abs(fd - an) / max(abs(fd) + abs(an), 1e-8)
        worst = max(worst, rel)
    return worst
