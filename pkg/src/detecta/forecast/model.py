"""Hierarchical-interpolation forecaster.

Stacks chain on residuals: each block max-pools the input at its own rate,
runs a small MLP, and emits backcast/forecast knots that are linearly
interpolated back to full length; the forecast is the sum of the stack
forecasts.  Forward and backward passes are explicit numpy; gradients are
checked against central finite differences in the test suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import SCHEMA_VERSION


class NonFiniteInput(Exception):
    pass


@dataclass(frozen=True)
class NHitsConfig:
    input_len: int = 500
    horizon: int = 100
    step_s: int = 15
    kernels: tuple[int, ...] = (8, 4, 1)     # max-pooling kernel per stack
    ratios: tuple[int, ...] = (16, 8, 1)     # knot downsampling ratio per stack
    hidden: tuple[int, ...] = (64, 64)
    epochs: int = 100
    batch: int = 64
    lr: float = 1e-3
    seed: int = 0
    patience: int = 10

    def __post_init__(self):
        if any(k < 1 for k in self.kernels):
            raise ValueError("kernels must be >= 1")
        if list(self.kernels) != sorted(self.kernels, reverse=True):
            raise ValueError("kernels must be nonincreasing across stacks")
        if len(self.kernels) != len(self.ratios):
            raise ValueError("one ratio per stack")
        if self.input_len < max(self.kernels):
            raise ValueError("input_len must cover the largest kernel")

    @property
    def n_stacks(self) -> int:
        return len(self.kernels)

    def pooled_len(self, s: int) -> int:
        return math.ceil(self.input_len / self.kernels[s])

    def forecast_knots(self, s: int) -> int:
        return min(max(math.ceil(self.horizon / self.ratios[s]), 2), self.horizon)

    def backcast_knots(self, s: int) -> int:
        return min(max(math.ceil(self.input_len / self.ratios[s]), 2), self.input_len)

    def to_json(self) -> dict:
        return {
            "input_len": self.input_len, "horizon": self.horizon,
            "step_s": self.step_s, "kernels": list(self.kernels),
            "ratios": list(self.ratios), "hidden": list(self.hidden),
            "epochs": self.epochs, "batch": self.batch, "lr": self.lr,
            "seed": self.seed, "patience": self.patience,
        }

    @staticmethod
    def from_json(d: dict) -> "NHitsConfig":
        d = dict(d)
        for k in ("kernels", "ratios", "hidden"):
            d[k] = tuple(d[k])
        return NHitsConfig(**d)


def interp_matrix(n_out: int, n_knots: int) -> np.ndarray:
    """(n_out, n_knots) linear-interpolation weights: knots sit at
    linspace(0, n_out-1, n_knots), evaluated on the integer grid."""
    return interp_matrix_at(np.arange(n_out, dtype=float), n_out, n_knots)


def interp_matrix_at(positions: np.ndarray, span: int, n_knots: int) -> np.ndarray:
    knots = np.linspace(0.0, span - 1.0, n_knots)
    W = np.zeros((len(positions), n_knots))
    for i, t in enumerate(positions):
        j = int(np.searchsorted(knots, t, side="right")) - 1
        j = min(max(j, 0), n_knots - 2)
        denom = knots[j + 1] - knots[j]
        w = (t - knots[j]) / denom if denom > 0 else 0.0
        W[i, j] = 1.0 - w
        W[i, j + 1] = w
    return W


@dataclass
class _Stack:
    W: list[np.ndarray]      # MLP weights, layer by layer
    b: list[np.ndarray]
    q_back: int
    q_fore: int
    back_interp: np.ndarray  # (L, q_back)
    fore_interp: np.ndarray  # (H, q_fore)


class NHitsModel:
    """Weights + scaling for one forecaster instance."""

    def __init__(self, config: NHitsConfig, scale_mean: float = 0.0, scale_std: float = 1.0):
        self.config = config
        self.scale_mean = scale_mean
        self.scale_std = scale_std
        self.stacks: list[_Stack] = []
        self._init_weights()

    def _init_weights(self) -> None:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        self.stacks = []
        for s in range(cfg.n_stacks):
            dims = [cfg.pooled_len(s), *cfg.hidden,
                    cfg.backcast_knots(s) + cfg.forecast_knots(s)]
            W, b = [], []
            for d_in, d_out in zip(dims, dims[1:]):
                W.append(rng.normal(0.0, math.sqrt(2.0 / d_in), size=(d_in, d_out)))
                b.append(np.zeros(d_out))
            # knot heads start inert: the residual chain is the identity at
            # init and backcasts grow only where they help the forecast
            W[-1][:] = 0.0
            self.stacks.append(
                _Stack(
                    W=W, b=b,
                    q_back=cfg.backcast_knots(s),
                    q_fore=cfg.forecast_knots(s),
                    back_interp=interp_matrix(cfg.input_len, cfg.backcast_knots(s)),
                    fore_interp=interp_matrix(cfg.horizon, cfg.forecast_knots(s)),
                )
            )

    # -- parameter plumbing ---------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        out = []
        for st in self.stacks:
            out.extend(st.W)
            out.extend(st.b)
        return out

    def set_parameters(self, params: list[np.ndarray]) -> None:
        i = 0
        for st in self.stacks:
            for j in range(len(st.W)):
                st.W[j] = params[i]
                i += 1
            for j in range(len(st.b)):
                st.b[j] = params[i]
                i += 1

    # -- forward / backward ---------------------------------------------------

    def _pool(self, x: np.ndarray, kernel: int) -> tuple[np.ndarray, np.ndarray]:
        B, L = x.shape
        m = math.ceil(L / kernel)
        padded = np.full((B, m * kernel), -np.inf)
        padded[:, :L] = x
        windows = padded.reshape(B, m, kernel)
        arg = windows.argmax(axis=2)
        pooled = windows[np.arange(B)[:, None], np.arange(m)[None, :], arg]
        src = arg + np.arange(m)[None, :] * kernel  # index into padded/original
        return pooled, src

    def forward(self, x: np.ndarray, keep_cache: bool = False):
        """x: (B, L) in scaled units -> (forecast (B, H), per-stack forecasts).

        With keep_cache=True also returns the cache needed by backward().
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if not np.all(np.isfinite(x)):
            raise NonFiniteInput("window holds non-finite values")
        cfg = self.config
        B = len(x)
        total = np.zeros((B, cfg.horizon))
        partials = []
        caches = []
        cur = x
        for s, st in enumerate(self.stacks):
            pooled, src = self._pool(cur, cfg.kernels[s])
            acts = [pooled]
            pre = []
            h = pooled
            for j, (W, b) in enumerate(zip(st.W, st.b)):
                z = h @ W + b
                pre.append(z)
                h = np.maximum(z, 0.0) if j < len(st.W) - 1 else z
                acts.append(h)
            theta_b = h[:, :st.q_back]
            theta_f = h[:, st.q_back:]
            backcast = theta_b @ st.back_interp.T
            fore = theta_f @ st.fore_interp.T
            partials.append(fore)
            total += fore
            if keep_cache:
                caches.append({"acts": acts, "pre": pre, "src": src, "x_in": cur})
            cur = cur - backcast
        if keep_cache:
            return total, partials, caches
        return total, partials

    def backward(self, caches: list[dict], d_yhat: np.ndarray) -> list[np.ndarray]:
        """Gradients of the loss w.r.t. parameters(), given dL/d(forecast)."""
        cfg = self.config
        grads_per_stack: list[tuple[list[np.ndarray], list[np.ndarray]]] = [None] * cfg.n_stacks
        B, L = d_yhat.shape[0], cfg.input_len
        g_x = np.zeros((B, L))  # dL/d x_{s+1}
        for s in reversed(range(cfg.n_stacks)):
            st = self.stacks[s]
            cache = caches[s]
            d_theta_f = d_yhat @ st.fore_interp
            d_theta_b = (-g_x) @ st.back_interp
            d_out = np.concatenate([d_theta_b, d_theta_f], axis=1)
            dW = [None] * len(st.W)
            db = [None] * len(st.b)
            g = d_out
            for j in reversed(range(len(st.W))):
                if j < len(st.W) - 1:
                    g = g * (cache["pre"][j] > 0)
                dW[j] = cache["acts"][j].T @ g
                db[j] = g.sum(axis=0)
                if j > 0:
                    g = g @ st.W[j].T
            d_pooled = g @ st.W[0].T
            # route pooled gradient back to the argmax source positions
            src = cache["src"]
            d_x_pool = np.zeros((B, L))
            rows = np.repeat(np.arange(B), src.shape[1])
            cols = src.ravel()
            keep = cols < L
            np.add.at(d_x_pool, (rows[keep], cols[keep]), d_pooled.ravel()[keep])
            grads_per_stack[s] = (dW, db)
            g_x = g_x + d_x_pool  # dL/d x_s
        out: list[np.ndarray] = []
        for dW, db in grads_per_stack:
            out.extend(dW)
            out.extend(db)
        return out

    # -- prediction in original units ------------------------------------------

    def predict(self, window_values: np.ndarray) -> np.ndarray:
        """H-step forecast in original units from an original-units window."""
        w = (np.asarray(window_values, dtype=float) - self.scale_mean) / self.scale_std
        yhat, _ = self.forward(w[None, :])
        return yhat[0] * self.scale_std + self.scale_mean

    # -- persistence ------------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "forecast_model",
            "config": self.config.to_json(),
            "scale_mean": self.scale_mean,
            "scale_std": self.scale_std,
            "stacks": [
                {"W": [w.tolist() for w in st.W], "b": [b.tolist() for b in st.b]}
                for st in self.stacks
            ],
        }

    @staticmethod
    def from_json(d: dict) -> "NHitsModel":
        model = NHitsModel(NHitsConfig.from_json(d["config"]), d["scale_mean"], d["scale_std"])
        for st, sd in zip(model.stacks, d["stacks"]):
            st.W = [np.array(w, dtype=float) for w in sd["W"]]
            st.b = [np.array(b, dtype=float) for b in sd["b"]]
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @staticmethod
    def load(path: str | Path) -> "NHitsModel":
        return NHitsModel.from_json(json.loads(Path(path).read_text()))


@dataclass
class ForecastSeries:
    base_ts: int
    step_s: int
    values: list[float]
    model_version: str = ""

    @property
    def timestamps(self) -> list[int]:
        return [self.base_ts + (i + 1) * self.step_s * 1000 for i in range(len(self.values))]

    def to_json(self) -> dict:
        return {
            "base_ts": self.base_ts,
            "step_s": self.step_s,
            "values": self.values,
            "timestamps": self.timestamps,
            "model_version": self.model_version,
        }
