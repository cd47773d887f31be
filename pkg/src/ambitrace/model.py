"""Sequence regressor: two-layer unidirectional LSTM with a tanh head.

Implemented directly in numpy (float64) so that training is bitwise
reproducible from a seed and the backward pass can be verified against
finite differences.  Training minimizes the concordance loss
1 - ccc(pred, target) per segment with Adam; a separate model instance
is trained per target channel (mu-like or sigma-like).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .metrics import CCC_DENOM_GUARD

CHECKPOINT_MAGIC = "ambitrace-checkpoint"
ADAM_EPS = 1e-8


class TrainingError(RuntimeError):
    """Training could not proceed (empty data or unusable targets)."""


@dataclass
class ModelConfig:
    input_dim: int
    hidden_dim: int = 64
    num_layers: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.input_dim <= 0 or self.hidden_dim <= 0:
            raise ValueError("dimensions must be positive")
        if self.num_layers != 2:
            raise ValueError("the architecture is fixed at two recurrent layers")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    max_epochs: int = 100
    segment_length: int = 100
    batch_segments: int = 8
    target_margin: float = 0.9

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("rates must be non-negative")
        if self.segment_length < 2:
            raise ValueError("segment_length must be at least 2 (loss needs variance)")
        if self.max_epochs < 0 or self.batch_segments < 1:
            raise ValueError("invalid epoch or batch setting")
        if not 0 < self.target_margin <= 1:
            raise ValueError("target_margin must be in (0, 1]")


@dataclass
class TargetScaling:
    """Affine map of raw targets into the head's range, kept for inversion."""

    scale: float = 1.0
    shift: float = 0.0

    @classmethod
    def fit(cls, values, margin=0.9) -> "TargetScaling":
        values = np.asarray(values, dtype=float)
        lo, hi = values.min(), values.max()
        if hi == lo:
            return cls(scale=1.0, shift=-lo)  # constant target maps to 0
        scale = 2.0 * margin / (hi - lo)
        shift = -margin - scale * lo
        return cls(scale=float(scale), shift=float(shift))

    def apply(self, values):
        return np.asarray(values, dtype=float) * self.scale + self.shift

    def invert(self, values):
        return (np.asarray(values, dtype=float) - self.shift) / self.scale


def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per tensor."""
    rng = np.random.default_rng(cfg.seed)
    params = {}
    h = cfg.hidden_dim
    for layer in range(cfg.num_layers):
        d_in = cfg.input_dim if layer == 0 else h
        for name, shape, fan in (
            (f"l{layer}.Wx", (d_in, 4 * h), d_in),
            (f"l{layer}.Wh", (h, 4 * h), h),
            (f"l{layer}.b", (4 * h,), h),
        ):
            bound = 1.0 / np.sqrt(fan)
            params[name] = rng.uniform(-bound, bound, size=shape)
    bound = 1.0 / np.sqrt(h)
    params["head.w"] = rng.uniform(-bound, bound, size=(h,))
    params["head.b"] = rng.uniform(-bound, bound, size=(1,))
    return params


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _forward(params, cfg, x):
    """Run a (B, T, D) batch through the network; returns outputs and cache."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.shape[2] != cfg.input_dim:
        raise ValueError(f"expected input_dim {cfg.input_dim}, got {x.shape[2]}")
    B, T, _ = x.shape
    H = cfg.hidden_dim
    layer_caches = []
    inp = x
    for layer in range(cfg.num_layers):
        Wx = params[f"l{layer}.Wx"]
        Wh = params[f"l{layer}.Wh"]
        b = params[f"l{layer}.b"]
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        hs = np.empty((B, T, H))
        cache = {"inp": inp, "i": [], "f": [], "g": [], "o": [], "c": [], "h_prev": []}
        for t in range(T):
            z = inp[:, t, :] @ Wx + h @ Wh + b
            i = _sigmoid(z[:, :H])
            f = _sigmoid(z[:, H : 2 * H])
            g = np.tanh(z[:, 2 * H : 3 * H])
            o = _sigmoid(z[:, 3 * H :])
            cache["h_prev"].append(h)
            c = f * c + i * g
            h = o * np.tanh(c)
            for key, val in (("i", i), ("f", f), ("g", g), ("o", o), ("c", c)):
                cache[key].append(val)
            hs[:, t, :] = h
        cache["hs"] = hs
        layer_caches.append(cache)
        inp = hs
    s = inp @ params["head.w"] + params["head.b"][0]
    y = np.tanh(s)
    cache_all = {"x": x, "layers": layer_caches, "top": inp, "y": y}
    return (y[0] if squeeze else y), cache_all


def forward(model_or_params, cfg_or_none=None, features=None):
    """Raw head outputs in (-1, 1); causal in the time dimension.

    Accepts either ``forward(trained_model, features=...)`` or the
    low-level ``forward(params, cfg, features)`` form.
    """
    if isinstance(model_or_params, TrainedModel):
        params, cfg = model_or_params.params, model_or_params.config
        x = cfg_or_none if features is None else features
    else:
        params, cfg, x = model_or_params, cfg_or_none, features
    y, _ = _forward(params, cfg, x)
    return y


def _backward(params, cfg, cache, dy):
    """Gradients of a scalar loss w.r.t. all parameters, given d loss/d y."""
    x = cache["x"]
    B, T, _ = x.shape
    H = cfg.hidden_dim
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dy = np.asarray(dy)
    if dy.ndim == 1:
        dy = dy[None]
    ds = dy * (1.0 - cache["y"] ** 2)
    top = cache["top"]
    grads["head.w"] = np.einsum("btH,bt->H", top, ds)
    grads["head.b"] = np.array([ds.sum()])
    d_inp = ds[:, :, None] * params["head.w"][None, None, :]

    for layer in range(cfg.num_layers - 1, -1, -1):
        lc = cache["layers"][layer]
        Wx = params[f"l{layer}.Wx"]
        Wh = params[f"l{layer}.Wh"]
        dWx = np.zeros_like(Wx)
        dWh = np.zeros_like(Wh)
        db = np.zeros_like(params[f"l{layer}.b"])
        d_below = np.zeros_like(lc["inp"])
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            i, f, g, o = lc["i"][t], lc["f"][t], lc["g"][t], lc["o"][t]
            c = lc["c"][t]
            c_prev = lc["c"][t - 1] if t > 0 else np.zeros((B, H))
            tanh_c = np.tanh(c)
            dh = d_inp[:, t, :] + dh_next
            do = dh * tanh_c
            dc = dh * o * (1.0 - tanh_c**2) + dc_next
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dc_next = dc * f
            dz = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g**2),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            dWx += lc["inp"][:, t, :].T @ dz
            dWh += lc["h_prev"][t].T @ dz
            db += dz.sum(axis=0)
            dh_next = dz @ Wh.T
            d_below[:, t, :] = dz @ Wx.T
        grads[f"l{layer}.Wx"] = dWx
        grads[f"l{layer}.Wh"] = dWh
        grads[f"l{layer}.b"] = db
        d_inp = d_below
    return grads


def ccc_loss_grad(pred, target):
    """Concordance loss 1 - ccc and its gradient w.r.t. the prediction.

    Degenerate segments (flat prediction and target with equal means)
    fall back to loss 1 with zero gradient, mirroring the metric guard.
    """
    x = np.asarray(pred, dtype=float)
    y = np.asarray(target, dtype=float)
    n = len(x)
    mx, my = x.mean(), y.mean()
    xc, yc = x - mx, y - my
    cov = (xc * yc).mean()
    denom = x.var() + y.var() + (mx - my) ** 2
    if denom < CCC_DENOM_GUARD:
        return 1.0, np.zeros_like(x)
    value = 2.0 * cov / denom
    dcov = yc / n
    ddenom = 2.0 * xc / n + 2.0 * (mx - my) / n
    dccc = (2.0 * dcov - value * ddenom) / denom
    return 1.0 - value, -dccc


class Adam:
    """Adam with a per-step multiplicative weight-decay shrink.

    Decay is applied as ``w *= (1 - weight_decay)`` after the moment
    update so the norm contracts every step regardless of the learning
    rate.
    """

    def __init__(self, params, learning_rate, weight_decay, beta1=0.9, beta2=0.999):
        self.lr = learning_rate
        self.wd = weight_decay
        self.beta1, self.beta2 = beta1, beta2
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for k, w in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            w -= self.lr * (self.m[k] / b1t) / (np.sqrt(self.v[k] / b2t) + ADAM_EPS)
            if self.wd:
                w *= 1.0 - self.wd


@dataclass
class TrainedModel:
    params: dict
    config: ModelConfig
    scaling: TargetScaling
    best_epoch: int = 0
    skipped_segments: int = 0


def _segment(features, targets, segment_length):
    segments = []
    for X, y in zip(features, targets):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if len(X) != len(y):
            raise TrainingError("feature/target length mismatch")
        for start in range(0, len(X), segment_length):
            xs = X[start : start + segment_length]
            ys = y[start : start + segment_length]
            if len(xs) >= 2:
                segments.append((xs, ys))
    return segments


def _validation_loss(params, cfg, val_features, val_targets_scaled):
    losses = []
    for X, y in zip(val_features, val_targets_scaled):
        pred, _ = _forward(params, cfg, np.asarray(X, dtype=float))
        loss, _ = ccc_loss_grad(pred, y)
        losses.append(loss)
    return float(np.mean(losses))


def train(
    features,
    targets,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    val_features,
    val_targets,
) -> TrainedModel:
    """Fit one target channel; keeps the epoch with best validation loss.

    ``features``/``targets`` are lists of per-sequence arrays.  Targets
    are scaled into [-margin, margin] from the training-split range
    before fitting; the scaling travels with the returned model.
    Deterministic given (seed, data, config).
    """
    if not features or not val_features:
        raise TrainingError("empty training or validation set")
    scaling = TargetScaling.fit(
        np.concatenate([np.asarray(t, dtype=float) for t in targets]),
        margin=train_cfg.target_margin,
    )
    targets_scaled = [scaling.apply(t) for t in targets]
    val_scaled = [scaling.apply(t) for t in val_targets]
    segments = _segment(features, targets_scaled, train_cfg.segment_length)
    if not segments:
        raise TrainingError("no trainable segments")
    usable = [s for s in segments if np.ptp(s[1]) > 0]
    if not usable:
        raise TrainingError("all segments have constant targets; loss is undefined")
    skipped_static = len(segments) - len(usable)

    params = init_params(model_cfg)
    best_params = {k: v.copy() for k, v in params.items()}
    best_loss = _validation_loss(params, model_cfg, val_features, val_scaled)
    best_epoch = 0
    skipped = skipped_static

    opt = Adam(params, train_cfg.learning_rate, train_cfg.weight_decay)
    rng = np.random.default_rng(model_cfg.seed + 1)
    # Batches mix only equal-length segments so sequences stay unpadded.
    by_length = {}
    for idx, (xs, _) in enumerate(usable):
        by_length.setdefault(len(xs), []).append(idx)

    for epoch in range(1, train_cfg.max_epochs + 1):
        order = rng.permutation(len(usable))
        batches = []
        buckets = {length: [] for length in by_length}
        for idx in order:
            length = len(usable[idx][0])
            buckets[length].append(idx)
            if len(buckets[length]) == train_cfg.batch_segments:
                batches.append(buckets[length])
                buckets[length] = []
        batches.extend(b for b in buckets.values() if b)
        for batch in batches:
            X = np.stack([usable[i][0] for i in batch])
            Y = np.stack([usable[i][1] for i in batch])
            preds, cache = _forward(params, model_cfg, X)
            dy = np.zeros_like(preds)
            total = 0.0
            counted = 0
            for row in range(len(batch)):
                loss, grad = ccc_loss_grad(preds[row], Y[row])
                if np.any(grad):
                    dy[row] = grad
                    counted += 1
                else:
                    skipped += 1
                total += loss
            if counted == 0:
                continue
            dy /= counted
            grads = _backward(params, model_cfg, cache, dy)
            opt.step(params, grads)
        val_loss = _validation_loss(params, model_cfg, val_features, val_scaled)
        if val_loss < best_loss:
            best_loss = val_loss
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}

    return TrainedModel(
        params=best_params,
        config=model_cfg,
        scaling=scaling,
        best_epoch=best_epoch,
        skipped_segments=skipped,
    )


def predict(model: TrainedModel, features):
    """Forward pass mapped back to original target units."""
    if model.scaling is None:
        raise ValueError("model is missing target-scaling metadata")
    return model.scaling.invert(forward(model, features))


def gradient_check(
    input_dim=3, hidden_dim=4, steps=5, seed=0, h=1e-5, zero_feature=None
):
    """Max relative error between analytic and central-difference gradients.

    Runs one CCC-loss backward pass on a random tiny instance and
    perturbs every parameter entry.  ``zero_feature`` blanks a feature
    column so the corresponding input weights receive zero gradient.
    """
    cfg = ModelConfig(input_dim=input_dim, hidden_dim=hidden_dim, seed=seed)
    rng = np.random.default_rng(seed + 10_000)
    x = rng.normal(size=(steps, input_dim))
    if zero_feature is not None:
        x[:, zero_feature] = 0.0
    target = rng.normal(size=steps)
    params = init_params(cfg)

    def loss_at(p):
        pred, _ = _forward(p, cfg, x)
        value, _ = ccc_loss_grad(pred, target)
        return value

    pred, cache = _forward(params, cfg, x)
    _, dy = ccc_loss_grad(pred, target)
    analytic = _backward(params, cfg, cache, dy)

    max_err = 0.0
    for key, w in params.items():
        flat = w.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = loss_at(params)
            flat[j] = orig - h
            down = loss_at(params)
            flat[j] = orig
            numeric = (up - down) / (2.0 * h)
            a = analytic[key].ravel()[j]
            scale = max(abs(a), abs(numeric))
            # Below ~1e-6 the central difference is dominated by float
            # roundoff, so compare absolutely there.
            err = abs(a - numeric) if scale < 1e-6 else abs(a - numeric) / scale
            max_err = max(max_err, err)
    return max_err


# --- checkpoint I/O ---------------------------------------------------------


def save_checkpoint(model: TrainedModel, path):
    """Structured-text header plus little-endian float64 weight blocks."""
    layout = [[name, list(model.params[name].shape)] for name in sorted(model.params)]
    header = {
        "magic": CHECKPOINT_MAGIC,
        "format_version": 1,
        "config": asdict(model.config),
        "scaling": asdict(model.scaling),
        "best_epoch": model.best_epoch,
        "skipped_segments": model.skipped_segments,
        "layout": layout,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for name, _ in layout:
            fh.write(model.params[name].astype("<f8").tobytes())


def load_checkpoint(path) -> TrainedModel:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        params = {}
        for name, shape in header["layout"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated weight block for {name}")
            params[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return TrainedModel(
        params=params,
        config=ModelConfig(**header["config"]),
        scaling=TargetScaling(**header["scaling"]),
        best_epoch=header["best_epoch"],
        skipped_segments=header.get("skipped_segments", 0),
    )
