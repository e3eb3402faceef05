"""Trainable-layer substrate: dense layer, stacked BiLSTM, losses, AdamW,
warmup-linear schedule, dropout and finite-difference gradient checking.

Everything is float64 numpy with the backward pass written out next to each
forward op; parameters live in flat ``dict[str, np.ndarray]`` trees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


# ---------------------------------------------------------------------------
# activations


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(logits, axis=-1):
    """Probability vector via max-subtracted exponentiation."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# dense layer


@dataclass
class DenseParams:
    weight: np.ndarray  # (d_in, d_out)
    bias: np.ndarray    # (d_out,)


def dense_init(d_in: int, d_out: int, rng: np.random.Generator) -> DenseParams:
    bound = 1.0 / np.sqrt(d_in)
    return DenseParams(
        weight=rng.uniform(-bound, bound, size=(d_in, d_out)),
        bias=np.zeros(d_out),
    )


def dense_forward(params: DenseParams, x: np.ndarray) -> np.ndarray:
    """x @ W + b for a single vector or a row-batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.weight.shape[0]:
        raise ValueError(
            f"dense input width {x.shape[-1]} != expected {params.weight.shape[0]}"
        )
    return x @ params.weight + params.bias


def dense_backward(params: DenseParams, x: np.ndarray, dout: np.ndarray):
    """Returns (dx, dW, db) for dense_forward at input x."""
    x2 = np.atleast_2d(x)
    d2 = np.atleast_2d(dout)
    dW = x2.T @ d2
    db = d2.sum(axis=0)
    dx = d2 @ params.weight.T
    return dx.reshape(np.shape(x)), dW, db


# ---------------------------------------------------------------------------
# losses


def weighted_cross_entropy(logits, target: int, class_weights) -> float:
    """-w_target * log softmax(logits)[target]."""
    return float(-np.asarray(class_weights)[target] * log_softmax(logits)[target])


def weighted_ce_batch(logits, targets, class_weights):
    """Mean weighted CE over rows plus the gradient w.r.t. the logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.int64)
    w = np.asarray(class_weights, dtype=np.float64)[targets]  # (B,)
    logp = log_softmax(logits, axis=1)
    n = logits.shape[0]
    loss = float(-(w * logp[np.arange(n), targets]).mean())
    dlogits = softmax(logits, axis=1)
    dlogits[np.arange(n), targets] -= 1.0
    dlogits *= w[:, None] / n
    return loss, dlogits


def binary_cross_entropy(logit, target) -> float:
    """Numerically stable BCE on a raw logit: max(z,0) - z*t + log(1+exp(-|z|))."""
    z = float(logit)
    t = float(target)
    return max(z, 0.0) - z * t + float(np.log1p(np.exp(-abs(z))))


def bce_batch(logits, targets):
    """Mean BCE over a batch of logits plus the gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    losses = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    dz = (sigmoid(z) - t) / z.size
    return float(losses.mean()), dz


# ---------------------------------------------------------------------------
# dropout


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability rate, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


# ---------------------------------------------------------------------------
# stacked bidirectional LSTM

_GATES = 4  # i, f, g, o


@dataclass(frozen=True)
class BiRNNStack:
    """Shape of a stacked BiLSTM: output width per step is 2*hidden_size."""

    input_size: int
    hidden_size: int
    n_layers: int
    inter_layer_dropout: float = 0.0


def _orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


def lstm_init(input_size: int, hidden_size: int, rng: np.random.Generator) -> dict:
    """One direction of one layer: uniform fan-in input weights, orthogonal
    recurrent weights, forget-gate bias +1."""
    bound = 1.0 / np.sqrt(input_size)
    W = rng.uniform(-bound, bound, size=(input_size, _GATES * hidden_size))
    U = np.concatenate([_orthogonal(hidden_size, rng) for _ in range(_GATES)], axis=1)
    b = np.zeros(_GATES * hidden_size)
    b[hidden_size: 2 * hidden_size] = 1.0
    return {"W": W, "U": U, "b": b}


def lstm_forward(W, U, b, x):
    """Run an LSTM over x (T, input_size); returns (h_seq (T, H), cache)."""
    T = x.shape[0]
    H = U.shape[0]
    h = np.zeros(H)
    c = np.zeros(H)
    hs = np.zeros((T, H))
    cache = {
        "x": x,
        "h_prev": np.zeros((T, H)),
        "c_prev": np.zeros((T, H)),
        "i": np.zeros((T, H)),
        "f": np.zeros((T, H)),
        "g": np.zeros((T, H)),
        "o": np.zeros((T, H)),
        "c": np.zeros((T, H)),
        "tanh_c": np.zeros((T, H)),
    }
    for t in range(T):
        z = x[t] @ W + h @ U + b
        i = sigmoid(z[:H])
        f = sigmoid(z[H: 2 * H])
        g = np.tanh(z[2 * H: 3 * H])
        o = sigmoid(z[3 * H:])
        cache["h_prev"][t] = h
        cache["c_prev"][t] = c
        c = f * c + i * g
        tanh_c = np.tanh(c)
        h = o * tanh_c
        cache["i"][t], cache["f"][t], cache["g"][t], cache["o"][t] = i, f, g, o
        cache["c"][t], cache["tanh_c"][t] = c, tanh_c
        hs[t] = h
    return hs, cache


def lstm_backward(W, U, b, cache, dh_seq):
    """BPTT through one direction; returns (dx, dW, dU, db)."""
    x = cache["x"]
    T, H = dh_seq.shape
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros_like(b)
    dx = np.zeros_like(x)
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        i, f, g, o = cache["i"][t], cache["f"][t], cache["g"][t], cache["o"][t]
        tanh_c = cache["tanh_c"][t]
        dh = dh_seq[t] + dh_next
        do = dh * tanh_c
        dc = dh * o * (1.0 - tanh_c ** 2) + dc_next
        df = dc * cache["c_prev"][t]
        di = dc * g
        dg = dc * i
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g ** 2),
            do * o * (1.0 - o),
        ])
        dW += np.outer(x[t], dz)
        dU += np.outer(cache["h_prev"][t], dz)
        db += dz
        dx[t] = dz @ W.T
        dh_next = dz @ U.T
        dc_next = dc * f
    return dx, dW, dU, db


def birnn_init(stack: BiRNNStack, rng: np.random.Generator) -> dict:
    """Flat parameter dict keyed l{layer}_{fwd,bwd}_{W,U,b}."""
    params = {}
    for layer in range(stack.n_layers):
        in_size = stack.input_size if layer == 0 else 2 * stack.hidden_size
        for direction in ("fwd", "bwd"):
            cell = lstm_init(in_size, stack.hidden_size, rng)
            for k, v in cell.items():
                params[f"l{layer}_{direction}_{k}"] = v
    return params


def birnn_forward(
    stack: BiRNNStack,
    params: dict,
    sequence: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """Top-layer per-step [h_fwd || h_bwd] outputs; returns (out (T, 2H), cache).

    Inter-layer dropout is applied to the inputs of layers 2..L while training.
    """
    x = np.asarray(sequence, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"birnn_forward expects a (T, D) sequence, got {x.shape}")
    if x.shape[1] != stack.input_size:
        raise ValueError(f"input width {x.shape[1]} != stack input size {stack.input_size}")
    caches = []
    for layer in range(stack.n_layers):
        mask = None
        if layer > 0 and training and stack.inter_layer_dropout > 0.0:
            if rng is None:
                raise ValueError("training birnn_forward with dropout needs an rng")
            mask = dropout_mask(x.shape, stack.inter_layer_dropout, rng)
            x = x * mask
        h_fwd, cache_fwd = lstm_forward(
            params[f"l{layer}_fwd_W"], params[f"l{layer}_fwd_U"], params[f"l{layer}_fwd_b"], x
        )
        h_bwd_rev, cache_bwd = lstm_forward(
            params[f"l{layer}_bwd_W"], params[f"l{layer}_bwd_U"], params[f"l{layer}_bwd_b"],
            x[::-1],
        )
        x = np.concatenate([h_fwd, h_bwd_rev[::-1]], axis=1)
        caches.append({"fwd": cache_fwd, "bwd": cache_bwd, "mask": mask})
    return x, caches


def birnn_backward(stack: BiRNNStack, params: dict, caches: list, dout: np.ndarray):
    """Returns (dx, grads) matching the birnn parameter dict layout."""
    H = stack.hidden_size
    grads = {}
    d = np.asarray(dout, dtype=np.float64)
    for layer in range(stack.n_layers - 1, -1, -1):
        cache = caches[layer]
        dx_fwd, dW, dU, db = lstm_backward(
            params[f"l{layer}_fwd_W"], params[f"l{layer}_fwd_U"], params[f"l{layer}_fwd_b"],
            cache["fwd"], d[:, :H],
        )
        grads[f"l{layer}_fwd_W"] = dW
        grads[f"l{layer}_fwd_U"] = dU
        grads[f"l{layer}_fwd_b"] = db
        dx_bwd_rev, dW, dU, db = lstm_backward(
            params[f"l{layer}_bwd_W"], params[f"l{layer}_bwd_U"], params[f"l{layer}_bwd_b"],
            cache["bwd"], d[:, H:][::-1],
        )
        grads[f"l{layer}_bwd_W"] = dW
        grads[f"l{layer}_bwd_U"] = dU
        grads[f"l{layer}_bwd_b"] = db
        d = dx_fwd + dx_bwd_rev[::-1]
        if cache["mask"] is not None:
            d = d * cache["mask"]
    return d, grads


# ---------------------------------------------------------------------------
# optimizer and schedule


@dataclass
class AdamWConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01


class AdamW:
    """Decoupled-weight-decay Adam over a flat parameter dict, in-place."""

    def __init__(self, params: dict[str, np.ndarray], config: AdamWConfig | None = None):
        self.config = config or AdamWConfig()
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float | None = None) -> None:
        cfg = self.config
        if lr is None:
            lr = cfg.lr
        b1, b2 = cfg.betas
        self.t += 1
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * cfg.weight_decay * p
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": v for k, v in self.m.items()}
        out.update({f"v/{k}": v for k, v in self.v.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.m = {k[2:]: arrays[k] for k in arrays if k.startswith("m/")}
        self.v = {k[2:]: arrays[k] for k in arrays if k.startswith("v/")}
        self.t = t


@dataclass(frozen=True)
class WarmupSchedule:
    """Linear ramp 0 -> peak over warmup_steps, then linear decay to 0."""

    warmup_steps: int
    total_steps: int
    peak_lr: float

    def __post_init__(self):
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError(
                f"warmup_steps {self.warmup_steps} must be in [0, total_steps"
                f" {self.total_steps}]"
            )
        if self.peak_lr <= 0:
            raise ValueError(f"peak_lr must be positive, got {self.peak_lr}")


def lr_at(schedule: WarmupSchedule, step: int) -> float:
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    if step <= schedule.warmup_steps:
        if schedule.warmup_steps == 0:
            return schedule.peak_lr
        return schedule.peak_lr * step / schedule.warmup_steps
    return (
        schedule.peak_lr
        * (schedule.total_steps - step)
        / (schedule.total_steps - schedule.warmup_steps)
    )


# ---------------------------------------------------------------------------
# gradient verification


def gradcheck(
    loss_and_grads,
    params: dict[str, np.ndarray],
    epsilon: float = 1e-5,
    max_entries_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grads(params) -> (loss, grads)`` must be deterministic (dropout
    off).  Relative error per entry is |a-n| / max(|a|, |n|, 1e-8).
    """
    _, grads = loss_and_grads(params)
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        g = np.asarray(grads[name]).reshape(-1)
        indices = range(flat.size)
        if max_entries_per_param is not None and flat.size > max_entries_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            indices = rng.choice(flat.size, size=max_entries_per_param, replace=False)
        for idx in indices:
            orig = flat[idx]
            flat[idx] = orig + epsilon
            up, _ = loss_and_grads(params)
            flat[idx] = orig - epsilon
            down, _ = loss_and_grads(params)
            flat[idx] = orig
            numeric = (up - down) / (2.0 * epsilon)
            analytic = g[idx]
            denom = max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst
