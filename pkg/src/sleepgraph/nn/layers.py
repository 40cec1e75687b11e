"""Reverse-mode differentiable building blocks in float64 numpy.

Each layer caches its forward activations and exposes an explicit backward
that accumulates parameter gradients and returns the gradient with respect to
its inputs. Graph layers take batched inputs (B, n, features) with a per-item
adjacency (B, n, n); 2-D inputs are accepted and treated as a batch of one.
There is no general-purpose tape: models chain these blocks by hand.
"""

from __future__ import annotations

import numpy as np


class NumericalError(FloatingPointError):
    """A layer produced NaN or Inf."""


def _check_finite(name: str, arr: np.ndarray):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values in {name}")


class Parameter:
    """Trainable tensor with its gradient and ADAM moment buffers."""

    __slots__ = ("value", "grad", "m", "v")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    ex = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, ex) / (1.0 + ex)


def _relu(x):
    return np.maximum(x, 0.0)


def _drelu(pre, out):
    return (pre > 0).astype(np.float64)


def _dsigmoid(pre, out):
    return out * (1.0 - out)


def _dtanh(pre, out):
    return 1.0 - out * out


ACTIVATIONS = {
    "relu": (_relu, _drelu),
    "sigmoid": (sigmoid, _dsigmoid),
    "tanh": (np.tanh, _dtanh),
    "identity": (lambda x: x, lambda pre, out: np.ones_like(pre)),
}


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x[None, ...], True
    return x, False


class Layer:
    """Base: named parameters plus bookkeeping shared by all blocks."""

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, Parameter] = {}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.params.values())


class Dense(Layer):
    """act(X W + b) on row-major 2-D input."""

    def __init__(self, n_in: int, n_out: int, activation: str = "identity",
                 rng: np.random.Generator | None = None, name: str = "dense"):
        super().__init__(name)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.activation = activation
        self.act, self.dact = ACTIVATIONS[activation]
        self.params["W"] = Parameter(glorot_uniform(rng, n_in, n_out, (n_in, n_out)))
        self.params["b"] = Parameter(np.zeros(n_out))
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.params["W"].shape[0]:
            raise ValueError(
                f"{self.name}: input width {x.shape[-1]} != {self.params['W'].shape[0]}"
            )
        pre = x @ self.params["W"].value + self.params["b"].value
        out = self.act(pre)
        _check_finite(self.name, out)
        self._cache = (x, pre, out)
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x, pre, out = self._cache
        dpre = dout * self.dact(pre, out)
        flat_x = x.reshape(-1, x.shape[-1])
        flat_d = dpre.reshape(-1, dpre.shape[-1])
        self.params["W"].grad += flat_x.T @ flat_d
        self.params["b"].grad += flat_d.sum(axis=0)
        return dpre @ self.params["W"].value.T


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Symmetric renormalization with self-loops: D^-1/2 (A + I) D^-1/2.

    Degrees are weighted sums of incident edges (of A + I), so isolated nodes
    come out with a self-weight of exactly 1. Accepts (n, n) or (B, n, n).
    """
    a = np.asarray(a, dtype=np.float64)
    batched = a.ndim == 3
    ab, _ = _as_batch(a) if not batched else (a, False)
    n = ab.shape[-1]
    with_self = ab + np.eye(n)
    deg = with_self.sum(axis=-1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    norm = with_self * inv_sqrt[..., :, None] * inv_sqrt[..., None, :]
    return norm if batched else norm[0]


class GcnLayer(Layer):
    """Spectral-style propagation act(A_hat X W); A_hat from normalize_adjacency."""

    def __init__(self, n_in: int, n_out: int, activation: str = "tanh",
                 rng: np.random.Generator | None = None, name: str = "gcn"):
        super().__init__(name)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.activation = activation
        self.act, self.dact = ACTIVATIONS[activation]
        self.params["W"] = Parameter(glorot_uniform(rng, n_in, n_out, (n_in, n_out)))
        self._cache = None

    def forward(self, x: np.ndarray, a_hat: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        xb, squeeze = _as_batch(x)
        ab, _ = _as_batch(np.asarray(a_hat, dtype=np.float64))
        if xb.shape[-1] != self.params["W"].shape[0]:
            raise ValueError(f"{self.name}: input width mismatch")
        if ab.shape[-1] != xb.shape[-2]:
            raise ValueError(f"{self.name}: adjacency size mismatch")
        agg = ab @ xb
        pre = agg @ self.params["W"].value
        out = self.act(pre)
        _check_finite(self.name, out)
        self._cache = (agg, ab, pre, out, squeeze)
        return out[0] if squeeze else out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        agg, ab, pre, out, squeeze = self._cache
        db, _ = _as_batch(np.asarray(dout, dtype=np.float64))
        dpre = db * self.dact(pre, out)
        self.params["W"].grad += np.einsum("bna,bnc->ac", agg, dpre)
        dagg = dpre @ self.params["W"].value.T
        dx = np.swapaxes(ab, -1, -2) @ dagg
        return dx[0] if squeeze else dx


class GatLayer(Layer):
    """Single-head graph attention.

    Transformed features x~ = X W get pairwise scores
    e_ij = leakyrelu(g . [x~_i ++ x~_j]) for j in N(i) and j = i, softmaxed
    over that set; everything off-neighborhood receives exactly zero weight.
    """

    def __init__(self, n_in: int, n_out: int, activation: str = "tanh",
                 leaky_slope: float = 0.2, rng: np.random.Generator | None = None,
                 name: str = "gat"):
        super().__init__(name)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.activation = activation
        self.act, self.dact = ACTIVATIONS[activation]
        self.leaky_slope = leaky_slope
        self.params["W"] = Parameter(glorot_uniform(rng, n_in, n_out, (n_in, n_out)))
        self.params["g"] = Parameter(glorot_uniform(rng, 2 * n_out, 1, (2 * n_out,)))
        self._cache = None
        self.last_attention: np.ndarray | None = None

    def forward(self, x: np.ndarray, adj: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        xb, squeeze = _as_batch(x)
        ab, _ = _as_batch(np.asarray(adj, dtype=np.float64))
        if xb.shape[-1] != self.params["W"].shape[0]:
            raise ValueError(f"{self.name}: input width mismatch")
        b, n, _ = xb.shape
        h = self.params["W"].shape[1]

        xt = xb @ self.params["W"].value                      # (B, n, h)
        g = self.params["g"].value
        a_src = xt @ g[:h]                                    # (B, n)
        a_dst = xt @ g[h:]
        scores = a_src[:, :, None] + a_dst[:, None, :]        # (B, n, n)
        slope = self.leaky_slope
        logits = np.maximum(scores, slope * scores)

        mask = (ab > 0) | np.eye(n, dtype=bool)
        neg = np.where(mask, 0.0, -np.inf)
        masked = logits + neg
        masked -= masked.max(axis=-1, keepdims=True)
        expd = np.exp(masked)
        alpha = expd / expd.sum(axis=-1, keepdims=True)       # rows sum to 1

        agg = alpha @ xt
        out = self.act(agg)
        _check_finite(self.name, out)
        self.last_attention = alpha[0] if squeeze else alpha
        self._cache = (xb, xt, scores, mask, alpha, agg, out, squeeze)
        return out[0] if squeeze else out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        xb, xt, scores, mask, alpha, agg, out, squeeze = self._cache
        db, _ = _as_batch(np.asarray(dout, dtype=np.float64))
        h = self.params["W"].shape[1]
        g = self.params["g"].value

        dagg = db * self.dact(agg, out)                       # (B, n, h)
        dalpha = dagg @ np.swapaxes(xt, -1, -2)               # (B, n, n)
        dxt = np.swapaxes(alpha, -1, -2) @ dagg

        # softmax rows: de = alpha * (dalpha - sum_j dalpha_j alpha_j)
        row_dot = (dalpha * alpha).sum(axis=-1, keepdims=True)
        de = alpha * (dalpha - row_dot)
        dscores = de * np.where(scores > 0, 1.0, self.leaky_slope)
        dscores = np.where(mask, dscores, 0.0)

        da_src = dscores.sum(axis=-1)                          # (B, n)
        da_dst = dscores.sum(axis=-2)
        self.params["g"].grad[:h] += np.einsum("bn,bnh->h", da_src, xt)
        self.params["g"].grad[h:] += np.einsum("bn,bnh->h", da_dst, xt)
        dxt += da_src[..., None] * g[:h] + da_dst[..., None] * g[h:]

        self.params["W"].grad += np.einsum("bna,bnh->ah", xb, dxt)
        dx = dxt @ self.params["W"].value.T
        return dx[0] if squeeze else dx


class Lstm(Layer):
    """Standard LSTM over (rows, steps, features); returns the final hidden state.

    Gates are packed [input, forget, output, candidate]; input and recurrent
    weights are kept separate so the input projection for all timesteps runs
    as one matmul. Backward is full-length BPTT.
    """

    def __init__(self, n_in: int, n_hidden: int,
                 rng: np.random.Generator | None = None, name: str = "lstm"):
        super().__init__(name)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in = n_in
        self.n_hidden = n_hidden
        fan = n_in + n_hidden
        self.params["Wx"] = Parameter(
            glorot_uniform(rng, fan, 4 * n_hidden, (n_in, 4 * n_hidden))
        )
        self.params["Wh"] = Parameter(
            glorot_uniform(rng, fan, 4 * n_hidden, (n_hidden, 4 * n_hidden))
        )
        self.params["b"] = Parameter(np.zeros(4 * n_hidden))
        self._cache = None

    def forward(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        if s.ndim != 3 or s.shape[-1] != self.n_in:
            raise ValueError(f"{self.name}: expected (rows, L, {self.n_in}), got {s.shape}")
        rows, steps, _ = s.shape
        nh = self.n_hidden
        xproj = (s.reshape(rows * steps, self.n_in) @ self.params["Wx"].value
                 ).reshape(rows, steps, 4 * nh)
        wh, b = self.params["Wh"].value, self.params["b"].value
        h = np.zeros((rows, nh))
        c = np.zeros((rows, nh))
        trace = []
        for t in range(steps):
            gates = xproj[:, t, :] + h @ wh + b
            sg = sigmoid(gates[:, : 3 * nh])
            gi = sg[:, :nh]
            gf = sg[:, nh : 2 * nh]
            go = sg[:, 2 * nh :]
            gc = np.tanh(gates[:, 3 * nh :])
            c_new = gf * c + gi * gc
            h_new = go * np.tanh(c_new)
            trace.append((h, c, gi, gf, go, gc, c_new))
            h, c = h_new, c_new
        _check_finite(self.name, h)
        self._cache = (s, trace)
        return h

    def backward(self, dh_final: np.ndarray) -> np.ndarray:
        s, trace = self._cache
        rows, steps, n_in = s.shape
        nh = self.n_hidden
        wx, wh = self.params["Wx"].value, self.params["Wh"].value
        dh = np.asarray(dh_final, dtype=np.float64)
        dc_carry = np.zeros_like(dh)
        dgates_all = np.empty((rows, steps, 4 * nh))
        for t in range(steps - 1, -1, -1):
            h_prev, c_prev, gi, gf, go, gc, c_new = trace[t]
            tc = np.tanh(c_new)
            do = dh * tc
            dc = dc_carry + dh * go * (1.0 - tc * tc)
            dgates = dgates_all[:, t, :]
            dgates[:, :nh] = dc * gc * gi * (1.0 - gi)
            dgates[:, nh : 2 * nh] = dc * c_prev * gf * (1.0 - gf)
            dgates[:, 2 * nh : 3 * nh] = do * go * (1.0 - go)
            dgates[:, 3 * nh :] = dc * gi * (1.0 - gc * gc)
            self.params["Wh"].grad += h_prev.T @ dgates
            dh = dgates @ wh.T
            dc_carry = dc * gf
        flat_d = dgates_all.reshape(rows * steps, 4 * nh)
        self.params["Wx"].grad += s.reshape(rows * steps, n_in).T @ flat_d
        self.params["b"].grad += flat_d.sum(axis=0)
        return (flat_d @ wx.T).reshape(rows, steps, n_in)


class ConvParticipants(Layer):
    """1-D convolution along the participant axis, kernel size 3, same padding.

    Deliberately order-sensitive: sliding a kernel over whichever row ordering
    the batch happens to use is the benchmark's whole point.
    """

    def __init__(self, n_in: int, n_out: int, activation: str = "tanh",
                 kernel_size: int = 3, rng: np.random.Generator | None = None,
                 name: str = "conv"):
        super().__init__(name)
        if kernel_size % 2 != 1:
            raise ValueError("kernel size must be odd for same padding")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.activation = activation
        self.act, self.dact = ACTIVATIONS[activation]
        self.kernel_size = kernel_size
        fan = n_in * kernel_size
        self.params["K"] = Parameter(
            glorot_uniform(rng, fan, n_out, (kernel_size, n_in, n_out))
        )
        self.params["b"] = Parameter(np.zeros(n_out))
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        xb, squeeze = _as_batch(x)
        if xb.shape[-1] != self.params["K"].shape[1]:
            raise ValueError(f"{self.name}: input width mismatch")
        pad = self.kernel_size // 2
        n = xb.shape[1]
        xp = np.pad(xb, ((0, 0), (pad, pad), (0, 0)))
        k = self.params["K"].value
        pre = self.params["b"].value + sum(
            xp[:, t : t + n, :] @ k[t] for t in range(self.kernel_size)
        )
        out = self.act(pre)
        _check_finite(self.name, out)
        self._cache = (xp, pre, out, squeeze)
        return out[0] if squeeze else out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        xp, pre, out, squeeze = self._cache
        db, _ = _as_batch(np.asarray(dout, dtype=np.float64))
        dpre = db * self.dact(pre, out)
        self.params["b"].grad += dpre.sum(axis=(0, 1))
        pad = self.kernel_size // 2
        n = dpre.shape[1]
        k = self.params["K"].value
        dxp = np.zeros_like(xp)
        for t in range(self.kernel_size):
            self.params["K"].grad[t] += np.einsum("bna,bno->ao", xp[:, t : t + n, :], dpre)
            dxp[:, t : t + n, :] += dpre @ k[t].T
        dx = dxp[:, pad : pad + n, :]
        return dx[0] if squeeze else dx


class Dropout(Layer):
    """Inverted dropout: train zeroes entries with prob `rate`, eval is identity."""

    def __init__(self, rate: float, name: str = "dropout"):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._scale_mask = None

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not train or self.rate == 0.0:
            self._scale_mask = None
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        keep = rng.random(x.shape) >= self.rate
        self._scale_mask = keep / (1.0 - self.rate)
        return x * self._scale_mask

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self._scale_mask is None:
            return dout
        return dout * self._scale_mask


_CLAMP = 1e-12


def bce_loss(p: np.ndarray, y: np.ndarray,
             mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over (masked) entries, with d(loss)/dp.

    Probabilities are clamped to [1e-12, 1 - 1e-12] before the logs.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), _CLAMP, 1.0 - _CLAMP)
    y = np.asarray(y, dtype=np.float64)
    if mask is None:
        mask = np.ones_like(p, dtype=bool)
    scored = int(mask.sum())
    if scored == 0:
        raise ValueError("no scored entries for loss")
    terms = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    loss = float((terms * mask).sum() / scored)
    dp = np.where(mask, (p - y) / (p * (1.0 - p)) / scored, 0.0)
    return loss, dp


def l2_prob_loss(p: np.ndarray, y: np.ndarray,
                 mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Mean squared error on probabilities (the config-switch alternative)."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if mask is None:
        mask = np.ones_like(p, dtype=bool)
    scored = int(mask.sum())
    if scored == 0:
        raise ValueError("no scored entries for loss")
    diff = p - y
    loss = float((diff * diff * mask).sum() / scored)
    dp = np.where(mask, 2.0 * diff / scored, 0.0)
    return loss, dp
