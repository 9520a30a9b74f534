"""Numeric primitives with hand-written backward passes.

Every forward returns (output, cache); the matching backward consumes the
cache and the upstream gradient. All arithmetic is float64; reductions use
numpy's pairwise summation.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5
_MASK_FILL = -1e30
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class DimensionMismatch(ValueError):
    pass


class NoRecordedForward(RuntimeError):
    pass


def init_linear(rng: np.random.Generator, n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray]:
    """Weight ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero bias."""
    scale = 1.0 / np.sqrt(n_in)
    w = rng.uniform(-scale, scale, size=(n_out, n_in))
    b = np.zeros(n_out)
    return w, b


def linear_forward(x, w, b):
    if x.shape[-1] != w.shape[1]:
        raise DimensionMismatch(f"linear: input dim {x.shape[-1]} != weight fan-in {w.shape[1]}")
    return x @ w.T + b, (x, w)


def linear_backward(cache, dout):
    x, w = cache
    dx = dout @ w
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    dw = d2.T @ x2
    db = d2.sum(axis=0)
    return dx, dw, db


def relu_forward(x):
    return np.maximum(x, 0.0), (x > 0.0)


def relu_backward(cache, dout):
    return dout * cache


def gelu_forward(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2)), x


def gelu_backward(cache, dout):
    x = cache
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return dout * (cdf + x * pdf)


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def layer_norm_forward(x, gamma, beta, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return gamma * xhat + beta, (xhat, inv, gamma)


def layer_norm_backward(cache, dout):
    xhat, inv, gamma = cache
    n = xhat.shape[-1]
    dgamma = (dout * xhat).reshape(-1, n).sum(axis=0)
    dbeta = dout.reshape(-1, n).sum(axis=0)
    dxhat = dout * gamma
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def dropout_forward(x, rate, rng=None, train=False, mask=None):
    """Inverted dropout. The mask is returned so backward is exact; pass
    `mask` explicitly to replay a recorded forward."""
    if not train or rate == 0.0:
        return x, None
    if mask is None:
        if rng is None:
            raise ValueError("training-mode dropout needs an rng or an explicit mask")
        mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(mask, dout):
    if mask is None:
        return dout
    return dout * mask


def attention_forward(x, params, prefix, n_heads, mask):
    """Multi-head self-attention (query = key = value = x).

    x: (B, T, d); mask: (B, T) with 1 for real tokens, 0 for padding.
    Weights live in `params` under `{prefix}.wq|bq|wk|bk|wv|bv|wo|bo`.
    """
    b, t, d = x.shape
    if d % n_heads != 0:
        raise DimensionMismatch(f"hidden size {d} not divisible by {n_heads} heads")
    dh = d // n_heads

    q, cq = linear_forward(x, params[f"{prefix}.wq"], params[f"{prefix}.bq"])
    k, ck = linear_forward(x, params[f"{prefix}.wk"], params[f"{prefix}.bk"])
    v, cv = linear_forward(x, params[f"{prefix}.wv"], params[f"{prefix}.bv"])

    def split(h):
        return h.reshape(b, t, n_heads, dh).transpose(0, 2, 1, 3)

    qh, kh, vh = split(q), split(k), split(v)
    scores = qh @ kh.transpose(0, 1, 3, 2) / np.sqrt(dh)
    keep = mask[:, None, None, :].astype(bool)
    scores = np.where(keep, scores, _MASK_FILL)
    probs = softmax(scores, axis=-1)
    ctx = probs @ vh
    merged = ctx.transpose(0, 2, 1, 3).reshape(b, t, d)
    out, co = linear_forward(merged, params[f"{prefix}.wo"], params[f"{prefix}.bo"])
    cache = (cq, ck, cv, co, qh, kh, vh, probs, n_heads)
    return out, probs, cache


def attention_backward(cache, prefix, dout):
    cq, ck, cv, co, qh, kh, vh, probs, n_heads = cache
    b, h, t, dh = qh.shape
    d = h * dh

    dmerged, dwo, dbo = linear_backward(co, dout)
    dctx = dmerged.reshape(b, t, h, dh).transpose(0, 2, 1, 3)

    dprobs = dctx @ vh.transpose(0, 1, 3, 2)
    dvh = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dscores /= np.sqrt(dh)
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 1, 3, 2) @ qh

    def merge(g):
        return g.transpose(0, 2, 1, 3).reshape(b, t, d)

    dxq, dwq, dbq = linear_backward(cq, merge(dqh))
    dxk, dwk, dbk = linear_backward(ck, merge(dkh))
    dxv, dwv, dbv = linear_backward(cv, merge(dvh))
    dx = dxq + dxk + dxv
    grads = {
        f"{prefix}.wq": dwq, f"{prefix}.bq": dbq,
        f"{prefix}.wk": dwk, f"{prefix}.bk": dbk,
        f"{prefix}.wv": dwv, f"{prefix}.bv": dbv,
        f"{prefix}.wo": dwo, f"{prefix}.bo": dbo,
    }
    return dx, grads


def init_attention(rng, params, prefix, d):
    for name in ("wq", "wk", "wv", "wo"):
        w, bias = init_linear(rng, d, d)
        params[f"{prefix}.{name}"] = w
        params[f"{prefix}.{name.replace('w', 'b')}"] = bias
