"""Classification heads: gated TF-IDF fusion and the POS+TF-IDF concat head.

The gated head projects the sparse TF-IDF vector to 128 dimensions with
ReLU, scales it by a scalar gate g = sigmoid(W_g . h + b_g) computed from
the contextual vector, concatenates, and classifies through
linear -> layer-norm -> ReLU -> dropout -> linear.

The concat head concatenates the contextual vector with a 64-dimensional
POS projection and the 128-dimensional TF-IDF projection (960 wide for a
768-dimensional encoder) and classifies through
linear -> layer-norm -> dropout -> linear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn, posfeat
from .lexical import SparseVector
from .nn import DimensionMismatch, NoRecordedForward

TFIDF_PROJ_DIM = 128

# Keep the gate strictly inside (0, 1) even where the float64 sigmoid
# rounds to an endpoint.
_GATE_LO = np.finfo(np.float64).tiny
_GATE_HI = np.nextafter(1.0, 0.0)


def _open_sigmoid(z: np.ndarray) -> np.ndarray:
    return np.clip(nn.sigmoid(z), _GATE_LO, _GATE_HI)


def project_tfidf(sparse: SparseVector, weight: np.ndarray, bias: np.ndarray):
    """relu(W x + b) touching only the non-zero entries of x."""
    if sparse.dim != weight.shape[1]:
        raise DimensionMismatch(f"sparse dim {sparse.dim} != weight fan-in {weight.shape[1]}")
    pre = bias.astype(np.float64).copy()
    if sparse.indices.size:
        pre += weight[:, sparse.indices] @ sparse.values
    return np.maximum(pre, 0.0), (sparse, pre > 0.0)


def project_tfidf_batch(vectors: list[SparseVector], weight: np.ndarray, bias: np.ndarray):
    outs = np.empty((len(vectors), weight.shape[0]))
    caches = []
    for i, sv in enumerate(vectors):
        outs[i], cache = project_tfidf(sv, weight, bias)
        caches.append(cache)
    return outs, caches


def project_tfidf_backward(caches, d_out: np.ndarray, weight_shape):
    if caches is None:
        raise NoRecordedForward("project_tfidf has not been run")
    d_weight = np.zeros(weight_shape)
    d_bias = np.zeros(weight_shape[0])
    for i, (sv, active) in enumerate(caches):
        dpre = d_out[i] * active
        d_bias += dpre
        if sv.indices.size:
            d_weight[:, sv.indices] += np.outer(dpre, sv.values)
    return d_weight, d_bias


def gate(h_bert: np.ndarray, w_g: np.ndarray, b_g) -> np.ndarray:
    """Scalar gate sigmoid(W_g . h + b_g); batched input gives (B, 1)."""
    w = np.asarray(w_g, dtype=np.float64).reshape(-1)
    if h_bert.shape[-1] != w.shape[0]:
        raise DimensionMismatch(f"gate: got h of dim {h_bert.shape[-1]}, W_g of dim {w.shape[0]}")
    z = h_bert @ w + np.asarray(b_g, dtype=np.float64).reshape(-1)[0]
    g = _open_sigmoid(np.asarray(z, dtype=np.float64))
    if h_bert.ndim == 2:
        return g[:, None]
    return g


def fuse_gated(h_bert: np.ndarray, h_tilde: np.ndarray, g):
    """Joint vector concat(h_bert, g * h_tilde); also returns the gated
    TF-IDF component for inspection."""
    h_hat = np.asarray(g) * h_tilde
    return np.concatenate([h_bert, h_hat], axis=-1), h_hat


def fuse_concat(h_cls: np.ndarray, pos64: np.ndarray, tfidf128: np.ndarray) -> np.ndarray:
    if pos64.shape[-1] != posfeat.POS_PROJ_DIM:
        raise DimensionMismatch(f"POS branch must be {posfeat.POS_PROJ_DIM}-dimensional")
    if tfidf128.shape[-1] != TFIDF_PROJ_DIM:
        raise DimensionMismatch(f"TF-IDF branch must be {TFIDF_PROJ_DIM}-dimensional")
    return np.concatenate([h_cls, pos64, tfidf128], axis=-1)


@dataclass(frozen=True)
class GatedHeadConfig:
    d: int
    k: int
    tfidf_dim: int = TFIDF_PROJ_DIM
    hidden: int = 512
    dropout: float = 0.1
    use_tfidf: bool = True
    use_gate: bool = True

    @property
    def joint_dim(self) -> int:
        return self.d + self.tfidf_dim if self.use_tfidf else self.d


def init_gated_params(cfg: GatedHeadConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    p: dict[str, np.ndarray] = {}
    if cfg.use_tfidf:
        p["tfidf_proj.w"], p["tfidf_proj.b"] = nn.init_linear(rng, cfg.tfidf_dim, cfg.k)
        if cfg.use_gate:
            # b_g = 0 keeps the gate neutral (g = 0.5) at initialization.
            p["gate.w"], p["gate.b"] = nn.init_linear(rng, 1, cfg.d)
    p["fc1.w"], p["fc1.b"] = nn.init_linear(rng, cfg.hidden, cfg.joint_dim)
    p["ln.gamma"] = np.ones(cfg.hidden)
    p["ln.beta"] = np.zeros(cfg.hidden)
    p["fc2.w"], p["fc2.b"] = nn.init_linear(rng, 2, cfg.hidden)
    return p


class GatedHead:
    """Gated fusion head; also covers the no-gating (g fixed to 1) and
    encoder-only (TF-IDF branch removed) ablation variants."""

    def __init__(self, config: GatedHeadConfig, params=None, rng=None):
        self.config = config
        if params is None:
            params = init_gated_params(config, rng or np.random.default_rng(0))
        self.params = params
        self._cache = None
        self.last_gate: np.ndarray | None = None
        self.last_gated_tfidf: np.ndarray | None = None
        self.last_ln_output: np.ndarray | None = None

    def forward(
        self,
        h_bert: np.ndarray,
        tfidf: list[SparseVector] | None,
        train: bool = False,
        rng: np.random.Generator | None = None,
        gate_override: float | None = None,
        dropout_mask: np.ndarray | None = None,
    ) -> np.ndarray:
        cfg = self.config
        p = self.params
        if h_bert.shape[-1] != cfg.d:
            raise DimensionMismatch(f"expected h of dim {cfg.d}, got {h_bert.shape[-1]}")

        tf_caches = gate_cache = None
        g = None
        if cfg.use_tfidf:
            h_tilde, tf_caches = project_tfidf_batch(tfidf, p["tfidf_proj.w"], p["tfidf_proj.b"])
            if gate_override is not None:
                g = np.full((h_bert.shape[0], 1), float(gate_override))
            elif cfg.use_gate:
                z, cz = nn.linear_forward(h_bert, p["gate.w"], p["gate.b"])
                g = _open_sigmoid(z)
                gate_cache = (cz, g)
            else:
                g = np.ones((h_bert.shape[0], 1))
            hj, h_hat = fuse_gated(h_bert, h_tilde, g)
            self.last_gated_tfidf = h_hat
        else:
            h_tilde = None
            hj = h_bert
        self.last_gate = None if g is None else g[:, 0]

        a1, c1 = nn.linear_forward(hj, p["fc1.w"], p["fc1.b"])
        n1, cln = nn.layer_norm_forward(a1, p["ln.gamma"], p["ln.beta"])
        self.last_ln_output = n1
        r1, cr = nn.relu_forward(n1)
        dr, dmask = nn.dropout_forward(r1, cfg.dropout, rng=rng, train=train, mask=dropout_mask)
        logits, c2 = nn.linear_forward(dr, p["fc2.w"], p["fc2.b"])
        self._cache = (tf_caches, gate_cache, g, h_tilde, c1, cln, cr, dmask, c2)
        return logits

    def backward(self, d_logits: np.ndarray):
        """Returns (parameter gradients, dL/dh_bert)."""
        if self._cache is None:
            raise NoRecordedForward("forward must run before backward")
        cfg = self.config
        tf_caches, gate_cache, g, h_tilde, c1, cln, cr, dmask, c2 = self._cache
        grads: dict[str, np.ndarray] = {}

        ddr, grads["fc2.w"], grads["fc2.b"] = nn.linear_backward(c2, d_logits)
        dr1 = nn.dropout_backward(dmask, ddr)
        dn1 = nn.relu_backward(cr, dr1)
        da1, grads["ln.gamma"], grads["ln.beta"] = nn.layer_norm_backward(cln, dn1)
        dhj, grads["fc1.w"], grads["fc1.b"] = nn.linear_backward(c1, da1)

        if cfg.use_tfidf:
            d_h_bert = dhj[:, : cfg.d].copy()
            d_h_hat = dhj[:, cfg.d :]
            d_h_tilde = g * d_h_hat
            if gate_cache is not None:
                # Gate path: through the g * h_tilde product, then the
                # sigmoid derivative g(1-g).
                cz, g_val = gate_cache
                dg = (d_h_hat * h_tilde).sum(axis=1, keepdims=True)
                dz = dg * g_val * (1.0 - g_val)
                dh_from_gate, grads["gate.w"], grads["gate.b"] = nn.linear_backward(cz, dz)
                d_h_bert += dh_from_gate
            elif cfg.use_gate:
                grads["gate.w"] = np.zeros_like(self.params["gate.w"])
                grads["gate.b"] = np.zeros_like(self.params["gate.b"])
            grads["tfidf_proj.w"], grads["tfidf_proj.b"] = project_tfidf_backward(
                tf_caches, d_h_tilde, self.params["tfidf_proj.w"].shape
            )
        else:
            d_h_bert = dhj
        return grads, d_h_bert


@dataclass(frozen=True)
class ConcatHeadConfig:
    d: int
    k: int
    pos_dim: int = posfeat.POS_DIM
    pos_proj_dim: int = posfeat.POS_PROJ_DIM
    tfidf_dim: int = TFIDF_PROJ_DIM
    hidden: int = 512
    dropout: float = 0.1

    @property
    def joint_dim(self) -> int:
        # 960 for the reference d=768 encoder.
        return self.d + self.pos_proj_dim + self.tfidf_dim


def init_concat_params(cfg: ConcatHeadConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    p: dict[str, np.ndarray] = {}
    p["pos_proj.w"], p["pos_proj.b"] = nn.init_linear(rng, cfg.pos_proj_dim, cfg.pos_dim)
    p["tfidf_proj.w"], p["tfidf_proj.b"] = nn.init_linear(rng, cfg.tfidf_dim, cfg.k)
    p["fc1.w"], p["fc1.b"] = nn.init_linear(rng, cfg.hidden, cfg.joint_dim)
    p["ln.gamma"] = np.ones(cfg.hidden)
    p["ln.beta"] = np.zeros(cfg.hidden)
    p["fc2.w"], p["fc2.b"] = nn.init_linear(rng, 2, cfg.hidden)
    return p


class ConcatHead:
    """POS + TF-IDF concatenation head (the Arabic-style architecture)."""

    def __init__(self, config: ConcatHeadConfig, params=None, rng=None):
        self.config = config
        if params is None:
            params = init_concat_params(config, rng or np.random.default_rng(0))
        self.params = params
        self._cache = None
        self.last_ln_output: np.ndarray | None = None

    def forward(
        self,
        h_cls: np.ndarray,
        pos_probs: np.ndarray,
        tfidf: list[SparseVector],
        train: bool = False,
        rng: np.random.Generator | None = None,
        dropout_mask: np.ndarray | None = None,
    ) -> np.ndarray:
        cfg = self.config
        p = self.params
        if h_cls.shape[-1] != cfg.d:
            raise DimensionMismatch(f"expected h of dim {cfg.d}, got {h_cls.shape[-1]}")
        pos64, c_pos = posfeat.project_pos(pos_probs, p["pos_proj.w"], p["pos_proj.b"])
        tf128, tf_caches = project_tfidf_batch(tfidf, p["tfidf_proj.w"], p["tfidf_proj.b"])
        hj = fuse_concat(h_cls, pos64, tf128)

        a1, c1 = nn.linear_forward(hj, p["fc1.w"], p["fc1.b"])
        n1, cln = nn.layer_norm_forward(a1, p["ln.gamma"], p["ln.beta"])
        self.last_ln_output = n1
        dr, dmask = nn.dropout_forward(n1, cfg.dropout, rng=rng, train=train, mask=dropout_mask)
        logits, c2 = nn.linear_forward(dr, p["fc2.w"], p["fc2.b"])
        self._cache = (c_pos, tf_caches, c1, cln, dmask, c2)
        return logits

    def backward(self, d_logits: np.ndarray):
        if self._cache is None:
            raise NoRecordedForward("forward must run before backward")
        cfg = self.config
        c_pos, tf_caches, c1, cln, dmask, c2 = self._cache
        grads: dict[str, np.ndarray] = {}

        ddr, grads["fc2.w"], grads["fc2.b"] = nn.linear_backward(c2, d_logits)
        dn1 = nn.dropout_backward(dmask, ddr)
        da1, grads["ln.gamma"], grads["ln.beta"] = nn.layer_norm_backward(cln, dn1)
        dhj, grads["fc1.w"], grads["fc1.b"] = nn.linear_backward(c1, da1)

        d_h_cls = dhj[:, : cfg.d].copy()
        d_pos64 = dhj[:, cfg.d : cfg.d + cfg.pos_proj_dim]
        d_tf128 = dhj[:, cfg.d + cfg.pos_proj_dim :]
        grads["pos_proj.w"], grads["pos_proj.b"] = posfeat.project_pos_backward(c_pos, d_pos64)
        grads["tfidf_proj.w"], grads["tfidf_proj.b"] = project_tfidf_backward(
            tf_caches, d_tf128, self.params["tfidf_proj.w"].shape
        )
        return grads, d_h_cls
