"""Tiny transducer (encoder + predictor + joiner) with exact backprop.

The encoder is a linear lift, one head of full-context self-attention
with a residual connection, and a tanh projection.  The predictor embeds
the start symbol (blank) followed by the targets, runs a single tanh
recurrence, and projects to the joint space.  The joiner adds the two
embeddings, applies a ReLU, and produces per-cell vocabulary logits.

Weights live in named groups so adaptation masks can freeze arbitrary
subsets; all arithmetic is float64 and every operation is pure.
"""

import zlib
from dataclasses import dataclass, field

import numpy as np

from .lattice import LogitLattice

GROUP_NAMES = (
    "enc_in",
    "attn_q",
    "attn_k",
    "attn_v",
    "attn_o",
    "enc_out",
    "pred_emb",
    "pred_rnn",
    "joiner",
    "bias_all",
)


@dataclass(frozen=True)
class ModelConfig:
    feat_dim: int = 8
    hidden_dim: int = 16
    joint_dim: int = 16
    vocab: int = 17
    blank_id: int = 0
    seed: int = 0

    def __post_init__(self):
        if min(self.feat_dim, self.hidden_dim, self.joint_dim) < 1 or self.vocab < 2:
            raise ValueError("model dimensions must be positive and vocab >= 2")
        if not 0 <= self.blank_id < self.vocab:
            raise ValueError("blank_id outside vocabulary")


def group_layout(config: ModelConfig) -> dict[str, tuple[tuple[int, ...], ...]]:
    """Tensor shapes packed, in order, into each group's flat array."""
    F, D, J, V = config.feat_dim, config.hidden_dim, config.joint_dim, config.vocab
    return {
        "enc_in": ((D, F),),
        "attn_q": ((D, D),),
        "attn_k": ((D, D),),
        "attn_v": ((D, D),),
        "attn_o": ((D, D),),
        "enc_out": ((J, D),),
        "pred_emb": ((V, D),),
        "pred_rnn": ((D, D), (J, D)),
        "joiner": ((V, J),),
        # biases: enc_in, enc_out, recurrence, pred projection, joint
        "bias_all": ((D,), (J,), (D,), (J,), (V,)),
    }


@dataclass
class ParameterSet:
    """Named parameter groups as flat float64 arrays with recorded shapes."""

    groups: dict[str, np.ndarray]
    shapes: dict[str, tuple[tuple[int, ...], ...]]

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            groups={k: v.copy() for k, v in self.groups.items()},
            shapes=dict(self.shapes),
        )

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet(
            groups={k: np.zeros_like(v) for k, v in self.groups.items()},
            shapes=dict(self.shapes),
        )

    def __add__(self, other: "ParameterSet") -> "ParameterSet":
        return ParameterSet(
            groups={k: self.groups[k] + other.groups[k] for k in self.groups},
            shapes=dict(self.shapes),
        )

    def __sub__(self, other: "ParameterSet") -> "ParameterSet":
        return ParameterSet(
            groups={k: self.groups[k] - other.groups[k] for k in self.groups},
            shapes=dict(self.shapes),
        )

    def scaled(self, c: float) -> "ParameterSet":
        return ParameterSet(
            groups={k: self.groups[k] * c for k in self.groups},
            shapes=dict(self.shapes),
        )

    def l2_norm(self) -> float:
        return float(
            np.sqrt(sum(float(np.dot(v, v)) for v in self.groups.values()))
        )

    def bit_identical(self, other: "ParameterSet") -> bool:
        return self.groups.keys() == other.groups.keys() and all(
            np.array_equal(self.groups[k], other.groups[k]) for k in self.groups
        )

    def tensor(self, group: str, index: int) -> np.ndarray:
        """Reshaped view of the index-th tensor packed in a group."""
        shapes = self.shapes[group]
        offset = sum(int(np.prod(s)) for s in shapes[:index])
        size = int(np.prod(shapes[index]))
        return self.groups[group][offset:offset + size].reshape(shapes[index])


@dataclass(frozen=True)
class AdaptationMask:
    """The set of parameter groups permitted to change during adaptation."""

    selected: frozenset

    def __contains__(self, group: str) -> bool:
        return group in self.selected


MASK_PRESETS = {
    "all": AdaptationMask(frozenset(GROUP_NAMES)),
    "encoder": AdaptationMask(
        frozenset({"enc_in", "attn_q", "attn_k", "attn_v", "attn_o", "enc_out"})
    ),
    "attention": AdaptationMask(frozenset({"attn_q", "attn_k", "attn_v", "attn_o"})),
    "keyvalue": AdaptationMask(frozenset({"attn_k", "attn_v"})),
    "predictor": AdaptationMask(frozenset({"pred_emb", "pred_rnn"})),
    "joiner": AdaptationMask(frozenset({"joiner"})),
    "bias": AdaptationMask(frozenset({"bias_all"})),
}


def mask_preset(name: str) -> AdaptationMask:
    try:
        return MASK_PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown mask preset {name!r}; choose from {sorted(MASK_PRESETS)}"
        ) from None


def _group_rng(seed: int, group: str) -> np.random.Generator:
    # deterministic per-(seed, group-name) stream, stable across platforms
    return np.random.default_rng([seed & 0xFFFFFFFF, zlib.crc32(group.encode())])


def init_params(config: ModelConfig) -> ParameterSet:
    """Uniform +-1/sqrt(fan_in) weights per group stream; biases zero."""
    shapes = group_layout(config)
    groups = {}
    for name, tensor_shapes in shapes.items():
        rng = _group_rng(config.seed, name)
        parts = []
        for shape in tensor_shapes:
            if name == "bias_all":
                parts.append(np.zeros(int(np.prod(shape))))
            else:
                bound = 1.0 / np.sqrt(shape[-1])
                parts.append(rng.uniform(-bound, bound, int(np.prod(shape))))
        groups[name] = np.concatenate(parts)
    return ParameterSet(groups=groups, shapes=shapes)


def apply_mask(params: ParameterSet, mask: AdaptationMask) -> ParameterSet:
    """Copy the selected groups, zero the rest."""
    unknown = set(mask.selected) - set(params.groups)
    if unknown:
        raise ValueError(f"unknown parameter groups in mask: {sorted(unknown)}")
    return ParameterSet(
        groups={
            k: (v.copy() if k in mask.selected else np.zeros_like(v))
            for k, v in params.groups.items()
        },
        shapes=dict(params.shapes),
    )


def param_count(params: ParameterSet, mask: AdaptationMask | None = None) -> int:
    names = params.groups.keys() if mask is None else mask.selected
    unknown = set(names) - set(params.groups)
    if unknown:
        raise ValueError(f"unknown parameter groups in mask: {sorted(unknown)}")
    return sum(params.groups[k].size for k in names)


@dataclass
class _Weights:
    w_in: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w_enc_out: np.ndarray
    emb: np.ndarray
    w_rec: np.ndarray
    w_pred_out: np.ndarray
    w_joint: np.ndarray
    b_in: np.ndarray
    b_enc_out: np.ndarray
    b_rec: np.ndarray
    b_pred_out: np.ndarray
    b_joint: np.ndarray


def _unpack(params: ParameterSet) -> _Weights:
    return _Weights(
        w_in=params.tensor("enc_in", 0),
        w_q=params.tensor("attn_q", 0),
        w_k=params.tensor("attn_k", 0),
        w_v=params.tensor("attn_v", 0),
        w_o=params.tensor("attn_o", 0),
        w_enc_out=params.tensor("enc_out", 0),
        emb=params.tensor("pred_emb", 0),
        w_rec=params.tensor("pred_rnn", 0),
        w_pred_out=params.tensor("pred_rnn", 1),
        w_joint=params.tensor("joiner", 0),
        b_in=params.tensor("bias_all", 0),
        b_enc_out=params.tensor("bias_all", 1),
        b_rec=params.tensor("bias_all", 2),
        b_pred_out=params.tensor("bias_all", 3),
        b_joint=params.tensor("bias_all", 4),
    )


@dataclass
class ActivationCache:
    """Everything the backward pass needs from one forward evaluation."""

    features: np.ndarray  # [T, F]
    tokens_in: np.ndarray  # [U+1] start symbol then targets
    a: np.ndarray  # [T, D] encoder input lift
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attw: np.ndarray  # [T, T] attention rows
    ctx: np.ndarray  # [T, D]
    res: np.ndarray  # [T, D] post-residual
    h: np.ndarray  # [T, J] encoder output
    e: np.ndarray  # [U+1, D] token embeddings
    s: np.ndarray  # [U+1, D] recurrent states
    g: np.ndarray  # [U+1, J] predictor output


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def encode(params: ParameterSet, features: np.ndarray):
    """Encoder stack; returns (h, intermediates for caching)."""
    w = _unpack(params)
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != w.w_in.shape[1]:
        raise ValueError(
            f"features must be [T, {w.w_in.shape[1]}], got shape {x.shape}"
        )
    a = x @ w.w_in.T + w.b_in
    q = a @ w.w_q.T
    k = a @ w.w_k.T
    v = a @ w.w_v.T
    scale = 1.0 / np.sqrt(w.w_q.shape[0])
    attw = _softmax_rows(q @ k.T * scale)
    ctx = attw @ v
    res = a + ctx @ w.w_o.T
    h = np.tanh(res @ w.w_enc_out.T + w.b_enc_out)
    return h, (x, a, q, k, v, attw, ctx, res)


def predictor_states(params: ParameterSet, tokens_in: np.ndarray):
    """Run the tanh recurrence over the start symbol plus targets."""
    w = _unpack(params)
    n = tokens_in.shape[0]
    D = w.w_rec.shape[0]
    e = w.emb[tokens_in]
    s = np.zeros((n, D))
    prev = np.zeros(D)
    for u in range(n):
        prev = np.tanh(w.w_rec @ prev + e[u] + w.b_rec)
        s[u] = prev
    g = np.tanh(s @ w.w_pred_out.T + w.b_pred_out)
    return e, s, g


def joint_logits(params: ParameterSet, h_t: np.ndarray, g_u: np.ndarray) -> np.ndarray:
    """Vocabulary logits for a single (frame, token-position) cell."""
    w = _unpack(params)
    return w.w_joint @ np.maximum(h_t + g_u, 0.0) + w.b_joint


def predictor_step(params: ParameterSet, state: np.ndarray | None, token: int):
    """One recurrence step for decoding; state None means the zero state."""
    w = _unpack(params)
    prev = np.zeros(w.w_rec.shape[0]) if state is None else state
    s = np.tanh(w.w_rec @ prev + w.emb[token] + w.b_rec)
    g = np.tanh(w.w_pred_out @ s + w.b_pred_out)
    return s, g


def model_forward(params: ParameterSet, features: np.ndarray, targets: np.ndarray,
                  config: ModelConfig):
    """Full lattice of raw joint logits plus the activation cache."""
    w = _unpack(params)
    targets = np.asarray(targets, dtype=np.int64)
    h, (x, a, q, k, v, attw, ctx, res) = encode(params, features)
    tokens_in = np.concatenate(([config.blank_id], targets)).astype(np.int64)
    e, s, g = predictor_states(params, tokens_in)
    r = h[:, None, :] + g[None, :, :]
    logits = np.maximum(r, 0.0) @ w.w_joint.T + w.b_joint
    lattice = LogitLattice(
        raw_logits=logits, targets=targets, blank_id=config.blank_id
    )
    cache = ActivationCache(
        features=x, tokens_in=tokens_in, a=a, q=q, k=k, v=v, attw=attw,
        ctx=ctx, res=res, h=h, e=e, s=s, g=g,
    )
    return lattice, cache


def model_backward(params: ParameterSet, cache: ActivationCache,
                   dl_dlogits: np.ndarray) -> ParameterSet:
    """Exact gradients of the scalar loss behind dl_dlogits, by group."""
    w = _unpack(params)
    T, J = cache.h.shape
    U1 = cache.g.shape[0]
    if dl_dlogits.shape != (T, U1, w.w_joint.shape[0]):
        raise ValueError(
            f"dl_dlogits shape {dl_dlogits.shape} does not match cache grid "
            f"({T}, {U1}, {w.w_joint.shape[0]})"
        )

    r = cache.h[:, None, :] + cache.g[None, :, :]
    relu_r = np.maximum(r, 0.0)
    dw_joint = np.einsum("tuv,tuj->vj", dl_dlogits, relu_r)
    db_joint = dl_dlogits.sum(axis=(0, 1))
    dr = (dl_dlogits @ w.w_joint) * (r > 0)
    dh = dr.sum(axis=1)
    dg = dr.sum(axis=0)

    # encoder
    dh_pre = dh * (1.0 - cache.h**2)
    dw_enc_out = dh_pre.T @ cache.res
    db_enc_out = dh_pre.sum(axis=0)
    dres = dh_pre @ w.w_enc_out
    da = dres.copy()
    dw_o = dres.T @ cache.ctx
    dctx = dres @ w.w_o
    dattw = dctx @ cache.v.T
    dv = cache.attw.T @ dctx
    dscores = cache.attw * (dattw - (dattw * cache.attw).sum(axis=1, keepdims=True))
    scale = 1.0 / np.sqrt(w.w_q.shape[0])
    dq = dscores @ cache.k * scale
    dk = dscores.T @ cache.q * scale
    dw_q = dq.T @ cache.a
    dw_k = dk.T @ cache.a
    dw_v = dv.T @ cache.a
    da += dq @ w.w_q + dk @ w.w_k + dv @ w.w_v
    dw_in = da.T @ cache.features
    db_in = da.sum(axis=0)

    # predictor
    dg_pre = dg * (1.0 - cache.g**2)
    dw_pred_out = dg_pre.T @ cache.s
    db_pred_out = dg_pre.sum(axis=0)
    ds_from_out = dg_pre @ w.w_pred_out
    D = w.w_rec.shape[0]
    dw_rec = np.zeros((D, D))
    db_rec = np.zeros(D)
    demb = np.zeros_like(w.emb)
    carry = np.zeros(D)
    for u in range(U1 - 1, -1, -1):
        ds_u = ds_from_out[u] + carry
        ds_pre = ds_u * (1.0 - cache.s[u] ** 2)
        if u > 0:
            dw_rec += np.outer(ds_pre, cache.s[u - 1])
        db_rec += ds_pre
        demb[cache.tokens_in[u]] += ds_pre
        carry = w.w_rec.T @ ds_pre

    groups = {
        "enc_in": dw_in.ravel(),
        "attn_q": dw_q.ravel(),
        "attn_k": dw_k.ravel(),
        "attn_v": dw_v.ravel(),
        "attn_o": dw_o.ravel(),
        "enc_out": dw_enc_out.ravel(),
        "pred_emb": demb.ravel(),
        "pred_rnn": np.concatenate([dw_rec.ravel(), dw_pred_out.ravel()]),
        "joiner": dw_joint.ravel(),
        "bias_all": np.concatenate(
            [db_in, db_enc_out, db_rec, db_pred_out, db_joint]
        ),
    }
    return ParameterSet(groups=groups, shapes=dict(params.shapes))
