"""Temporal-shift-aware graph convolution.

The convolutional attention unit scores every (query time, key time) pair of
an edge with causal-convolution features, masks out rightward attention so no
future information leaks, and mixes the neighbor's value rows accordingly.
One layer aggregates, for every local node, a softmax-weighted sum of
attention messages from its in-neighbors plus an unweighted self-attention
term. A learned per-relation scalar is added to each neighbor's aggregation
logit, which is where the edge type enters the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import EgoSubgraph, Relation
from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat_lastdim,
    conv1d_causal,
    hadamard,
    matmul,
    relu,
    scale,
    softmax_masked,
    sub,
    sum_all,
    tanh,
    transpose,
)
from .encoder import glorot

__all__ = [
    "CAUParams",
    "LayerParams",
    "PlainAttnParams",
    "HeadParams",
    "causal_mask",
    "cau",
    "aggregation_logit",
    "neighbor_weights",
    "ita_gcn_layer",
    "plain_attention_layer",
    "predict_head",
    "mse_loss",
]

N_RELATIONS = len(Relation)


def causal_mask(t_len: int) -> Tensor:
    """Constant (t, t) mask: -inf strictly above the diagonal, 0 elsewhere."""
    m = np.zeros((t_len, t_len))
    m[np.triu_indices(t_len, k=1)] = -np.inf
    return Tensor(m)


@dataclass
class CAUParams:
    """Width-3 query/key kernels and a width-1 value kernel, all (w, c, c)."""

    q_kernel: Tensor
    k_kernel: Tensor
    v_kernel: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.q": self.q_kernel, f"{prefix}.k": self.k_kernel, f"{prefix}.v": self.v_kernel}


@dataclass
class LayerParams:
    inter: CAUParams
    intra: CAUParams          # may be the same object as inter when shared
    mu: Tensor                # (t_max, 1) aggregation scorer
    center_kernel: Tensor     # (1, c, 1), applied to the aggregating node
    neighbor_kernel: Tensor   # (1, c, 1), applied to the message source
    rel_weight: Tensor        # (1, n_relations) additive logit per edge type

    @property
    def shared_cau(self) -> bool:
        return self.intra is self.inter

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = self.inter.named(f"{prefix}.inter")
        if not self.shared_cau:
            out.update(self.intra.named(f"{prefix}.intra"))
        out[f"{prefix}.mu"] = self.mu
        out[f"{prefix}.center_kernel"] = self.center_kernel
        out[f"{prefix}.neighbor_kernel"] = self.neighbor_kernel
        out[f"{prefix}.rel_weight"] = self.rel_weight
        return out


@dataclass
class PlainAttnParams:
    """Ablation layer: linear q/k/v self-attention, neighbors mean-pooled."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w_q": self.w_q, f"{prefix}.w_k": self.w_k, f"{prefix}.w_v": self.w_v}


@dataclass
class HeadParams:
    collapse_kernel: Tensor  # (1, c, 1) channel collapse
    mix_w: Tensor            # (t_max, t_pred) time mixer
    mix_b: Tensor            # (1, t_pred)

    def named(self, prefix: str = "head") -> dict[str, Tensor]:
        return {
            f"{prefix}.collapse_kernel": self.collapse_kernel,
            f"{prefix}.mix_w": self.mix_w,
            f"{prefix}.mix_b": self.mix_b,
        }


def cau_init(rng: np.random.Generator, c: int) -> CAUParams:
    return CAUParams(
        q_kernel=Tensor(glorot(rng, (3, c, c), 3 * c, c), requires_grad=True),
        k_kernel=Tensor(glorot(rng, (3, c, c), 3 * c, c), requires_grad=True),
        v_kernel=Tensor(glorot(rng, (1, c, c), c, c), requires_grad=True),
    )


def layer_init(rng: np.random.Generator, c: int, t_max: int, share_cau: bool = False) -> LayerParams:
    inter = cau_init(rng, c)
    intra = inter if share_cau else cau_init(rng, c)
    return LayerParams(
        inter=inter,
        intra=intra,
        mu=Tensor(glorot(rng, (t_max, 1), t_max, 1), requires_grad=True),
        center_kernel=Tensor(glorot(rng, (1, c, 1), c, 1), requires_grad=True),
        neighbor_kernel=Tensor(glorot(rng, (1, c, 1), c, 1), requires_grad=True),
        rel_weight=Tensor(np.zeros((1, N_RELATIONS)), requires_grad=True),
    )


def plain_attn_init(rng: np.random.Generator, c: int) -> PlainAttnParams:
    return PlainAttnParams(
        w_q=Tensor(glorot(rng, (c, c), c, c), requires_grad=True),
        w_k=Tensor(glorot(rng, (c, c), c, c), requires_grad=True),
        w_v=Tensor(glorot(rng, (c, c), c, c), requires_grad=True),
    )


def head_init(rng: np.random.Generator, c: int, t_max: int, t_pred: int) -> HeadParams:
    return HeadParams(
        collapse_kernel=Tensor(glorot(rng, (1, c, 1), c, 1), requires_grad=True),
        mix_w=Tensor(glorot(rng, (t_max, t_pred), t_max, t_pred), requires_grad=True),
        mix_b=Tensor(np.zeros((1, t_pred)), requires_grad=True),
    )


def cau(p: CAUParams, h_u: Tensor, h_v: Tensor, mask: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Attention message from v to u; returns (message, attention matrix).

    Row t of the attention matrix distributes over key times <= t only.
    """
    if h_u.shape != h_v.shape:
        raise ShapeError(f"cau: representations differ in shape, {h_u.shape} vs {h_v.shape}")
    t_len, c = h_u.shape
    q = conv1d_causal(h_u, p.q_kernel)
    k = conv1d_causal(h_v, p.k_kernel)
    v = conv1d_causal(h_v, p.v_kernel)
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(c))
    attn = softmax_masked(scores, mask if mask is not None else causal_mask(t_len))
    return matmul(attn, v), attn


def aggregation_logit(p: LayerParams, h_u: Tensor, h_v: Tensor, rel: Relation) -> Tensor:
    """Scalar (1, 1) logit controlling how much of v's message u aggregates."""
    mixed = tanh(add(conv1d_causal(h_u, p.center_kernel), conv1d_causal(h_v, p.neighbor_kernel)))
    base = matmul(transpose(mixed), p.mu)
    pick = np.zeros((N_RELATIONS, 1))
    pick[rel.index, 0] = 1.0
    return add(base, matmul(p.rel_weight, Tensor(pick)))


def neighbor_weights(p: LayerParams, h_u: Tensor, neighbors: list[tuple[Tensor, Relation]]) -> Tensor:
    """Softmax over the aggregation logits of u's neighbor set; shape (1, n)."""
    logits = concat_lastdim([aggregation_logit(p, h_u, h_v, rel) for h_v, rel in neighbors])
    return softmax_masked(logits, Tensor(np.zeros((1, len(neighbors)))))


def _pick_column(row: Tensor, j: int, n: int) -> Tensor:
    sel = np.zeros((n, 1))
    sel[j, 0] = 1.0
    return matmul(row, Tensor(sel))


def ita_gcn_layer(
    p: LayerParams,
    ego: EgoSubgraph,
    hs: list[Tensor],
    mask: Tensor | None = None,
    use_neighbors: bool = True,
    attn_sink: dict | None = None,
) -> list[Tensor]:
    """One graph-convolution step over all local nodes of an ego subgraph.

    Every node receives its own intra-attention term; nodes with in-neighbors
    additionally receive the alpha-weighted sum of inter-attention messages.
    ``attn_sink``, when given, collects post-softmax matrices keyed by
    ``("intra", u)`` and ``("inter", u, v)``.
    """
    if mask is None:
        mask = causal_mask(hs[0].shape[0])
    out: list[Tensor] = []
    for u in range(len(hs)):
        self_msg, self_attn = cau(p.intra, hs[u], hs[u], mask)
        if attn_sink is not None:
            attn_sink[("intra", u)] = self_attn
        nbrs = ego.in_adj[u] if use_neighbors else []
        if not nbrs:
            out.append(self_msg)
            continue
        alphas = neighbor_weights(p, hs[u], [(hs[v], rel) for v, rel in nbrs])
        agg: Tensor | None = None
        for j, (v, rel) in enumerate(nbrs):
            msg, attn = cau(p.inter, hs[u], hs[v], mask)
            if attn_sink is not None:
                attn_sink[("inter", u, v)] = attn
            weighted = hadamard(msg, _pick_column(alphas, j, len(nbrs)))
            agg = weighted if agg is None else add(agg, weighted)
        out.append(add(agg, self_msg))
    return out


def plain_attention_layer(
    p: PlainAttnParams,
    ego: EgoSubgraph,
    hs: list[Tensor],
    mask: Tensor | None = None,
    use_neighbors: bool = True,
    attn_sink: dict | None = None,
) -> list[Tensor]:
    """Ablation layer: causal-masked linear self-attention plus, when a node
    has in-neighbors, the plain mean of their current representations."""
    t_len, c = hs[0].shape
    if mask is None:
        mask = causal_mask(t_len)
    out: list[Tensor] = []
    for u in range(len(hs)):
        q = matmul(hs[u], p.w_q)
        k = matmul(hs[u], p.w_k)
        v = matmul(hs[u], p.w_v)
        attn = softmax_masked(scale(matmul(q, transpose(k)), 1.0 / math.sqrt(c)), mask)
        if attn_sink is not None:
            attn_sink[("intra", u)] = attn
        h_new = matmul(attn, v)
        nbrs = ego.in_adj[u] if use_neighbors else []
        if nbrs:
            pooled: Tensor | None = None
            for v_idx, _rel in nbrs:
                pooled = hs[v_idx] if pooled is None else add(pooled, hs[v_idx])
            h_new = add(h_new, scale(pooled, 1.0 / len(nbrs)))
        out.append(h_new)
    return out


def predict_head(p: HeadParams, h_final: Tensor, e: Tensor) -> Tensor:
    """Forecast head: residual add of the temporal embedding, channel
    collapse, affine time mixing, ReLU. Output (1, t_pred), nonnegative."""
    resid = add(h_final, e)
    collapsed = conv1d_causal(resid, p.collapse_kernel)  # (t, 1)
    return relu(add(matmul(transpose(collapsed), p.mix_w), p.mix_b))


def mse_loss(pred: Tensor, truth: Tensor) -> Tensor:
    if pred.shape != truth.shape:
        raise ShapeError(f"mse_loss: shape mismatch {pred.shape} vs {truth.shape}")
    diff = sub(pred, truth)
    return scale(sum_all(hadamard(diff, diff)), 1.0 / diff.size)
