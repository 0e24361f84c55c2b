"""Full forecasting model: encoder, stacked graph-attention layers, head.

The model operates on one ego subgraph at a time. All local nodes are
encoded, every layer updates every local node (so information can travel one
hop per layer), and the head reads the center node's final representation
with a residual connection back to its temporal embedding.

Ablation switches:
  * ``no_ffl``  — single raw-concat projection instead of the fusion layer
  * ``no_tel``  — one width-4 capture/denoise kernel pair instead of the group
  * ``no_ita``  — linear causal self-attention with mean-pooled neighbors
  * ``no_graph`` — neighbor aggregation disabled entirely (self term only)
"""

from __future__ import annotations

import numpy as np

from . import attention as att
from . import encoder as enc
from .graph import EgoSubgraph
from .tensor import Tensor, split_rows

__all__ = ["GaiaModel", "ABLATIONS"]

ABLATIONS = frozenset({"no_ita", "no_ffl", "no_tel", "no_graph"})


class GaiaModel:
    def __init__(
        self,
        c: int,
        k_groups: int,
        n_layers: int,
        t_max: int,
        t_pred: int,
        d_t: int,
        d_s: int,
        ablation: frozenset[str] = frozenset(),
        share_cau: bool = False,
        seed: int = 0,
    ):
        unknown = set(ablation) - ABLATIONS
        if unknown:
            raise ValueError(f"unknown ablation name(s): {sorted(unknown)}")
        self.c = c
        self.k_groups = k_groups
        self.n_layers = n_layers
        self.t_max = t_max
        self.t_pred = t_pred
        self.d_t = d_t
        self.d_s = d_s
        self.ablation = frozenset(ablation)
        self.share_cau = share_cau

        rng = np.random.default_rng([seed, 101])
        if "no_ffl" in self.ablation:
            self.fuse = enc.raw_fuse_init(rng, c, d_t, d_s)
        else:
            self.fuse = enc.ffl_init(rng, c, d_t, d_s, t_max)
        if "no_tel" in self.ablation:
            self.tel = enc.tel_init_single(rng, c)
        else:
            self.tel = enc.tel_init(rng, c, k_groups, t_max)
        self.layers: list = []
        for _ in range(n_layers):
            if "no_ita" in self.ablation:
                self.layers.append(att.plain_attn_init(rng, c))
            else:
                self.layers.append(att.layer_init(rng, c, t_max, share_cau=share_cau))
        self.head = att.head_init(rng, c, t_max, t_pred)
        self._mask = att.causal_mask(t_max)

    # -- parameter access ---------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        """All learnable tensors in a stable order, keyed by canonical name."""
        out = self.fuse.named("ffl")
        out.update(self.tel.named("tel"))
        for i, layer in enumerate(self.layers):
            out.update(layer.named(f"layer{i}"))
        out.update(self.head.named("head"))
        return out

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise ValueError(f"parameter set mismatch: missing={sorted(missing)}, unexpected={sorted(extra)}")
        for name, p in params.items():
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != p.data.shape:
                raise ValueError(f"parameter {name}: shape {a.shape} != expected {p.data.shape}")
            p.data = a.copy()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    # -- forward ------------------------------------------------------------

    def encode_nodes(self, gmv: np.ndarray, temporal: np.ndarray, static: np.ndarray) -> list[Tensor]:
        """Temporal embeddings for ``n`` stacked nodes.

        ``gmv`` (n, t), ``temporal`` (n, t, d_t), ``static`` (n, d_s); the
        fusion and convolution stages run over all nodes in one shot, then
        the result is split back into per-node (t, c) tensors.
        """
        n, t_len = gmv.shape
        gmv_col = Tensor(gmv.reshape(n * t_len, 1))
        tf_all = Tensor(temporal.reshape(n * t_len, temporal.shape[2]))
        sf_all = Tensor(static)
        if "no_ffl" in self.ablation:
            fused = enc.raw_fuse_forward_batch(self.fuse, gmv_col, tf_all, sf_all, n, t_len)
        else:
            fused = enc.ffl_forward_batch(self.fuse, gmv_col, tf_all, sf_all, n, t_len)
        return split_rows(enc.tel_forward_batch(self.tel, fused, t_len), t_len)

    def forward_batch(
        self,
        egos: list[EgoSubgraph],
        gmvs: list[np.ndarray],
        temporals: list[np.ndarray],
        statics: list[np.ndarray],
        attn_sinks: list[dict] | None = None,
    ) -> list[Tensor]:
        """Predict every ego's center node; one (1, t_pred) tensor per ego.

        Inputs are the (already normalized) padded arrays for every local
        node of each ego. All nodes of the whole batch are encoded in one
        fused pass; the graph-attention stage then runs per ego. When given,
        ``attn_sinks[i]`` collects ego ``i``'s post-softmax attention
        matrices keyed by ``(layer_index, record_key)``.
        """
        counts = [ego.n_local for ego in egos]
        hs_flat = self.encode_nodes(
            np.concatenate(gmvs, axis=0),
            np.concatenate(temporals, axis=0),
            np.concatenate(statics, axis=0),
        )
        use_neighbors = "no_graph" not in self.ablation
        preds: list[Tensor] = []
        off = 0
        for idx, ego in enumerate(egos):
            hs = hs_flat[off : off + counts[idx]]
            off += counts[idx]
            e_center = hs[0]
            for li, layer in enumerate(self.layers):
                sink = {} if attn_sinks is not None else None
                if "no_ita" in self.ablation:
                    hs = att.plain_attention_layer(layer, ego, hs, self._mask, use_neighbors, sink)
                else:
                    hs = att.ita_gcn_layer(layer, ego, hs, self._mask, use_neighbors, sink)
                if attn_sinks is not None:
                    for key, val in sink.items():
                        attn_sinks[idx][(li,) + key] = val
            preds.append(att.predict_head(self.head, hs[0], e_center))
        return preds

    def forward(
        self,
        ego: EgoSubgraph,
        gmv: np.ndarray,
        temporal: np.ndarray,
        static: np.ndarray,
        attn_sink: dict | None = None,
    ) -> Tensor:
        """Single-ego convenience wrapper around ``forward_batch``."""
        sinks = [attn_sink] if attn_sink is not None else None
        return self.forward_batch([ego], [gmv], [temporal], [static], sinks)[0]
