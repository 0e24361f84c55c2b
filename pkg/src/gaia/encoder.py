"""Per-node encoding pipeline.

Two stages. The fusion stage lifts the scalar GMV, the temporal features and
the static features of one node into a common channel space at every
timestep, concatenates, and mixes them with a fused projection; the temporal
biases are full ``(t_max, c)`` matrices indexed by position, which — given
right-aligned padding — double as learned positional encodings. The temporal
stage runs a group of causal convolutions at dyadic widths (2, 4, ..., 2^K)
twice, once as a pattern-capture branch and once as a denoising branch, and
gates them together: ``relu(capture) * sigmoid(denoise)``.

A reduced single-projection fusion (shared bias, no per-source projections)
and a single width-4 kernel pair are provided as ablation variants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat_lastdim,
    conv1d_causal_segmented,
    hadamard,
    matmul,
    relu,
    repeat_rows_block,
    sigmoid,
    tile_vertical,
    transpose,
)

__all__ = [
    "FFLParams",
    "RawFuseParams",
    "TELParams",
    "glorot",
    "ffl_init",
    "raw_fuse_init",
    "tel_init",
    "tel_init_single",
    "ffl_forward",
    "ffl_forward_batch",
    "raw_fuse_forward",
    "raw_fuse_forward_batch",
    "tel_forward",
    "tel_forward_batch",
]


def glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


@dataclass
class FFLParams:
    """Per-source projections plus the fused mixer.

    Shapes: ``gmv_w/gmv_b`` (1, c); ``temporal_w`` (c, d_t) with a positional
    bias ``temporal_b`` (t_max, c); ``static_w`` (c, d_s) with bias (1, c);
    ``fuse_w`` (c, 3c) with positional bias ``fuse_b`` (t_max, c).
    """

    gmv_w: Tensor
    gmv_b: Tensor
    temporal_w: Tensor
    temporal_b: Tensor
    static_w: Tensor
    static_b: Tensor
    fuse_w: Tensor
    fuse_b: Tensor

    def named(self, prefix: str = "ffl") -> dict[str, Tensor]:
        return {
            f"{prefix}.gmv_w": self.gmv_w,
            f"{prefix}.gmv_b": self.gmv_b,
            f"{prefix}.temporal_w": self.temporal_w,
            f"{prefix}.temporal_b": self.temporal_b,
            f"{prefix}.static_w": self.static_w,
            f"{prefix}.static_b": self.static_b,
            f"{prefix}.fuse_w": self.fuse_w,
            f"{prefix}.fuse_b": self.fuse_b,
        }


@dataclass
class RawFuseParams:
    """Ablation fusion: one projection of the raw concatenation, one shared bias."""

    w: Tensor  # (c, 1 + d_t + d_s)
    b: Tensor  # (1, c)

    def named(self, prefix: str = "ffl") -> dict[str, Tensor]:
        return {f"{prefix}.raw_w": self.w, f"{prefix}.raw_b": self.b}


@dataclass
class TELParams:
    """Capture/denoise kernel pairs; entry k has shape (width_k, c, c_out_k)."""

    capture: list[Tensor]
    denoise: list[Tensor]

    def named(self, prefix: str = "tel") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, k in enumerate(self.capture):
            out[f"{prefix}.capture{i}"] = k
        for i, k in enumerate(self.denoise):
            out[f"{prefix}.denoise{i}"] = k
        return out


def ffl_init(rng: np.random.Generator, c: int, d_t: int, d_s: int, t_max: int) -> FFLParams:
    return FFLParams(
        gmv_w=Tensor(glorot(rng, (1, c), 1, c), requires_grad=True),
        gmv_b=Tensor(np.zeros((1, c)), requires_grad=True),
        temporal_w=Tensor(glorot(rng, (c, d_t), d_t, c), requires_grad=True),
        temporal_b=Tensor(np.zeros((t_max, c)), requires_grad=True),
        static_w=Tensor(glorot(rng, (c, d_s), d_s, c), requires_grad=True),
        static_b=Tensor(np.zeros((1, c)), requires_grad=True),
        fuse_w=Tensor(glorot(rng, (c, 3 * c), 3 * c, c), requires_grad=True),
        fuse_b=Tensor(np.zeros((t_max, c)), requires_grad=True),
    )


def raw_fuse_init(rng: np.random.Generator, c: int, d_t: int, d_s: int) -> RawFuseParams:
    d_in = 1 + d_t + d_s
    return RawFuseParams(
        w=Tensor(glorot(rng, (c, d_in), d_in, c), requires_grad=True),
        b=Tensor(np.zeros((1, c)), requires_grad=True),
    )


def tel_init(rng: np.random.Generator, c: int, k_groups: int, t_max: int) -> TELParams:
    """Dyadic kernel group: widths 2^1 .. 2^K, each producing c/K channels."""
    if k_groups < 1:
        raise ValueError(f"kernel group size must be >= 1, got {k_groups}")
    if c % k_groups != 0:
        raise ValueError(f"channels ({c}) must divide evenly over the kernel group ({k_groups})")
    if 2**k_groups > t_max:
        raise ValueError(f"largest kernel width 2^{k_groups} exceeds t_max={t_max}")
    c_out = c // k_groups
    capture = [Tensor(glorot(rng, (2**k, c, c_out), (2**k) * c, c_out), requires_grad=True) for k in range(1, k_groups + 1)]
    denoise = [Tensor(glorot(rng, (2**k, c, c_out), (2**k) * c, c_out), requires_grad=True) for k in range(1, k_groups + 1)]
    return TELParams(capture=capture, denoise=denoise)


def tel_init_single(rng: np.random.Generator, c: int, width: int = 4) -> TELParams:
    """Ablation variant: one capture kernel and one denoise kernel, width 4, full c channels."""
    capture = [Tensor(glorot(rng, (width, c, c), width * c, c), requires_grad=True)]
    denoise = [Tensor(glorot(rng, (width, c, c), width * c, c), requires_grad=True)]
    return TELParams(capture=capture, denoise=denoise)


def ffl_forward_batch(p: FFLParams, gmv: Tensor, tf: Tensor, sf: Tensor, n_nodes: int, t_len: int) -> Tensor:
    """Fuse the inputs of ``n_nodes`` stacked nodes into per-timestep vectors.

    ``gmv``: (n*t, 1) series column; ``tf``: (n*t, d_t); ``sf``: (n, d_s).
    Each node's static projection is computed once and broadcast over its
    ``t_len`` rows; the positional biases repeat per node. Output (n*t, c).
    """
    if gmv.ndim != 2 or gmv.shape[1] != 1 or gmv.shape[0] != n_nodes * t_len:
        raise ShapeError(f"ffl_forward: gmv must be ({n_nodes}*{t_len}, 1), got {gmv.shape}")
    if tf.shape[0] != gmv.shape[0] or sf.shape[0] != n_nodes:
        raise ShapeError(f"ffl_forward: inconsistent inputs gmv={gmv.shape} tf={tf.shape} sf={sf.shape}")
    if p.temporal_b.shape[0] != t_len:
        raise ShapeError(f"ffl_forward: positional bias covers {p.temporal_b.shape[0]} steps, input has {t_len}")
    z_lift = add(matmul(gmv, p.gmv_w), p.gmv_b)
    t_proj = add(matmul(tf, transpose(p.temporal_w)), tile_vertical(p.temporal_b, n_nodes))
    s_proj = add(matmul(sf, transpose(p.static_w)), p.static_b)
    fused = concat_lastdim([z_lift, t_proj, repeat_rows_block(s_proj, t_len)])
    return add(matmul(fused, transpose(p.fuse_w)), tile_vertical(p.fuse_b, n_nodes))


def ffl_forward(p: FFLParams, gmv: Tensor, tf: Tensor, sf: Tensor) -> Tensor:
    """Single-node fusion; ``gmv`` (t, 1), ``tf`` (t, d_t), ``sf`` (1, d_s)."""
    return ffl_forward_batch(p, gmv, tf, sf, 1, gmv.shape[0])


def raw_fuse_forward_batch(p: RawFuseParams, gmv: Tensor, tf: Tensor, sf: Tensor, n_nodes: int, t_len: int) -> Tensor:
    raw = concat_lastdim([gmv, tf, repeat_rows_block(sf, t_len)])
    return add(matmul(raw, transpose(p.w)), p.b)


def raw_fuse_forward(p: RawFuseParams, gmv: Tensor, tf: Tensor, sf: Tensor) -> Tensor:
    return raw_fuse_forward_batch(p, gmv, tf, sf, 1, gmv.shape[0])


def tel_forward_batch(p: TELParams, s: Tensor, t_len: int) -> Tensor:
    """Gated multi-scale temporal embedding of stacked fused features
    ``s`` (n*t, c); each ``t_len`` block is convolved independently."""
    capture = concat_lastdim([conv1d_causal_segmented(s, k, t_len) for k in p.capture])
    denoise = concat_lastdim([conv1d_causal_segmented(s, k, t_len) for k in p.denoise])
    if capture.shape[1] != s.shape[1]:
        raise ShapeError(f"tel_forward: kernel group emits {capture.shape[1]} channels, expected {s.shape[1]}")
    return hadamard(relu(capture), sigmoid(denoise))


def tel_forward(p: TELParams, s: Tensor) -> Tensor:
    """Single-series temporal embedding of ``s`` (t, c)."""
    return tel_forward_batch(p, s, s.shape[0])
