"""Feature fusion and temporal embedding: oracles, gates, causality, gradients."""

import numpy as np

from gaia.encoder import ffl_forward, ffl_init, tel_forward, tel_init
from gaia.tensor import Tensor, check_gradients, sum_all, hadamard

from reference_impls import ref_causal_conv, ref_ffl, ref_tel

import pytest


def params_as_arrays(p):
    return {
        "gmv_w": p.gmv_w.data,
        "gmv_b": p.gmv_b.data,
        "temporal_w": p.temporal_w.data,
        "temporal_b": p.temporal_b.data,
        "static_w": p.static_w.data,
        "static_b": p.static_b.data,
        "fuse_w": p.fuse_w.data,
        "fuse_b": p.fuse_b.data,
    }


def run_ffl(p, gmv, tf, sf):
    return ffl_forward(p, Tensor(gmv[:, None]), Tensor(tf), Tensor(sf[None, :])).data


def zero_ffl(c, d_t, d_s, t):
    rng = np.random.default_rng(0)
    p = ffl_init(rng, c, d_t, d_s, t)
    for t_ in [p.gmv_w, p.gmv_b, p.temporal_w, p.temporal_b, p.static_w, p.static_b, p.fuse_w, p.fuse_b]:
        t_.data[:] = 0.0
    return p


# ---------------------------------------------------------------------------
# feature fusion
# ---------------------------------------------------------------------------


def test_ffl_all_zero():
    c, d_t, d_s, t = 4, 2, 3, 5
    p = zero_ffl(c, d_t, d_s, t)
    out = run_ffl(p, np.zeros(t), np.zeros((t, d_t)), np.zeros(d_s))
    assert np.array_equal(out, np.zeros((t, c)))


def test_ffl_block_identity_isolates_gmv_channel(rng):
    c, d_t, d_s, t = 4, 2, 3, 5
    p = zero_ffl(c, d_t, d_s, t)
    p.gmv_w.data[:] = 1.0  # lift gmv into every channel
    p.fuse_w.data[:, :c] = np.eye(c)  # pass only the lifted-gmv block through
    gmv = rng.uniform(0, 10, t)
    out = run_ffl(p, gmv, rng.normal(size=(t, d_t)), rng.normal(size=d_s))
    assert np.allclose(out, np.tile(gmv[:, None], (1, c)), atol=1e-15)


def test_ffl_matches_loop_reference(rng):
    c, d_t, d_s, t = 4, 2, 3, 6
    for _ in range(20):
        p = ffl_init(rng, c, d_t, d_s, t)
        for t_ in [p.gmv_b, p.temporal_b, p.static_b, p.fuse_b]:
            t_.data[:] = rng.normal(size=t_.data.shape)
        gmv = rng.uniform(0, 10, t)
        tf = rng.normal(size=(t, d_t))
        sf = rng.normal(size=d_s)
        out = run_ffl(p, gmv, tf, sf)
        ref = ref_ffl(params_as_arrays(p), gmv, tf, sf)
        assert np.max(np.abs(out - ref)) < 1e-12


# ---------------------------------------------------------------------------
# temporal embedding
# ---------------------------------------------------------------------------


def test_tel_relu_kills_gate(rng):
    c, t = 4, 8
    p = tel_init(rng, c, 2, t)
    for k in p.capture:
        k.data[:] = -1.0  # with positive inputs every capture output is negative
    s = Tensor(np.abs(rng.normal(size=(t, c))) + 0.1)
    out = tel_forward(p, s).data
    assert np.array_equal(out, np.zeros((t, c)))


def test_tel_zero_denoise_gives_half_relu(rng):
    c, t = 4, 8
    p = tel_init(rng, c, 2, t)
    for k in p.denoise:
        k.data[:] = 0.0
    s = rng.normal(size=(t, c))
    out = tel_forward(p, Tensor(s)).data
    cap = ref_tel([k.data for k in p.capture], [np.zeros_like(k.data) for k in p.capture], s)
    assert np.allclose(out, cap, atol=1e-15)
    expected = 0.5 * np.maximum(
        np.concatenate([ref_causal_conv(s, k.data) for k in p.capture], axis=1), 0.0
    )
    assert np.allclose(out, expected, atol=1e-15)


def test_tel_matches_independent_reference(rng):
    c, t, k_groups = 4, 8, 2
    for _ in range(20):
        p = tel_init(rng, c, k_groups, t)
        s = rng.normal(size=(t, c))
        out = tel_forward(p, Tensor(s)).data
        ref = ref_tel([k.data for k in p.capture], [k.data for k in p.denoise], s)
        assert np.max(np.abs(out - ref)) < 1e-12


def test_tel_gate_boundedness(rng):
    c, t = 4, 8
    for _ in range(20):
        p = tel_init(rng, c, 2, t)
        s = rng.normal(size=(t, c))
        out = tel_forward(p, Tensor(s)).data
        cap = np.concatenate(
            [ref_causal_conv(s, k.data) for k in p.capture], axis=1
        )
        assert np.all(out >= 0.0)
        assert np.all(out <= np.maximum(cap, 0.0) + 1e-15)


def test_tel_causality_bit_exact(rng):
    c, t = 6, 10
    p = tel_init(rng, c, 3, t)
    s = rng.normal(size=(t, c))
    base = tel_forward(p, Tensor(s)).data
    for probe_t in [3, 6, 9]:
        s2 = s.copy()
        s2[probe_t] += rng.normal(size=c)
        bumped = tel_forward(p, Tensor(s2)).data
        assert np.array_equal(base[:probe_t], bumped[:probe_t])


def test_tel_invalid_group():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="divide evenly"):
        tel_init(rng, 5, 2, 16)
    with pytest.raises(ValueError, match="exceeds t_max"):
        tel_init(rng, 4, 4, 8)


def test_encoder_gradients(rng):
    """Fused pipeline gradient check at the module-level tolerance."""
    c, d_t, d_s, t = 4, 3, 2, 8
    p = ffl_init(rng, c, d_t, d_s, t)
    q = tel_init(rng, c, 2, t)
    gmv = Tensor(rng.uniform(0, 5, (t, 1)))
    tf = Tensor(rng.normal(size=(t, d_t)))
    sf = Tensor(rng.normal(size=(1, d_s)))
    w = Tensor(rng.normal(size=(t, c)))
    params = {**params_named(p), **{f"tel.c{i}": k for i, k in enumerate(q.capture)}, **{f"tel.d{i}": k for i, k in enumerate(q.denoise)}}

    def f():
        e = tel_forward(q, ffl_forward(p, gmv, tf, sf))
        return sum_all(hadamard(e, w))

    report = check_gradients(f, list(params.values()), h=1e-4, tol=1e-4, names=list(params))
    assert report.passed, report.summary()


def params_named(p):
    return p.named("ffl")
