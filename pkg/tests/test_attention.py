"""Graph attention: CAU, aggregation weights, layers, head, loss."""

import numpy as np
import pytest

from gaia.attention import (
    HeadParams,
    aggregation_logit,
    cau,
    cau_init,
    causal_mask,
    head_init,
    ita_gcn_layer,
    layer_init,
    mse_loss,
    neighbor_weights,
    predict_head,
)
from gaia.graph import EgoSubgraph, Relation
from gaia.tensor import ShapeError, Tensor, backward, check_gradients, sum_all, hadamard

from reference_impls import ref_cau, ref_head, ref_ita_layer


def cau_as_dict(p):
    return {"q": p.q_kernel.data, "k": p.k_kernel.data, "v": p.v_kernel.data}


def layer_as_dict(p):
    return {
        "inter": cau_as_dict(p.inter),
        "intra": cau_as_dict(p.intra),
        "mu": p.mu.data,
        "center_kernel": p.center_kernel.data,
        "neighbor_kernel": p.neighbor_kernel.data,
        "rel_weight": p.rel_weight.data,
    }


def dummy_ego(in_adj):
    n = len(in_adj)
    return EgoSubgraph(
        center="x0",
        node_ids=[f"x{i}" for i in range(n)],
        padded_gmv=np.zeros((n, 1)),
        padded_temporal=np.zeros((n, 1, 1)),
        static=np.zeros((n, 1)),
        valid_mask=np.ones((n, 1), dtype=bool),
        in_adj=in_adj,
    )


# ---------------------------------------------------------------------------
# CAU
# ---------------------------------------------------------------------------


def test_cau_zero_source_gives_zero(rng):
    c, t = 4, 6
    p = cau_init(rng, c)
    h_u = Tensor(rng.normal(size=(t, c)))
    out, _ = cau(p, h_u, Tensor(np.zeros((t, c))))
    assert np.array_equal(out.data, np.zeros((t, c)))


def test_cau_row0_equals_value_row0(rng):
    c, t = 4, 6
    p = cau_init(rng, c)
    h_u = Tensor(rng.normal(size=(t, c)))
    h_v = Tensor(rng.normal(size=(t, c)))
    out, attn = cau(p, h_u, h_v)
    from gaia.tensor import conv1d_causal

    v = conv1d_causal(h_v, p.v_kernel).data
    assert attn.data[0, 0] == 1.0
    assert np.allclose(out.data[0], v[0], atol=1e-15)


def test_cau_matches_reference(rng):
    c, t = 4, 7
    for _ in range(20):
        p = cau_init(rng, c)
        h_u = rng.normal(size=(t, c))
        h_v = rng.normal(size=(t, c))
        out, attn = cau(p, Tensor(h_u), Tensor(h_v))
        ref_out, ref_attn = ref_cau(cau_as_dict(p), h_u, h_v)
        assert np.max(np.abs(out.data - ref_out)) < 1e-12
        assert np.max(np.abs(attn.data - ref_attn)) < 1e-12


def test_cau_attention_is_lower_triangular_stochastic(rng):
    c, t = 4, 9
    p = cau_init(rng, c)
    _, attn = cau(p, Tensor(rng.normal(size=(t, c))), Tensor(rng.normal(size=(t, c))))
    a = attn.data
    assert np.all(a[np.triu_indices(t, k=1)] == 0.0)
    assert np.all(np.abs(a.sum(axis=1) - 1.0) <= 1e-12)


def test_cau_causality_bit_exact(rng):
    """Perturbing the source at time t never changes attention rows < t."""
    c, t = 4, 8
    p = cau_init(rng, c)
    h_u = rng.normal(size=(t, c))
    h_v = rng.normal(size=(t, c))
    out_base, attn_base = cau(p, Tensor(h_u), Tensor(h_v))
    for probe in [2, 5, 7]:
        hv2 = h_v.copy()
        hv2[probe] += rng.normal(size=c)
        out2, attn2 = cau(p, Tensor(h_u), Tensor(hv2))
        assert np.array_equal(attn_base.data[:probe], attn2.data[:probe])
        assert np.array_equal(out_base.data[:probe], out2.data[:probe])
        hu2 = h_u.copy()
        hu2[probe] += rng.normal(size=c)
        out3, attn3 = cau(p, Tensor(hu2), Tensor(h_v))
        assert np.array_equal(attn_base.data[:probe], attn3.data[:probe])
        assert np.array_equal(out_base.data[:probe], out3.data[:probe])


# ---------------------------------------------------------------------------
# aggregation weights
# ---------------------------------------------------------------------------


def test_alpha_uniform_when_mu_zero(rng):
    c, t = 4, 6
    p = layer_init(rng, c, t)
    p.mu.data[:] = 0.0
    p.rel_weight.data[:] = 0.0
    hs = [Tensor(rng.normal(size=(t, c))) for _ in range(4)]
    w = neighbor_weights(p, hs[0], [(hs[1], Relation.SUPPLY), (hs[2], Relation.OWNER), (hs[3], Relation.SUPPLY)])
    assert np.allclose(w.data, np.full((1, 3), 1 / 3), atol=1e-15)


def test_alpha_singleton_is_one(rng):
    c, t = 4, 6
    p = layer_init(rng, c, t)
    hs = [Tensor(rng.normal(size=(t, c))) for _ in range(2)]
    w = neighbor_weights(p, hs[0], [(hs[1], Relation.SUPPLY)])
    assert w.data.shape == (1, 1)
    assert w.data[0, 0] == 1.0


def test_alpha_symmetric_pair(rng):
    c, t = 4, 6
    p = layer_init(rng, c, t)
    h_u = Tensor(rng.normal(size=(t, c)))
    h_v = Tensor(rng.normal(size=(t, c)))
    # identical neighbors get identical logits, hence 0.5 / 0.5
    w = neighbor_weights(p, h_u, [(h_v, Relation.SUPPLY), (h_v, Relation.SUPPLY)])
    assert np.allclose(w.data, [[0.5, 0.5]], atol=1e-15)


def test_relation_term_shifts_logit(rng):
    c, t = 4, 6
    p = layer_init(rng, c, t)
    p.rel_weight.data[:] = [[2.0, -1.0]]
    h_u = Tensor(rng.normal(size=(t, c)))
    h_v = Tensor(rng.normal(size=(t, c)))
    g_supply = aggregation_logit(p, h_u, h_v, Relation.SUPPLY).item()
    g_owner = aggregation_logit(p, h_u, h_v, Relation.OWNER).item()
    assert abs((g_supply - g_owner) - 3.0) < 1e-12


# ---------------------------------------------------------------------------
# layer
# ---------------------------------------------------------------------------


def test_layer_isolated_node_is_pure_self_term(rng):
    c, t = 4, 6
    p = layer_init(rng, c, t)
    h = rng.normal(size=(t, c))
    out = ita_gcn_layer(p, dummy_ego([[]]), [Tensor(h)])
    ref, _ = ref_cau(cau_as_dict(p.intra), h, h)
    assert np.max(np.abs(out[0].data - ref)) < 1e-12


def test_layer_single_neighbor_alpha_one(rng):
    c, t = 4, 6
    p = layer_init(rng, c, t)
    h0, h1 = rng.normal(size=(t, c)), rng.normal(size=(t, c))
    ego = dummy_ego([[(1, Relation.SUPPLY)], []])
    out = ita_gcn_layer(p, ego, [Tensor(h0), Tensor(h1)])
    inter, _ = ref_cau(cau_as_dict(p.inter), h0, h1)
    intra, _ = ref_cau(cau_as_dict(p.intra), h0, h0)
    assert np.max(np.abs(out[0].data - (inter + intra))) < 1e-12


def test_layer_matches_reference_multi_node(rng):
    """4 nodes, 2 stacked layers, random params vs the materialized reference."""
    c, t = 4, 6
    in_adj = [
        [(1, Relation.SUPPLY), (2, Relation.OWNER)],
        [(3, Relation.SUPPLY)],
        [(0, Relation.OWNER)],
        [],
    ]
    ego = dummy_ego(in_adj)
    for _ in range(20):
        layers = [layer_init(rng, c, t), layer_init(rng, c, t)]
        hs_np = [rng.normal(size=(t, c)) for _ in range(4)]
        hs = [Tensor(h) for h in hs_np]
        for lp in layers:
            hs = ita_gcn_layer(lp, ego, hs)
        ref_adj = [[(v, r.index) for v, r in row] for row in in_adj]
        ref_hs = list(hs_np)
        for lp in layers:
            ref_hs = ref_ita_layer(layer_as_dict(lp), ref_adj, ref_hs)
        for got, want in zip(hs, ref_hs):
            assert np.max(np.abs(got.data - want)) < 1e-10


def test_layer_neighbor_permutation_invariance(rng):
    c, t = 4, 6
    p = layer_init(rng, c, t)
    hs = [Tensor(rng.normal(size=(t, c))) for _ in range(4)]
    fwd = ita_gcn_layer(p, dummy_ego([[(1, Relation.SUPPLY), (2, Relation.OWNER), (3, Relation.SUPPLY)], [], [], []]), hs)
    rev = ita_gcn_layer(p, dummy_ego([[(3, Relation.SUPPLY), (2, Relation.OWNER), (1, Relation.SUPPLY)], [], [], []]), hs)
    assert np.max(np.abs(fwd[0].data - rev[0].data)) < 1e-12


def test_alpha_rows_sum_to_one(rng):
    c, t = 4, 6
    p = layer_init(rng, c, t)
    hs = [Tensor(rng.normal(size=(t, c))) for _ in range(5)]
    w = neighbor_weights(p, hs[0], [(hs[i], Relation.SUPPLY) for i in range(1, 5)])
    assert abs(w.data.sum() - 1.0) <= 1e-12


# ---------------------------------------------------------------------------
# head and loss
# ---------------------------------------------------------------------------


def test_head_zero_params_zero_output(rng):
    c, t, t_pred = 4, 6, 3
    p = head_init(rng, c, t, t_pred)
    p.collapse_kernel.data[:] = 0.0
    p.mix_w.data[:] = 0.0
    p.mix_b.data[:] = 0.0
    y = predict_head(p, Tensor(rng.normal(size=(t, c))), Tensor(rng.normal(size=(t, c))))
    assert np.array_equal(y.data, np.zeros((1, t_pred)))


def test_head_nonnegative(rng):
    c, t, t_pred = 4, 6, 3
    for _ in range(20):
        p = head_init(rng, c, t, t_pred)
        y = predict_head(p, Tensor(rng.normal(size=(t, c))), Tensor(rng.normal(size=(t, c))))
        assert np.all(y.data >= 0.0)


def test_head_matches_reference(rng):
    c, t, t_pred = 4, 6, 3
    for _ in range(20):
        p = head_init(rng, c, t, t_pred)
        p.mix_b.data[:] = rng.normal(size=(1, t_pred))
        h = rng.normal(size=(t, c))
        e = rng.normal(size=(t, c))
        y = predict_head(p, Tensor(h), Tensor(e)).data[0]
        ref = ref_head(
            {"collapse_kernel": p.collapse_kernel.data, "mix_w": p.mix_w.data, "mix_b": p.mix_b.data}, h, e
        )
        assert np.max(np.abs(y - ref)) < 1e-12


def test_mse_loss_values():
    a = Tensor(np.ones((2, 3)))
    assert mse_loss(a, Tensor(np.ones((2, 3)))).item() == 0.0
    assert mse_loss(Tensor(np.ones((2, 3)) * 2), Tensor(np.ones((2, 3)))).item() == 1.0
    with pytest.raises(ShapeError):
        mse_loss(a, Tensor(np.ones((3, 2))))


def test_mse_loss_gradient(rng):
    pred = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    truth = Tensor(rng.normal(size=(3, 2)))
    backward(mse_loss(pred, truth))
    assert np.allclose(pred.grad, 2 * (pred.data - truth.data) / 6, atol=1e-15)
    report = check_gradients(lambda: mse_loss(pred, truth), [pred], h=1e-6, tol=1e-6)
    assert report.passed, report.summary()


def test_layer_gradients(rng):
    """Gradient check through a full layer with neighbors."""
    c, t = 3, 5
    p = layer_init(rng, c, t)
    hs_np = [rng.normal(size=(t, c)) for _ in range(3)]
    ego = dummy_ego([[(1, Relation.SUPPLY), (2, Relation.OWNER)], [], []])
    w = Tensor(rng.normal(size=(t, c)))
    params = p.named("layer0")

    def f():
        hs = [Tensor(h) for h in hs_np]
        out = ita_gcn_layer(p, ego, hs)
        return sum_all(hadamard(out[0], w))

    report = check_gradients(f, list(params.values()), h=1e-5, tol=1e-5, names=list(params))
    assert report.passed, report.summary()
