"""Graph store: schema validation, padding alignment, ego extraction."""

import json

import numpy as np
import pytest

from gaia.graph import (
    Edge,
    ESellerGraph,
    GraphFormatError,
    Relation,
    SellerNode,
    extract_ego,
    load_graph,
    pad_and_mask,
    save_graph,
)


def make_node(nid, months, d_t=2, d_s=3, value=1.0):
    return SellerNode(
        id=nid,
        gmv=np.full(months, value),
        temporal_feats=np.arange(months * d_t, dtype=float).reshape(months, d_t),
        static_feats=np.ones(d_s),
    )


def star_graph(n_leaves, rel=Relation.SUPPLY):
    nodes = [make_node("hub", 6)] + [make_node(f"leaf{i}", 4) for i in range(n_leaves)]
    edges = [Edge(f"leaf{i}", "hub", rel) for i in range(n_leaves)]
    return ESellerGraph(nodes, edges)


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------


def test_negative_gmv_rejected():
    with pytest.raises(GraphFormatError, match="negative GMV"):
        SellerNode("x", np.array([1.0, -0.5]), np.zeros((2, 1)), np.zeros(1))


def test_temporal_rows_must_match_history():
    with pytest.raises(GraphFormatError, match="one row per observed month"):
        SellerNode("x", np.ones(3), np.zeros((2, 1)), np.zeros(1))


def test_self_loop_rejected():
    nodes = [make_node("a", 3)]
    with pytest.raises(GraphFormatError, match="self-loop"):
        ESellerGraph(nodes, [Edge("a", "a", Relation.SUPPLY)])


def test_dangling_edge_names_the_id():
    nodes = [make_node("a", 3)]
    with pytest.raises(GraphFormatError, match="'ghost'"):
        ESellerGraph(nodes, [Edge("ghost", "a", Relation.SUPPLY)])


def test_owner_edges_expand_symmetrically():
    g = ESellerGraph([make_node("a", 3), make_node("b", 3)], [Edge("a", "b", Relation.OWNER)])
    assert g.in_neighbors["a"] == [("b", Relation.OWNER)]
    assert g.in_neighbors["b"] == [("a", Relation.OWNER)]
    assert g.n_edges == 1  # stored once


def test_supply_edges_are_directed():
    g = ESellerGraph([make_node("s", 3), make_node("r", 3)], [Edge("s", "r", Relation.SUPPLY)])
    assert g.in_neighbors["r"] == [("s", Relation.SUPPLY)]
    assert g.in_neighbors["s"] == []


# ---------------------------------------------------------------------------
# pad_and_mask
# ---------------------------------------------------------------------------


def test_pad_full_history_is_identity():
    node = make_node("a", 5)
    gmv, tf, mask = pad_and_mask(node, 5)
    assert np.array_equal(gmv, node.gmv)
    assert np.array_equal(tf, node.temporal_feats)
    assert mask.all()


def test_pad_right_aligns_short_history():
    node = make_node("a", 3, value=7.0)
    gmv, tf, mask = pad_and_mask(node, 5)
    assert np.array_equal(mask, [False, False, True, True, True])
    assert np.array_equal(gmv, [0, 0, 7, 7, 7])
    assert np.array_equal(tf[:2], np.zeros((2, 2)))
    assert np.array_equal(tf[2:], node.temporal_feats)


def test_pad_rejects_overlong_history():
    with pytest.raises(GraphFormatError, match="exceeds t_max"):
        pad_and_mask(make_node("a", 6), 5)


def test_pad_preserves_values_verbatim(rng):
    """Property over random nodes: mask count equals observed_len and the
    unpadded suffix is bitwise identical to the raw series."""
    for _ in range(50):
        months = int(rng.integers(1, 9))
        node = SellerNode("n", rng.uniform(0, 100, months), rng.normal(size=(months, 3)), rng.normal(size=2))
        gmv, tf, mask = pad_and_mask(node, 8)
        assert mask.sum() == months
        assert np.array_equal(gmv[8 - months :], node.gmv)
        assert np.array_equal(tf[8 - months :], node.temporal_feats)


# ---------------------------------------------------------------------------
# extract_ego
# ---------------------------------------------------------------------------


def test_ego_isolated_node():
    g = ESellerGraph([make_node("solo", 4)], [])
    ego = extract_ego(g, "solo", hops=2)
    assert ego.n_local == 1
    assert ego.in_adj == [[]]
    assert ego.node_ids == ["solo"]


def test_ego_star_under_cap():
    ego = extract_ego(star_graph(3), "hub", hops=1, max_neighbors_per_hop=10)
    assert ego.n_local == 4
    assert len(ego.in_adj[0]) == 3


def test_ego_cap_sampling_is_deterministic():
    g = star_graph(5)
    a = extract_ego(g, "hub", hops=1, max_neighbors_per_hop=2, seed=7)
    b = extract_ego(g, "hub", hops=1, max_neighbors_per_hop=2, seed=7)
    assert a.node_ids == b.node_ids
    assert a.in_adj == b.in_adj
    assert len(a.in_adj[0]) == 2
    c = extract_ego(g, "hub", hops=1, max_neighbors_per_hop=2, seed=8)
    assert len(c.in_adj[0]) == 2  # possibly different sample, same size


def test_ego_respects_hop_limit():
    # chain d -> c -> b -> a
    nodes = [make_node(x, 3) for x in "abcd"]
    edges = [Edge("b", "a", Relation.SUPPLY), Edge("c", "b", Relation.SUPPLY), Edge("d", "c", Relation.SUPPLY)]
    g = ESellerGraph(nodes, edges)
    ego = extract_ego(g, "a", hops=2)
    assert set(ego.node_ids) == {"a", "b", "c"}
    # outermost node keeps no in-edges
    assert ego.in_adj[ego.node_ids.index("c")] == []


def test_ego_unknown_center():
    g = star_graph(1)
    with pytest.raises(GraphFormatError, match="unknown center"):
        extract_ego(g, "nope", hops=1)


def test_ego_padding_rows_are_masked():
    g = star_graph(2)
    ego = extract_ego(g, "hub", hops=1, t_max=8)
    for i in range(ego.n_local):
        months = g.nodes[ego.node_ids[i]].observed_len
        assert ego.valid_mask[i].sum() == months
        assert np.all(ego.padded_gmv[i, : 8 - months] == 0)


# ---------------------------------------------------------------------------
# JSONL round trip
# ---------------------------------------------------------------------------


def test_load_minimal_fixture(tmp_path):
    p = tmp_path / "g.jsonl"
    p.write_text(
        json.dumps({"kind": "node", "id": "a", "gmv": [1.0, 2.0], "tf": [[0.1], [0.2]], "sf": [1.0]})
        + "\n"
        + json.dumps({"kind": "node", "id": "b", "gmv": [3.0], "tf": [[0.3]], "sf": [2.0]})
        + "\n"
        + json.dumps({"kind": "edge", "src": "a", "dst": "b", "rel": "supply"})
        + "\n"
    )
    g = load_graph(p)
    assert g.n_nodes == 2
    assert g.n_edges == 1
    assert g.t_max == 2


def test_load_dangling_edge_reports_id(tmp_path):
    p = tmp_path / "g.jsonl"
    p.write_text(
        json.dumps({"kind": "node", "id": "a", "gmv": [1.0], "tf": [[0.0]], "sf": [0.0]})
        + "\n"
        + json.dumps({"kind": "edge", "src": "a", "dst": "missing", "rel": "owner"})
        + "\n"
    )
    with pytest.raises(GraphFormatError, match="'missing'"):
        load_graph(p)


def test_load_parse_error_has_line_number(tmp_path):
    p = tmp_path / "g.jsonl"
    p.write_text('{"kind": "node", "id": "a", "gmv": [1.0], "tf": [[0.0]], "sf": [0.0]}\n{bad json\n')
    with pytest.raises(GraphFormatError, match=":2:"):
        load_graph(p)


def test_round_trip_identity(tmp_path, rng):
    nodes = []
    for i in range(6):
        months = int(rng.integers(1, 7))
        nodes.append(SellerNode(f"n{i}", rng.uniform(0, 50, months), rng.normal(size=(months, 3)), rng.normal(size=2)))
    edges = [Edge("n0", "n1", Relation.SUPPLY), Edge("n2", "n3", Relation.OWNER), Edge("n4", "n1", Relation.SUPPLY)]
    g = ESellerGraph(nodes, edges)
    p = tmp_path / "g.jsonl"
    save_graph(p, g)
    g2 = load_graph(p)
    assert set(g2.nodes) == set(g.nodes)
    for nid in g.nodes:
        assert np.array_equal(g.nodes[nid].gmv, g2.nodes[nid].gmv)
        assert np.array_equal(g.nodes[nid].temporal_feats, g2.nodes[nid].temporal_feats)
        assert np.array_equal(g.nodes[nid].static_feats, g2.nodes[nid].static_feats)
    assert {(e.src, e.dst, e.relation) for e in g.edges} == {(e.src, e.dst, e.relation) for e in g2.edges}
    # a second save is byte-identical
    p2 = tmp_path / "g2.jsonl"
    save_graph(p2, g2)
    assert p.read_bytes() == p2.read_bytes()
