"""Seller-graph data model and I/O.

Nodes carry a monthly GMV series of variable length plus temporal and static
auxiliary features; directed edges carry one of two relation tags. Histories
are right-aligned when padded: the most recent observed month always sits at
position ``t_max - 1``, so "last month" is positionally stable across nodes
regardless of how short their history is.

On-disk format is JSONL, one record per line:
  {"kind": "node", "id": ..., "gmv": [...], "tf": [[...]], "sf": [...]}
  {"kind": "edge", "src": ..., "dst": ..., "rel": "supply" | "owner"}
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "Relation",
    "SellerNode",
    "Edge",
    "ESellerGraph",
    "EgoSubgraph",
    "GraphFormatError",
    "load_graph",
    "save_graph",
    "pad_and_mask",
    "extract_ego",
]


class GraphFormatError(ValueError):
    """A graph file or record violates the schema or an invariant."""


class Relation(Enum):
    """Edge tag. Supply edges run supplier -> retailer; owner edges are
    stored once and expanded symmetrically into the adjacency."""

    SUPPLY = "supply"
    OWNER = "owner"

    @property
    def index(self) -> int:
        return 0 if self is Relation.SUPPLY else 1


@dataclass
class SellerNode:
    id: str
    gmv: np.ndarray          # (observed_len,) nonnegative monthly values
    temporal_feats: np.ndarray  # (observed_len, d_t)
    static_feats: np.ndarray    # (d_s,)

    def __post_init__(self):
        self.gmv = np.asarray(self.gmv, dtype=np.float64)
        self.temporal_feats = np.asarray(self.temporal_feats, dtype=np.float64)
        self.static_feats = np.asarray(self.static_feats, dtype=np.float64)
        if self.gmv.ndim != 1 or len(self.gmv) < 1:
            raise GraphFormatError(f"node {self.id}: gmv must be a nonempty 1-D series")
        if (self.gmv < 0).any():
            raise GraphFormatError(f"node {self.id}: negative GMV value")
        if self.temporal_feats.ndim != 2 or self.temporal_feats.shape[0] != len(self.gmv):
            raise GraphFormatError(
                f"node {self.id}: temporal features must have one row per observed month "
                f"(got {self.temporal_feats.shape} for {len(self.gmv)} months)"
            )

    @property
    def observed_len(self) -> int:
        return len(self.gmv)


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    relation: Relation


class ESellerGraph:
    """Immutable-after-load seller graph with per-node in-neighbor lists."""

    def __init__(self, nodes: list[SellerNode], edges: list[Edge], t_max: int | None = None):
        self.nodes: dict[str, SellerNode] = {}
        for n in nodes:
            if n.id in self.nodes:
                raise GraphFormatError(f"duplicate node id {n.id!r}")
            self.nodes[n.id] = n
        self.edges: list[Edge] = []
        self.in_neighbors: dict[str, list[tuple[str, Relation]]] = {nid: [] for nid in self.nodes}
        for e in edges:
            self._add_edge(e)
        max_len = max((n.observed_len for n in self.nodes.values()), default=0)
        self.t_max = int(t_max) if t_max is not None else max_len
        if self.t_max < max_len:
            raise GraphFormatError(f"t_max={self.t_max} shorter than longest history ({max_len})")
        dims_t = {n.temporal_feats.shape[1] for n in self.nodes.values()}
        dims_s = {len(n.static_feats) for n in self.nodes.values()}
        if len(dims_t) > 1 or len(dims_s) > 1:
            raise GraphFormatError(f"inconsistent feature dims across nodes: d_t={dims_t}, d_s={dims_s}")
        self.d_t = dims_t.pop() if dims_t else 0
        self.d_s = dims_s.pop() if dims_s else 0

    def _add_edge(self, e: Edge) -> None:
        if e.src not in self.nodes:
            raise GraphFormatError(f"edge references unknown node id {e.src!r}")
        if e.dst not in self.nodes:
            raise GraphFormatError(f"edge references unknown node id {e.dst!r}")
        if e.src == e.dst:
            raise GraphFormatError(f"self-loop on node {e.src!r} (self-attention is built in, not an edge)")
        self.edges.append(e)
        self.in_neighbors[e.dst].append((e.src, e.relation))
        if e.relation is Relation.OWNER:
            self.in_neighbors[e.src].append((e.dst, e.relation))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def node_ids(self) -> list[str]:
        return list(self.nodes)


@dataclass
class EgoSubgraph:
    """A center node with its sampled in-neighborhood, padded for batching.

    Local index 0 is always the center. ``in_adj[u]`` lists ``(local_src,
    relation)`` pairs for the in-edges of local node ``u`` that were kept by
    the sampler. Padding rows are zero with a false validity mask; series are
    right-aligned against position ``t_max - 1``.
    """

    center: str
    node_ids: list[str]                     # local index -> global id
    padded_gmv: np.ndarray                  # (n_local, t_max)
    padded_temporal: np.ndarray             # (n_local, t_max, d_t)
    static: np.ndarray                      # (n_local, d_s)
    valid_mask: np.ndarray                  # (n_local, t_max) bool
    in_adj: list[list[tuple[int, Relation]]]
    target: np.ndarray | None = None        # (t_pred,), training only

    @property
    def n_local(self) -> int:
        return len(self.node_ids)


def pad_and_mask(node: SellerNode, t_max: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Right-align a node's series and features into fixed-width buffers.

    Returns ``(gmv, temporal, mask)`` where the observed months occupy the
    last ``observed_len`` positions verbatim and everything to their left is
    zero with a false mask. No normalization happens here.
    """
    n = node.observed_len
    if n > t_max:
        raise GraphFormatError(f"node {node.id}: history of {n} months exceeds t_max={t_max}")
    gmv = np.zeros(t_max)
    temporal = np.zeros((t_max, node.temporal_feats.shape[1]))
    mask = np.zeros(t_max, dtype=bool)
    gmv[t_max - n :] = node.gmv
    temporal[t_max - n :] = node.temporal_feats
    mask[t_max - n :] = True
    return gmv, temporal, mask


def _ego_rng(seed: int, center: str) -> np.random.Generator:
    # Stable across processes: hash the center id rather than rely on PYTHONHASHSEED.
    digest = hashlib.sha256(center.encode("utf-8")).digest()
    return np.random.default_rng([seed & 0xFFFFFFFF, int.from_bytes(digest[:8], "little")])


def extract_ego(
    g: ESellerGraph,
    center: str,
    hops: int,
    max_neighbors_per_hop: int = 10,
    seed: int = 0,
    t_max: int | None = None,
    target: np.ndarray | None = None,
) -> EgoSubgraph:
    """BFS the in-neighborhood of ``center`` up to ``hops`` levels.

    When a node's in-degree exceeds ``max_neighbors_per_hop``, a uniform
    sample of that size is kept; sampling is deterministic for a fixed
    ``seed``. Only edges traversed during expansion enter the local
    adjacency, so the cap is never exceeded. Nodes on the outermost level
    keep no in-edges.
    """
    if center not in g.nodes:
        raise GraphFormatError(f"unknown center node {center!r}")
    if hops < 1:
        raise ValueError(f"hops must be >= 1, got {hops}")
    t_max = g.t_max if t_max is None else t_max
    rng = _ego_rng(seed, center)

    local_of = {center: 0}
    node_ids = [center]
    in_adj: list[list[tuple[int, Relation]]] = [[]]
    frontier = [center]
    for _ in range(hops):
        next_frontier: list[str] = []
        for uid in frontier:
            nbrs = g.in_neighbors[uid]
            if len(nbrs) > max_neighbors_per_hop:
                keep = rng.choice(len(nbrs), size=max_neighbors_per_hop, replace=False)
                nbrs = [nbrs[i] for i in sorted(keep)]
            for vid, rel in nbrs:
                if vid not in local_of:
                    local_of[vid] = len(node_ids)
                    node_ids.append(vid)
                    in_adj.append([])
                    next_frontier.append(vid)
                in_adj[local_of[uid]].append((local_of[vid], rel))
        frontier = next_frontier

    n_local = len(node_ids)
    d_t = g.d_t
    d_s = g.d_s
    padded_gmv = np.zeros((n_local, t_max))
    padded_temporal = np.zeros((n_local, t_max, d_t))
    static = np.zeros((n_local, d_s))
    valid = np.zeros((n_local, t_max), dtype=bool)
    for i, nid in enumerate(node_ids):
        node = g.nodes[nid]
        padded_gmv[i], padded_temporal[i], valid[i] = pad_and_mask(node, t_max)
        static[i] = node.static_feats
    return EgoSubgraph(
        center=center,
        node_ids=node_ids,
        padded_gmv=padded_gmv,
        padded_temporal=padded_temporal,
        static=static,
        valid_mask=valid,
        in_adj=in_adj,
        target=None if target is None else np.asarray(target, dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# JSONL I/O
# ---------------------------------------------------------------------------


def _node_record(n: SellerNode) -> dict:
    return {
        "kind": "node",
        "id": n.id,
        "gmv": n.gmv.tolist(),
        "tf": n.temporal_feats.tolist(),
        "sf": n.static_feats.tolist(),
    }


def save_graph(path, g: ESellerGraph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for n in g.nodes.values():
            fh.write(json.dumps(_node_record(n)) + "\n")
        for e in g.edges:
            fh.write(json.dumps({"kind": "edge", "src": e.src, "dst": e.dst, "rel": e.relation.value}) + "\n")


def load_graph(path, t_max: int | None = None) -> ESellerGraph:
    """Parse a JSONL graph file, checking every invariant.

    Errors carry the 1-based line number of the offending record.
    """
    nodes: list[SellerNode] = []
    edges: list[Edge] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GraphFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            kind = rec.get("kind")
            try:
                if kind == "node":
                    nodes.append(SellerNode(rec["id"], rec["gmv"], rec["tf"], rec["sf"]))
                elif kind == "edge":
                    edges.append(Edge(rec["src"], rec["dst"], Relation(rec["rel"])))
                else:
                    raise GraphFormatError(f"unknown record kind {kind!r}")
            except (KeyError, ValueError, TypeError) as exc:
                raise GraphFormatError(f"{path}:{lineno}: {exc}") from exc
    try:
        return ESellerGraph(nodes, edges, t_max=t_max)
    except GraphFormatError as exc:
        raise GraphFormatError(f"{path}: {exc}") from exc
