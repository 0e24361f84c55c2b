"""Synthetic seller universes with planted, recoverable structure.

Every universe plants four phenomena with known parameters so that model
behavior can be verified against ground truth:

  * seasonality: each node's series carries a sinusoidal component with a
    per-node phase (recurring within-series patterns);
  * lead-lag: a supplier's series is its retailer's series advanced by a
    fixed number of months, rescaled, plus independent noise — the supplier
    moves first;
  * shared trend: same-owner pairs reuse one linear trend slope;
  * history truncation: observed lengths are drawn from a configurable
    distribution skewed toward short histories, mimicking the prevalence of
    young shops.

Generation is a pure function of the spec: every node draws from its own
seeded stream, so output is byte-stable regardless of evaluation order.
Targets are the true next months of each node's own series and are written
to a sidecar, never into features.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .graph import Edge, ESellerGraph, Relation, SellerNode

__all__ = [
    "SynthSpec",
    "NodeTruth",
    "NEW_SHOP_THRESHOLD",
    "default_deficiency",
    "generate",
    "split",
    "verify_planted_lag",
    "universe_summary",
    "write_truth",
    "load_truth",
]

# Observed history shorter than this many months marks a "new shop".
NEW_SHOP_THRESHOLD = 10

MONTHS_PER_YEAR = 12


def default_deficiency(t_max: int, short_mass: float = 0.40) -> dict[int, float]:
    """History-length distribution: ``short_mass`` spread over 3..9 months,
    the rest over 10..t_max."""
    short = list(range(3, NEW_SHOP_THRESHOLD))
    long = list(range(NEW_SHOP_THRESHOLD, t_max + 1))
    dist = {m: short_mass / len(short) for m in short}
    dist.update({m: (1.0 - short_mass) / len(long) for m in long})
    return dist


@dataclass
class SynthSpec:
    n_sellers: int = 2000
    supply_edge_prob: float = 0.5
    owner_edge_prob: float = 0.2
    lead_lag_months: int = 2
    season_period: int = MONTHS_PER_YEAR
    season_amplitude: float = 0.3
    trend_slope_range: tuple[float, float] = (-0.01, 0.03)
    noise_sigma: float = 0.05          # relative to each node's base level
    deficiency_dist: dict[int, float] | None = None
    base_gmv_range: tuple[float, float] = (500.0, 50_000.0)
    seed: int = 0
    t_max: int = 24
    t_pred: int = 3
    n_industries: int = 6
    n_regions: int = 4
    supplier_scale_range: tuple[float, float] = (0.3, 0.9)
    feature_noise: float = 0.05        # jitter on the synthesized count features

    def __post_init__(self):
        if self.n_sellers < 1:
            raise ValueError("n_sellers must be >= 1")
        for name in ("supply_edge_prob", "owner_edge_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not 0 <= self.lead_lag_months < self.t_max:
            raise ValueError(f"lead_lag_months must lie in [0, t_max), got {self.lead_lag_months}")
        if self.deficiency_dist is None:
            self.deficiency_dist = default_deficiency(self.t_max)
        total = sum(self.deficiency_dist.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"deficiency_dist must sum to 1, got {total}")
        for m in self.deficiency_dist:
            if not 1 <= m <= self.t_max:
                raise ValueError(f"deficiency_dist length {m} outside 1..t_max")
        if self.base_gmv_range[0] <= 0 or self.base_gmv_range[1] < self.base_gmv_range[0]:
            raise ValueError(f"invalid base_gmv_range {self.base_gmv_range}")
        if self.t_pred < 1:
            raise ValueError("t_pred must be >= 1")

    @property
    def d_t(self) -> int:
        return MONTHS_PER_YEAR + 2  # month one-hot + customers + orders

    @property
    def d_s(self) -> int:
        return self.n_industries + self.n_regions

    def to_json_dict(self) -> dict:
        d = {
            "n_sellers": self.n_sellers,
            "supply_edge_prob": self.supply_edge_prob,
            "owner_edge_prob": self.owner_edge_prob,
            "lead_lag_months": self.lead_lag_months,
            "season_period": self.season_period,
            "season_amplitude": self.season_amplitude,
            "trend_slope_range": list(self.trend_slope_range),
            "noise_sigma": self.noise_sigma,
            "deficiency_dist": {str(k): v for k, v in self.deficiency_dist.items()},
            "base_gmv_range": list(self.base_gmv_range),
            "seed": self.seed,
            "t_max": self.t_max,
            "t_pred": self.t_pred,
            "n_industries": self.n_industries,
            "n_regions": self.n_regions,
            "supplier_scale_range": list(self.supplier_scale_range),
            "feature_noise": self.feature_noise,
        }
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "SynthSpec":
        kwargs = dict(d)
        if "deficiency_dist" in kwargs and kwargs["deficiency_dist"] is not None:
            kwargs["deficiency_dist"] = {int(k): float(v) for k, v in kwargs["deficiency_dist"].items()}
        for name in ("trend_slope_range", "base_gmv_range", "supplier_scale_range"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        known = set(cls.__dataclass_fields__)
        unknown = set(kwargs) - known
        if unknown:
            raise ValueError(f"unknown generator option(s): {sorted(unknown)}")
        return cls(**kwargs)


@dataclass
class NodeTruth:
    target: np.ndarray          # (t_pred,) true future months, original units
    season_phase: int
    role: str                   # "supplier" | "retailer" | "independent"
    lag: int | None             # planted lead for supplier/retailer pairs
    partner: str | None
    clamped: int                # how many latent months were clipped at 0


def _node_id(i: int) -> str:
    return f"s{i:05d}"


def _draw_pairs(pool: np.ndarray, prob: float, rng: np.random.Generator) -> tuple[list[tuple[int, int]], list[int]]:
    """Walk a shuffled pool; each popped node pairs with the next one with
    probability ``prob``. Returns (pairs, unpaired)."""
    stack = list(pool)
    pairs: list[tuple[int, int]] = []
    unpaired: list[int] = []
    while stack:
        a = stack.pop()
        if stack and rng.random() < prob:
            pairs.append((stack.pop(), a))
        else:
            unpaired.append(a)
    return pairs, unpaired


def generate(spec: SynthSpec, _zero_future_latent: bool = False) -> tuple[ESellerGraph, dict[str, NodeTruth]]:
    """Build a universe; returns the graph and per-node ground truth.

    ``_zero_future_latent`` is a leakage self-check hook: it zeroes every
    latent series beyond the observation horizon before features are
    assembled, which must leave all feature bytes unchanged (features may
    only read the observed window).
    """
    n = spec.n_sellers
    ell = spec.lead_lag_months
    horizon = spec.t_max + spec.t_pred + ell

    rng_pair = np.random.default_rng([spec.seed, 0])
    supply_pairs, rest = _draw_pairs(rng_pair.permutation(n), spec.supply_edge_prob, rng_pair)
    suppliers = {s for s, _ in supply_pairs}
    retailer_of = {s: r for s, r in supply_pairs}
    supplier_of = {r: s for s, r in supply_pairs}
    owner_pairs, _ = _draw_pairs(rng_pair.permutation(np.array(sorted(set(range(n)) - suppliers), dtype=int)), spec.owner_edge_prob, rng_pair)

    # Per-node draws, one stream per node, fixed draw order.
    lengths = sorted(spec.deficiency_dist)
    probs = np.array([spec.deficiency_dist[m] for m in lengths])
    base = np.empty(n)
    phase = np.empty(n, dtype=int)
    slope = np.empty(n)
    obs_len = np.empty(n, dtype=int)
    industry = np.empty(n, dtype=int)
    region = np.empty(n, dtype=int)
    sup_scale = np.empty(n)
    eps = np.empty((n, horizon))
    feat_eps = np.empty((n, 2, spec.t_max))
    for i in range(n):
        r = np.random.default_rng([spec.seed, 1, i])
        base[i] = r.uniform(*spec.base_gmv_range)
        phase[i] = r.integers(0, spec.season_period)
        slope[i] = r.uniform(*spec.trend_slope_range)
        obs_len[i] = lengths[int(r.choice(len(lengths), p=probs))]
        industry[i] = r.integers(0, spec.n_industries)
        region[i] = r.integers(0, spec.n_regions)
        sup_scale[i] = r.uniform(*spec.supplier_scale_range)
        eps[i] = r.normal(size=horizon)
        feat_eps[i] = r.normal(size=(2, spec.t_max))

    for a, b in owner_pairs:  # shared trend component
        slope[b] = slope[a]

    t_axis = np.arange(horizon)
    series = np.empty((n, horizon))
    clamped = np.zeros(n, dtype=int)
    for i in range(n):
        if i in suppliers:
            continue
        season = spec.season_amplitude * np.sin(2.0 * np.pi * (t_axis + phase[i]) / spec.season_period)
        raw = base[i] * (1.0 + season + slope[i] * t_axis) + spec.noise_sigma * base[i] * eps[i]
        clamped[i] = int((raw < 0).sum())
        series[i] = np.maximum(raw, 0.0)
    for s, r in supply_pairs:
        span = horizon - ell
        raw = sup_scale[s] * series[r][ell:] + spec.noise_sigma * (sup_scale[s] * base[r]) * eps[s][:span]
        clamped[s] = int((raw < 0).sum())
        series[s] = 0.0
        series[s][:span] = np.maximum(raw, 0.0)
        phase[s] = (phase[r] + ell) % spec.season_period  # advancing by ell shifts the season forward

    if _zero_future_latent:
        series[:, spec.t_max :] = 0.0

    nodes: list[SellerNode] = []
    truth: dict[str, NodeTruth] = {}
    for i in range(n):
        m = int(obs_len[i])
        window = np.arange(spec.t_max - m, spec.t_max)
        gmv = series[i][window]
        month_onehot = np.zeros((m, MONTHS_PER_YEAR))
        month_onehot[np.arange(m), window % MONTHS_PER_YEAR] = 1.0
        customers = np.maximum(2.0 * np.sqrt(gmv) * (1.0 + spec.feature_noise * feat_eps[i, 0, window]), 0.0)
        orders = np.maximum(0.5 * gmv**0.75 * (1.0 + spec.feature_noise * feat_eps[i, 1, window]), 0.0)
        tf = np.concatenate([month_onehot, customers[:, None], orders[:, None]], axis=1)
        sf = np.zeros(spec.d_s)
        sf[industry[i]] = 1.0
        sf[spec.n_industries + region[i]] = 1.0
        nid = _node_id(i)
        nodes.append(SellerNode(nid, gmv, tf, sf))
        if i in suppliers:
            role, lag, partner = "supplier", ell, _node_id(retailer_of[i])
        elif i in supplier_of:
            role, lag, partner = "retailer", ell, _node_id(supplier_of[i])
        else:
            role, lag, partner = "independent", None, None
        truth[nid] = NodeTruth(
            target=series[i][spec.t_max : spec.t_max + spec.t_pred].copy(),
            season_phase=int(phase[i]),
            role=role,
            lag=lag,
            partner=partner,
            clamped=int(clamped[i]),
        )

    edges = [Edge(_node_id(s), _node_id(r), Relation.SUPPLY) for s, r in supply_pairs]
    edges += [Edge(_node_id(a), _node_id(b), Relation.OWNER) for a, b in owner_pairs]
    return ESellerGraph(nodes, edges, t_max=spec.t_max), truth


def verify_planted_lag(g: ESellerGraph, truth: dict[str, NodeTruth], lag: int) -> tuple[float, int]:
    """Cross-check pass: for every supply edge, fit the best scalar mapping
    the retailer's lag-advanced observed window onto the supplier's and
    report (max |residual| relative to the supplier's level, edges checked).
    With zero generation noise the residual is numerically zero."""
    worst = 0.0
    checked = 0
    for e in g.edges:
        if e.relation is not Relation.SUPPLY:
            continue
        sup, ret = g.nodes[e.src], g.nodes[e.dst]
        t_max = g.t_max
        lo = max(t_max - sup.observed_len, t_max - ret.observed_len - lag)
        hi = t_max - lag
        if hi - lo < 2:
            continue
        s_vals = sup.gmv[np.arange(lo, hi) - (t_max - sup.observed_len)]
        r_vals = ret.gmv[np.arange(lo, hi) + lag - (t_max - ret.observed_len)]
        denom = float(r_vals @ r_vals)
        if denom == 0.0:
            continue
        c = float(s_vals @ r_vals) / denom
        resid = np.max(np.abs(s_vals - c * r_vals)) / max(1.0, float(np.max(np.abs(s_vals))))
        worst = max(worst, resid)
        checked += 1
    return worst, checked


def split(
    g: ESellerGraph,
    truth: dict[str, NodeTruth],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[list[str], list[str], list[str]]:
    """Seeded disjoint train/val/test node sets, stratified by history length
    (new shops, below the 10-month threshold, vs old shops). Within each
    stratum sizes follow the ratios to within one node."""
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be nonnegative and sum to 1, got {ratios}")
    missing = [nid for nid in g.nodes if nid not in truth]
    if missing:
        raise ValueError(f"{len(missing)} node(s) lack targets, e.g. {missing[0]!r}")
    rng = np.random.default_rng([seed, 2])
    ids = sorted(g.nodes)
    strata = [
        [nid for nid in ids if g.nodes[nid].observed_len < NEW_SHOP_THRESHOLD],
        [nid for nid in ids if g.nodes[nid].observed_len >= NEW_SHOP_THRESHOLD],
    ]
    parts: tuple[list[str], list[str], list[str]] = ([], [], [])
    for stratum in strata:
        order = [stratum[j] for j in rng.permutation(len(stratum))]
        m = len(order)
        want = [r * m for r in ratios]
        sizes = [int(np.floor(w)) for w in want]
        fracs = sorted(range(3), key=lambda j: (-(want[j] - sizes[j]), j))
        for j in fracs[: m - sum(sizes)]:
            sizes[j] += 1
        off = 0
        for j in range(3):
            parts[j].extend(order[off : off + sizes[j]])
            off += sizes[j]
    for r, part in zip(ratios, parts):
        if r > 0 and not part:
            raise ValueError(f"split produced an empty set for ratio {r}")
    return tuple(sorted(p) for p in parts)  # type: ignore[return-value]


def universe_summary(g: ESellerGraph, truth: dict[str, NodeTruth]) -> dict:
    hist: dict[int, int] = {}
    for node in g.nodes.values():
        hist[node.observed_len] = hist.get(node.observed_len, 0) + 1
    rel_counts = {rel.value: 0 for rel in Relation}
    for e in g.edges:
        rel_counts[e.relation.value] += 1
    return {
        "n_nodes": g.n_nodes,
        "edges": rel_counts,
        "history_hist": {str(k): hist[k] for k in sorted(hist)},
        "new_shops": sum(1 for nd in g.nodes.values() if nd.observed_len < NEW_SHOP_THRESHOLD),
        "clamp_events": sum(t.clamped for t in truth.values()),
    }


def write_truth(path, truth: dict[str, NodeTruth]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for nid, t in truth.items():
            fh.write(
                json.dumps(
                    {
                        "id": nid,
                        "target": t.target.tolist(),
                        "season_phase": t.season_phase,
                        "role": t.role,
                        "lag": t.lag,
                        "partner": t.partner,
                        "clamped": t.clamped,
                    }
                )
                + "\n"
            )


def load_truth(path) -> dict[str, NodeTruth]:
    out: dict[str, NodeTruth] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out[rec["id"]] = NodeTruth(
                target=np.asarray(rec["target"], dtype=np.float64),
                season_phase=rec["season_phase"],
                role=rec["role"],
                lag=rec["lag"],
                partner=rec["partner"],
                clamped=rec["clamped"],
            )
    return out
