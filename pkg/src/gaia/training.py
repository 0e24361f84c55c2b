"""Training loop, evaluation, and data conditioning.

GMV-scale quantities (the series, the synthesized count features, the
targets) are log1p-transformed before entering the model and predictions are
expm1-inverted before any metric is computed, so metrics are always in
original units. Training is deterministic for a fixed seed: parameter init,
ego sampling and the per-epoch batch order all derive from it. Forward
passes inside a batch are independent and may run on a thread pool; losses
and gradients are reduced in sample order, so the thread count never changes
results.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .attention import mse_loss
from .checkpoint import Checkpoint
from .config import TrainConfig
from .graph import EgoSubgraph, ESellerGraph, extract_ego
from .metrics import MetricsReport, summary_metrics
from .model import GaiaModel
from .synth import NodeTruth
from .tensor import Tensor, backward, concat_rows, no_grad

__all__ = [
    "Adam",
    "TrainResult",
    "EpochStats",
    "TrainingDivergedError",
    "normalize_array",
    "denormalize_array",
    "prepare_inputs",
    "build_ego_cache",
    "build_model",
    "train",
    "evaluate_model",
    "evaluate_checkpoint",
    "predict_node",
]

logger = logging.getLogger("gaia.training")


class TrainingDivergedError(RuntimeError):
    """The loss became non-finite during optimization."""


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def normalize_array(x: np.ndarray, mode: str) -> np.ndarray:
    if mode == "log1p":
        return np.log1p(x)
    if mode == "none":
        return np.asarray(x, dtype=np.float64)
    raise ValueError(f"unknown normalization {mode!r}")


def denormalize_array(x: np.ndarray, mode: str) -> np.ndarray:
    if mode == "log1p":
        return np.expm1(x)
    if mode == "none":
        return np.asarray(x, dtype=np.float64)
    raise ValueError(f"unknown normalization {mode!r}")


def prepare_inputs(ego: EgoSubgraph, cfg: TrainConfig):
    """Normalized model inputs for one ego subgraph.

    Returns ``(gmv, temporal, static, target)`` where target is ``None`` for
    inference subgraphs. Static one-hots pass through untouched; log1p on the
    temporal block is harmless for its one-hot columns and conditions the
    count columns.
    """
    gmv = normalize_array(ego.padded_gmv, cfg.normalization)
    temporal = normalize_array(ego.padded_temporal, cfg.normalization)
    target = None
    if ego.target is not None:
        target = normalize_array(ego.target, cfg.normalization)[None, :]
    return gmv, temporal, ego.static, target


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Standard bias-corrected Adam over a named parameter dict."""

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        m: dict[str, np.ndarray] | None = None,
        v: dict[str, np.ndarray] | None = None,
        t: int = 0,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()} if m is None else m
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()} if v is None else v
        self.t = t

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------


def build_model(cfg: TrainConfig, d_t: int, d_s: int) -> GaiaModel:
    return GaiaModel(
        c=cfg.c,
        k_groups=cfg.k_groups,
        n_layers=cfg.n_layers,
        t_max=cfg.t_max,
        t_pred=cfg.t_pred,
        d_t=d_t,
        d_s=d_s,
        ablation=cfg.ablation,
        share_cau=cfg.share_cau,
        seed=cfg.seed,
    )


def build_ego_cache(
    g: ESellerGraph,
    truth: dict[str, NodeTruth] | None,
    node_ids,
    cfg: TrainConfig,
) -> dict[str, EgoSubgraph]:
    cache = {}
    for nid in node_ids:
        target = truth[nid].target if truth is not None else None
        cache[nid] = extract_ego(
            g,
            nid,
            hops=cfg.ego_hops,
            max_neighbors_per_hop=cfg.max_neighbors,
            seed=cfg.seed,
            t_max=cfg.t_max,
            target=target,
        )
    return cache


EVAL_CHUNK = 64  # fixed, so results never depend on the thread count


def _forward_chunk(model, egos, prepared, ids):
    return model.forward_batch(
        [egos[nid] for nid in ids],
        [prepared[nid][0] for nid in ids],
        [prepared[nid][1] for nid in ids],
        [prepared[nid][2] for nid in ids],
    )


def _forward_many(model, egos, prepared, ids, threads, inference):
    if not inference:
        return _forward_chunk(model, egos, prepared, ids)

    chunks = [ids[off : off + EVAL_CHUNK] for off in range(0, len(ids), EVAL_CHUNK)]

    def run(chunk):
        with no_grad():
            return _forward_chunk(model, egos, prepared, chunk)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(chunk) for chunk in chunks]
    return [pred for chunk_preds in results for pred in chunk_preds]


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_mae: float
    val_rmse: float
    val_mape: float
    seconds: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[EpochStats]
    best_epoch: int


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------


def train(
    g: ESellerGraph,
    truth: dict[str, NodeTruth],
    splits: tuple[list[str], list[str], list[str]],
    cfg: TrainConfig,
    threads: int = 1,
    ego_cache: dict[str, EgoSubgraph] | None = None,
) -> TrainResult:
    """Fit the model on the train split with early stopping on validation MAE.

    The returned checkpoint carries the parameters of the best validation
    epoch (or the final epoch when there is no validation split).
    """
    train_ids, val_ids, _ = splits
    if not train_ids:
        raise ValueError("train: empty training split")
    model = build_model(cfg, g.d_t, g.d_s)
    logger.info("model has %d parameters (%d tensors)", model.n_parameters(), len(model.parameters()))

    if ego_cache is None:
        ego_cache = build_ego_cache(g, truth, set(train_ids) | set(val_ids), cfg)
    prepared = {nid: prepare_inputs(ego_cache[nid], cfg) for nid in set(train_ids) | set(val_ids)}

    adam = Adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    history: list[EpochStats] = []
    best_state = None
    best_mae = np.inf
    best_epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order_rng = np.random.default_rng([cfg.seed, 13, epoch])
        order = [train_ids[i] for i in order_rng.permutation(len(train_ids))]
        loss_sum = 0.0
        for step, off in enumerate(range(0, len(order), cfg.batch_size)):
            batch = order[off : off + cfg.batch_size]
            preds = _forward_many(model, ego_cache, prepared, batch, threads, inference=False)
            target_mat = Tensor(np.concatenate([prepared[nid][3] for nid in batch], axis=0))
            loss = mse_loss(concat_rows(preds), target_mat)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise TrainingDivergedError(f"loss became non-finite at epoch {epoch}, step {step}")
            loss_sum += loss_val * len(batch)
            backward(loss)
            adam.step()
            adam.zero_grad()
        train_loss = loss_sum / len(order)

        if val_ids:
            val = evaluate_model(model, g, truth, val_ids, cfg, ego_cache, threads)
            val_mae, val_rmse, val_mape = val.mae, val.rmse, val.mape
        else:
            val_mae = val_rmse = val_mape = float("nan")
        seconds = time.perf_counter() - t0
        history.append(EpochStats(epoch, train_loss, val_mae, val_rmse, val_mape, seconds))
        logger.info(
            "epoch %d: train_loss=%.6f val_mae=%.3f val_rmse=%.3f val_mape=%.4f (%.2fs)",
            epoch, train_loss, val_mae, val_rmse, val_mape, seconds,
        )

        improved = val_ids and val_mae < best_mae
        if improved or not val_ids:
            best_mae = val_mae if val_ids else best_mae
            best_epoch = epoch
            best_state = (
                model.state_arrays(),
                {k: m.copy() for k, m in adam.m.items()},
                {k: v.copy() for k, v in adam.v.items()},
                adam.t,
            )
        elif val_ids and epoch - best_epoch >= cfg.early_stop_patience:
            logger.info("early stop at epoch %d (best epoch %d)", epoch, best_epoch)
            break

    params, adam_m, adam_v, adam_t = best_state
    model.load_state(params)
    ckpt = Checkpoint(
        config=cfg,
        d_t=g.d_t,
        d_s=g.d_s,
        params=params,
        adam_m=adam_m,
        adam_v=adam_v,
        adam_t=adam_t,
        epoch=best_epoch,
    )
    return TrainResult(checkpoint=ckpt, history=history, best_epoch=best_epoch)


def evaluate_model(
    model: GaiaModel,
    g: ESellerGraph,
    truth: dict[str, NodeTruth],
    node_ids,
    cfg: TrainConfig,
    ego_cache: dict[str, EgoSubgraph] | None = None,
    threads: int = 1,
) -> MetricsReport:
    node_ids = list(node_ids)
    if not node_ids:
        raise ValueError("evaluate: empty node set")
    if ego_cache is None:
        ego_cache = build_ego_cache(g, truth, node_ids, cfg)
    prepared = {nid: prepare_inputs(ego_cache[nid], cfg) for nid in node_ids}
    outs = _forward_many(model, ego_cache, prepared, node_ids, threads, inference=True)
    preds = np.stack([denormalize_array(o.data[0], cfg.normalization) for o in outs])
    trues = np.stack([truth[nid].target for nid in node_ids])
    return summary_metrics(preds, trues)


def evaluate_checkpoint(ckpt: Checkpoint, g: ESellerGraph, truth, node_ids, threads: int = 1) -> MetricsReport:
    return evaluate_model(ckpt.build_model(), g, truth, node_ids, ckpt.config, threads=threads)


def predict_node(model: GaiaModel, g: ESellerGraph, nid: str, cfg: TrainConfig) -> np.ndarray:
    """Denormalized per-month forecast for one node; shape (t_pred,)."""
    ego = extract_ego(g, nid, hops=cfg.ego_hops, max_neighbors_per_hop=cfg.max_neighbors, seed=cfg.seed, t_max=cfg.t_max)
    gmv, temporal, static, _ = prepare_inputs(ego, cfg)
    with no_grad():
        out = model.forward(ego, gmv, temporal, static)
    return denormalize_array(out.data[0], cfg.normalization)
