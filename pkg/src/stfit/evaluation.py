"""Masked metrics, inductive inference over the full node set, and reports.

Metrics follow the masked convention: only observed (finite) entries count,
and MAPE additionally drops near-zero targets. Horizon-h rows average the
first h forecast steps; inference runs the trained checkpoint over every node
with a hard-sampled learned topology and a fixed evaluation seed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .backbones import BackboneConfig, build_backbone
from .data import (
    NodeSplit,
    NormStats,
    SpatialTemporalGraph,
    temporal_split,
    zscore_apply,
)
from .topology import TopologyLearner, gumbel_noise
from .training import TrainConfig, VARIANTS, train as run_training

MAPE_TARGET_FLOOR = 1e-4
DEFAULT_EVAL_SEED = 12345
NODE_SCOPES = ("test_nodes", "all", "train_nodes")


def _observed(x: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    omega = np.isfinite(x)
    if mask is not None:
        omega = omega & mask.astype(bool)
    return omega


def mae(x: np.ndarray, x_hat: np.ndarray, mask: np.ndarray | None = None) -> float:
    omega = _observed(x, mask)
    if not omega.any():
        raise ValueError("MAE: empty observation set")
    return float(np.abs(x[omega] - x_hat[omega]).mean())


def rmse(x: np.ndarray, x_hat: np.ndarray, mask: np.ndarray | None = None) -> float:
    omega = _observed(x, mask)
    if not omega.any():
        raise ValueError("RMSE: empty observation set")
    return float(np.sqrt(np.square(x[omega] - x_hat[omega]).mean()))


def mape(x: np.ndarray, x_hat: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean absolute percentage error as a fraction; near-zero targets excluded."""
    omega = _observed(x, mask) & (np.abs(x) >= MAPE_TARGET_FLOOR)
    if not omega.any():
        raise ValueError("MAPE: empty observation set")
    return float((np.abs(x[omega] - x_hat[omega]) / np.abs(x[omega])).mean())


@dataclass
class MetricsReport:
    """Per-horizon masked metrics plus the metadata needed to reproduce them."""

    rows: dict[str, dict[str, float]]
    node_scope: str
    denormalized: bool = True
    variant: str = "full"

    def to_dict(self) -> dict:
        return {
            "node_scope": self.node_scope,
            "denormalized": self.denormalized,
            "variant": self.variant,
            "horizons": self.rows,
        }

    def overall(self) -> dict[str, float]:
        return self.rows["overall"]


def horizon_report(
    predictions: np.ndarray,
    targets: np.ndarray,
    split: NodeSplit,
    horizons: tuple[int, ...] = (3, 6, 12),
    node_scope: str = "test_nodes",
    variant: str = "full",
) -> MetricsReport:
    """Metrics over the first h forecast steps for each horizon h, plus overall.

    predictions/targets: [W, tau, N, C] in real units. node_scope picks the
    population: held-out test nodes (the inductive target), training nodes,
    or all nodes.
    """
    if predictions.shape != targets.shape:
        raise ValueError("prediction/target shapes differ")
    if node_scope not in NODE_SCOPES:
        raise ValueError(f"node_scope must be one of {NODE_SCOPES}")
    tau = predictions.shape[1]
    if node_scope == "test_nodes":
        nodes = split.test_nodes
    elif node_scope == "train_nodes":
        nodes = split.train_nodes
    else:
        nodes = list(range(predictions.shape[2]))
    if not nodes:
        raise ValueError(f"empty node scope {node_scope!r}")

    preds = predictions[:, :, nodes, :]
    targs = targets[:, :, nodes, :]
    rows: dict[str, dict[str, float]] = {}
    for h in tuple(horizons) + ("overall",):
        steps = tau if h == "overall" else min(int(h), tau)
        p, t = preds[:, :steps], targs[:, :steps]
        omega = np.isfinite(t)
        rows[str(h)] = {
            "mae": mae(t, p),
            "rmse": rmse(t, p),
            "mape_pct": 100.0 * mape(t, p),
            "count": int(omega.sum()),
        }
    return MetricsReport(rows=rows, node_scope=node_scope, variant=variant)


class _InferenceModel:
    """Frozen model parts rebuilt from a checkpoint payload."""

    def __init__(self, payload: dict):
        self.train_config = TrainConfig(**payload["train_config"])
        self.backbone_config = BackboneConfig(**payload["backbone_config"])
        dtype = self.train_config.torch_dtype
        self.backbone = build_backbone(self.train_config.backbone, self.backbone_config)
        self.topology = TopologyLearner(
            self.backbone_config.kappa,
            self.backbone_config.in_channels,
            self.train_config.hidden_dim,
        )
        if dtype == torch.float64:
            self.backbone.double()
            self.topology.double()
        self.backbone.load_state_dict(payload["best_models"]["backbone"])
        self.topology.load_state_dict(payload["best_models"]["topology"])
        self.backbone.eval()
        self.topology.eval()
        self.stats = NormStats(
            mean=np.asarray(payload["norm_stats"]["mean"]),
            std=np.asarray(payload["norm_stats"]["std"]),
        )
        self.split = NodeSplit(**payload["node_split"])


def infer(
    payload: dict,
    graph: SpatialTemporalGraph,
    eval_seed: int = DEFAULT_EVAL_SEED,
    batch_size: int = 16,
    adjacency: np.ndarray | None = None,
    topology_samples: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Forecast every test-range window over all N nodes; no parameter updates.

    Per window: encode all node input windows, score and sparsify pair
    probabilities, hard-sample the adjacency with a seed derived from
    (eval_seed, window index), run the backbone, denormalize. Returns
    (predictions, targets), both [W, tau, N, C] in real units.

    topology_samples > 1 averages predictions over that many independent hard
    topology draws per window (single-sample inference is the default).
    """
    if topology_samples < 1:
        raise ValueError("topology_samples must be >= 1")
    model = _InferenceModel(payload)
    cfg = model.train_config
    kappa, tau = cfg.kappa, cfg.tau
    tsplit = temporal_split(graph.num_steps, window=kappa + tau)
    start, stop = tsplit.test_range
    if stop - start < kappa + tau:
        raise ValueError("test range shorter than kappa + tau")

    dtype = cfg.torch_dtype
    x_norm = torch.as_tensor(
        zscore_apply(graph.features.astype(np.float64), model.stats), dtype=dtype
    )
    x_raw = graph.features
    n = graph.num_nodes
    anchors = np.arange(start + kappa - 1, stop - tau)

    fixed_adj = _fixed_inference_adjacency(cfg, n, graph, adjacency, dtype)

    preds_out = np.empty((len(anchors), tau, n, x_raw.shape[2]), dtype=np.float64)
    targets_out = np.empty_like(preds_out)
    mean = torch.as_tensor(model.stats.mean, dtype=dtype)
    std = torch.as_tensor(model.stats.std, dtype=dtype)

    with torch.no_grad():
        for lo in range(0, len(anchors), batch_size):
            chunk = anchors[lo : lo + batch_size]
            inputs = torch.stack([x_norm[a - kappa + 1 : a + 1] for a in chunk])
            if fixed_adj is not None:
                preds = model.backbone(inputs, fixed_adj)
            else:
                windows = inputs.permute(0, 2, 1, 3)  # [B, N, kappa, C]
                accum = None
                for draw in range(topology_samples):
                    noises = []
                    for w_idx in range(lo, lo + len(chunk)):
                        gen = torch.Generator().manual_seed(
                            eval_seed + w_idx + draw * 1_000_003
                        )
                        noises.append(gumbel_noise((n, n), generator=gen, dtype=dtype))
                    noise = (
                        torch.stack([g[0] for g in noises]),
                        torch.stack([g[1] for g in noises]),
                    )
                    state = model.topology.forward(
                        windows, cfg.eps, cfg.phi, cfg.s,
                        hard=True, variant=cfg.sparsify_variant, noise=noise,
                    )
                    adj = state.adjacency
                    if cfg.symmetrize:
                        adj = torch.maximum(adj, adj.transpose(-1, -2))
                    out = model.backbone(inputs, adj)
                    accum = out if accum is None else accum + out
                preds = accum / topology_samples
            preds = preds * std + mean
            preds_out[lo : lo + len(chunk)] = preds.numpy()
            for row, a in enumerate(chunk):
                targets_out[lo + row] = x_raw[a + 1 : a + tau + 1]
    return preds_out, targets_out


def _fixed_inference_adjacency(
    cfg: TrainConfig,
    n: int,
    graph: SpatialTemporalGraph,
    adjacency: np.ndarray | None,
    dtype: torch.dtype,
) -> torch.Tensor | None:
    if cfg.topology_mode == "learned":
        return None
    if cfg.topology_mode == "identity":
        return torch.eye(n, dtype=dtype)
    if cfg.topology_mode == "ones":
        return torch.ones(n, n, dtype=dtype) - torch.eye(n, dtype=dtype)
    base = adjacency if adjacency is not None else graph.adjacency
    if base is None:
        raise ValueError("variant 'w/o gl' needs a dataset adjacency at inference")
    return torch.as_tensor(base, dtype=dtype)


def export_topology(
    payload: dict,
    graph: SpatialTemporalGraph,
    path: str | Path,
    eval_seed: int = DEFAULT_EVAL_SEED,
) -> Path:
    """Write the learned pair scores and sampled edges of the first test window."""
    model = _InferenceModel(payload)
    cfg = model.train_config
    kappa = cfg.kappa
    tsplit = temporal_split(graph.num_steps, window=kappa + cfg.tau)
    start = tsplit.test_range[0]
    dtype = cfg.torch_dtype
    x_norm = torch.as_tensor(
        zscore_apply(graph.features.astype(np.float64), model.stats), dtype=dtype
    )
    anchor = start + kappa - 1
    window = x_norm[anchor - kappa + 1 : anchor + 1].permute(1, 0, 2)  # [N, kappa, C]
    with torch.no_grad():
        gen = torch.Generator().manual_seed(eval_seed)
        noise = gumbel_noise((graph.num_nodes,) * 2, generator=gen, dtype=dtype)
        state = model.topology.forward(
            window, cfg.eps, cfg.phi, cfg.s,
            hard=True, variant=cfg.sparsify_variant, noise=noise,
        )
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "p_ij", "a_ij"])
        scores = state.scores.numpy()
        adj = state.adjacency.numpy()
        for i in range(graph.num_nodes):
            for j in range(graph.num_nodes):
                writer.writerow([i, j, f"{scores[i, j]:.6f}", int(adj[i, j])])
    return path


def evaluate_checkpoint(
    payload: dict,
    graph: SpatialTemporalGraph,
    horizons: tuple[int, ...] = (3, 6, 12),
    node_scope: str = "test_nodes",
    eval_seed: int = DEFAULT_EVAL_SEED,
    adjacency: np.ndarray | None = None,
    topology_samples: int = 1,
) -> MetricsReport:
    preds, targets = infer(
        payload, graph, eval_seed=eval_seed, adjacency=adjacency,
        topology_samples=topology_samples,
    )
    split = NodeSplit(**payload["node_split"])
    return horizon_report(
        preds,
        targets,
        split,
        horizons=horizons,
        node_scope=node_scope,
        variant=payload["train_config"].get("variant", "full"),
    )


def run_ablation(
    variant: str,
    config: TrainConfig,
    graph: SpatialTemporalGraph,
    split: NodeSplit,
    adjacency: np.ndarray | None = None,
    horizons: tuple[int, ...] = (3, 6, 12),
    node_scope: str = "test_nodes",
    eval_seed: int = DEFAULT_EVAL_SEED,
) -> tuple[MetricsReport, dict]:
    """Train one ablation variant on a shared split and evaluate on test nodes."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; valid: {list(VARIANTS)}")
    cfg = TrainConfig(**{**config.__dict__, "variant": variant})
    payload, records = run_training(cfg, graph, split, adjacency=adjacency)
    report = evaluate_checkpoint(
        payload, graph, horizons=horizons, node_scope=node_scope,
        eval_seed=eval_seed, adjacency=adjacency,
    )
    summary = {
        "variant": variant,
        "epochs": len(records),
        "phase1_steps": payload["counters"]["phase1_steps"],
        "phase2_steps": payload["counters"]["phase2_steps"],
        "best_val_mae": payload["best_val_mae"],
    }
    return report, summary


def write_report_files(
    reports: list[MetricsReport], out_dir: str | Path
) -> tuple[Path, Path]:
    """Serialize reports to report.json (nested) and report.csv (flat)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    csv_path = out_dir / "report.csv"
    nested = {report.variant: report.to_dict() for report in reports}
    json_path.write_text(json.dumps(nested, indent=2, sort_keys=True) + "\n")
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "horizon", "mae", "rmse", "mape_pct", "count"])
        for report in reports:
            for horizon, row in report.rows.items():
                writer.writerow(
                    [
                        report.variant,
                        horizon,
                        f"{row['mae']:.6f}",
                        f"{row['rmse']:.6f}",
                        f"{row['mape_pct']:.6f}",
                        row["count"],
                    ]
                )
    return json_path, csv_path
