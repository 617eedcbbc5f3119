"""Two-phase alternating trainer: augmentation updates, then backbone+topology.

Phase 1 updates the augmentation VAE on similarity + forecast-consistency +
KL terms with the graph/forecast parameters frozen; phase 2 updates backbone
and topology on forecast-consistency + forecasting loss with the VAE frozen.
By default a full phase-1 sweep over all batches precedes the phase-2 sweep
each epoch; early stopping watches validation MAE on training nodes.
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .augmentation import (
    WindowVAE,
    forecast_consistency_loss,
    generate_batch,
    kl_loss,
    sample_pairs,
    similarity_loss,
)
from .backbones import BACKBONES, BackboneConfig, build_backbone
from .data import (
    NodeSplit,
    SpatialTemporalGraph,
    TemporalSplit,
    temporal_split,
    zscore_apply,
    zscore_fit,
)
from .topology import (
    SPARSIFY_VARIANTS,
    TopologyLearner,
    gumbel_noise,
    init_adjacency_cosine,
)

CHECKPOINT_SCHEMA_VERSION = 1

VARIANTS = ("full", "w/o aug", "w/o sim", "w/o fst", "w/o gl", "w/o gs", "identity")

# adjacency source used for forecasting losses, by ablation variant
_TOPOLOGY_MODE = {
    "full": "learned",
    "w/o aug": "learned",
    "w/o sim": "learned",
    "w/o fst": "learned",
    "w/o gl": "dataset",
    "w/o gs": "ones",
    "identity": "identity",
}


class TrainingAbort(RuntimeError):
    """Raised when a loss goes non-finite; carries the per-term values."""

    def __init__(self, message: str, terms: dict[str, float]):
        super().__init__(f"{message}; terms: {terms}")
        self.terms = terms


@dataclass
class TrainConfig:
    lr: float = 2e-2
    weight_decay: float = 1e-3
    max_epochs: int = 100
    patience: int = 10
    batch_size: int = 16
    kappa: int = 12
    tau: int = 12
    lam: float = 0.5  # latent mixup ratio
    eps: float = 0.9  # sparsity threshold
    phi: float = 0.1  # sparsify temperature
    s: float = 0.5  # Gumbel temperature
    k_pairs: int | None = None  # virtual series per step; None -> |train_nodes|
    seed: int = 0
    optimizer: str = "adam"
    loss_ori_kind: str = "mae"
    sparsify_variant: str = "soft-threshold"
    backbone: str = "stgcn"
    hidden_dim: int = 64
    cheb_order: int = 3
    temporal_kernel: int = 3
    num_st_blocks: int = 2
    node_ratio: float = 0.10
    variant: str = "full"
    hard_sampling: bool = True
    symmetrize: bool = False
    alternation: str = "epoch"
    grad_clip: float = 5.0
    vae_reconstruction: bool = False
    theta_init: float = 0.7  # cosine-init threshold when the dataset lacks an adjacency
    deterministic: bool = True
    precision: str = "float32"
    device: str = "cpu"

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 1 <= self.patience <= self.max_epochs:
            raise ValueError("patience must satisfy 1 <= patience <= max_epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.kappa < 1 or self.tau < 1:
            raise ValueError("kappa and tau must be >= 1")
        if not 0.0 < self.lam <= 0.5:
            raise ValueError(f"lam must lie in (0, 0.5], got {self.lam}")
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError("eps must lie in [0, 1]")
        if self.phi <= 0:
            raise ValueError("phi must be positive")
        if self.s <= 0:
            raise ValueError("s must be positive")
        if self.k_pairs is not None and self.k_pairs < 1:
            raise ValueError("k_pairs must be >= 1")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if self.loss_ori_kind not in ("mae", "mse"):
            raise ValueError("loss_ori_kind must be 'mae' or 'mse'")
        if self.sparsify_variant not in SPARSIFY_VARIANTS:
            raise ValueError(
                f"sparsify_variant must be one of {SPARSIFY_VARIANTS}"
            )
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if not 0.0 < self.node_ratio <= 1.0:
            raise ValueError("node_ratio must lie in (0, 1]")
        if self.variant not in VARIANTS:
            raise ValueError(
                f"unknown variant {self.variant!r}; valid: {list(VARIANTS)}"
            )
        if self.alternation not in ("epoch", "batch"):
            raise ValueError("alternation must be 'epoch' or 'batch'")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be nonnegative")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be 'float32' or 'float64'")

    @property
    def uses_augmentation(self) -> bool:
        return self.variant != "w/o aug"

    @property
    def include_sim(self) -> bool:
        return self.variant not in ("w/o sim", "w/o aug")

    @property
    def include_fst(self) -> bool:
        return self.variant not in ("w/o fst", "w/o aug")

    @property
    def topology_mode(self) -> str:
        return _TOPOLOGY_MODE[self.variant]

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == "float64" else torch.float32


@dataclass
class EpochRecord:
    epoch: int
    loss_sim: float | None
    loss_fst: float | None
    loss_kl: float | None
    loss_aug: float | None
    loss_ori: float
    loss_gf: float
    val_mae: float
    wall_seconds: float

    def to_dict(self) -> dict:
        return asdict(self)


class RngStreams:
    """Independent named random streams (data order, VAE noise, Gumbel noise, init)."""

    def __init__(self, seed: int):
        kids = np.random.SeedSequence(seed).spawn(5)
        self.data = np.random.default_rng(kids[0])
        self.vae = torch.Generator().manual_seed(int(kids[1].generate_state(1)[0]))
        self.gumbel = torch.Generator().manual_seed(int(kids[2].generate_state(1)[0]))
        self.init_seed = int(kids[3].generate_state(1)[0])
        self.val_seed = int(kids[4].generate_state(1)[0])

    def state_dict(self) -> dict:
        return {
            "data": self.data.bit_generator.state,
            "vae": self.vae.get_state(),
            "gumbel": self.gumbel.get_state(),
            "init_seed": self.init_seed,
            "val_seed": self.val_seed,
        }

    def load_state_dict(self, state: dict) -> None:
        self.data.bit_generator.state = state["data"]
        self.vae.set_state(state["vae"])
        self.gumbel.set_state(state["gumbel"])
        self.init_seed = state["init_seed"]
        self.val_seed = state["val_seed"]


def _scalar(value: torch.Tensor) -> float:
    return float(value.detach())


def early_stop(history: list[float], patience: int) -> bool:
    """True iff the last `patience` entries failed to improve on the running best."""
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if not history:
        raise ValueError("history must be nonempty")
    best = math.inf
    since = 0
    for value in history:
        if value < best:
            best = value
            since = 0
        else:
            since += 1
    return since >= patience


def masked_error(preds: torch.Tensor, targets: torch.Tensor, kind: str) -> torch.Tensor:
    """Mean absolute or squared error over finite target entries only."""
    mask = torch.isfinite(targets)
    if not mask.any():
        raise ValueError("no finite target entries for the forecasting loss")
    diff = (preds - targets)[mask] if not mask.all() else preds - targets
    if kind == "mae":
        return diff.abs().mean()
    if kind == "mse":
        return diff.pow(2).mean()
    raise ValueError(f"unknown loss kind {kind!r}")


def ensure_adjacency(
    graph: SpatialTemporalGraph, hidden_dim: int, theta_init: float, seed: int
) -> np.ndarray:
    """Dataset adjacency, or the cosine-similarity fallback when absent."""
    if graph.adjacency is not None:
        return graph.adjacency
    return init_adjacency_cosine(graph.num_nodes, hidden_dim, theta_init, seed)


class Trainer:
    """Owns model parts, optimizers, RNG streams, and the alternating loop."""

    def __init__(
        self,
        config: TrainConfig,
        graph: SpatialTemporalGraph,
        split: NodeSplit,
        adjacency: np.ndarray | None = None,
    ):
        config.validate()
        self.config = config
        self.split = split
        self.graph_name = graph.name
        dtype = config.torch_dtype
        self.device = torch.device(config.device)
        if self.device.type == "cuda" and not torch.cuda.is_available():
            raise ValueError("device 'cuda' requested but CUDA is unavailable")

        self.tsplit: TemporalSplit = temporal_split(
            graph.num_steps, window=config.kappa + config.tau
        )
        self.stats = zscore_fit(graph, split, self.tsplit.train_range)

        # training-side tensors hold train-node columns only: test-node features
        # can never reach any training-phase quantity
        raw = graph.features[:, split.train_nodes, :].astype(np.float64)
        norm = zscore_apply(raw, self.stats)
        self.x_raw = torch.as_tensor(raw, dtype=dtype).to(self.device)
        self.x_norm = torch.as_tensor(norm, dtype=dtype).to(self.device)

        self.n_train = len(split.train_nodes)
        self.in_channels = graph.features.shape[2]
        self.k_pairs = config.k_pairs or self.n_train

        dataset_adj = adjacency if adjacency is not None else graph.adjacency
        if config.topology_mode == "dataset":
            if dataset_adj is None:
                raise ValueError(
                    "variant 'w/o gl' needs a dataset adjacency (or cosine fallback)"
                )
            sub = dataset_adj[np.ix_(split.train_nodes, split.train_nodes)]
            self.dataset_adj_train = torch.as_tensor(sub, dtype=dtype).to(self.device)
        else:
            self.dataset_adj_train = None

        self.streams = RngStreams(config.seed)
        self.backbone_config = BackboneConfig(
            hidden_dim=config.hidden_dim,
            cheb_order=config.cheb_order,
            temporal_kernel=config.temporal_kernel,
            num_st_blocks=config.num_st_blocks,
            kappa=config.kappa,
            tau=config.tau,
            in_channels=self.in_channels,
        )
        with torch.random.fork_rng():
            torch.manual_seed(self.streams.init_seed)
            self.vae = WindowVAE(
                config.kappa + config.tau, self.in_channels, config.hidden_dim
            )
            self.topology = TopologyLearner(
                config.kappa, self.in_channels, config.hidden_dim
            )
            self.backbone = build_backbone(config.backbone, self.backbone_config)
        if dtype == torch.float64:
            self.vae.double()
            self.topology.double()
            self.backbone.double()
        self.vae.to(self.device)
        self.topology.to(self.device)
        self.backbone.to(self.device)

        self.aug_params = list(self.vae.parameters())
        gf_params = list(self.backbone.parameters())
        if config.topology_mode == "learned":
            gf_params += list(self.topology.parameters())
        self.gf_params = gf_params
        assert not set(map(id, self.aug_params)) & set(map(id, self.gf_params))

        self.opt_aug = torch.optim.Adam(
            self.aug_params, lr=config.lr, weight_decay=config.weight_decay
        ) if self.aug_params else None
        self.opt_gf = torch.optim.Adam(
            self.gf_params, lr=config.lr, weight_decay=config.weight_decay
        ) if self.gf_params else None

        self.epoch = 0
        self.best_val_mae = math.inf
        self.epochs_since_improvement = 0
        self.val_history: list[float] = []
        self.best_models: dict | None = None
        self.phase1_steps = 0
        self.phase2_steps = 0
        self.phase1_sweeps = 0
        self.phase2_sweeps = 0

        start, stop = self.tsplit.train_range
        self.train_anchors = np.arange(
            start + config.kappa - 1, stop - config.tau
        )
        if self.train_anchors.size == 0:
            raise ValueError("training range too short for a single window")
        vstart, vstop = self.tsplit.val_range
        self.val_anchors = np.arange(vstart + config.kappa - 1, vstop - config.tau)
        if self.val_anchors.size == 0:
            raise ValueError("validation range too short for a single window")

        self._mean = torch.as_tensor(self.stats.mean, dtype=dtype).to(self.device)
        self._std = torch.as_tensor(self.stats.std, dtype=dtype).to(self.device)

    # ------------------------------------------------------------------ data

    def _batch(self, anchors: np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
        kappa, tau = self.config.kappa, self.config.tau
        inputs = torch.stack([self.x_norm[a - kappa + 1 : a + 1] for a in anchors])
        targets = torch.stack([self.x_norm[a + 1 : a + tau + 1] for a in anchors])
        return inputs, targets

    def _batches(self, anchors: np.ndarray):
        bs = self.config.batch_size
        for i in range(0, len(anchors), bs):
            yield anchors[i : i + bs]

    # ------------------------------------------------------------- adjacency

    def _fixed_adjacency(self, m: int, with_virtual: int = 0) -> torch.Tensor:
        dtype = self.config.torch_dtype
        mode = self.config.topology_mode
        eye = torch.eye(m, dtype=dtype, device=self.device)
        if mode == "identity":
            return eye
        if mode == "ones":
            return torch.ones(m, m, dtype=dtype, device=self.device) - eye
        if mode == "dataset":
            base = self.dataset_adj_train
            if with_virtual == 0:
                return base
            out = eye  # virtual nodes couple through self-loops only
            out[: base.shape[0], : base.shape[0]] = base
            return out
        raise RuntimeError(f"not a fixed topology mode: {mode}")

    def _sample_topology(
        self,
        windows: torch.Tensor,
        generator: torch.Generator | None = None,
        hard: bool | None = None,
    ) -> torch.Tensor:
        cfg = self.config
        shape = tuple(windows.shape[:-2]) + (windows.shape[-3],)
        noise = self._draw_gumbel(shape, windows.dtype, generator=generator)
        state = self.topology.forward(
            windows,
            cfg.eps,
            cfg.phi,
            cfg.s,
            hard=cfg.hard_sampling if hard is None else hard,
            variant=cfg.sparsify_variant,
            noise=noise,
        )
        adj = state.adjacency
        if cfg.symmetrize:
            adj = torch.maximum(adj, adj.transpose(-1, -2))
        return adj

    def _ext_adjacency(
        self, real_inputs: torch.Tensor, x_hat: torch.Tensor
    ) -> torch.Tensor:
        if self.config.topology_mode == "learned":
            real_w = real_inputs.permute(0, 2, 1, 3)  # [B, Nt, kappa, C]
            virt_w = x_hat[:, :, : self.config.kappa, :]  # [B, K, kappa, C]
            joint = torch.cat([real_w, virt_w], dim=1)
            return self._sample_topology(joint)
        m = self.n_train + x_hat.shape[1]
        return self._fixed_adjacency(m, with_virtual=x_hat.shape[1])

    def _train_adjacency(
        self,
        inputs: torch.Tensor,
        generator: torch.Generator | None = None,
        hard: bool | None = None,
    ) -> torch.Tensor:
        if self.config.topology_mode == "learned":
            return self._sample_topology(
                inputs.permute(0, 2, 1, 3), generator=generator, hard=hard
            )
        return self._fixed_adjacency(self.n_train)

    # ---------------------------------------------------------------- phases

    def _draw_gumbel(
        self,
        shape: tuple[int, ...],
        dtype: torch.dtype,
        generator: torch.Generator | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        # noise is always drawn on the host generator, then moved
        g_edge, g_none = gumbel_noise(
            shape, generator=generator or self.streams.gumbel, dtype=dtype
        )
        return g_edge.to(self.device), g_none.to(self.device)

    def _draw_vae_noise(self, batch: int, nodes: int, dtype: torch.dtype) -> torch.Tensor:
        noise = torch.randn(
            batch, nodes, self.config.hidden_dim,
            generator=self.streams.vae, dtype=dtype,
        )
        return noise.to(self.device)

    def _set_phase(self, aug: bool) -> None:
        for p in self.aug_params:
            p.requires_grad_(aug)
        for p in self.gf_params:
            p.requires_grad_(not aug)

    def _draw_pairs(self) -> tuple[torch.Tensor, torch.Tensor]:
        pairs = sample_pairs(list(range(self.n_train)), self.k_pairs, self.streams.data)
        idx_i = torch.tensor([p.v_i for p in pairs], dtype=torch.long)
        idx_j = torch.tensor([p.v_j for p in pairs], dtype=torch.long)
        return idx_i, idx_j

    def compute_phase1_loss(
        self,
        inputs: torch.Tensor,
        targets: torch.Tensor,
        idx_i: torch.Tensor,
        idx_j: torch.Tensor,
        vae_noise: torch.Tensor,
        gumbel: tuple[torch.Tensor, torch.Tensor] | None = None,
    ) -> tuple[torch.Tensor, dict[str, float]]:
        """L_aug and its terms for one batch, with all noise supplied explicitly."""
        cfg = self.config
        windows = torch.cat([inputs, targets], dim=1).permute(0, 2, 1, 3)
        gen = generate_batch(
            self.vae, windows, idx_i, idx_j, cfg.lam, noise=vae_noise
        )
        terms: dict[str, float] = {}
        loss = kl_loss(gen["mu"], gen["sigma"])
        terms["loss_kl"] = _scalar(loss)
        if cfg.include_sim:
            sim = similarity_loss(gen["z_gen"], gen["z_i"], gen["z_j"], cfg.lam)
            terms["loss_sim"] = _scalar(sim)
            loss = loss + sim
        if cfg.include_fst:
            if cfg.topology_mode == "learned":
                real_w = inputs.permute(0, 2, 1, 3)
                virt_w = gen["x_hat"][:, :, : cfg.kappa, :]
                joint = torch.cat([real_w, virt_w], dim=1)
                if gumbel is None:
                    shape = tuple(joint.shape[:-2]) + (joint.shape[1],)
                    gumbel = self._draw_gumbel(shape, joint.dtype)
                state = self.topology.forward(
                    joint, cfg.eps, cfg.phi, cfg.s,
                    hard=cfg.hard_sampling, variant=cfg.sparsify_variant, noise=gumbel,
                )
                adj = state.adjacency
                if cfg.symmetrize:
                    adj = torch.maximum(adj, adj.transpose(-1, -2))
            else:
                adj = self._fixed_adjacency(
                    self.n_train + gen["x_hat"].shape[1],
                    with_virtual=gen["x_hat"].shape[1],
                )
            fst = forecast_consistency_loss(
                gen["x_hat"], inputs, self.backbone, adj, cfg.kappa, cfg.tau
            )
            terms["loss_fst_aug"] = _scalar(fst)
            loss = loss + fst
        if cfg.vae_reconstruction:
            z_all = gen["mu"] + gen["sigma"] * vae_noise
            recon = masked_error(self.vae.decode(z_all), windows, "mse")
            terms["loss_recon"] = _scalar(recon)
            loss = loss + recon
        # recorded aggregate is the exact sum of the recorded terms
        terms["loss_aug"] = sum(terms.values())
        return loss, terms

    def compute_phase2_loss(
        self,
        inputs: torch.Tensor,
        targets: torch.Tensor,
        idx_i: torch.Tensor | None = None,
        idx_j: torch.Tensor | None = None,
        vae_noise: torch.Tensor | None = None,
        gumbel_ext: tuple[torch.Tensor, torch.Tensor] | None = None,
        gumbel_train: tuple[torch.Tensor, torch.Tensor] | None = None,
    ) -> tuple[torch.Tensor, dict[str, float]]:
        """L_gf = L_fst + L_ori for one batch (L_fst dropped per ablation flags)."""
        cfg = self.config
        terms: dict[str, float] = {}
        loss = torch.zeros((), dtype=inputs.dtype, device=inputs.device)
        if cfg.include_fst:
            if idx_i is None or idx_j is None:
                idx_i, idx_j = self._draw_pairs()
            windows = torch.cat([inputs, targets], dim=1).permute(0, 2, 1, 3)
            if vae_noise is None:
                vae_noise = self._draw_vae_noise(
                    windows.shape[0], windows.shape[1], windows.dtype
                )
            gen = generate_batch(
                self.vae, windows, idx_i, idx_j, cfg.lam, noise=vae_noise
            )
            if cfg.topology_mode == "learned":
                real_w = inputs.permute(0, 2, 1, 3)
                virt_w = gen["x_hat"][:, :, : cfg.kappa, :]
                joint = torch.cat([real_w, virt_w], dim=1)
                if gumbel_ext is None:
                    shape = tuple(joint.shape[:-2]) + (joint.shape[1],)
                    gumbel_ext = self._draw_gumbel(shape, joint.dtype)
                state = self.topology.forward(
                    joint, cfg.eps, cfg.phi, cfg.s,
                    hard=cfg.hard_sampling, variant=cfg.sparsify_variant,
                    noise=gumbel_ext,
                )
                adj_ext = state.adjacency
                if cfg.symmetrize:
                    adj_ext = torch.maximum(adj_ext, adj_ext.transpose(-1, -2))
            else:
                adj_ext = self._fixed_adjacency(
                    self.n_train + gen["x_hat"].shape[1],
                    with_virtual=gen["x_hat"].shape[1],
                )
            fst = forecast_consistency_loss(
                gen["x_hat"], inputs, self.backbone, adj_ext, cfg.kappa, cfg.tau
            )
            terms["loss_fst"] = _scalar(fst)
            loss = loss + fst
        if cfg.topology_mode == "learned":
            real_w = inputs.permute(0, 2, 1, 3)
            if gumbel_train is None:
                shape = tuple(real_w.shape[:-2]) + (real_w.shape[1],)
                gumbel_train = self._draw_gumbel(shape, real_w.dtype)
            state = self.topology.forward(
                real_w, cfg.eps, cfg.phi, cfg.s,
                hard=cfg.hard_sampling, variant=cfg.sparsify_variant,
                noise=gumbel_train,
            )
            adj_train = state.adjacency
            if cfg.symmetrize:
                adj_train = torch.maximum(adj_train, adj_train.transpose(-1, -2))
        else:
            adj_train = self._fixed_adjacency(self.n_train)
        preds = self.backbone(inputs, adj_train)
        ori = masked_error(preds, targets, cfg.loss_ori_kind)
        terms["loss_ori"] = _scalar(ori)
        loss = loss + ori
        terms["loss_gf"] = terms.get("loss_fst", 0.0) + terms["loss_ori"]
        return loss, terms

    def phase1_step(self, anchors: np.ndarray) -> dict[str, float]:
        """One augmentation update; backbone/topology parameters stay bit-identical."""
        cfg = self.config
        inputs, targets = self._batch(anchors)
        idx_i, idx_j = self._draw_pairs()
        vae_noise = self._draw_vae_noise(inputs.shape[0], self.n_train, inputs.dtype)
        self._set_phase(aug=True)
        loss, terms = self.compute_phase1_loss(
            inputs, targets, idx_i, idx_j, vae_noise
        )
        self._check_finite(loss, terms, phase=1)
        self.opt_aug.zero_grad(set_to_none=True)
        loss.backward()
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.aug_params, cfg.grad_clip)
        self.opt_aug.step()
        self.phase1_steps += 1
        return terms

    def phase2_step(self, anchors: np.ndarray) -> dict[str, float]:
        """One backbone+topology update; augmentation parameters stay bit-identical."""
        cfg = self.config
        inputs, targets = self._batch(anchors)
        self._set_phase(aug=False)
        loss, terms = self.compute_phase2_loss(inputs, targets)
        self._check_finite(loss, terms, phase=2)
        if self.opt_gf is not None:  # parameter-free setups (HA + fixed topology)
            self.opt_gf.zero_grad(set_to_none=True)
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(self.gf_params, cfg.grad_clip)
            self.opt_gf.step()
        self.phase2_steps += 1
        return terms

    def _check_finite(self, loss: torch.Tensor, terms: dict, phase: int) -> None:
        if not torch.isfinite(loss):
            raise TrainingAbort(f"non-finite loss in phase {phase}", terms)

    # ------------------------------------------------------------ validation

    def validate_mae(self) -> float:
        """Masked MAE on denormalized validation windows of the training nodes."""
        gen = torch.Generator().manual_seed(self.streams.val_seed)
        total = 0.0
        count = 0
        kappa, tau = self.config.kappa, self.config.tau
        with torch.no_grad():
            for anchors in self._batches(self.val_anchors):
                inputs = torch.stack(
                    [self.x_norm[a - kappa + 1 : a + 1] for a in anchors]
                )
                raw_targets = torch.stack(
                    [self.x_raw[a + 1 : a + tau + 1] for a in anchors]
                )
                adj = self._train_adjacency(inputs, generator=gen, hard=True)
                preds = self.backbone(inputs, adj) * self._std + self._mean
                mask = torch.isfinite(raw_targets)
                total += float((preds - raw_targets)[mask].abs().sum())
                count += int(mask.sum())
        if count == 0:
            raise ValueError("no finite validation targets")
        return total / count

    # ---------------------------------------------------------------- epochs

    def run_epoch(self) -> EpochRecord:
        cfg = self.config
        t0 = time.perf_counter()
        p1_acc: dict[str, list[float]] = {}
        p2_acc: dict[str, list[float]] = {}

        def _collect(acc, terms):
            for key, value in terms.items():
                acc.setdefault(key, []).append(value)

        if cfg.alternation == "epoch":
            if cfg.uses_augmentation:
                order = self.streams.data.permutation(self.train_anchors)
                for chunk in self._batches(order):
                    _collect(p1_acc, self.phase1_step(chunk))
                self.phase1_sweeps += 1
            order = self.streams.data.permutation(self.train_anchors)
            for chunk in self._batches(order):
                _collect(p2_acc, self.phase2_step(chunk))
            self.phase2_sweeps += 1
        else:  # per-batch alternation
            order = self.streams.data.permutation(self.train_anchors)
            for chunk in self._batches(order):
                if cfg.uses_augmentation:
                    _collect(p1_acc, self.phase1_step(chunk))
                _collect(p2_acc, self.phase2_step(chunk))
            if cfg.uses_augmentation:
                self.phase1_sweeps += 1
            self.phase2_sweeps += 1

        val_mae = self.validate_mae()
        wall = time.perf_counter() - t0

        def _mean(acc, key):
            return float(np.mean(acc[key])) if key in acc else None

        record = EpochRecord(
            epoch=self.epoch,
            loss_sim=_mean(p1_acc, "loss_sim"),
            loss_fst=_mean(p2_acc, "loss_fst"),
            loss_kl=_mean(p1_acc, "loss_kl"),
            loss_aug=_mean(p1_acc, "loss_aug"),
            loss_ori=_mean(p2_acc, "loss_ori"),
            loss_gf=_mean(p2_acc, "loss_gf"),
            val_mae=val_mae,
            wall_seconds=wall,
        )
        self.epoch += 1
        self.val_history.append(val_mae)
        if val_mae < self.best_val_mae:
            self.best_val_mae = val_mae
            self.epochs_since_improvement = 0
            self.best_models = self._snapshot_models()
        else:
            self.epochs_since_improvement += 1
        return record

    def run(
        self,
        on_epoch: Callable[[EpochRecord], None] | None = None,
        on_abort: Callable[[dict], None] | None = None,
    ) -> tuple[dict, list[EpochRecord]]:
        """Alternate phases until max_epochs or patience; return best-val checkpoint."""
        if self.config.deterministic:
            torch.set_num_threads(1)
        records: list[EpochRecord] = []
        try:
            while (
                self.epoch < self.config.max_epochs
                and self.epochs_since_improvement < self.config.patience
            ):
                record = self.run_epoch()
                records.append(record)
                if on_epoch is not None:
                    on_epoch(record)
                if self.epochs_since_improvement >= self.config.patience:
                    break
        except TrainingAbort:
            if on_abort is not None:
                on_abort(self.checkpoint())
            raise
        return self.checkpoint(), records

    # ------------------------------------------------------------ checkpoint

    def _snapshot_models(self) -> dict:
        return {
            "vae": copy.deepcopy(self.vae.state_dict()),
            "topology": copy.deepcopy(self.topology.state_dict()),
            "backbone": copy.deepcopy(self.backbone.state_dict()),
        }

    def checkpoint(self) -> dict:
        return {
            "schema_version": CHECKPOINT_SCHEMA_VERSION,
            "train_config": asdict(self.config),
            "backbone_config": asdict(self.backbone_config),
            "models": self._snapshot_models(),
            "best_models": self.best_models or self._snapshot_models(),
            "optimizers": {
                "aug": self.opt_aug.state_dict() if self.opt_aug else None,
                "gf": self.opt_gf.state_dict() if self.opt_gf else None,
            },
            "rng": self.streams.state_dict(),
            "epoch": self.epoch,
            "best_val_mae": self.best_val_mae,
            "epochs_since_improvement": self.epochs_since_improvement,
            "val_history": list(self.val_history),
            "node_split": {
                "train_nodes": list(self.split.train_nodes),
                "test_nodes": list(self.split.test_nodes),
                "ratio": self.split.ratio,
                "seed": self.split.seed,
            },
            "norm_stats": {
                "mean": self.stats.mean.tolist(),
                "std": self.stats.std.tolist(),
            },
            "counters": {
                "phase1_steps": self.phase1_steps,
                "phase2_steps": self.phase2_steps,
                "phase1_sweeps": self.phase1_sweeps,
                "phase2_sweeps": self.phase2_sweeps,
            },
        }

    def restore(self, payload: dict) -> None:
        """Resume training bit-exactly from a checkpoint taken on this platform."""
        if payload["schema_version"] != CHECKPOINT_SCHEMA_VERSION:
            raise ValueError(
                f"checkpoint schema {payload['schema_version']} unsupported"
            )
        self.vae.load_state_dict(payload["models"]["vae"])
        self.topology.load_state_dict(payload["models"]["topology"])
        self.backbone.load_state_dict(payload["models"]["backbone"])
        if self.opt_aug and payload["optimizers"]["aug"] is not None:
            self.opt_aug.load_state_dict(payload["optimizers"]["aug"])
        if self.opt_gf and payload["optimizers"]["gf"] is not None:
            self.opt_gf.load_state_dict(payload["optimizers"]["gf"])
        self.streams.load_state_dict(payload["rng"])
        self.epoch = payload["epoch"]
        self.best_val_mae = payload["best_val_mae"]
        self.epochs_since_improvement = payload["epochs_since_improvement"]
        self.val_history = list(payload["val_history"])
        self.best_models = payload["best_models"]
        counters = payload["counters"]
        self.phase1_steps = counters["phase1_steps"]
        self.phase2_steps = counters["phase2_steps"]
        self.phase1_sweeps = counters["phase1_sweeps"]
        self.phase2_sweeps = counters["phase2_sweeps"]


def save_checkpoint(payload: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, weights_only=False)
    if payload.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(
            f"checkpoint schema {payload.get('schema_version')} unsupported"
        )
    return payload


def train(
    config: TrainConfig,
    graph: SpatialTemporalGraph,
    split: NodeSplit,
    adjacency: np.ndarray | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
    on_abort: Callable[[dict], None] | None = None,
) -> tuple[dict, list[EpochRecord]]:
    trainer = Trainer(config, graph, split, adjacency=adjacency)
    return trainer.run(on_epoch=on_epoch, on_abort=on_abort)
