"""Staged optimization, checkpointing, inference, and ablations.

Training proceeds through ordered stages, each with its own AdamW
optimizer and cosine learning-rate decay to zero:

1. ``local_cnn``: the 3D feature extractor with a throwaway mean-pool
   head, weight decay on.
2. ``local_pool``: attention pooling and the frame-to-frame head on top
   of the now frozen extractor.
3. ``global``: the sweep-context encoder with its own throwaway head,
   trained on non-contiguous frame draws.
4. ``fusion``: cross-attention decoder and final head over full sweeps;
   the 3D extractor stays frozen (configurable) so its full-sweep feature
   maps are computed once and cached.

The ``local_only`` variant stops after stage 2; ``coupled`` skips stage 3.

Reproducibility contract: with the same seed, dataset, configs, and a
single torch thread, runs are bit-identical, and resuming from the last
checkpoint continues the loss sequence exactly. Checkpoints are single
files carrying model, optimizer, scheduler, auxiliary heads, RNG states,
and a manifest.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import time
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import data, geometry, metrics, networks

CHECKPOINT_NAME = "checkpoint.pt"
BEST_NAME = "best.pt"
LOG_NAME = "log.csv"
LOG_FIELDS = ("step", "stage", "epoch", "loss", "lr", "val_loss", "val_gpe")
CHECKPOINT_VERSION = 1

STAGE_ORDER = ("local_cnn", "local_pool", "global", "fusion")


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss appears; message carries stage and step."""


class CheckpointError(RuntimeError):
    """Raised for unreadable or mismatched checkpoints."""


@dataclasses.dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters shared by all stages; epochs are per stage."""

    epochs_local_cnn: int = 40
    epochs_local_pool: int = 24
    epochs_global: int = 24
    epochs_fusion: int = 24
    lr: float = 1e-4
    weight_decay_cnn: float = 1e-3
    batch_size: int = 8
    fusion_batch_size: int = 4
    window: int = 16
    global_count: int = 16
    global_resolution: tuple = (32, 32)
    global_stride: int = 8
    seed: int = 0
    val_interval: int = 4
    freeze_local_cnn_in_fusion: bool = True

    def __post_init__(self):
        if self.lr <= 0 or self.window < 2 or self.global_count < 2:
            raise ValueError("lr must be positive; window and global_count >= 2")
        for name in ("epochs_local_cnn", "epochs_local_pool", "epochs_global", "epochs_fusion"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def epochs_for(self, stage: str) -> int:
        return getattr(self, f"epochs_{stage}")


def desk_training_config(**overrides) -> TrainingConfig:
    """Schedule sized for the small synthetic benchmark on CPU."""
    return TrainingConfig(**overrides)


def training_config_hash(cfg: TrainingConfig) -> str:
    payload = json.dumps(dataclasses.asdict(cfg), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def stages_for(variant: str) -> tuple:
    if variant == "local_only":
        return ("local_cnn", "local_pool")
    if variant == "coupled":
        return ("local_cnn", "local_pool", "fusion")
    if variant == "dual":
        return STAGE_ORDER
    raise ValueError(f"unknown variant {variant!r}")


def tracking_loss(pred: torch.Tensor, target: torch.Tensor,
                  mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean squared error over all six motion components.

    ``mask`` (B, L-1) marks which adjacent pairs are real; without it all
    elements count.
    """
    if pred.shape != target.shape:
        raise ValueError(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    err = (pred - target) ** 2
    if mask is None:
        return err.mean()
    m = mask.to(err.dtype)[..., None]
    denom = m.sum() * err.shape[-1]
    if denom == 0:
        raise ValueError("mask selects no valid pairs")
    return (err * m).sum() / denom


def set_determinism(seed: int, single_thread: bool = True) -> None:
    """Seed torch and keep CPU math order fixed for bit-exact replays."""
    torch.manual_seed(seed)
    if single_thread:
        torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)


def zero_motion_trajectory(n_frames: int) -> np.ndarray:
    """The do-nothing baseline: every frame predicted at the start pose."""
    return geometry.compose_trajectory(np.zeros((n_frames - 1, 6)))


def global_sample_indices(n_frames: int, stride: int) -> np.ndarray:
    return data.subsample_evenly(n_frames, stride)


def sweep_global_frames(sweep: data.Sweep, stride: int, resolution) -> tuple:
    """Evenly strided context frames for inference; (frames, indices)."""
    idx = global_sample_indices(sweep.num_frames, stride)
    frames = np.stack([data.area_resample(sweep.frames[i], tuple(resolution)) for i in idx])
    return frames, idx


def predict_relative_params(model: networks.DualTrackModel, sweep: data.Sweep,
                            cfg: TrainingConfig) -> np.ndarray:
    """Run the model over one full sweep; returns (N-1, 6) float64."""
    model.eval()
    with torch.no_grad():
        frames = torch.from_numpy(sweep.frames)[None]
        indices = torch.arange(sweep.num_frames)[None]
        if model.config.variant == "local_only":
            pred = model(frames, indices)
        elif model.config.variant == "coupled":
            gidx = torch.from_numpy(global_sample_indices(sweep.num_frames, cfg.global_stride))
            pred = model(frames, indices, global_indices=gidx[None])
        else:
            gframes, gidx = sweep_global_frames(sweep, cfg.global_stride, cfg.global_resolution)
            pred = model(frames, indices,
                         torch.from_numpy(gframes)[None], torch.from_numpy(gidx)[None])
    return pred[0].double().numpy()


def predict_trajectory(model: networks.DualTrackModel, sweep: data.Sweep,
                       cfg: TrainingConfig) -> np.ndarray:
    """Compose predicted steps into (N, 4, 4) world poses starting at identity."""
    return geometry.compose_trajectory(predict_relative_params(model, sweep, cfg))


def evaluate_model(model: networks.DualTrackModel, sweeps, cfg: TrainingConfig) -> list:
    """Per-sweep metric reports for a list of labeled sweeps."""
    reports = []
    for sweep in sweeps:
        pred = predict_trajectory(model, sweep, cfg)
        h, w = sweep.frame_shape
        reports.append(metrics.evaluate_trajectories(sweep.poses, pred, sweep.cal, w, h))
    return reports


def mean_gpe(model, sweeps, cfg) -> float:
    return float(np.mean([r.gpe_mm for r in evaluate_model(model, sweeps, cfg)]))


class Trainer:
    """Runs the staged schedule for one model over one dataset."""

    def __init__(self, model: networks.DualTrackModel, dataset: data.SweepDataset,
                 train_cfg: TrainingConfig, run_dir, deterministic: bool = True):
        self.model = model
        self.cfg = train_cfg
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.deterministic = deterministic
        self.train_sweeps = list(dataset.sweeps("train"))
        self.val_sweeps = list(dataset.sweeps("val"))
        if not self.train_sweeps or not self.val_sweeps:
            raise ValueError("dataset must provide non-empty train and val splits")
        self.stages = stages_for(model.config.variant)
        self.rng = np.random.default_rng(train_cfg.seed)
        self.aux = self._build_aux_heads()
        self.global_step = 0
        self.stage_index = 0
        self.epoch = 0
        self.best_val_gpe = math.inf
        self._optimizer = None
        self._scheduler = None
        self._feature_cache = None
        self._global_frame_cache = None

    # -- construction ------------------------------------------------------

    def _build_aux_heads(self) -> nn.ModuleDict:
        """Throwaway heads for stages whose module has no final head yet."""
        cfg = self.model.config
        aux = nn.ModuleDict()
        aux["cnn_head"] = nn.Linear(self.model.local_encoder.cnn.out_channels, 6)
        if cfg.variant != "local_only":
            aux["local_head"] = nn.Linear(cfg.local.embed_dim, 6)
        if cfg.variant == "dual":
            aux["global_head"] = nn.Linear(cfg.global_branch.embed_dim, 6)
        return aux

    def _stage_parameters(self, stage: str):
        model, aux = self.model, self.aux
        if stage == "local_cnn":
            return list(model.local_encoder.cnn.parameters()) + list(aux["cnn_head"].parameters())
        if stage == "local_pool":
            head = model.head if model.config.variant == "local_only" else aux["local_head"]
            return list(model.local_encoder.pool.parameters()) + list(head.parameters())
        if stage == "global":
            return list(model.global_encoder.parameters()) + list(aux["global_head"].parameters())
        params = list(model.local_encoder.pool.parameters()) + list(model.fusion.parameters()) \
            + list(model.head.parameters())
        if not self.cfg.freeze_local_cnn_in_fusion:
            params += list(model.local_encoder.cnn.parameters())
        if model.config.variant == "dual":
            params += list(model.global_encoder.parameters())
        else:
            params += list(model.coupled_proj.parameters())
            params += list(model.coupled_temporal.parameters())
        return params

    def _steps_per_epoch(self, stage: str) -> int:
        batch = self.cfg.fusion_batch_size if stage == "fusion" else self.cfg.batch_size
        return math.ceil(len(self.train_sweeps) / batch)

    def _make_stage_optimizer(self, stage: str):
        wd = self.cfg.weight_decay_cnn if stage == "local_cnn" else 0.0
        params = self._stage_parameters(stage)
        self._optimizer = torch.optim.AdamW(params, lr=self.cfg.lr, weight_decay=wd)
        total = self.cfg.epochs_for(stage) * self._steps_per_epoch(stage)
        self._scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            self._optimizer, T_max=total, eta_min=0.0)

    def _cnn_frozen(self, stage: str) -> bool:
        if stage in ("local_pool", "global"):
            return True
        return stage == "fusion" and self.cfg.freeze_local_cnn_in_fusion

    def _apply_train_modes(self, stage: str) -> None:
        """Train mode for what learns; frozen parts stay in eval.

        Keeping the frozen extractor in eval mode also pins its
        normalization statistics, so "frozen" covers buffers too.
        """
        self.model.train()
        self.aux.train()
        cnn = self.model.local_encoder.cnn
        cnn.requires_grad_(not self._cnn_frozen(stage))
        if self._cnn_frozen(stage):
            cnn.eval()
        if stage in ("local_cnn", "local_pool") and self.model.config.variant != "local_only":
            if self.model.fusion is not None:
                self.model.fusion.eval()
        if stage == "global":
            self.model.local_encoder.pool.eval()

    # -- caching -----------------------------------------------------------

    def _cached_feature_maps(self) -> list:
        """Full-sweep 3D feature maps under the frozen extractor."""
        if self._feature_cache is None:
            cnn = self.model.local_encoder.cnn
            cnn.eval()
            maps = []
            with torch.no_grad():
                for sweep in self.train_sweeps:
                    frames = torch.from_numpy(sweep.frames)[None]
                    maps.append(cnn(frames)[0])
            self._feature_cache = maps
        return self._feature_cache

    def _cached_global_frames(self) -> list:
        if self._global_frame_cache is None:
            cache = []
            for sweep in self.train_sweeps:
                frames, idx = sweep_global_frames(
                    sweep, self.cfg.global_stride, self.cfg.global_resolution)
                cache.append((torch.from_numpy(frames), torch.from_numpy(idx)))
            self._global_frame_cache = cache
        return self._global_frame_cache

    def _invalidate_caches(self) -> None:
        self._feature_cache = None

    # -- per-stage batch construction and loss ------------------------------

    def _local_batch(self, sweep_ids) -> tuple:
        samples = [data.sample_local_subsequence(self.train_sweeps[i], self.cfg.window, self.rng)
                   for i in sweep_ids]
        frames = torch.from_numpy(np.stack([s.frames for s in samples]))
        indices = torch.from_numpy(np.stack([s.indices for s in samples]))
        targets = torch.from_numpy(np.stack([s.targets for s in samples])).float()
        return frames, indices, targets

    def _stage_loss(self, stage: str, sweep_ids) -> torch.Tensor:
        model, cfg = self.model, self.cfg
        if stage == "local_cnn":
            frames, _, targets = self._local_batch(sweep_ids)
            maps = model.local_encoder.cnn(frames)
            states = maps.mean(dim=(-2, -1)).transpose(1, 2)
            pred = self.aux["cnn_head"](states)[:, :-1]
            return tracking_loss(pred, targets)
        if stage == "local_pool":
            maps_cache = self._cached_feature_maps()
            picks, targets = [], []
            for i in sweep_ids:
                sweep = self.train_sweeps[i]
                start = int(self.rng.integers(0, sweep.num_frames - cfg.window + 1))
                idx = np.arange(start, start + cfg.window)
                picks.append(maps_cache[i][:, start:start + cfg.window])
                targets.append(data.relative_targets(sweep.poses, idx))
            maps = torch.stack(picks)
            targets = torch.from_numpy(np.stack(targets)).float()
            states = model.local_encoder.pool(maps)
            head = model.head if model.config.variant == "local_only" else self.aux["local_head"]
            return tracking_loss(head(states)[:, :-1], targets)
        if stage == "global":
            samples = [
                data.sample_global_subsequence(
                    self.train_sweeps[i], cfg.global_count, self.rng, cfg.global_resolution)
                for i in sweep_ids
            ]
            frames = torch.from_numpy(np.stack([s.frames for s in samples]))
            indices = torch.from_numpy(np.stack([s.indices for s in samples]))
            targets = torch.from_numpy(np.stack([s.targets for s in samples])).float()
            tokens = model.global_encoder(frames, indices)
            return tracking_loss(self.aux["global_head"](tokens)[:, :-1], targets)
        return self._fusion_loss(sweep_ids)

    def _fusion_loss(self, sweep_ids) -> torch.Tensor:
        model, cfg = self.model, self.cfg
        frozen = cfg.freeze_local_cnn_in_fusion
        state_rows, index_rows, target_rows, gframe_rows, gindex_rows = [], [], [], [], []
        for i in sweep_ids:
            sweep = self.train_sweeps[i]
            if frozen:
                maps = self._cached_feature_maps()[i][None]
            else:
                maps = model.local_encoder.cnn(torch.from_numpy(sweep.frames)[None])
            state_rows.append(model.local_encoder.pool(maps)[0])
            index_rows.append(torch.arange(sweep.num_frames))
            target_rows.append(torch.from_numpy(
                geometry.trajectory_to_relative_params(sweep.poses)).float())
            gframes, gidx = self._cached_global_frames()[i]
            gframe_rows.append(gframes)
            gindex_rows.append(gidx)
        lengths = [len(r) for r in index_rows]
        glengths = [len(g) for g in gindex_rows]
        if len(set(lengths)) == 1 and len(set(glengths)) == 1:
            states = torch.stack(state_rows)
            indices = torch.stack(index_rows)
            targets = torch.stack(target_rows)
            gidx = torch.stack(gindex_rows)
            gframes = torch.stack(gframe_rows)
            pred = model.fuse(states, indices,
                              gframes if model.config.variant == "dual" else None, gidx)
            return tracking_loss(pred, targets)
        # Mixed sweep lengths: accumulate per sweep to avoid padding rules.
        losses = []
        for s, idx, tgt, gf, gi in zip(state_rows, index_rows, target_rows,
                                       gframe_rows, gindex_rows):
            pred = model.fuse(s[None], idx[None],
                              gf[None] if model.config.variant == "dual" else None, gi[None])
            losses.append(tracking_loss(pred, tgt[None]))
        return torch.stack(losses).mean()

    # -- validation ---------------------------------------------------------

    def _validation(self, stage: str) -> tuple:
        """(val_loss, val_gpe); gpe is NaN for stages without a full path."""
        self.model.eval()
        self.aux.eval()
        with torch.no_grad():
            if stage == "local_cnn":
                losses = []
                for sweep in self.val_sweeps:
                    frames = torch.from_numpy(sweep.frames)[None]
                    maps = self.model.local_encoder.cnn(frames)
                    states = maps.mean(dim=(-2, -1)).transpose(1, 2)
                    pred = self.aux["cnn_head"](states)[:, :-1]
                    tgt = torch.from_numpy(
                        geometry.trajectory_to_relative_params(sweep.poses)).float()[None]
                    losses.append(float(tracking_loss(pred, tgt)))
                return float(np.mean(losses)), math.nan
            if stage == "global":
                losses = []
                for sweep in self.val_sweeps:
                    gframes, gidx = sweep_global_frames(
                        sweep, self.cfg.global_stride, self.cfg.global_resolution)
                    tokens = self.model.global_encoder(
                        torch.from_numpy(gframes)[None], torch.from_numpy(gidx)[None])
                    pred = self.aux["global_head"](tokens)[:, :-1]
                    tgt = torch.from_numpy(
                        data.relative_targets(sweep.poses, gidx)).float()[None]
                    losses.append(float(tracking_loss(pred, tgt)))
                return float(np.mean(losses)), math.nan
            # local_pool and fusion have a deployable path: report GPE.
            losses, gpes = [], []
            for sweep in self.val_sweeps:
                if stage == "local_pool" and self.model.config.variant != "local_only":
                    states = self.model.local_encoder(torch.from_numpy(sweep.frames)[None])
                    pred_t = self.aux["local_head"](states)[:, :-1]
                    rel = pred_t[0].double().numpy()
                else:
                    rel = predict_relative_params(self.model, sweep, self.cfg)
                    pred_t = torch.from_numpy(rel)[None].float()
                tgt = torch.from_numpy(
                    geometry.trajectory_to_relative_params(sweep.poses)).float()[None]
                losses.append(float(tracking_loss(pred_t, tgt)))
                traj = geometry.compose_trajectory(rel)
                h, w = sweep.frame_shape
                rep = metrics.evaluate_trajectories(sweep.poses, traj, sweep.cal, w, h)
                gpes.append(rep.gpe_mm)
            return float(np.mean(losses)), float(np.mean(gpes))

    # -- logging and checkpoints ---------------------------------------------

    def _log_row(self, **row) -> None:
        path = self.run_dir / LOG_NAME
        new = not path.exists()
        with path.open("a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            if new:
                writer.writeheader()
            writer.writerow({k: row.get(k, "") for k in LOG_FIELDS})

    def _manifest(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "variant": self.model.config.variant,
            "model_config": networks.config_hash(self.model.config),
            "training_config": training_config_hash(self.cfg),
            "stage_index": self.stage_index,
            "stage": self.stages[self.stage_index] if self.stage_index < len(self.stages) else "done",
            "epoch": self.epoch,
            "global_step": self.global_step,
            "seed": self.cfg.seed,
        }

    def save_checkpoint(self, path=None) -> Path:
        path = Path(path) if path else self.run_dir / CHECKPOINT_NAME
        payload = {
            "manifest": self._manifest(),
            "model": self.model.state_dict(),
            "aux": self.aux.state_dict(),
            "optimizer": self._optimizer.state_dict() if self._optimizer else None,
            "scheduler": self._scheduler.state_dict() if self._scheduler else None,
            "rng_numpy": self.rng.bit_generator.state,
            "rng_torch": torch.get_rng_state(),
            "best_val_gpe": self.best_val_gpe,
        }
        tmp = path.with_suffix(".tmp")
        torch.save(payload, tmp)
        tmp.replace(path)
        return path

    def load_checkpoint(self, path=None) -> dict:
        path = Path(path) if path else self.run_dir / CHECKPOINT_NAME
        if not path.is_file():
            raise CheckpointError(f"no checkpoint at {path}")
        payload = torch.load(path, weights_only=False)
        manifest = payload.get("manifest", {})
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')}")
        if manifest.get("model_config") != networks.config_hash(self.model.config):
            raise CheckpointError("checkpoint was written for a different model config")
        if manifest.get("training_config") != training_config_hash(self.cfg):
            raise CheckpointError("checkpoint was written for a different training config")
        self.model.load_state_dict(payload["model"])
        self.aux.load_state_dict(payload["aux"])
        self.stage_index = manifest["stage_index"]
        self.epoch = manifest["epoch"]
        self.global_step = manifest["global_step"]
        self.best_val_gpe = payload.get("best_val_gpe", math.inf)
        self.rng.bit_generator.state = payload["rng_numpy"]
        torch.set_rng_state(payload["rng_torch"])
        # A boundary checkpoint (epoch 0 of a fresh stage) stores no
        # optimizer; the run loop creates it when the stage starts.
        if payload["optimizer"] is not None and self.stage_index < len(self.stages):
            self._make_stage_optimizer(self.stages[self.stage_index])
            self._optimizer.load_state_dict(payload["optimizer"])
            self._scheduler.load_state_dict(payload["scheduler"])
        else:
            self._optimizer = None
            self._scheduler = None
        self._invalidate_caches()
        return manifest

    def _save_best(self, val_gpe: float) -> None:
        payload = {
            "manifest": self._manifest(),
            "model": self.model.state_dict(),
            "val_gpe": val_gpe,
        }
        tmp = (self.run_dir / BEST_NAME).with_suffix(".tmp")
        torch.save(payload, tmp)
        tmp.replace(self.run_dir / BEST_NAME)

    # -- the loop ------------------------------------------------------------

    def run(self, resume: bool = False, max_epochs_total: int | None = None) -> Path:
        """Execute all stages; returns the final checkpoint path."""
        if self.deterministic:
            torch.set_num_threads(1)
            torch.use_deterministic_algorithms(True)
            if not resume:
                torch.manual_seed(self.cfg.seed)
        if resume:
            self.load_checkpoint()
        done = 0
        while self.stage_index < len(self.stages):
            stage = self.stages[self.stage_index]
            if self._optimizer is None:
                self._make_stage_optimizer(stage)
                self._invalidate_caches()
            epochs = self.cfg.epochs_for(stage)
            while self.epoch < epochs:
                self._run_epoch(stage)
                self.epoch += 1
                is_val = self.epoch % self.cfg.val_interval == 0 or self.epoch == epochs
                if is_val:
                    val_loss, val_gpe = self._validation(stage)
                    self._log_row(step=self.global_step, stage=stage, epoch=self.epoch,
                                  loss="", lr=self._scheduler.get_last_lr()[0],
                                  val_loss=f"{val_loss:.6g}",
                                  val_gpe="" if math.isnan(val_gpe) else f"{val_gpe:.6g}")
                    if stage == self.stages[-1] and not math.isnan(val_gpe) \
                            and val_gpe < self.best_val_gpe:
                        self.best_val_gpe = val_gpe
                        self._save_best(val_gpe)
                self.save_checkpoint()
                done += 1
                if max_epochs_total is not None and done >= max_epochs_total:
                    return self.run_dir / CHECKPOINT_NAME
            self.stage_index += 1
            self.epoch = 0
            self._optimizer = None
            self._scheduler = None
            self.save_checkpoint()
        return self.run_dir / CHECKPOINT_NAME

    def _run_epoch(self, stage: str) -> None:
        self._apply_train_modes(stage)
        batch = self.cfg.fusion_batch_size if stage == "fusion" else self.cfg.batch_size
        order = self.rng.permutation(len(self.train_sweeps))
        for start in range(0, len(order), batch):
            sweep_ids = order[start:start + batch]
            self._optimizer.zero_grad()
            loss = self._stage_loss(stage, sweep_ids)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at stage {stage}, step {self.global_step}, "
                    f"lr {self._scheduler.get_last_lr()[0]:.3g}")
            loss.backward()
            self._optimizer.step()
            self._scheduler.step()
            self.global_step += 1
            self._log_row(step=self.global_step, stage=stage, epoch=self.epoch,
                          loss=f"{value:.6g}", lr=f"{self._scheduler.get_last_lr()[0]:.6g}")


def train_model(model, dataset, train_cfg, run_dir, resume=False,
                deterministic=True) -> Path:
    """Convenience wrapper: build a Trainer and run the full schedule."""
    trainer = Trainer(model, dataset, train_cfg, run_dir, deterministic=deterministic)
    return trainer.run(resume=resume)


def load_model_for_eval(checkpoint_path, model_cfg: networks.ModelConfig,
                        prefer_best: bool = True) -> networks.DualTrackModel:
    """Rebuild a model from a run directory or checkpoint file."""
    path = Path(checkpoint_path)
    if path.is_dir():
        best = path / BEST_NAME
        path = best if prefer_best and best.is_file() else path / CHECKPOINT_NAME
    if not path.is_file():
        raise CheckpointError(f"no checkpoint at {path}")
    payload = torch.load(path, weights_only=False)
    if payload["manifest"].get("model_config") != networks.config_hash(model_cfg):
        raise CheckpointError("checkpoint was written for a different model config")
    model = networks.build_model(model_cfg)
    model.load_state_dict(payload["model"])
    model.eval()
    return model


def run_ablation(dataset: data.SweepDataset, out_dir, train_cfg: TrainingConfig,
                 model_cfgs: dict | None = None, deterministic: bool = True) -> dict:
    """Train and test each variant under identical settings.

    Returns {variant: {"gpe_mm": ..., "lpe_um": ..., "fdr_percent": ...,
    "max_drift_mm": ...}} of test-split means, and writes ablation.json.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if model_cfgs is None:
        model_cfgs = {v: networks.desk_model_config(v) for v in networks.VARIANTS}
    test_sweeps = list(dataset.sweeps("test"))
    results = {}
    for variant, mcfg in model_cfgs.items():
        if deterministic:
            set_determinism(train_cfg.seed)
        model = networks.build_model(mcfg)
        run_dir = out_dir / variant
        train_model(model, dataset, train_cfg, run_dir, deterministic=deterministic)
        model = load_model_for_eval(run_dir, mcfg)
        reports = evaluate_model(model, test_sweeps, train_cfg)
        results[variant] = {
            "gpe_mm": float(np.mean([r.gpe_mm for r in reports])),
            "lpe_um": float(np.mean([r.lpe_um for r in reports])),
            "fdr_percent": float(np.mean([r.fdr_percent for r in reports])),
            "max_drift_mm": float(np.mean([r.max_drift_mm for r in reports])),
        }
    (out_dir / "ablation.json").write_text(json.dumps(results, indent=1))
    return results
