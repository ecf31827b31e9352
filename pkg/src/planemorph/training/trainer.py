# planemorph/training/trainer.py
"""
Optimization loop for the registration network.
"""
import logging
import math
import os
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, ConfigDict

from planemorph.common.exceptions import DivergenceError, InvalidParameterError, ShapeMismatchError
from planemorph.common.schemas import EpochMetrics, LossWeights, ModelConfig, TrainConfig
from planemorph.common.torch_utils import resolve_device, seed_everything
from planemorph.data.volume import RegistrationPair, volume_to_tensor
from planemorph.io.checkpoint import save_checkpoint
from planemorph.io.jsonio import write_csv
from planemorph.nn.network import RegistrationNet, build_model, predict_field
from planemorph.registration.field_ops import jacobian_stats, warp_labels
from planemorph.registration.objectives import dice_eval, total_loss

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ["epoch", "total", "ncc", "bend", "dice_loss", "val_dice", "val_negjac", "lr"]
METRICS_FILE = "metrics.csv"
FINAL_CHECKPOINT = "final.ckpt"
BEST_CHECKPOINT = "best.ckpt"


class RunArtifacts(BaseModel):
    """Outputs of one training run. Paths are None when no output directory was given."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    model: RegistrationNet
    metrics: pd.DataFrame
    final_checkpoint: Optional[str] = None
    best_checkpoint: Optional[str] = None
    metrics_path: Optional[str] = None
    epoch_checkpoints: List[str] = []
    config: Dict[str, Any]
    n_steps: int
    best_epoch: Optional[int] = None


def split_dataset(dataset: Sequence[RegistrationPair]) -> Tuple[List[RegistrationPair], List[RegistrationPair]]:
    """Training pairs and the validation tail (last floor(0.2 n) pairs, at least one when n >= 2)."""
    n = len(dataset)
    if n == 1:
        logger.warning("Single-pair dataset: the pair is used for both training and validation.")
        return list(dataset), list(dataset)
    n_val = max(1, int(math.floor(0.2 * n)))
    return list(dataset[:n - n_val]), list(dataset[n - n_val:])


def select_supervised(n_train: int, seg_fraction: float, seed: int) -> Set[int]:
    """Indices of training pairs whose Dice term is active, chosen by a seeded permutation."""
    n_sup = int(round(seg_fraction * n_train))
    order = np.random.default_rng(seed).permutation(n_train)
    return {int(i) for i in order[:n_sup]}


class Trainer:
    """
    Trains a registration network with Adam and an epoch-level scheduler.

    Example:
        >>> trainer = Trainer(ModelConfig(stride=2, embed_dim=16), TrainConfig(epochs=5))
        >>> artifacts = trainer.fit(pairs, out_dir="runs/em11")
    """

    def __init__(self, model_cfg: ModelConfig, train_cfg: TrainConfig,
                 loss_weights: Optional[LossWeights] = None,
                 model: Optional[RegistrationNet] = None, device: Optional[str] = None):
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.loss_weights = loss_weights or LossWeights()
        seed_everything(train_cfg.seed)
        self.device = resolve_device(device)
        self.model = (model if model is not None else build_model(model_cfg)).to(self.device)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=train_cfg.lr,
                                          betas=train_cfg.betas, eps=train_cfg.adam_eps)
        self.scheduler = None
        self.global_step = 0

    # --- setup helpers ---

    def _effective_epochs(self, n_train: int) -> int:
        epochs = self.train_cfg.epochs
        if self.train_cfg.max_steps is not None:
            epochs = min(epochs, math.ceil(self.train_cfg.max_steps / n_train))
        return max(1, epochs)

    def _make_scheduler(self, epochs: int):
        kind = self.train_cfg.scheduler
        if kind == "cosine":
            return torch.optim.lr_scheduler.CosineAnnealingLR(self.optimizer, T_max=max(1, epochs - 1),
                                                              eta_min=0.0)
        if kind == "step":
            return torch.optim.lr_scheduler.StepLR(self.optimizer, step_size=self.train_cfg.step_every,
                                                   gamma=self.train_cfg.step_gamma)
        return None

    def _set_phase(self, epoch: int) -> None:
        """Two-phase multires training: path 2 frozen and zeroed for the first k epochs."""
        k = self.train_cfg.multires_phase_epochs
        if not self.model.is_multires or not k:
            return
        solo = epoch <= k
        self.model.solo_path = 1 if solo else None
        for p in self.model.encoder2.parameters():
            p.requires_grad_(not solo)
        if epoch == 1 or epoch == k + 1:
            self.logger.info("Epoch %d: %s.", epoch, "path 1 only (path 2 frozen)" if solo else "joint training")

    # --- one step / one epoch ---

    def _step(self, pair: RegistrationPair, supervised: bool, epoch: int) -> Dict[str, float]:
        param = next(self.model.parameters())
        device, dtype = param.device, param.dtype
        fixed = volume_to_tensor(pair.fixed, device, dtype)
        moving = volume_to_tensor(pair.moving, device, dtype)
        seg_args: Dict[str, Any] = {}
        if supervised:
            seg_args = {
                "fixed_seg": volume_to_tensor(pair.seg_fixed, device),
                "moving_seg": volume_to_tensor(pair.seg_moving, device),
                "n_labels": pair.n_labels,
            }

        flow = self.model(fixed, moving)
        loss, components = total_loss(fixed, moving, flow, self.loss_weights, **seg_args)
        self.global_step += 1
        values = {k: float(v.detach().item()) for k, v in components.items()}
        values["total"] = float(loss.detach().item())
        if not math.isfinite(values["total"]):
            raise DivergenceError(f"Non-finite loss on pair '{pair.name}'", epoch=epoch,
                                  step=self.global_step, components=values)

        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        self.optimizer.step()
        return values

    def validate(self, pairs: Sequence[RegistrationPair]) -> Tuple[float, float]:
        """Mean hard Dice (nan without label maps) and mean %|J|<=0 over `pairs`."""
        dices, negs = [], []
        for pair in pairs:
            field = predict_field(self.model, pair.fixed, pair.moving)
            negs.append(jacobian_stats(field).neg_fraction)
            if pair.has_segs:
                _, dice = dice_eval(pair.seg_fixed, warp_labels(pair.seg_moving, field), pair.n_labels)
                dices.append(dice)
        val_dice = float(np.mean(dices)) if dices else float("nan")
        val_neg = float(np.mean(negs)) if negs else float("nan")
        return val_dice, val_neg

    # --- main loop ---

    def fit(self, dataset: Sequence[RegistrationPair], out_dir: Optional[str] = None) -> RunArtifacts:
        """
        Runs the training loop.

        Args:
            dataset (Sequence[RegistrationPair]): Pairs; the last 20% serve as validation.
            out_dir (Optional[str]): Directory for metrics.csv and checkpoints.

        Returns:
            RunArtifacts: Trained model, per-epoch metrics and artifact paths.

        Raises:
            InvalidParameterError: If the dataset is empty.
            ShapeMismatchError: If pairs have different grid shapes.
            DivergenceError: If a loss becomes non-finite.
        """
        if not dataset:
            raise InvalidParameterError("training dataset is empty", parameter="dataset")
        shapes = {p.fixed.shape for p in dataset}
        if len(shapes) > 1:
            raise ShapeMismatchError(f"dataset mixes grid shapes {sorted(shapes)}", parameter="dataset")
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)

        cfg = self.train_cfg
        train_pairs, val_pairs = split_dataset(dataset)
        eligible = [i for i, p in enumerate(train_pairs) if p.has_segs]
        supervised = {eligible[i] for i in select_supervised(len(eligible), cfg.seg_fraction, cfg.seed)}
        epochs = self._effective_epochs(len(train_pairs))
        self.scheduler = self._make_scheduler(epochs)
        order_rng = np.random.default_rng(cfg.seed)
        self.logger.info("Training: %d train / %d val pairs, %d supervised, %d epochs, lr=%g, scheduler=%s, "
                         "device=%s.", len(train_pairs), len(val_pairs), len(supervised), epochs, cfg.lr,
                         cfg.scheduler, self.device)

        rows: List[Dict[str, float]] = []
        epoch_ckpts: List[str] = []
        best_score, best_epoch, best_path = -math.inf, None, None
        try:
            for epoch in range(1, epochs + 1):
                self._set_phase(epoch)
                self.model.train()
                lr = self.optimizer.param_groups[0]["lr"]
                step_values: List[Dict[str, float]] = []
                for idx in order_rng.permutation(len(train_pairs)):
                    if cfg.max_steps is not None and self.global_step >= cfg.max_steps:
                        break
                    step_values.append(self._step(train_pairs[int(idx)], int(idx) in supervised, epoch))
                if self.scheduler is not None:
                    self.scheduler.step()

                val_dice, val_neg = self.validate(val_pairs)
                row = EpochMetrics(
                    epoch=epoch,
                    total=_mean_of(step_values, "total"),
                    ncc=_mean_of(step_values, "ncc"),
                    bend=_mean_of(step_values, "bend"),
                    dice_loss=_mean_of(step_values, "dice_loss"),
                    val_dice=val_dice,
                    val_negjac=val_neg,
                    lr=lr,
                )
                rows.append(row.model_dump())
                self.logger.info("Epoch %d/%d: total=%.6f ncc=%.6f bend=%.6f dice_loss=%.6f "
                                 "val_dice=%.4f val_negjac=%.4f lr=%.3e",
                                 epoch, epochs, row.total, row.ncc, row.bend, row.dice_loss,
                                 row.val_dice, row.val_negjac, lr)

                # Validation Dice when available, otherwise the training loss.
                score = val_dice if math.isfinite(val_dice) else -row.total
                if out_dir and score > best_score:
                    best_path = save_checkpoint(self.model, os.path.join(out_dir, BEST_CHECKPOINT),
                                                metadata={"epoch": epoch, "score": score})
                if score > best_score:
                    best_score, best_epoch = score, epoch
                if out_dir and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                    epoch_ckpts.append(save_checkpoint(
                        self.model, os.path.join(out_dir, f"epoch_{epoch:04d}.ckpt"),
                        metadata={"epoch": epoch, "step": self.global_step}))
                if cfg.max_steps is not None and self.global_step >= cfg.max_steps:
                    break
        except DivergenceError:
            self.logger.error("Training diverged at step %d.", self.global_step)
            if out_dir:
                write_csv(os.path.join(out_dir, METRICS_FILE), _metrics_frame(rows))
            raise
        finally:
            self.model.solo_path = None
            for p in self.model.parameters():
                p.requires_grad_(True)

        metrics = _metrics_frame(rows)
        final_path = metrics_path = None
        if out_dir:
            metrics_path = os.path.join(out_dir, METRICS_FILE)
            write_csv(metrics_path, metrics)
            final_path = save_checkpoint(self.model, os.path.join(out_dir, FINAL_CHECKPOINT),
                                         metadata={"epoch": len(rows), "step": self.global_step})
        self.logger.info("Training finished after %d steps (%d epochs); best epoch %s.",
                         self.global_step, len(rows), best_epoch)
        return RunArtifacts(
            model=self.model,
            metrics=metrics,
            final_checkpoint=final_path,
            best_checkpoint=best_path,
            metrics_path=metrics_path,
            epoch_checkpoints=epoch_ckpts,
            config={"model": self.model_cfg.model_dump(mode="json"),
                    "train": cfg.model_dump(mode="json"),
                    "loss": self.loss_weights.model_dump(mode="json")},
            n_steps=self.global_step,
            best_epoch=best_epoch,
        )


def _mean_of(values: List[Dict[str, float]], key: str) -> float:
    present = [v[key] for v in values if key in v]
    return float(np.mean(present)) if present else float("nan")


def _metrics_frame(rows: List[Dict[str, float]]) -> pd.DataFrame:
    frame = pd.DataFrame(rows, columns=METRICS_COLUMNS)
    frame["epoch"] = frame["epoch"].astype(int)
    return frame


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, dataset: Sequence[RegistrationPair],
          loss_weights: Optional[LossWeights] = None, out_dir: Optional[str] = None) -> RunArtifacts:
    """Builds a model from `model_cfg` and trains it; see `Trainer.fit`."""
    return Trainer(model_cfg, train_cfg, loss_weights).fit(dataset, out_dir=out_dir)
