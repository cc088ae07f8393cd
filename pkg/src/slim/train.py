"""Pre-training orchestration: batch assembly, schedules, optimization, EMA.

Every stochastic choice in the data pipeline (view intervals, augmentations,
masks) is drawn from a stream keyed by (seed, epoch, dataset index), so runs
are reproducible regardless of worker count, and resumed runs replay the
exact ordering of an uninterrupted one.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
import torch
import torch.nn.functional as F

from .augment import AugConfig, augment_sequence
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, TrainConfig
from .data import LabeledDataset, SkeletonSequence, SkeletonTopology
from .errors import NumericError, ValidationError
from .losses import (
    DistillConfig,
    LossParts,
    ema_update,
    glcl_loss,
    mfm_loss,
    koleo_loss,
    sinkhorn_center,
    total_loss,
)
from .masking import MaskConfig, TokenGrid, generate_mask
from .model import SlimNet, make_teacher
from .views import ViewConfig, make_view_set

METRIC_KEYS = ("step", "mfm", "glcl", "koleo", "total", "tau", "lr")


# ---------------------------------------------------------------------------
# Schedules


def lr_schedule(step: int, steps_per_epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to base_lr, then cosine decay to final_lr."""
    if step < 0:
        raise ValidationError("step must be >= 0")
    total = cfg.epochs * steps_per_epoch
    warmup = cfg.warmup_epochs * steps_per_epoch
    if warmup > 0 and step < warmup:
        return cfg.base_lr * step / warmup
    span = max(1, total - 1 - warmup)
    t = min(1.0, (step - warmup) / span)
    return cfg.final_lr + 0.5 * (cfg.base_lr - cfg.final_lr) * (1.0 + math.cos(math.pi * t))


def tau_schedule(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Teacher momentum ramp from tau_start to tau_end over the whole run."""
    t = min(1.0, step / max(1, total_steps - 1))
    if cfg.tau_ramp == "linear":
        return cfg.tau_start + (cfg.tau_end - cfg.tau_start) * t
    return cfg.tau_start + (cfg.tau_end - cfg.tau_start) * 0.5 * (1.0 - math.cos(math.pi * t))


# ---------------------------------------------------------------------------
# View slots and the per-sample data pipeline


class SlotSpec(NamedTuple):
    name: str
    frames: int
    anchor: int  # 1 or 2; for globals, the anchor they define
    is_global: bool


def view_slots(cfg: ViewConfig) -> list[SlotSpec]:
    slots = [
        SlotSpec("g1", cfg.global_frames, 1, True),
        SlotSpec("g2", cfg.global_frames, 2, True),
    ]
    for anchor in (1, 2):
        for frames, _, _ in cfg.local_specs:
            for crop in range(cfg.crops_per_spec):
                slots.append(SlotSpec(f"a{anchor}.l{frames}.{crop}", frames, anchor, False))
    return slots


def prepare_sample(
    coords: np.ndarray,
    topo: SkeletonTopology,
    view_cfg: ViewConfig,
    aug_cfg: AugConfig,
    mask_cfg: MaskConfig,
    patch_frames: int,
    stream_key: tuple[int, int, int],
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views, augmentations, and masks for one sample, in canonical slot order.

    Returns one (frames x joints x 3 float32, temporal-tokens x joints bool)
    pair per slot. Unmasked views carry an all-false grid.
    """
    rng = np.random.default_rng(stream_key)
    vs = make_view_set(SkeletonSequence(coords), rng, view_cfg)
    ordered = [vs.global_1, vs.global_2, *vs.locals_1, *vs.locals_2]
    out = []
    for slot, view in zip(view_slots(view_cfg), ordered):
        seq = augment_sequence(view.sequence, topo, aug_cfg, rng)
        grid = TokenGrid(slot.frames // patch_frames, topo.num_joints)
        p = mask_cfg.p_mask_global if slot.is_global else mask_cfg.p_mask_local
        if rng.random() < p:
            mask = generate_mask(grid, topo, mask_cfg, rng).grid
        else:
            mask = np.zeros((grid.temporal, grid.joints), dtype=bool)
        out.append((seq.coords.astype(np.float32), mask))
    return out


def _prepare_task(args):
    return prepare_sample(*args)


class Batch(NamedTuple):
    views: dict[str, torch.Tensor]  # slot name -> (B, T, J, 3)
    masks: dict[str, torch.Tensor]  # slot name -> (B, T', J') bool


# ---------------------------------------------------------------------------
# Trainer


@dataclass(eq=False)
class TrainState:
    student: SlimNet
    teacher: SlimNet
    optimizer: torch.optim.Optimizer
    step: int
    epoch: int
    numpy_rng: np.random.Generator


def param_groups(model: SlimNet, weight_decay: float) -> list[dict]:
    """Decoupled weight decay on weight matrices only; norms, biases, and all
    learnable tokens are exempt."""
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        if p.ndim <= 1 or name.endswith(".bias") or "token" in name:
            no_decay.append(p)
        else:
            decay.append(p)
    return [
        {"params": decay, "weight_decay": weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]


class Trainer:
    def __init__(self, dataset: LabeledDataset, cfg: RunConfig):
        if len(dataset) == 0:
            raise ValidationError("dataset is empty")
        if dataset.topology.num_joints != cfg.model.joints:
            raise ValidationError("dataset topology does not match model joint count")
        if cfg.model.patch_joints != 1:
            raise ValidationError("tube masking requires joint patch size 1")
        self.dataset = dataset
        self.cfg = cfg
        self.slots = view_slots(cfg.views)

        torch.manual_seed(cfg.train.seed)
        self.student = SlimNet(cfg.model)
        self.teacher = make_teacher(self.student)
        self.optimizer = torch.optim.AdamW(
            param_groups(self.student, cfg.train.weight_decay),
            lr=cfg.train.base_lr,
            betas=(cfg.train.beta1, cfg.train.beta2),
            eps=cfg.train.adam_eps,
        )
        self.step = 0
        self.epoch = 0
        self.numpy_rng = np.random.default_rng(cfg.train.seed)
        self.steps_per_epoch = math.ceil(len(dataset) / cfg.train.batch_size)
        self.total_steps = cfg.train.epochs * self.steps_per_epoch
        self._executor: ProcessPoolExecutor | None = None

    # -- data pipeline ------------------------------------------------------

    def _executor_or_none(self):
        if self.cfg.train.workers > 1 and self._executor is None:
            self._executor = ProcessPoolExecutor(max_workers=self.cfg.train.workers)
        return self._executor

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def epoch_order(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng([self.cfg.train.seed, epoch])
        return rng.permutation(len(self.dataset))

    def assemble_batch(self, epoch: int, indices: np.ndarray) -> Batch:
        args = [
            (
                self.dataset.sequences[i].coords,
                self.dataset.topology,
                self.cfg.views,
                self.cfg.augment,
                self.cfg.mask,
                self.cfg.model.patch_frames,
                (self.cfg.train.seed, epoch, int(i)),
            )
            for i in indices
        ]
        pool = self._executor_or_none()
        if pool is not None:
            prepared = list(pool.map(_prepare_task, args))
        else:
            prepared = [prepare_sample(*a) for a in args]

        views, masks = {}, {}
        for si, slot in enumerate(self.slots):
            views[slot.name] = torch.from_numpy(np.stack([p[si][0] for p in prepared]))
            masks[slot.name] = torch.from_numpy(np.stack([p[si][1] for p in prepared]))
        return Batch(views=views, masks=masks)

    # -- one optimization step ----------------------------------------------

    def _student_forwards(self, batch: Batch) -> dict:
        """One forward per view resolution: same-shape slots share a batch.

        Patch-token logits are only produced where they feed the masked
        prediction loss, i.e. for the global views.
        """
        by_frames: dict[int, list[SlotSpec]] = {}
        for slot in self.slots:
            by_frames.setdefault(slot.frames, []).append(slot)
        out = {}
        for slots in by_frames.values():
            x = torch.cat([batch.views[s.name] for s in slots])
            m = torch.cat([batch.masks[s.name] for s in slots])
            res = self.student(x, mask=m, patch_head=any(s.is_global for s in slots))
            b = batch.views[slots[0].name].shape[0]
            for i, s in enumerate(slots):
                sl = slice(i * b, (i + 1) * b)
                out[s.name] = type(res)(
                    res.cls_logits[sl],
                    res.patch_logits[sl] if res.patch_logits is not None else None,
                    res.cls_embed[sl],
                )
        return out

    def train_step(self, batch: Batch) -> dict:
        cfg = self.cfg
        dcfg: DistillConfig = cfg.distill
        st = dcfg.student_temp

        with torch.no_grad():
            b = batch.views["g1"].shape[0]
            both = self.teacher(torch.cat([batch.views["g1"], batch.views["g2"]]))
            t_cls, t_patch = {}, {}
            for i, g in enumerate(("g1", "g2")):
                cls_logits = both.cls_logits[i * b : (i + 1) * b]
                patch_logits = both.patch_logits[i * b : (i + 1) * b]
                t_cls[g] = sinkhorn_center(cls_logits, dcfg.teacher_temp, dcfg.sinkhorn_iters)
                _, n, k = patch_logits.shape
                flat = sinkhorn_center(
                    patch_logits.reshape(b * n, k), dcfg.teacher_temp, dcfg.sinkhorn_iters
                )
                t_patch[g] = flat.reshape(b, n, k)

        student_out = self._student_forwards(batch)
        if dcfg.glcl_global_unmasked:
            contrast_globals = {
                g: self.student(batch.views[g], patch_head=False) for g in ("g1", "g2")
            }
        else:
            contrast_globals = {g: student_out[g] for g in ("g1", "g2")}

        parts = LossParts(mfm=[], glcl=[], koleo=[])
        for anchor, other in (("g1", "g2"), ("g2", "g1")):
            anchor_id = 1 if anchor == "g1" else 2
            mask = batch.masks[anchor]
            if bool(mask.any()):
                parts.mfm.append(
                    mfm_loss(
                        t_patch[anchor],
                        F.log_softmax(student_out[anchor].patch_logits / st, dim=-1),
                        mask,
                        reduction=dcfg.mfm_reduction,
                    )
                )
            contrast = [contrast_globals[other].cls_logits]
            contrast += [
                student_out[slot.name].cls_logits
                for slot in self.slots
                if not slot.is_global and slot.anchor == anchor_id
            ]
            parts.glcl.append(
                glcl_loss(
                    t_cls[anchor],
                    [F.log_softmax(c / st, dim=-1) for c in contrast],
                    reduction=dcfg.glcl_reduction,
                )
            )

        if not parts.mfm:
            parts.mfm.append(torch.zeros((), dtype=torch.float32))
        if dcfg.koleo_weight > 0:
            for g in ("g1", "g2"):
                feats = (
                    contrast_globals[g].cls_embed
                    if dcfg.koleo_target == "cls"
                    else student_out[g].patch_logits.mean(dim=1)
                )
                if feats.shape[0] >= 2:
                    parts.koleo.append(koleo_loss(feats))

        loss, metrics = total_loss(parts, dcfg)
        if not math.isfinite(metrics["total"]):
            raise NumericError(f"non-finite loss at step {self.step}: {metrics}")

        lr = lr_schedule(self.step, self.steps_per_epoch, cfg.train)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(self.student.parameters(), cfg.train.grad_clip)
        self.optimizer.step()
        self.student.renormalize_prototypes()

        tau = tau_schedule(self.step, self.total_steps, cfg.train)
        ema_update(self.teacher, self.student, tau)

        record = {"step": self.step, **metrics, "tau": tau, "lr": lr}
        self.step += 1
        return {k: record[k] for k in METRIC_KEYS}

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> Path:
        return save_checkpoint(
            path,
            config=self.cfg,
            step=self.step,
            epoch=self.epoch,
            student=self.student,
            teacher=self.teacher,
            optimizer=self.optimizer,
            numpy_rng=self.numpy_rng,
        )

    @classmethod
    def restore(cls, dataset: LabeledDataset, cfg: RunConfig, path: str | Path, force: bool = False):
        data = load_checkpoint(path, expected_config=cfg, force=force)
        trainer = cls(dataset, cfg)
        trainer.student.load_state_dict(data.student_state)
        trainer.teacher.load_state_dict(data.teacher_state)
        if data.optimizer_state is not None:
            trainer.optimizer.load_state_dict(data.optimizer_state)
        trainer.step = data.step
        trainer.epoch = data.epoch
        if data.numpy_rng_state is not None:
            trainer.numpy_rng.bit_generator.state = data.numpy_rng_state
        if data.torch_rng_state is not None:
            torch.set_rng_state(data.torch_rng_state.to(torch.uint8))
        return trainer


# ---------------------------------------------------------------------------
# Full pre-training runs


def _metrics_writer(metrics_path: str | Path | None) -> tuple[Callable[[dict], None], Callable]:
    if metrics_path is None:
        return (lambda rec: print(json.dumps(rec), flush=True)), (lambda: None)
    fh = open(metrics_path, "a")
    return (lambda rec: fh.write(json.dumps(rec) + "\n")), fh.close


def pretrain(
    dataset: LabeledDataset,
    cfg: RunConfig,
    out_dir: str | Path,
    metrics_path: str | Path | None = None,
    resume: str | Path | None = None,
    force: bool = False,
    on_metrics: Callable[[dict], None] | None = None,
) -> Path:
    """Run the full schedule and return the final checkpoint path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        trainer = Trainer.restore(dataset, cfg, resume, force=force)
    else:
        trainer = Trainer(dataset, cfg)

    write, close = _metrics_writer(metrics_path)
    try:
        for epoch in range(trainer.epoch, cfg.train.epochs):
            trainer.epoch = epoch
            order = trainer.epoch_order(epoch)
            for lo in range(0, len(order), cfg.train.batch_size):
                batch = trainer.assemble_batch(epoch, order[lo : lo + cfg.train.batch_size])
                record = trainer.train_step(batch)
                write(record)
                if on_metrics is not None:
                    on_metrics(record)
            trainer.epoch = epoch + 1
            every = cfg.train.checkpoint_every
            if every and (epoch + 1) % every == 0 and epoch + 1 < cfg.train.epochs:
                trainer.save(out_dir / f"checkpoint_ep{epoch + 1:04d}.slim")
        final = trainer.save(out_dir / "checkpoint.slim")
    finally:
        close()
        trainer.close()
    return final
