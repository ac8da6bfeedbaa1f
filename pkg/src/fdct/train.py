"""Training loop: milestone learning-rate schedule, AdamW steps, periodic
masked evaluation, best/last checkpointing, and the ablation harness.

Runs are deterministic given the config seed in single-worker mode: batch
order depends only on (seed, epoch) and the model has no stochastic layers,
so resuming from a checkpoint reproduces the uninterrupted run.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .core import ConfigError, Sample, ValidRange
from .data import BatchIterator
from .losses import LossBundle, LossConfig, total_loss
from .metrics import MetricsReport, aggregate, pixel_stats
from .model import FdctConfig, FdctNetwork, complete_depth, count_parameters

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class NonFiniteLossError(RuntimeError):
    """A training step produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 1e-3
    milestone_epochs: tuple[int, ...] = (5, 15, 25, 35)
    lr_factor: float = 0.5
    epochs: int = 40
    batch_size: int = 32
    weight_decay: float = 0.0
    seed: int = 0
    eval_every: int = 5
    grad_clip: float | None = None

    def __post_init__(self):
        ms = tuple(self.milestone_epochs)
        object.__setattr__(self, "milestone_epochs", ms)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError("milestone_epochs must be strictly increasing")
        if any(m >= self.epochs for m in ms):
            raise ConfigError("every milestone must be < epochs")
        if not 0.0 < self.lr_factor < 1.0:
            raise ConfigError("lr_factor must be in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.initial_lr <= 0:
            raise ConfigError("epochs, batch_size, initial_lr must be positive")


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for a 0-indexed epoch; each milestone applies from the
    start of that epoch."""
    if not 0 <= epoch < cfg.epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {cfg.epochs})")
    halvings = sum(1 for m in cfg.milestone_epochs if m <= epoch)
    return cfg.initial_lr * cfg.lr_factor**halvings


def samples_to_tensors(batch: list[Sample], dtype=torch.float32):
    """Stack Samples into (rgb, raw, gt, mask) tensors of shape (B, C, H, W)."""
    rgb = torch.stack(
        [torch.from_numpy(np.ascontiguousarray(s.rgb.values.transpose(2, 0, 1))) for s in batch]
    ).to(dtype)
    raw = torch.stack([torch.from_numpy(s.raw_depth.values[None]) for s in batch]).to(dtype)
    gt = torch.stack([torch.from_numpy(s.gt_depth.values[None]) for s in batch]).to(dtype)
    mask = torch.stack([torch.from_numpy(s.mask.values[None]) for s in batch])
    return rgb, raw, gt, mask


def make_optimizer(net: FdctNetwork, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        net.parameters(),
        lr=cfg.initial_lr,
        betas=(0.9, 0.999),
        eps=1e-8,
        weight_decay=cfg.weight_decay,
    )


def train_step(
    net: FdctNetwork,
    batch: list[Sample],
    loss_cfg: LossConfig,
    lr: float,
    optimizer: torch.optim.Optimizer,
    valid_range: ValidRange | None = None,
    grad_clip: float | None = None,
    batch_id: str = "?",
) -> tuple[LossBundle, float]:
    """One forward/backward/update; returns the pre-update loss and the global
    gradient norm. Batches with no valid pixel skip the update."""
    for group in optimizer.param_groups:
        group["lr"] = lr
    rgb, raw, gt, mask = samples_to_tensors(batch)
    pred = net(rgb, raw)
    bundle = total_loss(pred, gt, mask, valid_range, loss_cfg)
    if not np.isfinite(bundle.total):
        raise NonFiniteLossError(f"non-finite loss on batch {batch_id}")
    grad_norm = 0.0
    if bundle.active:
        optimizer.zero_grad()
        bundle.total_tensor.backward()
        if grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(net.parameters(), grad_clip)
        grad_norm = float(
            torch.sqrt(
                sum((p.grad**2).sum() for p in net.parameters() if p.grad is not None)
            )
        )
        optimizer.step()
    return bundle, grad_norm


def evaluate(
    net: FdctNetwork,
    data,
    valid_range: ValidRange | None = None,
    target_size: tuple[int, int] | None = None,
    workers: int = 1,
) -> MetricsReport:
    """Pooled masked metrics over a dataset; predictions clamped to
    [0, depth_max] before scoring."""
    samples = _materialize(data, target_size, workers)
    stats = []
    for s in samples:
        pred = complete_depth(net, s.rgb, s.raw_depth)
        stats.append(pixel_stats(pred, s.gt_depth, s.mask, valid_range))
    return aggregate(stats)


def _materialize(data, target_size, workers: int = 1):
    from .data import DatasetIndex, get_sample

    if isinstance(data, DatasetIndex):
        if workers > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(workers) as pool:
                return list(
                    pool.map(lambda i: get_sample(data, i, target_size), range(len(data)))
                )
        return [get_sample(data, i, target_size) for i in range(len(data))]
    return list(data)


@dataclass
class Checkpoint:
    model_config: FdctConfig
    state_dict: dict
    optimizer_state: dict
    epoch: int
    rng_state: dict
    history: list = field(default_factory=list)


def save_checkpoint(ckpt: Checkpoint, path):
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": ckpt.model_config.as_dict(),
        "state_dict": ckpt.state_dict,
        "optimizer_state": ckpt.optimizer_state,
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "history": ckpt.history,
    }
    torch.save(payload, str(path))


def load_checkpoint(path) -> Checkpoint:
    payload = torch.load(str(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    return Checkpoint(
        model_config=FdctConfig(**payload["model_config"]),
        state_dict=payload["state_dict"],
        optimizer_state=payload["optimizer_state"],
        epoch=payload["epoch"],
        rng_state=payload["rng_state"],
        history=payload.get("history", []),
    )


def restore_network(ckpt: Checkpoint) -> FdctNetwork:
    """Rebuild the network from a checkpoint, verifying parameter-name
    completeness against a fresh construction of the stored config."""
    net = FdctNetwork(ckpt.model_config, seed=0)
    expected = set(net.state_dict().keys())
    got = set(ckpt.state_dict.keys())
    if expected != got:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        raise ValueError(f"checkpoint parameters mismatch: missing={missing} extra={extra}")
    net.load_state_dict(ckpt.state_dict)
    return net


def _snapshot(net, optimizer, epoch, history) -> Checkpoint:
    return Checkpoint(
        model_config=net.config,
        state_dict={k: v.clone() for k, v in net.state_dict().items()},
        optimizer_state=optimizer.state_dict(),
        epoch=epoch,
        rng_state={"torch": torch.get_rng_state()},
        history=list(history),
    )


def fit(
    net: FdctNetwork,
    train_data,
    val_data,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig | None = None,
    out_dir=None,
    valid_range: ValidRange | None = None,
    target_size: tuple[int, int] | None = None,
    resume_from: Checkpoint | None = None,
    step_callback=None,
) -> tuple[Checkpoint, list]:
    """Run the full schedule; returns the final checkpoint and history.

    Writes best-by-RMSE and last checkpoints plus history.json and a JSONL
    step log when out_dir is given. `resume_from` restores parameters,
    optimizer moments, and the epoch cursor.
    """
    loss_cfg = loss_cfg if loss_cfg is not None else LossConfig()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    optimizer = make_optimizer(net, train_cfg)
    history = []
    start_epoch = 0
    if resume_from is not None:
        net.load_state_dict(resume_from.state_dict)
        optimizer.load_state_dict(resume_from.optimizer_state)
        history = list(resume_from.history)
        start_epoch = resume_from.epoch

    batches = BatchIterator(
        train_data, train_cfg.batch_size, shuffle_seed=train_cfg.seed, target_size=target_size
    )
    log_file = open(out_dir / "log.jsonl", "a") if out_dir is not None else None
    best_rmse = min(
        (h["val"]["rmse"] for h in history if h.get("val") and h["val"]["rmse"] is not None),
        default=float("inf"),
    )

    try:
        for epoch in range(start_epoch, train_cfg.epochs):
            lr = lr_at(train_cfg, epoch)
            epoch_losses = []
            t0 = time.time()
            for step, batch in enumerate(batches.epoch(epoch)):
                batch_id = f"{epoch}:{step}"
                bundle, grad_norm = train_step(
                    net, batch, loss_cfg, lr, optimizer,
                    valid_range=valid_range, grad_clip=train_cfg.grad_clip,
                    batch_id=batch_id,
                )
                epoch_losses.append(bundle.total)
                record = {
                    "epoch": epoch,
                    "step": step,
                    "lr": lr,
                    "total": bundle.total,
                    "huber": bundle.huber,
                    "ssim_term": bundle.ssim_term,
                    "smooth": bundle.smooth,
                    "grad_norm": grad_norm,
                    "valid_pixels": bundle.valid_pixel_count,
                }
                if log_file is not None:
                    log_file.write(json.dumps(record) + "\n")
                if step_callback is not None:
                    step_callback(record)

            entry = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": float(np.mean(epoch_losses)) if epoch_losses else None,
                "seconds": time.time() - t0,
                "val": None,
            }
            last_epoch = epoch == train_cfg.epochs - 1
            if val_data is not None and (
                (epoch + 1) % train_cfg.eval_every == 0 or last_epoch
            ):
                report = evaluate(net, val_data, valid_range, target_size)
                entry["val"] = report.as_dict()
                if report.defined and report.rmse < best_rmse:
                    best_rmse = report.rmse
                    if out_dir is not None:
                        save_checkpoint(
                            _snapshot(net, optimizer, epoch + 1, history + [entry]),
                            out_dir / "best.ckpt",
                        )
            history.append(entry)
            log.info(
                "epoch %d lr %.2e loss %s", epoch, lr,
                f"{entry['train_loss']:.5f}" if entry["train_loss"] is not None else "n/a",
            )
    finally:
        if log_file is not None:
            log_file.close()

    final = _snapshot(net, optimizer, train_cfg.epochs, history)
    if out_dir is not None:
        save_checkpoint(final, out_dir / "last.ckpt")
        (out_dir / "history.json").write_text(json.dumps(history, indent=2))
    return final, history


@dataclass(frozen=True)
class AblationVariant:
    name: str
    model: FdctConfig
    loss: LossConfig = LossConfig()


def run_ablation(
    variants: list[AblationVariant],
    train_data,
    val_data,
    train_cfg: TrainConfig,
    valid_range: ValidRange | None = None,
    target_size: tuple[int, int] | None = None,
) -> list[dict]:
    """Train every variant under identical seeds and data; one result row per
    variant. A failing variant is recorded and the grid continues."""
    rows = []
    for variant in variants:
        row = {"name": variant.name, "status": "ok"}
        try:
            net = FdctNetwork(variant.model, seed=train_cfg.seed)
            row["parameters"] = count_parameters(net)
            fit(net, train_data, val_data, train_cfg, variant.loss,
                valid_range=valid_range, target_size=target_size)
            report = evaluate(net, val_data, valid_range, target_size)
            row.update(report.as_dict())
        except Exception as exc:  # noqa: BLE001 - grid must survive bad variants
            log.warning("variant %s failed: %s", variant.name, exc)
            row["status"] = f"failed: {exc}"
        rows.append(row)
    return rows


def format_ablation_table(rows: list[dict]) -> str:
    header = (
        f"{'variant':<24} {'params':>10} {MetricsReport.header()}  status"
    )
    lines = [header]
    for row in rows:
        if row["status"] == "ok":
            vals = " ".join(
                f"{row[k]:8.4f}" if k in ("rmse", "rel", "mae") else f"{row[k]:8.2f}"
                for k in ("rmse", "rel", "mae", "delta_105", "delta_110", "delta_125")
            )
            lines.append(f"{row['name']:<24} {row['parameters']:>10,} {vals}  ok")
        else:
            params = row.get("parameters", "-")
            lines.append(f"{row['name']:<24} {params!s:>10} {row['status']}")
    return "\n".join(lines)
