"""Alternating adversarial optimization with checkpointing and logging.

One training step = ``d_steps_per_g_step`` discriminator updates followed
by one generator update on the same batch. With ``loss.lambda_adv == 0``
training is purely supervised: discriminator updates are skipped and the
generator trajectory is independent of the discriminator entirely.

Batch order is stateless-deterministic: epoch ``e`` uses the permutation
seeded by (seed, e), and step ``s`` consumes slot ``s mod batches_per_epoch``
of it, so resuming from a checkpoint replays the exact schedule.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import AugmentConfig, ImageSample, augment_sample, sample_rng
from .discriminator import DiscriminatorConfig, PatchDiscriminator
from .generator import Generator, GeneratorConfig
from .losses import (
    LossConfig,
    adversarial_generator_term,
    discriminator_loss,
    generator_seg_loss,
)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

# Tag mixed into the shuffle stream so it never collides with the
# per-sample augmentation streams keyed by (seed, epoch, index).
_SHUFFLE_TAG = 0x5F7F


class CheckpointError(Exception):
    pass


@dataclass
class TrainConfig:
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    batch_size: int = 16
    steps: int = 200
    adam_betas: tuple[float, float] = (0.9, 0.999)
    d_steps_per_g_step: int = 1
    seed: int = 0
    checkpoint_dir: str | None = None
    checkpoint_every: int = 0  # 0 = checkpoint only at the end
    augment: bool = True
    loss: LossConfig = field(default_factory=LossConfig)
    model: GeneratorConfig = field(default_factory=GeneratorConfig)
    disc: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    aug: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.d_steps_per_g_step < 1:
            raise ValueError("d_steps_per_g_step must be >= 1")


def train_config_from_dict(d: dict) -> TrainConfig:
    def tup(m: dict) -> dict:
        return {k: tuple(v) if isinstance(v, (list, tuple)) else v for k, v in m.items()}

    d = dict(d)
    return TrainConfig(
        **tup({k: v for k, v in d.items() if k not in ("loss", "model", "disc", "aug")}),
        loss=LossConfig(**d.get("loss", {})),
        model=GeneratorConfig(**tup(d.get("model", {}))),
        disc=DiscriminatorConfig(**tup(d.get("disc", {}))),
        aug=AugmentConfig(**tup(d.get("aug", {}))),
    )


@dataclass
class TrainStep:
    step: int
    seg_loss: float
    adv_term: float
    g_total: float
    d_loss: float
    wall_time: float


class TrainLog:
    """Per-step loss records, serializable to CSV."""

    COLUMNS = ("step", "seg_loss", "adv_term", "g_total", "d_loss", "wall_time")

    def __init__(self):
        self.records: list[TrainStep] = []

    def append(self, record: TrainStep) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise ValueError("steps must be monotonically increasing")
        self.records.append(record)

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write(",".join(self.COLUMNS) + "\n")
            for r in self.records:
                fh.write(
                    f"{r.step},{r.seg_loss:.8f},{r.adv_term:.8f},"
                    f"{r.g_total:.8f},{r.d_loss:.8f},{r.wall_time:.3f}\n"
                )


def samples_to_tensors(samples: list[ImageSample]) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack samples into (B, 3, H, W) image and (B, 1, H, W) mask tensors."""
    images = torch.from_numpy(
        np.stack([s.image.transpose(2, 0, 1) for s in samples]).astype(np.float32)
    )
    masks = torch.from_numpy(
        np.stack([s.mask.transpose(2, 0, 1) for s in samples]).astype(np.float32)
    )
    return images, masks


def config_fingerprint(cfg: TrainConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_models(cfg: TrainConfig) -> tuple[Generator, PatchDiscriminator]:
    """Seeded model construction; same config + seed gives identical weights."""
    torch.manual_seed(cfg.seed)
    return Generator(cfg.model), PatchDiscriminator(cfg.disc)


def train_discriminator_step(
    images: torch.Tensor,
    masks: torch.Tensor,
    generator: Generator,
    discriminator: PatchDiscriminator,
    opt_d: torch.optim.Optimizer,
    loss_cfg: LossConfig,
) -> float:
    """One discriminator update: real pairs toward 1, generated toward 0.

    Generated masks are produced without gradients, so the generator is a
    constant for this step.
    """
    with torch.no_grad():
        fake = generator(images)
    real_patch = discriminator(images, masks)
    fake_patch = discriminator(images, fake)
    loss = discriminator_loss(real_patch, fake_patch, loss_cfg.eps_clip)
    opt_d.zero_grad(set_to_none=True)
    loss.backward()
    opt_d.step()
    return float(loss.detach())


def train_generator_step(
    images: torch.Tensor,
    masks: torch.Tensor,
    generator: Generator,
    discriminator: PatchDiscriminator,
    opt_g: torch.optim.Optimizer,
    loss_cfg: LossConfig,
) -> tuple[float, float]:
    """One generator update on seg_loss + lambda_adv * adversarial term.

    The discriminator's parameters are frozen while the adversarial term is
    evaluated; with lambda_adv == 0 the discriminator is never touched and
    the update equals a plain supervised step.
    """
    pred = generator(images)
    seg = generator_seg_loss(masks, pred, loss_cfg)
    if loss_cfg.lambda_adv > 0:
        for p in discriminator.parameters():
            p.requires_grad_(False)
        try:
            adv = adversarial_generator_term(
                discriminator(images, pred), loss_cfg.eps_clip
            )
        finally:
            for p in discriminator.parameters():
                p.requires_grad_(True)
        total = seg + loss_cfg.lambda_adv * adv
        adv_value = float(adv.detach())
    else:
        total = seg
        adv_value = 0.0
    opt_g.zero_grad(set_to_none=True)
    total.backward()
    opt_g.step()
    return float(seg.detach()), adv_value


def make_checkpoint(
    generator: Generator,
    discriminator: PatchDiscriminator,
    opt_g: torch.optim.Optimizer,
    opt_d: torch.optim.Optimizer,
    step: int,
    cfg: TrainConfig,
) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "fingerprint": config_fingerprint(cfg),
        "step": step,
        "config": asdict(cfg),
        "generator": generator.state_dict(),
        "discriminator": discriminator.state_dict(),
        "opt_g": opt_g.state_dict(),
        "opt_d": opt_d.state_dict(),
    }


def save_checkpoint(state: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(state, path)


def load_checkpoint(path: str | Path, expected_fingerprint: str | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    version = state.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version!r} "
            f"(expected {CHECKPOINT_VERSION})"
        )
    if expected_fingerprint and state.get("fingerprint") != expected_fingerprint:
        logger.warning(
            "checkpoint fingerprint %s does not match expected %s",
            state.get("fingerprint"),
            expected_fingerprint,
        )
    return state


def models_from_checkpoint(state: dict) -> tuple[Generator, PatchDiscriminator, TrainConfig]:
    cfg = train_config_from_dict(state["config"])
    generator = Generator(cfg.model)
    generator.load_state_dict(state["generator"])
    discriminator = PatchDiscriminator(cfg.disc)
    discriminator.load_state_dict(state["discriminator"])
    return generator, discriminator, cfg


def refresh_bn_stats(model: torch.nn.Module, images: torch.Tensor) -> None:
    """Re-estimate batch-norm running statistics from one batch, exactly.

    The slow 0.99 running average keeps norm statistics stale for hundreds
    of steps after short training runs, which skews evaluation-mode
    forwards. This resets every BatchNorm layer and replays ``images``
    once in cumulative-average mode, leaving running stats equal to the
    batch statistics. Weights are untouched.
    """
    bns = [m for m in model.modules() if isinstance(m, torch.nn.BatchNorm2d)]
    saved = [m.momentum for m in bns]
    for m in bns:
        m.reset_running_stats()
        m.momentum = None  # cumulative moving average
    was_training = model.training
    model.train()
    try:
        with torch.no_grad():
            model(images)
    finally:
        model.train(was_training)
        for m, momentum in zip(bns, saved):
            m.momentum = momentum


def make_predict_fn(generator: Generator):
    """Wrap a generator as a numpy (H, W, 3) -> (H, W, 1) predictor."""

    def predict(image: np.ndarray) -> np.ndarray:
        was_training = generator.training
        generator.eval()
        try:
            with torch.no_grad():
                x = torch.from_numpy(
                    np.ascontiguousarray(image.transpose(2, 0, 1))[None].astype(np.float32)
                )
                prob = generator(x)[0].numpy().transpose(1, 2, 0)
        finally:
            generator.train(was_training)
        return prob

    return predict


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, _SHUFFLE_TAG]))
    return rng.permutation(n)


def train(
    cfg: TrainConfig,
    dataset: list[ImageSample],
    resume_from: str | Path | None = None,
) -> tuple[dict, TrainLog]:
    """Run the adversarial loop; returns the final checkpoint state and log.

    Checkpoints go to ``cfg.checkpoint_dir`` (if set) every
    ``cfg.checkpoint_every`` steps and always at the end.
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    generator, discriminator = build_models(cfg)
    opt_g = torch.optim.Adam(generator.parameters(), lr=cfg.lr_g, betas=cfg.adam_betas)
    opt_d = torch.optim.Adam(
        discriminator.parameters(), lr=cfg.lr_d, betas=cfg.adam_betas
    )
    start_step = 0
    if resume_from is not None:
        state = load_checkpoint(resume_from, expected_fingerprint=config_fingerprint(cfg))
        generator.load_state_dict(state["generator"])
        discriminator.load_state_dict(state["discriminator"])
        opt_g.load_state_dict(state["opt_g"])
        opt_d.load_state_dict(state["opt_d"])
        start_step = int(state["step"])

    generator.train()
    discriminator.train()
    n = len(dataset)
    # Drop partial tail batches: single-sample batches break train-mode
    # norm statistics. Datasets smaller than one batch train whole.
    batches_per_epoch = max(1, n // cfg.batch_size)
    log = TrainLog()
    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    t0 = time.perf_counter()

    for step in range(start_step, cfg.steps):
        epoch = step // batches_per_epoch
        slot = step % batches_per_epoch
        order = _epoch_order(cfg.seed, epoch, n)
        indices = order[slot * cfg.batch_size : (slot + 1) * cfg.batch_size]
        batch = [dataset[int(i)] for i in indices]
        if cfg.augment:
            batch = [
                augment_sample(s, cfg.aug, sample_rng(cfg.seed, epoch, int(i)))
                for s, i in zip(batch, indices)
            ]
        images, masks = samples_to_tensors(batch)

        d_loss = 0.0
        if cfg.loss.lambda_adv > 0:
            for _ in range(cfg.d_steps_per_g_step):
                d_loss = train_discriminator_step(
                    images, masks, generator, discriminator, opt_d, cfg.loss
                )
        seg, adv = train_generator_step(
            images, masks, generator, discriminator, opt_g, cfg.loss
        )
        done = step + 1
        log.append(
            TrainStep(
                step=done,
                seg_loss=seg,
                adv_term=adv,
                g_total=seg + cfg.loss.lambda_adv * adv,
                d_loss=d_loss,
                wall_time=time.perf_counter() - t0,
            )
        )
        if (
            ckpt_dir is not None
            and cfg.checkpoint_every > 0
            and done % cfg.checkpoint_every == 0
            and done < cfg.steps
        ):
            save_checkpoint(
                make_checkpoint(generator, discriminator, opt_g, opt_d, done, cfg),
                ckpt_dir / f"checkpoint_step{done:06d}.pt",
            )

    state = make_checkpoint(
        generator, discriminator, opt_g, opt_d, cfg.steps, cfg
    )
    if ckpt_dir is not None:
        save_checkpoint(state, ckpt_dir / "checkpoint_final.pt")
    return state, log
