"""Adversarial training loop, ablation ladder, checkpoints, and logging.

Ablation variants stack the architecture up one component at a time:

======  =================  ================  ===============
name    channel attention  contextual gates  objective
======  =================  ================  ===============
base    no                 no                L1 only
ca      yes                no                L1 only
cg      yes                yes               L1 only
full    yes                yes               multi-term + GAN
======  =================  ================  ===============

The discriminator exists (and trains) only for the ``full`` variant.
"""

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .blursynth import SynthConfig
from .data import PatchSpec, TrainingStream
from .losses import (LossBreakdown, LossWeights, discriminator_loss,
                     make_feature_extractor, reconstruction_loss, total_loss)
from .models import (ConditionalDiscriminator, DarkDeblurNet,
                     DiscriminatorConfig, GeneratorConfig, count_parameters)

CHECKPOINT_FORMAT = "darkdeblur-ckpt-v1"
ADAM_EPS = 1e-8

ABLATIONS = {
    "base": dict(channel_attention=False, contextual_gates=False, multi_term=False),
    "ca": dict(channel_attention=True, contextual_gates=False, multi_term=False),
    "cg": dict(channel_attention=True, contextual_gates=True, multi_term=False),
    "full": dict(channel_attention=True, contextual_gates=True, multi_term=True),
}


@dataclass
class TrainConfig:
    """Optimizer, schedule, and component configuration for one run."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    batch_size: int = 16
    total_steps: int = 100_000
    ablation: str = "full"
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 50
    grad_clip_norm: float | None = None
    perceptual_extractor: str = "vgg19"
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    synth: SynthConfig = field(default_factory=SynthConfig)
    patch: PatchSpec = field(default_factory=PatchSpec)

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {sorted(ABLATIONS)}")
        if self.lr <= 0 or self.batch_size < 1 or self.total_steps < 0:
            raise ValueError("lr must be positive, batch_size >= 1, total_steps >= 0")
        if self.checkpoint_every < 1 or self.log_every < 1:
            raise ValueError("checkpoint_every and log_every must be >= 1")


def build_generator(cfg):
    """Generator wired for the configured ablation variant."""
    flags = ABLATIONS[cfg.ablation]
    return DarkDeblurNet(cfg.generator,
                         channel_attention=flags["channel_attention"],
                         contextual_gates=flags["contextual_gates"])


def build_discriminator(cfg):
    """Discriminator, or ``None`` for the variants without the GAN term."""
    if not ABLATIONS[cfg.ablation]["multi_term"]:
        return None
    return ConditionalDiscriminator(cfg.discriminator)


class Trainer:
    """Owns the model pair, optimizers, and the step loop for one run."""

    def __init__(self, config, device="cpu"):
        self.config = config
        self.device = torch.device(device)
        self.multi_term = ABLATIONS[config.ablation]["multi_term"]

        torch.manual_seed(config.seed)
        self.generator = build_generator(config).to(self.device)
        self.discriminator = build_discriminator(config)
        betas = (config.beta1, config.beta2)
        self.g_opt = torch.optim.Adam(self.generator.parameters(), lr=config.lr,
                                      betas=betas, eps=ADAM_EPS)
        if self.multi_term:
            self.discriminator = self.discriminator.to(self.device)
            self.d_opt = torch.optim.Adam(self.discriminator.parameters(),
                                          lr=config.lr, betas=betas, eps=ADAM_EPS)
            self.extractor = make_feature_extractor(
                config.perceptual_extractor, self.device)
        else:
            self.d_opt = None
            self.extractor = None
        self.step = 0

    def _check_finite(self, breakdown, d_loss):
        values = {
            "reconstruction": breakdown.reconstruction,
            "structure": breakdown.structure,
            "perceptual": breakdown.perceptual,
            "adversarial": breakdown.adversarial,
            "total": breakdown.total,
            "d_loss": d_loss,
        }
        for name, value in values.items():
            if not torch.isfinite(torch.as_tensor(value)).all():
                raise RuntimeError(
                    f"non-finite {name} loss at step {self.step}; aborting "
                    f"(losses: { {k: float(v) for k, v in values.items()} })")

    def train_step(self, batch):
        """One discriminator update (full only) then one generator update.

        Returns ``(LossBreakdown, d_loss)`` as detached floats-on-tensors.
        """
        blurry, sharp = (t.to(self.device) for t in batch)
        cfg = self.config

        if self.multi_term:
            fake = self.generator(blurry)

            d_real = self.discriminator(sharp, blurry)
            d_fake = self.discriminator(fake.detach(), blurry)
            d_loss = discriminator_loss(d_real, d_fake)
            self.d_opt.zero_grad()
            d_loss.backward()
            self.d_opt.step()

            breakdown = total_loss(fake, sharp, self.discriminator(fake, blurry),
                                   self.extractor, cfg.loss_weights)
            self.g_opt.zero_grad()
            breakdown.total.backward()
            if cfg.grad_clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(self.generator.parameters(),
                                               cfg.grad_clip_norm)
            self.g_opt.step()
            d_loss = d_loss.detach()
        else:
            out = self.generator(blurry)
            rec = reconstruction_loss(out, sharp)
            self.g_opt.zero_grad()
            rec.backward()
            if cfg.grad_clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(self.generator.parameters(),
                                               cfg.grad_clip_norm)
            self.g_opt.step()
            zero = torch.zeros((), device=rec.device)
            breakdown = LossBreakdown(rec, zero, zero, zero, rec)
            d_loss = zero

        breakdown = LossBreakdown(
            breakdown.reconstruction.detach(), breakdown.structure.detach(),
            breakdown.perceptual.detach(), breakdown.adversarial.detach(),
            breakdown.total.detach())
        self._check_finite(breakdown, d_loss)
        self.step += 1
        return breakdown, d_loss

    def log_record(self, breakdown, d_loss):
        return {
            "step": self.step,
            "lr": self.config.lr,
            "reconstruction": float(breakdown.reconstruction),
            "structure": float(breakdown.structure),
            "perceptual": float(breakdown.perceptual),
            "adversarial": float(breakdown.adversarial),
            "total": float(breakdown.total),
            "d_loss": float(d_loss),
            "wall_time": time.time(),
        }


def _config_to_dict(config):
    return dataclasses.asdict(config)


def _config_from_dict(payload):
    payload = dict(payload)
    payload["generator"] = GeneratorConfig(**payload["generator"])
    payload["discriminator"] = DiscriminatorConfig(**payload["discriminator"])
    payload["loss_weights"] = LossWeights(**payload["loss_weights"])
    payload["synth"] = SynthConfig(**payload["synth"])
    payload["patch"] = PatchSpec(**payload["patch"])
    return TrainConfig(**payload)


def save_checkpoint(path, trainer):
    """Archive parameters, optimizer state, RNG state, and the config."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "step": trainer.step,
        "config": _config_to_dict(trainer.config),
        "generator": trainer.generator.state_dict(),
        "discriminator": (trainer.discriminator.state_dict()
                          if trainer.multi_term else None),
        "g_opt": trainer.g_opt.state_dict(),
        "d_opt": trainer.d_opt.state_dict() if trainer.multi_term else None,
        "torch_rng": torch.get_rng_state(),
    }
    torch.save(payload, path)


def load_checkpoint(path, device="cpu", config=None):
    """Rebuild a Trainer exactly as it was saved.

    ``config`` substitutes the archived run config — chiefly to extend
    ``total_steps`` when resuming — and must describe the same model
    shapes the checkpoint holds weights for.
    """
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(
            f"{path} is not a {CHECKPOINT_FORMAT} checkpoint "
            f"(found {payload.get('format')!r})")
    if config is None:
        config = _config_from_dict(payload["config"])
    trainer = Trainer(config, device=device)
    if trainer.multi_term and payload["discriminator"] is None:
        raise ValueError(
            f"{path} holds no discriminator state but ablation "
            f"{config.ablation!r} needs one")
    trainer.generator.load_state_dict(payload["generator"])
    trainer.g_opt.load_state_dict(payload["g_opt"])
    if trainer.multi_term:
        trainer.discriminator.load_state_dict(payload["discriminator"])
        trainer.d_opt.load_state_dict(payload["d_opt"])
    trainer.step = payload["step"]
    torch.set_rng_state(payload["torch_rng"])
    return trainer


def load_generator(path, device="cpu"):
    """Inference-only load: the generator in eval mode."""
    trainer = load_checkpoint(path, device=device)
    trainer.generator.eval()
    return trainer.generator


def train(config, data_source, out_dir=None, resume=None, device="cpu",
          log_hook=None):
    """Run the step loop to ``config.total_steps``.

    Checkpoints land in ``out_dir`` every ``checkpoint_every`` steps and at
    the end (so a zero-step run still writes its initial state); the
    training log is an append-only JSONL file next to them.  ``resume``
    restarts bit-exactly from a saved checkpoint; the data stream position
    is reconstructed from the step counter alone.
    """
    if resume is not None:
        trainer = load_checkpoint(resume, device=device, config=config)
    else:
        trainer = Trainer(config, device=device)
    config = trainer.config

    stream = TrainingStream(data_source, spec=config.patch,
                            synth_cfg=config.synth, seed=config.seed,
                            batch_size=config.batch_size)

    out_dir = Path(out_dir) if out_dir is not None else None
    log_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "train_log.jsonl"

    def checkpoint():
        if out_dir is not None:
            save_checkpoint(out_dir / f"ckpt-{trainer.step:08d}.pt", trainer)

    batches = stream.batches(start_step=trainer.step)
    while trainer.step < config.total_steps:
        breakdown, d_loss = trainer.train_step(next(batches))
        if trainer.step % config.log_every == 0 or trainer.step == config.total_steps:
            record = trainer.log_record(breakdown, d_loss)
            if log_path is not None:
                with log_path.open("a") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")
            if log_hook is not None:
                log_hook(record)
        if trainer.step % config.checkpoint_every == 0:
            checkpoint()
    if trainer.step % config.checkpoint_every != 0 or trainer.step == 0:
        checkpoint()
    return trainer


def parameter_count(config):
    """Trainable parameters of the full training system for a config."""
    return (count_parameters(build_generator(config))
            + count_parameters(build_discriminator(config)))
