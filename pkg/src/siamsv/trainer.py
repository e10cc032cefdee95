"""Training loop: batch assembly, SGD with cosine LR decay, checkpoint/resume.

Every random draw in batch assembly comes from a generator seeded by
(config seed, step), so a run is a pure function of its config and any
checkpoint restores the exact trajectory.
"""

import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from . import SEGMENT_SECONDS
from .augment import (
    AugmentCorpora,
    AugmentationPolicy,
    SegmentPair,
    apply_policy,
    crop_pair,
    format_op_log,
    strategy_policy,
)
from .corpus import UtteranceManifest, Waveform, derive_seed, load_waveform
from .features import SpecAugPolicy, featurize, specaug
from .losses import ApLossParams, LossWeights, ap_loss, combined_loss, ssreg_loss
from .model import EncoderConfig, HeadConfig, SpeakerModel

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_utterances: int = 64
    total_steps: int = 2000
    lr_initial: float = 3e-3
    lr_final: float = 4e-5
    momentum: float = 0.9
    ssreg_weight: float = 0.08
    seed: int = 0
    strategy: int = 4
    segment_s: float = SEGMENT_SECONDS
    checkpoint_every: int = 0  # 0: only final
    log_ops: bool = True

    def __post_init__(self):
        if self.batch_utterances < 2:
            raise ValueError("batch_utterances must be >= 2")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not self.lr_final < self.lr_initial:
            raise ValueError("lr_final must be < lr_initial")
        if self.ssreg_weight < 0:
            raise ValueError("ssreg_weight must be >= 0")
        strategy_policy(self.strategy)  # validates the id


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Cosine decay from lr_initial (step 0) to lr_final (step total_steps)."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    span = cfg.lr_initial - cfg.lr_final
    return cfg.lr_final + 0.5 * span * (1.0 + math.cos(math.pi * step / cfg.total_steps))


class TrainingSystem(nn.Module):
    """Model plus the learnable affine-score parameters, as one parameter space."""

    def __init__(self, encoder_config: EncoderConfig, head_config: HeadConfig | None = None):
        super().__init__()
        self.model = SpeakerModel(encoder_config, head_config)
        self.ap_params = ApLossParams()


def collapse_metric(embeddings: torch.Tensor) -> float:
    """Mean per-dimension std of L2-normalized embeddings.

    Roughly 1/sqrt(d) for well-spread embeddings; approaches 0 under collapse.
    """
    if embeddings.ndim != 2 or embeddings.shape[0] < 2:
        raise ValueError("need at least 2 embeddings")
    normed = torch.nn.functional.normalize(embeddings, dim=1)
    return float(normed.std(dim=0, unbiased=False).mean())


@dataclass
class Batch:
    feats_a: torch.Tensor
    feats_b: torch.Tensor
    pairs: list[SegmentPair] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)


def build_batch(
    manifest: UtteranceManifest,
    policy: AugmentationPolicy,
    m: int,
    rng: np.random.Generator,
    corpora: AugmentCorpora,
    specaug_policy: SpecAugPolicy | None = None,
    segment_s: float = SEGMENT_SECONDS,
    loader=load_waveform,
) -> Batch:
    """Sample M distinct utterances and produce augmented, featurized pairs.

    Utterances too short for two segments are skipped (logged) and replaced by
    the next candidate; raises once the manifest runs out.
    """
    entries = manifest.entries
    order = rng.permutation(len(entries))
    pairs: list[SegmentPair] = []
    skipped: list[str] = []
    feats_a, feats_b = [], []
    for idx in order:
        if len(pairs) == m:
            break
        entry = entries[idx]
        if entry.duration_s < 2 * segment_s:
            skipped.append(entry.utterance_id)
            logger.debug("skipping %s: too short for a segment pair", entry.utterance_id)
            continue
        wav = loader(entry.path)
        try:
            pair = crop_pair(wav, entry.utterance_id, rng, segment_s)
        except ValueError:
            skipped.append(entry.utterance_id)
            logger.debug("skipping %s: too short for a segment pair", entry.utterance_id)
            continue
        pair = apply_policy(pair, policy, corpora, rng)

        feat_pair = []
        ops_extra = []
        for seg_wav in (pair.seg_a, pair.seg_b):
            feat = featurize(seg_wav)
            extra: tuple[str, ...] = ()
            if (
                policy.specaug_enabled
                and specaug_policy is not None
                and rng.random() < policy.specaug_prob
            ):
                feat = specaug(feat, specaug_policy, rng)
                extra = ("specaug=1",)
            feat_pair.append(feat)
            ops_extra.append(extra)
        feats_a.append(feat_pair[0])
        feats_b.append(feat_pair[1])
        pairs.append(
            SegmentPair(
                seg_a=pair.seg_a,
                seg_b=pair.seg_b,
                source_utterance_id=pair.source_utterance_id,
                range_a=pair.range_a,
                range_b=pair.range_b,
                applied_ops_a=pair.applied_ops_a + ops_extra[0],
                applied_ops_b=pair.applied_ops_b + ops_extra[1],
            )
        )
    if len(pairs) < m:
        raise ValueError(
            f"corpus exhausted: needed {m} croppable utterances, found {len(pairs)}"
        )

    def to_tensor(feats):
        return torch.from_numpy(np.stack(feats)).float()

    return Batch(to_tensor(feats_a), to_tensor(feats_b), pairs, skipped)


def train_step(
    system: TrainingSystem,
    optimizer: torch.optim.Optimizer,
    batch: Batch,
    cfg: TrainConfig,
    step: int,
) -> dict:
    """One SGD update against the combined objective; returns step metrics."""
    lr = lr_at(step, cfg)
    for group in optimizer.param_groups:
        group["lr"] = lr
    system.train()

    m = batch.feats_a.shape[0]
    feats = torch.cat([batch.feats_a, batch.feats_b], dim=0)
    outs = system.model.forward_branches(feats)
    z1, z2 = outs.z[:m], outs.z[m:]
    g1, g2 = outs.g[:m], outs.g[m:]
    p1, p2 = outs.p[:m], outs.p[m:]

    ap = ap_loss(z1, z2, system.ap_params)
    if cfg.ssreg_weight > 0:
        reg = ssreg_loss(p1, g1, p2, g2)
        total = combined_loss(ap, reg, LossWeights(cfg.ssreg_weight))
    else:
        # keep the regularization head out of the graph entirely at weight 0
        with torch.no_grad():
            reg = ssreg_loss(p1, g1, p2, g2)
        total = ap

    if not torch.isfinite(total):
        lines = [line for pair in batch.pairs for line in format_op_log(pair)]
        raise RuntimeError(
            f"non-finite loss at step {step} (ap={ap.item()}, ssreg={reg.item()}); "
            "batch op logs:\n" + "\n".join(lines)
        )

    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    system.ap_params.clamp_()

    return {
        "step": step,
        "lr": lr,
        "ap": ap.item(),
        "ssreg": reg.item(),
        "total": total.item(),
        "emb_std": collapse_metric(outs.z.detach()),
    }


def format_metrics_line(metrics: dict) -> str:
    return (
        f"step={metrics['step']} lr={metrics['lr']:.6g} ap={metrics['ap']:.6g} "
        f"ssreg={metrics['ssreg']:.6g} total={metrics['total']:.6g} "
        f"emb_std={metrics['emb_std']:.6g}"
    )


def parse_metrics_line(line: str) -> dict:
    metrics = {}
    for token in line.split():
        key, value = token.split("=", 1)
        metrics[key] = int(value) if key == "step" else float(value)
    return metrics


def save_checkpoint(
    path: str,
    system: TrainingSystem,
    optimizer: torch.optim.Optimizer,
    cfg: TrainConfig,
    step: int,
) -> None:
    """Versioned container: config echo, parameters by canonical (state_dict)
    name, optimizer state, step counter, torch RNG state."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "step": step,
        "train_config": asdict(cfg),
        "encoder_config": asdict(system.model.encoder_config),
        "head_config": asdict(system.model.head_config),
        "system_state": system.state_dict(),
        "optimizer_state": optimizer.state_dict(),
        "torch_rng_state": torch.get_rng_state(),
    }
    torch.save(payload, path)


def load_checkpoint(path: str) -> dict:
    payload = torch.load(path, weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format version {version}")
    return payload


def system_from_checkpoint(payload: dict) -> TrainingSystem:
    system = TrainingSystem(
        EncoderConfig(**payload["encoder_config"]), HeadConfig(**payload["head_config"])
    )
    system.load_state_dict(payload["system_state"])
    return system


class Trainer:
    """Owns the system, optimizer, and step counter; writes logs and checkpoints."""

    def __init__(
        self,
        manifest: UtteranceManifest,
        cfg: TrainConfig,
        encoder_config: EncoderConfig,
        head_config: HeadConfig | None = None,
        corpora: AugmentCorpora | None = None,
        specaug_policy: SpecAugPolicy | None = None,
        run_dir: str | None = None,
        cache_audio: bool = True,
    ):
        self.manifest = manifest
        self.cfg = cfg
        self.policy = strategy_policy(cfg.strategy)
        self.corpora = corpora if corpora is not None else AugmentCorpora()
        self.specaug_policy = specaug_policy or SpecAugPolicy()
        self.run_dir = run_dir
        self.step = 0
        self._cache: dict[str, Waveform] = {}
        self._cache_audio = cache_audio

        torch.manual_seed(derive_seed(cfg.seed, "init"))
        self.system = TrainingSystem(encoder_config, head_config)
        self.optimizer = torch.optim.SGD(
            self.system.parameters(), lr=cfg.lr_initial, momentum=cfg.momentum
        )
        if run_dir:
            os.makedirs(run_dir, exist_ok=True)

    @classmethod
    def from_checkpoint(
        cls,
        path: str,
        manifest: UtteranceManifest,
        corpora: AugmentCorpora | None = None,
        specaug_policy: SpecAugPolicy | None = None,
        run_dir: str | None = None,
    ) -> "Trainer":
        payload = load_checkpoint(path)
        cfg = TrainConfig(**payload["train_config"])
        trainer = cls(
            manifest,
            cfg,
            EncoderConfig(**payload["encoder_config"]),
            HeadConfig(**payload["head_config"]),
            corpora=corpora,
            specaug_policy=specaug_policy,
            run_dir=run_dir,
        )
        trainer.system.load_state_dict(payload["system_state"])
        trainer.optimizer.load_state_dict(payload["optimizer_state"])
        torch.set_rng_state(payload["torch_rng_state"])
        trainer.step = payload["step"]
        return trainer

    def _load(self, path: str) -> Waveform:
        if not self._cache_audio:
            return load_waveform(path)
        if path not in self._cache:
            self._cache[path] = load_waveform(path)
        return self._cache[path]

    def build_step_batch(self, step: int) -> Batch:
        rng = np.random.default_rng(derive_seed(self.cfg.seed, "batch", step))
        return build_batch(
            self.manifest,
            self.policy,
            self.cfg.batch_utterances,
            rng,
            self.corpora,
            self.specaug_policy,
            self.cfg.segment_s,
            loader=self._load,
        )

    def run(self, num_steps: int | None = None, on_metrics=None) -> list[dict]:
        """Advance up to ``num_steps`` (default: to total_steps); return metrics."""
        end = self.cfg.total_steps if num_steps is None else min(
            self.cfg.total_steps, self.step + num_steps
        )
        metrics_fh = op_fh = None
        if self.run_dir:
            metrics_fh = open(os.path.join(self.run_dir, "metrics.log"), "a", encoding="utf-8")
            if self.cfg.log_ops:
                op_fh = open(os.path.join(self.run_dir, "oplog.log"), "a", encoding="utf-8")
        history = []
        try:
            while self.step < end:
                batch = self.build_step_batch(self.step)
                metrics = train_step(self.system, self.optimizer, batch, self.cfg, self.step)
                self.step += 1
                history.append(metrics)
                if metrics_fh:
                    metrics_fh.write(format_metrics_line(metrics) + "\n")
                if op_fh:
                    for pair in batch.pairs:
                        op_fh.write("\n".join(format_op_log(pair)) + "\n")
                if on_metrics:
                    on_metrics(metrics)
                if (
                    self.run_dir
                    and self.cfg.checkpoint_every
                    and self.step % self.cfg.checkpoint_every == 0
                    and self.step < self.cfg.total_steps
                ):
                    self.save(os.path.join(self.run_dir, f"ckpt_{self.step:06d}.pt"))
            if self.run_dir:
                self.save(os.path.join(self.run_dir, "last.pt"))
                if self.step >= self.cfg.total_steps:
                    self.save(os.path.join(self.run_dir, "final.pt"))
        finally:
            if metrics_fh:
                metrics_fh.close()
            if op_fh:
                op_fh.close()
        return history

    def save(self, path: str) -> None:
        save_checkpoint(path, self.system, self.optimizer, self.cfg, self.step)
