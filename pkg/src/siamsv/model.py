"""Speaker embedding networks and Siamese heads.

A representation network maps (B, T, 40) features to fixed-size embeddings z
via self-attentive pooling. A projection MLP produces g = project(z) and a
bottlenecked regularization MLP produces p = regularize(g). Both Siamese
branches run through the *same* module instances, so weight sharing is
parameter identity, not copying.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

# Batch-norm running statistics decay 0.95 per update (torch's momentum is the
# update fraction, hence 0.05).
BN_MOMENTUM = 0.05


@dataclass(frozen=True)
class EncoderConfig:
    variant: str = "thin_resnet34"
    embedding_dim: int = 512
    attention_dim: int | None = None  # per-variant default when None

    def __post_init__(self):
        if self.variant not in ("thin_resnet34", "tiny"):
            raise ValueError(f"unknown encoder variant {self.variant!r}")
        if self.embedding_dim <= 0:
            raise ValueError("embedding_dim must be positive")


@dataclass(frozen=True)
class HeadConfig:
    embedding_dim: int = 512
    projection_hidden: int = 512
    reg_bottleneck: int = 128

    def __post_init__(self):
        if min(self.embedding_dim, self.projection_hidden, self.reg_bottleneck) <= 0:
            raise ValueError("head dimensions must be positive")


@dataclass
class BranchOutputs:
    """Per-segment tensors: embedding z, projected g, regularized p."""

    z: torch.Tensor
    g: torch.Tensor
    p: torch.Tensor


def stop_gradient(v: torch.Tensor) -> torch.Tensor:
    """Identity forward; blocks all gradient flow into ``v``'s producers."""
    return v.detach()


def _init_weights(module: nn.Module) -> None:
    # He-uniform weights; biases keep torch's default nonzero uniform init so
    # a dead-ReLU layer cannot emit an exactly-zero vector at initialization.
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")


class SelfAttentivePooling(nn.Module):
    """Single-head attention over frames with a learned context vector."""

    def __init__(self, in_dim: int, attention_dim: int):
        super().__init__()
        self.attention = nn.Linear(in_dim, attention_dim)
        self.context = nn.Parameter(torch.empty(attention_dim))
        nn.init.uniform_(self.context, -(attention_dim**-0.5), attention_dim**-0.5)

    def forward(self, x: torch.Tensor, return_weights: bool = False):
        # x: (B, T, C)
        h = torch.tanh(self.attention(x))
        weights = torch.softmax(h @ self.context, dim=1)
        pooled = (weights.unsqueeze(-1) * x).sum(dim=1)
        if return_weights:
            return pooled, weights
        return pooled


class TinyEncoder(nn.Module):
    """Two strided conv blocks + SAP + FC. Desk-scale stand-in for the full net."""

    min_frames = 4

    def __init__(self, embedding_dim: int = 128, attention_dim: int = 64):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 16, 3, stride=2, padding=1)
        self.bn1 = nn.BatchNorm2d(16, momentum=BN_MOMENTUM)
        self.conv2 = nn.Conv2d(16, 32, 3, stride=2, padding=1)
        self.bn2 = nn.BatchNorm2d(32, momentum=BN_MOMENTUM)
        self.pool = SelfAttentivePooling(32 * 10, attention_dim)
        self.fc = nn.Linear(32 * 10, embedding_dim)
        self.embedding_dim = embedding_dim
        _init_weights(self)
        nn.init.zeros_(self.pool.attention.bias)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        # feats: (B, T, 40)
        if feats.shape[1] < self.min_frames:
            raise ValueError(f"need at least {self.min_frames} frames, got {feats.shape[1]}")
        x = feats.unsqueeze(1)
        x = F.relu(self.bn1(self.conv1(x)))
        x = F.relu(self.bn2(self.conv2(x)))
        b, c, t, f = x.shape
        x = x.permute(0, 2, 1, 3).reshape(b, t, c * f)
        return self.fc(self.pool(x))


class BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch, momentum=BN_MOMENTUM)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch, momentum=BN_MOMENTUM)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch, momentum=BN_MOMENTUM),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class ThinResNet34(nn.Module):
    """34-layer residual encoder with quarter-width channels (16/32/64/128)."""

    min_frames = 8

    def __init__(self, embedding_dim: int = 512, attention_dim: int = 128):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(1, 16, 3, padding=1, bias=False),
            nn.BatchNorm2d(16, momentum=BN_MOMENTUM),
            nn.ReLU(inplace=True),
        )
        widths = (16, 32, 64, 128)
        depths = (3, 4, 6, 3)
        strides = (1, 2, 2, 2)
        stages = []
        in_ch = 16
        for width, depth, stride in zip(widths, depths, strides):
            blocks = [BasicBlock(in_ch, width, stride)]
            blocks += [BasicBlock(width, width) for _ in range(depth - 1)]
            stages.append(nn.Sequential(*blocks))
            in_ch = width
        self.stages = nn.Sequential(*stages)
        self.pool = SelfAttentivePooling(128 * 5, attention_dim)
        self.fc = nn.Linear(128 * 5, embedding_dim)
        self.embedding_dim = embedding_dim
        _init_weights(self)
        nn.init.zeros_(self.pool.attention.bias)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        if feats.shape[1] < self.min_frames:
            raise ValueError(f"need at least {self.min_frames} frames, got {feats.shape[1]}")
        x = feats.unsqueeze(1)
        x = self.stages(self.stem(x))
        b, c, t, f = x.shape
        x = x.permute(0, 2, 1, 3).reshape(b, t, c * f)
        return self.fc(self.pool(x))


def build_encoder(config: EncoderConfig) -> nn.Module:
    if config.variant == "tiny":
        att = config.attention_dim if config.attention_dim is not None else 64
        return TinyEncoder(config.embedding_dim, att)
    att = config.attention_dim if config.attention_dim is not None else 128
    return ThinResNet34(config.embedding_dim, att)


class ProjectionMLP(nn.Module):
    """Two FC layers: BN+ReLU after the first, BN only after the second."""

    def __init__(self, config: HeadConfig):
        super().__init__()
        d, h = config.embedding_dim, config.projection_hidden
        self.fc1 = nn.Linear(d, h)
        self.bn1 = nn.BatchNorm1d(h, momentum=BN_MOMENTUM)
        self.fc2 = nn.Linear(h, d)
        self.bn2 = nn.BatchNorm1d(d, momentum=BN_MOMENTUM)
        _init_weights(self)

    def forward(self, z):
        return self.bn2(self.fc2(F.relu(self.bn1(self.fc1(z)))))


class RegularizationMLP(nn.Module):
    """Bottlenecked reconstruction head: BN+ReLU after the first FC, bare output."""

    def __init__(self, config: HeadConfig):
        super().__init__()
        d, b = config.embedding_dim, config.reg_bottleneck
        self.fc1 = nn.Linear(d, b)
        self.bn1 = nn.BatchNorm1d(b, momentum=BN_MOMENTUM)
        self.fc2 = nn.Linear(b, d)
        _init_weights(self)

    def forward(self, g):
        return self.fc2(F.relu(self.bn1(self.fc1(g))))


class SpeakerModel(nn.Module):
    """Encoder plus Siamese heads; both segments share every module."""

    def __init__(self, encoder_config: EncoderConfig, head_config: HeadConfig | None = None):
        super().__init__()
        if head_config is None:
            head_config = HeadConfig(
                embedding_dim=encoder_config.embedding_dim,
                projection_hidden=encoder_config.embedding_dim,
                reg_bottleneck=max(encoder_config.embedding_dim // 4, 4),
            )
        if head_config.embedding_dim != encoder_config.embedding_dim:
            raise ValueError("head embedding_dim must match encoder embedding_dim")
        self.encoder_config = encoder_config
        self.head_config = head_config
        self.encoder = build_encoder(encoder_config)
        self.projector = ProjectionMLP(head_config)
        self.regularizer = RegularizationMLP(head_config)

    def forward_branches(self, feats: torch.Tensor) -> BranchOutputs:
        z = self.encoder(feats)
        g = self.projector(z)
        p = self.regularizer(g)
        return BranchOutputs(z=z, g=g, p=p)

    def embed(self, feats: torch.Tensor, mode: str = "eval") -> torch.Tensor:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        was_training = self.training
        self.train(mode == "train")
        try:
            if mode == "eval":
                with torch.no_grad():
                    return self.encoder(feats)
            return self.encoder(feats)
        finally:
            self.train(was_training)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
