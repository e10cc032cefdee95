"""Training objectives.

Two parts: an angular prototypical objective over affine-cosine scores
(segment 1 of each utterance scored against segment 2 of every utterance in
the batch, softmax cross-entropy with the matching segment as the positive
class), and a symmetrized negative-cosine reconstruction term between the
Siamese heads with a stop-gradient on the projected targets. The total is
their weighted sum.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .model import stop_gradient

W_MIN = 1e-6


@dataclass(frozen=True)
class LossWeights:
    ssreg_weight: float = 0.08

    def __post_init__(self):
        if not (self.ssreg_weight >= 0 and torch.isfinite(torch.tensor(self.ssreg_weight))):
            raise ValueError("ssreg_weight must be finite and >= 0")


class ApLossParams(nn.Module):
    """Learnable affine scale/offset for cosine scores; w stays >= W_MIN."""

    def __init__(self, init_w: float = 10.0, init_b: float = -5.0):
        super().__init__()
        self.w = nn.Parameter(torch.tensor(float(init_w)))
        self.b = nn.Parameter(torch.tensor(float(init_b)))

    def clamp_(self):
        with torch.no_grad():
            self.w.clamp_(min=W_MIN)


def _check_nonzero(x: torch.Tensor, name: str) -> None:
    norms = x.norm(dim=-1)
    if bool((norms == 0).any()):
        raise ValueError(f"zero-norm vector in {name}")


def affine_cosine(z_i: torch.Tensor, z_j: torch.Tensor, params: ApLossParams) -> torch.Tensor:
    """w * cosine(z_i, z_j) + b for a single pair of vectors."""
    _check_nonzero(z_i, "z_i")
    _check_nonzero(z_j, "z_j")
    cos = F.normalize(z_i, dim=-1) @ F.normalize(z_j, dim=-1)
    return params.w * cos + params.b


def score_matrix(z1: torch.Tensor, z2: torch.Tensor, params: ApLossParams) -> torch.Tensor:
    """(N, N) affine-cosine scores: row i holds S(z1_i, z2_j) for all j."""
    _check_nonzero(z1, "z1")
    _check_nonzero(z2, "z2")
    return params.w * (F.normalize(z1, dim=1) @ F.normalize(z2, dim=1).T) + params.b


def ap_loss(z1: torch.Tensor, z2: torch.Tensor, params: ApLossParams) -> torch.Tensor:
    """Mean over utterances of -log softmax(S(z1_i, z2_:))[i].

    Every utterance in the batch acts as its own class; the matching second
    segment is the positive, all other second segments are negatives.
    """
    if z1.shape != z2.shape or z1.ndim != 2:
        raise ValueError("expected matching (N, d) embedding matrices")
    scores = score_matrix(z1, z2, params)
    targets = torch.arange(z1.shape[0], device=z1.device)
    return F.cross_entropy(scores, targets)


def neg_cos_sim(p: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """-cosine(p, g); elementwise over rows for batched inputs."""
    _check_nonzero(p, "p")
    _check_nonzero(g, "g")
    return -(F.normalize(p, dim=-1) * F.normalize(g, dim=-1)).sum(dim=-1)


def ssreg_loss(
    p1: torch.Tensor,
    g1: torch.Tensor,
    p2: torch.Tensor,
    g2: torch.Tensor,
    use_stop_gradient: bool = True,
) -> torch.Tensor:
    """Symmetrized reconstruction loss between the branches of each pair.

    (1/M) sum_i [0.5*D(p1_i, sg(g2_i)) + 0.5*D(p2_i, sg(g1_i))] with
    D = negative cosine; the projected targets are treated as constants.
    """
    if not (p1.shape == g1.shape == p2.shape == g2.shape) or p1.ndim != 2:
        raise ValueError("expected four matching (M, d) matrices")
    if use_stop_gradient:
        g1 = stop_gradient(g1)
        g2 = stop_gradient(g2)
    return (0.5 * neg_cos_sim(p1, g2) + 0.5 * neg_cos_sim(p2, g1)).mean()


def combined_loss(ap: torch.Tensor, ssreg: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    """ap + weight * ssreg."""
    return ap + weights.ssreg_weight * ssreg
