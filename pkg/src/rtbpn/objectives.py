"""Training objectives: intra/inter-sample hinges, proposal regularizers, weighted total."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch

from .errors import ConfigurationError


@dataclass
class LossConfig:
    margin_intra: float = 0.4
    margin_inter: float = 0.6
    lambda_intra: float = 0.1
    lambda_inter: float = 1.0
    lambda_global: float = 0.01
    lambda_gap: float = 0.01

    def __post_init__(self):
        if self.margin_intra < 0 or self.margin_inter < 0:
            raise ConfigurationError("margins must be non-negative")
        if min(self.lambdas) < 0:
            raise ConfigurationError("loss weights must be non-negative")

    @property
    def lambdas(self) -> Tuple[float, float, float, float]:
        return (self.lambda_intra, self.lambda_inter, self.lambda_global, self.lambda_gap)


@dataclass
class LossBundle:
    intra: torch.Tensor
    inter: torch.Tensor
    global_: torch.Tensor
    gap: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict:
        return {k: float(getattr(self, a)) for k, a in
                (("intra", "intra"), ("inter", "inter"), ("global", "global_"), ("gap", "gap"), ("total", "total"))}


def _hinge(x):
    # relu has zero gradient at exactly zero margin
    if isinstance(x, torch.Tensor):
        return torch.relu(x)
    return max(0.0, x)


def intra_loss(k_en, k_sp, margin: float = 0.4):
    return _hinge(margin - k_en + k_sp)


def inter_loss(k_en, k_neg_sentence, k_neg_video, margin: float = 0.6):
    return _hinge(margin - k_en + k_neg_sentence) + _hinge(margin - k_en + k_neg_video)


def global_loss(scores: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """Mean score over valid cells of the moment map."""
    if not bool(valid.any()):
        raise ValueError("moment map has no valid cell")
    return scores[valid].mean()


def gap_loss(scores) -> torch.Tensor:
    """Entropy (nats) of the softmax over the selected proposal scores."""
    scores = torch.as_tensor(scores, dtype=torch.get_default_dtype()) if not isinstance(scores, torch.Tensor) else scores
    if scores.numel() < 1:
        raise ValueError("gap loss needs at least one proposal")
    log_p = torch.log_softmax(scores, dim=0)
    return -(log_p.exp() * log_p).sum()


def total_loss(intra, inter, global_, gap, cfg: LossConfig = LossConfig()) -> LossBundle:
    l1, l2, l3, l4 = cfg.lambdas
    total = l1 * intra + l2 * inter + l3 * global_ + l4 * gap
    as_t = lambda x: x if isinstance(x, torch.Tensor) else torch.tensor(float(x), dtype=torch.float64)
    return LossBundle(as_t(intra), as_t(inter), as_t(global_), as_t(gap), as_t(total))


def sample_negatives(indices: Sequence[int], num_samples: int, rng: np.random.Generator,
                     groups: Sequence[str] = None) -> List[Tuple[int, int]]:
    """For each positive sample index draw (negative sentence idx, negative video idx).

    groups[i] is the video id of sample i. The sentence is uniform over the
    sentences of other videos; the video is uniform over the other distinct
    videos and is returned as the index of its first sample.
    """
    if groups is None:
        groups = list(range(num_samples))
    groups = list(groups)
    first_of = {}
    for idx, g in enumerate(groups):
        first_of.setdefault(g, idx)
    if len(first_of) < 2:
        raise ConfigurationError("negative sampling needs at least two distinct videos")
    ordinal = {g: n for n, g in enumerate(first_of)}
    groups_arr = np.asarray([ordinal[g] for g in groups])
    video_reps = np.asarray(list(first_of.values()))
    out = []
    for i in indices:
        sentence_pool = np.flatnonzero(groups_arr != groups_arr[i])
        video_pool = np.delete(video_reps, groups_arr[i])
        out.append((int(rng.choice(sentence_pool)), int(rng.choice(video_pool))))
    return out
