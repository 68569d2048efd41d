"""Language-aware filter: scene aggregation, frame relevance and stream gating."""

from typing import Tuple

import torch
import torch.nn as nn

DEGENERATE_EPS = 1e-8


def netvlad_aggregate(Q: torch.Tensor, centers: torch.Tensor, weight: torch.Tensor,
                      bias: torch.Tensor) -> torch.Tensor:
    """Soft-assign word features to scene centers and accumulate residuals.

    Args:
        Q: (n_q, d) word features.
        centers: (n_c, d) trainable centers.
        weight, bias: assignment projection, (n_c, d) and (n_c,).

    Returns:
        U: (n_c, d) with u_j = sum_i alpha_ij (q_i - c_j).
    """
    if Q.dim() != 2 or centers.dim() != 2 or Q.shape[1] != centers.shape[1]:
        raise ValueError(f"dimension mismatch: Q {tuple(Q.shape)} vs centers {tuple(centers.shape)}")
    if weight.shape != centers.shape or bias.shape != centers.shape[:1]:
        raise ValueError("assignment projection does not match the center bank")
    alpha = torch.softmax(Q @ weight.T + bias, dim=1)  # (n_q, n_c)
    # sum_i a_ij q_i - (sum_i a_ij) c_j
    return alpha.T @ Q - alpha.sum(0).unsqueeze(1) * centers


class SceneBank(nn.Module):
    def __init__(self, dim: int, num_centers: int = 8):
        super().__init__()
        if num_centers < 1:
            raise ValueError("num_centers must be >= 1")
        self.centers = nn.Parameter(torch.randn(num_centers, dim) * 0.1)
        self.assign = nn.Linear(dim, num_centers)

    def assignments(self, Q):
        return torch.softmax(self.assign(Q), dim=1)

    def forward(self, Q):
        return netvlad_aggregate(Q, self.centers, self.assign.weight, self.assign.bias)


class FrameSceneScorer(nn.Module):
    """beta_ij = sigmoid(w^T tanh(W1 v_i + W2 u_j + b))."""

    def __init__(self, frame_dim: int, scene_dim: int, hidden_dim: int = 256):
        super().__init__()
        self.frame_proj = nn.Linear(frame_dim, hidden_dim, bias=False)
        self.scene_proj = nn.Linear(scene_dim, hidden_dim)
        self.out = nn.Linear(hidden_dim, 1, bias=False)

    def forward(self, V: torch.Tensor, U: torch.Tensor) -> torch.Tensor:
        if V.shape[1] != self.frame_proj.in_features or U.shape[1] != self.scene_proj.in_features:
            raise ValueError(f"dimension mismatch: V {tuple(V.shape)}, U {tuple(U.shape)}")
        h = torch.tanh(self.frame_proj(V).unsqueeze(1) + self.scene_proj(U).unsqueeze(0))
        return torch.sigmoid(self.out(h).squeeze(-1))  # (n_v, n_c)


class VisualOnlyScorer(nn.Module):
    """Frame-only relevance head used by the visual-only scoring ablation."""

    def __init__(self, frame_dim: int, hidden_dim: int = 256):
        super().__init__()
        self.frame_proj = nn.Linear(frame_dim, hidden_dim)
        self.out = nn.Linear(hidden_dim, 1, bias=False)

    def forward(self, V: torch.Tensor) -> torch.Tensor:
        if V.shape[1] != self.frame_proj.in_features:
            raise ValueError(f"dimension mismatch: V {tuple(V.shape)}")
        return torch.sigmoid(self.out(torch.tanh(self.frame_proj(V))).squeeze(-1))


def _pick(x: torch.Tensor, idx: torch.Tensor, dim: int) -> torch.Tensor:
    return torch.gather(x, dim, idx.unsqueeze(dim)).squeeze(dim)


def max_min_normalize(per_frame: torch.Tensor) -> torch.Tensor:
    # argmax/argmin return the first extremum, so the backward pass is deterministic
    hi = per_frame[torch.argmax(per_frame)]
    lo = per_frame[torch.argmin(per_frame)]
    span = hi - lo
    if float(span.detach()) <= DEGENERATE_EPS:
        return torch.full_like(per_frame, 0.5)
    return (per_frame - lo) / span


def reduce_and_normalize(raw: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Max over scenes, then max-min normalization over frames.

    A constant per-frame score (range <= 1e-8) maps to 0.5 everywhere.
    """
    if raw.dim() != 2 or raw.shape[0] < 1:
        raise ValueError("raw scores must be (n_v, n_c) with n_v >= 1")
    per_frame = _pick(raw, torch.argmax(raw, dim=1), 1)
    return per_frame, max_min_normalize(per_frame)


def split_streams(V: torch.Tensor, normalized: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    if normalized.dim() != 1 or normalized.shape[0] != V.shape[0]:
        raise ValueError(f"gate length {tuple(normalized.shape)} does not match {V.shape[0]} frames")
    w = normalized.unsqueeze(1)
    enhanced = w * V
    # V - enhanced instead of (1 - w) * V keeps enhanced + suppressed == V to rounding
    return enhanced, V - enhanced


class LanguageFilter(nn.Module):
    def __init__(self, frame_dim: int, query_dim: int, hidden_dim: int = 256, num_centers: int = 8,
                 visual_only: bool = False):
        super().__init__()
        self.visual_only = visual_only
        self.scenes = SceneBank(query_dim, num_centers)
        self.scorer = FrameSceneScorer(frame_dim, query_dim, hidden_dim)
        self.visual_scorer = VisualOnlyScorer(frame_dim, hidden_dim) if visual_only else None

    def relevance(self, V: torch.Tensor, Q: torch.Tensor) -> torch.Tensor:
        """Normalized per-frame relevance in [0, 1]."""
        if self.visual_only:
            return max_min_normalize(self.visual_scorer(V))
        _, normalized = reduce_and_normalize(self.scorer(V, self.scenes(Q)))
        return normalized

    def forward(self, V, Q):
        return split_streams(V, self.relevance(V, Q))
