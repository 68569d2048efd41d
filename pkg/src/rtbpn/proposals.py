"""Sharable proposal branch.

Cross-modal interaction, the 2D moment map, two-layer convolution, moment
scoring and proposal selection. Moments are (a, b) frame-index pairs with an
inclusive end; a one-frame moment is (a, a).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigurationError

ENHANCED = "enhanced"
SUPPRESSED = "suppressed"
SELECTORS = ("center", "topk", "all")


@dataclass(frozen=True)
class SamplingRule:
    """Which (start, end) cells of the 2D map hold moments.

    kind is one of "all_pairs", "parity" (keep (b - a) % m == 1) or
    "stride_multiple" (keep (b - a) % m == 0).
    """

    kind: str = "all_pairs"
    m: int = 1

    def __post_init__(self):
        if self.kind not in ("all_pairs", "parity", "stride_multiple"):
            raise ConfigurationError(f"unknown sampling rule {self.kind!r}")
        if self.kind != "all_pairs" and self.m < 1:
            raise ConfigurationError("sampling modulus must be >= 1")

    def keeps(self, a: int, b: int) -> bool:
        if a > b:
            return False
        if self.kind == "parity":
            return (b - a) % self.m == 1
        if self.kind == "stride_multiple":
            return (b - a) % self.m == 0
        return True

    def mask(self, n_v: int) -> np.ndarray:
        a, b = np.meshgrid(np.arange(n_v), np.arange(n_v), indexing="ij")
        valid = a <= b
        if self.kind == "parity":
            valid &= (b - a) % self.m == 1
        elif self.kind == "stride_multiple":
            valid &= (b - a) % self.m == 0
        return valid

    @classmethod
    def parse(cls, text: str) -> "SamplingRule":
        """Parse "all_pairs", "parity:2" or "stride_multiple:8"."""
        kind, _, m = text.partition(":")
        return cls(kind, int(m) if m else 1)

    def __str__(self):
        return self.kind if self.kind == "all_pairs" else f"{self.kind}:{self.m}"


def enumerate_valid(rule: SamplingRule, n_v: int) -> List[Tuple[int, int]]:
    a, b = np.nonzero(rule.mask(n_v))
    cells = [(int(i), int(j)) for i, j in zip(a, b)]
    if not cells:
        raise ConfigurationError(f"sampling rule {rule} leaves no valid moment for n_v={n_v}")
    return cells


def frame_word_attention(V: torch.Tensor, Q: torch.Tensor, frame_proj: nn.Linear, word_proj: nn.Linear,
                         out: nn.Linear) -> Tuple[torch.Tensor, torch.Tensor]:
    """Return (weights (n_v, n_q), aggregated text S (n_v, d_q))."""
    if V.shape[1] != frame_proj.in_features or Q.shape[1] != word_proj.in_features:
        raise ValueError(f"dimension mismatch: V {tuple(V.shape)}, Q {tuple(Q.shape)}")
    logits = out(torch.tanh(frame_proj(V).unsqueeze(1) + word_proj(Q).unsqueeze(0))).squeeze(-1)
    weights = torch.softmax(logits, dim=1)
    return weights, weights @ Q


class CrossModalInteraction(nn.Module):
    def __init__(self, frame_dim: int, query_dim: int, hidden_dim: int = 256):
        super().__init__()
        self.att_frame = nn.Linear(frame_dim, hidden_dim, bias=False)
        self.att_word = nn.Linear(query_dim, hidden_dim)
        self.att_out = nn.Linear(hidden_dim, 1, bias=False)
        # visual gate acts on the text features and vice versa
        self.visual_gate = nn.Linear(frame_dim, query_dim)
        self.text_gate = nn.Linear(query_dim, frame_dim)

    @property
    def output_dim(self) -> int:
        return self.att_frame.in_features + self.att_word.in_features

    def attend(self, V, Q):
        return frame_word_attention(V, Q, self.att_frame, self.att_word, self.att_out)

    def cross_gate(self, V: torch.Tensor, S: torch.Tensor) -> torch.Tensor:
        if V.shape[0] != S.shape[0] or V.shape[1] != self.visual_gate.in_features \
                or S.shape[1] != self.text_gate.in_features:
            raise ValueError(f"dimension mismatch: V {tuple(V.shape)}, S {tuple(S.shape)}")
        gated_v = V * torch.sigmoid(self.text_gate(S))
        gated_s = S * torch.sigmoid(self.visual_gate(V))
        return torch.cat([gated_v, gated_s], dim=1)

    def forward(self, V, Q):
        _, S = self.attend(V, Q)
        return self.cross_gate(V, S)


def build_moment_map(m: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """F[a, b] = sum_{i=a..b} m_i on valid cells, zero elsewhere. Shape (n_v, n_v, d)."""
    n_v = m.shape[0]
    if valid.shape != (n_v, n_v):
        raise ValueError(f"mask shape {tuple(valid.shape)} does not match {n_v} fused rows")
    csum = torch.cat([m.new_zeros(1, m.shape[1]), torch.cumsum(m, dim=0)], dim=0)
    grid = csum[1:].unsqueeze(0) - csum[:-1].unsqueeze(1)  # [a, b] = csum[b+1] - csum[a]
    return grid * valid.unsqueeze(-1).to(m.dtype)


@dataclass
class MomentMap:
    valid: torch.Tensor  # bool (n_v, n_v)
    features: torch.Tensor  # (n_v, n_v, d)
    scores: Optional[torch.Tensor] = None  # (n_v, n_v); meaningful on valid cells only
    logits: Optional[torch.Tensor] = None  # pre-sigmoid scores, used for ranking when present

    @property
    def num_moments(self) -> int:
        return int(self.valid.sum())

    def valid_scores(self) -> torch.Tensor:
        return self.scores[self.valid]


class MomentScorer(nn.Module):
    """Two zero-padded K x K convolutions, then a per-cell sigmoid head."""

    def __init__(self, in_dim: int, hidden_dim: int = 256, kernel_size: int = 3):
        super().__init__()
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ConfigurationError(f"kernel size must be odd, got {kernel_size}")
        pad = (kernel_size - 1) // 2
        self.conv1 = nn.Conv2d(in_dim, hidden_dim, kernel_size, padding=pad)
        self.conv2 = nn.Conv2d(hidden_dim, hidden_dim, kernel_size, padding=pad)
        self.head = nn.Linear(hidden_dim, 1)

    def features(self, mmap: MomentMap) -> torch.Tensor:
        mask = mmap.valid.to(mmap.features.dtype).unsqueeze(0)
        x = mmap.features.permute(2, 0, 1) * mask
        x = torch.relu(self.conv1(x.unsqueeze(0)).squeeze(0)) * mask
        x = self.conv2(x.unsqueeze(0)).squeeze(0) * mask
        return x.permute(1, 2, 0)

    def forward(self, mmap: MomentMap) -> MomentMap:
        logits = self.head(self.features(mmap)).squeeze(-1)
        return MomentMap(mmap.valid, mmap.features, torch.sigmoid(logits), logits)


class ProposalBranch(nn.Module):
    """Parameter set shared by the enhanced and suppressed branches."""

    def __init__(self, frame_dim: int, query_dim: int, hidden_dim: int = 256, kernel_size: int = 3):
        super().__init__()
        self.interaction = CrossModalInteraction(frame_dim, query_dim, hidden_dim)
        self.scorer = MomentScorer(self.interaction.output_dim, hidden_dim, kernel_size)

    def moment_map(self, V: torch.Tensor, Q: torch.Tensor, rule: SamplingRule) -> MomentMap:
        fused = self.interaction(V, Q)
        valid = torch.as_tensor(rule.mask(V.shape[0]), device=V.device)
        if not bool(valid.any()):
            raise ConfigurationError(f"sampling rule {rule} leaves no valid moment for n_v={V.shape[0]}")
        return self.scorer(MomentMap(valid, build_moment_map(fused, valid)))


@dataclass
class ProposalSet:
    boundaries: List[Tuple[int, int]]
    scores: torch.Tensor  # (T,), differentiable w.r.t. the selected cells
    branch: str = ENHANCED

    @property
    def k_sum(self) -> torch.Tensor:
        return self.scores.sum()

    def __len__(self):
        return len(self.boundaries)


def span_iou(a: Tuple[int, int], b: Tuple[int, int]) -> float:
    """IoU of inclusive frame spans."""
    inter = min(a[1], b[1]) - max(a[0], b[0]) + 1
    if inter <= 0:
        return 0.0
    return inter / (max(a[1], b[1]) - min(a[0], b[0]) + 1)


def _valid_cells(mmap: MomentMap):
    """Valid (a, b) in lexicographic order with their ranking keys.

    Ranking uses logits when available: sigmoid is monotone, but saturated
    scores round to equal floats and would fall back to the tie rule.
    """
    valid = mmap.valid.detach().cpu().numpy()
    a, b = np.nonzero(valid)  # row-major, i.e. lexicographic on (a, b)
    key = mmap.scores if mmap.logits is None else mmap.logits
    return a, b, key.detach().cpu().numpy()[a, b]


def _gather(mmap: MomentMap, a: np.ndarray, b: np.ndarray, order: np.ndarray, branch: str) -> ProposalSet:
    a, b = a[order], b[order]
    idx_a = torch.as_tensor(a, device=mmap.scores.device)
    idx_b = torch.as_tensor(b, device=mmap.scores.device)
    return ProposalSet([(int(i), int(j)) for i, j in zip(a, b)], mmap.scores[idx_a, idx_b], branch)


def center_select(mmap: MomentMap, T: int, branch: str = ENHANCED) -> ProposalSet:
    """Highest-scoring moment, then the T-1 moments overlapping it most.

    Ties: the center is the lexicographically smallest argmax; the rest are
    ranked by IoU with the center, then score, then (a, b).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    a, b, s = _valid_cells(mmap)
    c = int(np.argmax(s))
    ca, cb = a[c], b[c]
    inter = np.minimum(b, cb) - np.maximum(a, ca) + 1
    union = np.maximum(b, cb) - np.minimum(a, ca) + 1
    iou = np.where(inter > 0, inter / union, 0.0)
    rest = np.delete(np.arange(len(a)), c)
    # lexsort: last key is primary
    ranked = rest[np.lexsort((b[rest], a[rest], -s[rest], -iou[rest]))]
    order = np.concatenate([[c], ranked[:T - 1]]).astype(np.int64)
    return _gather(mmap, a, b, order, branch)


def topk_select(mmap: MomentMap, T: int, branch: str = ENHANCED) -> ProposalSet:
    if T < 1:
        raise ValueError("T must be >= 1")
    a, b, s = _valid_cells(mmap)
    order = np.lexsort((b, a, -s))[:T]
    return _gather(mmap, a, b, order, branch)


def all_select(mmap: MomentMap, branch: str = ENHANCED) -> ProposalSet:
    a, b, s = _valid_cells(mmap)
    return _gather(mmap, a, b, np.lexsort((b, a, -s)), branch)


def select(mmap: MomentMap, T: int, selector: str = "center", branch: str = ENHANCED) -> ProposalSet:
    if selector == "center":
        return center_select(mmap, T, branch)
    if selector == "topk":
        return topk_select(mmap, T, branch)
    if selector == "all":
        return all_select(mmap, branch)
    raise ConfigurationError(f"unknown selector {selector!r}; expected one of {SELECTORS}")


def run_branch(stream: torch.Tensor, Q: torch.Tensor, params: ProposalBranch, rule: SamplingRule, T: int,
               selector: str = "center", branch: str = ENHANCED) -> Tuple[ProposalSet, MomentMap]:
    mmap = params.moment_map(stream, Q, rule)
    return select(mmap, T, selector, branch), mmap
