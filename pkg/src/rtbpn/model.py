"""Full network: text encoder, language-aware filter and the two proposal branches."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import torch
import torch.nn as nn

from .errors import ConfigurationError
from .language_filter import LanguageFilter
from .objectives import LossBundle, LossConfig, gap_loss, global_loss, inter_loss, intra_loss, total_loss
from .proposals import (ENHANCED, SELECTORS, SUPPRESSED, MomentMap, ProposalBranch, ProposalSet, SamplingRule,
                        all_select, select)
from .text_encoder import TextEncoder

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class RunConfig:
    hidden_dim: int = 256
    encoder_hidden: int = 128
    embed_dim: int = 300
    num_centers: int = 8
    T: int = 48
    kernel_size: int = 3
    sampling_rule: str = "all_pairs"
    pool_stride: int = 4
    loss: LossConfig = field(default_factory=LossConfig)
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    no_filter: bool = False
    no_param_sharing: bool = False
    visual_only: bool = False
    selector: str = "center"
    freeze_embeddings: bool = False
    embed_init_std: float = 0.01
    dtype: str = "float32"
    nms_threshold: float = 0.55

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.selector not in SELECTORS:
            raise ConfigurationError(f"selector must be one of {SELECTORS}")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ConfigurationError(f"kernel size must be odd, got {self.kernel_size}")
        if self.T < 1 or self.batch_size < 1 or self.pool_stride < 1 or self.epochs < 0:
            raise ConfigurationError("T, batch_size and pool_stride must be >= 1, epochs >= 0")
        if self.dtype not in DTYPES:
            raise ConfigurationError(f"dtype must be one of {sorted(DTYPES)}")
        self.rule  # validates the rule string

    @property
    def rule(self) -> SamplingRule:
        return SamplingRule.parse(self.sampling_rule)

    @property
    def torch_dtype(self) -> torch.dtype:
        return DTYPES[self.dtype]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown run options: {sorted(unknown)}")
        return cls(**d)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def with_ablation(self, flag: str) -> "RunConfig":
        new = copy.deepcopy(self)
        if flag == "no_filter":
            new.no_filter = True
        elif flag == "no_param_sharing":
            new.no_param_sharing = True
        elif flag in ("visual_only", "visual_only_scoring"):
            new.visual_only = True
        elif flag.startswith("selector="):
            new.selector = flag.split("=", 1)[1]
            new.__post_init__()
        else:
            raise ConfigurationError(f"unknown ablation {flag!r}")
        return new


class RTBPN(nn.Module):
    def __init__(self, vocab_size: int, frame_dim: int, cfg: RunConfig):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.frame_dim = frame_dim
        self.encoder = TextEncoder(vocab_size, cfg.embed_dim, cfg.encoder_hidden, cfg.freeze_embeddings,
                                   cfg.embed_init_std)
        qdim = self.encoder.output_dim
        self.filter = None if cfg.no_filter else LanguageFilter(
            frame_dim, qdim, cfg.hidden_dim, cfg.num_centers, cfg.visual_only)
        self.branch_en = ProposalBranch(frame_dim, qdim, cfg.hidden_dim, cfg.kernel_size)
        if cfg.no_param_sharing and not cfg.no_filter:
            self.branch_sp_own = copy.deepcopy(self.branch_en)
        else:
            self.branch_sp_own = None
        self.to(cfg.torch_dtype)

    @property
    def branch_sp(self) -> ProposalBranch:
        return self.branch_en if self.branch_sp_own is None else self.branch_sp_own

    def as_tensor(self, features) -> torch.Tensor:
        p = next(self.parameters())
        return torch.as_tensor(features, dtype=p.dtype, device=p.device)

    def encode(self, token_ids) -> torch.Tensor:
        return self.encoder(token_ids)

    def streams(self, V: torch.Tensor, Q: torch.Tensor) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        if self.filter is None:
            return V, None
        return self.filter(V, Q)

    def enhanced(self, V, Q) -> Tuple[ProposalSet, MomentMap]:
        en, _ = self.streams(V, Q)
        mmap = self.branch_en.moment_map(en, Q, self.cfg.rule)
        return select(mmap, self.cfg.T, self.cfg.selector, ENHANCED), mmap

    def forward(self, V, Q) -> dict:
        en, sp = self.streams(V, Q)
        rule, T, sel = self.cfg.rule, self.cfg.T, self.cfg.selector
        en_map = self.branch_en.moment_map(en, Q, rule)
        out = {"en": select(en_map, T, sel, ENHANCED), "en_map": en_map, "sp": None, "sp_map": None}
        if sp is not None:
            sp_map = self.branch_sp.moment_map(sp, Q, rule)
            out["sp"], out["sp_map"] = select(sp_map, T, sel, SUPPRESSED), sp_map
        return out

    def sample_loss(self, V, Q, Q_neg, V_neg) -> LossBundle:
        """Loss for one positive pair (V, Q) with negatives (V, Q_neg) and (V_neg, Q)."""
        lc = self.cfg.loss
        pos = self(V, Q)
        k_en = pos["en"].k_sum
        if pos["sp"] is None:
            intra = k_en.new_zeros(())
        else:
            intra = intra_loss(k_en, pos["sp"].k_sum, lc.margin_intra)
        k_neg_s = self.enhanced(V, Q_neg)[0].k_sum
        k_neg_v = self.enhanced(V_neg, Q)[0].k_sum
        inter = inter_loss(k_en, k_neg_s, k_neg_v, lc.margin_inter)
        en_map = pos["en_map"]
        return total_loss(intra, inter, global_loss(en_map.scores, en_map.valid), gap_loss(pos["en"].scores), lc)

    @torch.no_grad()
    def rank_moments(self, V, Q) -> ProposalSet:
        """All valid enhanced-branch moments, highest score first."""
        _, mmap = self.enhanced(V, Q)
        return all_select(mmap, ENHANCED)
