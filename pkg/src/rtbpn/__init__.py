"""Weakly-supervised video moment retrieval with a language-aware filter and two proposal branches."""

from .data import (CorpusManifest, FrameSequence, Sample, SynthesisConfig, load_split, mean_pool,
                   synthesize_corpus, write_corpus)
from .errors import ConfigurationError, ContractViolation, IngestionError, RTBPNError
from .evaluation import EvalReport, PredictionRecord, evaluate, mean_iou, nms, recall_at, temporal_iou
from .language_filter import LanguageFilter
from .model import RTBPN, RunConfig
from .objectives import LossBundle, LossConfig
from .proposals import ProposalBranch, ProposalSet, SamplingRule
from .text_encoder import TextEncoder
from .training import fit, load_checkpoint, predict, save_checkpoint, train_step

__version__ = "0.1.0"

__all__ = [
    "CorpusManifest", "FrameSequence", "Sample", "SynthesisConfig", "load_split", "mean_pool", "synthesize_corpus",
    "write_corpus", "ConfigurationError", "ContractViolation", "IngestionError", "RTBPNError", "EvalReport",
    "PredictionRecord", "evaluate", "mean_iou", "nms", "recall_at", "temporal_iou", "LanguageFilter", "RTBPN",
    "RunConfig", "LossBundle", "LossConfig", "ProposalBranch", "ProposalSet", "SamplingRule", "TextEncoder", "fit",
    "load_checkpoint", "predict", "save_checkpoint", "train_step",
]
