"""Training loop, checkpoints and inference helpers.

Training code only touches ``Sample.frames`` and ``Sample.token_ids``; the
ground-truth span of a train sample raises ContractViolation if read.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch

from .data import Sample
from .errors import ConfigurationError, ContractViolation
from .evaluation import EvalReport, PredictionRecord, evaluate, nms, spans_from_proposals
from .model import RTBPN, RunConfig
from .objectives import LossBundle, sample_negatives, total_loss

log = logging.getLogger(__name__)

SELECTION_METRIC = (1, 0.5)


def seed_everything(seed: int) -> np.random.Generator:
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def build_model(vocab_size: int, frame_dim: int, cfg: RunConfig) -> RTBPN:
    torch.manual_seed(cfg.seed)
    return RTBPN(vocab_size, frame_dim, cfg)


def make_optimizer(model: RTBPN, cfg: RunConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam([p for p in model.parameters() if p.requires_grad], lr=cfg.lr)


class FeatureCache:
    """Frame tensors keyed by video id, converted once to the model dtype."""

    def __init__(self, model: RTBPN):
        self.model = model
        self._store: Dict[str, torch.Tensor] = {}

    def __call__(self, sample: Sample) -> torch.Tensor:
        t = self._store.get(sample.video_id)
        if t is None:
            t = self._store[sample.video_id] = self.model.as_tensor(sample.frames.features)
        return t


def batch_loss(model: RTBPN, samples: Sequence[Sample], batch: Sequence[int],
               negatives: Sequence[tuple], frames: Callable[[Sample], torch.Tensor]) -> LossBundle:
    """Mean of the per-sample weighted losses over a batch."""
    parts = []
    for i, (j, k) in zip(batch, negatives):
        pos = samples[i]
        V = frames(pos)
        Q = model.encode(pos.token_ids)
        Q_neg = model.encode(samples[j].token_ids)
        parts.append(model.sample_loss(V, Q, Q_neg, frames(samples[k])))
    mean = lambda attr: torch.stack([getattr(p, attr) for p in parts]).mean()
    return total_loss(mean("intra"), mean("inter"), mean("global_"), mean("gap"), model.cfg.loss)


def train_step(model: RTBPN, optimizer: torch.optim.Optimizer, samples: Sequence[Sample], batch: Sequence[int],
               rng: np.random.Generator, frames: Optional[Callable] = None) -> LossBundle:
    """One optimizer step on the batch-mean total loss."""
    for i in batch:
        if samples[i].split != "train":
            raise ContractViolation(f"train_step received a {samples[i].split!r} sample")
    frames = frames or FeatureCache(model)
    negatives = sample_negatives(batch, len(samples), rng, [s.video_id for s in samples])
    model.train()
    optimizer.zero_grad()
    bundle = batch_loss(model, samples, batch, negatives, frames)
    bundle.total.backward()
    optimizer.step()
    return LossBundle(*(t.detach() for t in (bundle.intra, bundle.inter, bundle.global_, bundle.gap, bundle.total)))


def predict(model: RTBPN, sample: Sample, topn: int = 1, frames: Optional[Callable] = None) -> PredictionRecord:
    """Rank enhanced-branch moments; NMS when more than one span is requested."""
    model.eval()
    V = frames(sample) if frames else model.as_tensor(sample.frames.features)
    with torch.no_grad():
        ranked = model.rank_moments(V, model.encode(sample.token_ids))
    record = spans_from_proposals(ranked, sample.frames.seconds_per_index, sample.video_id)
    spans = nms(record.spans, model.cfg.nms_threshold) if topn > 1 else record.spans
    return PredictionRecord(sample.video_id, spans[:topn])


def evaluate_model(model: RTBPN, samples: Sequence[Sample], topn: int = 5,
                   frames: Optional[Callable] = None) -> EvalReport:
    records = [predict(model, s, topn, frames) for s in samples]
    return evaluate(records, [s.gt_span_seconds for s in samples], nms_threshold=model.cfg.nms_threshold)


@dataclass
class FitResult:
    model: RTBPN
    optimizer: torch.optim.Optimizer
    history: List[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_state: Optional[dict] = None

    def restore_best(self) -> RTBPN:
        if self.best_state is not None:
            self.model.load_state_dict(self.best_state)
        return self.model


def fit(train: Sequence[Sample], cfg: RunConfig, vocab_size: int, frame_dim: int,
        val: Sequence[Sample] = (), on_epoch: Optional[Callable[[dict], None]] = None) -> FitResult:
    """Train for cfg.epochs; keep the parameters with the best val R@1,IoU=0.5."""
    if len({s.video_id for s in train}) < 2:
        raise ConfigurationError("training needs at least two videos")
    model = build_model(vocab_size, frame_dim, cfg)
    optimizer = make_optimizer(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    cache = FeatureCache(model)
    batch_size = min(cfg.batch_size, len(train))
    result = FitResult(model, optimizer)
    best = -math.inf
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = [int(i) for i in order[start:start + batch_size]]
            losses.append(train_step(model, optimizer, train, batch, rng, cache).as_floats())
        entry = {"epoch": epoch, **{k: float(np.mean([l[k] for l in losses])) for k in losses[0]}}
        if val:
            report = evaluate_model(model, val, frames=cache)
            entry["val"] = report.to_json()
            score = report.recall[SELECTION_METRIC]
            if score > best:
                best = score
                result.best_epoch = epoch
                result.best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        result.history.append(entry)
        log.info("epoch %d: %s", epoch, {k: v for k, v in entry.items() if k != "val"})
        if on_epoch:
            on_epoch(entry)
    return result


def save_checkpoint(path, model: RTBPN, optimizer: Optional[torch.optim.Optimizer] = None, epoch: int = -1,
                    rng: Optional[np.random.Generator] = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "config": model.cfg.to_dict(),
        "config_hash": model.cfg.hash(),
        "vocab_size": model.vocab_size,
        "frame_dim": model.frame_dim,
        "state_dict": model.state_dict(),
        "optimizer": None if optimizer is None else optimizer.state_dict(),
        "epoch": epoch,
        "rng_state": None if rng is None else rng.bit_generator.state,
        "torch_rng_state": torch.get_rng_state(),
    }, path)


def load_checkpoint(path, expected: Optional[RunConfig] = None, force: bool = False):
    """Returns (model, checkpoint dict). Refuses a config/hash mismatch unless force."""
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    cfg = RunConfig.from_dict(ckpt["config"])
    if not force:
        if cfg.hash() != ckpt["config_hash"]:
            raise ConfigurationError(f"{path}: stored config does not match its hash")
        if expected is not None and expected.hash() != ckpt["config_hash"]:
            raise ConfigurationError(f"{path}: checkpoint config {ckpt['config_hash']} differs from "
                                     f"expected {expected.hash()}")
    model = RTBPN(ckpt["vocab_size"], ckpt["frame_dim"], cfg)
    model.load_state_dict(ckpt["state_dict"])
    model.eval()
    return model, ckpt
