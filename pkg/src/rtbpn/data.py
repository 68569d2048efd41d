"""Synthetic corpora, on-disk ingestion and temporal mean pooling.

A corpus directory looks like::

    DIR/
      train/manifest.json
      train/features/<video_id>.csv
      val/...
      test/...

Feature files hold one frame per row as comma-separated decimals. Ground-truth
spans are stored in seconds and are only converted to frame indices at
evaluation time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, ContractViolation, IngestionError

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class FrameSequence:
    features: np.ndarray
    seconds_per_index: float = 1.0

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ValueError(f"features must be a non-empty 2D matrix, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite values")
        if not self.seconds_per_index > 0:
            raise ValueError("seconds_per_index must be positive")
        object.__setattr__(self, "features", feats)

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def duration(self) -> float:
        return self.num_frames * self.seconds_per_index


@dataclass
class SentenceEntry:
    token_ids: List[int]
    gt_span_seconds: Optional[Tuple[float, float]] = None


@dataclass
class VideoEntry:
    video_id: str
    feature_path: str
    sentences: List[SentenceEntry]
    seconds_per_index: float = 1.0


@dataclass
class CorpusManifest:
    entries: List[VideoEntry]
    vocab_size: int
    feature_dim: int
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ConfigurationError(f"unknown split {self.split!r}")

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "vocab_size": self.vocab_size,
            "feature_dim": self.feature_dim,
            "entries": [
                {
                    "video_id": e.video_id,
                    "feature_path": e.feature_path,
                    "seconds_per_index": e.seconds_per_index,
                    "sentences": [
                        {
                            "token_ids": list(s.token_ids),
                            "gt_span_seconds": None if s.gt_span_seconds is None else list(s.gt_span_seconds),
                        }
                        for s in e.sentences
                    ],
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusManifest":
        entries = []
        for e in d["entries"]:
            sents = []
            for s in e["sentences"]:
                gt = s.get("gt_span_seconds")
                sents.append(SentenceEntry([int(t) for t in s["token_ids"]], None if gt is None else (float(gt[0]), float(gt[1]))))
            entries.append(VideoEntry(e["video_id"], e["feature_path"], sents, float(e.get("seconds_per_index", 1.0))))
        return cls(entries, int(d["vocab_size"]), int(d["feature_dim"]), d.get("split", "train"))


@dataclass
class SynthesisConfig:
    num_videos: int = 200
    raw_frames_range: Tuple[int, int] = (48, 96)
    vocab_size: int = 40
    sentence_len_range: Tuple[int, int] = (3, 6)
    moment_frac_range: Tuple[float, float] = (0.2, 0.45)
    signal_strength: float = 2.0
    noise_std: float = 1.0
    seed: int = 7
    feature_dim: int = 32
    num_val: int = 50
    num_test: int = 50
    seconds_per_frame: float = 1.0

    def validate(self) -> None:
        lo, hi = self.raw_frames_range
        if not 1 <= lo <= hi:
            raise ConfigurationError(f"raw_frames_range {self.raw_frames_range} is empty")
        lo, hi = self.sentence_len_range
        if not 1 <= lo <= hi:
            raise ConfigurationError(f"sentence_len_range {self.sentence_len_range} is empty")
        if hi > self.vocab_size:
            raise ConfigurationError("sentences longer than the vocabulary are not supported")
        lo, hi = self.moment_frac_range
        if not 0 < lo <= hi <= 1:
            raise ConfigurationError(f"moment_frac_range {self.moment_frac_range} must lie in (0, 1]")
        if self.signal_strength < 0 or self.noise_std < 0:
            raise ConfigurationError("signal_strength and noise_std must be non-negative")
        if self.num_videos < 1 or self.num_val < 0 or self.num_test < 0:
            raise ConfigurationError("split sizes must be non-negative and train non-empty")
        if self.feature_dim < 1 or self.vocab_size < 1:
            raise ConfigurationError("feature_dim and vocab_size must be positive")
        if not self.seconds_per_frame > 0:
            raise ConfigurationError("seconds_per_frame must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisConfig":
        d = dict(d)
        for key in ("raw_frames_range", "sentence_len_range", "moment_frac_range"):
            if key in d:
                d[key] = tuple(d[key])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown synthesis options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SyntheticCorpus:
    manifests: Dict[str, CorpusManifest]
    features: Dict[str, Dict[str, np.ndarray]]
    prototypes: np.ndarray


def token_prototypes(vocab_size: int, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x5EED])
    return rng.standard_normal((vocab_size, dim))


def planted_signal(tokens: Sequence[int], span: int, prototypes: np.ndarray) -> np.ndarray:
    """Mean token prototype, rescaled to unit RMS, repeated over every frame of a span."""
    v = prototypes[list(tokens)].mean(axis=0)
    rms = np.sqrt(np.mean(v ** 2))
    return np.tile(v / rms if rms > 0 else v, (span, 1))


def synthesize_corpus(cfg: SynthesisConfig) -> SyntheticCorpus:
    cfg.validate()
    protos = token_prototypes(cfg.vocab_size, cfg.feature_dim, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    manifests, features = {}, {}
    for split, count in (("train", cfg.num_videos), ("val", cfg.num_val), ("test", cfg.num_test)):
        entries, feats = [], {}
        for i in range(count):
            vid = f"{split}_{i:05d}"
            n = int(rng.integers(cfg.raw_frames_range[0], cfg.raw_frames_range[1] + 1))
            length = int(rng.integers(cfg.sentence_len_range[0], cfg.sentence_len_range[1] + 1))
            tokens = sorted(int(t) for t in rng.choice(cfg.vocab_size, size=length, replace=False))
            tokens = [int(t) for t in rng.permutation(tokens)]
            frac = rng.uniform(*cfg.moment_frac_range)
            span = min(n, max(1, int(round(frac * n))))
            start = int(rng.integers(0, n - span + 1))
            x = rng.standard_normal((n, cfg.feature_dim)) * cfg.noise_std
            x[start:start + span] += cfg.signal_strength * planted_signal(tokens, span, protos)
            feats[vid] = x
            gt = (start * cfg.seconds_per_frame, (start + span) * cfg.seconds_per_frame)
            entries.append(VideoEntry(vid, f"features/{vid}.csv", [SentenceEntry(tokens, gt)], cfg.seconds_per_frame))
        manifests[split] = CorpusManifest(entries, cfg.vocab_size, cfg.feature_dim, split)
        features[split] = feats
    return SyntheticCorpus(manifests, features, protos)


def write_features(path, features: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.atleast_2d(features), delimiter=",", fmt="%.17g")


def write_manifest(path, manifest: CorpusManifest) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(manifest.to_dict(), f, indent=1, sort_keys=True)
        f.write("\n")


def write_corpus(corpus: SyntheticCorpus, out_dir) -> None:
    out_dir = Path(out_dir)
    for split, manifest in corpus.manifests.items():
        for entry in manifest.entries:
            write_features(out_dir / split / entry.feature_path, corpus.features[split][entry.video_id])
        write_manifest(out_dir / split / "manifest.json", manifest)


def load_manifest(path) -> CorpusManifest:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"manifest not found: {path}")
    try:
        with open(path) as f:
            return CorpusManifest.from_dict(json.load(f))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise IngestionError(f"malformed manifest {path}: {exc}") from exc


def load_features(path, seconds_per_index: float = 1.0, expected_dim: Optional[int] = None) -> FrameSequence:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"feature file not found: {path}")
    try:
        feats = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise IngestionError(f"unparseable feature file {path}: {exc}") from exc
    if expected_dim is not None and feats.shape[1] != expected_dim:
        raise IngestionError(f"{path}: {feats.shape[1]} columns, manifest declares feature_dim={expected_dim}")
    try:
        return FrameSequence(feats, seconds_per_index)
    except ValueError as exc:
        raise IngestionError(f"{path}: {exc}") from exc


def mean_pool(seq: FrameSequence, stride: int) -> FrameSequence:
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if stride == 1:
        return seq
    n = seq.num_frames
    n_out = math.ceil(n / stride)
    # reduceat averages over [j*stride, min((j+1)*stride, n))
    starts = np.arange(n_out) * stride
    sums = np.add.reduceat(seq.features, starts, axis=0)
    counts = np.minimum(starts + stride, n) - starts
    return FrameSequence(sums / counts[:, None], seq.seconds_per_index * stride)


class Sample:
    """One (video, sentence) pair as seen by training or evaluation code.

    On the train split the ground-truth span is sealed: reading it raises
    ContractViolation.
    """

    __slots__ = ("video_id", "frames", "token_ids", "split", "_gt")

    def __init__(self, video_id: str, frames: FrameSequence, token_ids: Sequence[int],
                 gt_span_seconds: Optional[Tuple[float, float]], split: str):
        self.video_id = video_id
        self.frames = frames
        self.token_ids = list(token_ids)
        self.split = split
        self._gt = gt_span_seconds

    @property
    def gt_span_seconds(self) -> Optional[Tuple[float, float]]:
        if self.split == "train":
            raise ContractViolation(f"ground truth of train sample {self.video_id} is not available to training code")
        return self._gt

    def __repr__(self):
        return f"Sample({self.video_id!r}, n_v={self.frames.num_frames}, tokens={self.token_ids}, split={self.split!r})"


def load_split(data_dir, split: str, stride: int = 1) -> Tuple[CorpusManifest, List[Sample]]:
    """Load a split directory into pooled samples, validating every entry."""
    split_dir = Path(data_dir) / split
    manifest = load_manifest(split_dir / "manifest.json")
    samples = []
    for entry in manifest.entries:
        try:
            frames = load_features(split_dir / entry.feature_path, entry.seconds_per_index, manifest.feature_dim)
        except IngestionError as exc:
            raise IngestionError(f"entry {entry.video_id!r}: {exc}") from exc
        frames = mean_pool(frames, stride)
        for sent in entry.sentences:
            if any(t < 0 or t >= manifest.vocab_size for t in sent.token_ids):
                raise IngestionError(f"entry {entry.video_id!r}: token id outside vocabulary of {manifest.vocab_size}")
            gt = sent.gt_span_seconds
            if gt is not None and not (0 <= gt[0] < gt[1] <= frames.duration + 1e-9):
                raise IngestionError(f"entry {entry.video_id!r}: gt span {gt} outside video duration {frames.duration}")
            samples.append(Sample(entry.video_id, frames, sent.token_ids, gt, split))
    return manifest, samples
