# Copyright © 2025 mlx-popcast contributors.

import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Optional, Tuple

import numpy as np
from sklearn.utils import murmurhash3_32
from tqdm import tqdm

from .core import DIMENSIONS, EvidenceCard, PopcastError, SaliencyProfile, VideoRecord

BLOCKS = ("title", "transcript", "d1", "d2", "d3", "meta")
DEFAULT_BLOCK_DIMS = {
    "title": 256,
    "transcript": 512,
    "d1": 512,
    "d2": 512,
    "d3": 512,
    "meta": 32,
}
# sin(hour), cos(hour), snapshot day; the rest of the meta block is hashed.
META_FIXED = 3

_TOKEN_RE = re.compile(r"[^\W_]+")


class VideoCardMismatch(PopcastError):
    pass


class MissingCard(PopcastError):
    def __init__(self, video_id: str, snapshot_day: int):
        super().__init__(f"Video {video_id} has no evidence card at day {snapshot_day}.")
        self.video_id = video_id
        self.snapshot_day = snapshot_day


@dataclass
class FeaturizerConfig:
    block_dims: Dict[str, int] = field(default_factory=lambda: dict(DEFAULT_BLOCK_DIMS))
    hash_seed: int = 0
    normalize: bool = True

    def __post_init__(self):
        dims = dict(DEFAULT_BLOCK_DIMS)
        dims.update(self.block_dims)
        unknown = set(dims) - set(BLOCKS)
        if unknown:
            raise ValueError(f"Unknown feature blocks {sorted(unknown)}.")
        for name, d in dims.items():
            if int(d) < 1:
                raise ValueError(f"Feature block {name} needs at least one dimension.")
        if dims["meta"] < META_FIXED + 1:
            raise ValueError(f"The meta block needs at least {META_FIXED + 1} dimensions.")
        self.block_dims = {b: int(dims[b]) for b in BLOCKS}

    @classmethod
    def from_dict(cls, params: Dict) -> "FeaturizerConfig":
        return cls(**{k: v for k, v in params.items() if k in cls.__dataclass_fields__})

    @property
    def layout(self) -> Tuple[Tuple[str, int, int], ...]:
        out, start = [], 0
        for b in BLOCKS:
            out.append((b, start, start + self.block_dims[b]))
            start += self.block_dims[b]
        return tuple(out)

    @property
    def dim(self) -> int:
        return sum(self.block_dims.values())


@dataclass
class FeatureVector:
    values: np.ndarray
    layout: Tuple[Tuple[str, int, int], ...]

    def block(self, name: str) -> np.ndarray:
        for b, start, end in self.layout:
            if b == name:
                return self.values[start:end]
        raise KeyError(name)

    def __len__(self):
        return self.values.shape[0]


def tokenize(text: str) -> List[str]:
    return _TOKEN_RE.findall(text.lower())


def ngrams(tokens: List[str]) -> List[str]:
    """Unigrams followed by space-joined bigrams."""
    return tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]


def hash_terms(terms: List[str], dim: int, seed: int) -> np.ndarray:
    """
    Signed feature hashing: every term adds +1 or -1 at ``|h| mod dim``,
    the sign taken from the 32-bit murmur hash ``h``.
    """
    out = np.zeros(dim, dtype=np.float64)
    if not terms:
        return out
    h = np.array([murmurhash3_32(t, seed=seed) for t in terms], dtype=np.int64)
    np.add.at(out, np.abs(h) % dim, np.where(h >= 0, 1.0, -1.0))
    return out


def term_slot(term: str, dim: int, seed: int) -> Tuple[int, float]:
    """Index and sign a term is hashed to by ``hash_terms``."""
    h = murmurhash3_32(term, seed=seed)
    return abs(h) % dim, 1.0 if h >= 0 else -1.0


def text_block(text: str, dim: int, cfg: FeaturizerConfig) -> np.ndarray:
    """Hashed unigrams and bigrams of ``text``, unit norm when ``cfg.normalize``."""
    v = hash_terms(ngrams(tokenize(text)), dim, cfg.hash_seed)
    if cfg.normalize:
        norm = np.linalg.norm(v)
        if norm > 0:
            v /= norm
    return v


def _meta_block(video: VideoRecord, snapshot_day: int, cfg: FeaturizerConfig) -> np.ndarray:
    dim = cfg.block_dims["meta"]
    out = np.zeros(dim, dtype=np.float64)
    stamp = datetime.fromtimestamp(video.upload_time, tz=timezone.utc)
    hour = stamp.hour + stamp.minute / 60 + stamp.second / 3600
    out[0] = math.sin(2 * math.pi * hour / 24)
    out[1] = math.cos(2 * math.pi * hour / 24)
    out[2] = snapshot_day / 2
    terms = [f"dow={stamp.weekday()}", f"topic={video.topic_key}"]
    out[META_FIXED:] = hash_terms(terms, dim - META_FIXED, cfg.hash_seed)
    return out


def featurize(
    video: VideoRecord,
    card: EvidenceCard,
    saliency: Optional[SaliencyProfile] = None,
    cfg: FeaturizerConfig = None,
) -> FeatureVector:
    """
    Embed a video, one of its evidence cards and an optional saliency
    profile into a fixed-layout feature vector.

    Text blocks hold signed hashed unigram and bigram counts, scaled to unit
    norm when ``cfg.normalize`` is set. With a saliency profile every evidence
    block is scaled by its score over ten.
    """
    cfg = cfg or FeaturizerConfig()
    if card.video_id != video.video_id:
        raise VideoCardMismatch(
            f"Card for {card.video_id} cannot describe video {video.video_id}."
        )
    dims = cfg.block_dims
    blocks = [
        text_block(video.title, dims["title"], cfg),
        text_block(video.transcript, dims["transcript"], cfg),
    ]
    for k, dim in enumerate(card.dimensions()):
        v = text_block(dim.evidence, dims[DIMENSIONS[k]], cfg)
        if saliency is not None:
            v *= saliency.saliency[k] / 10
        blocks.append(v)
    blocks.append(_meta_block(video, card.snapshot_day, cfg))
    return FeatureVector(np.concatenate(blocks), cfg.layout)


def featurize_manifest(
    manifest,
    snapshot_day: int,
    cfg: FeaturizerConfig = None,
    use_saliency: bool = True,
    verbose: bool = False,
) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """
    Featurize every video of a dataset with its card at ``snapshot_day``.

    Returns:
        A tuple of the (N, d) feature matrix, the (N,) popularity targets and
        the video ids in dataset order.
    """
    cfg = cfg or FeaturizerConfig()
    X = np.zeros((len(manifest.records), cfg.dim), dtype=np.float64)
    y = np.zeros(len(manifest.records), dtype=np.float64)
    ids = []
    for i, r in enumerate(
        tqdm(manifest.records, desc="Featurizing", disable=not verbose)
    ):
        card = manifest.card(r.video_id, snapshot_day)
        if card is None:
            raise MissingCard(r.video_id, snapshot_day)
        sal = manifest.saliency_of(r.video_id) if use_saliency else None
        X[i] = featurize(r, card, sal, cfg).values
        y[i] = r.y
        ids.append(r.video_id)
    return X, y, ids
