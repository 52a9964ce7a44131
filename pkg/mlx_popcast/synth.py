# Copyright © 2025 mlx-popcast contributors.

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from .core import (
    DIMENSIONS,
    HORIZON_DAYS,
    SECONDS_PER_DAY,
    SOURCE_KINDS,
    EvidenceCard,
    EvidenceDimension,
    GrowthType,
    PopcastError,
    SaliencyProfile,
    SourceEntry,
    VideoRecord,
    ViewCurve,
)
from .datasets import DatasetManifest, dump_dataset
from .featurizer import FeaturizerConfig, term_slot, text_block
from .utils import write_json

GROWTH_TYPES = ("initial_viral", "delayed_viral", "typical")
# Growth ratio ranges drawn per type; rounding keeps every curve inside
# [0.8, 1], [0, 0.15] and [0.3, 0.6] respectively.
GROWTH_RANGES = {
    "initial_viral": (0.82, 0.97),
    "delayed_viral": (0.03, 0.14),
    "typical": (0.32, 0.58),
}
DIMENSION_WEIGHTS = {"d1": 0.35, "d2": 0.15, "d3": 0.5}
DOMAINS = (
    "news.example.org",
    "forum.example.net",
    "social.example.com",
    "clips.example.tv",
    "press.example.gov",
    "blog.example.io",
)
# Floor of the popularity target: at least 10 views on day 7.
MIN_TARGET = math.log2(11)
MAX_TARGET = 24.0


class InvalidMixture(PopcastError):
    pass


@dataclass
class SynthConfig:
    n_videos: int = 1000
    topics: List[str] = field(default_factory=lambda: [f"topic{i}" for i in range(8)])
    mixture: Dict[str, float] = field(
        default_factory=lambda: {
            "initial_viral": 0.12,
            "delayed_viral": 0.12,
            "typical": 0.76,
        }
    )
    # Seconds after the first upload.
    drift_times: List[float] = field(default_factory=list)
    drift_magnitude: float = 3.0
    noise_sigma: float = 0.3
    vocab_size: int = 60
    tokens_per_field: int = 6
    trend_pool: int = 20
    evidence_scale: float = 8.0
    content_scale: float = 1.5
    base_level: float = 12.0
    upload_interval: float = 3600.0
    start_time: float = 1_700_000_000.0
    seed: int = 0
    # Featurizer settings the popularity map is linear under.
    featurizer: Dict = field(default_factory=dict)

    def __post_init__(self):
        if set(self.mixture) != set(GROWTH_TYPES):
            raise InvalidMixture(f"The mixture needs exactly the keys {GROWTH_TYPES}.")
        if any(p < 0 for p in self.mixture.values()):
            raise InvalidMixture("Mixture probabilities must be non-negative.")
        if abs(sum(self.mixture.values()) - 1.0) > 1e-9:
            raise InvalidMixture(
                f"Mixture probabilities sum to {sum(self.mixture.values())}, not 1."
            )
        if self.n_videos < 1:
            raise ValueError("n_videos must be at least 1.")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative.")
        if not self.topics:
            raise ValueError("At least one topic is needed.")
        if self.tokens_per_field < 1 or self.vocab_size < self.tokens_per_field:
            raise ValueError("vocab_size must be at least tokens_per_field >= 1.")
        if self.trend_pool < 1 or self.upload_interval <= 0:
            raise ValueError("trend_pool and upload_interval must be positive.")
        self.drift_times = sorted(float(t) for t in self.drift_times)

    @classmethod
    def from_dict(cls, params: Dict) -> "SynthConfig":
        return cls(**{k: v for k, v in params.items() if k in cls.__dataclass_fields__})


@dataclass
class VideoTruth:
    growth_type: str
    y_star: float
    drift_regime: int
    is_drift_affected: bool


@dataclass
class SynthTruth:
    videos: Dict[str, VideoTruth]
    drift_times: List[float]

    def drift_flags(self) -> Dict[str, bool]:
        return {vid: t.is_drift_affected for vid, t in self.videos.items()}

    def to_dict(self) -> Dict:
        return {
            "drift_times": self.drift_times,
            "videos": {vid: dataclasses.asdict(t) for vid, t in self.videos.items()},
        }


def _curve(v7: int, gamma: float, growth: str) -> Tuple[int, ...]:
    if growth == "initial_viral":
        v2 = math.ceil(gamma * v7)
        early, late = (0.6, 0.85), 0.5
    elif growth == "delayed_viral":
        v2 = math.floor(gamma * v7)
        early, late = (0.3, 0.6), 2.0
    else:
        v2 = min(max(round(gamma * v7), math.ceil(0.3 * v7)), math.floor(0.6 * v7))
        early, late = (0.35, 0.7), 1.0
    views = [math.floor(v2 * early[0]), math.floor(v2 * early[1]), v2]
    for d in range(3, HORIZON_DAYS + 1):
        frac = ((d - 2) / (HORIZON_DAYS - 2)) ** late
        views.append(math.floor(v2 + (v7 - v2) * frac))
    views[HORIZON_DAYS] = v7
    return tuple(int(v) for v in np.maximum.accumulate(views))


def _dimension(
    tokens: List[str], vid: str, dim: str, topic: str, day: int, search_time: float
) -> EvidenceDimension:
    stamp = datetime.fromtimestamp(search_time, tz=timezone.utc).date()
    sources = []
    for j in range(2):
        # The first source is carried over by every snapshot, the second is new.
        tag = f"{dim}-{j}" if j == 0 else f"{dim}-{j}-t{day}"
        k = (hash_index(vid) + j + DIMENSIONS.index(dim)) % len(DOMAINS)
        sources.append(
            SourceEntry(
                id=f"s{j}",
                source=DOMAINS[k],
                kind=SOURCE_KINDS[k],
                url=f"https://{DOMAINS[k]}/{topic}/{vid}/{tag}",
                date=stamp,
            )
        )
    return EvidenceDimension(
        evidence=" ".join(tokens),
        source_ids=tuple(s.id for s in sources),
        source_index=tuple(sources),
    )


def hash_index(video_id: str) -> int:
    """Stable small integer derived from the digits of a video id."""
    return sum(ord(c) for c in video_id)


class _LatentMap:
    """
    Popularity weights over the hashed text blocks of the featurizer.

    Every informative unigram puts its weight on the slot and sign it hashes
    to. Contributions are dot products with the featurizer's own blocks, so
    ``y*`` is exactly linear in the featurized day-2 snapshot whatever the
    bigrams and collisions add. The transcript and meta blocks carry no
    signal.
    """

    def __init__(self, feat: FeaturizerConfig):
        self.feat = feat
        self.blocks = {b: np.zeros(feat.block_dims[b]) for b in ("title",) + DIMENSIONS}

    def unit(self, n_tokens: int) -> float:
        # Hashed norm of n distinct tokens and their n - 1 bigrams, collisions aside.
        return math.sqrt(2 * n_tokens - 1) if self.feat.normalize else 1.0

    def add(self, block: str, terms: List[str], values: np.ndarray, gain: float):
        w = self.blocks[block]
        for term, value in zip(terms, values):
            i, sign = term_slot(term, w.shape[0], self.feat.hash_seed)
            w[i] += sign * value * gain

    def shifted(self, block: str, terms: List[str], shift: float, gain: float):
        out = _LatentMap(self.feat)
        out.blocks = {b: w.copy() for b, w in self.blocks.items()}
        out.add(block, terms, np.full(len(terms), shift), gain)
        return out

    def contribution(self, block: str, text: str) -> float:
        x = text_block(text, self.feat.block_dims[block], self.feat)
        return float(self.blocks[block] @ x)


def generate(cfg: SynthConfig) -> Tuple[DatasetManifest, SynthTruth]:
    """
    Generate a synthetic stream whose popularity is a linear function of the
    hashed evidence and title features.

    Viral videos carry one trend token in their related-content evidence.
    Every drift time raises the weight of all trend tokens by
    ``drift_magnitude``, so the mapping shifts for viral videos (and, through
    hash collisions, marginally for others).
    Saliency scores follow the magnitude of each evidence block's
    contribution and scale that contribution, as the featurizer scales the
    block.
    """
    rng = np.random.default_rng(cfg.seed)
    feat = FeaturizerConfig.from_dict(cfg.featurizer)
    pools = {
        name: [f"{name}tok{i}" for i in range(cfg.vocab_size)]
        for name in ("title", "transcript") + DIMENSIONS
    }
    weights = {name: rng.normal(size=cfg.vocab_size) for name in pools}
    trend_tokens = [f"trend{i}" for i in range(cfg.trend_pool)]
    trend_weights = rng.normal(size=cfg.trend_pool)
    fillers = [f"filler{i}" for i in range(cfg.vocab_size)]
    topic_offsets = rng.normal(scale=0.5, size=len(cfg.topics))
    mixture = [cfg.mixture[g] for g in GROWTH_TYPES]
    k = cfg.tokens_per_field

    base = _LatentMap(feat)
    # The title holds the topic followed by k tokens.
    title_unit = base.unit(k + 1)
    title_gain = cfg.content_scale * title_unit / k
    base.add("title", pools["title"], weights["title"], title_gain)
    base.add("title", list(cfg.topics), topic_offsets, title_unit)
    for dim in DIMENSIONS:
        gain = cfg.evidence_scale * DIMENSION_WEIGHTS[dim] * base.unit(k) / k
        base.add(dim, pools[dim], weights[dim], gain)
    # Trend tokens only occur as the (k + 1)-th related-content token.
    trend_gain = base.unit(k + 1)
    base.add("d3", trend_tokens, trend_weights, trend_gain)
    regimes = [base]
    for _ in cfg.drift_times:
        regimes.append(
            regimes[-1].shifted("d3", trend_tokens, cfg.drift_magnitude, trend_gain)
        )

    def draw(name):
        idx = rng.choice(cfg.vocab_size, size=k, replace=False)
        return [pools[name][i] for i in idx]

    records, cards, saliency, truth = [], {}, {}, {}
    for i in range(cfg.n_videos):
        vid = f"v{i:05d}"
        offset = i * cfg.upload_interval
        upload_time = cfg.start_time + offset
        topic = cfg.topics[int(rng.integers(len(cfg.topics)))]
        growth = GROWTH_TYPES[int(rng.choice(len(GROWTH_TYPES), p=mixture))]
        viral = growth != "typical"
        regime = int(np.searchsorted(cfg.drift_times, offset, side="right"))
        latent = regimes[regime]

        title = " ".join([topic] + draw("title"))
        transcript = " ".join(draw("transcript"))
        dim_tokens = {dim: draw(dim) for dim in DIMENSIONS}
        if viral:
            dim_tokens["d3"].append(trend_tokens[int(rng.integers(cfg.trend_pool))])

        # Contributions of the day-2 snapshot, which carries no filler.
        contributions = np.array(
            [latent.contribution(d, " ".join(dim_tokens[d])) for d in DIMENSIONS]
        )
        magnitude = np.abs(contributions)
        top = magnitude.max()
        scores = (
            tuple(1 + int(round(9 * m / top)) for m in magnitude)
            if top > 0
            else (5, 5, 5)
        )
        y_star = cfg.base_level + latent.contribution("title", title)
        y_star += float(np.dot(scores, contributions)) / 10
        y = y_star + (rng.normal(scale=cfg.noise_sigma) if cfg.noise_sigma > 0 else 0.0)
        y = min(max(y, MIN_TARGET), MAX_TARGET)
        v7 = int(round(2**y - 1))
        gamma = rng.uniform(*GROWTH_RANGES[growth])
        curve = ViewCurve(_curve(v7, gamma, growth))

        records.append(
            VideoRecord(
                video_id=vid,
                upload_time=upload_time,
                title=title,
                transcript=transcript,
                topic_key=topic,
                curve=curve,
            )
        )
        for day in range(3):
            search_time = upload_time + day * SECONDS_PER_DAY + 3600
            dims = []
            for dim in DIMENSIONS:
                # Earlier snapshots carry uninformative filler tokens.
                idx = rng.choice(len(fillers), size=2 - day, replace=False)
                tokens = dim_tokens[dim] + [fillers[j] for j in idx]
                dims.append(_dimension(tokens, vid, dim, topic, day, search_time))
            cards[(vid, day)] = EvidenceCard(vid, day, *dims, search_time=search_time)

        saliency[vid] = SaliencyProfile(scores)
        truth[vid] = VideoTruth(
            growth_type=GrowthType(growth).value,
            y_star=float(y_star),
            drift_regime=regime,
            is_drift_affected=bool(viral and regime > 0),
        )

    logging.info(
        f"Generated {cfg.n_videos} synthetic videos with "
        f"{len(cfg.drift_times)} drift events."
    )
    return DatasetManifest(records, cards, saliency), SynthTruth(truth, cfg.drift_times)


def write_synth(
    manifest: DatasetManifest, truth: SynthTruth, out_dir: Union[str, Path]
) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    dataset_path = out_dir / "dataset.jsonl"
    truth_path = out_dir / "truth.json"
    dump_dataset(manifest, dataset_path)
    write_json(truth_path, truth.to_dict())
    return dataset_path, truth_path
