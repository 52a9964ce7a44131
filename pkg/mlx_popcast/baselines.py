# Copyright © 2025 mlx-popcast contributors.

from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .drift import AnchorBuffer, DriftConfig, sample_anchor
from .models.predictor import Model
from .stream import (
    AdaptationEvent,
    GrowthConditionedAdaptation,
    NoAdaptation,
    OnlineStrategy,
)
from .tuner.datasets import ArrayDataset
from .tuner.trainer import TrainConfig, online_update

METHODS = ("none", "shortscast", "cache_knn", "residual", "ogd", "er")


@dataclass
class BaselineConfig:
    k: int = 8
    capacity: int = 1000
    mix_lambda: float = 0.5
    rho: float = 0.9
    replay_size: int = 1024
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.capacity < 1:
            raise ValueError("k and capacity must be at least 1.")
        if not 0 <= self.mix_lambda <= 1:
            raise ValueError("mix_lambda must lie in [0, 1].")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1).")
        if self.batch_size < 1 or self.replay_size < 1:
            raise ValueError("batch_size and replay_size must be at least 1.")

    @classmethod
    def from_dict(cls, params: Dict) -> "BaselineConfig":
        return cls(**{k: v for k, v in params.items() if k in cls.__dataclass_fields__})


class KnnCache:
    """First-in first-out store of (hidden state, label) pairs."""

    def __init__(self, capacity: int = 1000, k: int = 8, mix_lambda: float = 0.5):
        if k < 1:
            raise ValueError("k must be at least 1.")
        self.capacity = capacity
        self.k = k
        self.mix_lambda = mix_lambda
        self.entries = deque(maxlen=capacity)

    def add(self, h: np.ndarray, y: float):
        self.entries.append((np.asarray(h, dtype=np.float64), float(y)))

    def __len__(self):
        return len(self.entries)


def cosine_neighbors(h: np.ndarray, keys: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` rows of ``keys`` most cosine-similar to ``h``."""
    norms = np.linalg.norm(keys, axis=1) * np.linalg.norm(h)
    sims = np.divide(keys @ h, norms, out=np.zeros(keys.shape[0]), where=norms > 0)
    return np.argsort(-sims, kind="stable")[:k]


def cache_knn_predict(h: np.ndarray, y_hat: float, cache: KnnCache) -> float:
    if len(cache) == 0:
        return y_hat
    keys = np.stack([e[0] for e in cache.entries])
    labels = np.array([e[1] for e in cache.entries])
    top = cosine_neighbors(np.asarray(h, dtype=np.float64), keys, min(cache.k, len(cache)))
    lam = cache.mix_lambda
    return lam * y_hat + (1 - lam) * float(np.mean(labels[top]))


class TopicResidualStore:
    def __init__(self, rho: float = 0.9):
        if not 0 < rho < 1:
            raise ValueError("rho must lie in (0, 1).")
        self.rho = rho
        self.residuals: Dict[str, float] = {}

    def __getitem__(self, topic_key: str) -> float:
        return self.residuals.get(topic_key, 0.0)


def residual_correct_and_update(
    topic_key: str,
    y_hat: float,
    y: Optional[float],
    store: TopicResidualStore,
) -> float:
    """
    Subtract the topic's running residual from ``y_hat``. When the label is
    given the residual then decays towards the error ``y_hat - y``; the
    returned correction uses the residual before that update.
    """
    r = store[topic_key]
    if y is not None:
        store.residuals[topic_key] = store.rho * r + (1 - store.rho) * (y_hat - y)
    return y_hat - r


def ogd_adapter_step(
    model: Model, X: np.ndarray, y: np.ndarray, cfg: TrainConfig = None
) -> Model:
    if len(y) == 0:
        return model
    return online_update(model, X, y, cfg)


def er_adapter_step(
    model: Model,
    X: np.ndarray,
    y: np.ndarray,
    replay: Optional[AnchorBuffer],
    rng: np.random.Generator,
    cfg: TrainConfig = None,
) -> Tuple[Model, List[str]]:
    """
    Update on a revealed batch joined by a uniform replay draw of the same
    size.

    Returns:
        The updated model and the ids of the replayed samples.
    """
    if replay is None or len(replay) == 0:
        return ogd_adapter_step(model, X, y, cfg), []
    if len(y) == 0:
        return model, []
    draw = rng.choice(len(replay), size=min(len(y), len(replay)), replace=False)
    X = np.concatenate([np.atleast_2d(X), replay.X[draw]])
    y = np.concatenate([np.asarray(y, dtype=np.float64), replay.y[draw]])
    return online_update(model, X, y, cfg), [replay.ids[i] for i in draw]


class CacheKnn(OnlineStrategy):
    name = "cache_knn"

    def __init__(self, cfg: BaselineConfig = None):
        cfg = cfg or BaselineConfig()
        self.cache = KnnCache(cfg.capacity, cfg.k, cfg.mix_lambda)

    def correct(self, video, y_hat, h):
        return cache_knn_predict(h, y_hat, self.cache)

    def on_reveal(self, model, video, pending, sample, at):
        self.cache.add(pending.h, sample.y)
        return model, None


class TopicResidual(OnlineStrategy):
    name = "residual"

    def __init__(self, cfg: BaselineConfig = None):
        cfg = cfg or BaselineConfig()
        self.store = TopicResidualStore(cfg.rho)

    def correct(self, video, y_hat, h):
        return residual_correct_and_update(video.topic_key, y_hat, None, self.store)

    def on_reveal(self, model, video, pending, sample, at):
        residual_correct_and_update(video.topic_key, pending.y_raw, sample.y, self.store)
        return model, None


class OnlineGradientDescent(OnlineStrategy):
    """Adapter updates on every batch of revealed labels, without any gate."""

    name = "ogd"

    def __init__(self, cfg: BaselineConfig = None, train_cfg: TrainConfig = None):
        self.cfg = cfg or BaselineConfig()
        self.train_cfg = train_cfg or TrainConfig()
        self.batch = []

    def _step(self, model, X, y):
        return ogd_adapter_step(model, X, y, self.train_cfg), []

    def _flush(self, model, at):
        X = np.stack([p.feature for p, _ in self.batch])
        y = np.array([s.y for _, s in self.batch])
        ids = [s.video_id for _, s in self.batch]
        self.batch = []
        model, replayed = self._step(model, X, y)
        return model, AdaptationEvent(
            at, len(ids), len(replayed), model.version, ids + replayed
        )

    def on_reveal(self, model, video, pending, sample, at):
        self.batch.append((pending, sample))
        if len(self.batch) < self.cfg.batch_size:
            return model, None
        return self._flush(model, at)

    def finish(self, model, at):
        if not self.batch:
            return model, None
        return self._flush(model, at)


class ExperienceReplay(OnlineGradientDescent):
    name = "er"

    def __init__(
        self,
        cfg: BaselineConfig = None,
        train_cfg: TrainConfig = None,
        train_for_anchor: Optional[ArrayDataset] = None,
    ):
        super().__init__(cfg, train_cfg)
        self.rng = np.random.default_rng(self.cfg.seed)
        self.replay = None
        if train_for_anchor is not None and len(train_for_anchor) > 0:
            self.replay = sample_anchor(
                train_for_anchor,
                DriftConfig(cap_anchor=self.cfg.replay_size),
                seed=self.cfg.seed,
            )

    def _step(self, model, X, y):
        return er_adapter_step(model, X, y, self.replay, self.rng, self.train_cfg)


def make_strategy(
    method: str,
    drift_cfg: DriftConfig,
    train_cfg: TrainConfig = None,
    baseline_cfg: BaselineConfig = None,
    train_for_anchor: Optional[ArrayDataset] = None,
) -> OnlineStrategy:
    if method == "none":
        return NoAdaptation()
    if method == "shortscast":
        return GrowthConditionedAdaptation(drift_cfg, train_cfg, train_for_anchor)
    if method == "cache_knn":
        return CacheKnn(baseline_cfg)
    if method == "residual":
        return TopicResidual(baseline_cfg)
    if method == "ogd":
        return OnlineGradientDescent(baseline_cfg, train_cfg)
    if method == "er":
        return ExperienceReplay(baseline_cfg, train_cfg, train_for_anchor)
    raise ValueError(f"Unknown online method {method}, expected one of {METHODS}.")
