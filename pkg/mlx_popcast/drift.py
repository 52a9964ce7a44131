# Copyright © 2025 mlx-popcast contributors.

import dataclasses
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import PopcastError
from .tuner.datasets import ArrayDataset

GATE_MODES = ("growth", "open")
MIN_CALIBRATION_SAMPLES = 10


class InsufficientCalibrationData(PopcastError):
    pass


class NotDriftSample(PopcastError):
    pass


class EmptyTrainSet(PopcastError):
    pass


class UncalibratedConfig(PopcastError):
    pass


@dataclass
class DriftConfig:
    gamma_low: Optional[float] = None
    gamma_high: Optional[float] = None
    delta_y: Optional[float] = None
    tail_fraction: float = 0.15
    error_quantile: float = 0.75
    trigger_M: int = 32
    cap_drift: int = 256
    cap_anchor: int = 1024
    seed: int = 0
    # A fixed error threshold replacing the error quantile at calibration.
    delta_y_override: Optional[float] = None
    gate: str = "growth"

    def __post_init__(self):
        if not 0 < self.tail_fraction < 0.5:
            raise ValueError("tail_fraction must lie in (0, 0.5).")
        if not 0 <= self.error_quantile <= 1:
            raise ValueError("error_quantile must lie in [0, 1].")
        if self.trigger_M < 1:
            raise ValueError("trigger_M must be at least 1.")
        if self.cap_drift < 1 or self.cap_anchor < 1:
            raise ValueError("Buffer capacities must be at least 1.")
        if self.gate not in GATE_MODES:
            raise ValueError(f"Unknown gate mode {self.gate}, expected one of {GATE_MODES}.")
        if self.delta_y_override is not None and not self.delta_y_override > 0:
            raise ValueError("delta_y_override must be positive.")
        if (self.gamma_low is None) != (self.gamma_high is None):
            raise ValueError("Set both gamma bounds or neither.")
        if self.gamma_low is not None and not (
            0 <= self.gamma_low < self.gamma_high <= 1
        ):
            raise ValueError("Gamma bounds must satisfy 0 <= low < high <= 1.")
        if self.delta_y is not None and not self.delta_y > 0:
            raise ValueError("delta_y must be positive.")

    @classmethod
    def from_dict(cls, params: Dict) -> "DriftConfig":
        return cls(**{k: v for k, v in params.items() if k in cls.__dataclass_fields__})

    def to_dict(self) -> Dict:
        return dataclasses.asdict(self)

    @property
    def calibrated(self) -> bool:
        return self.gamma_low is not None and self.delta_y is not None

    def require_calibrated(self):
        if not self.calibrated:
            raise UncalibratedConfig(
                "The drift gate needs calibrated gamma bounds and delta_y."
            )


@dataclass
class DriftSample:
    video_id: str
    feature: np.ndarray = field(compare=False, repr=False)
    y: float
    y_hat: float
    e: float
    gamma: Optional[float]
    d: int
    revealed_at: float

    @classmethod
    def from_reveal(
        cls,
        video_id: str,
        feature: np.ndarray,
        y: float,
        y_hat: float,
        gamma: Optional[float],
        revealed_at: float,
        cfg: DriftConfig,
    ) -> "DriftSample":
        e = y_hat - y
        return cls(
            video_id=video_id,
            feature=feature,
            y=y,
            y_hat=y_hat,
            e=e,
            gamma=gamma,
            d=drift_indicator(e, gamma, cfg),
            revealed_at=revealed_at,
        )

    def to_dict(self) -> Dict:
        return {
            "video_id": self.video_id,
            "y": self.y,
            "y_hat": self.y_hat,
            "e": self.e,
            "gamma": self.gamma,
            "d": self.d,
            "revealed_at": self.revealed_at,
        }


class DriftBuffer:
    """Bounded first-in first-out store of drift samples."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items = deque(maxlen=capacity)

    def __len__(self):
        return len(self._items)

    def __iter__(self) -> Iterator[DriftSample]:
        return iter(self._items)

    def __getitem__(self, idx: int) -> DriftSample:
        return self._items[idx]


@dataclass
class AnchorBuffer:
    X: np.ndarray
    y: np.ndarray
    ids: List[str] = field(default_factory=list)

    def __len__(self):
        return self.y.shape[0]


def _quantile(values: Sequence[float], q: float) -> float:
    return float(np.quantile(np.asarray(values, dtype=np.float64), q, method="linear"))


def calibrate_thresholds(
    val_errors: Sequence[float],
    val_gammas: Sequence[Optional[float]],
    cfg: DriftConfig,
) -> Tuple[float, float, float]:
    """
    Calibrate the growth band and the error threshold on validation data.

    The band is cut at the ``tail_fraction`` quantiles of the defined growth
    ratios, the error threshold at the ``error_quantile`` quantile of the
    absolute errors (or ``delta_y_override`` when set). Quantiles interpolate
    linearly between order statistics.
    """
    gammas = [g for g in val_gammas if g is not None]
    if len(gammas) < MIN_CALIBRATION_SAMPLES:
        raise InsufficientCalibrationData(
            f"Need at least {MIN_CALIBRATION_SAMPLES} defined growth ratios, "
            f"got {len(gammas)}."
        )
    if len(val_errors) < MIN_CALIBRATION_SAMPLES:
        raise InsufficientCalibrationData(
            f"Need at least {MIN_CALIBRATION_SAMPLES} errors, got {len(val_errors)}."
        )
    gamma_low = _quantile(gammas, cfg.tail_fraction)
    gamma_high = _quantile(gammas, 1 - cfg.tail_fraction)
    if not gamma_low < gamma_high:
        raise InsufficientCalibrationData(
            f"Degenerate growth band: gamma_low={gamma_low} >= gamma_high={gamma_high}."
        )
    if cfg.delta_y_override is not None:
        delta_y = float(cfg.delta_y_override)
    else:
        abs_errors = np.abs(np.asarray(val_errors, dtype=np.float64))
        delta_y = _quantile(abs_errors, cfg.error_quantile)
        if not delta_y > 0:
            raise InsufficientCalibrationData("All validation errors are zero.")
    logging.info(
        f"Calibrated gamma band ({gamma_low:.4f}, {gamma_high:.4f}), delta_y {delta_y:.4f}."
    )
    return gamma_low, gamma_high, delta_y


def calibrate(
    cfg: DriftConfig,
    val_errors: Sequence[float],
    val_gammas: Sequence[Optional[float]],
) -> DriftConfig:
    gamma_low, gamma_high, delta_y = calibrate_thresholds(val_errors, val_gammas, cfg)
    return dataclasses.replace(
        cfg, gamma_low=gamma_low, gamma_high=gamma_high, delta_y=delta_y
    )


def growth_gate(gamma: Optional[float], cfg: DriftConfig) -> int:
    """1 when the growth ratio falls outside the open normal band, bounds included."""
    if cfg.gate == "open":
        return 1
    if gamma is None:
        return 0
    return int(gamma <= cfg.gamma_low or gamma >= cfg.gamma_high)


def drift_indicator(e: float, gamma: Optional[float], cfg: DriftConfig) -> int:
    return growth_gate(gamma, cfg) * int(abs(e) > cfg.delta_y)


def push_drift(buffer: DriftBuffer, sample: DriftSample) -> DriftBuffer:
    if sample.d != 1:
        raise NotDriftSample(f"Sample {sample.video_id} did not pass the drift indicator.")
    buffer._items.append(sample)
    return buffer


def sample_anchor(
    train: ArrayDataset,
    cfg: DriftConfig,
    seed: Union[int, Sequence[int], None] = None,
) -> AnchorBuffer:
    """
    Uniform draw without replacement of ``min(cap_anchor, len(train))``
    training samples.
    """
    n = len(train)
    if n == 0:
        raise EmptyTrainSet("Cannot draw anchors from an empty training set.")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    idx = rng.choice(n, size=min(cfg.cap_anchor, n), replace=False)
    return AnchorBuffer(train.X[idx], train.y[idx], [train.ids[i] for i in idx])


class DriftState:
    """
    Drift buffer, new-sample counter and anchor source of one stream run.

    Anchors are redrawn at every trigger with a seed derived from the config
    seed and the trigger index.
    """

    def __init__(self, cfg: DriftConfig, train_for_anchor: Optional[ArrayDataset] = None):
        cfg.require_calibrated()
        self.cfg = cfg
        self.buffer = DriftBuffer(cfg.cap_drift)
        self.train_for_anchor = train_for_anchor
        self.new_samples = 0
        self.n_triggers = 0

    def observe(self, sample: DriftSample) -> bool:
        """Record a revealed sample, returning whether adaptation is due."""
        if sample.d:
            push_drift(self.buffer, sample)
            self.new_samples += 1
        return self.new_samples >= self.cfg.trigger_M

    def adaptation_set(self):
        """
        Returns:
            Features, targets and ids of the drift buffer followed by a fresh
            anchor draw, plus the drift and anchor counts.
        """
        drift = list(self.buffer)
        X = [s.feature for s in drift]
        y = [s.y for s in drift]
        ids = [s.video_id for s in drift]
        n_anchor = 0
        if self.train_for_anchor is not None and len(self.train_for_anchor) > 0:
            anchors = sample_anchor(
                self.train_for_anchor, self.cfg, seed=[self.cfg.seed, self.n_triggers]
            )
            X.extend(anchors.X)
            y.extend(anchors.y)
            ids.extend(anchors.ids)
            n_anchor = len(anchors)
        return (
            np.asarray(X, dtype=np.float64),
            np.asarray(y, dtype=np.float64),
            ids,
            len(drift),
            n_anchor,
        )

    def reset(self):
        self.new_samples = 0
        self.n_triggers += 1

    def snapshot(self) -> Dict:
        return {
            "thresholds": {
                "gamma_low": self.cfg.gamma_low,
                "gamma_high": self.cfg.gamma_high,
                "delta_y": self.cfg.delta_y,
            },
            "buffer_size": len(self.buffer),
            "new_samples": self.new_samples,
            "n_triggers": self.n_triggers,
        }
