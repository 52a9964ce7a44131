# Copyright © 2025 mlx-popcast contributors.

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import mlx.core as mx
import numpy as np
from tqdm import tqdm

from .core import HORIZON_DAYS, SECONDS_PER_DAY, PopcastError, growth_ratio
from .datasets import DatasetManifest
from .drift import DriftConfig, DriftSample, DriftState
from .featurizer import FeaturizerConfig, MissingCard, featurize
from .metrics import MetricsReport, compute_metrics, grouped_metrics
from .models.predictor import DTYPE, Model, predict
from .tuner.datasets import ArrayDataset
from .tuner.trainer import TrainConfig, online_update
from .utils import read_jsonl, write_json, write_jsonl

UPLOAD = "upload"
REVEAL = "reveal"
REVEAL_DELAY = HORIZON_DAYS * SECONDS_PER_DAY


class EmptyEvaluationSet(PopcastError):
    pass


@dataclass(frozen=True)
class StreamEvent:
    kind: str
    video_id: str
    at: float

    @property
    def sort_key(self):
        # Reveals win ties so their labels are usable by simultaneous uploads.
        return (self.at, 0 if self.kind == REVEAL else 1, self.video_id)


@dataclass
class Prediction:
    video_id: str
    y_hat: float
    y: float
    predicted_at: float
    model_version: int
    gamma: Optional[float] = None


@dataclass
class AdaptationEvent:
    triggered_at: float
    drift_count: int
    anchor_count: int
    version_after: int
    consumed_ids: List[str] = field(default_factory=list)


@dataclass
class RunLog:
    method: str = "none"
    snapshot_day: int = 0
    predictions: List[Prediction] = field(default_factory=list)
    adaptation_events: List[AdaptationEvent] = field(default_factory=list)
    drift_decisions: List[DriftSample] = field(default_factory=list)
    order: List[Tuple[str, int]] = field(default_factory=list, repr=False)

    def add_prediction(self, p: Prediction):
        self.order.append(("prediction", len(self.predictions)))
        self.predictions.append(p)

    def add_reveal(self, s: DriftSample):
        self.order.append(("reveal", len(self.drift_decisions)))
        self.drift_decisions.append(s)

    def add_adaptation(self, e: AdaptationEvent):
        self.order.append(("adaptation", len(self.adaptation_events)))
        self.adaptation_events.append(e)

    def records(self) -> List[Dict]:
        """A run header followed by the event-ordered JSON Lines rows."""
        header = {"method": self.method, "snapshot_day": self.snapshot_day}
        rows = [{"kind": "run", **header}]
        for kind, i in self.order:
            if kind == "prediction":
                row = asdict(self.predictions[i])
            elif kind == "reveal":
                row = self.drift_decisions[i].to_dict()
            else:
                row = asdict(self.adaptation_events[i])
            rows.append({"kind": kind, **row})
        return rows


@dataclass
class Pending:
    """Upload-time state of a video awaiting its label."""

    feature: np.ndarray
    y_raw: float
    y_hat: float
    h: np.ndarray


class OnlineStrategy:
    """
    Hooks of an online method into the event loop.

    ``correct`` adjusts a raw prediction at upload, ``on_reveal`` sees every
    label and may return an adapted model together with its adaptation
    event, ``finish`` runs once after the last event.
    """

    name = "none"

    def correct(self, video, y_hat: float, h: np.ndarray) -> float:
        return y_hat

    def on_reveal(
        self, model: Model, video, pending: Pending, sample: DriftSample, at: float
    ) -> Tuple[Model, Optional[AdaptationEvent]]:
        return model, None

    def finish(self, model: Model, at: float) -> Tuple[Model, Optional[AdaptationEvent]]:
        return model, None


class NoAdaptation(OnlineStrategy):
    name = "none"


class GrowthConditionedAdaptation(OnlineStrategy):
    """
    Adapt on the drift buffer plus a fresh anchor draw each time ``trigger_M``
    new drift samples have arrived.
    """

    name = "shortscast"

    def __init__(
        self,
        drift_cfg: DriftConfig,
        train_cfg: TrainConfig = None,
        train_for_anchor: Optional[ArrayDataset] = None,
    ):
        self.state = DriftState(drift_cfg, train_for_anchor)
        self.train_cfg = train_cfg or TrainConfig()

    def on_reveal(self, model, video, pending, sample, at):
        if not self.state.observe(sample):
            return model, None
        X, y, ids, n_drift, n_anchor = self.state.adaptation_set()
        model = online_update(model, X, y, self.train_cfg)
        self.state.reset()
        logging.debug(
            f"Adapted at {at} on {n_drift} drift and {n_anchor} anchor samples, "
            f"version {model.version}."
        )
        return model, AdaptationEvent(at, n_drift, n_anchor, model.version, ids)


def build_schedule(stream: DatasetManifest) -> List[StreamEvent]:
    """One upload and one reveal per video, in chronological order."""
    events = []
    for r in stream.records:
        events.append(StreamEvent(UPLOAD, r.video_id, r.upload_time))
        events.append(StreamEvent(REVEAL, r.video_id, r.upload_time + REVEAL_DELAY))
    return sorted(events, key=lambda e: e.sort_key)


def _forward_one(model: Model, x: np.ndarray) -> Tuple[float, np.ndarray]:
    y_hat, _, h = model(mx.array(x[None], dtype=DTYPE))
    mx.eval(y_hat, h)
    return y_hat.item(), np.array(h[0])


def run_stream(
    model: Model,
    schedule: List[StreamEvent],
    stream: DatasetManifest,
    drift_cfg: DriftConfig,
    train_for_anchor: Optional[ArrayDataset] = None,
    snapshot_day: int = 0,
    feat_cfg: FeaturizerConfig = None,
    train_cfg: TrainConfig = None,
    strategy: OnlineStrategy = None,
    use_saliency: bool = True,
    verbose: bool = False,
) -> Tuple[Model, RunLog]:
    """
    Replay a stream under delayed-label feedback.

    Every upload is scored with the current model before any label of that
    video exists. Every reveal is judged by the drift indicator and handed
    to the online strategy, which may swap in an adapted model. Without a
    strategy the growth-conditioned adaptation runs with ``drift_cfg``.

    Returns:
        The final model and the complete run log.
    """
    drift_cfg.require_calibrated()
    feat_cfg = feat_cfg or FeaturizerConfig()
    if strategy is None:
        strategy = GrowthConditionedAdaptation(drift_cfg, train_cfg, train_for_anchor)
    log = RunLog(method=strategy.name, snapshot_day=snapshot_day)
    model.eval()

    pending: Dict[str, Pending] = {}
    tic = time.perf_counter()
    for ev in tqdm(schedule, desc=f"Stream ({strategy.name})", disable=not verbose):
        video = stream.record(ev.video_id)
        if ev.kind == UPLOAD:
            card = stream.card(video.video_id, snapshot_day)
            if card is None:
                raise MissingCard(video.video_id, snapshot_day)
            sal = stream.saliency_of(video.video_id) if use_saliency else None
            x = featurize(video, card, sal, feat_cfg).values
            y_raw, h = _forward_one(model, x)
            y_hat = strategy.correct(video, y_raw, h)
            pending[video.video_id] = Pending(x, y_raw, y_hat, h)
            log.add_prediction(
                Prediction(
                    video.video_id,
                    y_hat,
                    video.y,
                    ev.at,
                    model.version,
                    growth_ratio(video.curve),
                )
            )
        else:
            p = pending.pop(video.video_id)
            sample = DriftSample.from_reveal(
                video.video_id,
                p.feature,
                video.y,
                p.y_hat,
                growth_ratio(video.curve),
                ev.at,
                drift_cfg,
            )
            log.add_reveal(sample)
            model, event = strategy.on_reveal(model, video, p, sample, ev.at)
            if event is not None:
                log.add_adaptation(event)

    if schedule:
        model, event = strategy.finish(model, schedule[-1].at)
        if event is not None:
            log.add_adaptation(event)
    logging.info(
        f"Stream ({strategy.name}) finished: {len(log.predictions)} predictions, "
        f"{sum(s.d for s in log.drift_decisions)} drift samples, "
        f"{len(log.adaptation_events)} adaptations in "
        f"{time.perf_counter() - tic:.1f}s."
    )
    return model, log


def evaluate(
    source: Union[RunLog, Model],
    data: Optional[ArrayDataset] = None,
    mode: str = "prequential",
) -> MetricsReport:
    """
    Prequential metrics over the predictions of a run log, or test metrics of
    a model's fresh predictions over a featurized split.
    """
    if mode == "prequential":
        if not isinstance(source, RunLog):
            raise ValueError("Prequential evaluation needs a run log.")
        if not source.predictions:
            raise EmptyEvaluationSet("The run log holds no predictions.")
        return compute_metrics(
            [p.y_hat for p in source.predictions], [p.y for p in source.predictions]
        )
    if mode == "test":
        if not isinstance(source, Model) or data is None:
            raise ValueError("Test evaluation needs a model and a dataset.")
        if len(data) == 0:
            raise EmptyEvaluationSet("The evaluation split is empty.")
        return compute_metrics(predict(source, data.X), data.y)
    raise ValueError(f"Unknown evaluation mode {mode}.")


def windowed_metrics(log: RunLog, n_windows: int = 3) -> List[MetricsReport]:
    """Prequential metrics over consecutive, equally sized prediction windows."""
    if n_windows < 1:
        raise ValueError("n_windows must be at least 1.")
    if len(log.predictions) < n_windows:
        raise EmptyEvaluationSet(
            f"Cannot split {len(log.predictions)} predictions into {n_windows} windows."
        )
    y_hat = np.array([p.y_hat for p in log.predictions])
    y = np.array([p.y for p in log.predictions])
    return [
        compute_metrics(a, b)
        for a, b in zip(np.array_split(y_hat, n_windows), np.array_split(y, n_windows))
    ]


def audit_log(log: RunLog, schedule: List[StreamEvent]) -> List[str]:
    """
    Check the temporal integrity of a run log.

    Returns:
        A list of human-readable violations, empty for a sound log.
    """
    reveal_at = {e.video_id: e.at for e in schedule if e.kind == REVEAL}
    violations = []

    counts = {}
    for p in log.predictions:
        counts[p.video_id] = counts.get(p.video_id, 0) + 1
    for vid in reveal_at:
        if counts.get(vid, 0) != 1:
            violations.append(f"{vid}: {counts.get(vid, 0)} predictions")

    consumed_by = {}
    for i, e in enumerate(log.adaptation_events):
        for vid in e.consumed_ids:
            if vid not in reveal_at:
                continue
            if reveal_at[vid] > e.triggered_at:
                violations.append(
                    f"adaptation {i} at {e.triggered_at} consumed {vid} "
                    f"revealed at {reveal_at[vid]}"
                )
            consumed_by.setdefault(vid, []).append(e.version_after)

    for p in log.predictions:
        if p.video_id in reveal_at and not p.predicted_at < reveal_at[p.video_id]:
            violations.append(f"{p.video_id}: predicted at or after its reveal")
        for version in consumed_by.get(p.video_id, []):
            if version <= p.model_version:
                violations.append(
                    f"{p.video_id}: predicted by version {p.model_version} which "
                    f"already learned its label (version {version})"
                )
    return violations


def summarize(
    log: RunLog,
    model: Model,
    drift_cfg: DriftConfig,
    timestamp: bool = True,
) -> Dict:
    summary = {
        "method": log.method,
        "snapshot_day": log.snapshot_day,
        "n_predictions": len(log.predictions),
        "n_reveals": len(log.drift_decisions),
        "n_drift": sum(s.d for s in log.drift_decisions),
        "n_adaptations": len(log.adaptation_events),
        "final_version": model.version,
        "thresholds": {
            "gamma_low": drift_cfg.gamma_low,
            "gamma_high": drift_cfg.gamma_high,
            "delta_y": drift_cfg.delta_y,
        },
    }
    if log.predictions:
        summary["prequential"] = evaluate(log).to_dict()
        summary["by_growth_type"] = {
            k: v.to_dict() for k, v in grouped_metrics(log, drift_cfg).items()
        }
    if timestamp:
        summary["created"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    return summary


def write_run_log(
    log: RunLog,
    out_dir: Union[str, Path],
    summary: Optional[Dict] = None,
):
    out_dir = Path(out_dir)
    write_jsonl(out_dir / "run_log.jsonl", log.records())
    if summary is not None:
        write_json(out_dir / "summary.json", summary)


def load_run_log(path: Union[str, Path]) -> RunLog:
    """
    Read a run log back from JSON Lines; drift samples carry no features.

    Logs without a run header keep the ``RunLog`` defaults.
    """
    log = RunLog()
    for row in read_jsonl(path):
        kind = row.pop("kind")
        if kind == "run":
            log.method = row["method"]
            log.snapshot_day = int(row["snapshot_day"])
        elif kind == "prediction":
            log.add_prediction(Prediction(**row))
        elif kind == "reveal":
            log.add_reveal(DriftSample(feature=None, **row))
        elif kind == "adaptation":
            log.add_adaptation(AdaptationEvent(**row))
        else:
            raise PopcastError(f"{path}: unknown run log event kind {kind!r}.")
    return log
