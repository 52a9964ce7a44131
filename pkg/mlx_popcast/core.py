# Copyright © 2025 mlx-popcast contributors.

import enum
import math
import numbers
from dataclasses import dataclass, field
from datetime import date
from typing import Dict, List, Optional, Sequence, Tuple

HORIZON_DAYS = 7
SECONDS_PER_DAY = 86400
EXCLUDED_HOSTS = ("youtube.com", "youtu.be", "m.youtube.com")
DIMENSIONS = ("d1", "d2", "d3")
SOURCE_KINDS = ("news", "forum", "social", "video", "official", "other")


class PopcastError(ValueError):
    """Base class for every domain error raised by the package."""


class LengthError(PopcastError):
    pass


class NegativeCount(PopcastError):
    def __init__(self, index: int, value: int):
        super().__init__(f"Negative view count {value} at day {index}.")
        self.index = index


class MonotonicityViolation(PopcastError):
    def __init__(self, index: int):
        super().__init__(
            f"Cumulative view curve decreases at day {index}; "
            "use lenient mode to clamp platform corrections."
        )
        self.index = index


class SchemaError(PopcastError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


class ExcludedDomain(PopcastError):
    def __init__(self, url: str):
        super().__init__(f"Source url {url} points to an excluded platform domain.")
        self.url = url


class PopularityTier(enum.IntEnum):
    MICRO = 0
    SMALL = 1
    MEDIUM = 2
    LARGE = 3
    VIRAL = 4

    @property
    def label(self) -> str:
        return self.name.capitalize()


# Lower-inclusive lower bounds of every tier above Micro.
TIER_THRESHOLDS = (
    (1_000, PopularityTier.SMALL),
    (10_000, PopularityTier.MEDIUM),
    (100_000, PopularityTier.LARGE),
    (1_000_000, PopularityTier.VIRAL),
)


class GrowthType(str, enum.Enum):
    DELAYED_VIRAL = "delayed_viral"
    TYPICAL = "typical"
    INITIAL_VIRAL = "initial_viral"
    UNDEFINED = "undefined"


@dataclass(frozen=True)
class ViewCurve:
    views: Tuple[int, ...]

    def __post_init__(self):
        if len(self.views) != HORIZON_DAYS + 1:
            raise LengthError(
                f"A view curve has {HORIZON_DAYS + 1} entries, got {len(self.views)}."
            )
        for d, v in enumerate(self.views):
            if v < 0:
                raise NegativeCount(d, v)
        for d in range(1, len(self.views)):
            if self.views[d] < self.views[d - 1]:
                raise MonotonicityViolation(d)

    def __getitem__(self, day: int) -> int:
        return self.views[day]

    @property
    def final(self) -> int:
        return self.views[HORIZON_DAYS]


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    upload_time: float
    title: str
    transcript: str
    topic_key: str
    curve: ViewCurve

    def __post_init__(self):
        if not self.video_id:
            raise SchemaError("video_id", "must be non-empty")
        if not self.upload_time > 0:
            raise SchemaError("upload_time", "must be strictly positive")

    @property
    def y(self) -> float:
        return log_popularity(self.curve.final)

    @property
    def reveal_time(self) -> float:
        return self.upload_time + HORIZON_DAYS * SECONDS_PER_DAY


@dataclass(frozen=True)
class SourceEntry:
    id: str
    source: str
    kind: str
    url: str
    date: Optional[date] = None

    def __post_init__(self):
        if not self.id:
            raise SchemaError("id", "source id must be non-empty")
        if not self.url:
            raise SchemaError("url", f"source {self.id} has an empty url")


@dataclass(frozen=True)
class EvidenceDimension:
    evidence: str = ""
    source_ids: Tuple[str, ...] = ()
    source_index: Tuple[SourceEntry, ...] = ()

    def __post_init__(self):
        known = {s.id for s in self.source_index}
        for sid in self.source_ids:
            if sid not in known:
                raise SchemaError(
                    "source_ids", f"source id {sid!r} is missing from source_index"
                )

    @property
    def urls(self) -> List[str]:
        return [s.url for s in self.source_index]


@dataclass(frozen=True)
class EvidenceCard:
    video_id: str
    snapshot_day: int
    d1_topic_entity: EvidenceDimension = field(default_factory=EvidenceDimension)
    d2_public_discourse: EvidenceDimension = field(default_factory=EvidenceDimension)
    d3_related_content: EvidenceDimension = field(default_factory=EvidenceDimension)
    search_time: Optional[float] = None

    def __post_init__(self):
        if self.snapshot_day not in (0, 1, 2):
            raise SchemaError(
                "snapshot_day", f"must be 0, 1 or 2, got {self.snapshot_day}"
            )
        for dim in self.dimensions():
            for s in dim.source_index:
                if is_excluded_url(s.url):
                    raise ExcludedDomain(s.url)

    def dimensions(self) -> Tuple[EvidenceDimension, ...]:
        return (self.d1_topic_entity, self.d2_public_discourse, self.d3_related_content)

    def dimension(self, name: str) -> EvidenceDimension:
        return self.dimensions()[DIMENSIONS.index(name)]

    def urls(self) -> List[str]:
        return [u for dim in self.dimensions() for u in dim.urls]


@dataclass(frozen=True)
class SaliencyProfile:
    saliency: Tuple[int, int, int]
    reasoning: Tuple[Optional[str], Optional[str], Optional[str]] = (None, None, None)

    def __post_init__(self):
        if len(self.saliency) != 3:
            raise SchemaError("saliency", "expects one score per dimension")
        for s in self.saliency:
            if not 1 <= s <= 10:
                raise SchemaError("saliency", f"score {s} outside [1, 10]")


def url_host(url: str) -> str:
    rest = url.split("://", 1)[-1]
    host = rest.split("/", 1)[0].split("?", 1)[0].split("#", 1)[0]
    host = host.rsplit("@", 1)[-1].split(":", 1)[0]
    return host.lower()


def is_excluded_url(url: str) -> bool:
    host = url_host(url)
    if host.startswith("www."):
        host = host[4:]
    return any(host == h or host.endswith("." + h) for h in EXCLUDED_HOSTS)


def log_popularity(v: int) -> float:
    """Popularity target: log2 of the day-7 views plus one."""
    return math.log2(v + 1)


def tier_thresholds() -> Dict[PopularityTier, Tuple[int, Optional[int]]]:
    """View-count range of each tier, upper bound exclusive and None for Viral."""
    lows = [0] + [t for t, _ in TIER_THRESHOLDS]
    highs = [t for t, _ in TIER_THRESHOLDS] + [None]
    return {tier: (lo, hi) for tier, lo, hi in zip(PopularityTier, lows, highs)}


def tier_of(v: int) -> PopularityTier:
    tier = PopularityTier.MICRO
    for threshold, t in TIER_THRESHOLDS:
        if v >= threshold:
            tier = t
    return tier


def growth_ratio(curve: ViewCurve) -> Optional[float]:
    """
    Fraction of the day-7 views already accumulated by day 2.

    Returns ``None`` for curves that never received a view, the growth
    pattern is undefined there.
    """
    if curve.final == 0:
        return None
    return curve[2] / curve.final


def growth_type(
    gamma: Optional[float], gamma_low: float, gamma_high: float
) -> GrowthType:
    if gamma is None:
        return GrowthType.UNDEFINED
    if gamma <= gamma_low:
        return GrowthType.DELAYED_VIRAL
    if gamma >= gamma_high:
        return GrowthType.INITIAL_VIRAL
    return GrowthType.TYPICAL


def whole_number(value, path: str) -> int:
    """``value`` as an int; booleans and fractional numbers raise ``SchemaError``."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise SchemaError(path, f"expected a whole number, got {value!r}")
    if not float(value).is_integer():
        raise SchemaError(path, f"expected a whole number, got {value!r}")
    return int(value)


def validate_curve(raw: Sequence[int], mode: str = "strict") -> ViewCurve:
    """
    Build a :class:`ViewCurve` from raw counts.

    Args:
        raw (Sequence[int]): Cumulative counts for days 0 through 7.
        mode (str): ``"strict"`` rejects any decrease, ``"lenient"`` clamps
          every entry to the running maximum. Default: ``"strict"``.
    """
    if mode not in ("strict", "lenient"):
        raise ValueError(f"Unknown curve validation mode {mode}.")
    if len(raw) != HORIZON_DAYS + 1:
        raise LengthError(
            f"A view curve has {HORIZON_DAYS + 1} entries, got {len(raw)}."
        )
    views = []
    for d, v in enumerate(raw):
        v = whole_number(v, f"views[{d}]")
        if v < 0:
            raise NegativeCount(d, v)
        if views and v < views[-1]:
            if mode == "strict":
                raise MonotonicityViolation(d)
            v = views[-1]
        views.append(v)
    return ViewCurve(tuple(views))


def relative_day_timestamps(upload_time: float) -> List[float]:
    return [upload_time + d * SECONDS_PER_DAY for d in range(HORIZON_DAYS + 1)]
