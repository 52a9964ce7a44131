# Copyright © 2025 mlx-popcast contributors.

import dataclasses
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from itertools import combinations
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import (
    DIMENSIONS,
    EvidenceCard,
    EvidenceDimension,
    PopcastError,
    PopularityTier,
    SaliencyProfile,
    SchemaError,
    SourceEntry,
    VideoRecord,
    tier_of,
    validate_curve,
    whole_number,
)

# Wire names of the three evidence dimensions, in D1/D2/D3 order.
CARD_KEYS = ("topic_entity_context", "public_discourse", "related_content_activity")
CARD_FIELDS = ("d1_topic_entity", "d2_public_discourse", "d3_related_content")
SPLIT_NAMES = ("train", "val", "stream", "test")


class ParseError(PopcastError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class OrphanCard(PopcastError):
    def __init__(self, video_id: str):
        super().__init__(f"Card references unknown video {video_id!r}.")
        self.video_id = video_id


class TooFewRecords(PopcastError):
    pass


class EmptyDataset(PopcastError):
    pass


class TopicTooSmall(PopcastError):
    def __init__(self, topic_key: str):
        super().__init__(
            f"Topic {topic_key!r} has a single video, topic-matched realignment "
            "needs at least two."
        )
        self.topic_key = topic_key


class DerangementImpossible(PopcastError):
    pass


@dataclass
class DatasetManifest:
    records: List[VideoRecord] = field(default_factory=list)
    cards: Dict[Tuple[str, int], EvidenceCard] = field(default_factory=dict)
    saliency: Optional[Dict[str, SaliencyProfile]] = None
    # Records by id; records are not mutated after construction.
    _index: Dict[str, VideoRecord] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )

    def __post_init__(self):
        ids = [r.video_id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted(k for k, c in Counter(ids).items() if c > 1)
            raise SchemaError("video_id", f"duplicate ids {dupes[:5]}")
        self._index = {r.video_id: r for r in self.records}
        known = set(ids)
        for (vid, day), card in self.cards.items():
            if vid not in known:
                raise OrphanCard(vid)
            if card.video_id != vid or card.snapshot_day != day:
                raise SchemaError(
                    "cards", f"card keyed ({vid}, {day}) describes "
                    f"({card.video_id}, {card.snapshot_day})"
                )

    def __len__(self):
        return len(self.records)

    def record(self, video_id: str) -> VideoRecord:
        return self._index[video_id]

    def by_id(self) -> Dict[str, VideoRecord]:
        return dict(self._index)

    def card(self, video_id: str, snapshot_day: int) -> Optional[EvidenceCard]:
        return self.cards.get((video_id, snapshot_day))

    def saliency_of(self, video_id: str) -> Optional[SaliencyProfile]:
        if self.saliency is None:
            return None
        return self.saliency.get(video_id)

    def restrict(self, records: Sequence[VideoRecord]) -> "DatasetManifest":
        keep = {r.video_id for r in records}
        cards = {k: c for k, c in self.cards.items() if k[0] in keep}
        saliency = None
        if self.saliency is not None:
            saliency = {k: s for k, s in self.saliency.items() if k in keep}
        return DatasetManifest(list(records), cards, saliency)


@dataclass(frozen=True)
class SplitSpec:
    ratios: Tuple[float, float, float, float] = (0.7, 0.1, 0.1, 0.1)
    names: Tuple[str, str, str, str] = SPLIT_NAMES

    def __post_init__(self):
        if len(self.ratios) != 4 or any(r <= 0 for r in self.ratios):
            raise ValueError("A split needs four positive ratios.")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"Split ratios must sum to 1, got {sum(self.ratios)}.")


def _parse_time(value: Any, path: str) -> Optional[float]:
    if value is None:
        return None
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
        except ValueError:
            raise SchemaError(path, f"unparseable timestamp {value!r}")
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return dt.timestamp()
    raise SchemaError(path, f"unsupported timestamp {value!r}")


def _parse_date(value: Any, path: str) -> Optional[date]:
    if value in (None, ""):
        return None
    try:
        return date.fromisoformat(str(value)[:10])
    except ValueError:
        raise SchemaError(path, f"unparseable date {value!r}")


def _require(obj: Dict, key: str, path: str):
    if key not in obj:
        raise SchemaError(f"{path}.{key}" if path else key, "missing field")
    return obj[key]


def _parse_dimension(obj: Dict, path: str) -> EvidenceDimension:
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected an object")
    index = []
    for i, s in enumerate(obj.get("source_index", [])):
        p = f"{path}.source_index[{i}]"
        index.append(
            SourceEntry(
                id=str(_require(s, "id", p)),
                source=str(s.get("source", "")),
                kind=str(s.get("type", s.get("kind", "other"))),
                url=str(_require(s, "url", p)),
                date=_parse_date(s.get("date"), f"{p}.date"),
            )
        )
    try:
        return EvidenceDimension(
            evidence=str(obj.get("evidence", "")),
            source_ids=tuple(str(s) for s in obj.get("source_ids", [])),
            source_index=tuple(index),
        )
    except SchemaError as e:
        raise SchemaError(f"{path}.{e.path}", e.message)


def parse_video(obj: Dict, curve_mode: str = "strict") -> VideoRecord:
    return VideoRecord(
        video_id=str(_require(obj, "video_id", "")),
        upload_time=_parse_time(_require(obj, "upload_time", ""), "upload_time"),
        title=str(obj.get("title", "")),
        transcript=str(obj.get("transcript", "")),
        topic_key=str(obj.get("topic_key", "")),
        curve=validate_curve(_require(obj, "views", ""), curve_mode),
    )


def parse_card(obj: Dict) -> EvidenceCard:
    body = _require(obj, "evidence_card", "")
    dims = {
        f: _parse_dimension(body.get(k, {}), f"evidence_card.{k}")
        for k, f in zip(CARD_KEYS, CARD_FIELDS)
    }
    return EvidenceCard(
        video_id=str(_require(obj, "video_id", "")),
        snapshot_day=whole_number(_require(obj, "snapshot_day", ""), "snapshot_day"),
        search_time=_parse_time(obj.get("search_time"), "search_time"),
        **dims,
    )


def parse_saliency(obj: Dict) -> Tuple[str, SaliencyProfile]:
    analysis = _require(obj, "dimension_analysis", "")
    scores, reasons = [], []
    for d in ("D1", "D2", "D3"):
        entry = _require(analysis, d, "dimension_analysis")
        scores.append(int(_require(entry, "saliency", f"dimension_analysis.{d}")))
        reasons.append(entry.get("reasoning"))
    return str(_require(obj, "video_id", "")), SaliencyProfile(
        tuple(scores), tuple(reasons)
    )


def load_dataset(
    path: Union[str, Path], curve_mode: str = "strict"
) -> DatasetManifest:
    """
    Load a JSON Lines dataset of video records, evidence cards and optional
    saliency profiles.

    Args:
        path (str or Path): The dataset file.
        curve_mode (str): Validation mode for the view curves, ``"strict"``
          or ``"lenient"``. Default: ``"strict"``.

    Returns:
        DatasetManifest: The validated dataset.
    """
    records: List[VideoRecord] = []
    cards: Dict[Tuple[str, int], EvidenceCard] = {}
    saliency: Dict[str, SaliencyProfile] = {}
    with open(path, "r", encoding="utf-8") as fid:
        for lineno, line in enumerate(fid, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(lineno, e.msg)
            if not isinstance(obj, dict):
                raise ParseError(lineno, "expected a JSON object")
            kind = obj.get("kind")
            try:
                if kind == "video":
                    records.append(parse_video(obj, curve_mode))
                elif kind == "card":
                    card = parse_card(obj)
                    key = (card.video_id, card.snapshot_day)
                    if key in cards:
                        raise SchemaError(
                            "snapshot_day", f"duplicate card for {key[0]} day {key[1]}"
                        )
                    cards[key] = card
                elif kind == "saliency":
                    vid, profile = parse_saliency(obj)
                    saliency[vid] = profile
                else:
                    raise SchemaError("kind", f"unknown record kind {kind!r}")
            except SchemaError as e:
                raise SchemaError(f"line {lineno}: {e.path}", e.message)
            except PopcastError as e:
                e.args = (f"line {lineno}: {e.args[0]}",)
                raise
            except (TypeError, KeyError, AttributeError, ValueError) as e:
                raise SchemaError(f"line {lineno}", f"malformed {kind} record ({e})")

    known = {r.video_id for r in records}
    for vid, _ in cards:
        if vid not in known:
            raise OrphanCard(vid)
    for vid in saliency:
        if vid not in known:
            raise OrphanCard(vid)
    manifest = DatasetManifest(records, cards, saliency or None)
    logging.info(
        f"Loaded {len(records)} videos, {len(cards)} cards and "
        f"{len(saliency)} saliency profiles from {path}"
    )
    return manifest


def _date_str(d: Optional[date]) -> Optional[str]:
    return d.isoformat() if d is not None else None


def _dimension_to_dict(dim: EvidenceDimension) -> Dict:
    return {
        "evidence": dim.evidence,
        "source_ids": list(dim.source_ids),
        "source_index": [
            {
                "id": s.id,
                "source": s.source,
                "type": s.kind,
                "url": s.url,
                "date": _date_str(s.date),
            }
            for s in dim.source_index
        ],
    }


def video_to_dict(r: VideoRecord) -> Dict:
    return {
        "kind": "video",
        "video_id": r.video_id,
        "upload_time": r.upload_time,
        "title": r.title,
        "transcript": r.transcript,
        "topic_key": r.topic_key,
        "views": list(r.curve.views),
    }


def card_to_dict(c: EvidenceCard) -> Dict:
    return {
        "kind": "card",
        "video_id": c.video_id,
        "snapshot_day": c.snapshot_day,
        "search_time": c.search_time,
        "evidence_card": {
            k: _dimension_to_dict(getattr(c, f)) for k, f in zip(CARD_KEYS, CARD_FIELDS)
        },
    }


def saliency_to_dict(video_id: str, s: SaliencyProfile) -> Dict:
    return {
        "kind": "saliency",
        "video_id": video_id,
        "dimension_analysis": {
            d: {"reasoning": r, "saliency": v}
            for d, r, v in zip(("D1", "D2", "D3"), s.reasoning, s.saliency)
        },
    }


def dump_dataset(manifest: DatasetManifest, path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fid:
        for r in manifest.records:
            fid.write(json.dumps(video_to_dict(r)) + "\n")
        for key in sorted(manifest.cards):
            fid.write(json.dumps(card_to_dict(manifest.cards[key])) + "\n")
        for vid in sorted(manifest.saliency or {}):
            fid.write(json.dumps(saliency_to_dict(vid, manifest.saliency[vid])) + "\n")


def split_sizes(n: int, ratios: Sequence[float]) -> List[int]:
    """
    Floor every ratio, hand the remainder to the first (train) split, then
    make sure each split holds at least one record by borrowing from the
    largest one.
    """
    sizes = [int(np.floor(r * n + 1e-9)) for r in ratios]
    sizes[0] += n - sum(sizes)
    for i in range(len(sizes)):
        if sizes[i] == 0:
            donor = int(np.argmax(sizes))
            sizes[donor] -= 1
            sizes[i] += 1
    return sizes


def chronological_split(
    manifest: DatasetManifest, spec: SplitSpec = SplitSpec()
) -> Tuple[DatasetManifest, DatasetManifest, DatasetManifest, DatasetManifest]:
    n = len(manifest.records)
    if n < 4:
        raise TooFewRecords(f"A chronological split needs 4 records, got {n}.")
    ordered = sorted(manifest.records, key=lambda r: (r.upload_time, r.video_id))
    sizes = split_sizes(n, spec.ratios)
    splits = []
    start = 0
    for size in sizes:
        splits.append(manifest.restrict(ordered[start : start + size]))
        start += size
    return tuple(splits)


def dataset_stats(manifest: DatasetManifest) -> Dict[str, Any]:
    """
    Tier distribution, per-tier mean normalised growth curves and the web
    source mix of every evidence dimension.
    """
    if not manifest.records:
        raise EmptyDataset("Cannot summarise an empty dataset.")
    n = len(manifest.records)
    tiers = [tier_of(r.curve.final) for r in manifest.records]
    counts = Counter(tiers)
    curves = defaultdict(list)
    for r, t in zip(manifest.records, tiers):
        if r.curve.final > 0:
            curves[t].append(np.asarray(r.curve.views, dtype=np.float64) / r.curve.final)
    sources = {d: Counter() for d in DIMENSIONS}
    for card in manifest.cards.values():
        for d, dim in zip(DIMENSIONS, card.dimensions()):
            sources[d].update(s.kind for s in dim.source_index)
    return {
        "n_videos": n,
        "n_cards": len(manifest.cards),
        "tiers": {
            t.label: {"count": counts.get(t, 0), "share": counts.get(t, 0) / n}
            for t in PopularityTier
        },
        "mean_growth_curves": {
            t.label: np.mean(curves[t], axis=0).tolist() for t in PopularityTier if curves[t]
        },
        "source_kinds": {d: dict(sorted(c.items())) for d, c in sources.items()},
    }


def jaccard(a: set, b: set) -> Optional[float]:
    union = a | b
    if not union:
        return None
    return len(a & b) / len(union)


def provenance_qa(manifest: DatasetManifest) -> Dict[str, Any]:
    """
    Audit evidence provenance: sources dated after the search, URL overlap
    between observation snapshots, and fresh versus carried-over URLs.
    """
    warnings = []

    # Sources published after the search that cited them.
    after = {t: [0, 0] for t in (0, 1, 2)}
    missing = 0
    for card in manifest.cards.values():
        if card.search_time is None:
            missing += 1
            continue
        searched = datetime.fromtimestamp(card.search_time, tz=timezone.utc).date()
        for dim in card.dimensions():
            for s in dim.source_index:
                after[card.snapshot_day][1] += 1
                if s.date is not None and s.date > searched:
                    after[card.snapshot_day][0] += 1
    if missing:
        msg = f"{missing} cards carry no search_time and were skipped by the date audit"
        logging.warning(msg)
        warnings.append(msg)
    date_audit = None
    if missing < len(manifest.cards):
        date_audit = {
            str(t): {
                "sources": total,
                "after_search": late,
                "after_fraction": (late / total) if total else None,
            }
            for t, (late, total) in after.items()
        }

    # URL sets per video and snapshot.
    url_sets: Dict[str, Dict[int, set]] = defaultdict(dict)
    for (vid, day), card in manifest.cards.items():
        url_sets[vid][day] = set(card.urls())

    pairs = {f"{a}-{b}": [] for a, b in combinations((0, 1, 2), 2)}
    per_video = {}
    shared_all = 0
    fresh = {t: [0, 0] for t in (0, 1, 2)}
    for vid in sorted(url_sets):
        snaps = url_sets[vid]
        scores = {}
        for a, b in combinations((0, 1, 2), 2):
            if a in snaps and b in snaps:
                j = jaccard(snaps[a], snaps[b])
                if j is not None:
                    scores[f"{a}-{b}"] = j
                    pairs[f"{a}-{b}"].append(j)
        per_video[vid] = scores
        if all(t in snaps for t in (0, 1, 2)):
            shared_all += len(snaps[0] & snaps[1] & snaps[2])
        seen = set()
        for t in (0, 1, 2):
            if t not in snaps:
                continue
            current = snaps[t]
            fresh[t][0] += len(current - seen)
            fresh[t][1] += len(current)
            seen |= current

    def _summary(values):
        if not values:
            return None
        return {
            "n": len(values),
            "mean": float(np.mean(values)),
            "median": float(np.median(values)),
        }

    freshness = {}
    for t, (new, total) in fresh.items():
        if total == 0:
            continue
        freshness[str(t)] = {
            "urls": total,
            "new_share": new / total,
            "carryover_share": (total - new) / total,
        }

    source_mix = {str(t): {d: Counter() for d in DIMENSIONS} for t in (0, 1, 2)}
    for card in manifest.cards.values():
        for d, dim in zip(DIMENSIONS, card.dimensions()):
            source_mix[str(card.snapshot_day)][d].update(s.kind for s in dim.source_index)

    return {
        "date_audit": date_audit,
        "jaccard": {
            "per_video": per_video,
            "pairs": {k: _summary(v) for k, v in pairs.items()},
        },
        "freshness": freshness,
        "urls_in_all_snapshots": shared_all,
        "source_mix": {
            t: {d: dict(sorted(c.items())) for d, c in dims.items()}
            for t, dims in source_mix.items()
        },
        "warnings": warnings,
    }


def _check_dims(dims: Iterable[str]) -> List[str]:
    dims = [d.lower() for d in ([dims] if isinstance(dims, str) else dims)]
    for d in dims:
        if d not in DIMENSIONS:
            raise ValueError(f"Unknown evidence dimension {d}, expected one of D1/D2/D3.")
    return dims


def ablate_dimension(
    manifest: DatasetManifest, dims: Union[str, Iterable[str]]
) -> DatasetManifest:
    """
    Empty the evidence text and sources of the given dimension(s) in every
    card. Ablating all three leaves the video content only.
    """
    fields = [CARD_FIELDS[DIMENSIONS.index(d)] for d in _check_dims(dims)]
    empty = EvidenceDimension()
    cards = {
        k: dataclasses.replace(c, **{f: empty for f in fields})
        for k, c in manifest.cards.items()
    }
    return DatasetManifest(list(manifest.records), cards, manifest.saliency)


def _derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    # Rejection sampling keeps the draw uniform over derangements.
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def assign_donors(
    manifest: DatasetManifest, mode: str = "own", seed: int = 0
) -> Dict[str, str]:
    """
    Choose, for every video, the video whose cards it receives.

    Args:
        manifest (DatasetManifest): The dataset.
        mode (str): ``"own"`` keeps every card, ``"topic_matched"`` gives each
          video the card of another video with the same topic key and
          ``"random"`` applies a derangement over all videos.
        seed (int): Seed of the assignment.
    """
    ids = [r.video_id for r in manifest.records]
    if mode == "own":
        return {v: v for v in ids}

    rng = np.random.default_rng(seed)
    if mode == "random":
        if len(ids) < 2:
            raise DerangementImpossible("A single video cannot receive another card.")
        perm = _derangement(len(ids), rng)
        donors = {ids[i]: ids[j] for i, j in enumerate(perm)}
    elif mode == "topic_matched":
        by_topic = defaultdict(list)
        for r in manifest.records:
            by_topic[r.topic_key].append(r.video_id)
        for topic in sorted(by_topic):
            if len(by_topic[topic]) < 2:
                raise TopicTooSmall(topic)
        donors = {}
        for r in manifest.records:
            others = [v for v in by_topic[r.topic_key] if v != r.video_id]
            donors[r.video_id] = others[int(rng.integers(len(others)))]
    else:
        raise ValueError(f"Unknown realignment mode {mode}.")
    return donors


def realign_cards(
    manifest: DatasetManifest, mode: str = "own", seed: int = 0
) -> DatasetManifest:
    """
    Give every video the cards of the donor chosen by :func:`assign_donors`.

    Saliency profiles score a card, so each video also takes its donor's
    profile; a donor without one leaves the video unscored.
    """
    if mode == "own":
        return DatasetManifest(list(manifest.records), dict(manifest.cards), manifest.saliency)
    donors = assign_donors(manifest, mode, seed)
    cards = {}
    for vid in donors:
        for day in (0, 1, 2):
            donor_card = manifest.card(donors[vid], day)
            if donor_card is not None:
                cards[(vid, day)] = dataclasses.replace(donor_card, video_id=vid)
    saliency = None
    if manifest.saliency is not None:
        saliency = {
            vid: manifest.saliency[donor]
            for vid, donor in donors.items()
            if donor in manifest.saliency
        }
    return DatasetManifest(list(manifest.records), cards, saliency)


def subsample(manifest: DatasetManifest, n: int, seed: int = 0) -> DatasetManifest:
    if n >= len(manifest.records):
        return manifest
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(manifest.records), size=n, replace=False))
    return manifest.restrict([manifest.records[i] for i in idx])
