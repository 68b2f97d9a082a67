"""Event ingestion, duration labels, feature encoding and scaling.

CSV layout (UTF-8, header row required)::

    counties.csv  event_id,fips,population,area_sqkm,svi_1,svi_2,svi_3,svi_4
    adjacency.csv fips_a,fips_b
    wind.csv      event_id,fips,wind_category       (none|ts34|ts50|h64)
    outages.csv   event_id,fips,timestamp_utc,customers_out,customers_served
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from biggat.graph import Graph, build_graph

WIND_CATEGORIES = ("none", "ts34", "ts50", "h64")
FEATURE_NAMES = ("peak_customers", "population", "area", "svi_1", "svi_2", "svi_3", "svi_4",
                 "wind_none", "wind_ts34", "wind_ts50", "wind_h64")
N_FEATURES = len(FEATURE_NAMES)
LOG_DIMS = (0, 1, 2)
CLASS_NAMES = ("short", "medium", "long")
SHORT_MAX_HOURS = 48.0  # short is strictly below
MEDIUM_MAX_HOURS = 144.0  # medium is closed at both ends
RECOVERY_FRACTION = 0.05

COUNTY_COLUMNS = ("event_id", "fips", "population", "area_sqkm", "svi_1", "svi_2", "svi_3", "svi_4")
ADJACENCY_COLUMNS = ("fips_a", "fips_b")
WIND_COLUMNS = ("event_id", "fips", "wind_category")
OUTAGE_COLUMNS = ("event_id", "fips", "timestamp_utc", "customers_out", "customers_served")


class DataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EventDataset:
    """One storm's counties. ``features`` are raw (unscaled) and row-aligned with ``graph.node_ids``."""

    event_id: str
    graph: Graph
    features: np.ndarray
    duration_hours: np.ndarray
    censored: np.ndarray
    labels: np.ndarray
    clusters: np.ndarray | None = None
    neighborhood_order: int | None = None
    served: np.ndarray | None = None
    series: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        n = self.graph.N
        if n == 0:
            raise DataError(f"event {self.event_id!r} is empty")
        if self.features.shape != (n, N_FEATURES):
            raise DataError(f"features must be {n} x {N_FEATURES}, got {self.features.shape}")
        if not np.allclose(self.features[:, 7:].sum(axis=1), 1.0):
            raise DataError("wind one-hot block must sum to 1 per county")
        for arr in (self.duration_hours, self.censored, self.labels):
            if len(arr) != n:
                raise DataError("per-node arrays must match node count")

    @property
    def N(self) -> int:
        return self.graph.N

    @property
    def fips(self) -> tuple[str, ...]:
        return self.graph.node_ids

    @property
    def peak_outages(self) -> np.ndarray:
        return self.features[:, 0]

    @property
    def wind(self) -> list[str]:
        return [WIND_CATEGORIES[i] for i in np.argmax(self.features[:, 7:], axis=1)]

    def replace(self, **kw) -> "EventDataset":
        return replace(self, **kw)


# ---------------------------------------------------------------- labels

def duration_class(hours: float) -> int:
    if hours < SHORT_MAX_HOURS:
        return 0
    if hours <= MEDIUM_MAX_HOURS:
        return 1
    return 2


def _as_hours(ts) -> np.ndarray:
    if len(ts) and isinstance(ts[0], datetime):
        base = ts[0]
        return np.array([(t - base).total_seconds() / 3600.0 for t in ts])
    return np.asarray(ts, dtype=float)


def label_duration(series: Sequence[tuple], customers_served: float) -> tuple[float, int, bool]:
    """Hours from the first peak until customers out drops below 5% of those served.

    ``series`` is a time-ordered sequence of ``(timestamp, customers_out)``
    where timestamps are datetimes or numeric hours. A series that never
    recovers is censored: the observed span is returned and the class is long.
    """
    if len(series) == 0:
        raise DataError("empty outage series")
    if customers_served <= 0:
        raise DataError("customers_served must be positive")
    t = _as_hours([s[0] for s in series])
    out = np.asarray([s[1] for s in series], dtype=float)
    if np.any(np.diff(t) <= 0):
        raise DataError("timestamps must be strictly increasing")
    peak = int(np.argmax(out))  # first global maximum
    below = np.flatnonzero(out[peak + 1:] < RECOVERY_FRACTION * customers_served)
    if below.size == 0:
        return float(t[-1] - t[peak]), 2, True
    hours = float(t[peak + 1 + below[0]] - t[peak])
    return hours, duration_class(hours), False


# ---------------------------------------------------------------- features

def raw_feature_vector(county: dict, wind_category: str, peak_outages: float) -> np.ndarray:
    if wind_category not in WIND_CATEGORIES:
        raise DataError(f"unknown wind category {wind_category!r}")
    try:
        svi = [float(county[f"svi_{i}"]) for i in range(1, 5)]
    except KeyError as exc:
        raise DataError(f"missing svi dimension {exc.args[0]!r}") from None
    onehot = [1.0 if c == wind_category else 0.0 for c in WIND_CATEGORIES]
    area = county.get("area_sqkm", county.get("area"))
    return np.array([float(peak_outages), float(county["population"]), float(area), *svi, *onehot])


@dataclass(frozen=True)
class FeatureScaler:
    """log1p + z-score on counts (peak, population, area); identity elsewhere."""

    means: np.ndarray
    stds: np.ndarray
    log_dims: tuple[int, ...] = LOG_DIMS

    @classmethod
    def fit(cls, feature_blocks: Sequence[np.ndarray]) -> "FeatureScaler":
        X = np.vstack([np.asarray(b, dtype=float) for b in feature_blocks])
        if len(X) == 0:
            raise DataError("cannot fit scaler on no data")
        L = np.log1p(X[:, list(LOG_DIMS)])
        means = L.mean(axis=0)
        stds = L.std(axis=0)
        stds = np.where(stds > 0, stds, 1.0)
        return cls(means, stds)

    def transform(self, X) -> np.ndarray:
        out = np.array(X, dtype=float, copy=True)
        dims = list(self.log_dims)
        out[:, dims] = (np.log1p(out[:, dims]) - self.means) / self.stds
        return out

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "stds": self.stds.tolist(), "log_dims": list(self.log_dims)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureScaler":
        return cls(np.asarray(d["means"], float), np.asarray(d["stds"], float), tuple(d["log_dims"]))


def encode_features(county: dict, wind_category: str, peak_outages: float,
                    scaler: FeatureScaler) -> np.ndarray:
    """Scaled 11-vector: peak, population, area, svi x4, wind one-hot (none, ts34, ts50, h64)."""
    if scaler is None:
        raise DataError("scaler is not fitted")
    return scaler.transform(raw_feature_vector(county, wind_category, peak_outages)[None, :])[0]


# ---------------------------------------------------------------- CSV io

def parse_timestamp(text: str) -> datetime:
    ts = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _read_csv(path: Path, required: Sequence[str]) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise DataError(f"{path.name}: missing required column {col!r}")
        return list(reader)


@dataclass
class RawTables:
    counties: list[dict]
    adjacency: list[dict]
    wind: list[dict]
    outages: list[dict]

    @classmethod
    def read(cls, counties, adjacency, wind, outages) -> "RawTables":
        return cls(_read_csv(counties, COUNTY_COLUMNS), _read_csv(adjacency, ADJACENCY_COLUMNS),
                   _read_csv(wind, WIND_COLUMNS), _read_csv(outages, OUTAGE_COLUMNS))

    @classmethod
    def from_dir(cls, data_dir) -> "RawTables":
        d = Path(data_dir)
        return cls.read(d / "counties.csv", d / "adjacency.csv", d / "wind.csv", d / "outages.csv")

    def event_ids(self) -> list[str]:
        return sorted({r["event_id"] for r in self.counties})

    def national_graph(self) -> Graph:
        ids = {r["fips"] for r in self.counties}
        edges = [(r["fips_a"], r["fips_b"]) for r in self.adjacency]
        for a, b in edges:
            ids.update((a, b))
        return build_graph(sorted(ids), edges)


def assemble_event(tables: RawTables, event_id: str) -> EventDataset:
    counties = {}
    for r in tables.counties:
        if r["event_id"] != event_id:
            continue
        if r["fips"] in counties:
            raise DataError(f"duplicate county {r['fips']!r} in event {event_id!r}")
        counties[r["fips"]] = r
    if not counties:
        raise DataError(f"event {event_id!r} is empty")
    wind = {}
    for r in tables.wind:
        if r["event_id"] == event_id:
            if r["fips"] in wind:
                raise DataError(f"duplicate county {r['fips']!r} in wind.csv for {event_id!r}")
            if r["fips"] not in counties:
                raise DataError(f"wind row for unknown county {r['fips']!r}")
            wind[r["fips"]] = r["wind_category"].strip()
    series = defaultdict(list)
    served = {}
    for r in tables.outages:
        if r["event_id"] != event_id:
            continue
        if r["fips"] not in counties:
            raise DataError(f"outage series for unknown county {r['fips']!r} in event {event_id!r}")
        series[r["fips"]].append((parse_timestamp(r["timestamp_utc"]), float(r["customers_out"])))
        served[r["fips"]] = max(served.get(r["fips"], 0.0), float(r["customers_served"]))
    ids = sorted(counties)
    edges = [(r["fips_a"], r["fips_b"]) for r in tables.adjacency
             if r["fips_a"] in counties and r["fips_b"] in counties]
    graph = build_graph(ids, edges)
    feats, hours, cens, labels, serv, ser = [], [], [], [], [], []
    for f in ids:
        if f not in series:
            raise DataError(f"no outage series for county {f!r} in event {event_id!r}")
        s = sorted(series[f], key=lambda p: p[0])
        h, cls_, c = label_duration(s, served[f])
        peak = max(p[1] for p in s)
        feats.append(raw_feature_vector(counties[f], wind.get(f, "none"), peak))
        hours.append(h)
        cens.append(c)
        labels.append(cls_)
        serv.append(served[f])
        ser.append((tuple(p[0] for p in s), np.array([p[1] for p in s])))
    return EventDataset(event_id, graph, np.vstack(feats), np.array(hours), np.array(cens, bool),
                        np.array(labels, dtype=int), served=np.array(serv), series=tuple(ser))


def load_event(counties, adjacency, wind, outages, event_id: str) -> EventDataset:
    return assemble_event(RawTables.read(counties, adjacency, wind, outages), event_id)


def load_events(data_dir, event_ids: Sequence[str] | None = None) -> tuple[list[EventDataset], Graph]:
    """All (or the named) events in a data directory plus the full adjacency graph."""
    tables = RawTables.from_dir(data_dir)
    known = tables.event_ids()
    wanted = list(event_ids) if event_ids else known
    for e in wanted:
        if e not in known:
            raise DataError(f"unknown event {e!r}; available: {', '.join(known)}")
    return [assemble_event(tables, e) for e in wanted], tables.national_graph()


def write_events(out_dir, events: Sequence[EventDataset], national: Graph | None = None) -> None:
    """Serialise events to the four CSV tables (events need ``served`` and ``series``)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "counties.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(COUNTY_COLUMNS)
        for ev in events:
            for fips, x in zip(ev.fips, ev.features):
                w.writerow([ev.event_id, fips, repr(float(x[1])), repr(float(x[2])),
                            *(repr(float(v)) for v in x[3:7])])
    edges = national.edges() if national is not None else sorted(
        {e for ev in events for e in ev.graph.edges()})
    with open(out / "adjacency.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(ADJACENCY_COLUMNS)
        w.writerows(edges)
    with open(out / "wind.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(WIND_COLUMNS)
        for ev in events:
            for fips, cat in zip(ev.fips, ev.wind):
                w.writerow([ev.event_id, fips, cat])
    with open(out / "outages.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(OUTAGE_COLUMNS)
        for ev in events:
            if ev.series is None or ev.served is None:
                raise DataError(f"event {ev.event_id!r} carries no outage series")
            for fips, (ts, counts), srv in zip(ev.fips, ev.series, ev.served):
                for t, c in zip(ts, counts):
                    w.writerow([ev.event_id, fips, format_timestamp(t), int(c), int(srv)])
