"""Synthetic storm events on a county lattice.

Each event covers a rectangular window of a shared lattice, so counties
(and their static attributes) recur across events. A straight storm track
sets the wind band by distance; latent severity mixes wind, social
vulnerability and noise smoothed ``correlation_order`` times over the
rook adjacency. Severity is calibrated per event so the duration classes hit
the requested shares, then turned into peak outages and restoration series.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from biggat.data import (RECOVERY_FRACTION, SHORT_MAX_HOURS, WIND_CATEGORIES, EventDataset, label_duration,
                         raw_feature_vector)
from biggat.graph import Graph, grid_graph

RECORD_HOURS = 14 * 24
SERVED_PER_CAPITA = 0.45

# class shares (short, medium, long) shaped like the six-storm county counts
STORM_CLASS_COUNTS = {
    "florence": (68, 21, 9),
    "irma": (158, 127, 29),
    "laura": (76, 18, 17),
    "michael": (127, 31, 18),
    "sally": (62, 7, 1),
    "zeta": (179, 44, 12),
}


def storm_class_shares(name: str) -> tuple[float, float, float]:
    c = np.asarray(STORM_CLASS_COUNTS[name], dtype=float)
    return tuple(float(v) for v in c / c.sum())


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class GenConfig:
    event_id: str = "synth"
    rows: int = 10
    cols: int = 10
    origin: tuple[int, int] = (0, 0)
    lattice: tuple[int, int] = (20, 20)
    track_start: tuple[float, float] = (0.0, 2.0)
    track_end: tuple[float, float] = (9.0, 7.0)
    band_radii: tuple[float, float, float] = (1.0, 2.0, 4.0)  # h64, ts50, ts34
    correlation_order: int = 3
    class_targets: tuple[float, float, float] = (0.68, 0.16, 0.16)
    noise_scale: float = 0.8
    wind_weight: float = 1.0
    svi_weight: float = 1.0
    peak_noise: float = 0.15
    seed: int = 0
    county_seed: int = 0
    start: str = "2020-09-01T00:00:00"

    def validate(self):
        if self.rows < 4 or self.cols < 4:
            raise GeneratorError("grid must be at least 4 x 4")
        r0, c0 = self.origin
        if r0 < 0 or c0 < 0 or r0 + self.rows > self.lattice[0] or c0 + self.cols > self.lattice[1]:
            raise GeneratorError("event window falls outside the lattice")
        h64, ts50, ts34 = self.band_radii
        if not 0 < h64 < ts50 < ts34:
            raise GeneratorError("band radii must shrink strictly for stronger wind")
        if self.correlation_order < 0:
            raise GeneratorError("correlation_order must be >= 0")
        t = np.asarray(self.class_targets, dtype=float)
        if t.shape != (3,) or np.any(t < 0) or not np.isclose(t.sum(), 1.0) or t[0] <= 0:
            raise GeneratorError("class_targets must be 3 nonnegative shares summing to 1")
        if self.noise_scale < 0 or self.peak_noise < 0:
            raise GeneratorError("noise scales must be nonnegative")


@dataclass(frozen=True)
class CountyAttributes:
    """Static per-county attributes over the whole lattice."""

    population: np.ndarray
    area: np.ndarray
    svi: np.ndarray  # rows x cols x 4

    @classmethod
    def draw(cls, lattice: tuple[int, int], seed: int) -> "CountyAttributes":
        rng = np.random.default_rng([seed, 7919])
        shape = tuple(lattice)
        pop = np.round(np.exp(rng.normal(10.5, 0.5, size=shape)))
        area = np.exp(rng.normal(6.5, 0.4, size=shape))
        svi = rng.beta(2.0, 2.0, size=shape + (4,))
        return cls(pop, area, svi)


def lattice_graph(lattice: tuple[int, int]) -> Graph:
    return grid_graph(*lattice)


def _segment_distance(points: np.ndarray, a, b) -> np.ndarray:
    a, b = np.asarray(a, float), np.asarray(b, float)
    ab = b - a
    denom = float(ab @ ab)
    t = np.zeros(len(points)) if denom == 0 else np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def smooth(values: np.ndarray, adjacency: np.ndarray, times: int) -> np.ndarray:
    """Repeated closed-neighborhood averaging; ``times`` passes."""
    A = adjacency.astype(float)
    deg = A.sum(axis=1)
    x = np.asarray(values, float)
    for _ in range(times):
        x = (x + A @ x) / (1.0 + deg)
    return x


def _wind_category(dist: np.ndarray, radii) -> np.ndarray:
    h64, ts50, ts34 = radii
    cat = np.zeros(len(dist), dtype=int)
    cat[dist <= ts34] = 1
    cat[dist <= ts50] = 2
    cat[dist <= h64] = 3
    return cat


def _series(peak: int, served: int, hours: float, censored: bool, t_peak: float, start: datetime):
    """Outage curve that peaks once and first drops below 5% after ``hours``."""
    floor = int(np.floor(RECOVERY_FRACTION * served)) + 1  # smallest count not below 5%
    hi = max(peak - 1, floor)
    times = [0.0, t_peak]
    counts = [0, peak]
    span = RECORD_HOURS if censored else hours
    steps = 4
    for k in range(1, steps + 1):
        frac = k / (steps + 1)
        times.append(t_peak + span * frac)
        counts.append(int(round(hi * (floor / hi) ** frac)) if hi > floor else floor)
    if censored:
        times.append(t_peak + RECORD_HOURS)
        counts.append(floor)
    else:
        times.append(t_peak + hours)
        counts.append(int(np.floor(0.02 * served)))
        if t_peak + hours < t_peak + RECORD_HOURS:
            times.append(t_peak + RECORD_HOURS)
            counts.append(0)
    stamps = tuple(start + timedelta(seconds=round(h * 3600)) for h in times)
    return stamps, np.asarray(counts, dtype=float)


def generate_synthetic_event(cfg: GenConfig, counties: CountyAttributes | None = None) -> EventDataset:
    """Deterministic synthetic event for ``cfg`` (and its seed)."""
    cfg.validate()
    counties = counties or CountyAttributes.draw(cfg.lattice, cfg.county_seed)
    rng = np.random.default_rng([cfg.seed, 104729])
    r0, c0 = cfg.origin
    rr, cc = np.meshgrid(np.arange(cfg.rows), np.arange(cfg.cols), indexing="ij")
    rr, cc = rr.reshape(-1), cc.reshape(-1)
    graph = grid_graph(cfg.rows, cfg.cols, origin=cfg.origin)
    # lexicographic fips order is row-major window order
    pts = np.column_stack([rr, cc]).astype(float)
    dist = _segment_distance(pts, cfg.track_start, cfg.track_end)
    wind = _wind_category(dist, cfg.band_radii)

    gr, gc = rr + r0, cc + c0
    pop = counties.population[gr, gc]
    area = counties.area[gr, gc]
    svi = counties.svi[gr, gc]

    noise = smooth(rng.standard_normal(len(pts)), graph.adjacency, cfg.correlation_order)
    sd = noise.std()
    noise = noise / sd if sd > 0 else noise
    raw = cfg.wind_weight * wind + cfg.svi_weight * (svi.mean(axis=1) - 0.5) * 2 + cfg.noise_scale * noise

    p_short, p_med, _ = cfg.class_targets
    q1 = np.quantile(raw, p_short)
    q2 = np.quantile(raw, min(p_short + p_med, 1.0))
    if q2 <= q1:
        q2 = q1 + 1e-6
    # calibrated severity: 0 at the short/medium cut, 1 at the medium/long cut
    sev = (raw - q1) / (q2 - q1)
    hours = np.round(SHORT_MAX_HOURS * 3.0 ** sev * 60) / 60
    hours = np.maximum(hours, 1.0)
    censored = hours > RECORD_HOURS

    frac = 1.0 / (1.0 + np.exp(-(1.2 * sev + 0.3 + cfg.peak_noise * rng.standard_normal(len(pts)))))
    frac = np.clip(frac, 0.08, 0.97)
    served = np.round(SERVED_PER_CAPITA * pop).astype(int)
    peak = np.round(frac * served).astype(int)

    start = datetime.fromisoformat(cfg.start).replace(tzinfo=timezone.utc)
    t_peak = 6.0 + np.round(rng.uniform(0, 12, size=len(pts)))
    series, feats, dur, cens, labels = [], [], [], [], []
    for i in range(len(pts)):
        ts, counts = _series(int(peak[i]), int(served[i]), float(hours[i]), bool(censored[i]),
                             float(t_peak[i]), start)
        h, cls_, c = label_duration(list(zip(ts, counts)), float(served[i]))
        county = {"population": pop[i], "area_sqkm": area[i],
                  **{f"svi_{k + 1}": svi[i, k] for k in range(4)}}
        feats.append(raw_feature_vector(county, WIND_CATEGORIES[wind[i]], counts.max()))
        series.append((ts, counts))
        dur.append(h)
        cens.append(c)
        labels.append(cls_)
    return EventDataset(cfg.event_id, graph, np.vstack(feats), np.array(dur), np.array(cens, bool),
                        np.array(labels, dtype=int), served=served.astype(float), series=tuple(series))



@dataclass(frozen=True)
class SuiteConfig:
    seed: int = 0
    rows: int = 10
    cols: int = 10
    correlation_order: int = 3
    noise_scale: float = 0.8
    peak_noise: float = 0.15
    lattice: tuple[int, int] = (20, 20)
    names: tuple[str, ...] = tuple(STORM_CLASS_COUNTS)
    overrides: dict = field(default_factory=dict)


def suite_configs(suite: SuiteConfig) -> list[GenConfig]:
    """One GenConfig per named storm: random window, track and storm-shaped class imbalance."""
    rng = np.random.default_rng([suite.seed, 15485863])
    out = []
    for i, name in enumerate(suite.names):
        r0 = int(rng.integers(0, suite.lattice[0] - suite.rows + 1))
        c0 = int(rng.integers(0, suite.lattice[1] - suite.cols + 1))
        # track crosses the window between opposite edges
        if rng.random() < 0.5:
            a = (float(rng.uniform(0, suite.rows - 1)), 0.0)
            b = (float(rng.uniform(0, suite.rows - 1)), float(suite.cols - 1))
        else:
            a = (0.0, float(rng.uniform(0, suite.cols - 1)))
            b = (float(suite.rows - 1), float(rng.uniform(0, suite.cols - 1)))
        shares = storm_class_shares(name) if name in STORM_CLASS_COUNTS else (0.7, 0.2, 0.1)
        out.append(GenConfig(
            event_id=name, rows=suite.rows, cols=suite.cols, origin=(r0, c0), lattice=suite.lattice,
            track_start=a, track_end=b, correlation_order=suite.correlation_order,
            class_targets=shares, noise_scale=suite.noise_scale, peak_noise=suite.peak_noise,
            seed=int(rng.integers(0, 2**31 - 1)), county_seed=suite.seed,
            start=(datetime(2017, 9, 1) + timedelta(days=120 * i)).isoformat(),
            **suite.overrides))
    return out


def synthetic_suite(suite: SuiteConfig | None = None) -> tuple[list[EventDataset], Graph]:
    suite = suite or SuiteConfig()
    counties = CountyAttributes.draw(suite.lattice, suite.seed)
    events = [generate_synthetic_event(c, counties) for c in suite_configs(suite)]
    return events, lattice_graph(suite.lattice)
